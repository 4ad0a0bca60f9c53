//! Built-in word material for simulated query text.

/// Content-free query words used by the popularity-only simulation.
pub const FILLER: [&str; 8] = [
    "find", "show", "play", "some", "good", "new", "more", "stuff",
];

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// `n` distinct pronounceable pseudo-words, identical for every call.
pub fn pseudo_words(n: usize) -> Vec<String> {
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let s = syllables.len();
    (0..n)
        .map(|i| {
            // three syllables, enough for 216k words
            let a = i % s;
            let b = (i / s) % s;
            let c = (i / (s * s)) % s;
            format!("{}{}{}", syllables[c], syllables[b], syllables[a])
        })
        .collect()
}

/// Generic words that may appear in any topic's paraphrases.
pub const GENERIC: [&str; 8] = [
    "about", "guide", "explain", "overview", "facts", "details", "learn", "info",
];

/// Topic templates: each topic is a list of slots, each slot a list of
/// interchangeable words.
pub const TOPIC_BANK: &[&[&[&str]]] = &[
    &[&["jazz", "bossa", "samba", "swing"], &["brazil", "brazilian", "rio", "bahia"], &["history", "origins", "roots", "evolution"]],
    &[&["volcano", "eruption", "magma", "lava"], &["formation", "causes", "forces", "mechanics"], &["iceland", "island", "hawaii", "pacific"]],
    &[&["diabetes", "insulin", "glucose", "sugar"], &["symptoms", "signs", "indicators", "warning"], &["children", "kids", "youth", "pediatric"]],
    &[&["medieval", "feudal", "castle", "knights"], &["europe", "england", "france", "kingdom"], &["life", "society", "daily", "customs"]],
    &[&["solar", "photovoltaic", "sun", "sunlight"], &["panels", "cells", "modules", "arrays"], &["efficiency", "output", "yield", "performance"]],
    &[&["bread", "sourdough", "dough", "loaf"], &["baking", "recipe", "method", "technique"], &["yeast", "starter", "culture", "ferment"]],
    &[&["whale", "whales", "cetacean", "humpback"], &["migration", "journey", "route", "travel"], &["ocean", "sea", "arctic", "atlantic"]],
    &[&["stock", "equity", "shares", "market"], &["crash", "collapse", "downturn", "panic"], &["causes", "reasons", "triggers", "drivers"]],
    &[&["coffee", "espresso", "arabica", "beans"], &["roasting", "brewing", "grinding", "extraction"], &["flavor", "taste", "aroma", "acidity"]],
    &[&["roman", "rome", "empire", "caesar"], &["fall", "decline", "collapse", "end"], &["reasons", "factors", "explanation", "why"]],
    &[&["marathon", "running", "runner", "race"], &["training", "plan", "schedule", "program"], &["beginner", "novice", "first", "starter"]],
    &[&["vaccine", "vaccination", "immunization", "shot"], &["history", "development", "invention", "discovery"], &["smallpox", "polio", "measles", "disease"]],
    &[&["chess", "openings", "gambit", "endgame"], &["strategy", "tactics", "theory", "principles"], &["masters", "grandmaster", "champions", "experts"]],
    &[&["glacier", "ice", "icecap", "iceberg"], &["melting", "retreat", "loss", "shrinking"], &["climate", "warming", "temperature", "heat"]],
    &[&["guitar", "acoustic", "strings", "chords"], &["lessons", "tutorial", "practice", "exercises"], &["fingerstyle", "picking", "strumming", "rhythm"]],
    &[&["pyramid", "pyramids", "giza", "pharaoh"], &["construction", "building", "engineering", "design"], &["egypt", "egyptian", "nile", "ancient"]],
];
