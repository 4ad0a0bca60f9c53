//! Two-dimensional PCA export of item embeddings.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::retriever::RetrieverParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedItem {
    pub item: ItemId,
    pub x: f64,
    pub y: f64,
    pub count: u64,
    pub cluster: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectedItem>,
    /// Variance captured by each axis.
    pub variances: [f64; 2],
}

/// Projects every item embedding onto the top two principal axes. Each
/// axis is signed so its largest-magnitude component is positive. Axes with
/// negligible variance are zeroed.
pub fn project_embeddings(params: &RetrieverParams, counts: &[u64], clusters: Option<&[usize]>) -> Projection {
    let (n, d) = (params.num_items, params.dim);
    let rows: Vec<&[f64]> = (0..n).map(|i| params.item_embedding(ItemId(i as u32))).collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, x) in mean.iter_mut().zip(*r) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += r[i] * r[j] / n as f64;
            }
        }
    }
    let trace = cov.trace();
    let eigen = SymmetricEigen::new(cov);
    let (values, vectors) = (eigen.eigenvalues, eigen.eigenvectors);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [0.0; 2];
    for (slot, &col) in order.iter().take(2).enumerate() {
        if values[col] <= 1e-12 * trace.max(f64::MIN_POSITIVE) || trace == 0.0 {
            log::warn!("embedding covariance is rank deficient; projection axis {} set to zero", slot + 1);
            continue;
        }
        let mut axis: Vec<f64> = vectors.column(col).iter().copied().collect();
        let lead = axis.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
        axes[slot] = axis;
        variances[slot] = values[col];
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let points = centered
        .iter()
        .enumerate()
        .map(|(i, r)| ProjectedItem {
            item: ItemId(i as u32),
            x: dot(r, &axes[0]),
            y: dot(r, &axes[1]),
            count: counts.get(i).copied().unwrap_or(0),
            cluster: clusters.and_then(|c| c.get(i).copied()),
        })
        .collect();
    Projection { points, variances }
}

impl Projection {
    pub fn csv(&self) -> String {
        let mut out = String::from("item_id,x,y,popularity_count,cluster\n");
        for p in &self.points {
            let cluster = p.cluster.map_or_else(|| "NA".to_string(), |c| c.to_string());
            let _ = writeln!(out, "{},{:.9},{:.9},{},{cluster}", p.item, p.x, p.y, p.count);
        }
        out
    }

    /// Mean pairwise 2-D distance within and across clusters. None without
    /// labels or when either set of pairs is empty.
    pub fn cluster_distances(&self) -> Option<(f64, f64)> {
        pairwise_means(&self.points.iter().map(|p| p.cluster).collect::<Option<Vec<_>>>()?, |a, b| {
            let (p, q) = (&self.points[a], &self.points[b]);
            ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
        })
    }
}

/// Full item embeddings, one row per item, for external tools.
pub fn embeddings_csv(params: &RetrieverParams) -> String {
    let mut out = String::from("item_id");
    for k in 0..params.dim {
        let _ = write!(out, ",e{k}");
    }
    out.push('\n');
    for i in 0..params.num_items {
        let _ = write!(out, "{i}");
        for v in params.item_embedding(ItemId(i as u32)) {
            let _ = write!(out, ",{v:.9}");
        }
        out.push('\n');
    }
    out
}

fn pairwise_means(labels: &[usize], metric: impl Fn(usize, usize) -> f64) -> Option<(f64, f64)> {
    let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..labels.len() {
        for b in a + 1..labels.len() {
            let m = metric(a, b);
            if labels[a] == labels[b] {
                within += m;
                nw += 1;
            } else {
                across += m;
                na += 1;
            }
        }
    }
    (nw > 0 && na > 0).then(|| (within / nw as f64, across / na as f64))
}

/// Mean pairwise cosine similarity of item embeddings within and across
/// clusters.
pub fn cluster_cosine_margin(params: &RetrieverParams, labels: &[usize]) -> Option<(f64, f64)> {
    let n = params.num_items.min(labels.len());
    let emb: Vec<&[f64]> = (0..n).map(|i| params.item_embedding(ItemId(i as u32))).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    pairwise_means(&labels[..n], |a, b| {
        let dot: f64 = emb[a].iter().zip(emb[b]).map(|(x, y)| x * y).sum();
        let den = norm(emb[a]) * norm(emb[b]);
        if den == 0.0 {
            0.0
        } else {
            dot / den
        }
    })
}
