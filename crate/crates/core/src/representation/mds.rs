//! Classical multidimensional scaling, used to plant a known metric into embeddings.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::bisim::metric::DepthIndexedMetric;
use crate::representation::embedding::EmbeddingTable;

/// Points whose pairwise squared distances approximate `squared[i][j]` (exact when
/// the input is Euclidean of rank at most `dim`).
pub fn classical_mds(squared: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let n = squared.len();
    if n == 0 {
        return Vec::new();
    }
    let a = DMatrix::from_fn(n, n, |i, j| squared[i][j]);
    let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = -0.5 * &j * a * &j;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    (0..n)
        .map(|i| {
            (0..dim)
                .map(|k| match order.get(k) {
                    Some(&c) if eig.eigenvalues[c] > 0.0 => eig.eigenvectors[(i, c)] * eig.eigenvalues[c].sqrt(),
                    _ => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Embeds each depth of `metric` separately.
///
/// With `squared` set the squared embedding distance reproduces `d`; otherwise
/// the unsquared norm does.
pub fn plant_metric(metric: &DepthIndexedMetric, dim: usize, squared: bool) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(dim);
    for layer in &metric.layers {
        let n = layer.len();
        let target: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let d = layer.get(i, j);
                        if squared {
                            d
                        } else {
                            d * d
                        }
                    })
                    .collect()
            })
            .collect();
        for (key, v) in layer.keys.iter().zip(classical_mds(&target, dim)) {
            table.vectors.insert(key.clone(), v);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representation::embedding::squared_distance;

    #[test]
    fn recovers_points_on_a_plane() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let sq: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| pts.iter().map(|q| squared_distance(p, q)).collect())
            .collect();
        let x = classical_mds(&sq, 3);
        for i in 0..4 {
            for j in 0..4 {
                assert!((squared_distance(&x[i], &x[j]) - sq[i][j]).abs() < 1e-9);
            }
        }
    }
}
