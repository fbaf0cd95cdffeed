//! Exact discrete optimal transport by successive shortest augmenting paths.

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;
const MASS_EPS: f64 = 1e-15;
const RELAX_EPS: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution<K> {
    pub support: Vec<K>,
    pub probs: Vec<f64>,
}

impl<K> DiscreteDistribution<K> {
    pub fn new(support: Vec<K>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::DegenerateInput("support and probabilities differ in length".into()));
        }
        check_distribution(&probs)?;
        Ok(DiscreteDistribution { support, probs })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    /// `coupling[i][j]` is the mass moved from `p_i` to `q_j`.
    pub coupling: Vec<Vec<f64>>,
    pub cost: f64,
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= -MASS_EPS) || !x.is_finite()) {
        return Err(Error::DegenerateInput("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::DegenerateInput(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Minimum-cost coupling of `p` and `q` under `ground[i][j]`.
///
/// Solved as min-cost flow on the bipartite network source -> supplies ->
/// demands -> sink by successive shortest paths. Every augmentation saturates a
/// supply, a demand or a backward edge, so the loop terminates with an optimal plan.
pub fn wasserstein1_discrete(p: &[f64], q: &[f64], ground: &[Vec<f64>]) -> Result<(f64, TransportPlan)> {
    check_distribution(p)?;
    check_distribution(q)?;
    if ground.len() != p.len() || ground.iter().any(|row| row.len() != q.len()) {
        return Err(Error::DegenerateInput("ground cost shape does not match the supports".into()));
    }
    if ground.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::DegenerateInput("ground costs must be finite and non-negative".into()));
    }
    let (n, m) = (p.len(), q.len());
    let sp: f64 = p.iter().map(|x| x.max(0.0)).sum();
    let sq: f64 = q.iter().map(|x| x.max(0.0)).sum();
    let mut supply: Vec<f64> = p.iter().map(|x| x.max(0.0) / sp).collect();
    let mut demand: Vec<f64> = q.iter().map(|x| x.max(0.0) / sq).collect();
    let mut flow = vec![vec![0.0; m]; n];

    // Node ids: supplies 0..n, demands n..n+m. The source and sink are implicit:
    // paths start at any supply with mass left and end at any demand with room.
    // Backward edges carry negative cost, so shortest paths use Bellman-Ford.
    let total = n + m;
    let mut remaining: f64 = 1.0;
    while remaining > MASS_EPS {
        let mut dist = vec![f64::INFINITY; total];
        let mut prev = vec![usize::MAX; total];
        for i in 0..n {
            if supply[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..=total {
            let mut changed = false;
            for i in 0..n {
                if !dist[i].is_finite() {
                    continue;
                }
                for j in 0..m {
                    let d = dist[i] + ground[i][j];
                    if d < dist[n + j] - RELAX_EPS {
                        dist[n + j] = d;
                        prev[n + j] = i;
                        changed = true;
                    }
                }
            }
            for j in 0..m {
                if !dist[n + j].is_finite() {
                    continue;
                }
                for i in 0..n {
                    if flow[i][j] > MASS_EPS {
                        let d = dist[n + j] - ground[i][j];
                        if d < dist[i] - RELAX_EPS {
                            dist[i] = d;
                            prev[i] = n + j;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // Cheapest reachable demand with room left.
        let target = (0..m)
            .filter(|&j| demand[j] > MASS_EPS && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]));
        let Some(j_end) = target else {
            break;
        };
        // Walk back to the starting supply, collecting the bottleneck.
        let mut path = vec![n + j_end];
        let mut v = n + j_end;
        while prev[v] != usize::MAX {
            v = prev[v];
            path.push(v);
            if path.len() > total + 1 {
                return Err(Error::DegenerateInput("transport solver hit a rounding cycle".into()));
            }
        }
        path.reverse();
        let start = path[0];
        let mut amount = supply[start].min(demand[j_end]);
        for w in path.windows(2) {
            if w[0] >= n {
                amount = amount.min(flow[w[1]][w[0] - n]);
            }
        }
        for w in path.windows(2) {
            if w[0] < n {
                flow[w[0]][w[1] - n] += amount;
            } else {
                flow[w[1]][w[0] - n] -= amount;
            }
        }
        supply[start] -= amount;
        demand[j_end] -= amount;
        remaining -= amount;
    }
    let cost = flow
        .iter()
        .zip(ground)
        .map(|(f, g)| f.iter().zip(g).map(|(x, c)| x * c).sum::<f64>())
        .sum();
    Ok((cost, TransportPlan { coupling: flow, cost }))
}

/// `sum_o |p(o) - q(o)|`, padding the shorter vector with zeros.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum()
}

/// [`tv_distance`] over sparse `(index, prob)` lists sorted by index.
pub fn tv_distance_sparse(p: &[(usize, f64)], q: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < p.len() || j < q.len() {
        match (p.get(i), q.get(j)) {
            (Some(&(a, x)), Some(&(b, y))) if a == b => {
                total += (x - y).abs();
                i += 1;
                j += 1;
            }
            (Some(&(a, x)), Some(&(b, _))) if a < b => {
                total += x.abs();
                i += 1;
            }
            (Some(&(_, x)), None) => {
                total += x.abs();
                i += 1;
            }
            (_, Some(&(_, y))) => {
                total += y.abs();
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distributions_cost_zero() {
        let p = [0.2, 0.3, 0.5];
        let g: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| (i as f64 - j as f64).abs()).collect()).collect();
        let (c, plan) = wasserstein1_discrete(&p, &p, &g).unwrap();
        assert!(c.abs() < 1e-15);
        for i in 0..3 {
            assert!((plan.coupling[i][i] - p[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn point_masses_cost_ground() {
        let (c, _) = wasserstein1_discrete(&[1.0], &[1.0], &[vec![2.5]]).unwrap();
        assert_eq!(c, 2.5);
    }

    #[test]
    fn split_to_single_target() {
        let (c, plan) = wasserstein1_discrete(&[0.5, 0.5], &[1.0], &[vec![1.0], vec![3.0]]).unwrap();
        assert!((c - 2.0).abs() < 1e-15);
        assert_eq!(plan.coupling, vec![vec![0.5], vec![0.5]]);
    }

    #[test]
    fn needs_rerouting() {
        // Greedy cheapest-edge filling is suboptimal here; the optimum reroutes through a backward edge.
        let g = vec![vec![0.0, 1.0], vec![0.0, 10.0]];
        let (c, _) = wasserstein1_discrete(&[0.5, 0.5], &[0.5, 0.5], &g).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(matches!(
            wasserstein1_discrete(&[0.5, 0.6], &[1.0], &[vec![0.0], vec![0.0]]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(DiscreteDistribution::new(vec!['a'], vec![0.9]).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
        assert!((tv_distance(&[0.7, 0.3], &[0.4, 0.6]) - 0.6).abs() < 1e-15);
        assert!((tv_distance_sparse(&[(0, 0.7), (2, 0.3)], &[(1, 0.4), (2, 0.6)]) - 1.4).abs() < 1e-15);
    }
}
