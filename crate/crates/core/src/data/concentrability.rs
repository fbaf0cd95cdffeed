use crate::data::dataset::Dataset;
use crate::data::empirical::estimate_behavior;
use crate::data::mixture::MixtureSpec;
use crate::error::Result;
use crate::history::HistKey;
use crate::ohmdp::HistoryTree;
use crate::policy::Policy;
use crate::pomdp::TabularPOMDP;

#[derive(Clone, Debug, PartialEq)]
pub struct Concentrability {
    /// `max d*(tau,a) / mu(tau,a)` over the optimal support; `f64::INFINITY` when
    /// some optimal pair has no data mass.
    pub value: f64,
    /// The pair attaining the maximum (or the first uncovered pair).
    pub witness: Option<(HistKey, usize)>,
}

/// Occupancies `d(tau,a) = P(reach tau) pi(a|tau)`, indexed by node id.
pub fn occupancy(tree: &HistoryTree, probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let reach = tree.reach_probs(probs);
    reach
        .iter()
        .zip(probs)
        .map(|(&r, p)| p.iter().map(|&x| r * x).collect())
        .collect()
}

fn ratio_max(tree: &HistoryTree, d_star: &[Vec<f64>], mu: impl Fn(usize, usize) -> f64) -> Concentrability {
    let mut out = Concentrability {
        value: 0.0,
        witness: None,
    };
    for (id, row) in d_star.iter().enumerate() {
        for (a, &d) in row.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            let m = mu(id, a);
            let ratio = if m > 0.0 { d / m } else { f64::INFINITY };
            if ratio > out.value {
                out.value = ratio;
                out.witness = Some((tree.nodes[id].key.clone(), a));
                if ratio.is_infinite() {
                    return out;
                }
            }
        }
    }
    out
}

/// Exact `C*` against the true data distribution of a behavior mixture.
pub fn compute_concentrability(model: &TabularPOMDP, mixture: &MixtureSpec, pi_star: &dyn Policy) -> Result<Concentrability> {
    let tree = HistoryTree::build(model)?;
    let d_star = occupancy(&tree, &tree.policy_table(pi_star));
    let mut mu = vec![vec![0.0; tree.num_actions]; tree.len()];
    for c in &mixture.components {
        let occ = occupancy(&tree, &tree.policy_table(c.policy.as_ref()));
        for (row, o) in mu.iter_mut().zip(&occ) {
            for (m, x) in row.iter_mut().zip(o) {
                *m += c.weight * x;
            }
        }
    }
    Ok(ratio_max(&tree, &d_star, |id, a| mu[id][a]))
}

/// `C*` with `mu` replaced by per-trajectory empirical frequencies `n(tau,a) / #trajectories`.
pub fn compute_concentrability_empirical(model: &TabularPOMDP, dataset: &Dataset, pi_star: &dyn Policy) -> Result<Concentrability> {
    let tree = HistoryTree::build(model)?;
    let d_star = occupancy(&tree, &tree.policy_table(pi_star));
    let behavior = estimate_behavior(dataset);
    let n = dataset.len().max(1) as f64;
    Ok(ratio_max(&tree, &d_star, |id, a| {
        behavior.counts.get(&tree.nodes[id].key).map_or(0.0, |c| c[a] as f64 / n)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mixture::MixtureComponent;
    use crate::envs::random::random_pomdp;
    use crate::history::History;
    use crate::ohmdp::{initial_observation_dist, ohmdp_next_dist, optimal_values};
    use crate::policy::{FnPolicy, UniformPolicy};
    use crate::sim::stream_rng;
    use std::sync::Arc;

    #[test]
    fn data_from_optimal_policy_gives_one() {
        let m = random_pomdp(3, 2, 2, 3, &mut stream_rng(2, 0));
        let sol = optimal_values(&m).unwrap();
        let mix = MixtureSpec::single("opt", Arc::new(sol.policy()));
        let c = compute_concentrability(&m, &mix, &sol.policy()).unwrap();
        assert!((c.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_optimal_pair_is_infinite() {
        let m = random_pomdp(3, 2, 2, 2, &mut stream_rng(2, 0));
        let sol = optimal_values(&m).unwrap();
        let a_root = sol.pi_star[&History::initial(0).key()];
        let never = Arc::new(FnPolicy {
            num_actions: 2,
            f: move |_: &History| crate::policy::one_hot(2, 1 - a_root),
        });
        let c = compute_concentrability(&m, &MixtureSpec::single("bad", never), &sol.policy()).unwrap();
        assert!(c.value.is_infinite());
        assert!(c.witness.is_some());
    }

    #[test]
    fn half_optimal_half_uniform_matches_enumeration() {
        let m = random_pomdp(2, 2, 2, 2, &mut stream_rng(12, 0));
        let sol = optimal_values(&m).unwrap();
        let pi_star = Arc::new(sol.policy());
        let mix = MixtureSpec::new(vec![
            MixtureComponent {
                id: "opt".into(),
                weight: 0.5,
                policy: pi_star.clone(),
            },
            MixtureComponent {
                id: "uni".into(),
                weight: 0.5,
                policy: Arc::new(UniformPolicy { num_actions: 2 }),
            },
        ])
        .unwrap();
        let got = compute_concentrability(&m, &mix, pi_star.as_ref()).unwrap().value;

        // Enumerate (o1, a1, o2, a2) directly from the belief-level dynamics.
        let rho = initial_observation_dist(&m);
        let mut best: f64 = 0.0;
        for o1 in 0..2 {
            let h1 = History::initial(o1);
            let s1 = sol.pi_star[&h1.key()];
            for a1 in 0..2 {
                let pi1 = if a1 == s1 { 1.0 } else { 0.0 };
                let d1 = rho[o1] * pi1;
                let mu1 = rho[o1] * (0.5 * pi1 + 0.25);
                if d1 > 0.0 {
                    best = best.max(d1 / mu1);
                }
                let next = ohmdp_next_dist(&m, &h1, a1).unwrap();
                for o2 in 0..2 {
                    let h2 = h1.extended(a1, o2);
                    let s2 = sol.pi_star[&h2.key()];
                    for a2 in 0..2 {
                        let pi2 = if a2 == s2 { 1.0 } else { 0.0 };
                        let d2 = d1 * next[o2] * pi2;
                        let mu2 = rho[o1] * next[o2] * (0.5 * pi1 * pi2 + 0.5 * 0.25);
                        if d2 > 0.0 {
                            best = best.max(d2 / mu2);
                        }
                    }
                }
            }
        }
        assert!((got - best).abs() < 1e-12, "{got} vs {best}");
        assert!(got >= 1.0);
    }
}
