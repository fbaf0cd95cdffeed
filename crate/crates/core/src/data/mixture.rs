use std::sync::Arc;

use crate::error::{Error, Result};
use crate::history::History;
use crate::policy::{uniform, Policy, UniformPolicy};

/// Plays `base` with probability `1 - epsilon`, uniform otherwise.
pub struct EpsilonGreedy {
    pub base: Arc<dyn Policy + Send>,
    pub epsilon: f64,
}

impl Policy for EpsilonGreedy {
    fn num_actions(&self) -> usize {
        self.base.num_actions()
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        let u = uniform(self.num_actions());
        self.base
            .action_probs(history)
            .iter()
            .zip(&u)
            .map(|(p, u)| (1.0 - self.epsilon) * p + self.epsilon * u)
            .collect()
    }
}

#[derive(Clone)]
pub struct MixtureComponent {
    pub id: String,
    pub weight: f64,
    pub policy: Arc<dyn Policy + Send>,
}

/// Each trajectory's behavior policy is drawn i.i.d. from these components.
#[derive(Clone)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

impl MixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if components.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, expected 1")));
        }
        let na = components[0].policy.num_actions();
        if components.iter().any(|c| c.policy.num_actions() != na) {
            return Err(Error::Config("mixture components disagree on the action count".into()));
        }
        Ok(MixtureSpec { components })
    }

    pub fn single(id: &str, policy: Arc<dyn Policy + Send>) -> Self {
        MixtureSpec {
            components: vec![MixtureComponent {
                id: id.to_string(),
                weight: 1.0,
                policy,
            }],
        }
    }

    pub fn uniform_random(num_actions: usize) -> Self {
        Self::single("random", Arc::new(UniformPolicy { num_actions }))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn num_actions(&self) -> usize {
        self.components[0].policy.num_actions()
    }
}
