//! Finite-horizon empirical MDPs over arbitrary keys (histories or clusters),
//! the common input of the pessimistic solvers.

use std::collections::BTreeMap;

use crate::data::empirical::EmpiricalModel;
use crate::history::HistKey;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub count: u64,
    pub r_hat: f64,
    /// `(successor node, P^)`. Successors past the horizon are omitted, so the
    /// probabilities may sum to less than one; missing mass has value zero.
    pub successors: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredNode<K> {
    pub key: K,
    /// 1-based step at which the key is acted on.
    pub depth: usize,
    /// `None` where the action was never taken (`n = 0`).
    pub actions: Vec<Option<Transition>>,
}

impl<K> LayeredNode<K> {
    pub fn count(&self, a: usize) -> u64 {
        self.actions[a].as_ref().map_or(0, |t| t.count)
    }

    pub fn visits(&self) -> u64 {
        (0..self.actions.len()).map(|a| self.count(a)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredModel<K: Ord> {
    pub num_actions: usize,
    pub horizon: usize,
    /// Sorted by `(depth, key)`.
    pub nodes: Vec<LayeredNode<K>>,
    pub index: BTreeMap<K, usize>,
}

impl<K: Ord + Clone> LayeredModel<K> {
    /// Assembles nodes, sorting by `(depth, key)` and remapping successor ids.
    /// `successors` in the input refer to positions in `nodes`.
    pub fn from_nodes(num_actions: usize, horizon: usize, nodes: Vec<LayeredNode<K>>) -> Self {
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&i, &j| (nodes[i].depth, &nodes[i].key).cmp(&(nodes[j].depth, &nodes[j].key)));
        let mut new_id = vec![0; nodes.len()];
        for (pos, &old) in order.iter().enumerate() {
            new_id[old] = pos;
        }
        let mut slots: Vec<Option<LayeredNode<K>>> = nodes.into_iter().map(Some).collect();
        let mut sorted = Vec::with_capacity(slots.len());
        for &old in &order {
            let mut n = slots[old].take().expect("each node moved once");
            for t in n.actions.iter_mut().flatten() {
                for s in &mut t.successors {
                    s.0 = new_id[s.0];
                }
                t.successors.sort_by_key(|s| s.0);
            }
            sorted.push(n);
        }
        let index = sorted.iter().enumerate().map(|(i, n)| (n.key.clone(), i)).collect();
        LayeredModel {
            num_actions,
            horizon,
            nodes: sorted,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_of(&self, key: &K) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// True when every successor sits exactly one step deeper.
    pub fn is_layered(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.actions
                .iter()
                .flatten()
                .all(|t| t.successors.iter().all(|&(c, _)| self.nodes[c].depth == n.depth + 1))
        })
    }
}

impl LayeredModel<HistKey> {
    /// Nodes for every seen history and every observed successor within the horizon.
    pub fn from_empirical(emp: &EmpiricalModel) -> Self {
        let mut ids: BTreeMap<HistKey, usize> = BTreeMap::new();
        let mut nodes: Vec<LayeredNode<HistKey>> = Vec::new();
        let na = emp.num_actions;
        let mut intern = |key: HistKey, nodes: &mut Vec<LayeredNode<HistKey>>| -> usize {
            *ids.entry(key.clone()).or_insert_with(|| {
                nodes.push(LayeredNode {
                    depth: key.depth(),
                    key,
                    actions: vec![None; na],
                });
                nodes.len() - 1
            })
        };
        for (key, row) in &emp.table {
            let id = intern(key.clone(), &mut nodes);
            let history = key.decode().expect("empirical keys are valid");
            for (a, st) in row.iter().enumerate() {
                if st.count == 0 {
                    continue;
                }
                let mut successors = Vec::new();
                if history.depth() < emp.horizon {
                    for (o, p) in st.p_hat().expect("count > 0") {
                        let child = intern(history.extended(a, o).key(), &mut nodes);
                        successors.push((child, p));
                    }
                }
                nodes[id].actions[a] = Some(Transition {
                    count: st.count,
                    r_hat: st.r_hat().expect("count > 0"),
                    successors,
                });
            }
        }
        LayeredModel::from_nodes(na, emp.horizon, nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::History;

    #[test]
    fn successors_of_seen_histories_become_nodes() {
        let mut emp = EmpiricalModel::new(2, 2, 2);
        let h = History::initial(0);
        emp.add(&h, 1, 0.5, 1);
        emp.add(&h, 1, 0.0, 0);
        let m = LayeredModel::from_empirical(&emp);
        assert_eq!(m.len(), 3);
        assert!(m.is_layered());
        let root = &m.nodes[m.node_of(&h.key()).unwrap()];
        assert!(root.actions[0].is_none());
        let t = root.actions[1].as_ref().unwrap();
        assert_eq!(t.count, 2);
        assert_eq!(t.r_hat, 0.25);
        assert_eq!(t.successors.len(), 2);
        let leaf = m.node_of(&h.extended(1, 1).key()).unwrap();
        assert_eq!(m.nodes[leaf].visits(), 0);
    }

    #[test]
    fn last_step_has_no_successors() {
        let mut emp = EmpiricalModel::new(1, 1, 1);
        emp.add(&History::initial(0), 0, 1.0, 0);
        let m = LayeredModel::from_empirical(&emp);
        assert_eq!(m.len(), 1);
        assert!(m.nodes[0].actions[0].as_ref().unwrap().successors.is_empty());
    }
}
