//! Observation histories `[o1, a1, o2, ..., oh]` and their canonical byte keys.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An observation history of depth `h`: `h` observations interleaved with `h - 1` actions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct History {
    observations: Vec<u32>,
    actions: Vec<u32>,
}

/// Injective byte encoding of a [`History`].
///
/// Layout: varint depth, then the varint-encoded interleaving `o1, a1, o2, ..., oh`.
/// Every per-history table in the crate is keyed by this type.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HistKey(Vec<u8>);

fn put_varint(buf: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

fn get_varint(bytes: &[u8], pos: &mut usize) -> Option<u64> {
    let mut v = 0u64;
    let mut shift = 0;
    loop {
        let b = *bytes.get(*pos)?;
        *pos += 1;
        if shift >= 64 {
            return None;
        }
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Some(v);
        }
        shift += 7;
    }
}

impl History {
    pub fn initial(observation: usize) -> Self {
        History {
            observations: vec![observation as u32],
            actions: Vec::new(),
        }
    }

    pub fn from_parts(observations: Vec<u32>, actions: Vec<u32>) -> Result<Self> {
        if observations.is_empty() || observations.len() != actions.len() + 1 {
            return Err(Error::DegenerateInput(format!(
                "history needs len(observations) = len(actions) + 1 >= 1, got {} and {}",
                observations.len(),
                actions.len()
            )));
        }
        Ok(History {
            observations,
            actions,
        })
    }

    pub fn depth(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[u32] {
        &self.observations
    }

    pub fn actions(&self) -> &[u32] {
        &self.actions
    }

    pub fn last_observation(&self) -> usize {
        *self.observations.last().expect("history is never empty") as usize
    }

    /// `self ⊕ (action, observation)`, in place.
    pub fn push(&mut self, action: usize, observation: usize) {
        self.actions.push(action as u32);
        self.observations.push(observation as u32);
    }

    pub fn extended(&self, action: usize, observation: usize) -> History {
        let mut next = self.clone();
        next.push(action, observation);
        next
    }

    /// The prefix of the given depth (`1 <= depth <= self.depth()`).
    pub fn prefix(&self, depth: usize) -> History {
        assert!(depth >= 1 && depth <= self.depth());
        History {
            observations: self.observations[..depth].to_vec(),
            actions: self.actions[..depth - 1].to_vec(),
        }
    }

    pub fn key(&self) -> HistKey {
        let mut buf = Vec::with_capacity(2 * self.observations.len() + 1);
        put_varint(&mut buf, self.observations.len() as u64);
        for (i, &o) in self.observations.iter().enumerate() {
            if i > 0 {
                put_varint(&mut buf, u64::from(self.actions[i - 1]));
            }
            put_varint(&mut buf, u64::from(o));
        }
        HistKey(buf)
    }
}

impl HistKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Depth encoded in the key prefix.
    pub fn depth(&self) -> usize {
        let mut pos = 0;
        get_varint(&self.0, &mut pos).unwrap_or(0) as usize
    }

    pub fn decode(&self) -> Result<History> {
        let bad = || Error::DegenerateInput("malformed history key".into());
        let mut pos = 0;
        let depth = get_varint(&self.0, &mut pos).ok_or_else(bad)? as usize;
        if depth == 0 {
            return Err(bad());
        }
        let mut observations = Vec::with_capacity(depth);
        let mut actions = Vec::with_capacity(depth - 1);
        for i in 0..depth {
            if i > 0 {
                actions.push(u32::try_from(get_varint(&self.0, &mut pos).ok_or_else(bad)?).map_err(|_| bad())?);
            }
            observations.push(u32::try_from(get_varint(&self.0, &mut pos).ok_or_else(bad)?).map_err(|_| bad())?);
        }
        if pos != self.0.len() {
            return Err(bad());
        }
        Ok(History {
            observations,
            actions,
        })
    }
}

impl fmt::Display for History {
    /// `o1.a1.o2...`, the textual key in CSV exports.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, o) in self.observations.iter().enumerate() {
            if i > 0 {
                write!(f, ".{}.", self.actions[i - 1])?;
            }
            write!(f, "{o}")?;
        }
        Ok(())
    }
}

impl fmt::Display for HistKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.decode() {
            Ok(h) => write!(f, "{h}"),
            Err(_) => write!(f, "<invalid>"),
        }
    }
}

impl fmt::Debug for HistKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HistKey({self})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extend_and_prefix() {
        let h = History::initial(3).extended(1, 4).extended(0, 200);
        assert_eq!(h.depth(), 3);
        assert_eq!(h.last_observation(), 200);
        assert_eq!(h.prefix(2), History::initial(3).extended(1, 4));
        assert_eq!(h.to_string(), "3.1.4.0.200");
    }

    #[test]
    fn key_depth_prefix_orders_by_depth_first() {
        let short = History::initial(900).key();
        let long = History::initial(0).extended(0, 0).key();
        assert!(short < long);
        assert_eq!(long.depth(), 2);
    }

    #[test]
    fn mismatched_parts_rejected() {
        assert!(History::from_parts(vec![1, 2], vec![]).is_err());
        assert!(History::from_parts(vec![], vec![]).is_err());
    }

    fn arb_history() -> impl Strategy<Value = History> {
        (1usize..8).prop_flat_map(|d| {
            (
                prop::collection::vec(0u32..70_000, d),
                prop::collection::vec(0u32..300, d - 1),
            )
                .prop_map(|(o, a)| History::from_parts(o, a).unwrap())
        })
    }

    proptest! {
        #[test]
        fn key_roundtrip(h in arb_history()) {
            prop_assert_eq!(h.key().decode().unwrap(), h);
        }

        #[test]
        fn key_injective(a in arb_history(), b in arb_history()) {
            prop_assert_eq!(a.key() == b.key(), a == b);
        }
    }
}
