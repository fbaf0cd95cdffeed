//! Switch gridworld. The first switch cell the agent steps on decides which goal
//! cell pays out; the latent switch is never observed, only the agent's cell.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::history::History;
use crate::policy::{one_hot, uniform, Policy};
use crate::pomdp::{RewardNoise, TabularPOMDP};

pub const NUM_ACTIONS: usize = 5;
pub const STAY: usize = 4;
/// Row/column offsets for up, right, down, left.
const MOVES: [(i64, i64); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Open,
    Start,
    RightSwitch,
    DownSwitch,
    GoalRight,
    GoalDown,
    Lava,
}

impl Cell {
    fn parse(c: char) -> Option<Cell> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Open,
            'S' => Cell::Start,
            'R' => Cell::RightSwitch,
            'D' => Cell::DownSwitch,
            'g' => Cell::GoalRight,
            'h' => Cell::GoalDown,
            'L' => Cell::Lava,
            _ => return None,
        })
    }
}

/// Switch status: nothing tripped, right switch first, down switch first.
pub const SWITCH_NONE: usize = 0;
pub const SWITCH_RIGHT: usize = 1;
pub const SWITCH_DOWN: usize = 2;

#[derive(Clone, Debug)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
    pub slip: f64,
    pub horizon: usize,
    pub note: Option<String>,
}

impl Layout {
    pub fn parse(text: &str) -> Result<Layout> {
        let mut slip = 0.2;
        let mut horizon = 50;
        let mut note = None;
        let mut rows: Vec<Vec<Cell>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                if !rows.is_empty() {
                    return Err(layout_err(line_no, 1, "header line after grid rows"));
                }
                let bad = |m: &str| layout_err(line_no, key.len() + 2, m);
                match key.trim() {
                    "slip" => {
                        slip = value.trim().parse().map_err(|_| bad("slip must be a number"))?;
                        if !(0.0..=1.0).contains(&slip) {
                            return Err(bad("slip must lie in [0, 1]"));
                        }
                    }
                    "horizon" => {
                        horizon = value.trim().parse().map_err(|_| bad("horizon must be a positive integer"))?;
                        if horizon == 0 {
                            return Err(bad("horizon must be a positive integer"));
                        }
                    }
                    "note" => note = Some(value.trim().to_string()),
                    other => return Err(layout_err(line_no, 1, &format!("unknown header key {other:?}"))),
                }
                continue;
            }
            let mut row = Vec::with_capacity(line.len());
            for (j, c) in line.chars().enumerate() {
                row.push(Cell::parse(c).ok_or_else(|| layout_err(line_no, j + 1, &format!("unknown cell character {c:?}")))?);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(layout_err(
                        line_no,
                        row.len().min(first.len()) + 1,
                        &format!("row has {} cells, expected {}", row.len(), first.len()),
                    ));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(layout_err(text.lines().count().max(1), 1, "no grid rows"));
        }
        let layout = Layout {
            rows: rows.len(),
            cols: rows[0].len(),
            cells: rows.into_iter().flatten().collect(),
            slip,
            horizon,
            note,
        };
        for (kind, name) in [
            (Cell::Start, "S"),
            (Cell::RightSwitch, "R"),
            (Cell::DownSwitch, "D"),
            (Cell::GoalRight, "g"),
            (Cell::GoalDown, "h"),
        ] {
            let n = layout.cells.iter().filter(|&&c| c == kind).count();
            if n != 1 {
                return Err(layout_err(0, 0, &format!("expected exactly one {name} cell, found {n}")));
            }
        }
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Layout> {
        Layout::parse(&std::fs::read_to_string(path)?)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn find(&self, kind: Cell) -> usize {
        self.cells.iter().position(|&c| c == kind).expect("validated at parse time")
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.cols, cell % self.cols)
    }

    /// Destination of a move in direction `dir` (0..4); walls and edges block.
    pub fn step(&self, cell: usize, dir: usize) -> usize {
        let (r, c) = self.row_col(cell);
        let (dr, dc) = MOVES[dir];
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if nr < 0 || nc < 0 || nr >= self.rows as i64 || nc >= self.cols as i64 {
            return cell;
        }
        let next = nr as usize * self.cols + nc as usize;
        if self.cells[next] == Cell::Wall {
            cell
        } else {
            next
        }
    }

    /// Commanded action `a` from `cell` as a distribution over destination cells.
    pub fn move_dist(&self, cell: usize, a: usize) -> Vec<(usize, f64)> {
        if a == STAY || self.cells[cell] == Cell::Wall {
            return vec![(cell, 1.0)];
        }
        (0..4)
            .map(|d| {
                let p = if d == a { 1.0 - self.slip } else { self.slip / 3.0 };
                (self.step(cell, d), p)
            })
            .filter(|&(_, p)| p > 0.0)
            .collect()
    }

    pub fn active_goal(&self, switch: usize) -> Option<usize> {
        match switch {
            SWITCH_RIGHT => Some(self.find(Cell::GoalRight)),
            SWITCH_DOWN => Some(self.find(Cell::GoalDown)),
            _ => None,
        }
    }

    /// BFS distance to `target` avoiding walls and lava; `usize::MAX` where unreachable.
    pub fn distances_to(&self, target: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_cells()];
        dist[target] = 0;
        let mut queue = VecDeque::from([target]);
        while let Some(cell) = queue.pop_front() {
            for d in 0..4 {
                let next = self.step(cell, d);
                if next != cell && dist[next] == usize::MAX && self.cells[next] != Cell::Lava {
                    dist[next] = dist[cell] + 1;
                    queue.push_back(next);
                }
            }
        }
        dist
    }
}

fn layout_err(line: usize, column: usize, message: &str) -> Error {
    Error::Layout {
        line,
        column,
        message: message.to_string(),
    }
}

/// Latent state index of `(cell, switch, absorbed)`.
pub fn state_index(cell: usize, switch: usize, absorbed: bool) -> usize {
    (cell * 3 + switch) * 2 + absorbed as usize
}

pub fn decode_state(s: usize) -> (usize, usize, bool) {
    (s / 6, (s / 2) % 3, s % 2 == 1)
}

pub fn build(layout: &Layout) -> Result<TabularPOMDP> {
    let cells = layout.num_cells();
    let ns = cells * 6;
    let mut transition = vec![0.0; ns * NUM_ACTIONS * ns];
    let mut reward = vec![0.0; ns * NUM_ACTIONS];
    for s in 0..ns {
        let (cell, switch, absorbed) = decode_state(s);
        let collecting = !absorbed && layout.active_goal(switch) == Some(cell);
        for a in 0..NUM_ACTIONS {
            if collecting {
                reward[s * NUM_ACTIONS + a] = 1.0;
            }
            for (next, p) in layout.move_dist(cell, a) {
                let next_switch = match (switch, layout.cells[next]) {
                    (SWITCH_NONE, Cell::RightSwitch) => SWITCH_RIGHT,
                    (SWITCH_NONE, Cell::DownSwitch) => SWITCH_DOWN,
                    _ => switch,
                };
                let next_absorbed = absorbed || collecting || layout.cells[next] == Cell::Lava;
                transition[(s * NUM_ACTIONS + a) * ns + state_index(next, next_switch, next_absorbed)] += p;
            }
        }
    }
    let mut emission = vec![0.0; ns * cells];
    for s in 0..ns {
        emission[s * cells + decode_state(s).0] = 1.0;
    }
    let mut initial = vec![0.0; ns];
    initial[state_index(layout.find(Cell::Start), SWITCH_NONE, false)] = 1.0;
    TabularPOMDP::new(
        ns,
        NUM_ACTIONS,
        cells,
        transition,
        reward,
        emission,
        initial,
        layout.horizon,
        RewardNoise::Deterministic,
    )
}

pub fn make_gridworld(layout_file: &Path) -> Result<TabularPOMDP> {
    build(&Layout::load(layout_file)?)
}

/// Follows BFS shortest paths to `target` with `noise` probability of a uniform action.
#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    /// Greedy action per cell.
    pub actions: Vec<usize>,
    pub noise: f64,
}

impl ScriptedPolicy {
    pub fn towards(layout: &Layout, target: usize, noise: f64) -> Self {
        let dist = layout.distances_to(target);
        let actions = (0..layout.num_cells())
            .map(|cell| {
                let mut best = (dist[cell], STAY);
                for d in 0..4 {
                    let next = layout.step(cell, d);
                    if dist[next] < best.0 {
                        best = (dist[next], d);
                    }
                }
                best.1
            })
            .collect();
        ScriptedPolicy { actions, noise }
    }
}

impl Policy for ScriptedPolicy {
    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        let greedy = one_hot(NUM_ACTIONS, self.actions[history.last_observation()]);
        let u = uniform(NUM_ACTIONS);
        greedy.iter().zip(&u).map(|(g, u)| (1.0 - self.noise) * g + self.noise * u).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ohmdp::ohmdp_reward;
    use crate::sim::{simulate_seeded, stream_rng};

    const SMALL: &str = "slip=0.2\nhorizon=6\n#######\n#S.R.g#\n#D#####\n#..Lh.#\n#######\n";

    fn shipped_layout() -> Layout {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../layouts/paper_fig1.grid");
        Layout::load(Path::new(path)).unwrap()
    }

    #[test]
    fn shipped_layout_counts() {
        let layout = shipped_layout();
        let m = build(&layout).unwrap();
        assert_eq!(m.num_states(), 600);
        assert_eq!(m.num_observations(), 100);
        assert_eq!(m.horizon(), 50);
    }

    #[test]
    fn slip_distribution_from_open_cell() {
        // Centre of an open 3x3 room: all four moves are free.
        let layout = Layout::parse("#####\n#S.R#\n#...#\n#Dgh#\n#####\n").unwrap();
        let centre = 2 * 5 + 2;
        let dist = layout.move_dist(centre, 0);
        let up = layout.step(centre, 0);
        let p_up: f64 = dist.iter().filter(|(c, _)| *c == up).map(|(_, p)| p).sum();
        assert!((p_up - 0.8).abs() < 1e-15);
        for (c, p) in &dist {
            if *c != up {
                assert!((p - 0.2 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(layout.move_dist(centre, STAY), vec![(centre, 1.0)]);
    }

    #[test]
    fn lava_absorbs_reward() {
        let layout = Layout::parse(SMALL).unwrap();
        let m = build(&layout).unwrap();
        let lava = layout.cells.iter().position(|&c| c == Cell::Lava).unwrap();
        let h = layout.find(Cell::GoalDown);
        // Every transition into lava sets the absorbed flag, and the flag is permanent.
        let before = state_index(lava - 1, SWITCH_DOWN, false);
        for (s2, &p) in m.transition_row(before, 1).iter().enumerate() {
            if p > 0.0 && decode_state(s2).0 == lava {
                assert!(decode_state(s2).2, "entered lava without the absorbed flag");
            }
        }
        let absorbed = state_index(lava, SWITCH_DOWN, true);
        for a in 0..NUM_ACTIONS {
            for (s2, &p) in m.transition_row(absorbed, a).iter().enumerate() {
                if p > 0.0 {
                    assert!(decode_state(s2).2);
                }
            }
        }
        assert_eq!(m.reward(state_index(h, SWITCH_DOWN, true), 0), 0.0);
        assert_eq!(m.reward(state_index(h, SWITCH_DOWN, false), 0), 1.0);
        assert_eq!(m.reward(state_index(h, SWITCH_RIGHT, false), 0), 0.0);
    }

    #[test]
    fn no_reward_away_from_goal_matches_simulation() {
        let layout = Layout::parse(SMALL).unwrap();
        let m = build(&layout).unwrap();
        let pol = crate::policy::UniformPolicy { num_actions: NUM_ACTIONS };
        let goals = [layout.find(Cell::GoalRight), layout.find(Cell::GoalDown)];
        for seed in 0..300 {
            let t = simulate_seeded(&m, &pol, seed);
            for (h, step) in t.transitions() {
                if !goals.contains(&h.last_observation()) {
                    assert_eq!(step.reward, 0.0);
                    assert_eq!(ohmdp_reward(&m, &h, step.action).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn malformed_layout_reports_position() {
        match Layout::parse("slip=0.2\n#####\n#S?R#\n") {
            Err(Error::Layout { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Layout::parse("####\n#S.\n"), Err(Error::Layout { line: 2, .. })));
        assert!(matches!(Layout::parse("slip=abc\n#S#\n"), Err(Error::Layout { line: 1, .. })));
    }

    #[test]
    fn scripted_policy_reaches_target_without_noise() {
        let layout = shipped_layout();
        let m = build(&layout).unwrap().with_reward_noise(RewardNoise::Deterministic);
        let h = layout.find(Cell::GoalDown);
        let pol = ScriptedPolicy::towards(&layout, h, 0.0);
        let dist = layout.distances_to(h);
        let s = layout.find(Cell::Start);
        assert!(dist[s] < usize::MAX);
        let mut reached = 0;
        let mut rng = stream_rng(4, 0);
        for _ in 0..200 {
            let t = crate::sim::simulate(&m, &pol, &mut rng);
            reached += (t.total_reward() > 0.0) as usize;
        }
        assert!(reached > 100, "reached {reached}");
    }
}
