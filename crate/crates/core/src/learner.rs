//! Tabular Q-learning for a single UAV confined to its region.
//!
//! States are local cells of the region (row-major). Moves that would leave
//! the region are illegal; `Stay` is always legal.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::RegionShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

pub const ACTION_COUNT: usize = 5;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn is_move(self) -> bool {
        self != Action::Stay
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stay => "stay",
        };
        f.write_str(name)
    }
}

/// Set of actions, stored as a bitmask over action indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSet(u8);

impl ActionSet {
    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// The `k`-th member in action-index order.
    pub fn nth(self, k: usize) -> Option<Action> {
        self.iter().nth(k)
    }
}

pub fn legal_actions(shape: RegionShape, cell: usize) -> ActionSet {
    let (x, y) = (cell % shape.width, cell / shape.width);
    let mut mask = 1 << Action::Stay.index();
    if y > 0 {
        mask |= 1 << Action::Up.index();
    }
    if y + 1 < shape.height {
        mask |= 1 << Action::Down.index();
    }
    if x > 0 {
        mask |= 1 << Action::Left.index();
    }
    if x + 1 < shape.width {
        mask |= 1 << Action::Right.index();
    }
    ActionSet(mask)
}

pub fn step_transition(shape: RegionShape, cell: usize, a: Action) -> Result<usize> {
    if cell >= shape.states() || !legal_actions(shape, cell).contains(a) {
        return Err(Error::IllegalAction {
            cell,
            action: a.index(),
        });
    }
    Ok(match a {
        Action::Up => cell - shape.width,
        Action::Down => cell + shape.width,
        Action::Left => cell - 1,
        Action::Right => cell + 1,
        Action::Stay => cell,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams {
            alpha: 0.1,
            gamma: 0.3,
            epsilon: 0.1,
            beta1: 1.0,
            beta2: 0.5,
            beta3: -1.0,
        }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon", format!("must lie in [0, 1], got {}", self.epsilon)));
        }
        if ![self.beta1, self.beta2, self.beta3].iter().all(|b| b.is_finite()) {
            return Err(Error::invalid("beta1", "rewards must be finite"));
        }
        if !(self.beta1 > self.beta2 && self.beta2 > 0.0 && 0.0 > self.beta3) {
            return Err(Error::invalid(
                "beta3",
                format!(
                    "rewards must satisfy beta1 > beta2 > 0 > beta3, got {} / {} / {}",
                    self.beta1, self.beta2, self.beta3
                ),
            ));
        }
        Ok(())
    }

    /// `max|beta| / (1 - gamma)`, the sup-norm bound on any Q value.
    pub fn q_bound(&self) -> f64 {
        self.beta1.abs().max(self.beta2.abs()).max(self.beta3.abs()) / (1.0 - self.gamma)
    }
}

/// Dense state x action table, state-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: usize) -> Self {
        QTable {
            states,
            values: vec![0.0; states * ACTION_COUNT],
        }
    }

    pub fn from_values(states: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != states * ACTION_COUNT {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {states} states x {ACTION_COUNT} actions",
                values.len()
            )));
        }
        Ok(QTable { states, values })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.values[s * ACTION_COUNT + a.index()]
    }

    pub fn set(&mut self, s: usize, a: Action, v: f64) {
        self.values[s * ACTION_COUNT + a.index()] = v;
    }

    pub fn reset(&mut self) {
        self.values.fill(0.0);
    }

    pub fn max_legal(&self, shape: RegionShape, s: usize) -> f64 {
        legal_actions(shape, s)
            .iter()
            .map(|a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes one line per state with the five action values.
    pub fn write_flat<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in self.values.chunks(ACTION_COUNT) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_flat<R: BufRead>(r: R) -> Result<Self> {
        let mut values = Vec::new();
        let mut states = 0;
        for line in r.lines() {
            let line = line.map_err(|e| Error::Config(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("q-table row {states}: {e}")))?;
            if row.len() != ACTION_COUNT {
                return Err(Error::ShapeMismatch(format!(
                    "q-table row {states} has {} values, expected {ACTION_COUNT}",
                    row.len()
                )));
            }
            values.extend(row);
            states += 1;
        }
        QTable::from_values(states, values)
    }
}

/// Runtime state of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub cell: usize,
    pub energy: f64,
    pub last_rate: f64,
    pub alive: bool,
}

fn argmax_set(q: &QTable, shape: RegionShape, s: usize) -> ActionSet {
    let legal = legal_actions(shape, s);
    let best = q.max_legal(shape, s);
    let mut mask = 0u8;
    for a in legal.iter() {
        if q.get(s, a) == best {
            mask |= 1 << a.index();
        }
    }
    ActionSet(mask)
}

/// Epsilon-greedy selection. Always draws the exploration coin first; a
/// second draw picks among legal actions (exploring) or among tied maximizers
/// (exploiting), and is skipped when there is a single candidate.
pub fn choose_action<R: Rng + ?Sized>(
    q: &QTable,
    shape: RegionShape,
    s: usize,
    params: &LearningParams,
    rng: &mut R,
) -> Action {
    let explore = rng.random::<f64>() < params.epsilon;
    let candidates = if explore {
        legal_actions(shape, s)
    } else {
        argmax_set(q, shape, s)
    };
    pick(candidates, rng)
}

/// Uniform choice over the legal actions; used by the random-walk mode.
pub fn random_action<R: Rng + ?Sized>(shape: RegionShape, s: usize, rng: &mut R) -> Action {
    pick(legal_actions(shape, s), rng)
}

fn pick<R: Rng + ?Sized>(set: ActionSet, rng: &mut R) -> Action {
    let k = if set.len() > 1 {
        rng.random_range(0..set.len())
    } else {
        0
    };
    set.nth(k).expect("candidate set is never empty")
}

/// Greedy action with ties resolved to the lowest action index.
pub fn greedy_action(q: &QTable, shape: RegionShape, s: usize) -> Action {
    argmax_set(q, shape, s).nth(0).expect("candidate set is never empty")
}

/// Relative tolerance under which two rates count as equal.
pub const RATE_REL_TOL: f64 = 1e-9;

pub fn reward(moved: bool, rate_now: f64, rate_prev: f64, params: &LearningParams) -> f64 {
    if !moved {
        return params.beta2;
    }
    let scale = rate_now.abs().max(rate_prev.abs());
    let improved = rate_now - rate_prev > RATE_REL_TOL * scale;
    if improved {
        params.beta1
    } else {
        // Includes moving without any rate change: energy spent for nothing.
        params.beta3
    }
}

/// One Bellman backup on `Q(s, a)`.
pub fn q_update(
    q: &mut QTable,
    shape: RegionShape,
    s: usize,
    a: Action,
    r: f64,
    s_next: usize,
    params: &LearningParams,
) {
    let target = r + params.gamma * q.max_legal(shape, s_next);
    let old = q.get(s, a);
    q.set(s, a, (1.0 - params.alpha) * old + params.alpha * target);
}

/// Follows the greedy policy from `start` until it chooses `Stay`. Returns the
/// resting cell, or `None` if the walk cycles.
pub fn greedy_absorbing_cell(q: &QTable, shape: RegionShape, start: usize) -> Option<usize> {
    let mut cell = start;
    for _ in 0..=shape.states() {
        let a = greedy_action(q, shape, cell);
        if a == Action::Stay {
            return Some(cell);
        }
        cell = step_transition(shape, cell, a).expect("greedy actions are legal");
    }
    None
}
