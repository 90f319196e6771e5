//! Taxi gridworlds on the classic 5×5 map.
//!
//! ```text
//! +---------+
//! |R: | : :G|
//! | : | : : |
//! | : : : : |
//! | | : | : |
//! |Y| : |B: |
//! +---------+
//! ```
//!
//! Actions: 0 south, 1 north, 2 east, 3 west, 4 pickup, 5 dropoff. Moves are
//! deterministic; moving into a wall or off the grid leaves the taxi in place.
//! Landmarks are indexed R=0, G=1, Y=2, B=3.
//!
//! Both variants are continuing processes. Rewards are the classic ones
//! (−1 per step, +20 for a delivery, −10 for an illegal pickup or dropoff)
//! mapped into `[0, 1]` by `(r + 10) / 30`.

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::model::{Flavor, RewardDist, SparseRow, TabularDecisionProcess};

pub const GRID: usize = 5;
pub const N_ACTIONS: usize = 6;
pub const LANDMARKS: [(usize, usize); 4] = [(0, 0), (0, 4), (4, 0), (4, 3)];

pub const SOUTH: usize = 0;
pub const NORTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;
pub const PICKUP: usize = 4;
pub const DROPOFF: usize = 5;

pub const REWARD_STEP: f64 = 0.3;
pub const REWARD_DELIVERY: f64 = 1.0;
pub const REWARD_ILLEGAL: f64 = 0.0;

/// Builtin environment names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaxiVariant {
    /// Classic encoding, 500 states.
    #[serde(rename = "taxi-small")]
    Small,
    /// Corner-passenger encoding, 2000 states.
    #[serde(rename = "taxi-liu")]
    Liu,
}

impl TaxiVariant {
    pub fn name(self) -> &'static str {
        match self {
            TaxiVariant::Small => "taxi-small",
            TaxiVariant::Liu => "taxi-liu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "taxi-small" => Some(TaxiVariant::Small),
            "taxi-liu" => Some(TaxiVariant::Liu),
            _ => None,
        }
    }

    pub fn n_states(self) -> usize {
        match self {
            TaxiVariant::Small => SMALL_STATES,
            TaxiVariant::Liu => LIU_STATES,
        }
    }
}

/// Next grid cell after a move, honouring the map's walls.
pub fn move_taxi(row: usize, col: usize, action: usize) -> (usize, usize) {
    // A wall on the east side of (row, col).
    let wall_east = |r: usize, c: usize| matches!((r, c), (0, 1) | (1, 1) | (3, 0) | (4, 0) | (3, 2) | (4, 2));
    match action {
        SOUTH if row + 1 < GRID => (row + 1, col),
        NORTH if row > 0 => (row - 1, col),
        EAST if col + 1 < GRID && !wall_east(row, col) => (row, col + 1),
        WEST if col > 0 && !wall_east(row, col - 1) => (row, col - 1),
        _ => (row, col),
    }
}

fn landmark_at(row: usize, col: usize) -> Option<usize> {
    LANDMARKS.iter().position(|&x| x == (row, col))
}

/// States of `taxi-small`: `((row·5 + col)·5 + passenger)·4 + destination`,
/// where `passenger` is a landmark index or 4 for "in the taxi".
pub const SMALL_STATES: usize = GRID * GRID * 5 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallState {
    pub row: usize,
    pub col: usize,
    pub passenger: usize,
    pub destination: usize,
}

impl SmallState {
    pub fn encode(self) -> usize {
        ((self.row * GRID + self.col) * 5 + self.passenger) * 4 + self.destination
    }

    pub fn decode(s: usize) -> Self {
        SmallState { destination: s % 4, passenger: (s / 4) % 5, col: (s / 20) % GRID, row: s / 100 }
    }
}

/// The 300 episode-start states (passenger waiting at a landmark other
/// than the destination), uniformly.
pub fn small_start_distribution() -> Vec<f64> {
    let mut p = vec![0.0; SMALL_STATES];
    let starts: Vec<usize> = (0..SMALL_STATES)
        .filter(|&s| {
            let x = SmallState::decode(s);
            x.passenger < 4 && x.passenger != x.destination
        })
        .collect();
    for &s in &starts {
        p[s] = 1.0 / starts.len() as f64;
    }
    p
}

/// One step of `taxi-small` and its reward. `None` marks a delivery, after
/// which the process restarts from the start distribution.
pub fn small_step(x: SmallState, action: usize) -> (Option<SmallState>, f64) {
    let here = landmark_at(x.row, x.col);
    match action {
        PICKUP if x.passenger < 4 && here == Some(x.passenger) => {
            (Some(SmallState { passenger: 4, ..x }), REWARD_STEP)
        }
        DROPOFF if x.passenger == 4 => match here {
            Some(l) if l == x.destination => (None, REWARD_DELIVERY),
            Some(l) => (Some(SmallState { passenger: l, ..x }), REWARD_STEP),
            None => (Some(x), REWARD_ILLEGAL),
        },
        PICKUP | DROPOFF => (Some(x), REWARD_ILLEGAL),
        _ => {
            let (row, col) = move_taxi(x.row, x.col, action);
            (Some(SmallState { row, col, ..x }), REWARD_STEP)
        }
    }
}

/// States of `taxi-liu`: `(row·5 + col)·80 + waiting·5 + status`, where
/// `waiting` is a 4-bit mask of landmarks with a waiting passenger and
/// `status` is 4 for an empty taxi or the destination landmark of the
/// passenger on board.
pub const LIU_STATES: usize = GRID * GRID * 16 * 5;

/// Per-step probability that a passenger appears at an empty landmark.
pub const LIU_ARRIVAL: f64 = 0.3;
/// Per-step probability that a waiting passenger leaves.
pub const LIU_DEPARTURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiuState {
    pub row: usize,
    pub col: usize,
    pub waiting: usize,
    pub status: usize,
}

impl LiuState {
    pub fn encode(self) -> usize {
        (self.row * GRID + self.col) * 80 + self.waiting * 5 + self.status
    }

    pub fn decode(s: usize) -> Self {
        LiuState { status: s % 5, waiting: (s / 5) % 16, col: (s / 80) % GRID, row: s / 400 }
    }
}

/// Waiting passengers evolve independently per landmark after the taxi
/// acts: empty landmarks gain one with [`LIU_ARRIVAL`], occupied ones lose
/// it with [`LIU_DEPARTURE`].
fn liu_passenger_dynamics(waiting: usize) -> Vec<(usize, f64)> {
    let mut out = vec![(0usize, 1.0)];
    for l in 0..4 {
        let p_on = if waiting & (1 << l) != 0 { 1.0 - LIU_DEPARTURE } else { LIU_ARRIVAL };
        out = out
            .into_iter()
            .flat_map(|(m, p)| [(m | (1 << l), p * p_on), (m, p * (1.0 - p_on))])
            .filter(|&(_, p)| p > 0.0)
            .collect();
    }
    out
}

fn liu_row(x: LiuState, action: usize) -> (SparseRow, f64) {
    let here = landmark_at(x.row, x.col);
    // Deterministic part of the move: (taxi state, mask after the taxi acts, reward).
    let mut branches: Vec<(LiuState, f64)> = Vec::new();
    let mut reward = REWARD_STEP;
    match action {
        PICKUP => match here {
            Some(l) if x.status == 4 && x.waiting & (1 << l) != 0 => {
                let waiting = x.waiting & !(1 << l);
                for d in (0..4).filter(|&d| d != l) {
                    branches.push((LiuState { waiting, status: d, ..x }, 1.0 / 3.0));
                }
            }
            _ => {
                reward = REWARD_ILLEGAL;
                branches.push((x, 1.0));
            }
        },
        DROPOFF => match here {
            Some(l) if x.status == l => {
                reward = REWARD_DELIVERY;
                branches.push((LiuState { status: 4, ..x }, 1.0));
            }
            _ => {
                reward = REWARD_ILLEGAL;
                branches.push((x, 1.0));
            }
        },
        _ => {
            let (row, col) = move_taxi(x.row, x.col, action);
            branches.push((LiuState { row, col, ..x }, 1.0));
        }
    }
    let mut dense: Vec<(usize, f64)> = Vec::new();
    for (y, p) in branches {
        for (mask, q) in liu_passenger_dynamics(y.waiting) {
            dense.push((LiuState { waiting: mask, ..y }.encode(), p * q));
        }
    }
    (sparse_from_pairs(dense), reward)
}

fn sparse_from_pairs(mut pairs: Vec<(usize, f64)>) -> SparseRow {
    pairs.sort_by_key(|&(j, _)| j);
    let mut row = SparseRow { next: Vec::new(), prob: Vec::new() };
    for (j, p) in pairs {
        if row.next.last() == Some(&j) {
            *row.prob.last_mut().expect("nonempty") += p;
        } else {
            row.next.push(j);
            row.prob.push(p);
        }
    }
    row
}

/// Builds a taxi process discounted at `gamma`. The initial distribution is
/// the start distribution (`taxi-small`) or an empty taxi anywhere with no
/// waiting passengers (`taxi-liu`).
pub fn build_taxi(variant: TaxiVariant, gamma: f64) -> Result<TabularDecisionProcess> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OpeError::config("gamma", "must lie in (0, 1)"));
    }
    let flavor = Flavor::StationaryDiscounted { gamma };
    match variant {
        TaxiVariant::Small => {
            let start = small_start_distribution();
            let restart = SparseRow::from_dense(&start);
            let mut kernel = Vec::with_capacity(SMALL_STATES * N_ACTIONS);
            let mut rewards = Vec::with_capacity(SMALL_STATES * N_ACTIONS);
            for s in 0..SMALL_STATES {
                let x = SmallState::decode(s);
                for a in 0..N_ACTIONS {
                    let (next, r) = small_step(x, a);
                    kernel.push(match next {
                        Some(y) => SparseRow { next: vec![y.encode()], prob: vec![1.0] },
                        None => restart.clone(),
                    });
                    rewards.push(RewardDist::deterministic(r));
                }
            }
            TabularDecisionProcess::new(SMALL_STATES, N_ACTIONS, flavor, vec![kernel], vec![rewards], start, None, 1.0)
        }
        TaxiVariant::Liu => {
            let mut kernel = Vec::with_capacity(LIU_STATES * N_ACTIONS);
            let mut rewards = Vec::with_capacity(LIU_STATES * N_ACTIONS);
            for s in 0..LIU_STATES {
                let x = LiuState::decode(s);
                for a in 0..N_ACTIONS {
                    let (row, r) = liu_row(x, a);
                    kernel.push(row);
                    rewards.push(RewardDist::deterministic(r));
                }
            }
            let mut start = vec![0.0; LIU_STATES];
            for cell in 0..GRID * GRID {
                start[LiuState { row: cell / GRID, col: cell % GRID, waiting: 0, status: 4 }.encode()] =
                    1.0 / (GRID * GRID) as f64;
            }
            TabularDecisionProcess::new(LIU_STATES, N_ACTIONS, flavor, vec![kernel], vec![rewards], start, None, 1.0)
        }
    }
}
