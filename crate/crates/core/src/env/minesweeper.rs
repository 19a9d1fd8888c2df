use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

pub const MINE_REWARD: f64 = -1.0;
/// Outcome symbol of the initial observation, before any cell is revealed.
pub const OUTCOME_NONE: usize = 3;

/// Blind Minesweeper.
///
/// Action: cell index `row * cols + col`. Observation: `[adjacent_mines,
/// outcome]` for the chosen cell, where outcome is 0 new safe cell, 1 mine,
/// 2 repeated cell (3 before the first move). A new safe cell pays
/// `+1/(G-M)`, a repeat costs `-1/(G-M)`, a mine costs `-1` and ends the
/// episode; revealing every safe cell also ends it.
#[derive(Debug, Clone)]
pub struct Minesweeper {
    spec: EnvSpec,
    rows: usize,
    cols: usize,
    mines: usize,
    clock: Clock,
    mine: Vec<bool>,
    visited: Vec<bool>,
}

impl Minesweeper {
    pub fn new(rows: usize, cols: usize, mines: usize) -> Self {
        let cells = rows * cols;
        assert!(mines < cells, "need at least one safe cell");
        Self {
            spec: EnvSpec {
                name: format!("minesweeper_{rows}x{cols}_m{mines}"),
                action_cardinality: cells,
                horizon: cells,
                channel_cardinalities: vec![9, 4],
                continuous_bounds: vec![],
                reward_channel: Some(1),
            },
            rows,
            cols,
            mines,
            clock: Clock::default(),
            mine: vec![false; cells],
            visited: vec![false; cells],
        }
    }

    pub fn safe_reward(&self) -> f64 {
        1.0 / (self.rows * self.cols - self.mines) as f64
    }

    pub fn is_mine(&self, cell: usize) -> bool {
        self.mine[cell]
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    fn adjacent_mines(&self, cell: usize) -> usize {
        let (r, c) = ((cell / self.cols) as isize, (cell % self.cols) as isize);
        let mut n = 0;
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= self.rows as isize || cc >= self.cols as isize {
                    continue;
                }
                n += self.mine[rr as usize * self.cols + cc as usize] as usize;
            }
        }
        n
    }
}

impl Environment for Minesweeper {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = self.rows * self.cols;
        self.mine = vec![false; cells];
        for i in sample(&mut rng, cells, self.mines) {
            self.mine[i] = true;
        }
        self.visited = vec![false; cells];
        self.clock.reset();
        Observation::discrete(vec![0, OUTCOME_NONE])
    }

    fn step(&mut self, action: usize) -> StepResult {
        self.clock.begin_step(&self.spec, action);
        let (reward, outcome, terminal) = if self.visited[action] {
            (-self.safe_reward(), 2, false)
        } else if self.mine[action] {
            self.visited[action] = true;
            (MINE_REWARD, 1, true)
        } else {
            self.visited[action] = true;
            let revealed = self.visited.iter().zip(&self.mine).filter(|(v, m)| **v && !**m).count();
            let cleared = revealed == self.rows * self.cols - self.mines;
            (self.safe_reward(), 0, cleared)
        };
        let done = self.clock.finish(&self.spec, terminal);
        StepResult {
            observation: Observation::discrete(vec![self.adjacent_mines(action), outcome]),
            reward,
            done,
        }
    }

    /// A uniformly drawn cell that has not been played yet.
    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize {
        let open: Vec<usize> = (0..self.visited.len()).filter(|&i| !self.visited[i]).collect();
        if open.is_empty() {
            return uniform_action(self.spec.action_cardinality, rng);
        }
        open[rng.random_range(0..open.len())]
    }

    fn is_done(&self) -> bool {
        self.clock.done
    }
}
