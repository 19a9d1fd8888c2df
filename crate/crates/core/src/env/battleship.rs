use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

pub const SIGNAL_NONE: usize = 0;
pub const SIGNAL_HIT: usize = 1;
pub const SIGNAL_MISS: usize = 2;

/// Blind Battleship on an `n x n` board.
///
/// Action: cell index. Observation: `[signal]`, 1 hit, 2 miss or repeat (0
/// before the first shot). Rewards are scaled so that never missing totals
/// exactly 1 and firing at a uniformly random order of cells totals 0 in
/// expectation: a hit pays `1/S`, a miss or repeat costs `(S+1)/(S(G-S))`
/// (S ship cells, G board cells). Sinking every ship ends the episode.
#[derive(Debug, Clone)]
pub struct Battleship {
    spec: EnvSpec,
    size: usize,
    ships: Vec<usize>,
    clock: Clock,
    ship: Vec<bool>,
    fired: Vec<bool>,
    hits: usize,
}

impl Battleship {
    pub fn new(size: usize, ships: &[usize]) -> Self {
        let cells = size * size;
        let total: usize = ships.iter().sum();
        assert!(total < cells, "ships must leave open water");
        assert!(ships.iter().all(|&l| l >= 1 && l <= size));
        Self {
            spec: EnvSpec {
                name: format!("battleship_{size}x{size}"),
                action_cardinality: cells,
                horizon: cells,
                channel_cardinalities: vec![3],
                continuous_bounds: vec![],
                reward_channel: None,
            },
            size,
            ships: ships.to_vec(),
            clock: Clock::default(),
            ship: vec![false; cells],
            fired: vec![false; cells],
            hits: 0,
        }
    }

    pub fn ship_cells(&self) -> usize {
        self.ships.iter().sum()
    }

    pub fn hit_reward(&self) -> f64 {
        1.0 / self.ship_cells() as f64
    }

    pub fn miss_reward(&self) -> f64 {
        let s = self.ship_cells() as f64;
        let g = (self.size * self.size) as f64;
        -(s + 1.0) / (s * (g - s))
    }

    pub fn is_ship(&self, cell: usize) -> bool {
        self.ship[cell]
    }

    pub fn fired(&self) -> &[bool] {
        &self.fired
    }

    fn place_ships(&mut self, rng: &mut ChaCha8Rng) {
        let n = self.size;
        self.ship = vec![false; n * n];
        for &len in &self.ships {
            loop {
                let horizontal = rng.random::<bool>();
                let (r, c) = if horizontal {
                    (rng.random_range(0..n), rng.random_range(0..=n - len))
                } else {
                    (rng.random_range(0..=n - len), rng.random_range(0..n))
                };
                let cells: Vec<usize> = (0..len)
                    .map(|i| if horizontal { r * n + c + i } else { (r + i) * n + c })
                    .collect();
                if cells.iter().all(|&i| !self.ship[i]) {
                    cells.into_iter().for_each(|i| self.ship[i] = true);
                    break;
                }
            }
        }
    }
}

impl Environment for Battleship {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.place_ships(&mut rng);
        self.fired = vec![false; self.size * self.size];
        self.hits = 0;
        self.clock.reset();
        Observation::discrete(vec![SIGNAL_NONE])
    }

    fn step(&mut self, action: usize) -> StepResult {
        self.clock.begin_step(&self.spec, action);
        let repeat = self.fired[action];
        self.fired[action] = true;
        let (reward, signal) = if !repeat && self.ship[action] {
            self.hits += 1;
            (self.hit_reward(), SIGNAL_HIT)
        } else {
            (self.miss_reward(), SIGNAL_MISS)
        };
        let sunk = self.hits == self.ship_cells();
        let done = self.clock.finish(&self.spec, sunk);
        StepResult {
            observation: Observation::discrete(vec![signal]),
            reward,
            done,
        }
    }

    /// A uniformly drawn cell that has not been fired at yet.
    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize {
        let open: Vec<usize> = (0..self.fired.len()).filter(|&i| !self.fired[i]).collect();
        if open.is_empty() {
            return uniform_action(self.spec.action_cardinality, rng);
        }
        open[rng.random_range(0..open.len())]
    }

    fn is_done(&self) -> bool {
        self.clock.done
    }
}
