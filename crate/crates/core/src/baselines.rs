//! Comparison dynamics: independent tabular Q-learners and Fermi imitation.
//!
//! Both update synchronously. Every agent decides against the same
//! committed grid and the decisions form the next grid together.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{neighborhood_code, payoff_field, von_neumann_neighbors, Coord, Strategy, StrategyGrid};
use crate::seed::{self, tag};

pub const Q_STATES: usize = 32;

/// Bit 4 = self, bits 3..0 = N, S, W, E.
pub fn q_state_index(grid: &StrategyGrid, idx: Coord) -> usize {
    neighborhood_code(grid, idx) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.02,
        }
    }
}

/// One agent's action values, `values[state][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: [[f64; 2]; Q_STATES],
}

impl Default for QTable {
    fn default() -> Self {
        QTable {
            values: [[0.0; 2]; Q_STATES],
        }
    }
}

impl QTable {
    /// Epsilon-greedy choice; ties between equal values are broken uniformly.
    pub fn choose<R: Rng + ?Sized>(&self, state: usize, epsilon: f64, rng: &mut R) -> Strategy {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Strategy::from_bool(rng.random::<bool>());
        }
        let [d, c] = self.values[state];
        if c > d {
            Strategy::Cooperate
        } else if d > c {
            Strategy::Defect
        } else {
            Strategy::from_bool(rng.random::<bool>())
        }
    }

    /// `Q(s,a) += alpha (reward + gamma max Q(s',.) - Q(s,a))`.
    pub fn update(&mut self, state: usize, action: Strategy, reward: f64, next_state: usize, config: &QConfig) {
        let target = reward + config.gamma * self.values[next_state][0].max(self.values[next_state][1]);
        let q = &mut self.values[state][action.as_index()];
        *q += config.alpha * (target - *q);
    }
}

/// Independent per-agent Q-learners.
#[derive(Debug, Clone)]
pub struct QLearning {
    pub tables: Vec<QTable>,
    pub config: QConfig,
    pub r: f64,
    pub seed: u64,
}

impl QLearning {
    pub fn new(agents: usize, config: QConfig, r: f64, seed: u64) -> Self {
        QLearning {
            tables: vec![QTable::default(); agents],
            config,
            r,
            seed,
        }
    }

    /// One synchronous round: choose, form the next grid, reward with the
    /// payoff on that grid, update each table.
    pub fn q_epoch(&mut self, grid: &StrategyGrid, epoch: usize) -> Result<StrategyGrid> {
        if self.tables.len() != grid.len() {
            return Err(Error::Invariant(format!(
                "{} Q-tables for {} agents",
                self.tables.len(),
                grid.len()
            )));
        }
        let eps = self.config.epsilon;
        let states: Vec<usize> = (0..grid.len()).map(|i| q_state_index(grid, grid.coord_of(i))).collect();
        let actions: Vec<Strategy> = self
            .tables
            .par_iter()
            .enumerate()
            .with_min_len(256)
            .map(|(agent, table)| {
                let mut rng = seed::stream(self.seed, &[tag::Q_ACTION, epoch as u64, agent as u64]);
                table.choose(states[agent], eps, &mut rng)
            })
            .collect();
        let next = StrategyGrid::new(grid.side(), actions)?;
        let rewards = payoff_field(&next, self.r);
        let config = self.config;
        self.tables
            .par_iter_mut()
            .enumerate()
            .with_min_len(256)
            .for_each(|(agent, table)| {
                let c = next.coord_of(agent);
                let s_next = q_state_index(&next, c);
                table.update(states[agent], next.at(agent), rewards.values()[agent], s_next, &config);
            });
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FermiConfig {
    /// Selection noise `K`.
    pub k: f64,
}

impl Default for FermiConfig {
    fn default() -> Self {
        FermiConfig { k: 0.5 }
    }
}

/// Probability of adopting a neighbor's strategy:
/// `1 / (1 + exp((payoff_self - payoff_neighbor) / K))`.
pub fn fermi_adopt_prob(payoff_self: f64, payoff_neighbor: f64, k: f64) -> f64 {
    1.0 / (1.0 + ((payoff_self - payoff_neighbor) / k).exp())
}

/// One synchronous imitation round against the pre-update payoff field.
pub fn fermi_epoch(grid: &StrategyGrid, r: f64, config: &FermiConfig, seed: u64, epoch: usize) -> Result<StrategyGrid> {
    if config.k.is_nan() || config.k <= 0.0 {
        return Err(Error::config("fermi_k", format!("must be positive, got {}", config.k)));
    }
    let field = payoff_field(grid, r);
    let values = field.values();
    let cells = (0..grid.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|agent| {
            let mut rng = seed::stream(seed, &[tag::FERMI, epoch as u64, agent as u64]);
            let c = grid.coord_of(agent);
            let neighbor = grid.index_of(von_neumann_neighbors(c, grid.side())[rng.random_range(0..4)]);
            let own = grid.at(agent);
            let theirs = grid.at(neighbor);
            if own == theirs {
                return own;
            }
            let p = fermi_adopt_prob(values[agent], values[neighbor], config.k);
            if rng.random::<f64>() < p {
                theirs
            } else {
                own
            }
        })
        .collect();
    StrategyGrid::new(grid.side(), cells)
}

/// Size of the largest 4-connected (toroidal) component of one strategy.
pub fn largest_cluster(grid: &StrategyGrid, strategy: Strategy) -> usize {
    let mut seen = vec![false; grid.len()];
    let mut best = 0;
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if seen[start] || grid.at(start) != strategy {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for n in von_neumann_neighbors(grid.coord_of(i), grid.side()) {
                let j = grid.index_of(n);
                if !seen[j] && grid.at(j) == strategy {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        best = best.max(size);
    }
    best
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lattice::Strategy;
    use crate::lattice::{init_lattice, InitMode};

    #[test]
    fn state_index_layout() {
        let c = Coord::new(1, 1);
        assert_eq!(q_state_index(&StrategyGrid::filled(3, Strategy::Cooperate), c), 31);
        assert_eq!(q_state_index(&StrategyGrid::filled(3, Strategy::Defect), c), 0);
        let mut g = StrategyGrid::filled(3, Strategy::Defect);
        g.set(c, Strategy::Cooperate);
        assert_eq!(q_state_index(&g, c), 16);
    }

    #[test]
    fn one_bellman_step() {
        let mut t = QTable::default();
        t.update(3, Strategy::Cooperate, 2.0, 7, &QConfig::default());
        assert_relative_eq!(t.values[3][1], 0.2);
        assert_eq!(t.values[3][0], 0.0);
    }

    #[test]
    fn greedy_choice_follows_dominant_entry() {
        let mut t = QTable::default();
        t.values[5] = [0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert_eq!(t.choose(5, 0.0, &mut rng), Strategy::Cooperate);
        }
    }

    #[test]
    fn ties_are_broken_both_ways() {
        let t = QTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coop = (0..1000).filter(|_| t.choose(0, 0.0, &mut rng).is_cooperator()).count();
        assert!((400..=600).contains(&coop), "{coop}");
    }

    #[test]
    fn cooperative_tables_cooperate_in_one_epoch() {
        let grid = init_lattice(10, InitMode::Bernoulli(0.3), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let config = QConfig {
            epsilon: 0.0,
            ..QConfig::default()
        };
        let mut q = QLearning::new(grid.len(), config, 4.0, 7);
        for t in &mut q.tables {
            t.values = [[0.0, 1.0]; Q_STATES];
        }
        let next = q.q_epoch(&grid, 0).unwrap();
        assert_eq!(next.cooperator_count(), next.len());
    }

    #[test]
    fn q_learning_is_deterministic() {
        let grid = init_lattice(12, InitMode::HalfHalf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let run = || {
            let mut q = QLearning::new(grid.len(), QConfig::default(), 4.0, 3);
            let mut g = grid.clone();
            for e in 0..20 {
                g = q.q_epoch(&g, e).unwrap();
            }
            (g, q.tables)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fermi_examples() {
        assert_eq!(fermi_adopt_prob(3.0, 3.0, 0.5), 0.5);
        assert_relative_eq!(fermi_adopt_prob(1.0, 0.5, 0.5), 0.268941, epsilon = 5e-7);
        assert!(fermi_adopt_prob(0.0, 20.0, 0.5) >= 1.0 - 1e-17);
        assert_eq!(fermi_adopt_prob(1e6, 0.0, 0.5), 0.0);
    }

    #[test]
    fn uniform_grids_are_absorbing() {
        for s in Strategy::ALL {
            let g = StrategyGrid::filled(9, s);
            for e in 0..5 {
                assert_eq!(fermi_epoch(&g, 4.0, &FermiConfig::default(), 1, e).unwrap(), g);
            }
        }
    }

    #[test]
    fn fermi_rejects_non_positive_noise() {
        let g = StrategyGrid::filled(4, Strategy::Defect);
        assert!(fermi_epoch(&g, 4.0, &FermiConfig { k: 0.0 }, 1, 0).is_err());
    }

    #[test]
    fn cluster_sizes() {
        let g = StrategyGrid::from_rows(&[&[1, 1, 0, 0], &[0, 1, 0, 0], &[0, 0, 0, 0], &[1, 0, 0, 0]]).unwrap();
        // (3,0) wraps onto (0,0).
        assert_eq!(largest_cluster(&g, Strategy::Cooperate), 4);
        assert_eq!(largest_cluster(&g, Strategy::Defect), 12);
    }

    proptest! {
        #[test]
        fn fermi_probabilities_are_complementary(a in -100.0f64..100.0, b in -100.0f64..100.0, k in 0.05f64..5.0) {
            prop_assert!((fermi_adopt_prob(a, b, k) + fermi_adopt_prob(b, a, k) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn fermi_probability_decreases_with_own_advantage(d1 in -5.0f64..5.0, step in 0.01f64..5.0, k in 0.1f64..2.0) {
            prop_assert!(fermi_adopt_prob(d1 + step, 0.0, k) < fermi_adopt_prob(d1, 0.0, k));
        }
    }
}
