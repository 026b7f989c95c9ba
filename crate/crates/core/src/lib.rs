//! Spatial public goods games on a toroidal lattice.
//!
//! Agents sit on an `L x L` torus and each takes part in five overlapping
//! groups: its own von Neumann neighborhood and those of its four
//! neighbors. Strategies evolve under one of four dynamics:
//!
//! - [`grpo`]: a shared policy network trained with a group-relative
//!   clipped surrogate, optionally with a global cooperation constraint
//!   that rewards cooperators when the population is mixed;
//! - [`baselines`]: per-agent tabular Q-learning and Fermi imitation.
//!
//! [`experiment`] ties configuration, runs, sweeps and replicates together;
//! [`metrics`] owns the on-disk formats.
//!
//! ```
//! use spgg::lattice::{payoff_field, StrategyGrid, Strategy};
//!
//! let grid = StrategyGrid::filled(4, Strategy::Cooperate);
//! let field = payoff_field(&grid, 4.0);
//! assert_eq!(field.values()[0], 15.0);
//! ```

pub mod baselines;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod grpo;
pub mod lattice;
pub mod metrics;
pub mod policy;
pub mod seed;

pub use error::{Error, Result};
pub use experiment::{parse_config, run_replicates, run_single, run_sweep, Algorithm, ExperimentConfig, SweepSpec};
pub use lattice::{Coord, InitMode, Strategy, StrategyGrid};
