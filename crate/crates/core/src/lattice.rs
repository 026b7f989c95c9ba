//! Toroidal lattice, public goods payoffs and the global cooperation signal.
//!
//! Cells are stored row-major. Row 0 is the top of the lattice, so the
//! "upper half" of a grid is rows `0..L/2`. Each agent plays in five
//! overlapping groups of five: the one centered on itself and the four
//! centered on its von Neumann neighbors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of members in every public goods group.
pub const GROUP_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Strategy {
    Defect = 0,
    Cooperate = 1,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Defect, Strategy::Cooperate];

    #[inline]
    pub fn is_cooperator(self) -> bool {
        self == Strategy::Cooperate
    }

    #[inline]
    pub fn as_index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_bool(cooperate: bool) -> Self {
        if cooperate {
            Strategy::Cooperate
        } else {
            Strategy::Defect
        }
    }
}

/// A lattice position. Out-of-range values are reduced modulo the side length
/// wherever a grid is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Coord { row, col }
    }
}

impl From<(usize, usize)> for Coord {
    fn from((row, col): (usize, usize)) -> Self {
        Coord { row, col }
    }
}

/// How the lattice is populated at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Rows `0..L/2` defect, the remaining rows cooperate.
    HalfHalf,
    /// Each cell cooperates independently with probability `p`.
    Bernoulli(f64),
    AllDefect,
    AllCoop,
}

impl InitMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitMode::Bernoulli(p) if !(0.0..=1.0).contains(&p) => Err(Error::config(
                "init_mode",
                format!("bernoulli probability must lie in [0, 1], got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

/// The binary strategy of every agent on an `L x L` torus.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StrategyGrid {
    side: usize,
    cells: Vec<Strategy>,
}

impl StrategyGrid {
    pub fn new(side: usize, cells: Vec<Strategy>) -> Result<Self> {
        if side == 0 {
            return Err(Error::config("L", "side length must be positive"));
        }
        if cells.len() != side * side {
            return Err(Error::InconsistentInput(format!(
                "{} cells given for a {side}x{side} grid",
                cells.len()
            )));
        }
        Ok(StrategyGrid { side, cells })
    }

    pub fn filled(side: usize, strategy: Strategy) -> Self {
        assert!(side > 0, "side length must be positive");
        StrategyGrid {
            side,
            cells: vec![strategy; side * side],
        }
    }

    /// Builds a grid from rows of 0/1 values.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let side = rows.len();
        let mut cells = Vec::with_capacity(side * side);
        for row in rows {
            if row.len() != side {
                return Err(Error::InconsistentInput("grid rows must form a square".into()));
            }
            for &v in row.iter() {
                cells.push(match v {
                    0 => Strategy::Defect,
                    1 => Strategy::Cooperate,
                    other => {
                        return Err(Error::InconsistentInput(format!(
                            "strategy must be 0 or 1, got {other}"
                        )))
                    }
                });
            }
        }
        StrategyGrid::new(side, cells)
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn cells(&self) -> &[Strategy] {
        &self.cells
    }

    /// Flat row-major index of a (possibly out-of-range) coordinate.
    #[inline]
    pub fn index_of(&self, c: Coord) -> usize {
        (c.row % self.side) * self.side + (c.col % self.side)
    }

    #[inline]
    pub fn coord_of(&self, index: usize) -> Coord {
        Coord::new(index / self.side, index % self.side)
    }

    #[inline]
    pub fn get(&self, c: Coord) -> Strategy {
        self.cells[self.index_of(c)]
    }

    #[inline]
    pub fn at(&self, index: usize) -> Strategy {
        self.cells[index]
    }

    pub fn set(&mut self, c: Coord, s: Strategy) {
        let i = self.index_of(c);
        self.cells[i] = s;
    }

    pub fn cooperator_count(&self) -> usize {
        self.cells.iter().filter(|s| s.is_cooperator()).count()
    }

    /// Toroidal translation: the cell at `(r, c)` moves to `(r + dr, c + dc)`.
    pub fn shifted(&self, dr: usize, dc: usize) -> Self {
        let l = self.side;
        let mut cells = vec![Strategy::Defect; l * l];
        for (i, &s) in self.cells.iter().enumerate() {
            let c = self.coord_of(i);
            cells[((c.row + dr) % l) * l + (c.col + dc) % l] = s;
        }
        StrategyGrid { side: l, cells }
    }
}

pub fn init_lattice<R: Rng + ?Sized>(side: usize, mode: InitMode, rng: &mut R) -> Result<StrategyGrid> {
    if side < 2 {
        return Err(Error::config(
            "L",
            format!("side length must be at least 2, got {side}"),
        ));
    }
    mode.validate()?;
    let n = side * side;
    let cells = match mode {
        InitMode::AllDefect => vec![Strategy::Defect; n],
        InitMode::AllCoop => vec![Strategy::Cooperate; n],
        InitMode::HalfHalf => {
            let boundary = (side / 2) * side;
            (0..n).map(|i| Strategy::from_bool(i >= boundary)).collect()
        }
        InitMode::Bernoulli(p) => (0..n).map(|_| Strategy::from_bool(rng.random_bool(p))).collect(),
    };
    StrategyGrid::new(side, cells)
}

/// The four von Neumann neighbors in the fixed order (N, S, W, E).
#[inline]
pub fn von_neumann_neighbors(c: Coord, side: usize) -> [Coord; 4] {
    let (r, k) = (c.row % side, c.col % side);
    let up = (r + side - 1) % side;
    let down = (r + 1) % side;
    let left = (k + side - 1) % side;
    let right = (k + 1) % side;
    [
        Coord::new(up, k),
        Coord::new(down, k),
        Coord::new(r, left),
        Coord::new(r, right),
    ]
}

/// Cooperators in the group centered on `center` (center plus its four neighbors).
pub fn group_cooperator_count(grid: &StrategyGrid, center: Coord) -> usize {
    let own = grid.get(center) as usize;
    own + von_neumann_neighbors(center, grid.side())
        .iter()
        .map(|&n| grid.get(n) as usize)
        .sum::<usize>()
}

/// Payoff from a single group with `cooperators` cooperators.
pub fn group_payoff(s: Strategy, cooperators: usize, r: f64) -> Result<f64> {
    if cooperators > GROUP_SIZE {
        return Err(Error::InconsistentInput(format!(
            "a group of {GROUP_SIZE} cannot hold {cooperators} cooperators"
        )));
    }
    let share = r / GROUP_SIZE as f64 * cooperators as f64;
    match s {
        Strategy::Cooperate if cooperators == 0 => Err(Error::InconsistentInput(
            "a cooperator's group has at least one cooperator".into(),
        )),
        Strategy::Cooperate => Ok(share - 1.0),
        Strategy::Defect => Ok(share),
    }
}

/// Sum of `N_C` over the five groups containing `idx`.
pub fn group_count_sum(grid: &StrategyGrid, idx: Coord) -> usize {
    group_cooperator_count(grid, idx)
        + von_neumann_neighbors(idx, grid.side())
            .iter()
            .map(|&n| group_cooperator_count(grid, n))
            .sum::<usize>()
}

#[inline]
fn payoff_from_sum(s: Strategy, count_sum: usize, r: f64) -> f64 {
    let share = r / GROUP_SIZE as f64 * count_sum as f64;
    if s.is_cooperator() {
        share - GROUP_SIZE as f64
    } else {
        share
    }
}

/// Payoff of the agent at `idx` accumulated over its five groups.
pub fn total_payoff(grid: &StrategyGrid, idx: Coord, r: f64) -> f64 {
    payoff_from_sum(grid.get(idx), group_count_sum(grid, idx), r)
}

/// Payoff the agent at `idx` would receive if it alone played `s`, every
/// other cell held at its current value.
pub fn counterfactual_payoff(grid: &StrategyGrid, idx: Coord, s: Strategy, r: f64) -> f64 {
    let m = self_multiplicity(idx, grid.side());
    let others = group_count_sum(grid, idx) - m * grid.get(idx) as usize;
    payoff_from_sum(s, others + m * s as usize, r)
}

/// Times `idx` appears across its five groups: 5 for `L >= 3`, more on the
/// 2 x 2 torus where a neighbor's N and S (or W and E) coincide.
fn self_multiplicity(idx: Coord, side: usize) -> usize {
    if side >= 3 {
        return GROUP_SIZE;
    }
    let centers = std::iter::once(idx).chain(von_neumann_neighbors(idx, side));
    centers
        .map(|c| {
            std::iter::once(c)
                .chain(von_neumann_neighbors(c, side))
                .filter(|&m| m == idx)
                .count()
        })
        .sum()
}

/// Payoffs for every cell of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffField {
    side: usize,
    values: Vec<f64>,
    r: f64,
}

impl PayoffField {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn get(&self, c: Coord) -> f64 {
        self.values[(c.row % self.side) * self.side + c.col % self.side]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }
}

/// Group counts for every center, then a five-point stencil sum per cell.
pub fn payoff_field(grid: &StrategyGrid, r: f64) -> PayoffField {
    let l = grid.side();
    let counts: Vec<usize> = (0..grid.len())
        .map(|i| group_cooperator_count(grid, grid.coord_of(i)))
        .collect();
    let values = (0..grid.len())
        .map(|i| {
            let c = grid.coord_of(i);
            let sum = counts[i]
                + von_neumann_neighbors(c, l)
                    .iter()
                    .map(|&n| counts[grid.index_of(n)])
                    .sum::<usize>();
            payoff_from_sum(grid.at(i), sum, r)
        })
        .collect();
    PayoffField { side: l, values, r }
}

pub fn global_coop_rate(grid: &StrategyGrid) -> f64 {
    grid.cooperator_count() as f64 / grid.len() as f64
}

/// Global cooperation rate `g` together with the constraint strength `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalSignal {
    pub coop_rate: f64,
    pub rho: f64,
}

impl GlobalSignal {
    pub fn new(coop_rate: f64, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&coop_rate) {
            return Err(Error::InconsistentInput(format!(
                "cooperation rate must lie in [0, 1], got {coop_rate}"
            )));
        }
        if rho.is_nan() || rho < 0.0 {
            return Err(Error::config("rho", format!("must be non-negative, got {rho}")));
        }
        Ok(GlobalSignal { coop_rate, rho })
    }

    pub fn of(grid: &StrategyGrid, rho: f64) -> Result<Self> {
        GlobalSignal::new(global_coop_rate(grid), rho)
    }

    /// `1 + rho * g * (1 - g)`, peaking at `g = 0.5` and equal to 1 at the extremes.
    #[inline]
    pub fn cooperator_factor(&self) -> f64 {
        1.0 + self.rho * self.coop_rate * (1.0 - self.coop_rate)
    }
}

/// Scales a cooperator's payoff by the global cooperation factor. Defector
/// payoffs pass through untouched.
#[inline]
pub fn gcc_adjust(payoff: f64, s: Strategy, signal: &GlobalSignal) -> f64 {
    match s {
        Strategy::Cooperate => payoff * signal.cooperator_factor(),
        Strategy::Defect => payoff,
    }
}

/// 5-bit code of a neighborhood: bit 4 is the agent itself, bits 3..0 are
/// its N, S, W, E neighbors.
#[inline]
pub fn neighborhood_code(grid: &StrategyGrid, idx: Coord) -> u8 {
    let [n, s, w, e] = von_neumann_neighbors(idx, grid.side());
    ((grid.get(idx) as u8) << 4)
        | ((grid.get(n) as u8) << 3)
        | ((grid.get(s) as u8) << 2)
        | ((grid.get(w) as u8) << 1)
        | (grid.get(e) as u8)
}
