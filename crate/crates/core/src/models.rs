//! Target distributions used by the experiments: a toroidal Ising model, a
//! truncated bivariate normal, and a banana-shaped density.

use rand::Rng;
use rayon::prelude::*;

use crate::continuous::TruncatedNormal;
use crate::discrete_general::{forward, BinaryIndependence, GeneralExtState, Target};
use crate::error::{Error, Result};

/// Ising model on an `rows x cols` torus.
#[derive(Clone, Debug)]
pub struct IsingModel {
    rows: usize,
    cols: usize,
    beta: f64,
    neighbors: Vec<[usize; 4]>,
}

/// Spin configuration stored row-major, entries `-1` or `+1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IsingState {
    rows: usize,
    cols: usize,
    spins: Vec<i8>,
}

impl IsingState {
    pub fn new(rows: usize, cols: usize, spins: Vec<i8>) -> Result<Self> {
        if spins.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: spins.len() });
        }
        if let Some(v) = spins.iter().find(|v| v.abs() != 1) {
            return Err(Error::InvalidConfig(format!("spin value {v}")));
        }
        Ok(Self { rows, cols, spins })
    }

    pub fn uniform(rows: usize, cols: usize, spin: i8) -> Result<Self> {
        Self::new(rows, cols, vec![spin; rows * cols])
    }

    /// Independent spins, each `+1` with probability one half.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let spins = (0..rows * cols).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self { rows, cols, spins }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.spins[row * self.cols + col]
    }

    pub fn set_site(&mut self, site: usize, spin: i8) {
        self.spins[site] = spin;
    }

    pub fn site(&self, site: usize) -> i8 {
        self.spins[site]
    }

    /// Sum of spins.
    pub fn magnetization(&self) -> i64 {
        self.spins.iter().map(|&s| s as i64).sum()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl IsingModel {
    pub fn new(rows: usize, cols: usize, beta: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("Ising lattice needs at least one row and column".into()));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta {beta} must be positive")));
        }
        let neighbors = (0..rows * cols)
            .map(|site| {
                let (i, j) = (site / cols, site % cols);
                [
                    ((i + rows - 1) % rows) * cols + j,
                    ((i + 1) % rows) * cols + j,
                    i * cols + (j + cols - 1) % cols,
                    i * cols + (j + 1) % cols,
                ]
            })
            .collect();
        Ok(Self { rows, cols, beta, neighbors })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_sites(&self) -> usize {
        self.rows * self.cols
    }

    /// Up, down, left and right neighbours of `site`.
    pub fn neighbors(&self, site: usize) -> [usize; 4] {
        self.neighbors[site]
    }

    fn check(&self, state: &IsingState) -> Result<()> {
        if state.dims() != (self.rows, self.cols) {
            return Err(Error::DimensionMismatch { expected: self.num_sites(), got: state.spins.len() });
        }
        Ok(())
    }

    /// `E = -sum x_a x_b` over the `2 rows cols` edges of the torus.
    pub fn energy(&self, state: &IsingState) -> Result<i64> {
        self.check(state)?;
        Ok(-(0..self.num_sites())
            .map(|site| {
                let [_, down, _, right] = self.neighbors[site];
                state.spins[site] as i64 * (state.spins[down] as i64 + state.spins[right] as i64)
            })
            .sum::<i64>())
    }

    pub fn neighbor_sum(&self, state: &IsingState, site: usize) -> i32 {
        self.neighbors[site].iter().map(|&b| state.spins[b] as i32).sum()
    }

    /// `P(+1 | rest) = 1 / (1 + exp(-2 beta sum))`.
    pub fn conditional_from_sum(&self, neighbor_sum: i32) -> f64 {
        1.0 / (1.0 + (-2.0 * self.beta * neighbor_sum as f64).exp())
    }

    pub fn conditional(&self, state: &IsingState, site: usize) -> f64 {
        self.conditional_from_sum(self.neighbor_sum(state, site))
    }
}

/// How a set of chains consumes its uniforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    /// Standard Gibbs, one uniform stream per chain.
    StandardMulti,
    /// Standard Gibbs, every chain using the same uniforms.
    CoupledStandard,
    /// Permutation updates, every chain using the same `s` values.
    Permutation,
}

/// One Ising chain with the extra coordinates used by permutation updates.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingChain {
    pub spins: IsingState,
    pub u: f64,
    pub r: f64,
}

/// Standard inversion: `-1` if `uniform < P(-1)`, else `+1`.
pub fn ising_standard_update(model: &IsingModel, spins: &mut IsingState, site: usize, uniform: f64) {
    let p = model.conditional(spins, site);
    spins.spins[site] = if uniform < 1.0 - p { -1 } else { 1 };
}

/// Permutation update of one spin. The spin is the two-state map `-1 -> 0`,
/// `+1 -> 1` of an independence kernel with `T(., 1) = P(+1 | rest)`.
pub fn ising_permutation_update(model: &IsingModel, chain: &mut IsingChain, site: usize, s: f64) -> Result<()> {
    let kernel = BinaryIndependence { p_one: model.conditional(&chain.spins, site) };
    let x = usize::from(chain.spins.spins[site] > 0);
    let out = forward(&kernel, &GeneralExtState::new(x, chain.r, chain.u), s)?;
    chain.spins.spins[site] = if out.x == 1 { 1 } else { -1 };
    chain.r = out.r;
    chain.u = out.u;
    Ok(())
}

/// One row-major sweep over every site of every chain.
///
/// `uniforms` holds one slice per chain in [`SweepMode::StandardMulti`] and
/// a single shared slice otherwise; each slice needs one value per site.
pub fn ising_sweep(model: &IsingModel, chains: &mut [IsingChain], uniforms: &[&[f64]], mode: SweepMode) -> Result<()> {
    let n = model.num_sites();
    let expected = if mode == SweepMode::StandardMulti { chains.len() } else { 1 };
    if uniforms.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: uniforms.len() });
    }
    if let Some(short) = uniforms.iter().find(|u| u.len() < n) {
        return Err(Error::DrivingExhausted { needed: n, available: short.len() });
    }
    for c in chains.iter() {
        model.check(&c.spins)?;
    }
    chains.par_iter_mut().enumerate().try_for_each(|(k, chain)| {
        let values = if mode == SweepMode::StandardMulti { uniforms[k] } else { uniforms[0] };
        for (site, &v) in values[..n].iter().enumerate() {
            match mode {
                SweepMode::Permutation => ising_permutation_update(model, chain, site, v)?,
                _ => ising_standard_update(model, &mut chain.spins, site, v),
            }
        }
        Ok(())
    })
}

/// Bivariate normal with unit variances and correlation `rho`, truncated to
/// a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncNormModel {
    rho: f64,
    supports: [(f64, f64); 2],
}

impl Default for TruncNormModel {
    fn default() -> Self {
        Self { rho: 0.95, supports: [(-1.0, 2.5), (-1.5, 2.0)] }
    }
}

impl TruncNormModel {
    pub fn new(rho: f64, supports: [(f64, f64); 2]) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!("correlation {rho}")));
        }
        if supports.iter().any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidConfig("empty support interval".into()));
        }
        Ok(Self { rho, supports })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn support(&self, axis: usize) -> (f64, f64) {
        self.supports[axis]
    }

    pub fn in_support(&self, x: &[f64; 2]) -> bool {
        x.iter().zip(&self.supports).all(|(v, (a, b))| v > a && v < b)
    }

    /// Law of coordinate `axis` given the other coordinate.
    pub fn conditional(&self, axis: usize, other: f64) -> Result<TruncatedNormal> {
        let (lo, hi) = self.supports[axis];
        TruncatedNormal::new(self.rho * other, (1.0 - self.rho * self.rho).sqrt(), lo, hi)
    }

    /// Unnormalized log density; `-inf` outside the box.
    pub fn log_density(&self, x: &[f64; 2]) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        -(x[0] * x[0] - 2.0 * self.rho * x[0] * x[1] + x[1] * x[1]) / (2.0 * (1.0 - self.rho * self.rho))
    }

    /// Uniform draw from the support box.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        self.supports.map(|(a, b)| a + (b - a) * rng.random::<f64>())
    }
}

impl Target<[f64; 2]> for TruncNormModel {
    fn log_density(&self, x: &[f64; 2]) -> f64 {
        TruncNormModel::log_density(self, x)
    }
}

/// `x1 ~ N(0, 1)`, `x2 | x1 ~ N(x1^2 - 1, 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Banana;

impl Banana {
    /// Log density, normalized.
    pub fn log_density(&self, x: &[f64; 2]) -> f64 {
        let d = x[1] - (x[0] * x[0] - 1.0);
        -0.5 * x[0] * x[0] - 0.5 * d * d - (2.0 * std::f64::consts::PI).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z: [f64; 2] = [rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)];
        [z[0], z[0] * z[0] - 1.0 + z[1]]
    }
}

impl Target<[f64; 2]> for Banana {
    fn log_density(&self, x: &[f64; 2]) -> f64 {
        Banana::log_density(self, x)
    }
}
