//! Importance sampling improved by a fixed sequence of permutation maps.
//!
//! A point is drawn from a base distribution, placed at a random index `k`
//! of an `M`-step map, and pushed forward to index `M`. Running the map
//! backwards from index `k` recovers every start state that could have led
//! to the same final state, which gives its exact mixture density.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::continuous::{metropolis_forward, metropolis_inverse, ContExtState, VectorWalk};
use crate::discrete_general::{forward, inverse, DiscreteKernel, DiscreteTarget, GeneralExtState, Target};
use crate::error::{Error, Result};
use crate::stream::{derive_seed, Offsets};

/// A fixed sequence of `steps()` invertible maps on an extended state.
pub trait ExtendedMap: Sync {
    type State: Clone + Send;
    type Point;

    fn steps(&self) -> usize;
    /// Applies map `step` (0-based).
    fn forward(&self, step: usize, st: &Self::State) -> Result<Self::State>;
    /// Undoes map `step`.
    fn inverse(&self, step: usize, st: &Self::State) -> Result<Self::State>;
    /// Completes a point with uniformly drawn auxiliary coordinates.
    fn extend<R: Rng + ?Sized>(&self, x: Self::Point, rng: &mut R) -> Self::State;
    fn point<'a>(&self, st: &'a Self::State) -> &'a Self::Point;
    /// `log pi(x)`, with the same scaling as the slice coordinate.
    fn log_target(&self, st: &Self::State) -> f64;
}

/// Random-walk Metropolis on `R^D` with fixed offsets and shifts.
pub struct WalkMap<'a, T, const D: usize> {
    target: &'a T,
    s: &'a [f64],
    delta: &'a Offsets,
}

impl<'a, T: Target<[f64; D]>, const D: usize> WalkMap<'a, T, D> {
    pub fn new(target: &'a T, s: &'a [f64], delta: &'a Offsets) -> Result<Self> {
        if delta.dim() != D {
            return Err(Error::DimensionMismatch { expected: D, got: delta.dim() });
        }
        if delta.len() < s.len() {
            return Err(Error::DrivingExhausted { needed: s.len(), available: delta.len() });
        }
        Ok(Self { target, s, delta })
    }

    fn walk(&self, step: usize) -> VectorWalk<D> {
        let mut delta = [0.0; D];
        delta.copy_from_slice(self.delta.get(step));
        VectorWalk { delta }
    }
}

impl<T: Target<[f64; D]> + Sync, const D: usize> ExtendedMap for WalkMap<'_, T, D> {
    type State = ContExtState<[f64; D]>;
    type Point = [f64; D];

    fn steps(&self) -> usize {
        self.s.len()
    }

    fn forward(&self, step: usize, st: &Self::State) -> Result<Self::State> {
        metropolis_forward(self.target, &self.walk(step), st, self.s[step])
    }

    fn inverse(&self, step: usize, st: &Self::State) -> Result<Self::State> {
        metropolis_inverse(self.target, &self.walk(step), st, self.s[step])
    }

    fn extend<R: Rng + ?Sized>(&self, x: [f64; D], rng: &mut R) -> Self::State {
        ContExtState::new(x, rng.random(), rng.random(), rng.random())
    }

    fn point<'a>(&self, st: &'a Self::State) -> &'a [f64; D] {
        &st.x
    }

    fn log_target(&self, st: &Self::State) -> f64 {
        self.target.log_density(&st.x)
    }
}

/// The limiting map of a discrete kernel with fixed shifts.
pub struct KernelMap<'a, K> {
    kernel: &'a K,
    target: &'a DiscreteTarget,
    s: &'a [f64],
}

impl<'a, K: DiscreteKernel> KernelMap<'a, K> {
    pub fn new(kernel: &'a K, target: &'a DiscreteTarget, s: &'a [f64]) -> Result<Self> {
        if kernel.num_states() != target.num_states() {
            return Err(Error::DimensionMismatch { expected: target.num_states(), got: kernel.num_states() });
        }
        Ok(Self { kernel, target, s })
    }
}

impl<K: DiscreteKernel + Sync> ExtendedMap for KernelMap<'_, K> {
    type State = GeneralExtState;
    type Point = usize;

    fn steps(&self) -> usize {
        self.s.len()
    }

    fn forward(&self, step: usize, st: &GeneralExtState) -> Result<GeneralExtState> {
        forward(self.kernel, st, self.s[step])
    }

    fn inverse(&self, step: usize, st: &GeneralExtState) -> Result<GeneralExtState> {
        inverse(self.kernel, st, self.s[step])
    }

    fn extend<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> GeneralExtState {
        GeneralExtState::new(x, rng.random(), rng.random())
    }

    fn point<'a>(&self, st: &'a GeneralExtState) -> &'a usize {
        &st.x
    }

    fn log_target(&self, st: &GeneralExtState) -> f64 {
        self.target.log_density(&st.x)
    }
}

/// A distribution that can be sampled and whose density can be evaluated.
pub trait BaseDistribution<X>: Sync {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> X;
    fn log_density(&self, x: &X) -> f64;
}

/// Independent normal coordinates with a common standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalBase<const D: usize> {
    pub mean: [f64; D],
    pub sd: f64,
}

impl<const D: usize> NormalBase<D> {
    pub fn new(mean: [f64; D], sd: f64) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig(format!("normal base mean {mean:?} sd {sd}")));
        }
        Ok(Self { mean, sd })
    }
}

impl<const D: usize> BaseDistribution<[f64; D]> for NormalBase<D> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; D] {
        let mut out = self.mean;
        for o in out.iter_mut() {
            *o += self.sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        out
    }

    fn log_density(&self, x: &[f64; D]) -> f64 {
        let q: f64 = x.iter().zip(&self.mean).map(|(v, m)| ((v - m) / self.sd).powi(2)).sum();
        -0.5 * q - D as f64 * (self.sd * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }
}

/// Distribution on `{0, .., M-1}` proportional to the given weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalBase {
    probs: Vec<f64>,
}

impl CategoricalBase {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidConfig("categorical weights must be non-negative with a positive sum".into()));
        }
        Ok(Self { probs: weights.iter().map(|w| w / total).collect() })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl BaseDistribution<usize> for CategoricalBase {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let v: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if v < acc {
                return i;
            }
        }
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    fn log_density(&self, x: &usize) -> f64 {
        self.probs.get(*x).map_or(f64::NEG_INFINITY, |p| p.ln())
    }
}

/// How start indices are assigned to samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Allocation {
    /// Each sample draws `k` uniformly from `{0, .., M}`.
    UniformRandom,
    /// Exactly `N / (M + 1)` samples per `k`.
    Stratified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImportanceConfig {
    pub samples: usize,
    pub allocation: Allocation,
    pub seed: u64,
}

/// One draw with its exact mixture mass.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample<S> {
    pub k: usize,
    /// Extended state indexed by `M`.
    pub state: S,
    /// Extended state indexed by `0`.
    pub initial: S,
    /// `log rho(x_j) - log pi(x_j)` for `j = 0..=M`.
    pub log_ratios: Vec<f64>,
    pub log_rho_ddot: f64,
}

impl<S> WeightedSample<S> {
    pub fn rho_ddot(&self) -> f64 {
        self.log_rho_ddot.exp()
    }

    /// Unnormalized log weight `-log rho_ddot`.
    pub fn log_weight(&self) -> f64 {
        -self.log_rho_ddot
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log( (1/(M+1)) sum_j exp(log_ratios[j]) )`.
pub fn log_rho_ddot(log_ratios: &[f64]) -> f64 {
    log_sum_exp(log_ratios) - (log_ratios.len() as f64).ln()
}

/// Draws one sample started at index `k`.
pub fn draw_sample<M, B, R>(map: &M, base: &B, k: usize, rng: &mut R) -> Result<WeightedSample<M::State>>
where
    M: ExtendedMap,
    B: BaseDistribution<M::Point>,
    R: Rng + ?Sized,
{
    let steps = map.steps();
    if k > steps {
        return Err(Error::OutOfRange(format!("start index {k} beyond {steps} steps")));
    }
    let start = map.extend(base.sample(rng), rng);
    let ratio = |st: &M::State| -> Result<f64> {
        let lp = map.log_target(st);
        if lp == f64::NEG_INFINITY {
            return Err(Error::InvalidSample("target density vanishes on the trajectory".into()));
        }
        Ok(base.log_density(map.point(st)) - lp)
    };
    let mut log_ratios = vec![0.0; steps + 1];
    log_ratios[k] = ratio(&start)?;
    let mut state = start.clone();
    for j in k..steps {
        state = map.forward(j, &state)?;
        log_ratios[j + 1] = ratio(&state)?;
    }
    let mut initial = start;
    for j in (0..k).rev() {
        initial = map.inverse(j, &initial)?;
        log_ratios[j] = ratio(&initial)?;
    }
    let log_rho_ddot = log_rho_ddot(&log_ratios);
    Ok(WeightedSample { k, state, initial, log_ratios, log_rho_ddot })
}

/// Start index of every sample under the chosen allocation.
pub fn allocate(config: &ImportanceConfig, steps: usize) -> Result<Vec<usize>> {
    let groups = steps + 1;
    match config.allocation {
        Allocation::Stratified => {
            if !config.samples.is_multiple_of(groups) {
                return Err(Error::InvalidConfig(format!(
                    "stratified allocation needs the sample count {} to be a multiple of M + 1 = {groups}",
                    config.samples
                )));
            }
            let per = config.samples / groups;
            Ok((0..config.samples).map(|i| i / per).collect())
        }
        Allocation::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
            Ok((0..config.samples).map(|_| rng.random_range(0..groups)).collect())
        }
    }
}

/// Draws `config.samples` points. Each sample has its own seeded stream, so
/// the result does not depend on thread scheduling.
pub fn draw_samples<M, B>(map: &M, base: &B, config: &ImportanceConfig) -> Result<Vec<WeightedSample<M::State>>>
where
    M: ExtendedMap,
    B: BaseDistribution<M::Point>,
    M::State: Sync,
{
    if config.samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let ks = allocate(config, map.steps())?;
    ks.into_par_iter()
        .enumerate()
        .map(|(i, k)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64));
            draw_sample(map, base, k, &mut rng)
        })
        .collect()
}

/// Self-normalized estimate with its standard error and effective sample size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImportanceEstimate {
    pub value: f64,
    pub se: f64,
    pub ess: f64,
}

fn normalized_weights<S>(samples: &[WeightedSample<S>]) -> Result<Vec<f64>> {
    let logs: Vec<f64> = samples.iter().map(WeightedSample::log_weight).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::InvalidSample("weights are all zero or not finite".into()));
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// `(sum w)^2 / sum w^2` for the weights `1 / rho_ddot`.
pub fn effective_sample_size<S>(samples: &[WeightedSample<S>]) -> Result<f64> {
    let w = normalized_weights(samples)?;
    Ok(1.0 / w.iter().map(|v| v * v).sum::<f64>())
}

/// `sum f w / sum w`, with `se^2 = sum w_i^2 (f_i - value)^2` for the
/// normalized weights.
pub fn estimate<S>(samples: &[WeightedSample<S>], f: impl Fn(&S) -> f64) -> Result<ImportanceEstimate> {
    if samples.len() < 2 {
        return Err(Error::InvalidConfig("need at least two samples".into()));
    }
    let w = normalized_weights(samples)?;
    let fs: Vec<f64> = samples.iter().map(|s| f(&s.state)).collect();
    let value: f64 = w.iter().zip(&fs).map(|(w, f)| w * f).sum();
    let se = w.iter().zip(&fs).map(|(w, f)| (w * (f - value)).powi(2)).sum::<f64>().sqrt();
    let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    Ok(ImportanceEstimate { value, se, ess })
}

/// Writes `k,rho_ddot,f_value` for each sample.
pub fn write_samples_csv<S, W: Write>(samples: &[WeightedSample<S>], f: impl Fn(&S) -> f64, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "rho_ddot", "f_value"])?;
    for s in samples {
        out.write_record([s.k.to_string(), format!("{:?}", s.rho_ddot()), format!("{:?}", f(&s.state))])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the `estimate,se,ess` summary.
pub fn write_summary_csv<W: Write>(est: &ImportanceEstimate, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["estimate", "se", "ess"])?;
    out.write_record([format!("{:?}", est.value), format!("{:?}", est.se), format!("{:?}", est.ess)])?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::three_state;
    use crate::models::Banana;

    fn fake(log_rho_ddot: f64, x: f64) -> WeightedSample<f64> {
        WeightedSample { k: 0, state: x, initial: x, log_ratios: vec![log_rho_ddot], log_rho_ddot }
    }

    #[test]
    fn two_term_average() {
        assert!((log_rho_ddot(&[0.5f64.ln(), 1.5f64.ln()])).abs() < 1e-15);
    }

    #[test]
    fn equal_weights() {
        let s: Vec<_> = (0..4).map(|i| fake(0.3, i as f64)).collect();
        let est = estimate(&s, |x| *x).unwrap();
        assert!((est.value - 1.5).abs() < 1e-15);
        assert!((effective_sample_size(&s).unwrap() - 4.0).abs() < 1e-12);
        let c = estimate(&s, |_| 2.0).unwrap();
        assert_eq!((c.value, c.se), (2.0, 0.0));
    }

    #[test]
    fn dominant_weight_gives_unit_ess() {
        let mut s: Vec<_> = (0..10).map(|i| fake(0.0, i as f64)).collect();
        s[3] = fake(-50.0, 3.0);
        assert!((effective_sample_size(&s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stratified_allocation() {
        let cfg = ImportanceConfig { samples: 6, allocation: Allocation::Stratified, seed: 0 };
        assert_eq!(allocate(&cfg, 2).unwrap(), vec![0, 0, 1, 1, 2, 2]);
        assert!(allocate(&cfg, 3).is_err());
    }

    #[test]
    fn zero_steps_is_plain_importance_sampling() {
        let target = Banana;
        let delta = Offsets::new(2, vec![]).unwrap();
        let map = WalkMap::new(&target, &[], &delta).unwrap();
        let base = NormalBase::new([0.0, 0.0], 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = draw_sample(&map, &base, 0, &mut rng).unwrap();
        let expect = base.log_density(&s.state.x) - target.log_density(&s.state.x);
        assert!((s.log_rho_ddot - expect).abs() < 1e-12);
    }

    #[test]
    fn reverse_simulation_returns_to_start() {
        let target = Banana;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..30).map(|_| rng.random()).collect();
        let delta = Offsets::new(2, (0..60).map(|_| 4.0 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()).unwrap();
        let map = WalkMap::new(&target, &s, &delta).unwrap();
        let base = NormalBase::new([0.0, -1.0], 0.3).unwrap();
        for k in [0, 7, 30] {
            let sample = draw_sample(&map, &base, k, &mut rng).unwrap();
            let mut st = sample.initial;
            for j in 0..30 {
                st = map.forward(j, &st).unwrap();
            }
            assert!((st.x[0] - sample.state.x[0]).abs() < 1e-9 && (st.u - sample.state.u).abs() < 1e-9);
            assert!((st.r - sample.state.r).abs() < 1e-9);
        }
    }

    #[test]
    fn discrete_toy_is_unbiased() {
        let kernel = three_state();
        let target = kernel.target().clone();
        let probs = target.normalized();
        let exact: f64 = probs.iter().enumerate().map(|(x, p)| x as f64 * p).sum();
        let base = CategoricalBase::new(vec![0.6, 0.3, 0.1]).unwrap();
        for m in [0usize, 1, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
            let s: Vec<f64> = (0..m).map(|_| rng.random()).collect();
            let map = KernelMap::new(&kernel, &target, &s).unwrap();
            let cfg = ImportanceConfig { samples: 20_000, allocation: Allocation::UniformRandom, seed: 10 + m as u64 };
            let samples = draw_samples(&map, &base, &cfg).unwrap();
            let est = estimate(&samples, |st| st.x as f64).unwrap();
            assert!((est.value - exact).abs() < 3.0 * est.se, "M = {m}: {est:?} vs {exact}");
        }
    }
}
