//! Many chains from many starting states, driven either by independent
//! streams, by one shared stream in the standard way, or by one shared
//! stream through permutation updates.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::continuous::{gibbs_forward_xu, ConditionalLaw, LogDensityFn, ScalarWalk};
use crate::discrete_general::mh_map;
use crate::error::{Error, Result};
use crate::models::{ising_sweep, IsingChain, IsingModel, IsingState, SweepMode, TruncNormModel};
use crate::stream::{derive_seed, DrivingSequence, NormalOffsets, Origin, UniformStream};

const DRIVING_STREAM: u64 = 0;
const INITIAL_STREAM: u64 = 1;
const CHAIN_STREAM_BASE: u64 = 2;

/// How the chains are driven.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Standard updates, one stream per chain.
    StandardMulti,
    /// Standard updates, all chains on one stream.
    Coupled,
    /// Permutation updates, all chains on one stream.
    Permutation,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::StandardMulti => "standard",
            Mode::Coupled => "coupled",
            Mode::Permutation => "permutation",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "standard-multi" => Ok(Mode::StandardMulti),
            "coupled" => Ok(Mode::Coupled),
            "permutation" => Ok(Mode::Permutation),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

/// Update used for the truncated normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    Gibbs,
    Metropolis,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::Gibbs => "gibbs",
            Sampler::Metropolis => "metropolis",
        })
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gibbs" => Ok(Sampler::Gibbs),
            "metropolis" => Ok(Sampler::Metropolis),
            _ => Err(Error::InvalidConfig(format!("unknown sampler {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Ising { rows: usize, cols: usize, beta: f64 },
    TruncNorm { model: TruncNormModel, sampler: Sampler, proposal_sd: f64 },
}

impl ModelSpec {
    fn updates_per_iteration(&self) -> usize {
        match self {
            ModelSpec::Ising { rows, cols, .. } => rows * cols,
            ModelSpec::TruncNorm { .. } => 2,
        }
    }

    pub fn statistics(&self) -> Vec<String> {
        let names: &[&str] = match self {
            ModelSpec::Ising { .. } => &["energy", "magnetization", "abs_magnetization"],
            ModelSpec::TruncNorm { .. } => &["x1", "x2", "x1_sq", "x2_sq"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub mode: Mode,
    pub seed: u64,
    pub model: ModelSpec,
    /// Deterministic replacement for the shared `s` values.
    pub s_pattern: Option<Origin>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("need at least one chain".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if let Some(p) = &self.s_pattern {
            p.validate()?;
            if self.mode == Mode::StandardMulti {
                return Err(Error::InvalidConfig("an s pattern needs a shared stream".into()));
            }
        }
        match &self.model {
            ModelSpec::Ising { rows, cols, beta } => {
                IsingModel::new(*rows, *cols, *beta)?;
            }
            ModelSpec::TruncNorm { proposal_sd, sampler, .. } => {
                if *sampler == Sampler::Metropolis && !(proposal_sd.is_finite() && *proposal_sd > 0.0) {
                    return Err(Error::InvalidConfig(format!("proposal sd {proposal_sd}")));
                }
            }
        }
        Ok(())
    }
}

/// Per-chain, per-iteration statistics plus coalescence bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    statistics: Vec<String>,
    chains: usize,
    iterations: usize,
    /// `values[(chain * iterations + it) * stats + k]`
    values: Vec<f64>,
    distinct_states: Vec<usize>,
    distinct_extended: Vec<usize>,
    initial_distinct_extended: usize,
}

impl TraceSet {
    pub fn statistics(&self) -> &[String] {
        &self.statistics
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn value(&self, chain: usize, iteration: usize, stat: usize) -> f64 {
        self.values[(chain * self.iterations + iteration) * self.statistics.len() + stat]
    }

    /// Number of distinct model states across chains after each iteration.
    pub fn distinct_states(&self) -> &[usize] {
        &self.distinct_states
    }

    /// Number of distinct extended states across chains after each iteration.
    pub fn distinct_extended(&self) -> &[usize] {
        &self.distinct_extended
    }

    pub fn initial_distinct_extended(&self) -> usize {
        self.initial_distinct_extended
    }

    /// First iteration (1-based) from which every chain holds the same
    /// model state through the end of the run.
    pub fn coalesced_at(&self) -> Option<usize> {
        if self.chains < 2 {
            return None;
        }
        let tail = self.distinct_states.iter().rev().take_while(|&&d| d == 1).count();
        (tail > 0).then(|| self.iterations - tail + 1)
    }

    /// True when the map never merged two distinct extended states.
    pub fn injective_throughout(&self) -> bool {
        self.distinct_extended.iter().all(|&d| d == self.initial_distinct_extended)
    }

    /// Writes `chain,iteration,<stat>...`, iterations numbered from 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.statistics.iter().cloned());
        out.write_record(&header)?;
        for c in 0..self.chains {
            for it in 0..self.iterations {
                let mut rec = vec![c.to_string(), (it + 1).to_string()];
                rec.extend((0..self.statistics.len()).map(|k| format_value(self.value(c, it, k))));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// One row of estimates; `se` is `None` when it cannot be computed.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRow {
    pub statistic: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

/// Grand mean over chains and retained iterations, with the standard error
/// obtained by treating the per-chain means as independent.
pub fn estimate(traces: &TraceSet, burn_in: usize) -> Result<Vec<EstimateRow>> {
    if burn_in >= traces.iterations {
        return Err(Error::InvalidConfig(format!(
            "burn-in {burn_in} leaves no iterations out of {}",
            traces.iterations
        )));
    }
    let kept = (traces.iterations - burn_in) as f64;
    let k = traces.chains as f64;
    Ok(traces
        .statistics
        .iter()
        .enumerate()
        .map(|(stat, name)| {
            let means: Vec<f64> = (0..traces.chains)
                .map(|c| (burn_in..traces.iterations).map(|it| traces.value(c, it, stat)).sum::<f64>() / kept)
                .collect();
            let grand = means.iter().sum::<f64>() / k;
            let se = (traces.chains > 1).then(|| {
                let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            });
            EstimateRow { statistic: name.clone(), estimate: grand, se }
        })
        .collect())
}

/// Writes `statistic,estimate,se`; an undefined `se` is left empty.
pub fn write_estimates_csv<W: Write>(rows: &[EstimateRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["statistic", "estimate", "se"])?;
    for r in rows {
        let se = r.se.map(|v| format!("{v:?}")).unwrap_or_default();
        out.write_record([r.statistic.clone(), format!("{:?}", r.estimate), se])?;
    }
    out.flush()?;
    Ok(())
}

fn shared_driving(config: &RunConfig, needs_t: bool, sd: Option<f64>) -> Result<DrivingSequence> {
    let len = config.iterations * config.model.updates_per_iteration();
    let sampler = sd.map(|sd| NormalOffsets { dim: 1, sd });
    let seq = DrivingSequence::generate(
        &Origin::Seeded(derive_seed(config.seed, DRIVING_STREAM)),
        len,
        needs_t,
        sampler.as_ref().map(|s| s as &dyn crate::stream::OffsetSampler),
    );
    match &config.s_pattern {
        Some(p) => seq.with_s_pattern(p),
        None => Ok(seq),
    }
}

fn chain_streams(config: &RunConfig) -> Vec<UniformStream> {
    (0..config.chains)
        .map(|c| UniformStream::new(derive_seed(config.seed, CHAIN_STREAM_BASE + c as u64)))
        .collect()
}

struct Recorder {
    stats: usize,
    iterations: usize,
    values: Vec<f64>,
    distinct_states: Vec<usize>,
    distinct_extended: Vec<usize>,
}

impl Recorder {
    fn new(chains: usize, iterations: usize, stats: usize) -> Self {
        Self {
            stats,
            iterations,
            values: vec![0.0; chains * iterations * stats],
            distinct_states: Vec::with_capacity(iterations),
            distinct_extended: Vec::with_capacity(iterations),
        }
    }

    fn put(&mut self, chain: usize, it: usize, row: &[f64]) {
        let at = (chain * self.iterations + it) * self.stats;
        self.values[at..at + self.stats].copy_from_slice(row);
    }
}

fn count_distinct<T: std::hash::Hash + Eq>(keys: impl Iterator<Item = T>) -> usize {
    keys.collect::<HashSet<_>>().len()
}

/// Runs every chain for the configured number of iterations.
pub fn run(config: &RunConfig) -> Result<TraceSet> {
    config.validate()?;
    match &config.model {
        ModelSpec::Ising { rows, cols, beta } => run_ising(config, &IsingModel::new(*rows, *cols, *beta)?),
        ModelSpec::TruncNorm { model, sampler, proposal_sd } => run_truncnorm(config, model, *sampler, *proposal_sd),
    }
}

fn ising_key(c: &IsingChain) -> (Vec<i8>, u64, u64) {
    (c.spins.spins().to_vec(), c.u.to_bits(), c.r.to_bits())
}

fn run_ising(config: &RunConfig, model: &IsingModel) -> Result<TraceSet> {
    let mut init = UniformStream::new(derive_seed(config.seed, INITIAL_STREAM));
    let mut chains: Vec<IsingChain> = (0..config.chains)
        .map(|_| {
            let spins = IsingState::random(model.rows(), model.cols(), &mut init);
            IsingChain { spins, u: init.next_unit(), r: init.next_unit() }
        })
        .collect();
    run_ising_from(config, model, &mut chains)
}

/// Runs an Ising configuration from given starting chains.
pub fn run_ising_from(config: &RunConfig, model: &IsingModel, chains: &mut [IsingChain]) -> Result<TraceSet> {
    if chains.len() != config.chains {
        return Err(Error::DimensionMismatch { expected: config.chains, got: chains.len() });
    }
    let n = model.num_sites();
    let stats = config.model.statistics();
    let mut rec = Recorder::new(config.chains, config.iterations, stats.len());
    let initial_distinct_extended = count_distinct(chains.iter().map(ising_key));
    let (driving, mut streams) = match config.mode {
        Mode::StandardMulti => (None, chain_streams(config)),
        _ => (Some(shared_driving(config, false, None)?), Vec::new()),
    };
    let mut own = vec![vec![0.0; n]; if driving.is_none() { config.chains } else { 0 }];
    let sweep_mode = match config.mode {
        Mode::StandardMulti => SweepMode::StandardMulti,
        Mode::Coupled => SweepMode::CoupledStandard,
        Mode::Permutation => SweepMode::Permutation,
    };
    for it in 0..config.iterations {
        match &driving {
            Some(d) => ising_sweep(model, chains, &[&d.s()[it * n..(it + 1) * n]], sweep_mode)?,
            None => {
                for (values, stream) in own.iter_mut().zip(streams.iter_mut()) {
                    values.iter_mut().for_each(|v| *v = stream.next_unit());
                }
                let slices: Vec<&[f64]> = own.iter().map(|v| v.as_slice()).collect();
                ising_sweep(model, chains, &slices, sweep_mode)?;
            }
        }
        for (c, chain) in chains.iter().enumerate() {
            let m = chain.spins.magnetization() as f64;
            rec.put(c, it, &[model.energy(&chain.spins)? as f64, m, m.abs()]);
        }
        rec.distinct_states.push(count_distinct(chains.iter().map(|c| c.spins.spins().to_vec())));
        rec.distinct_extended.push(count_distinct(chains.iter().map(ising_key)));
    }
    Ok(TraceSet {
        statistics: stats,
        chains: config.chains,
        iterations: config.iterations,
        values: rec.values,
        distinct_states: rec.distinct_states,
        distinct_extended: rec.distinct_extended,
        initial_distinct_extended,
    })
}

/// One truncated-normal chain; `r` is only used by the Metropolis map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncNormChain {
    pub x: [f64; 2],
    pub u: f64,
    pub r: f64,
}

impl TruncNormChain {
    fn key(&self) -> [u64; 4] {
        [self.x[0].to_bits(), self.x[1].to_bits(), self.u.to_bits(), self.r.to_bits()]
    }
}

struct Update {
    s: f64,
    accept: f64,
    delta: f64,
}

fn truncnorm_update(
    model: &TruncNormModel,
    sampler: Sampler,
    mode: Mode,
    chain: &mut TruncNormChain,
    axis: usize,
    d: &Update,
) -> Result<()> {
    let other = chain.x[1 - axis];
    match (sampler, mode) {
        (Sampler::Gibbs, Mode::Permutation) => {
            let law = model.conditional(axis, other)?;
            let (x, u) = gibbs_forward_xu(&law, chain.x[axis], chain.u, d.s)?;
            chain.x[axis] = x;
            chain.u = u;
        }
        (Sampler::Gibbs, _) => {
            chain.x[axis] = model.conditional(axis, other)?.inv_cdf(d.s)?;
        }
        (Sampler::Metropolis, Mode::Permutation) => {
            let x = chain.x;
            let target = LogDensityFn(|v: &f64| {
                let mut p = x;
                p[axis] = *v;
                model.log_density(&p)
            });
            let step = mh_map(&target, &ScalarWalk { delta: d.delta }, &x[axis], chain.r, chain.u, d.s)?;
            chain.x[axis] = step.x;
            chain.r = step.r;
            chain.u = step.u;
        }
        (Sampler::Metropolis, _) => {
            let mut proposal = chain.x;
            proposal[axis] += d.delta;
            let log_ratio = model.log_density(&proposal) - model.log_density(&chain.x);
            if d.accept < log_ratio.exp() {
                chain.x = proposal;
            }
        }
    }
    Ok(())
}

fn run_truncnorm(config: &RunConfig, model: &TruncNormModel, sampler: Sampler, proposal_sd: f64) -> Result<TraceSet> {
    let mut init = UniformStream::new(derive_seed(config.seed, INITIAL_STREAM));
    let mut chains: Vec<TruncNormChain> = (0..config.chains)
        .map(|_| {
            let x = model.random_point(&mut init);
            TruncNormChain { x, u: init.next_unit(), r: init.next_unit() }
        })
        .collect();
    run_truncnorm_from(config, model, sampler, proposal_sd, &mut chains)
}

/// Runs a truncated-normal configuration from given starting chains.
pub fn run_truncnorm_from(
    config: &RunConfig,
    model: &TruncNormModel,
    sampler: Sampler,
    proposal_sd: f64,
    chains: &mut [TruncNormChain],
) -> Result<TraceSet> {
    if chains.len() != config.chains {
        return Err(Error::DimensionMismatch { expected: config.chains, got: chains.len() });
    }
    if let Some(c) = chains.iter().find(|c| !model.in_support(&c.x)) {
        return Err(Error::InvalidConfig(format!("initial state {:?} outside the support", c.x)));
    }
    let metropolis = sampler == Sampler::Metropolis;
    let stats = config.model.statistics();
    let mut rec = Recorder::new(config.chains, config.iterations, stats.len());
    let initial_distinct_extended = count_distinct(chains.iter().map(TruncNormChain::key));
    let shared = match config.mode {
        Mode::StandardMulti => None,
        _ => Some(shared_driving(
            config,
            metropolis && config.mode == Mode::Coupled,
            metropolis.then_some(proposal_sd),
        )?),
    };
    let mut streams = if shared.is_none() { chain_streams(config) } else { Vec::new() };
    let normal = rand_distr::Normal::new(0.0, proposal_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for it in 0..config.iterations {
        for axis in 0..2 {
            let i = it * 2 + axis;
            match &shared {
                Some(d) => {
                    let upd = Update {
                        s: d.s()[i],
                        accept: d.t_at(i),
                        delta: d.delta_at(i).map_or(0.0, |v| v[0]),
                    };
                    chains
                        .par_iter_mut()
                        .try_for_each(|c| truncnorm_update(model, sampler, config.mode, c, axis, &upd))?;
                }
                None => {
                    chains.par_iter_mut().zip(streams.par_iter_mut()).try_for_each(|(c, stream)| {
                        use rand_distr::Distribution;
                        let upd = if metropolis {
                            let delta = normal.sample(stream);
                            Update { s: 0.0, accept: stream.next_unit(), delta }
                        } else {
                            Update { s: stream.next_unit(), accept: 0.0, delta: 0.0 }
                        };
                        truncnorm_update(model, sampler, config.mode, c, axis, &upd)
                    })?;
                }
            }
        }
        for (c, chain) in chains.iter().enumerate() {
            let [a, b] = chain.x;
            rec.put(c, it, &[a, b, a * a, b * b]);
        }
        rec.distinct_states
            .push(count_distinct(chains.iter().map(|c| [c.x[0].to_bits(), c.x[1].to_bits()])));
        rec.distinct_extended.push(count_distinct(chains.iter().map(TruncNormChain::key)));
    }
    Ok(TraceSet {
        statistics: stats,
        chains: config.chains,
        iterations: config.iterations,
        values: rec.values,
        distinct_states: rec.distinct_states,
        distinct_extended: rec.distinct_extended,
        initial_distinct_extended,
    })
}
