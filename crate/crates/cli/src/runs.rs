//! The experiment subcommands.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use permcmc::continuous::ContExtState;
use permcmc::importance::{self, Allocation, ImportanceConfig, NormalBase, WalkMap};
use permcmc::models::{Banana, TruncNormModel};
use permcmc::parallel::{self, Mode, ModelSpec, RunConfig, Sampler, TraceSet};
use permcmc::stream::{derive_seed, DrivingSequence, NormalOffsets, Origin};

use crate::manifest::Manifest;
use crate::reference;
use crate::Failure;

/// How the shared `s` values are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum SPattern {
    Random,
    Fixed(Origin),
}

impl SPattern {
    fn origin(&self) -> Option<Origin> {
        match self {
            SPattern::Random => None,
            SPattern::Fixed(o) => Some(o.clone()),
        }
    }
}

impl std::fmt::Display for SPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SPattern::Random => write!(f, "random"),
            SPattern::Fixed(Origin::Constant(v)) => write!(f, "constant:{v}"),
            SPattern::Fixed(Origin::Repeating(vs)) => {
                let parts: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                write!(f, "repeat:{}", parts.join(","))
            }
            SPattern::Fixed(other) => write!(f, "{other}"),
        }
    }
}

/// `random`, `constant:<v>` or `repeat:<v1>,<v2>,...`.
pub fn parse_s_pattern(text: &str) -> Result<SPattern, String> {
    if text == "random" {
        return Ok(SPattern::Random);
    }
    match text.split_once(':').map(|(k, _)| k) {
        Some("constant") | Some("repeat") => text.parse::<Origin>().map(SPattern::Fixed),
        _ => Err(format!("expected random, constant:<v> or repeat:<v1>,<v2>,... but got {text:?}")),
    }
}

fn parse_mode(text: &str) -> Result<Mode, String> {
    text.parse::<Mode>().map_err(|e| e.to_string())
}

/// Flags shared by the two parallel-chain experiments.
#[derive(Args, Debug, Clone)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 100)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// `standard`, `coupled` or `permutation`.
    #[arg(long, default_value = "permutation", value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `random`, `constant:<v>` or `repeat:<v1>,<v2>,...`.
    #[arg(long = "s-pattern", default_value = "random", value_parser = parse_s_pattern)]
    pub s_pattern: SPattern,
    #[arg(long, default_value = "permcmc-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IsingArgs {
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    #[arg(long, default_value_t = 5)]
    pub cols: usize,
    #[arg(long, default_value_t = 0.4)]
    pub beta: f64,
    #[arg(long = "burn-in", default_value_t = 0)]
    pub burn_in: usize,
    #[command(flatten)]
    pub run: ChainArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Gibbs,
    Metropolis,
}

#[derive(Args, Debug)]
pub struct TruncNormArgs {
    #[arg(long, value_enum, default_value = "gibbs")]
    pub sampler: SamplerArg,
    #[arg(long = "burn-in", default_value_t = 10)]
    pub burn_in: usize,
    /// Standard deviation of the shared Metropolis offsets.
    #[arg(long = "proposal-sd", default_value_t = 4.0)]
    pub proposal_sd: f64,
    #[command(flatten)]
    pub run: ChainArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stratify {
    /// Stratify whenever `M + 1` divides `N`.
    Auto,
    Yes,
    No,
}

#[derive(Args, Debug)]
pub struct IsTestArgs {
    /// Number of permutation MCMC maps applied after the base draw.
    #[arg(long = "M", default_value_t = 0)]
    pub m: usize,
    /// Number of importance samples.
    #[arg(long = "N", default_value_t = 2000)]
    pub n: usize,
    #[arg(long = "base-mean", default_value = "0,0", value_parser = parse_pair)]
    pub base_mean: [f64; 2],
    #[arg(long = "base-sd", default_value_t = 3.0)]
    pub base_sd: f64,
    /// Comma-separated seeds; one independent run per seed.
    #[arg(long, default_value = "1", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value = "auto")]
    pub stratified: Stratify,
    /// Standard deviation of the random-walk offsets, per coordinate.
    #[arg(long = "proposal-sd", default_value_t = 4.0)]
    pub proposal_sd: f64,
    #[arg(long, default_value = "permcmc-out")]
    pub out: PathBuf,
}

fn parse_pair(text: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated numbers, got {text:?}"));
    }
    let mut out = [0.0; 2];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn chain_manifest(m: &mut Manifest, run: &ChainArgs) {
    m.set("chains", run.chains);
    m.set("iters", run.iters);
    m.set("mode", run.mode);
    m.set("seed", run.seed);
    m.set("s-pattern", &run.s_pattern);
    m.set("out", run.out.display());
}

/// Runs the chains, writes traces, estimates and manifest, and prints the
/// estimates. Returns the estimate rows.
fn run_chains(config: &RunConfig, run: &ChainArgs, manifest: &Manifest) -> Result<(TraceSet, Vec<parallel::EstimateRow>), Failure> {
    config.validate()?;
    prepare_out(&run.out)?;
    let traces = parallel::run(config)?;
    let rows = parallel::estimate(&traces, config.burn_in)?;
    traces.write_csv(create(&run.out, "traces.csv")?)?;
    parallel::write_estimates_csv(&rows, create(&run.out, "estimates.csv")?)?;
    manifest.write(&run.out)?;

    println!(
        "{} chains x {} iterations, mode {}, s {}, burn-in {}",
        config.chains, config.iterations, config.mode, run.s_pattern, config.burn_in
    );
    for row in &rows {
        match row.se {
            Some(se) => println!("  {:<18} {:>10.4} ± {:.4}", row.statistic, row.estimate, se),
            None => println!("  {:<18} {:>10.4}", row.statistic, row.estimate),
        }
    }
    match traces.coalesced_at() {
        Some(it) => println!("all chains coalesced to one state at iteration {it}"),
        None if config.chains > 1 => {
            let distinct = traces.distinct_states().last().copied().unwrap_or(0);
            println!("chains did not coalesce; {distinct} distinct states after the last iteration");
        }
        None => {}
    }
    if config.mode == Mode::Permutation {
        println!(
            "extended states stayed distinct throughout: {}",
            if traces.injective_throughout() { "yes" } else { "no" }
        );
    }
    println!("wrote traces.csv, estimates.csv and manifest.txt to {}", run.out.display());
    Ok((traces, rows))
}

pub fn ising(args: &IsingArgs) -> Result<(), Failure> {
    let config = RunConfig {
        chains: args.run.chains,
        iterations: args.run.iters,
        burn_in: args.burn_in,
        mode: args.run.mode,
        seed: args.run.seed,
        model: ModelSpec::Ising { rows: args.rows, cols: args.cols, beta: args.beta },
        s_pattern: args.run.s_pattern.origin(),
    };
    let mut m = Manifest::new("ising");
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("rows", args.rows);
    m.set("cols", args.cols);
    m.set("beta", args.beta);
    m.set("burn-in", args.burn_in);
    chain_manifest(&mut m, &args.run);
    let (_, rows) = run_chains(&config, &args.run, &m)?;
    if (args.rows, args.cols, args.beta) == (4, 5, 0.4) {
        println!("comparison with the long-run values:");
        reference::report(&rows, &reference::ISING);
    }
    Ok(())
}

pub fn truncnorm(args: &TruncNormArgs) -> Result<(), Failure> {
    let sampler = match args.sampler {
        SamplerArg::Gibbs => Sampler::Gibbs,
        SamplerArg::Metropolis => Sampler::Metropolis,
    };
    let config = RunConfig {
        chains: args.run.chains,
        iterations: args.run.iters,
        burn_in: args.burn_in,
        mode: args.run.mode,
        seed: args.run.seed,
        model: ModelSpec::TruncNorm { model: TruncNormModel::default(), sampler, proposal_sd: args.proposal_sd },
        s_pattern: args.run.s_pattern.origin(),
    };
    let mut m = Manifest::new("truncnorm");
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("sampler", sampler);
    m.set("burn-in", args.burn_in);
    m.set("proposal-sd", args.proposal_sd);
    chain_manifest(&mut m, &args.run);
    let (_, rows) = run_chains(&config, &args.run, &m)?;
    println!("comparison with the long-run values:");
    reference::report(&rows, &reference::TRUNCNORM);
    Ok(())
}

fn allocation(choice: Stratify, n: usize, m: usize) -> Result<Allocation, Failure> {
    let divisible = n.is_multiple_of(m + 1);
    match choice {
        Stratify::Auto if divisible => Ok(Allocation::Stratified),
        Stratify::Auto | Stratify::No => Ok(Allocation::UniformRandom),
        Stratify::Yes if divisible => Ok(Allocation::Stratified),
        Stratify::Yes => Err(Failure::Usage(format!("--stratified yes needs M + 1 = {} to divide N = {n}", m + 1))),
    }
}

pub fn istest(args: &IsTestArgs) -> Result<(), Failure> {
    if args.seeds.is_empty() {
        return Err(Failure::Usage("need at least one seed".into()));
    }
    if !(args.proposal_sd.is_finite() && args.proposal_sd > 0.0) {
        return Err(Failure::Usage(format!("proposal sd {}", args.proposal_sd)));
    }
    let allocation = allocation(args.stratified, args.n, args.m)?;
    let base = NormalBase::new(args.base_mean, args.base_sd)?;
    prepare_out(&args.out)?;

    println!(
        "E[x2^2] with N={} M={} base mean ({}, {}) sd {}, {} allocation",
        args.n,
        args.m,
        args.base_mean[0],
        args.base_mean[1],
        args.base_sd,
        if allocation == Allocation::Stratified { "stratified" } else { "random" }
    );
    for &seed in &args.seeds {
        let offsets = NormalOffsets { dim: 2, sd: args.proposal_sd };
        let driving = DrivingSequence::generate(&Origin::Seeded(derive_seed(seed, 0)), args.m, false, Some(&offsets));
        let delta = driving.delta().expect("offsets were requested");
        let map = WalkMap::new(&Banana, driving.s(), delta)?;
        let config = ImportanceConfig { samples: args.n, allocation, seed };
        let samples = importance::draw_samples(&map, &base, &config)?;
        let f = |st: &ContExtState<[f64; 2]>| st.x[1] * st.x[1];
        let est = importance::estimate(&samples, f)?;
        importance::write_samples_csv(&samples, f, create(&args.out, &format!("samples-seed{seed}.csv"))?)?;
        importance::write_summary_csv(&est, create(&args.out, &format!("summary-seed{seed}.csv"))?)?;
        let z = (est.value - reference::BANANA_X2_SQ) / est.se;
        let flag = if z.abs() > 3.0 { "  INCONSISTENT with the exact value 3" } else { "" };
        println!(
            "  seed {seed}: {:.4} ± {:.4}  ESS {:.1} (N/ESS {:.2})  z = {z:+.2}{flag}",
            est.value,
            est.se,
            est.ess,
            args.n as f64 / est.ess
        );
    }

    let mut m = Manifest::new("istest");
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("M", args.m);
    m.set("N", args.n);
    m.set("base-mean", format!("{},{}", args.base_mean[0], args.base_mean[1]));
    m.set("base-sd", args.base_sd);
    let seeds: Vec<String> = args.seeds.iter().map(|s| s.to_string()).collect();
    m.set("seeds", seeds.join(","));
    m.set("stratified", if allocation == Allocation::Stratified { "yes" } else { "no" });
    m.set("proposal-sd", args.proposal_sd);
    m.set("out", args.out.display());
    m.write(&args.out)?;
    println!("wrote samples, summaries and manifest.txt to {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_pattern_grammar() {
        assert_eq!(parse_s_pattern("random").unwrap(), SPattern::Random);
        assert_eq!(parse_s_pattern("constant:0.211").unwrap(), SPattern::Fixed(Origin::Constant(0.211)));
        let rep = parse_s_pattern("repeat:0.213,0.631").unwrap();
        assert_eq!(rep, SPattern::Fixed(Origin::Repeating(vec![0.213, 0.631])));
        assert_eq!(rep.to_string(), "repeat:0.213,0.631");
        assert!(parse_s_pattern("constant:1.5").is_err());
        assert!(parse_s_pattern("seeded:3").is_err());
        assert!(parse_s_pattern("sometimes").is_err());
    }

    #[test]
    fn stratification_choice() {
        assert_eq!(allocation(Stratify::Auto, 2000, 100).unwrap(), Allocation::UniformRandom);
        assert_eq!(allocation(Stratify::Auto, 2020, 100).unwrap(), Allocation::Stratified);
        assert_eq!(allocation(Stratify::No, 2020, 100).unwrap(), Allocation::UniformRandom);
        assert!(allocation(Stratify::Yes, 2000, 100).is_err());
    }

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_pair("0,-1").unwrap(), [0.0, -1.0]);
        assert!(parse_pair("1").is_err());
    }
}
