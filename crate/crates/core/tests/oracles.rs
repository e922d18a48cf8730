//! Permutation samplers checked against plain implementations that draw
//! fresh randomness for every step.

use permcmc::continuous::{metropolis_component_forward, ConditionalLaw, ContExtState, LogDensityFn, TruncatedNormal};
use permcmc::models::{ising_sweep, IsingChain, IsingModel, IsingState, SweepMode};
use permcmc::parallel::{run, Mode, ModelSpec, RunConfig};
use permcmc::stats::ks_two_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Mean and batch-means standard error of an autocorrelated trace.
fn batch_mean_se(values: &[f64], batches: usize) -> (f64, f64) {
    let size = values.len() / batches;
    let means: Vec<f64> = values.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

fn assert_agree(name: &str, a: &[f64], b: &[f64]) {
    let (ma, sa) = batch_mean_se(a, 100);
    let (mb, sb) = batch_mean_se(b, 100);
    let z = (ma - mb) / sa.hypot(sb);
    assert!(z.abs() < 3.0, "{name}: {ma} ± {sa} vs {mb} ± {sb}");
}

#[test]
fn permutation_metropolis_matches_textbook_metropolis() {
    let law = TruncatedNormal::new(0.0, 1.0, -1.0, 2.5).unwrap();
    let log_pi = |x: f64| law.density(x).ln();
    let target = LogDensityFn(|x: &f64| log_pi(*x));
    let steps = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let mut st = ContExtState::new(0.5, rng.random(), rng.random(), rng.random());
    let (mut perm_x, mut perm_acc) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    for _ in 0..steps {
        let delta = 4.0 * rng.sample::<f64, _>(StandardNormal);
        let next = metropolis_component_forward(&target, delta, &st, rng.random()).unwrap();
        perm_acc.push(f64::from(u8::from(next.x != st.x)));
        st = next;
        perm_x.push(st.x);
    }

    let mut x = 0.5;
    let (mut plain_x, mut plain_acc) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    for _ in 0..steps {
        let proposal = x + 4.0 * rng.sample::<f64, _>(StandardNormal);
        let accept = rng.random::<f64>().ln() < log_pi(proposal) - log_pi(x);
        if accept {
            x = proposal;
        }
        plain_acc.push(f64::from(u8::from(accept)));
        plain_x.push(x);
    }

    assert_agree("acceptance rate", &perm_acc, &plain_acc);
    assert_agree("mean", &perm_x, &plain_x);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    assert_agree("second moment", &sq(&perm_x), &sq(&plain_x));
}

#[test]
fn single_chain_permutation_gibbs_matches_standard_gibbs() {
    let model = IsingModel::new(4, 5, 0.4).unwrap();
    let n = model.num_sites();
    let iterations = 10_000;
    let thin = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let start = IsingState::random(4, 5, &mut rng);

    let trace = |mode: SweepMode, rng: &mut ChaCha8Rng| {
        let mut chains = [IsingChain { spins: start.clone(), u: rng.random(), r: rng.random() }];
        let mut values = Vec::new();
        let mut uniforms = vec![0.0; n];
        for it in 0..iterations {
            uniforms.iter_mut().for_each(|v| *v = rng.random());
            ising_sweep(&model, &mut chains, &[&uniforms], mode).unwrap();
            if it % thin == 0 {
                values.push(chains[0].spins.magnetization() as f64);
            }
        }
        values
    };
    let perm = trace(SweepMode::Permutation, &mut rng);
    let standard = trace(SweepMode::StandardMulti, &mut rng);
    let (_, p) = ks_two_sample(&perm, &standard);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn all_modes_agree_with_one_chain() {
    let iterations = 20_000;
    let per_mode: Vec<(Vec<f64>, Vec<f64>)> = [Mode::StandardMulti, Mode::Coupled, Mode::Permutation]
        .into_iter()
        .map(|mode| {
            let config = RunConfig {
                chains: 1,
                iterations,
                burn_in: 0,
                mode,
                seed: 5,
                model: ModelSpec::Ising { rows: 4, cols: 5, beta: 0.4 },
                s_pattern: None,
            };
            let traces = run(&config).unwrap();
            let energy = (0..iterations).map(|i| traces.value(0, i, 0)).collect();
            let abs_m = (0..iterations).map(|i| traces.value(0, i, 2)).collect();
            (energy, abs_m)
        })
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert_agree("energy", &per_mode[i].0, &per_mode[j].0);
            assert_agree("|magnetization|", &per_mode[i].1, &per_mode[j].1);
        }
    }
}
