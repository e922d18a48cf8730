use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn permcmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_permcmc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

#[test]
fn verify_builtins_follow_the_exit_code_contract() {
    for name in ["reversible4", "nonreversible4", "three-state", "mh-four-state", "gibbs-truncnorm"] {
        let o = permcmc(&["verify", name, "--samples", "2000", "--jacobian-points", "200"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
        assert!(!stdout(&o).contains("FAIL"));
    }
    let o = permcmc(&["verify", "broken-u-update"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL  bijection s=0"));
    assert!(text.contains("is hit more than once"));
    assert_eq!(permcmc(&["verify", "no-such-kernel"]).status.code(), Some(2));
}

#[test]
fn verify_reads_kernel_files() {
    let dir = tempfile::tempdir().unwrap();
    let uniform = dir.path().join("uniform.txt");
    fs::write(&uniform, "# cyclic shift\n3 1\n0 1 0\n0 0 1\n1 0 0\n").unwrap();
    let o = permcmc(&["verify", uniform.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let general = dir.path().join("general.txt");
    fs::write(&general, "3\n0.3 0.1 0.6\n0.3333333333333333 0.3333333333333333 0.3333333333333334\n0 0 1\n0.3333333333333333 0 0.6666666666666667\n").unwrap();
    let o = permcmc(&["verify", general.to_str().unwrap(), "--samples", "2000", "--jacobian-points", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("volume preservation"));

    // rows sum to one but pi is not invariant
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "2\n0.5 0.5\n1 0\n1 0\n").unwrap();
    assert_eq!(permcmc(&["verify", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn ising_run_writes_outputs_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = permcmc(&["ising", "--chains", "8", "--iters", "50", "--seed", "9", "--s-pattern", "repeat:0.213,0.631", "--out", &out_arg(&first)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("extended states stayed distinct throughout: yes"));
    let manifest = fs::read_to_string(first.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("command=ising\n"));
    for key in ["rows=4", "cols=5", "beta=0.4", "chains=8", "iters=50", "mode=permutation", "seed=9", "s-pattern=repeat:0.213,0.631"] {
        assert!(manifest.lines().any(|l| l == key), "missing {key}");
    }
    let traces = fs::read_to_string(first.join("traces.csv")).unwrap();
    assert!(traces.starts_with("chain,iteration,energy,magnetization,abs_magnetization\n"));
    assert_eq!(traces.lines().count(), 1 + 8 * 50);

    let second = dir.path().join("second");
    let o = permcmc(&["replay", first.join("manifest.txt").to_str().unwrap(), "--out", &out_arg(&second)]);
    assert_eq!(o.status.code(), Some(0));
    for file in ["traces.csv", "estimates.csv"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(second.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn coupled_chains_report_coalescence() {
    let dir = tempfile::tempdir().unwrap();
    let o = permcmc(&["ising", "--mode", "coupled", "--chains", "6", "--iters", "250", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("coalesced to one state at iteration"), "{}", stdout(&o));
}

#[test]
fn small_rational_pattern_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let o = permcmc(&["ising", "--s-pattern", "constant:0.3", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("inconsistent with the reference values"));
}

#[test]
fn default_ising_run_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let o = permcmc(&["ising", "--out", &out_arg(dir.path())]);
    assert!(stdout(&o).contains("estimates are consistent with the reference values"), "{}", stdout(&o));
}

#[test]
fn truncnorm_metropolis_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let o = permcmc(&["truncnorm", "--sampler", "metropolis", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("estimates are consistent with the reference values"), "{}", stdout(&o));
    let estimates = fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    assert_eq!(estimates.lines().next(), Some("statistic,estimate,se"));
    assert_eq!(estimates.lines().count(), 5);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(permcmc(&["ising", "--mode", "standard", "--s-pattern", "constant:0.3", "--out", &out]).status.code(), Some(2));
    assert_eq!(permcmc(&["ising", "--s-pattern", "constant:1.2", "--out", &out]).status.code(), Some(2));
    assert_eq!(permcmc(&["truncnorm", "--burn-in", "5", "--iters", "5", "--out", &out]).status.code(), Some(2));
    assert_eq!(permcmc(&["istest", "--M", "100", "--stratified", "yes", "--out", &out]).status.code(), Some(2));
    assert_eq!(permcmc(&["replay", dir.path().join("missing.txt").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn istest_writes_samples_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = permcmc(&["istest", "--M", "0", "--N", "2000", "--base-sd", "3", "--seeds", "1,2", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    for seed in [1, 2] {
        let samples = fs::read_to_string(dir.path().join(format!("samples-seed{seed}.csv"))).unwrap();
        assert_eq!(samples.lines().next(), Some("k,rho_ddot,f_value"));
        assert_eq!(samples.lines().count(), 2001);
        let summary = fs::read_to_string(dir.path().join(format!("summary-seed{seed}.csv"))).unwrap();
        assert_eq!(summary.lines().next(), Some("estimate,se,ess"));
    }
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seeds=1,2") && manifest.contains("stratified=yes"));

    let replayed = dir.path().join("replayed");
    let o = permcmc(&["replay", dir.path().join("manifest.txt").to_str().unwrap(), "--out", &out_arg(&replayed)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("samples-seed2.csv")).unwrap(), fs::read(replayed.join("samples-seed2.csv")).unwrap());
}
