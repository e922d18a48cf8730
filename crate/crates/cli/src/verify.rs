//! Bijection, round-trip and volume checks for built-in or user kernels.

use std::path::Path;

use clap::Args;
use permcmc::catalog;
use permcmc::continuous::{gibbs_forward, gibbs_inverse, ConditionalLaw, ContExtState, TruncatedNormal};
use permcmc::discrete_general::{
    forward, inverse, mh_forward, mh_inverse, mh_map, DiscreteTarget, GeneralExtState, GeneralKernel, MatrixProposal,
    ProposalFamily,
};
use permcmc::discrete_uniform::{verify_permutation_with, UniformExtState, UniformKernel, UpdateRule, Verdict};
use permcmc::numeric::jacobian_det;
use permcmc::stream::UniformStream;
use rand::Rng;

use crate::Failure;

pub const BUILTINS: [&str; 6] =
    ["reversible4", "nonreversible4", "broken-u-update", "three-state", "mh-four-state", "gibbs-truncnorm"];

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// A built-in name or the path of a kernel file.
    pub kernel: String,
    /// Random states for the round-trip checks.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Random points for the Jacobian checks.
    #[arg(long = "jacobian-points", default_value_t = 1000)]
    pub jacobian_points: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

const ROUND_TRIP_TOL: f64 = 1e-9;
const VOLUME_TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;

struct Check {
    name: String,
    pass: bool,
    worst: String,
    details: Vec<String>,
}

impl Check {
    fn tolerance(name: impl Into<String>, worst: f64, tol: f64) -> Self {
        Check { name: name.into(), pass: worst < tol, worst: format!("{worst:.2e} (tolerance {tol:.0e})"), details: vec![] }
    }
}

enum Subject {
    Uniform(UniformKernel, UpdateRule),
    General(GeneralKernel),
    Mh(DiscreteTarget, MatrixProposal),
    Gibbs(TruncatedNormal),
}

fn load(spec: &str) -> Result<Subject, Failure> {
    match spec {
        "reversible4" => return Ok(Subject::Uniform(catalog::reversible4(), UpdateRule::Permutation)),
        "nonreversible4" => return Ok(Subject::Uniform(catalog::nonreversible4(), UpdateRule::Permutation)),
        "broken-u-update" => return Ok(Subject::Uniform(catalog::reversible4(), UpdateRule::NaiveShift)),
        "three-state" => return Ok(Subject::General(catalog::three_state())),
        "mh-four-state" => {
            let (t, p) = catalog::mh_four_state();
            return Ok(Subject::Mh(t, p));
        }
        "gibbs-truncnorm" => {
            let rho: f64 = 0.95;
            let law = TruncatedNormal::new(rho * 0.5, (1.0 - rho * rho).sqrt(), -1.5, 2.0)?;
            return Ok(Subject::Gibbs(law));
        }
        _ => {}
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "{spec:?} is neither a built-in ({}) nor a readable file",
            BUILTINS.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path)?;
    match UniformKernel::parse(&text) {
        Ok(k) => Ok(Subject::Uniform(k, UpdateRule::Permutation)),
        Err(uniform_err) => GeneralKernel::parse(&text).map(Subject::General).map_err(|general_err| {
            Failure::Usage(format!(
                "{spec}: not a uniform kernel ({uniform_err}) and not a general kernel ({general_err})"
            ))
        }),
    }
}

fn wrap(d: f64) -> f64 {
    d - d.round()
}

fn general_error(a: &GeneralExtState, b: &GeneralExtState) -> f64 {
    if a.x != b.x {
        f64::INFINITY
    } else {
        (a.r - b.r).abs().max(wrap(a.u - b.u).abs())
    }
}

fn uniform_checks(kernel: &UniformKernel, rule: UpdateRule) -> Result<Vec<Check>, Failure> {
    let mut checks = Vec::new();
    for s in 0..kernel.q() {
        let verdict = verify_permutation_with(kernel, s, rule)?;
        let mut check = Check {
            name: format!("bijection s={s}"),
            pass: verdict.is_bijection(),
            worst: "0 collisions".into(),
            details: vec![],
        };
        if let Verdict::Collision(states) = verdict {
            check.worst = format!("{} states with several preimages", states.len());
            check.details = states.iter().map(|st| format!("({}, {}) is hit more than once", st.x, st.u)).collect();
        }
        checks.push(check);
    }
    if rule == UpdateRule::Permutation {
        let mut mismatches = 0;
        for s in 0..kernel.q() {
            for x in 0..kernel.num_states() {
                for u in 0..kernel.q() {
                    let st = UniformExtState::new(x, u);
                    if kernel.forward(st, s).and_then(|f| kernel.inverse(f, s)).ok() != Some(st) {
                        mismatches += 1;
                    }
                }
            }
        }
        checks.push(Check {
            name: "exact inverse round-trip".into(),
            pass: mismatches == 0,
            worst: format!("{mismatches} mismatches"),
            details: vec![],
        });
    }
    Ok(checks)
}

/// Largest `||det| - 1|` of a two-dimensional map of `(y*, u)` over random
/// points; `eval` returns a branch tag and the image.
fn volume_2d(
    points: usize,
    rng: &mut UniformStream,
    height: impl Fn(usize) -> f64,
    states: usize,
    eval: impl Fn(usize, [f64; 2]) -> Option<(usize, [f64; 2])>,
) -> (usize, f64) {
    let margin = 10.0 * STEP;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..points * 20 {
        if checked == points {
            break;
        }
        let x = rng.random_range(0..states);
        let p = [rng.random_range(margin..height(x) - margin), rng.random_range(margin..1.0 - margin)];
        let Some((tag, base)) = eval(x, p) else { continue };
        let f = |q: [f64; 2]| {
            let (t, o) = eval(x, q)?;
            (t == tag).then(|| [o[0], base[1] + wrap(o[1] - base[1])])
        };
        if let Some(det) = jacobian_det(f, p, STEP) {
            worst = worst.max((det.abs() - 1.0).abs());
            checked += 1;
        }
    }
    (checked, worst)
}

fn volume_check(points: usize, (checked, worst): (usize, f64)) -> Check {
    let mut c = Check::tolerance(format!("volume preservation ({checked} points)"), worst, VOLUME_TOL);
    if checked < points {
        c.pass = false;
        c.details.push(format!("only {checked} of {points} points were away from branch boundaries"));
    }
    c
}

fn general_checks(kernel: &GeneralKernel, args: &VerifyArgs, rng: &mut UniformStream) -> Vec<Check> {
    let target = kernel.target().clone();
    let m = target.num_states();
    let mut worst = 0.0f64;
    for _ in 0..args.samples {
        let st = GeneralExtState::new(rng.random_range(0..m), rng.random(), rng.random());
        let s: f64 = rng.random();
        let back = forward(kernel, &st, s).and_then(|f| inverse(kernel, &f, s));
        worst = worst.max(back.map_or(f64::INFINITY, |b| general_error(&b, &st)));
    }
    let s: f64 = rng.random();
    let volume = volume_2d(args.jacobian_points, rng, |x| target.pi(x), m, |x, p| {
        let out = forward(kernel, &GeneralExtState::from_y_star(&target, x, p[0], p[1]), s).ok()?;
        Some((out.x, [out.y_star(&target), out.u]))
    });
    vec![
        Check::tolerance(format!("inverse round-trip ({} states)", args.samples), worst, ROUND_TRIP_TOL),
        volume_check(args.jacobian_points, volume),
    ]
}

fn mh_checks(target: &DiscreteTarget, proposal: &MatrixProposal, args: &VerifyArgs, rng: &mut UniformStream) -> Vec<Check> {
    let m = target.num_states();
    let family = ProposalFamily::FullMatrix(proposal.clone());
    let (mut worst, mut involution) = (0.0f64, 0.0f64);
    for _ in 0..args.samples {
        let st = GeneralExtState::new(rng.random_range(0..m), rng.random(), rng.random());
        let s: f64 = rng.random();
        let back = mh_forward(target, &family, &st, s, None).and_then(|f| mh_inverse(target, &family, &f, s, None));
        worst = worst.max(back.map_or(f64::INFINITY, |b| general_error(&b, &st)));
        let twice = mh_forward(target, &family, &st, 0.0, None).and_then(|f| mh_forward(target, &family, &f, 0.0, None));
        involution = involution.max(twice.map_or(f64::INFINITY, |b| general_error(&b, &st)));
    }
    let s: f64 = rng.random();
    let volume = volume_2d(args.jacobian_points, rng, |x| target.pi(x), m, |x, p| {
        let step = mh_map(target, proposal, &x, p[0] / target.pi(x), p[1], s).ok()?;
        Some((2 * step.x + usize::from(step.accepted), [step.r * target.pi(step.x), step.u]))
    });
    vec![
        Check::tolerance(format!("inverse round-trip ({} states)", args.samples), worst, ROUND_TRIP_TOL),
        Check::tolerance("involution at s=0", involution, ROUND_TRIP_TOL),
        volume_check(args.jacobian_points, volume),
    ]
}

fn gibbs_checks(law: &TruncatedNormal, args: &VerifyArgs, rng: &mut UniformStream) -> Vec<Check> {
    let mut worst = 0.0f64;
    for _ in 0..args.samples {
        let st = ContExtState::new(law.inv_cdf(rng.random()).unwrap_or(law.mean()), rng.random(), rng.random(), rng.random());
        let (s, t): (f64, f64) = (rng.random(), rng.random());
        let err = gibbs_forward(law, &st, s, t).and_then(|f| gibbs_inverse(law, &f, s, t)).map(|b| {
            (b.x - st.x).abs().max(wrap(b.u - st.u).abs()).max(wrap(b.r - st.r).abs()).max(wrap(b.v - st.v).abs())
        });
        worst = worst.max(err.unwrap_or(f64::INFINITY));
    }
    let (s, t): (f64, f64) = (rng.random(), rng.random());
    let eval = |p: [f64; 4]| -> Option<[f64; 4]> {
        let out = gibbs_forward(law, &ContExtState::new(p[0], p[1], p[2] / law.density(p[0]), p[3]), s, t).ok()?;
        Some([out.x, out.u, out.r * law.density(out.x), out.v])
    };
    let mut volume = 0.0f64;
    let mut checked = 0;
    for _ in 0..args.jacobian_points {
        let x = law.inv_cdf(rng.random_range(0.01..0.99)).unwrap_or(law.mean());
        let p = [x, rng.random_range(0.01..0.99), rng.random_range(0.01..0.99) * law.density(x), rng.random_range(0.01..0.99)];
        let Some(base) = eval(p) else { continue };
        let f = |q: [f64; 4]| {
            let o = eval(q)?;
            Some([o[0], base[1] + wrap(o[1] - base[1]), o[2], base[3] + wrap(o[3] - base[3])])
        };
        if let Some(det) = jacobian_det(f, p, STEP) {
            volume = volume.max((det.abs() - 1.0).abs());
            checked += 1;
        }
    }
    vec![
        Check::tolerance(format!("inverse round-trip ({} states)", args.samples), worst, ROUND_TRIP_TOL),
        volume_check(args.jacobian_points, (checked, volume)),
    ]
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    let subject = load(&args.kernel)?;
    let mut rng = UniformStream::new(args.seed);
    let checks = match &subject {
        Subject::Uniform(k, rule) => uniform_checks(k, *rule)?,
        Subject::General(k) => general_checks(k, args, &mut rng),
        Subject::Mh(t, p) => mh_checks(t, p, args, &mut rng),
        Subject::Gibbs(law) => gibbs_checks(law, args, &mut rng),
    };
    println!("verifying {}", args.kernel);
    let mut failed = 0;
    for c in &checks {
        println!("{}  {:<36} worst: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.worst);
        for d in &c.details {
            println!("        {d}");
        }
        failed += usize::from(!c.pass);
    }
    if failed == 0 {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(Failure::Check(format!("{failed} of {} checks failed", checks.len())))
    }
}
