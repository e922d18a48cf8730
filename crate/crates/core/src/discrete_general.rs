//! Limiting map on `(x, y*, u*)` for real-valued probabilities, and the
//! volume-preserving Metropolis–Hastings map.
//!
//! States carry `r = y*/pi(x)` rather than `y*`. The map preserves Lebesgue
//! measure in `(y*, u*)` coordinates, so `r` alone is not measure-preserving;
//! use [`GeneralExtState::y_star`] when that matters.

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;
const INVARIANCE_TOL: f64 = 1e-10;

/// Largest `f64` strictly below one.
pub const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `v mod 1`, kept literally inside `[0, 1)`.
pub fn mod1(v: f64) -> f64 {
    let w = v - v.floor();
    if w >= 1.0 {
        BELOW_ONE
    } else {
        w
    }
}

/// Clamp a ratio that should lie in `[0, 1)` but may have rounded outside.
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else if v >= 1.0 {
        BELOW_ONE
    } else {
        v
    }
}

pub(crate) fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {v} not in [0, 1)")))
    }
}

/// Unnormalized log density.
pub trait Target<X> {
    fn log_density(&self, x: &X) -> f64;
}

/// A proposal distribution over a small set of candidates.
///
/// Candidates are listed once each, in a fixed order, with probabilities
/// summing to one. `slot` returns the cumulative probability of the
/// candidates that precede `to` together with `S(from, to)`; the pair is
/// `(_, 0.0)` when `to` cannot be proposed.
pub trait Proposal<X> {
    fn candidates(&self, from: &X) -> Vec<(X, f64)>;
    fn slot(&self, from: &X, to: &X) -> (f64, f64);
}

/// Positive unnormalized probabilities on `{0, .., M-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTarget {
    pi: Vec<f64>,
}

impl DiscreteTarget {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidTarget("no states".into()));
        }
        if let Some((i, p)) = pi.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidTarget(format!("pi({i}) = {p} is not positive")));
        }
        Ok(Self { pi })
    }

    pub fn num_states(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self, x: usize) -> f64 {
        self.pi[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.pi
    }

    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.pi.iter().sum();
        self.pi.iter().map(|p| p / total).collect()
    }
}

impl Target<usize> for DiscreteTarget {
    fn log_density(&self, x: &usize) -> f64 {
        self.pi.get(*x).map_or(f64::NEG_INFINITY, |p| p.ln())
    }
}

/// A transition kernel together with its reversal `T~`.
pub trait DiscreteKernel {
    fn num_states(&self) -> usize;
    fn prob(&self, from: usize, to: usize) -> f64;
    fn reverse_prob(&self, from: usize, to: usize) -> f64;
}

/// Dense kernel with `T~(x, x') = T(x', x) pi(x') / pi(x)` cached.
#[derive(Clone, Debug)]
pub struct GeneralKernel {
    target: DiscreteTarget,
    m: usize,
    t: Vec<f64>,
    trev: Vec<f64>,
}

impl GeneralKernel {
    pub fn new(target: DiscreteTarget, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = target.num_states();
        if rows.len() != m || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidKernel(format!("kernel must be {m} x {m}")));
        }
        let t: Vec<f64> = rows.into_iter().flatten().collect();
        for x in 0..m {
            let row = &t[x * m..(x + 1) * m];
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidKernel(format!("row {x} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidKernel(format!("row {x} sums to {sum}")));
            }
        }
        let total: f64 = target.weights().iter().sum();
        for y in 0..m {
            let flow: f64 = (0..m).map(|x| target.pi(x) * t[x * m + y]).sum();
            if (flow - target.pi(y)).abs() > INVARIANCE_TOL * total {
                return Err(Error::InvalidKernel(format!(
                    "pi is not invariant: column {y} receives {flow}, expected {}",
                    target.pi(y)
                )));
            }
        }
        let mut trev = vec![0.0; m * m];
        for x in 0..m {
            for y in 0..m {
                trev[x * m + y] = t[y * m + x] * target.pi(y) / target.pi(x);
            }
            let sum: f64 = trev[x * m..(x + 1) * m].iter().sum();
            if (sum - 1.0).abs() > INVARIANCE_TOL {
                return Err(Error::InvalidKernel(format!("reverse row {x} sums to {sum}")));
            }
        }
        Ok(Self { target, m, t, trev })
    }

    /// Parse `M`, then a row of `M` weights `pi`, then `M` rows of `T`.
    /// Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let parse_row = |(line, l): (usize, &str)| -> Result<Vec<f64>> {
            l.split_whitespace()
                .map(|w| {
                    w.parse::<f64>()
                        .map_err(|e| Error::Parse { line, msg: format!("{w:?}: {e}") })
                })
                .collect()
        };
        let (line, header) = lines.next().ok_or(Error::Parse { line: 0, msg: "empty input".into() })?;
        let m: usize = header
            .parse()
            .map_err(|e| Error::Parse { line, msg: format!("state count: {e}") })?;
        let pi = parse_row(lines.next().ok_or(Error::Parse { line, msg: "missing pi row".into() })?)?;
        let rows = lines.take(m).map(parse_row).collect::<Result<Vec<_>>>()?;
        if pi.len() != m || rows.len() != m {
            return Err(Error::Parse { line, msg: format!("expected pi and {m} rows of {m} values") });
        }
        Self::new(DiscreteTarget::new(pi)?, rows)
    }

    pub fn target(&self) -> &DiscreteTarget {
        &self.target
    }
}

impl DiscreteKernel for GeneralKernel {
    fn num_states(&self) -> usize {
        self.m
    }

    fn prob(&self, from: usize, to: usize) -> f64 {
        self.t[from * self.m + to]
    }

    fn reverse_prob(&self, from: usize, to: usize) -> f64 {
        self.trev[from * self.m + to]
    }
}

/// Two-state kernel that ignores the current state: both rows are
/// `(1 - p, p)`. Reversible, so `T~ = T`.
#[derive(Clone, Copy, Debug)]
pub struct BinaryIndependence {
    pub p_one: f64,
}

impl DiscreteKernel for BinaryIndependence {
    fn num_states(&self) -> usize {
        2
    }

    fn prob(&self, _from: usize, to: usize) -> f64 {
        if to == 1 {
            self.p_one
        } else {
            1.0 - self.p_one
        }
    }

    fn reverse_prob(&self, from: usize, to: usize) -> f64 {
        self.prob(from, to)
    }
}

/// Extended state `(x, y*/pi(x), u*)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralExtState {
    pub x: usize,
    pub r: f64,
    pub u: f64,
}

impl GeneralExtState {
    pub fn new(x: usize, r: f64, u: f64) -> Self {
        Self { x, r, u }
    }

    pub fn from_y_star(target: &DiscreteTarget, x: usize, y_star: f64, u: f64) -> Self {
        Self { x, r: y_star / target.pi(x), u }
    }

    pub fn y_star(&self, target: &DiscreteTarget) -> f64 {
        target.pi(self.x) * self.r
    }
}

/// Max-rule search over the positive cells of a row: the last `j` with
/// `p(j) > 0` whose cumulative start is `<= u`. Returns `(j, start, p(j))`.
fn select(n: usize, p: impl Fn(usize) -> f64, u: f64) -> Option<(usize, f64, f64)> {
    let mut cum = 0.0;
    let mut found = None;
    for j in 0..n {
        let pj = p(j);
        if pj > 0.0 {
            if cum > u {
                break;
            }
            found = Some((j, cum, pj));
        }
        cum += pj;
    }
    found
}

fn cum_before(p: impl Fn(usize) -> f64, to: usize) -> f64 {
    (0..to).map(p).sum()
}

fn check_state<K: DiscreteKernel + ?Sized>(kernel: &K, st: &GeneralExtState) -> Result<()> {
    if st.x >= kernel.num_states() {
        return Err(Error::OutOfRange(format!("state {} of {}", st.x, kernel.num_states())));
    }
    check_unit("r", st.r)?;
    check_unit("u", st.u)
}

/// One application of the limiting map with offset `s`.
pub fn forward<K: DiscreteKernel + ?Sized>(kernel: &K, st: &GeneralExtState, s: f64) -> Result<GeneralExtState> {
    check_state(kernel, st)?;
    let n = kernel.num_states();
    let (x1, cum, p) = select(n, |j| kernel.prob(st.x, j), st.u)
        .ok_or(Error::ZeroForwardProbability { from: st.x, to: st.x })?;
    let back = kernel.reverse_prob(x1, st.x);
    if back <= 0.0 {
        return Err(Error::ZeroForwardProbability { from: st.x, to: x1 });
    }
    Ok(GeneralExtState {
        x: x1,
        r: clamp_unit((st.u - cum) / p),
        u: mod1(s + cum_before(|j| kernel.reverse_prob(x1, j), st.x) + back * st.r),
    })
}

/// Inverse of [`forward`] for the same `s`.
pub fn inverse<K: DiscreteKernel + ?Sized>(kernel: &K, st: &GeneralExtState, s: f64) -> Result<GeneralExtState> {
    check_state(kernel, st)?;
    let n = kernel.num_states();
    let w = mod1(st.u - s);
    let (x0, cum, p) = select(n, |j| kernel.reverse_prob(st.x, j), w)
        .ok_or(Error::ZeroForwardProbability { from: st.x, to: st.x })?;
    let fwd = kernel.prob(x0, st.x);
    if fwd <= 0.0 {
        return Err(Error::ZeroForwardProbability { from: x0, to: st.x });
    }
    Ok(GeneralExtState {
        x: x0,
        r: clamp_unit((w - cum) / p),
        u: mod1(cum_before(|j| kernel.prob(x0, j), st.x) + fwd * st.r),
    })
}

/// Row-stochastic proposal matrix `S`.
#[derive(Clone, Debug)]
pub struct MatrixProposal {
    m: usize,
    s: Vec<f64>,
}

impl MatrixProposal {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidKernel("proposal must be a non-empty square matrix".into()));
        }
        for (x, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidKernel(format!("proposal row {x} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidKernel(format!("proposal row {x} sums to {sum}")));
            }
        }
        Ok(Self { m, s: rows.into_iter().flatten().collect() })
    }

    pub fn num_states(&self) -> usize {
        self.m
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.s[from * self.m + to]
    }
}

impl Proposal<usize> for MatrixProposal {
    fn candidates(&self, from: &usize) -> Vec<(usize, f64)> {
        (0..self.m)
            .map(|j| (j, self.prob(*from, j)))
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }

    fn slot(&self, from: &usize, to: &usize) -> (f64, f64) {
        if *from >= self.m || *to >= self.m {
            return (0.0, 0.0);
        }
        (cum_before(|j| self.prob(*from, j), *to), self.prob(*from, *to))
    }
}

/// Random walk on the cyclic group `Z_modulus`: propose `x + delta` or
/// `x - delta` with probability one half each.
#[derive(Clone, Copy, Debug)]
pub struct ModularWalk {
    pub modulus: usize,
    pub delta: i64,
}

impl ModularWalk {
    fn pair(&self, from: usize) -> (usize, usize) {
        let m = self.modulus as i64;
        let plus = (from as i64 + self.delta).rem_euclid(m) as usize;
        let minus = (from as i64 - self.delta).rem_euclid(m) as usize;
        (plus.min(minus), plus.max(minus))
    }
}

impl Proposal<usize> for ModularWalk {
    fn candidates(&self, from: &usize) -> Vec<(usize, f64)> {
        match self.pair(*from) {
            (a, b) if a == b => vec![(a, 1.0)],
            (a, b) => vec![(a, 0.5), (b, 0.5)],
        }
    }

    fn slot(&self, from: &usize, to: &usize) -> (f64, f64) {
        match self.pair(*from) {
            (a, b) if a == b && a == *to => (0.0, 1.0),
            (a, _) if a == *to => (0.0, 0.5),
            (_, b) if b == *to => (0.5, 0.5),
            _ => (0.0, 0.0),
        }
    }
}

/// Proposal families for discrete Metropolis–Hastings.
#[derive(Clone, Debug)]
pub enum ProposalFamily {
    FullMatrix(MatrixProposal),
    /// Two-point walk on `Z_modulus`; the offset comes from the driving sequence.
    GroupWalk { modulus: usize },
}

/// Acceptance probability `min(1, pi(to) S(to, from) / (pi(from) S(from, to)))`
/// given `log pi(from)`.
pub fn acceptance<X, T, P>(target: &T, proposal: &P, from: &X, log_pi_from: f64, to: &X) -> f64
where
    X: PartialEq,
    T: Target<X> + ?Sized,
    P: Proposal<X> + ?Sized,
{
    if from == to {
        return 1.0;
    }
    let lp_to = target.log_density(to);
    if lp_to == f64::NEG_INFINITY {
        return 0.0;
    }
    let (_, fwd) = proposal.slot(from, to);
    let (_, back) = proposal.slot(to, from);
    if back <= 0.0 {
        return 0.0;
    }
    ((lp_to - log_pi_from).exp() * back / fwd).min(1.0)
}

/// Output of [`mh_map`].
#[derive(Clone, Debug, PartialEq)]
pub struct MhStep<X> {
    pub x: X,
    pub r: f64,
    pub u: f64,
    pub accepted: bool,
}

/// Volume-preserving Metropolis–Hastings map on `(x, y*/pi(x), u*)`.
pub fn mh_map<X, T, P>(target: &T, proposal: &P, x: &X, r: f64, u: f64, s: f64) -> Result<MhStep<X>>
where
    X: Clone + PartialEq,
    T: Target<X> + ?Sized,
    P: Proposal<X> + ?Sized,
{
    check_unit("r", r)?;
    check_unit("u", u)?;
    let cands = proposal.candidates(x);
    let mut cum = 0.0;
    let mut chosen = None;
    for (i, (_, p)) in cands.iter().enumerate() {
        if *p > 0.0 {
            if cum > u {
                break;
            }
            chosen = Some((i, cum, *p));
        }
        cum += p;
    }
    let (i, cum, p) = chosen.ok_or(Error::ZeroProposalProbability)?;
    let proposed = &cands[i].0;
    let a = clamp_unit((u - cum) / p);
    let lp_x = target.log_density(x);
    let alpha = acceptance(target, proposal, x, lp_x, proposed);
    if a < alpha {
        let (back_cum, back_p) = proposal.slot(proposed, x);
        let lp_new = target.log_density(proposed);
        let back_alpha = acceptance(target, proposal, proposed, lp_new, x);
        Ok(MhStep {
            x: proposed.clone(),
            r: clamp_unit(a / alpha),
            u: mod1(s + back_cum + back_p * back_alpha * r),
            accepted: true,
        })
    } else {
        Ok(MhStep { x: x.clone(), r, u: mod1(s + u), accepted: false })
    }
}

/// Inverse of [`mh_map`]: shift `u` back by `s`, then apply the map at
/// `s = 0`, which is an involution.
pub fn mh_map_inverse<X, T, P>(target: &T, proposal: &P, x: &X, r: f64, u: f64, s: f64) -> Result<MhStep<X>>
where
    X: Clone + PartialEq,
    T: Target<X> + ?Sized,
    P: Proposal<X> + ?Sized,
{
    check_unit("u", u)?;
    mh_map(target, proposal, x, r, mod1(u - s), 0.0)
}

fn with_family<R>(
    proposal: &ProposalFamily,
    delta: Option<i64>,
    f: impl FnOnce(&dyn Proposal<usize>) -> Result<R>,
) -> Result<R> {
    match proposal {
        ProposalFamily::FullMatrix(p) => f(p),
        ProposalFamily::GroupWalk { modulus } => {
            let delta = delta.ok_or_else(|| Error::InvalidConfig("group walk needs an offset".into()))?;
            f(&ModularWalk { modulus: *modulus, delta })
        }
    }
}

fn check_mh_state(target: &DiscreteTarget, proposal: &ProposalFamily, st: &GeneralExtState) -> Result<()> {
    let m = target.num_states();
    if let ProposalFamily::FullMatrix(p) = proposal {
        if p.num_states() != m {
            return Err(Error::DimensionMismatch { expected: m, got: p.num_states() });
        }
    }
    if let ProposalFamily::GroupWalk { modulus } = proposal {
        if *modulus != m {
            return Err(Error::DimensionMismatch { expected: m, got: *modulus });
        }
    }
    if st.x >= m {
        return Err(Error::OutOfRange(format!("state {} of {m}", st.x)));
    }
    Ok(())
}

/// Metropolis–Hastings map for a discrete target.
pub fn mh_forward(
    target: &DiscreteTarget,
    proposal: &ProposalFamily,
    st: &GeneralExtState,
    s: f64,
    delta: Option<i64>,
) -> Result<GeneralExtState> {
    check_mh_state(target, proposal, st)?;
    let step = with_family(proposal, delta, |p| mh_map(target, p, &st.x, st.r, st.u, s))?;
    Ok(GeneralExtState { x: step.x, r: step.r, u: step.u })
}

/// Inverse of [`mh_forward`] for the same `s` and offset.
pub fn mh_inverse(
    target: &DiscreteTarget,
    proposal: &ProposalFamily,
    st: &GeneralExtState,
    s: f64,
    delta: Option<i64>,
) -> Result<GeneralExtState> {
    check_mh_state(target, proposal, st)?;
    let step = with_family(proposal, delta, |p| mh_map_inverse(target, p, &st.x, st.r, st.u, s))?;
    Ok(GeneralExtState { x: step.x, r: step.r, u: step.u })
}

/// Transition matrix induced by proposing from `proposal` and accepting
/// with the Metropolis–Hastings probability.
pub fn mh_transition_matrix(target: &DiscreteTarget, proposal: &MatrixProposal) -> Vec<Vec<f64>> {
    let m = target.num_states();
    (0..m)
        .map(|x| {
            let lp = target.log_density(&x);
            let mut row: Vec<f64> = (0..m)
                .map(|y| if y == x { 0.0 } else { proposal.prob(x, y) * acceptance(target, proposal, &x, lp, &y) })
                .collect();
            row[x] = 1.0 - row.iter().sum::<f64>();
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{mh_four_state, three_state};
    use crate::numeric::jacobian_det;
    use crate::stats::chi_square_gof;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &GeneralExtState, x: usize, r: f64, u: f64) -> bool {
        a.x == x && (a.r - r).abs() < 1e-12 && (a.u - u).abs() < 1e-12
    }

    #[test]
    fn reverse_kernel_of_three_state_example() {
        let k = three_state();
        let expect = [[1.0 / 3.0, 0.0, 2.0 / 3.0], [1.0, 0.0, 0.0], [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]];
        for (x, row) in expect.iter().enumerate() {
            for (y, v) in row.iter().enumerate() {
                assert!((k.reverse_prob(x, y) - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn golden_forward_values() {
        let k = three_state();
        let cases = [
            ((1, 0.5, 0.5, 0.0), (2, 0.5, 0.25)),
            ((0, 0.3, 0.1, 0.2), (0, 0.3, 0.3)),
            ((2, 0.7, 0.6, 0.45), (2, 0.4, 0.25)),
            ((1, 0.9, 0.05, 0.99), (2, 0.05, 23.0 / 75.0)),
        ];
        for ((x, r, u, s), (ex, er, eu)) in cases {
            let out = forward(&k, &GeneralExtState::new(x, r, u), s).unwrap();
            assert!(close(&out, ex, er, eu), "{out:?}");
            let back = inverse(&k, &out, s).unwrap();
            assert!(close(&back, x, r, u), "{back:?}");
        }
    }

    #[test]
    fn identity_kernel_swaps_coordinates() {
        let target = DiscreteTarget::new(vec![1.0; 3]).unwrap();
        let id = (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let k = GeneralKernel::new(target, id).unwrap();
        let out = forward(&k, &GeneralExtState::new(1, 0.25, 0.625), 0.5).unwrap();
        assert!(close(&out, 1, 0.625, 0.75));
        let back = inverse(&k, &out, 0.5).unwrap();
        assert!(close(&back, 1, 0.25, 0.625));
    }

    #[test]
    fn invalid_kernels_rejected() {
        let target = DiscreteTarget::new(vec![0.5, 0.5]).unwrap();
        assert!(GeneralKernel::new(target.clone(), vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(GeneralKernel::new(target.clone(), vec![vec![1.0, 0.0], vec![1.0, 0.0]]).is_err());
        assert!(GeneralKernel::new(target, vec![vec![1.0, 0.0]]).is_err());
        assert!(DiscreteTarget::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn parse_kernel_text() {
        let k = GeneralKernel::parse("# three states\n3\n0.3 0.1 0.6\n0.3333333333333333 0.3333333333333333 0.3333333333333334\n0 0 1\n0.3333333333333333 0 0.6666666666666667\n").unwrap();
        assert!((k.reverse_prob(2, 0) - 1.0 / 6.0).abs() < 1e-12);
        assert!(GeneralKernel::parse("2\n1 1\n1 x\n0 1\n").is_err());
    }

    #[test]
    fn out_of_range_states() {
        let k = three_state();
        assert!(forward(&k, &GeneralExtState::new(3, 0.1, 0.1), 0.0).is_err());
        assert!(forward(&k, &GeneralExtState::new(0, 1.0, 0.1), 0.0).is_err());
        assert!(inverse(&k, &GeneralExtState::new(0, 0.1, -0.1), 0.0).is_err());
    }

    #[test]
    fn boundary_value_goes_to_upper_cell() {
        let k = three_state();
        let out = forward(&k, &GeneralExtState::new(0, 0.5, 1.0 / 3.0), 0.0).unwrap();
        assert_eq!(out.x, 1);
        assert_eq!(out.r, 0.0);
    }

    #[test]
    fn mod1_stays_below_one() {
        assert_eq!(mod1(-1e-300), BELOW_ONE);
        assert_eq!(mod1(2.25), 0.25);
        assert_eq!(mod1(-0.25), 0.75);
    }

    #[test]
    fn random_round_trips() {
        let k = three_state();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20_000 {
            let st = GeneralExtState::new(rng.random_range(0..3), rng.random(), rng.random());
            let s: f64 = rng.random();
            let back = inverse(&k, &forward(&k, &st, s).unwrap(), s).unwrap();
            assert_eq!(back.x, st.x);
            assert!((back.r - st.r).abs() < 1e-9 && (back.u - st.u).abs() < 1e-9);
            let again = forward(&k, &inverse(&k, &st, s).unwrap(), s).unwrap();
            assert_eq!(again.x, st.x);
            assert!((again.r - st.r).abs() < 1e-9 && (again.u - st.u).abs() < 1e-9);
        }
    }

    fn wrap(d: f64) -> f64 {
        d - d.round()
    }

    #[test]
    fn unit_jacobian_in_slice_coordinates() {
        let k = three_state();
        let t = k.target().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 300 {
            let x = rng.random_range(0..3);
            let p = [rng.random::<f64>() * t.pi(x), rng.random()];
            let s: f64 = rng.random();
            let base = forward(&k, &GeneralExtState::from_y_star(&t, x, p[0], p[1]), s).unwrap();
            let f = |q: [f64; 2]| {
                let out = forward(&k, &GeneralExtState::from_y_star(&t, x, q[0], q[1]), s).ok()?;
                (out.x == base.x).then(|| [out.y_star(&t), base.u + wrap(out.u - base.u)])
            };
            if let Some(det) = jacobian_det(f, p, 1e-7) {
                assert!((det.abs() - 1.0).abs() < 1e-5, "det {det}");
                checked += 1;
            }
        }
    }

    #[test]
    fn stationarity_with_fixed_offsets() {
        let k = three_state();
        let probs = k.target().normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let offsets: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let mut counts = [0u64; 3];
        for _ in 0..20_000 {
            let v: f64 = rng.random();
            let x = if v < probs[0] { 0 } else if v < probs[0] + probs[1] { 1 } else { 2 };
            let mut st = GeneralExtState::new(x, rng.random(), rng.random());
            for &s in &offsets {
                st = forward(&k, &st, s).unwrap();
            }
            counts[st.x] += 1;
        }
        let (_, p) = chi_square_gof(&counts, &probs);
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn mh_golden_values() {
        let (target, s) = mh_four_state();
        let fam = ProposalFamily::FullMatrix(s);
        // rejected: proposal 1 with residual 0.8 >= 2/3
        let st = GeneralExtState::from_y_star(&target, 0, 0.2, 0.9);
        let out = mh_forward(&target, &fam, &st, 0.0, None).unwrap();
        assert_eq!(out.x, 0);
        assert!((out.y_star(&target) - 0.2).abs() < 1e-15 && (out.u - 0.9).abs() < 1e-15);
        // self-proposal is always accepted
        let out = mh_forward(&target, &fam, &GeneralExtState::new(0, 0.5, 0.1), 0.0, None).unwrap();
        assert!(close(&out, 0, 0.2, 0.25));
        let a = mh_forward(&target, &fam, &GeneralExtState::new(2, 0.25, 5.0 / 6.0), 0.3, None).unwrap();
        assert!(close(&a, 3, 2.0 / 3.0, 0.425), "{a:?}");
        let b = mh_forward(&target, &fam, &GeneralExtState::new(3, 0.4, 0.25), 0.7, None).unwrap();
        assert!(close(&b, 2, 0.5, 0.4666666666666667), "{b:?}");
    }

    #[test]
    fn mh_induced_kernel_matches_printed_matrix() {
        let (target, s) = mh_four_state();
        let t = mh_transition_matrix(&target, &s);
        let printed = [
            [0.5 + 1.0 / 6.0, 1.0 / 3.0, 0.0, 0.0],
            [1.0 / 3.0, 1.0 / 3.0 + 1.0 / 9.0, 2.0 / 9.0, 0.0],
            [0.0, 1.0 / 3.0, 1.0 / 3.0 + 1.0 / 12.0, 0.25],
            [0.0, 0.0, 0.5, 0.5],
        ];
        for x in 0..4 {
            for y in 0..4 {
                assert!((t[x][y] - printed[x][y]).abs() < 1e-14);
            }
        }
        let fam = ProposalFamily::FullMatrix(s);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for x in 0..4 {
            let mut counts = [0u64; 4];
            for _ in 0..20_000 {
                let st = GeneralExtState::new(x, rng.random(), rng.random());
                counts[mh_forward(&target, &fam, &st, 0.0, None).unwrap().x] += 1;
            }
            let (_, p) = chi_square_gof(&counts, &t[x]);
            assert!(p > 1e-3, "row {x}: p = {p}");
        }
    }

    #[test]
    fn mh_involution_and_round_trip() {
        let (target, s) = mh_four_state();
        let fam = ProposalFamily::FullMatrix(s);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let st = GeneralExtState::new(rng.random_range(0..4), rng.random(), rng.random());
            let once = mh_forward(&target, &fam, &st, 0.0, None).unwrap();
            assert_eq!(mh_inverse(&target, &fam, &st, 0.0, None).unwrap(), once);
            let twice = mh_forward(&target, &fam, &once, 0.0, None).unwrap();
            assert_eq!(twice.x, st.x);
            assert!((twice.r - st.r).abs() < 1e-9 && (twice.u - st.u).abs() < 1e-9);
            let s: f64 = rng.random();
            let back = mh_inverse(&target, &fam, &mh_forward(&target, &fam, &st, s, None).unwrap(), s, None).unwrap();
            assert_eq!(back.x, st.x);
            assert!((back.r - st.r).abs() < 1e-9 && (back.u - st.u).abs() < 1e-9);
        }
    }

    #[test]
    fn group_walk_mixture_keeps_target() {
        let target = DiscreteTarget::new(vec![1.0, 4.0, 2.0, 0.5, 3.0]).unwrap();
        let probs = target.normalized();
        let fam = ProposalFamily::GroupWalk { modulus: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let driving: Vec<(f64, i64)> = (0..20).map(|_| (rng.random(), rng.random_range(0..5))).collect();
        let mut counts = [0u64; 5];
        for _ in 0..20_000 {
            let v: f64 = rng.random();
            let mut acc = 0.0;
            let x = probs.iter().position(|p| {
                acc += p;
                v < acc
            });
            let mut st = GeneralExtState::new(x.unwrap_or(4), rng.random(), rng.random());
            for &(s, d) in &driving {
                let next = mh_forward(&target, &fam, &st, s, Some(d)).unwrap();
                let back = mh_inverse(&target, &fam, &next, s, Some(d)).unwrap();
                assert_eq!(back.x, st.x);
                st = next;
            }
            counts[st.x] += 1;
        }
        let (_, p) = chi_square_gof(&counts, &probs);
        assert!(p > 1e-3, "p = {p}");
        assert!(mh_forward(&target, &fam, &GeneralExtState::new(0, 0.1, 0.1), 0.0, None).is_err());
    }

    #[test]
    fn mh_unit_jacobian() {
        let (target, prop) = mh_four_state();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut checked = 0;
        while checked < 300 {
            let x = rng.random_range(0..4);
            let p = [rng.random::<f64>() * target.pi(x), rng.random()];
            let s: f64 = rng.random();
            let eval = |q: [f64; 2]| mh_map(&target, &prop, &x, q[0] / target.pi(x), q[1], s).ok();
            let base = eval(p).unwrap();
            let f = |q: [f64; 2]| {
                let out = eval(q)?;
                (out.x == base.x && out.accepted == base.accepted)
                    .then(|| [out.r * target.pi(out.x), base.u + wrap(out.u - base.u)])
            };
            if let Some(det) = jacobian_det(f, p, 1e-7) {
                assert!((det.abs() - 1.0).abs() < 1e-5, "det {det}");
                checked += 1;
            }
        }
    }
}
