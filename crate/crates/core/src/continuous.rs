//! Volume-preserving maps on `(x*, u*, y*, v*)` for one-dimensional
//! continuous updates.
//!
//! As in the discrete case the state stores `r = y*/pi(x)`. Multivariate
//! chains apply these updates one coordinate at a time.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

use crate::discrete_general::{check_unit, clamp_unit, mh_map, mh_map_inverse, mod1, Proposal, Target};
use crate::error::{Error, Result};

const INVERSION_TOL: f64 = 1e-12;

/// A one-dimensional distribution with computable CDF and inverse.
pub trait ConditionalLaw {
    /// Density, possibly unnormalized; zero outside the support.
    fn density(&self, x: f64) -> f64;
    fn cdf(&self, x: f64) -> f64;
    /// Largest `x` with `cdf(x) = u`.
    fn inv_cdf(&self, u: f64) -> Result<f64>;
    fn support(&self) -> (f64, f64);
}

/// `sup { x in [lo, hi] : cdf(x) <= u }` by bisection.
pub fn rightmost_inverse(cdf: impl Fn(f64) -> f64, u: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi || cdf(lo) > u {
        return Err(Error::InversionFailure { u });
    }
    if cdf(hi) <= u {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) <= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 - Phi(z)`.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Standard normal quantile.
pub fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Normal law truncated to `[lo, hi]`; either end may be infinite.
///
/// When the lower bound lies above the mean the CDF is computed from upper
/// tail probabilities, which keeps precision far out in the tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    upper_tail: bool,
    base: f64,
    mass: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) || lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidTarget(format!(
                "truncated normal mean {mean} sd {sd} on ({lo}, {hi})"
            )));
        }
        let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
        let upper_tail = a > 0.0;
        let (base, mass) = if upper_tail {
            let qa = std_normal_sf(a);
            (qa, qa - std_normal_sf(b))
        } else {
            let pa = std_normal_cdf(a);
            (pa, std_normal_cdf(b) - pa)
        };
        if !(mass > 0.0) {
            return Err(Error::InvalidTarget(format!("no probability mass on ({lo}, {hi})")));
        }
        Ok(Self { mean, sd, lo, hi, upper_tail, base, mass })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new(mean, sd, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    fn closed_form_inverse(&self, u: f64) -> f64 {
        let z = if self.upper_tail {
            let q = (self.base - u * self.mass).max(f64::MIN_POSITIVE);
            -std_normal_quantile(q)
        } else {
            let p = (self.base + u * self.mass).max(f64::MIN_POSITIVE);
            std_normal_quantile(p.min(1.0))
        };
        (self.mean + self.sd * z).clamp(self.finite_lo(), self.finite_hi())
    }

    fn finite_lo(&self) -> f64 {
        self.lo.max(self.mean - 40.0 * self.sd)
    }

    fn finite_hi(&self) -> f64 {
        self.hi.min(self.mean + 40.0 * self.sd)
    }
}

impl ConditionalLaw for TruncatedNormal {
    fn density(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        std_normal_pdf((x - self.mean) / self.sd) / (self.sd * self.mass)
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let z = (x - self.mean) / self.sd;
        let v = if self.upper_tail {
            (self.base - std_normal_sf(z)) / self.mass
        } else {
            (std_normal_cdf(z) - self.base) / self.mass
        };
        v.clamp(0.0, 1.0)
    }

    fn inv_cdf(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InversionFailure { u });
        }
        let (lo, hi) = (self.finite_lo(), self.finite_hi());
        let mut x = self.closed_form_inverse(u);
        let mut err = self.cdf(x) - u;
        for _ in 0..4 {
            if err.abs() <= INVERSION_TOL {
                break;
            }
            let d = self.density(x);
            if !(d > 0.0) {
                break;
            }
            let next = (x - err / d).clamp(lo, hi);
            let next_err = self.cdf(next) - u;
            if next_err.abs() >= err.abs() {
                break;
            }
            x = next;
            err = next_err;
        }
        if err.abs() <= INVERSION_TOL {
            Ok(x)
        } else {
            rightmost_inverse(|v| self.cdf(v), u, lo, hi)
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// Exponential law with the given rate on `[0, inf)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponential {
    rate: f64,
}

impl Exponential {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidTarget(format!("exponential rate {rate}")));
        }
        Ok(Self { rate })
    }
}

impl ConditionalLaw for Exponential {
    fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.rate * (-self.rate * x).exp()
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-self.rate * x).exp_m1()
        }
    }

    fn inv_cdf(&self, u: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::InversionFailure { u });
        }
        Ok(-(-u).ln_1p() / self.rate)
    }

    fn support(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }
}

/// Extended state `(x*, u*, y*/pi(x*), v*)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContExtState<X = f64> {
    pub x: X,
    pub u: f64,
    pub r: f64,
    pub v: f64,
}

impl<X> ContExtState<X> {
    pub fn new(x: X, u: f64, r: f64, v: f64) -> Self {
        Self { x, u, r, v }
    }

    fn check(&self) -> Result<()> {
        check_unit("u", self.u)?;
        check_unit("r", self.r)?;
        check_unit("v", self.v)
    }
}

fn check_in_support<L: ConditionalLaw + ?Sized>(law: &L, x: f64) -> Result<()> {
    if law.density(x) > 0.0 {
        Ok(())
    } else {
        Err(Error::DegenerateLaw { x })
    }
}

/// Gibbs update of one coordinate: `x' = F^-1(u)`, `u' = s + F(x)`,
/// `r' = v`, `v' = t + r`.
pub fn gibbs_forward<L: ConditionalLaw + ?Sized>(law: &L, st: &ContExtState, s: f64, t: f64) -> Result<ContExtState> {
    st.check()?;
    let (x, u) = gibbs_forward_xu(law, st.x, st.u, s)?;
    Ok(ContExtState { x, u, r: st.v, v: mod1(t + st.r) })
}

/// The `(x, u)` part of [`gibbs_forward`] alone, for runs that never need
/// the slice coordinates.
pub fn gibbs_forward_xu<L: ConditionalLaw + ?Sized>(law: &L, x: f64, u: f64, s: f64) -> Result<(f64, f64)> {
    check_in_support(law, x)?;
    Ok((law.inv_cdf(u)?, mod1(s + law.cdf(x))))
}

/// Inverse of [`gibbs_forward`] for the same `s` and `t`.
pub fn gibbs_inverse<L: ConditionalLaw + ?Sized>(law: &L, st: &ContExtState, s: f64, t: f64) -> Result<ContExtState> {
    st.check()?;
    check_in_support(law, st.x)?;
    Ok(ContExtState {
        x: law.inv_cdf(mod1(st.u - s))?,
        u: clamp_unit(law.cdf(st.x)),
        r: mod1(st.v - t),
        v: st.r,
    })
}

/// A transition kernel on the real line with CDFs for it and its reversal.
pub trait ContinuousKernel {
    /// Invariant density, possibly unnormalized.
    fn density(&self, x: f64) -> f64;
    /// `F(from, to)`: CDF of the next state given `from`.
    fn cdf(&self, from: f64, to: f64) -> f64;
    fn inv_cdf(&self, from: f64, u: f64) -> Result<f64>;
    /// CDF of the reversed kernel.
    fn reverse_cdf(&self, from: f64, to: f64) -> f64;
    fn reverse_inv_cdf(&self, from: f64, u: f64) -> Result<f64>;
}

/// Kernel that draws the next state from a fixed law; this is Gibbs sampling.
#[derive(Clone, Copy, Debug)]
pub struct Independence<L>(pub L);

impl<L: ConditionalLaw> ContinuousKernel for Independence<L> {
    fn density(&self, x: f64) -> f64 {
        self.0.density(x)
    }

    fn cdf(&self, _from: f64, to: f64) -> f64 {
        self.0.cdf(to)
    }

    fn inv_cdf(&self, _from: f64, u: f64) -> Result<f64> {
        self.0.inv_cdf(u)
    }

    fn reverse_cdf(&self, _from: f64, to: f64) -> f64 {
        self.0.cdf(to)
    }

    fn reverse_inv_cdf(&self, _from: f64, u: f64) -> Result<f64> {
        self.0.inv_cdf(u)
    }
}

/// `x' ~ N(c x, 1 - c^2)`, reversible with respect to `N(0, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct Autoregressive {
    coef: f64,
    sd: f64,
}

impl Autoregressive {
    pub fn new(coef: f64) -> Result<Self> {
        if !(coef.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!("autoregressive coefficient {coef}")));
        }
        Ok(Self { coef, sd: (1.0 - coef * coef).sqrt() })
    }

    fn law(&self, from: f64) -> Result<TruncatedNormal> {
        TruncatedNormal::normal(self.coef * from, self.sd)
    }
}

impl ContinuousKernel for Autoregressive {
    fn density(&self, x: f64) -> f64 {
        std_normal_pdf(x)
    }

    fn cdf(&self, from: f64, to: f64) -> f64 {
        std_normal_cdf((to - self.coef * from) / self.sd)
    }

    fn inv_cdf(&self, from: f64, u: f64) -> Result<f64> {
        self.law(from)?.inv_cdf(u)
    }

    fn reverse_cdf(&self, from: f64, to: f64) -> f64 {
        self.cdf(from, to)
    }

    fn reverse_inv_cdf(&self, from: f64, u: f64) -> Result<f64> {
        self.inv_cdf(from, u)
    }
}

/// General map: `x' = F^-1(x, u)`, `u' = s + F~(x', x)`, `r' = v`,
/// `v' = t + r`.
pub fn general_forward<K: ContinuousKernel + ?Sized>(kernel: &K, st: &ContExtState, s: f64, t: f64) -> Result<ContExtState> {
    st.check()?;
    if !(kernel.density(st.x) > 0.0) {
        return Err(Error::DegenerateLaw { x: st.x });
    }
    let x = kernel.inv_cdf(st.x, st.u)?;
    Ok(ContExtState { x, u: mod1(s + kernel.reverse_cdf(x, st.x)), r: st.v, v: mod1(t + st.r) })
}

/// Inverse of [`general_forward`] for the same `s` and `t`.
pub fn general_inverse<K: ContinuousKernel + ?Sized>(kernel: &K, st: &ContExtState, s: f64, t: f64) -> Result<ContExtState> {
    st.check()?;
    if !(kernel.density(st.x) > 0.0) {
        return Err(Error::DegenerateLaw { x: st.x });
    }
    let x = kernel.reverse_inv_cdf(st.x, mod1(st.u - s))?;
    Ok(ContExtState { x, u: clamp_unit(kernel.cdf(x, st.x)), r: mod1(st.v - t), v: st.r })
}

/// Adapts a log-density closure to [`Target`].
#[derive(Clone, Copy, Debug)]
pub struct LogDensityFn<F>(pub F);

impl<X, F: Fn(&X) -> f64> Target<X> for LogDensityFn<F> {
    fn log_density(&self, x: &X) -> f64 {
        (self.0)(x)
    }
}

/// Two-point walk `x - |delta|`, `x + |delta|` with probability one half each.
#[derive(Clone, Copy, Debug)]
pub struct ScalarWalk {
    pub delta: f64,
}

impl Proposal<f64> for ScalarWalk {
    fn candidates(&self, from: &f64) -> Vec<(f64, f64)> {
        let d = self.delta.abs();
        if d == 0.0 {
            vec![(*from, 1.0)]
        } else {
            vec![(from - d, 0.5), (from + d, 0.5)]
        }
    }

    fn slot(&self, from: &f64, to: &f64) -> (f64, f64) {
        match (self.delta == 0.0, to.partial_cmp(from)) {
            (true, Some(std::cmp::Ordering::Equal)) => (0.0, 1.0),
            (false, Some(std::cmp::Ordering::Less)) => (0.0, 0.5),
            (false, Some(std::cmp::Ordering::Greater)) => (0.5, 0.5),
            _ => (0.0, 0.0),
        }
    }
}

/// Two-point walk `x - delta`, `x + delta` on `R^D`, ordered by the first
/// coordinate in which `delta` is nonzero.
#[derive(Clone, Copy, Debug)]
pub struct VectorWalk<const D: usize> {
    pub delta: [f64; D],
}

impl<const D: usize> VectorWalk<D> {
    fn lead(&self) -> Option<(usize, f64)> {
        self.delta.iter().position(|d| *d != 0.0).map(|k| (k, self.delta[k].abs()))
    }

    fn shifted(&self, from: &[f64; D], sign: f64) -> [f64; D] {
        let mut out = *from;
        for (o, d) in out.iter_mut().zip(&self.delta) {
            *o += sign * d;
        }
        out
    }
}

impl<const D: usize> Proposal<[f64; D]> for VectorWalk<D> {
    fn candidates(&self, from: &[f64; D]) -> Vec<([f64; D], f64)> {
        match self.lead() {
            None => vec![(*from, 1.0)],
            Some((k, _)) => {
                let (a, b) = (self.shifted(from, -1.0), self.shifted(from, 1.0));
                if a[k] < b[k] {
                    vec![(a, 0.5), (b, 0.5)]
                } else {
                    vec![(b, 0.5), (a, 0.5)]
                }
            }
        }
    }

    fn slot(&self, from: &[f64; D], to: &[f64; D]) -> (f64, f64) {
        match self.lead() {
            None if from == to => (0.0, 1.0),
            None => (0.0, 0.0),
            Some((k, _)) if to[k] < from[k] => (0.0, 0.5),
            Some((k, _)) if to[k] > from[k] => (0.5, 0.5),
            Some(_) => (0.0, 0.0),
        }
    }
}

/// Metropolis–Hastings map on a continuous state; `v*` is left unchanged.
pub fn metropolis_forward<X, T, P>(target: &T, proposal: &P, st: &ContExtState<X>, s: f64) -> Result<ContExtState<X>>
where
    X: Clone + PartialEq,
    T: Target<X> + ?Sized,
    P: Proposal<X> + ?Sized,
{
    st.check()?;
    if target.log_density(&st.x) == f64::NEG_INFINITY {
        return Err(Error::InvalidSample("state has zero density".into()));
    }
    let step = mh_map(target, proposal, &st.x, st.r, st.u, s)?;
    Ok(ContExtState { x: step.x, u: step.u, r: step.r, v: st.v })
}

/// Inverse of [`metropolis_forward`] for the same `s` and proposal.
pub fn metropolis_inverse<X, T, P>(target: &T, proposal: &P, st: &ContExtState<X>, s: f64) -> Result<ContExtState<X>>
where
    X: Clone + PartialEq,
    T: Target<X> + ?Sized,
    P: Proposal<X> + ?Sized,
{
    st.check()?;
    let step = mh_map_inverse(target, proposal, &st.x, st.r, st.u, s)?;
    Ok(ContExtState { x: step.x, u: step.u, r: step.r, v: st.v })
}

/// Random-walk Metropolis update of one scalar coordinate with offset `delta`.
pub fn metropolis_component_forward<T: Target<f64> + ?Sized>(
    target: &T,
    delta: f64,
    st: &ContExtState,
    s: f64,
) -> Result<ContExtState> {
    metropolis_forward(target, &ScalarWalk { delta }, st, s)
}

/// Inverse of [`metropolis_component_forward`].
pub fn metropolis_component_inverse<T: Target<f64> + ?Sized>(
    target: &T,
    delta: f64,
    st: &ContExtState,
    s: f64,
) -> Result<ContExtState> {
    metropolis_inverse(target, &ScalarWalk { delta }, st, s)
}
