//! Driving sequences: the `s`, `t` and offset values that pick out one
//! permutation (or volume-preserving map) per transition.
//!
//! Sequences are materialized up front so they can be replayed in either
//! direction, and can be written to / read from a plain-text sidecar file.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Seeded source of unit-interval uniforms.
///
/// Backed by ChaCha8, a counter-based generator with a fixed, platform
/// independent output for a given seed.
#[derive(Clone, Debug)]
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next value in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for UniformStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of a sub-stream from a master seed and a stream id.
pub fn derive_seed(master: u64, stream_id: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream_id.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Where the values of a driving sequence come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Origin {
    Seeded(u64),
    Constant(f64),
    Repeating(Vec<f64>),
    Explicit(Vec<f64>),
}

impl Origin {
    /// Checks that every pattern value lies in `[0, 1)`.
    pub fn validate(&self) -> Result<()> {
        let values: &[f64] = match self {
            Origin::Seeded(_) => return Ok(()),
            Origin::Constant(v) => std::slice::from_ref(v),
            Origin::Repeating(v) | Origin::Explicit(v) => v,
        };
        if let Origin::Repeating(v) = self {
            if v.is_empty() {
                return Err(Error::InvalidConfig("repeating pattern is empty".into()));
            }
        }
        for &v in values {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "pattern value {v} is outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn is_seeded(&self) -> bool {
        matches!(self, Origin::Seeded(_))
    }

    fn pattern_value(&self, i: usize) -> f64 {
        match self {
            Origin::Constant(v) => *v,
            Origin::Repeating(v) => v[i % v.len()],
            Origin::Explicit(v) => v[i],
            Origin::Seeded(_) => unreachable!("seeded origins have no pattern"),
        }
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_unit_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Seeded(seed) => write!(f, "seeded:{seed}"),
            Origin::Constant(v) => write!(f, "constant:{v}"),
            Origin::Repeating(v) => write!(f, "repeating:{}", join(v)),
            Origin::Explicit(_) => write!(f, "explicit"),
        }
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let origin = match kind {
            "seeded" => Origin::Seeded(rest.parse().map_err(|e| format!("bad seed: {e}"))?),
            "constant" => Origin::Constant(rest.parse().map_err(|e| format!("bad value: {e}"))?),
            "repeating" | "repeat" => Origin::Repeating(parse_unit_list(rest)?),
            // explicit values live in the file body, not the header
            "explicit" => Origin::Explicit(Vec::new()),
            other => return Err(format!("unknown origin kind {other:?}")),
        };
        if !matches!(origin, Origin::Explicit(_)) {
            origin.validate().map_err(|e| e.to_string())?;
        }
        Ok(origin)
    }
}

/// Draws proposal offsets from a uniform stream.
pub trait OffsetSampler {
    fn dim(&self) -> usize;
    fn draw(&self, stream: &mut UniformStream, out: &mut [f64]);
}

/// Independent zero-mean normal offsets in each coordinate.
#[derive(Clone, Copy, Debug)]
pub struct NormalOffsets {
    pub dim: usize,
    pub sd: f64,
}

impl OffsetSampler for NormalOffsets {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, stream: &mut UniformStream, out: &mut [f64]) {
        let normal = Normal::new(0.0, self.sd).expect("offset sd must be finite and non-negative");
        for o in out.iter_mut() {
            *o = normal.sample(stream);
        }
    }
}

/// Integer offsets drawn uniformly from `1..=max`, stored as floats.
#[derive(Clone, Copy, Debug)]
pub struct IntegerOffsets {
    pub max: u32,
}

impl OffsetSampler for IntegerOffsets {
    fn dim(&self) -> usize {
        1
    }

    fn draw(&self, stream: &mut UniformStream, out: &mut [f64]) {
        out[0] = (1 + stream.random_range(0..self.max)) as f64;
    }
}

/// Flat storage for a sequence of `dim`-dimensional offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Offsets {
    dim: usize,
    values: Vec<f64>,
}

impl Offsets {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidConfig(format!(
                "{} offset values do not split into dimension {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// The fixed values defining a sequence of transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivingSequence {
    origin: Origin,
    /// Set when `s` was replaced by a pattern after generation.
    s_origin: Option<Origin>,
    s: Vec<f64>,
    t: Option<Vec<f64>>,
    delta: Option<Offsets>,
}

/// Seed used for offsets when the origin is a deterministic pattern.
const PATTERN_OFFSET_SEED: u64 = 0;

impl DrivingSequence {
    /// Materializes `length` transitions' worth of driving values.
    ///
    /// A seeded origin draws `s_i`, then `t_i` (if requested), then `delta_i`
    /// (if requested) from one shared stream, step by step. Pattern origins
    /// give `s` and `t` the pattern values; their offsets come from a stream
    /// with a fixed seed.
    pub fn generate(
        origin: &Origin,
        length: usize,
        needs_t: bool,
        offsets: Option<&dyn OffsetSampler>,
    ) -> Self {
        let mut s = Vec::with_capacity(length);
        let mut t = needs_t.then(|| Vec::with_capacity(length));
        let dim = offsets.map_or(0, |o| o.dim());
        let mut delta = vec![0.0; dim * length];
        let mut stream = match origin {
            Origin::Seeded(seed) => UniformStream::new(*seed),
            _ => UniformStream::new(PATTERN_OFFSET_SEED),
        };
        for i in 0..length {
            match origin {
                Origin::Seeded(_) => {
                    s.push(stream.next_unit());
                    if let Some(t) = t.as_mut() {
                        t.push(stream.next_unit());
                    }
                }
                _ => {
                    let v = origin.pattern_value(i);
                    s.push(v);
                    if let Some(t) = t.as_mut() {
                        t.push(v);
                    }
                }
            }
            if let Some(sampler) = offsets {
                sampler.draw(&mut stream, &mut delta[i * dim..(i + 1) * dim]);
            }
        }
        Self {
            origin: origin.clone(),
            s_origin: None,
            s,
            t,
            delta: offsets.map(|_| Offsets { dim, values: delta }),
        }
    }

    /// Builds a sequence from explicit values.
    pub fn from_parts(s: Vec<f64>, t: Option<Vec<f64>>, delta: Option<Offsets>) -> Result<Self> {
        let seq = Self {
            origin: Origin::Explicit(s.clone()),
            s_origin: None,
            s,
            t,
            delta,
        };
        seq.check()?;
        Ok(seq)
    }

    /// Replaces `s` by a pattern, keeping `t` and the offsets.
    pub fn with_s_pattern(mut self, pattern: &Origin) -> Result<Self> {
        pattern.validate()?;
        if pattern.is_seeded() {
            return Err(Error::InvalidConfig("s pattern must be deterministic".into()));
        }
        if let Origin::Explicit(v) = pattern {
            if v.len() < self.s.len() {
                return Err(Error::DrivingExhausted {
                    needed: self.s.len(),
                    available: v.len(),
                });
            }
        }
        for (i, s) in self.s.iter_mut().enumerate() {
            *s = pattern.pattern_value(i);
        }
        self.s_origin = Some(pattern.clone());
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let n = self.s.len();
        let in_unit = |v: &f64| (0.0..1.0).contains(v);
        if !self.s.iter().all(in_unit) {
            return Err(Error::InvalidConfig("s values must lie in [0, 1)".into()));
        }
        if let Some(t) = &self.t {
            if t.len() != n || !t.iter().all(in_unit) {
                return Err(Error::InvalidConfig(
                    "t must have one value in [0, 1) per step".into(),
                ));
            }
        }
        if let Some(d) = &self.delta {
            if d.len() != n {
                return Err(Error::InvalidConfig("offsets must have one entry per step".into()));
            }
        }
        Ok(())
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    /// Origin of the `s` component (differs from [`origin`](Self::origin)
    /// after [`with_s_pattern`](Self::with_s_pattern)).
    pub fn s_origin(&self) -> &Origin {
        self.s_origin.as_ref().unwrap_or(&self.origin)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn t(&self) -> Option<&[f64]> {
        self.t.as_deref()
    }

    pub fn delta(&self) -> Option<&Offsets> {
        self.delta.as_ref()
    }

    /// `t_i`, or zero when the sequence carries no `t` component.
    pub fn t_at(&self, i: usize) -> f64 {
        self.t.as_ref().map_or(0.0, |t| t[i])
    }

    pub fn delta_at(&self, i: usize) -> Option<&[f64]> {
        self.delta.as_ref().map(|d| d.get(i))
    }

    /// Writes the sidecar text format: `#` header lines naming the origin and
    /// each component, then one value (or one space-separated offset) per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# driving-sequence")?;
        writeln!(w, "# origin {}", self.origin)?;
        if let Some(so) = &self.s_origin {
            writeln!(w, "# s-origin {so}")?;
        }
        writeln!(w, "# length {}", self.s.len())?;
        writeln!(w, "# component s")?;
        for v in &self.s {
            writeln!(w, "{v}")?;
        }
        if let Some(t) = &self.t {
            writeln!(w, "# component t")?;
            for v in t {
                writeln!(w, "{v}")?;
            }
        }
        if let Some(d) = &self.delta {
            writeln!(w, "# component delta {}", d.dim)?;
            for i in 0..d.len() {
                let row: Vec<String> = d.get(i).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        enum Section {
            None,
            S,
            T,
            Delta,
        }
        let mut origin = None;
        let mut s_origin = None;
        let mut length = None;
        let mut s = Vec::new();
        let mut t: Option<Vec<f64>> = None;
        let mut delta: Option<(usize, Vec<f64>)> = None;
        let mut section = Section::None;

        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = lineno + 1;
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let mut parts = header.split_whitespace();
                match parts.next() {
                    Some("driving-sequence") | None => {}
                    Some("origin") => {
                        let text = parts.next().ok_or_else(|| perr("missing origin".into()))?;
                        origin = Some(text.parse::<Origin>().map_err(perr)?);
                    }
                    Some("s-origin") => {
                        let text = parts.next().ok_or_else(|| perr("missing origin".into()))?;
                        s_origin = Some(text.parse::<Origin>().map_err(perr)?);
                    }
                    Some("length") => {
                        let text = parts.next().ok_or_else(|| perr("missing length".into()))?;
                        length = Some(text.parse::<usize>().map_err(|e| perr(e.to_string()))?);
                    }
                    Some("component") => match parts.next() {
                        Some("s") => section = Section::S,
                        Some("t") => {
                            t = Some(Vec::new());
                            section = Section::T;
                        }
                        Some("delta") => {
                            let dim = parts
                                .next()
                                .ok_or_else(|| perr("missing delta dimension".into()))?
                                .parse::<usize>()
                                .map_err(|e| perr(e.to_string()))?;
                            delta = Some((dim, Vec::new()));
                            section = Section::Delta;
                        }
                        other => return Err(perr(format!("unknown component {other:?}"))),
                    },
                    Some(other) => return Err(perr(format!("unknown header {other:?}"))),
                }
                continue;
            }
            let parse = |text: &str| text.parse::<f64>().map_err(|e| perr(format!("{text:?}: {e}")));
            match section {
                Section::None => return Err(perr("value before any component header".into())),
                Section::S => s.push(parse(line)?),
                Section::T => t.as_mut().expect("t section").push(parse(line)?),
                Section::Delta => {
                    let (dim, values) = delta.as_mut().expect("delta section");
                    let before = values.len();
                    for part in line.split_whitespace() {
                        values.push(parse(part)?);
                    }
                    if values.len() - before != *dim {
                        return Err(perr(format!("expected {dim} offset values")));
                    }
                }
            }
        }

        let origin = origin.ok_or_else(|| Error::Parse {
            line: 0,
            msg: "missing origin header".into(),
        })?;
        if let Some(n) = length {
            if n != s.len() {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("header says {n} values, found {}", s.len()),
                });
            }
        }
        let origin = match origin {
            Origin::Explicit(_) => Origin::Explicit(s.clone()),
            o => o,
        };
        let delta = delta.map(|(dim, v)| Offsets::new(dim, v)).transpose()?;
        let seq = Self {
            origin,
            s_origin,
            s,
            t,
            delta,
        };
        seq.check()?;
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_uniform;
    use proptest::prelude::*;

    #[test]
    fn repeating_pattern_cycles() {
        let seq = DrivingSequence::generate(&Origin::Repeating(vec![0.213, 0.631]), 4, false, None);
        assert_eq!(seq.s(), &[0.213, 0.631, 0.213, 0.631]);
    }

    #[test]
    fn constant_zero() {
        let seq = DrivingSequence::generate(&Origin::Constant(0.0), 3, true, None);
        assert_eq!(seq.s(), &[0.0, 0.0, 0.0]);
        assert_eq!(seq.t().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_sequence_is_valid() {
        let seq = DrivingSequence::generate(&Origin::Seeded(1), 0, true, None);
        assert!(seq.is_empty());
    }

    #[test]
    fn seeded_stream_is_uniform() {
        let seq = DrivingSequence::generate(&Origin::Seeded(42), 100_000, false, None);
        assert!(seq.s().iter().all(|v| (0.0..1.0).contains(v)));
        let (d, p) = ks_uniform(seq.s());
        // 0.001 critical value of the one-sample KS statistic is ~1.949/sqrt(n)
        assert!(d < 1.949 / (100_000f64).sqrt(), "KS statistic {d}");
        assert!(p > 0.001);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let off = NormalOffsets { dim: 2, sd: 4.0 };
        let a = DrivingSequence::generate(&Origin::Seeded(7), 500, true, Some(&off));
        let b = DrivingSequence::generate(&Origin::Seeded(7), 500, true, Some(&off));
        assert_eq!(a, b);
        let c = DrivingSequence::generate(&Origin::Seeded(8), 500, true, Some(&off));
        assert_ne!(a.s(), c.s());
    }

    #[test]
    fn s_pattern_override_keeps_offsets() {
        let off = NormalOffsets { dim: 1, sd: 4.0 };
        let base = DrivingSequence::generate(&Origin::Seeded(3), 10, false, Some(&off));
        let patterned = base.clone().with_s_pattern(&Origin::Constant(0.211)).unwrap();
        assert!(patterned.s().iter().all(|&v| v == 0.211));
        assert_eq!(patterned.delta(), base.delta());
        assert_eq!(patterned.s_origin(), &Origin::Constant(0.211));
    }

    #[test]
    fn pattern_values_must_be_unit() {
        assert!(Origin::Constant(1.0).validate().is_err());
        assert!(Origin::Repeating(vec![]).validate().is_err());
        assert!("constant:1.5".parse::<Origin>().is_err());
        assert_eq!(
            "repeat:0.2,0.6".parse::<Origin>().unwrap(),
            Origin::Repeating(vec![0.2, 0.6])
        );
    }

    #[test]
    fn integer_offsets_in_range() {
        let off = IntegerOffsets { max: 3 };
        let seq = DrivingSequence::generate(&Origin::Seeded(5), 200, false, Some(&off));
        let d = seq.delta().unwrap();
        assert!((0..d.len()).all(|i| (1.0..=3.0).contains(&d.get(i)[0])));
    }

    #[test]
    fn rejects_malformed_sidecar() {
        let text = "# driving-sequence\n# origin seeded:1\n0.5\n";
        assert!(DrivingSequence::read_from(text.as_bytes()).is_err());
        let text = "# driving-sequence\n# origin seeded:1\n# length 2\n# component s\n0.5\n";
        assert!(DrivingSequence::read_from(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn sidecar_round_trip_is_bit_exact(seed in any::<u64>(), len in 0usize..64, needs_t in any::<bool>(), dim in 0usize..3) {
            let off = NormalOffsets { dim: dim.max(1), sd: 2.5 };
            let sampler: Option<&dyn OffsetSampler> = if dim > 0 { Some(&off) } else { None };
            let seq = DrivingSequence::generate(&Origin::Seeded(seed), len, needs_t, sampler);
            let mut buf = Vec::new();
            seq.write_to(&mut buf).unwrap();
            let back = DrivingSequence::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, seq);
        }

        #[test]
        fn repeating_fidelity(values in prop::collection::vec(0.0f64..1.0, 1..5), len in 0usize..40) {
            let seq = DrivingSequence::generate(&Origin::Repeating(values.clone()), len, false, None);
            for (i, &s) in seq.s().iter().enumerate() {
                prop_assert_eq!(s, values[i % values.len()]);
            }
        }
    }
}
