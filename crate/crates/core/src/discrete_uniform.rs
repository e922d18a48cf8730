//! Exact permutation form of a transition that leaves the uniform
//! distribution on `{0, .., M-1}` invariant.
//!
//! Transition probabilities are integer multiples of `1/Q`, stored as counts
//! `Q * T(x, x')`. The extended state is `(x, u)` with `u` in `{0, .., Q-1}`,
//! and for each driving value `s` the forward update is a permutation of the
//! `M * Q` extended states. All arithmetic is in integers.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Largest extended space [`verify_permutation`] will enumerate.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UniformExtState {
    pub x: usize,
    pub u: u64,
}

impl UniformExtState {
    pub fn new(x: usize, u: u64) -> Self {
        Self { x, u }
    }
}

/// Counts matrix `Q * T` with every row and every column summing to `Q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UniformKernel {
    m: usize,
    q: u64,
    counts: Vec<u64>,
    reverse: Vec<u64>,
}

impl UniformKernel {
    /// `counts` is row-major, `m * m` entries.
    pub fn new(m: usize, q: u64, counts: Vec<u64>) -> Result<Self> {
        if m == 0 || q == 0 {
            return Err(Error::InvalidKernel("M and Q must be positive".into()));
        }
        if counts.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                got: counts.len(),
            });
        }
        for x in 0..m {
            let row: u64 = counts[x * m..(x + 1) * m].iter().sum();
            if row != q {
                return Err(Error::InvalidKernel(format!("row {x} sums to {row}, not Q = {q}")));
            }
            let col: u64 = (0..m).map(|z| counts[z * m + x]).sum();
            if col != q {
                return Err(Error::InvalidKernel(format!(
                    "column {x} sums to {col}, not Q = {q}; the uniform distribution is not invariant"
                )));
            }
        }
        let mut reverse = vec![0; m * m];
        for x in 0..m {
            for z in 0..m {
                reverse[x * m + z] = counts[z * m + x];
            }
        }
        Ok(Self { m, q, counts, reverse })
    }

    /// Identity transitions with `Q = 1`.
    pub fn identity(m: usize) -> Self {
        let mut counts = vec![0; m * m];
        for x in 0..m {
            counts[x * m + x] = 1;
        }
        Self::new(m, 1, counts).expect("identity kernel is valid")
    }

    /// Parses the text format: a line `M Q`, then `M` rows of `M` counts.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "empty kernel file".into(),
        })?;
        let nums = parse_numbers::<u64>(header, hline)?;
        if nums.len() != 2 {
            return Err(Error::Parse {
                line: hline,
                msg: "expected header `M Q`".into(),
            });
        }
        let (m, q) = (nums[0] as usize, nums[1]);
        let mut counts = Vec::with_capacity(m * m);
        for _ in 0..m {
            let (line, row) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("expected {m} rows of counts"),
            })?;
            let row = parse_numbers::<u64>(row, line)?;
            if row.len() != m {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {m} counts, found {}", row.len()),
                });
            }
            counts.extend(row);
        }
        if let Some((line, _)) = lines.next() {
            return Err(Error::Parse {
                line,
                msg: "unexpected trailing content".into(),
            });
        }
        Self::new(m, q, counts)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.m, self.q);
        for x in 0..self.m {
            let row: Vec<String> = self.row(x).iter().map(|c| c.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn num_states(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.m + to]
    }

    pub fn reverse_count(&self, from: usize, to: usize) -> u64 {
        self.reverse[from * self.m + to]
    }

    pub fn row(&self, x: usize) -> &[u64] {
        &self.counts[x * self.m..(x + 1) * self.m]
    }

    pub fn is_reversible(&self) -> bool {
        self.counts == self.reverse
    }

    fn cum(table: &[u64], m: usize, row: usize, upto: usize) -> u64 {
        table[row * m..row * m + upto].iter().sum()
    }

    /// `max { x' : sum_{z < x'} table[row][z] <= u }`
    fn select(table: &[u64], m: usize, row: usize, u: u64) -> (usize, u64) {
        let mut cum = 0;
        let mut pick = (0, 0);
        for (z, &c) in table[row * m..(row + 1) * m].iter().enumerate() {
            if cum > u {
                break;
            }
            pick = (z, cum);
            cum += c;
        }
        pick
    }

    fn check(&self, st: UniformExtState, s: u64) -> Result<()> {
        if st.x >= self.m || st.u >= self.q || s >= self.q {
            return Err(Error::OutOfRange(format!(
                "(x={}, u={}, s={s}) with M={}, Q={}",
                st.x, st.u, self.m, self.q
            )));
        }
        Ok(())
    }

    pub fn forward(&self, st: UniformExtState, s: u64) -> Result<UniformExtState> {
        self.check(st, s)?;
        Ok(self.forward_with(st, s, UpdateRule::Permutation))
    }

    fn forward_with(&self, st: UniformExtState, s: u64, rule: UpdateRule) -> UniformExtState {
        let (next, cum) = Self::select(&self.counts, self.m, st.x, st.u);
        let u = match rule {
            UpdateRule::Permutation => {
                let back = Self::cum(&self.reverse, self.m, next, st.x);
                (s + (st.u - cum) + back) % self.q
            }
            UpdateRule::NaiveShift => (s + st.u) % self.q,
        };
        UniformExtState { x: next, u }
    }

    pub fn inverse(&self, st: UniformExtState, s: u64) -> Result<UniformExtState> {
        self.check(st, s)?;
        let w = (st.u + self.q - s) % self.q;
        let (prev, back) = Self::select(&self.reverse, self.m, st.x, w);
        let cum = Self::cum(&self.counts, self.m, prev, st.x);
        Ok(UniformExtState {
            x: prev,
            u: (w - back + cum) % self.q,
        })
    }
}

fn parse_numbers<T: std::str::FromStr>(line: &str, lineno: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    line.split_whitespace()
        .map(|p| {
            p.parse::<T>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("{p:?}: {e}"),
            })
        })
        .collect()
}

/// How `u` is updated after `x` moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    /// The reverse-cumulative update that makes the map a permutation.
    Permutation,
    /// `u' = s + u mod Q`: kept only to demonstrate that it is not one-to-one.
    NaiveShift,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Bijection,
    /// States with two or more preimages.
    Collision(Vec<UniformExtState>),
}

impl Verdict {
    pub fn is_bijection(&self) -> bool {
        matches!(self, Verdict::Bijection)
    }
}

pub fn verify_permutation(kernel: &UniformKernel, s: u64) -> Result<Verdict> {
    verify_permutation_with(kernel, s, UpdateRule::Permutation)
}

/// Applies the forward map to every extended state and reports collisions.
pub fn verify_permutation_with(kernel: &UniformKernel, s: u64, rule: UpdateRule) -> Result<Verdict> {
    let image = forward_table(kernel, s, rule)?;
    let mut hits: HashMap<UniformExtState, u32> = HashMap::with_capacity(image.len());
    for st in image {
        *hits.entry(st).or_default() += 1;
    }
    let mut collisions: Vec<_> = hits.into_iter().filter(|&(_, n)| n >= 2).map(|(st, _)| st).collect();
    if collisions.is_empty() {
        Ok(Verdict::Bijection)
    } else {
        collisions.sort();
        Ok(Verdict::Collision(collisions))
    }
}

/// Image of every extended state, in `(x, u)` lexicographic order.
pub fn forward_table(kernel: &UniformKernel, s: u64, rule: UpdateRule) -> Result<Vec<UniformExtState>> {
    let size = kernel.m as u64 * kernel.q;
    if size > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    if s >= kernel.q {
        return Err(Error::OutOfRange(format!("s={s} with Q={}", kernel.q)));
    }
    let mut image = Vec::with_capacity(size as usize);
    for x in 0..kernel.m {
        for u in 0..kernel.q {
            image.push(kernel.forward_with(UniformExtState { x, u }, s, rule));
        }
    }
    Ok(image)
}
