//! Dyadic intervals and rectangles in `[0,1)` and `[0,1)²`.
//!
//! Intervals are `(level, index)` pairs, so containment, disjointness and
//! measures are exact integer computations. Rectangles and every basis
//! vector in the crate follow the canonical order: lexicographic in
//! `(x.level, x.index, y.level, y.index)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest level an interval may have (`index` must fit in `u64`).
pub const MAX_LEVEL: u32 = 62;

/// Default ceiling for the basis resolution `N`.
pub const DEFAULT_MAX_RESOLUTION: u32 = 6;

/// Environment variable overriding [`DEFAULT_MAX_RESOLUTION`].
pub const MAX_RESOLUTION_ENV: &str = "HARDY_FACTOR_MAX_N";

/// The configured resolution ceiling.
pub fn max_resolution() -> u32 {
    std::env::var(MAX_RESOLUTION_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<u32>().ok())
        .map(|n| n.min(MAX_LEVEL - 1))
        .unwrap_or(DEFAULT_MAX_RESOLUTION)
}

/// `d_n = 2^(n+1) - 1`, the number of dyadic intervals of level at most `n`.
pub fn interval_count(n: u32) -> usize {
    (1usize << (n + 1)) - 1
}

/// `[index·2^-level, (index+1)·2^-level)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicInterval {
    level: u32,
    index: u64,
}

impl DyadicInterval {
    pub const UNIT: DyadicInterval = DyadicInterval { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::ResolutionExceeded { level, max: MAX_LEVEL });
        }
        if index >= 1u64 << level {
            return Err(Error::Parse(format!("index {index} out of range at level {level}")));
        }
        Ok(Self { level, index })
    }

    pub fn level(self) -> u32 {
        self.level
    }

    pub fn index(self) -> u64 {
        self.index
    }

    /// Lebesgue measure `2^-level` (exact in `f64`).
    pub fn measure(self) -> f64 {
        pow2(-(self.level as i32))
    }

    /// Position in the order `(level, index)`: `2^level - 1 + index`.
    pub fn linear_index(self) -> usize {
        ((1u64 << self.level) - 1 + self.index) as usize
    }

    pub fn from_linear_index(i: usize) -> Self {
        let level = (i as u64 + 1).ilog2();
        Self { level, index: i as u64 + 1 - (1u64 << level) }
    }

    /// `(I⁺, I⁻)`: left and right halves.
    pub fn split(self) -> Result<(Self, Self)> {
        if self.level >= MAX_LEVEL {
            return Err(Error::ResolutionExceeded { level: self.level + 1, max: MAX_LEVEL });
        }
        let level = self.level + 1;
        Ok((
            Self { level, index: 2 * self.index },
            Self { level, index: 2 * self.index + 1 },
        ))
    }

    /// Left half `I⁺`.
    pub fn plus(self) -> Result<Self> {
        self.split().map(|(p, _)| p)
    }

    /// Right half `I⁻`.
    pub fn minus(self) -> Result<Self> {
        self.split().map(|(_, m)| m)
    }

    /// Smallest dyadic interval strictly containing `self`.
    pub fn parent(self) -> Option<Self> {
        (self.level > 0).then(|| Self { level: self.level - 1, index: self.index / 2 })
    }

    pub fn contains(self, other: Self) -> bool {
        other.level >= self.level && other.index >> (other.level - self.level) == self.index
    }

    pub fn intersects(self, other: Self) -> bool {
        self.contains(other) || other.contains(self)
    }

    /// Cells `[start, end)` of the level-`resolution` grid covered by `self`.
    pub fn cell_range(self, resolution: u32) -> Result<std::ops::Range<usize>> {
        if resolution < self.level {
            return Err(Error::InsufficientResolution { needed: self.level, got: resolution });
        }
        let shift = resolution - self.level;
        let start = (self.index << shift) as usize;
        Ok(start..start + (1usize << shift))
    }

    /// `h_I` on grid cell `cell` of level `resolution`: `+1` on `I⁺`, `-1` on `I⁻`.
    pub fn haar_sign(self, cell: u64, resolution: u32) -> Result<i8> {
        if resolution < self.level + 1 {
            return Err(Error::InsufficientResolution { needed: self.level + 1, got: resolution });
        }
        let shift = resolution - self.level;
        if cell >> shift != self.index {
            return Ok(0);
        }
        Ok(if (cell >> (shift - 1)) & 1 == 0 { 1 } else { -1 })
    }

    /// All intervals of level `level`, in index order.
    pub fn level_intervals(level: u32) -> impl Iterator<Item = Self> {
        (0..1u64 << level).map(move |index| Self { level, index })
    }

    /// `𝒟_{≤n}` in canonical order.
    pub fn up_to(n: u32) -> impl Iterator<Item = Self> {
        (0..interval_count(n)).map(Self::from_linear_index)
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.index)
    }
}

impl FromStr for DyadicInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (l, k) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected \"level:index\", got {s:?}")))?;
        let level = l.trim().parse().map_err(|_| Error::Parse(format!("bad level in {s:?}")))?;
        let index = k.trim().parse().map_err(|_| Error::Parse(format!("bad index in {s:?}")))?;
        Self::new(level, index)
    }
}

/// `I × J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicRectangle {
    pub x: DyadicInterval,
    pub y: DyadicInterval,
}

impl DyadicRectangle {
    pub const UNIT: DyadicRectangle =
        DyadicRectangle { x: DyadicInterval::UNIT, y: DyadicInterval::UNIT };

    pub fn new(x: DyadicInterval, y: DyadicInterval) -> Self {
        Self { x, y }
    }

    pub fn measure(self) -> f64 {
        self.x.measure() * self.y.measure()
    }

    pub fn max_level(self) -> u32 {
        self.x.level.max(self.y.level)
    }

    pub fn contains(self, other: Self) -> bool {
        self.x.contains(other.x) && self.y.contains(other.y)
    }

    pub fn intersects(self, other: Self) -> bool {
        self.x.intersects(other.x) && self.y.intersects(other.y)
    }

    /// Canonical index in the basis of resolution `n`.
    pub fn canonical_index(self, n: u32) -> usize {
        self.x.linear_index() * interval_count(n) + self.y.linear_index()
    }

    /// `h_{R.x}(x) h_{R.y}(y)` on the grid cell `(cx, cy)` at `resolution`.
    pub fn haar_eval(self, cell: (u64, u64), resolution: u32) -> Result<i8> {
        Ok(self.x.haar_sign(cell.0, resolution)? * self.y.haar_sign(cell.1, resolution)?)
    }
}

impl fmt::Display for DyadicRectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

impl FromStr for DyadicRectangle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (x, y) = s
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("expected \"n:k,m:j\", got {s:?}")))?;
        Ok(Self { x: x.parse()?, y: y.parse()? })
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(DyadicInterval);
string_serde!(DyadicRectangle);

/// The canonical ordering of `𝒟_{≤N} ⊗ 𝒟_{≤N}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisEnumeration {
    resolution: u32,
    order: Vec<DyadicRectangle>,
}

impl BasisEnumeration {
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn order(&self) -> &[DyadicRectangle] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, i: usize) -> DyadicRectangle {
        self.order[i]
    }

    /// Position of `r`, or `None` if `r` is finer than the resolution.
    pub fn index_of(&self, r: DyadicRectangle) -> Option<usize> {
        (r.max_level() <= self.resolution).then(|| r.canonical_index(self.resolution))
    }

    /// Measures `|R|` in canonical order.
    pub fn measures(&self) -> Vec<f64> {
        self.order.iter().map(|r| r.measure()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = DyadicRectangle> + '_ {
        self.order.iter().copied()
    }
}

/// Number of basis rectangles at resolution `n`: `d_n²`.
pub fn basis_len(n: u32) -> usize {
    let d = interval_count(n);
    d * d
}

/// Canonical enumeration of `𝒟_{≤N} ⊗ 𝒟_{≤N}`.
pub fn enumerate(n: u32) -> Result<BasisEnumeration> {
    enumerate_with_max(n, max_resolution())
}

pub fn enumerate_with_max(n: u32, max: u32) -> Result<BasisEnumeration> {
    if n > max {
        return Err(Error::ResolutionExceeded { level: n, max });
    }
    let intervals: Vec<_> = DyadicInterval::up_to(n).collect();
    let order = intervals
        .iter()
        .flat_map(|&x| intervals.iter().map(move |&y| DyadicRectangle { x, y }))
        .collect();
    Ok(BasisEnumeration { resolution: n, order })
}

/// `𝒜 ⊗ ℬ = {I × J : I ∈ 𝒜, J ∈ ℬ}`, in canonical order without duplicates.
pub fn tensor(a: &[DyadicInterval], b: &[DyadicInterval]) -> Vec<DyadicRectangle> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    a.iter().flat_map(|&x| b.iter().map(move |&y| DyadicRectangle { x, y })).collect()
}

/// `2^e` for small integer exponents, exact.
pub(crate) fn pow2(e: i32) -> f64 {
    f64::from_bits(((1023 + e) as u64) << 52)
}
