//! Haar-coefficient vectors in `H^p_N(H^q_N)` and the mixed square-function norm.
//!
//! An element `f = Σ a_R h_R` is stored as its coefficients `a_R` in
//! canonical basis order. With `L^∞`-normalized Haar functions `h_R² = χ_R`,
//! so the square function `S²(x,y) = Σ a_R² χ_R(x,y)` is piecewise constant
//! on the `2^N × 2^N` grid and the norm
//! `(∫(∫ S^q dy)^{p/q} dx)^{1/p}` is a finite sum.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{basis_len, interval_count, pow2, DyadicInterval, DyadicRectangle};
use crate::error::{Error, Result};
use crate::rng;

/// `(p, q)` with `1 ≤ p, q < ∞` and their conjugates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExponents", into = "RawExponents")]
pub struct ExponentPair {
    p: f64,
    q: f64,
}

#[derive(Serialize, Deserialize)]
struct RawExponents {
    p: f64,
    q: f64,
}

impl TryFrom<RawExponents> for ExponentPair {
    type Error = Error;
    fn try_from(r: RawExponents) -> Result<Self> {
        Self::new(r.p, r.q)
    }
}

impl From<ExponentPair> for RawExponents {
    fn from(e: ExponentPair) -> Self {
        RawExponents { p: e.p, q: e.q }
    }
}

impl ExponentPair {
    pub const EUCLIDEAN: ExponentPair = ExponentPair { p: 2.0, q: 2.0 };

    pub fn new(p: f64, q: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("q", q)] {
            if !v.is_finite() || v < 1.0 {
                return Err(Error::InvalidExponent(format!("{name} = {v} is not in [1, ∞)")));
            }
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `p' = p/(p-1)`; `f64::INFINITY` when `p = 1`.
    pub fn p_dual(&self) -> f64 {
        conjugate(self.p)
    }

    pub fn q_dual(&self) -> f64 {
        conjugate(self.q)
    }

    pub fn is_euclidean(&self) -> bool {
        self.p == 2.0 && self.q == 2.0
    }
}

fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// `x^{1/r}` with `x^{1/∞} = 1` for `x > 0`.
fn root(x: f64, r: f64) -> f64 {
    if r.is_infinite() {
        1.0
    } else {
        x.powf(1.0 / r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `H^p_N(H^q_N)`
    Primal,
    /// `(H^p_N(H^q_N))*`
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    pub resolution: u32,
    pub exponents: ExponentPair,
    pub side: Side,
}

impl SpaceDescriptor {
    pub fn primal(resolution: u32, exponents: ExponentPair) -> Self {
        Self { resolution, exponents, side: Side::Primal }
    }

    pub fn euclidean(resolution: u32) -> Self {
        Self::primal(resolution, ExponentPair::EUCLIDEAN)
    }

    pub fn dim(&self) -> usize {
        basis_len(self.resolution)
    }
}

/// `f = Σ_R a_R h_R` over `𝒟_{≤N} ⊗ 𝒟_{≤N}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyElement {
    resolution: u32,
    coefficients: Vec<f64>,
}

impl HardyElement {
    pub fn new(resolution: u32, coefficients: Vec<f64>) -> Result<Self> {
        let expected = basis_len(resolution);
        if coefficients.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: coefficients.len() });
        }
        Ok(Self { resolution, coefficients })
    }

    pub fn zeros(resolution: u32) -> Self {
        Self { resolution, coefficients: vec![0.0; basis_len(resolution)] }
    }

    /// `h_R`.
    pub fn basis(r: DyadicRectangle, resolution: u32) -> Result<Self> {
        let mut f = Self::zeros(resolution);
        f.set(r, 1.0)?;
        Ok(f)
    }

    /// `Σ_{K∈𝒳, L∈𝒴} θ_K ε_L h_{K×L}`.
    pub fn block(
        xs: &[DyadicInterval],
        ys: &[DyadicInterval],
        theta: impl Fn(DyadicInterval) -> f64,
        eps: impl Fn(DyadicInterval) -> f64,
        resolution: u32,
    ) -> Result<Self> {
        let mut f = Self::zeros(resolution);
        for &k in xs {
            for &l in ys {
                f.set(DyadicRectangle::new(k, l), theta(k) * eps(l))?;
            }
        }
        Ok(f)
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    pub fn get(&self, r: DyadicRectangle) -> f64 {
        if r.max_level() > self.resolution {
            return 0.0;
        }
        self.coefficients[r.canonical_index(self.resolution)]
    }

    pub fn set(&mut self, r: DyadicRectangle, value: f64) -> Result<()> {
        if r.max_level() > self.resolution {
            return Err(Error::InsufficientResolution { needed: r.max_level(), got: self.resolution });
        }
        let i = r.canonical_index(self.resolution);
        self.coefficients[i] = value;
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&a| a == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            resolution: self.resolution,
            coefficients: self.coefficients.iter().map(|a| c * a).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(self.resolution, other.resolution)?;
        Ok(Self {
            resolution: self.resolution,
            coefficients: self.coefficients.iter().zip(&other.coefficients).map(|(a, b)| a + b).collect(),
        })
    }

    /// Gaussian coefficients from `rng`.
    pub fn random(resolution: u32, rng: &mut impl Rng) -> Self {
        let coefficients =
            (0..basis_len(resolution)).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        Self { resolution, coefficients }
    }

    /// `S²` on the `2^N × 2^N` grid, row-major in `x` then `y`.
    ///
    /// Level cascade: the cell `(i, j)` lies in exactly one rectangle of each
    /// level pair `(lx, ly)`, namely `(i >> (N-lx)) × (j >> (N-ly))`.
    pub fn square_function(&self) -> Vec<f64> {
        let n = self.resolution;
        let side = 1usize << n;
        let d = interval_count(n);
        let mut s2 = vec![0.0; side * side];
        for lx in 0..=n {
            for ly in 0..=n {
                let (bx, by) = ((1usize << lx) - 1, (1usize << ly) - 1);
                let (sx, sy) = (n - lx, n - ly);
                for i in 0..side {
                    let row = (bx + (i >> sx)) * d + by;
                    let cells = &mut s2[i * side..(i + 1) * side];
                    for (j, cell) in cells.iter_mut().enumerate() {
                        let a = self.coefficients[row + (j >> sy)];
                        *cell += a * a;
                    }
                }
            }
        }
        s2
    }
}

fn check_same(a: u32, b: u32) -> Result<()> {
    if a != b {
        return Err(Error::ResolutionMismatch { left: a, right: b });
    }
    Ok(())
}

/// `h_{R.x}(x)·h_{R.y}(y)` on grid cell `cell` at `resolution`.
pub fn haar_eval(r: DyadicRectangle, cell: (u64, u64), resolution: u32) -> Result<i8> {
    r.haar_eval(cell, resolution)
}

/// `‖f‖_{H^p(H^q)}`, evaluated exactly on the dyadic grid.
pub fn mixed_norm(f: &HardyElement, e: ExponentPair) -> f64 {
    norm_of_square_function(&f.square_function(), f.resolution, e)
}

pub(crate) fn norm_of_square_function(s2: &[f64], resolution: u32, e: ExponentPair) -> f64 {
    let side = 1usize << resolution;
    let cell = pow2(-(resolution as i32));
    let (p, q) = (e.p, e.q);
    // rows in parallel, reduction in ascending order
    let rows: Vec<f64> = s2
        .par_chunks(side)
        .map(|row| {
            let inner: f64 = if q == 2.0 {
                row.iter().sum()
            } else {
                row.iter().map(|&v| v.powf(q / 2.0)).sum()
            };
            inner * cell
        })
        .collect();
    let outer: f64 = rows
        .iter()
        .map(|&r| if p == q { r } else { r.powf(p / q) })
        .sum::<f64>()
        * cell;
    outer.powf(1.0 / p)
}

/// `⟨f, g⟩ = Σ_R a_R b_R |R|`.
pub fn l2_inner(f: &HardyElement, g: &HardyElement) -> Result<f64> {
    check_same(f.resolution, g.resolution)?;
    let d = interval_count(f.resolution);
    let mx: Vec<f64> = DyadicInterval::up_to(f.resolution).map(|i| i.measure()).collect();
    let mut acc = 0.0;
    for (ix, &wx) in mx.iter().enumerate() {
        for (iy, &wy) in mx.iter().enumerate() {
            let k = ix * d + iy;
            acc += f.coefficients[k] * g.coefficients[k] * (wx * wy);
        }
    }
    Ok(acc)
}

fn check_disjoint(c: &[DyadicInterval], name: &str) -> Result<()> {
    if c.is_empty() {
        return Err(Error::EmptyCollection(name.to_string()));
    }
    for (i, a) in c.iter().enumerate() {
        for b in &c[i + 1..] {
            if a.intersects(*b) {
                return Err(Error::NotDisjoint(a.to_string(), b.to_string()));
            }
        }
    }
    Ok(())
}

/// Norm of any block function `Σ_{K∈𝒳,L∈𝒴} ±h_{K×L}`:
/// `|X|^{1/p}|Y|^{1/q}` in the primal space and `|X|^{1/p'}|Y|^{1/q'}` in the dual.
pub fn block_norm_closed_form(
    xs: &[DyadicInterval],
    ys: &[DyadicInterval],
    e: ExponentPair,
    side: Side,
) -> Result<f64> {
    check_disjoint(xs, "X")?;
    check_disjoint(ys, "Y")?;
    let mx: f64 = xs.iter().map(|i| i.measure()).sum();
    let my: f64 = ys.iter().map(|i| i.measure()).sum();
    Ok(match side {
        Side::Primal => root(mx, e.p) * root(my, e.q),
        Side::Dual => root(mx, e.p_dual()) * root(my, e.q_dual()),
    })
}

/// Certified lower bound for `‖f‖_{(H^p(H^q))*}`: the best ratio
/// `⟨f, h⟩ / ‖h‖_{H^p(H^q)}` over `f` itself, the basis functions in the
/// support of `f`, and `trials` seeded random candidates.
///
/// Candidate `k` depends only on `(seed, k)`, so the bound is nondecreasing
/// in `trials`.
pub fn dual_norm_lower_bound(f: &HardyElement, e: ExponentPair, trials: usize, seed: u64) -> f64 {
    if f.is_zero() {
        return 0.0;
    }
    let n = f.resolution;
    let basis = crate::dyadic::enumerate_with_max(n, n).expect("resolution within its own bound");
    let measures = basis.measures();
    let pairing = |h: &[f64]| -> f64 {
        f.coefficients.iter().zip(h).zip(&measures).map(|((a, b), w)| a * b * w).sum()
    };
    let ratio = |h: HardyElement| -> f64 {
        let norm = mixed_norm(&h, e);
        if norm > 0.0 {
            pairing(&h.coefficients) / norm
        } else {
            0.0
        }
    };

    let mut best = ratio(f.clone());
    let support: Vec<usize> = (0..f.coefficients.len()).filter(|&i| f.coefficients[i] != 0.0).collect();
    for &i in &support {
        // |⟨f, ±h_Q⟩| / ‖h_Q‖
        let q = measures[i];
        let rect = basis.get(i);
        let norm = root(rect.x.measure(), e.p) * root(rect.y.measure(), e.q);
        best = best.max(f.coefficients[i].abs() * q / norm);
    }
    let candidates: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, "dual/candidate", k);
            let power: f64 = r.random_range(0.0..2.5);
            let keep: f64 = r.random_range(0.2..1.0);
            let mut coefficients = vec![0.0; f.coefficients.len()];
            for &i in &support {
                if r.random_bool(keep) {
                    let a = f.coefficients[i];
                    let w: f64 = r.random_range(0.5..1.5);
                    coefficients[i] = a.signum() * a.abs().powf(power) * w;
                }
            }
            ratio(HardyElement { resolution: n, coefficients })
        })
        .collect();
    candidates.into_iter().fold(best, f64::max)
}
