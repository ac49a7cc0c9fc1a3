//! The random variables `W, X, Y, Z` over the sign space `Ω_θ × Ω_ε`, their
//! moments and the search for almost-diagonalizing signs.
//!
//! Every variable is a quadratic form in the signs of the intervals that
//! occur in the four collections `𝒳_I, 𝒳_{I'}, 𝒴_J, 𝒴_{J'}`; signs elsewhere
//! never enter. Exhaustive moments are computed over exactly those signs in
//! exact integer arithmetic: each Gram value is an integer multiple of a
//! common power of two, so the sums over all assignments are exact and
//! rounding happens only once, when the final sums are converted to `f64`.

use std::io::Write;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block_basis::{assemble, validate_families, BlockBasisSystem, SignAssignment};
use crate::collections::{alpha, CollectionFamily};
use crate::dyadic::{DyadicInterval, DyadicRectangle};
use crate::error::{Error, Result};
use crate::operators::{certified_norm_upper, OperatorMatrix};
use crate::rng;

/// Largest number of supporting intervals per axis for exhaustive enumeration.
pub const ENUMERATION_CAP: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RandomVariable {
    W,
    X,
    Y,
    Z,
}

impl RandomVariable {
    pub const ALL: [RandomVariable; 4] = [Self::W, Self::X, Self::Y, Self::Z];

    /// `c` in `𝔼V² ≤ c‖T‖²α^{1/2}`.
    pub fn bound_factor(self) -> f64 {
        match self {
            Self::W => 1.0,
            Self::X | Self::Y => 4.0,
            Self::Z => 12.0,
        }
    }
}

impl std::fmt::Display for RandomVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for RandomVariable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W" | "w" => Ok(Self::W),
            "X" | "x" => Ok(Self::X),
            "Y" | "y" => Ok(Self::Y),
            "Z" | "z" => Ok(Self::Z),
            _ => Err(Error::Parse(format!("unknown random variable {s:?}"))),
        }
    }
}

/// `(I, I', J, J')`; the variable reads `⟨T b_{I×J}, b_{I'×J'}⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RvIndex {
    pub i: DyadicInterval,
    pub i_prime: DyadicInterval,
    pub j: DyadicInterval,
    pub j_prime: DyadicInterval,
}

impl RvIndex {
    pub fn w(i: DyadicInterval, i_prime: DyadicInterval, j: DyadicInterval, j_prime: DyadicInterval) -> Self {
        Self { i, i_prime, j, j_prime }
    }

    pub fn x(i: DyadicInterval, i_prime: DyadicInterval, j: DyadicInterval) -> Self {
        Self { i, i_prime, j, j_prime: j }
    }

    pub fn y(i: DyadicInterval, j: DyadicInterval, j_prime: DyadicInterval) -> Self {
        Self { i, i_prime: i, j, j_prime }
    }

    pub fn z(i: DyadicInterval, j: DyadicInterval) -> Self {
        Self { i, i_prime: i, j, j_prime: j }
    }

    pub fn check(&self, v: RandomVariable) -> Result<()> {
        let (di, dj) = (self.i != self.i_prime, self.j != self.j_prime);
        let ok = match v {
            RandomVariable::W => di && dj,
            RandomVariable::X => di && !dj,
            RandomVariable::Y => !di && dj,
            RandomVariable::Z => !di && !dj,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("index {self} is not admissible for {v}")))
        }
    }

    /// Every admissible tuple over `𝒟_{≤n}`.
    pub fn all(v: RandomVariable, n: u32) -> Vec<Self> {
        let d: Vec<_> = DyadicInterval::up_to(n).collect();
        let mut out = Vec::new();
        for &i in &d {
            for &ip in &d {
                for &j in &d {
                    for &jp in &d {
                        let idx = Self { i, i_prime: ip, j, j_prime: jp };
                        if idx.check(v).is_ok() {
                            out.push(idx);
                        }
                    }
                }
            }
        }
        out
    }
}

impl std::fmt::Display for RvIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.i, self.i_prime, self.j, self.j_prime)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    MonteCarlo,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub variable: RandomVariable,
    pub indices: RvIndex,
    /// Sign assignments averaged over.
    pub trials: u64,
    pub mean: f64,
    pub second_moment: f64,
    pub stderr_mean: f64,
    pub stderr_second: f64,
    /// `c·‖T‖²α^{1/2}`.
    pub bound: f64,
    pub norm_upper: f64,
    pub alpha: f64,
    pub method: MomentMethod,
}

impl MomentReport {
    /// `second_moment ≤ bound`, after subtracting `k` standard errors.
    pub fn within_bound(&self, k: f64) -> bool {
        self.second_moment - k * self.stderr_second <= self.bound
    }
}

/// `⟨T b_{I×J}, b_{I'×J'}⟩` written over the supporting signs.
struct Quadratic {
    sx: Vec<DyadicInterval>,
    sy: Vec<DyadicInterval>,
    /// Positions in `sx` / `sy` of `𝒳_I, 𝒳_{I'}, 𝒴_J, 𝒴_{J'}`.
    a: Vec<usize>,
    c: Vec<usize>,
    b: Vec<usize>,
    d: Vec<usize>,
    /// `g[((a·|b|+b)·|c|+c)·|d|+d] = ⟨T h_{K_a×L_b}, h_{K'_c×L'_d}⟩`.
    g: Vec<f64>,
    subtract_diagonal: bool,
}

fn positions(support: &mut Vec<DyadicInterval>, members: &[DyadicInterval]) -> Vec<usize> {
    members
        .iter()
        .map(|k| match support.iter().position(|s| s == k) {
            Some(p) => p,
            None => {
                support.push(*k);
                support.len() - 1
            }
        })
        .collect()
}

impl Quadratic {
    fn new(
        t: &OperatorMatrix,
        xfam: &CollectionFamily,
        yfam: &CollectionFamily,
        v: RandomVariable,
        idx: RvIndex,
    ) -> Result<Self> {
        idx.check(v)?;
        let big_n = xfam.target_resolution();
        if !t.is_square() || t.domain().resolution != big_n || yfam.target_resolution() != big_n {
            return Err(Error::ResolutionMismatch { left: t.domain().resolution, right: big_n });
        }
        let (xi, xi2) = (xfam.get(idx.i)?, xfam.get(idx.i_prime)?);
        let (yj, yj2) = (yfam.get(idx.j)?, yfam.get(idx.j_prime)?);
        let (mut sx, mut sy) = (Vec::new(), Vec::new());
        let a = positions(&mut sx, xi);
        let c = positions(&mut sx, xi2);
        let b = positions(&mut sy, yj);
        let d = positions(&mut sy, yj2);
        let gram = t.gram();
        let mut g = Vec::with_capacity(a.len() * b.len() * c.len() * d.len());
        for &k in xi {
            for &l in yj {
                let col = DyadicRectangle::new(k, l).canonical_index(big_n);
                for &k2 in xi2 {
                    for &l2 in yj2 {
                        g.push(gram[(DyadicRectangle::new(k2, l2).canonical_index(big_n), col)]);
                    }
                }
            }
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("operator has non-finite entries".into()));
        }
        Ok(Self { sx, sy, a, c, b, d, g, subtract_diagonal: v == RandomVariable::Z })
    }

    fn at(&self, ia: usize, ib: usize, ic: usize, id: usize) -> usize {
        ((ia * self.b.len() + ib) * self.c.len() + ic) * self.d.len() + id
    }

    fn diagonal_sum(&self) -> f64 {
        if !self.subtract_diagonal {
            return 0.0;
        }
        let mut s = 0.0;
        for ia in 0..self.a.len() {
            for ib in 0..self.b.len() {
                s += self.g[self.at(ia, ib, ia, ib)];
            }
        }
        s
    }

    /// `th[p]`, `ep[p]` are the signs at support positions `p`.
    fn value(&self, th: &[f64], ep: &[f64]) -> f64 {
        let mut v = 0.0;
        for (ia, &pa) in self.a.iter().enumerate() {
            for (ib, &pb) in self.b.iter().enumerate() {
                let s0 = th[pa] * ep[pb];
                for (ic, &pc) in self.c.iter().enumerate() {
                    let s1 = s0 * th[pc];
                    for (id, &pd) in self.d.iter().enumerate() {
                        v += s1 * ep[pd] * self.g[self.at(ia, ib, ic, id)];
                    }
                }
            }
        }
        v - self.diagonal_sum()
    }
}

/// Evaluates the variable at the signs `(θ, ε)`.
pub fn eval_rv(
    t: &OperatorMatrix,
    xfam: &CollectionFamily,
    yfam: &CollectionFamily,
    theta: &SignAssignment,
    eps: &SignAssignment,
    variable: RandomVariable,
    indices: RvIndex,
) -> Result<f64> {
    let q = Quadratic::new(t, xfam, yfam, variable, indices)?;
    let th: Vec<f64> = q.sx.iter().map(|&k| theta.get(k)).collect();
    let ep: Vec<f64> = q.sy.iter().map(|&l| eps.get(l)).collect();
    Ok(q.value(&th, &ep))
}

/// Shared per-operator data for many moment computations.
pub struct MomentContext<'a> {
    t: &'a OperatorMatrix,
    xfam: &'a CollectionFamily,
    yfam: &'a CollectionFamily,
    norm_upper: f64,
    alpha: f64,
}

impl<'a> MomentContext<'a> {
    pub fn new(t: &'a OperatorMatrix, xfam: &'a CollectionFamily, yfam: &'a CollectionFamily) -> Self {
        Self::with_norm(t, xfam, yfam, certified_norm_upper(t))
    }

    pub fn with_norm(t: &'a OperatorMatrix, xfam: &'a CollectionFamily, yfam: &'a CollectionFamily, norm_upper: f64) -> Self {
        Self { t, xfam, yfam, norm_upper, alpha: alpha(xfam, yfam) }
    }

    pub fn norm_upper(&self) -> f64 {
        self.norm_upper
    }

    pub fn bound(&self, v: RandomVariable) -> f64 {
        v.bound_factor() * self.norm_upper * self.norm_upper * self.alpha.sqrt()
    }

    fn report(&self, v: RandomVariable, idx: RvIndex, method: MomentMethod) -> MomentReport {
        MomentReport {
            variable: v,
            indices: idx,
            trials: 0,
            mean: 0.0,
            second_moment: 0.0,
            stderr_mean: 0.0,
            stderr_second: 0.0,
            bound: self.bound(v),
            norm_upper: self.norm_upper,
            alpha: self.alpha,
            method,
        }
    }

    pub fn exhaustive(&self, v: RandomVariable, idx: RvIndex) -> Result<MomentReport> {
        let q = Quadratic::new(self.t, self.xfam, self.yfam, v, idx)?;
        for (axis, s) in [('x', &q.sx), ('y', &q.sy)] {
            if s.len() > ENUMERATION_CAP {
                return Err(Error::EnumerationCap { axis, size: s.len(), cap: ENUMERATION_CAP });
            }
        }
        let (sum, sum_sq, e_lo) = exact_sums(&q);
        let log_count = (q.sx.len() + q.sy.len()) as i64;
        let mut r = self.report(v, idx, MomentMethod::Exhaustive);
        r.trials = 1u64 << log_count;
        r.mean = sum.scaled(e_lo - log_count);
        r.second_moment = sum_sq.scaled(2 * e_lo - log_count);
        Ok(r)
    }

    /// The variable at `trials` uniform sign draws, stream `(seed, "mc/trial", k)`.
    pub fn samples(&self, v: RandomVariable, idx: RvIndex, trials: u64, seed: u64) -> Result<Vec<f64>> {
        let q = Quadratic::new(self.t, self.xfam, self.yfam, v, idx)?;
        let sign = |r: &mut rand_chacha::ChaCha8Rng| if r.random_bool(0.5) { 1.0 } else { -1.0 };
        Ok((0..trials)
            .into_par_iter()
            .map(|k| {
                let mut r = rng::stream(seed, "mc/trial", k);
                let th: Vec<f64> = q.sx.iter().map(|_| sign(&mut r)).collect();
                let ep: Vec<f64> = q.sy.iter().map(|_| sign(&mut r)).collect();
                q.value(&th, &ep)
            })
            .collect())
    }

    pub fn monte_carlo(&self, v: RandomVariable, idx: RvIndex, trials: u64, seed: u64) -> Result<MomentReport> {
        if trials < 100 {
            return Err(Error::Precondition(format!("{trials} trials; at least 100 are required")));
        }
        let values = self.samples(v, idx, trials, seed)?;
        let n = trials as f64;
        let squares: Vec<f64> = values.iter().map(|x| x * x).collect();
        let (mean, se_mean) = mean_and_stderr(&values);
        let (second, se_second) = mean_and_stderr(&squares);
        let mut r = self.report(v, idx, MomentMethod::MonteCarlo);
        r.trials = n as u64;
        r.mean = mean;
        r.second_moment = second;
        r.stderr_mean = se_mean;
        r.stderr_second = se_second;
        Ok(r)
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact mean and second moment over all sign assignments on the support.
pub fn exhaustive_moments(
    t: &OperatorMatrix,
    xfam: &CollectionFamily,
    yfam: &CollectionFamily,
    variable: RandomVariable,
    indices: RvIndex,
) -> Result<MomentReport> {
    MomentContext::new(t, xfam, yfam).exhaustive(variable, indices)
}

/// Sample mean and second moment with standard errors.
pub fn mc_moments(
    t: &OperatorMatrix,
    xfam: &CollectionFamily,
    yfam: &CollectionFamily,
    variable: RandomVariable,
    indices: RvIndex,
    trials: u64,
    seed: u64,
) -> Result<MomentReport> {
    MomentContext::new(t, xfam, yfam).monte_carlo(variable, indices, trials, seed)
}

/// Writes `trial, variable, I, I', J, J', value` rows.
pub fn write_trace(
    out: &mut impl Write,
    variable: RandomVariable,
    idx: RvIndex,
    values: &[f64],
    header: bool,
) -> Result<()> {
    if header {
        writeln!(out, "trial,variable,I,I',J,J',value")?;
    }
    for (k, v) in values.iter().enumerate() {
        writeln!(out, "{k},{variable},{},{},{},{},{v:?}", idx.i, idx.i_prime, idx.j, idx.j_prime)?;
    }
    Ok(())
}

/// `x = m·2^e` exactly.
fn decode(x: f64) -> (i64, i64) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = (bits & 0x000f_ffff_ffff_ffff) as i64;
    let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | 1 << 52, exp - 1075) };
    (if bits >> 63 == 1 { -m } else { m }, e)
}

fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

trait Exact: Clone + Send + Sync + Sized {
    fn zero() -> Self;
    fn shifted(m: i64, shift: u64) -> Option<Self>;
    fn add(&self, o: &Self) -> Option<Self>;
    fn sub(&self, o: &Self) -> Option<Self>;
    fn mul(&self, o: &Self) -> Option<Self>;
    fn to_big(&self) -> BigInt;
}

impl Exact for i128 {
    fn zero() -> Self {
        0
    }
    fn shifted(m: i64, shift: u64) -> Option<Self> {
        if shift > 70 {
            return None;
        }
        i128::from(m).checked_mul(1i128 << shift)
    }
    fn add(&self, o: &Self) -> Option<Self> {
        self.checked_add(*o)
    }
    fn sub(&self, o: &Self) -> Option<Self> {
        self.checked_sub(*o)
    }
    fn mul(&self, o: &Self) -> Option<Self> {
        self.checked_mul(*o)
    }
    fn to_big(&self) -> BigInt {
        BigInt::from(*self)
    }
}

impl Exact for BigInt {
    fn zero() -> Self {
        Zero::zero()
    }
    fn shifted(m: i64, shift: u64) -> Option<Self> {
        Some(BigInt::from(m) << shift)
    }
    fn add(&self, o: &Self) -> Option<Self> {
        Some(self + o)
    }
    fn sub(&self, o: &Self) -> Option<Self> {
        Some(self - o)
    }
    fn mul(&self, o: &Self) -> Option<Self> {
        Some(self * o)
    }
    fn to_big(&self) -> BigInt {
        self.clone()
    }
}

/// An exact integer `v`, read as `v·2^e` by [`ExactSum::scaled`].
struct ExactSum(BigInt);

impl ExactSum {
    fn scaled(&self, e: i64) -> f64 {
        let bits = self.0.bits() as i64;
        if bits > 1000 {
            let s = bits - 64;
            ldexp((&self.0 >> s as usize).to_f64().expect("finite"), e + s)
        } else {
            ldexp(self.0.to_f64().expect("finite"), e)
        }
    }
}

fn exact_sums(q: &Quadratic) -> (ExactSum, ExactSum, i64) {
    let decoded: Vec<(i64, i64)> = q.g.iter().map(|&x| decode(x)).collect();
    let e_lo = decoded.iter().filter(|d| d.0 != 0).map(|d| d.1).min().unwrap_or(0);
    if let Some((s, s2)) = sums_in::<i128>(q, &decoded, e_lo) {
        return (ExactSum(s.to_big()), ExactSum(s2.to_big()), e_lo);
    }
    let (s, s2) = sums_in::<BigInt>(q, &decoded, e_lo).expect("big integers never overflow");
    (ExactSum(s), ExactSum(s2), e_lo)
}

fn sums_in<T: Exact>(q: &Quadratic, decoded: &[(i64, i64)], e_lo: i64) -> Option<(T, T)> {
    let g: Vec<T> = decoded
        .iter()
        .map(|&(m, e)| if m == 0 { Some(T::zero()) } else { T::shifted(m, (e - e_lo) as u64) })
        .collect::<Option<_>>()?;
    let mut c0 = T::zero();
    if q.subtract_diagonal {
        for ia in 0..q.a.len() {
            for ib in 0..q.b.len() {
                c0 = c0.add(&g[q.at(ia, ib, ia, ib)])?;
            }
        }
    }
    let (nx, ny) = (q.sx.len(), q.sy.len());
    let (na, nc) = (q.a.len(), q.c.len());
    let partial: Vec<Option<(T, T)>> = (0..1u64 << ny)
        .into_par_iter()
        .map(|emask| {
            let neg = |mask: u64, p: usize| mask >> p & 1 == 1;
            let mut w = vec![T::zero(); na * nc];
            for ia in 0..na {
                for (ib, &pb) in q.b.iter().enumerate() {
                    for ic in 0..nc {
                        let cell = &mut w[ia * nc + ic];
                        for (id, &pd) in q.d.iter().enumerate() {
                            let x = &g[q.at(ia, ib, ic, id)];
                            *cell = if neg(emask, pb) != neg(emask, pd) { cell.sub(x)? } else { cell.add(x)? };
                        }
                    }
                }
            }
            let (mut s, mut s2) = (T::zero(), T::zero());
            for tmask in 0..1u64 << nx {
                let mut v = T::zero();
                for (ia, &pa) in q.a.iter().enumerate() {
                    for (ic, &pc) in q.c.iter().enumerate() {
                        let x = &w[ia * nc + ic];
                        v = if neg(tmask, pa) != neg(tmask, pc) { v.sub(x)? } else { v.add(x)? };
                    }
                }
                v = v.sub(&c0)?;
                s = s.add(&v)?;
                s2 = s2.add(&v.mul(&v)?)?;
            }
            Some((s, s2))
        })
        .collect();
    let (mut s, mut s2) = (T::zero(), T::zero());
    for p in partial {
        let (a, b) = p?;
        s = s.add(&a)?;
        s2 = s2.add(&b)?;
    }
    Some((s, s2))
}

/// Chebyshev predictions from the second-moment bounds; informational only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBounds {
    /// `P(|⟨T b_R, b_{R'}⟩| > η₀) ≤ 4Γ²α^{1/2}/η₀²`.
    pub offdiag: f64,
    /// `P(|Z| > η₀) ≤ 12Γ²α^{1/2}/η₀²`.
    pub diag: f64,
    /// Union bound over every off-diagonal pair and diagonal block.
    pub union: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignSearchReport {
    pub accepted: bool,
    pub attempts: u64,
    pub theta: Option<SignAssignment>,
    pub eps: Option<SignAssignment>,
    /// At the accepted attempt, or the best one seen.
    pub max_offdiag: f64,
    pub max_diag_deviation: f64,
    pub eta0: f64,
    /// 1-based attempt the maxima refer to.
    pub reported_attempt: u64,
    pub tail: TailBounds,
}

/// `G[R', R] = ⟨T b_R, b_{R'}⟩`.
pub fn block_gram(t: &OperatorMatrix, sys: &BlockBasisSystem) -> DMatrix<f64> {
    let gram = t.gram();
    let blocks = sys.blocks();
    let d = blocks.len();
    let columns: Vec<Vec<f64>> = blocks
        .par_iter()
        .map(|b| {
            let mut col = vec![0.0; gram.nrows()];
            for &(i, s) in b {
                for (c, g) in col.iter_mut().zip(gram.column(i).iter()) {
                    *c += s * g;
                }
            }
            blocks.iter().map(|b2| b2.iter().map(|&(i, s)| s * col[i]).sum()).collect()
        })
        .collect();
    DMatrix::from_fn(d, d, |r2, r| columns[r][r2])
}

/// `(max_{R≠R'} |G[R',R]|, max_R |G[R,R] − Σ ⟨T h_Q, h_Q⟩|)`.
pub fn almost_diagonal_errors(t: &OperatorMatrix, sys: &BlockBasisSystem) -> (f64, f64) {
    let g = block_gram(t, sys);
    let mut off = 0.0f64;
    let mut diag = 0.0f64;
    for r in 0..g.ncols() {
        for r2 in 0..g.nrows() {
            if r != r2 {
                off = off.max(g[(r2, r)].abs());
            }
        }
        let sum: f64 = sys.block(r).iter().map(|&(i, _)| t.gram()[(i, i)]).sum();
        diag = diag.max((g[(r, r)] - sum).abs());
    }
    (off, diag)
}

const SEARCH_BATCH: u64 = 64;

/// Rejection sampling of `(θ, ε)`; attempt `k` uses stream `(seed, "search/attempt", k)`.
pub fn search_signs(
    t: &OperatorMatrix,
    xfam: &CollectionFamily,
    yfam: &CollectionFamily,
    eta0: f64,
    max_attempts: u64,
    seed: u64,
) -> Result<SignSearchReport> {
    if eta0.is_nan() || eta0 < 0.0 || max_attempts == 0 {
        return Err(Error::Precondition(format!("eta0 = {eta0}, max_attempts = {max_attempts}")));
    }
    validate_families(xfam, yfam)?;
    let big_n = xfam.target_resolution();
    if !t.is_square() || t.domain().resolution != big_n {
        return Err(Error::ResolutionMismatch { left: t.domain().resolution, right: big_n });
    }
    let (xs, ys) = (xfam.support(), yfam.support());
    let draw = |k: u64| {
        let mut r = rng::stream(seed, "search/attempt", k);
        let th = SignAssignment::random_on(big_n, &xs, &mut r);
        let ep = SignAssignment::random_on(big_n, &ys, &mut r);
        (th, ep)
    };

    let mut best: Option<(u64, f64, f64)> = None;
    let mut accepted = None;
    let mut start = 0;
    while start < max_attempts && accepted.is_none() {
        let end = (start + SEARCH_BATCH).min(max_attempts);
        let results: Vec<(f64, f64)> = (start..end)
            .into_par_iter()
            .map(|k| {
                let (th, ep) = draw(k);
                let sys = assemble(xfam, yfam, &th, &ep).expect("validated");
                almost_diagonal_errors(t, &sys)
            })
            .collect();
        for (k, (off, diag)) in (start..end).zip(results) {
            if best.is_none_or(|(_, bo, bd)| off.max(diag) < bo.max(bd)) {
                best = Some((k, off, diag));
            }
            if off <= eta0 && diag <= eta0 {
                accepted = Some((k, off, diag));
                break;
            }
        }
        start = end;
    }

    let gamma = certified_norm_upper(t);
    let a = alpha(xfam, yfam);
    let cheb = |c: f64| c * gamma * gamma * a.sqrt() / (eta0 * eta0);
    let d = crate::dyadic::basis_len(xfam.domain_resolution()) as f64;
    let tail = TailBounds {
        offdiag: cheb(4.0),
        diag: cheb(12.0),
        union: d * (d - 1.0) * cheb(4.0) + d * cheb(12.0),
        gamma,
    };
    Ok(match accepted {
        Some((k, off, diag)) => {
            let (th, ep) = draw(k);
            SignSearchReport {
                accepted: true,
                attempts: k + 1,
                theta: Some(th),
                eps: Some(ep),
                max_offdiag: off,
                max_diag_deviation: diag,
                eta0,
                reported_attempt: k + 1,
                tail,
            }
        }
        None => {
            let (k, off, diag) = best.expect("at least one attempt");
            SignSearchReport {
                accepted: false,
                attempts: max_attempts,
                theta: None,
                eps: None,
                max_offdiag: off,
                max_diag_deviation: diag,
                eta0,
                reported_attempt: k + 1,
                tail,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_basis::build_system;
    use crate::collections::gamlen_gaudet;
    use crate::haar::{l2_inner, ExponentPair, SpaceDescriptor};
    use crate::operators::{generate_test_operator, Structure};
    use rand::SeedableRng;

    fn iv(l: u32, k: u64) -> DyadicInterval {
        DyadicInterval::new(l, k).unwrap()
    }

    fn random_operator(res: u32, seed: u64) -> OperatorMatrix {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = crate::dyadic::basis_len(res);
        let g = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0) / 4.0);
        OperatorMatrix::on(SpaceDescriptor::euclidean(res), g).unwrap()
    }

    /// Enumerates every sign assignment on `𝒟_{≤N}` and averages in `f64`.
    fn brute_force(t: &OperatorMatrix, n: u32, m0: u32, v: RandomVariable, idx: RvIndex) -> (f64, f64) {
        let (x, y) = gamlen_gaudet(n, m0).unwrap();
        let big: Vec<_> = DyadicInterval::up_to(n + m0).collect();
        let (xs, ys) = (x.support(), y.support());
        let (mut s, mut s2, mut cnt) = (0.0, 0.0, 0.0);
        for tm in 0..1u64 << xs.len() {
            for em in 0..1u64 << ys.len() {
                let th = SignAssignment::from_mask(n + m0, &xs, tm);
                let ep = SignAssignment::from_mask(n + m0, &ys, em);
                let sys = build_system(&x, &y, &th, &ep).unwrap();
                let b = sys.element(DyadicRectangle::new(idx.i, idx.j)).unwrap();
                let b2 = sys.element(DyadicRectangle::new(idx.i_prime, idx.j_prime)).unwrap();
                let mut val = l2_inner(&t.apply(&b).unwrap(), &b2).unwrap();
                if v == RandomVariable::Z {
                    for &k in x.get(idx.i).unwrap() {
                        for &l in y.get(idx.j).unwrap() {
                            let q = DyadicRectangle::new(k, l).canonical_index(n + m0);
                            val -= t.gram()[(q, q)];
                        }
                    }
                }
                s += val;
                s2 += val * val;
                cnt += 1.0;
            }
        }
        assert!(big.len() >= xs.len());
        (s / cnt, s2 / cnt)
    }

    #[test]
    fn identity_operator_values() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let t = OperatorMatrix::identity(SpaceDescriptor::euclidean(2));
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let th = SignAssignment::random_on(2, &x.support(), &mut r);
            let ep = SignAssignment::random_on(2, &y.support(), &mut r);
            let w = eval_rv(&t, &x, &y, &th, &ep, RandomVariable::W, RvIndex::w(iv(0, 0), iv(1, 0), iv(1, 1), iv(0, 0))).unwrap();
            assert_eq!(w, 0.0);
            let z = eval_rv(&t, &x, &y, &th, &ep, RandomVariable::Z, RvIndex::z(iv(1, 0), iv(0, 0))).unwrap();
            assert_eq!(z, 0.0);
        }
        let e = exhaustive_moments(&t, &x, &y, RandomVariable::W, RvIndex::w(iv(0, 0), iv(1, 0), iv(1, 1), iv(0, 0))).unwrap();
        assert_eq!((e.mean, e.second_moment), (0.0, 0.0));
        let m = mc_moments(&t, &x, &y, RandomVariable::Z, RvIndex::z(iv(0, 0), iv(0, 0)), 200, 1).unwrap();
        assert_eq!((m.mean, m.second_moment), (0.0, 0.0));
    }

    #[test]
    fn eval_matches_pairing_oracle() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let t = random_operator(2, 3);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let th = SignAssignment::random_on(2, &x.support(), &mut r);
        let ep = SignAssignment::random_on(2, &y.support(), &mut r);
        let sys = build_system(&x, &y, &th, &ep).unwrap();
        for v in RandomVariable::ALL {
            for idx in RvIndex::all(v, 1) {
                let b = sys.element(DyadicRectangle::new(idx.i, idx.j)).unwrap();
                let b2 = sys.element(DyadicRectangle::new(idx.i_prime, idx.j_prime)).unwrap();
                let mut want = l2_inner(&t.apply(&b).unwrap(), &b2).unwrap();
                if v == RandomVariable::Z {
                    want -= sys.block(sys.small_basis().index_of(DyadicRectangle::new(idx.i, idx.j)).unwrap())
                        .iter()
                        .map(|&(q, _)| t.gram()[(q, q)])
                        .sum::<f64>();
                }
                let got = eval_rv(&t, &x, &y, &th, &ep, v, idx).unwrap();
                assert!((got - want).abs() < 1e-12, "{v} {idx}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn exhaustive_matches_brute_force() {
        let t = random_operator(2, 11);
        for v in RandomVariable::ALL {
            for idx in RvIndex::all(v, 1).into_iter().step_by(5) {
                let (x, y) = gamlen_gaudet(1, 1).unwrap();
                let e = exhaustive_moments(&t, &x, &y, v, idx).unwrap();
                let (m, m2) = brute_force(&t, 1, 1, v, idx);
                assert_eq!(e.mean, 0.0);
                assert!(m.abs() < 1e-12);
                assert!((e.second_moment - m2).abs() <= 1e-12 * (1.0 + m2), "{v} {idx}");
            }
        }
    }

    #[test]
    fn index_constraints() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let t = random_operator(2, 0);
        let s = SignAssignment::all_plus(2);
        let bad = RvIndex::w(iv(0, 0), iv(0, 0), iv(1, 0), iv(0, 0));
        assert!(eval_rv(&t, &x, &y, &s, &s, RandomVariable::W, bad).is_err());
        assert!(mc_moments(&t, &x, &y, RandomVariable::Z, RvIndex::z(iv(0, 0), iv(0, 0)), 99, 0).is_err());
        assert_eq!(RvIndex::all(RandomVariable::Z, 1).len(), 9);
        assert_eq!(RvIndex::all(RandomVariable::W, 1).len(), 36);
        assert_eq!(RvIndex::all(RandomVariable::X, 1).len(), 18);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let (x, y) = gamlen_gaudet(0, 4).unwrap();
        let t = OperatorMatrix::identity(SpaceDescriptor::euclidean(4));
        let err = exhaustive_moments(&t, &x, &y, RandomVariable::Z, RvIndex::z(iv(0, 0), iv(0, 0))).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { axis: 'x', size: 16, cap: 14 }));
    }

    #[test]
    fn exact_path_survives_wide_exponent_ranges() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let mut t = random_operator(2, 5).into_gram();
        t[(0, 1)] = 1e-200;
        t[(3, 4)] = 1e100;
        let t = OperatorMatrix::on(SpaceDescriptor::euclidean(2), t).unwrap();
        for v in RandomVariable::ALL {
            for idx in RvIndex::all(v, 1) {
                assert_eq!(exhaustive_moments(&t, &x, &y, v, idx).unwrap().mean, 0.0);
            }
        }
    }

    #[test]
    fn mc_is_deterministic_and_agrees() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let t = random_operator(2, 8);
        let ctx = MomentContext::new(&t, &x, &y);
        let idx = RvIndex::x(iv(1, 0), iv(1, 1), iv(0, 0));
        let a = ctx.monte_carlo(RandomVariable::X, idx, 10_000, 7).unwrap();
        assert_eq!(a, ctx.monte_carlo(RandomVariable::X, idx, 10_000, 7).unwrap());
        let e = ctx.exhaustive(RandomVariable::X, idx).unwrap();
        assert!((a.mean - e.mean).abs() <= 4.0 * a.stderr_mean);
        assert!((a.second_moment - e.second_moment).abs() <= 4.0 * a.stderr_second);
        assert!(e.second_moment <= e.bound);
    }

    #[test]
    fn search_examples() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let id = OperatorMatrix::identity(SpaceDescriptor::euclidean(2));
        let r = search_signs(&id, &x, &y, 1e-9, 10, 0).unwrap();
        assert!(r.accepted);
        assert_eq!(r.attempts, 1);
        assert_eq!((r.max_offdiag, r.max_diag_deviation), (0.0, 0.0));

        let t = generate_test_operator(2, 0.5, 0.55, ExponentPair::EUCLIDEAN, Structure::DiagonalPlusNoise, 4).unwrap();
        let r = search_signs(&t, &x, &y, 0.2, 1000, 3).unwrap();
        assert!(r.accepted);
        let (th, ep) = (r.theta.clone().unwrap(), r.eps.clone().unwrap());
        let sys = build_system(&x, &y, &th, &ep).unwrap();
        let basis = sys.small_basis();
        for (a, ra) in basis.iter().enumerate() {
            for (b, rb) in basis.iter().enumerate() {
                let idx = RvIndex { i: ra.x, i_prime: rb.x, j: ra.y, j_prime: rb.y };
                let v = match (ra.x != rb.x, ra.y != rb.y) {
                    (true, true) => RandomVariable::W,
                    (true, false) => RandomVariable::X,
                    (false, true) => RandomVariable::Y,
                    (false, false) => RandomVariable::Z,
                };
                let val = eval_rv(&t, &x, &y, &th, &ep, v, idx).unwrap();
                assert!(val.abs() <= 0.2, "{a} {b}");
            }
        }
        // accepted at a larger threshold no later
        let r2 = search_signs(&t, &x, &y, 0.3, 1000, 3).unwrap();
        assert!(r2.accepted && r2.attempts <= r.attempts);

        let dense = random_operator(2, 1);
        let r = search_signs(&dense, &x, &y, 0.0, 20, 0).unwrap();
        assert!(!r.accepted && r.attempts == 20 && r.theta.is_none());
        assert!(r.max_offdiag > 0.0);
    }

    #[test]
    fn trace_layout() {
        let mut buf = Vec::new();
        let idx = RvIndex::z(iv(0, 0), iv(1, 1));
        write_trace(&mut buf, RandomVariable::Z, idx, &[0.5, -1.0], true).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "trial,variable,I,I',J,J',value\n0,Z,0:0,0:0,1:1,1:1,0.5\n1,Z,0:0,0:0,1:1,1:1,-1.0\n");
    }
}
