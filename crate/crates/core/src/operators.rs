//! Operators between Haar spaces, stored as bilinear-form values.
//!
//! `gram[(Q', Q)] = ⟨T h_Q, h_{Q'}⟩` with rows indexed by the codomain basis
//! and columns by the domain basis, both in canonical order. Because the Haar
//! basis is orthogonal, the coefficient of `T f` at `Q'` is
//! `Σ_Q a_Q gram[(Q', Q)] / |Q'|`; that coefficient-action matrix is derived
//! on demand.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{basis_len, enumerate_with_max, BasisEnumeration, DyadicRectangle};
use crate::error::{Error, Result};
use crate::haar::{mixed_norm, ExponentPair, HardyElement, Side, SpaceDescriptor};
use crate::numeric::spectral_norm;
use crate::rng;

/// Identifies the basis ordering in serialized matrices.
pub const BASIS_ORDER: &str = "canonical-v1";

const BINARY_MAGIC: &[u8; 4] = b"HFGM";
const BINARY_VERSION: u32 = 1;

fn basis(res: u32) -> BasisEnumeration {
    enumerate_with_max(res, res).expect("resolution is its own bound")
}

fn measures(res: u32) -> Vec<f64> {
    basis(res).measures()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    domain: SpaceDescriptor,
    codomain: SpaceDescriptor,
    gram: DMatrix<f64>,
}

impl OperatorMatrix {
    pub fn new(domain: SpaceDescriptor, codomain: SpaceDescriptor, gram: DMatrix<f64>) -> Result<Self> {
        if gram.nrows() != codomain.dim() {
            return Err(Error::DimensionMismatch { expected: codomain.dim(), got: gram.nrows() });
        }
        if gram.ncols() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: gram.ncols() });
        }
        Ok(Self { domain, codomain, gram })
    }

    /// Square operator on `space`.
    pub fn on(space: SpaceDescriptor, gram: DMatrix<f64>) -> Result<Self> {
        Self::new(space, space, gram)
    }

    /// From the coefficient-action matrix `C`: `gram = diag(|Q'|)·C`.
    pub fn from_action(domain: SpaceDescriptor, codomain: SpaceDescriptor, mut action: DMatrix<f64>) -> Result<Self> {
        if action.nrows() != codomain.dim() {
            return Err(Error::DimensionMismatch { expected: codomain.dim(), got: action.nrows() });
        }
        for (i, w) in measures(codomain.resolution).into_iter().enumerate() {
            action.row_mut(i).scale_mut(w);
        }
        Self::new(domain, codomain, action)
    }

    /// `gram = c·diag(|Q|)`.
    pub fn scaled_identity(space: SpaceDescriptor, c: f64) -> Self {
        let d = DVector::from_vec(measures(space.resolution)).scale(c);
        Self { domain: space, codomain: space, gram: DMatrix::from_diagonal(&d) }
    }

    pub fn identity(space: SpaceDescriptor) -> Self {
        Self::scaled_identity(space, 1.0)
    }

    /// `h_Q ↦ d_Q h_Q`.
    pub fn diagonal_multiplier(space: SpaceDescriptor, d: &[f64]) -> Result<Self> {
        let w = measures(space.resolution);
        if d.len() != w.len() {
            return Err(Error::DimensionMismatch { expected: w.len(), got: d.len() });
        }
        let diag = DVector::from_iterator(w.len(), d.iter().zip(&w).map(|(a, b)| a * b));
        Ok(Self { domain: space, codomain: space, gram: DMatrix::from_diagonal(&diag) })
    }

    pub fn zero(space: SpaceDescriptor) -> Self {
        Self { domain: space, codomain: space, gram: DMatrix::zeros(space.dim(), space.dim()) }
    }

    pub fn domain(&self) -> SpaceDescriptor {
        self.domain
    }

    pub fn codomain(&self) -> SpaceDescriptor {
        self.codomain
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn into_gram(self) -> DMatrix<f64> {
        self.gram
    }

    pub fn is_square(&self) -> bool {
        self.domain.resolution == self.codomain.resolution
    }

    /// Same matrix, tagged with other exponents.
    pub fn with_exponents(mut self, e: ExponentPair) -> Self {
        self.domain.exponents = e;
        self.codomain.exponents = e;
        self
    }

    /// `C = diag(|Q'|)⁻¹ · gram`.
    pub fn action(&self) -> DMatrix<f64> {
        let mut c = self.gram.clone();
        for (i, w) in measures(self.codomain.resolution).into_iter().enumerate() {
            c.row_mut(i).unscale_mut(w);
        }
        c
    }

    /// `⟨T e_Q, e_{Q'}⟩` for the orthonormal basis `e_Q = h_Q / |Q|^{1/2}`.
    pub fn orthonormal(&self) -> DMatrix<f64> {
        let wr = measures(self.codomain.resolution);
        let wc = measures(self.domain.resolution);
        DMatrix::from_fn(self.gram.nrows(), self.gram.ncols(), |i, j| {
            self.gram[(i, j)] / (wr[i] * wc[j]).sqrt()
        })
    }

    pub fn apply(&self, f: &HardyElement) -> Result<HardyElement> {
        if f.resolution() != self.domain.resolution {
            return Err(Error::ResolutionMismatch { left: self.domain.resolution, right: f.resolution() });
        }
        let a = DVector::from_column_slice(f.coefficients());
        let mut out = &self.gram * a;
        for (o, w) in out.iter_mut().zip(measures(self.codomain.resolution)) {
            *o /= w;
        }
        HardyElement::new(self.codomain.resolution, out.as_slice().to_vec())
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &OperatorMatrix) -> Result<OperatorMatrix> {
        if inner.codomain.resolution != self.domain.resolution {
            return Err(Error::ResolutionMismatch {
                left: self.domain.resolution,
                right: inner.codomain.resolution,
            });
        }
        let action = self.action() * inner.action();
        Self::from_action(inner.domain, self.codomain, action)
    }

    /// The `L²` adjoint: `gram` transposed, domain and codomain swapped.
    pub fn adjoint(&self) -> OperatorMatrix {
        let flip = |mut s: SpaceDescriptor| {
            s.side = match s.side {
                Side::Primal => Side::Dual,
                Side::Dual => Side::Primal,
            };
            s
        };
        Self { domain: flip(self.codomain), codomain: flip(self.domain), gram: self.gram.transpose() }
    }

    pub fn scaled(&self, c: f64) -> OperatorMatrix {
        Self { domain: self.domain, codomain: self.codomain, gram: self.gram.scale(c) }
    }

    /// `T ∘ M_s` where `M_s h_Q = s_Q h_Q`: column `Q` is multiplied by `s_Q`.
    pub fn with_column_signs(&self, signs: &[f64]) -> Result<OperatorMatrix> {
        if signs.len() != self.gram.ncols() {
            return Err(Error::DimensionMismatch { expected: self.gram.ncols(), got: signs.len() });
        }
        let mut gram = self.gram.clone();
        for (j, &s) in signs.iter().enumerate() {
            gram.column_mut(j).scale_mut(s);
        }
        Ok(Self { domain: self.domain, codomain: self.codomain, gram })
    }

    /// Largest `|gram|` entry difference.
    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        crate::numeric::max_abs_diff(&self.gram, &other.gram)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MatrixJson::from(self)).expect("matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MatrixJson = serde_json::from_str(s)?;
        m.try_into()
    }

    /// `"HFGM"`, version, `N`, side (0 primal, 1 dual), then row-major `f64` LE.
    pub fn to_binary(&self) -> Result<Vec<u8>> {
        if !self.is_square() {
            return Err(Error::Precondition("binary Gram dumps hold square operators only".into()));
        }
        let mut out = Vec::with_capacity(16 + 8 * self.gram.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&self.domain.resolution.to_le_bytes());
        let side: u32 = match self.domain.side {
            Side::Primal => 0,
            Side::Dual => 1,
        };
        out.extend_from_slice(&side.to_le_bytes());
        for i in 0..self.gram.nrows() {
            for j in 0..self.gram.ncols() {
                out.extend_from_slice(&self.gram[(i, j)].to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_binary(bytes: &[u8], exponents: ExponentPair) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
            return Err(Error::Parse("not an HFGM Gram dump".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes"));
        if word(4) != BINARY_VERSION {
            return Err(Error::Parse(format!("unsupported HFGM version {}", word(4))));
        }
        let res = word(8);
        if res > crate::dyadic::max_resolution() {
            return Err(Error::ResolutionExceeded { level: res, max: crate::dyadic::max_resolution() });
        }
        let side = match word(12) {
            0 => Side::Primal,
            1 => Side::Dual,
            s => return Err(Error::Parse(format!("bad side tag {s}"))),
        };
        let d = basis_len(res);
        let body = &bytes[16..];
        if body.len() != 8 * d * d {
            return Err(Error::DimensionMismatch { expected: 8 * d * d, got: body.len() });
        }
        let gram = DMatrix::from_row_iterator(
            d,
            d,
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        );
        let space = SpaceDescriptor { resolution: res, exponents, side };
        Self::on(space, gram)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    n: u32,
    #[serde(rename = "N")]
    big_n: u32,
    order: String,
    domain: SpaceDescriptor,
    codomain: SpaceDescriptor,
    gram: Vec<Vec<f64>>,
}

impl From<&OperatorMatrix> for MatrixJson {
    fn from(m: &OperatorMatrix) -> Self {
        MatrixJson {
            n: m.domain.resolution,
            big_n: m.codomain.resolution,
            order: BASIS_ORDER.to_string(),
            domain: m.domain,
            codomain: m.codomain,
            gram: m.gram.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<MatrixJson> for OperatorMatrix {
    type Error = Error;
    fn try_from(m: MatrixJson) -> Result<Self> {
        if m.order != BASIS_ORDER {
            return Err(Error::Parse(format!("unknown basis order {:?}", m.order)));
        }
        if m.n != m.domain.resolution || m.big_n != m.codomain.resolution {
            return Err(Error::Parse("basis metadata disagrees with space descriptors".into()));
        }
        let rows = m.gram.len();
        let cols = m.gram.first().map_or(0, Vec::len);
        if m.gram.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("ragged gram rows".into()));
        }
        let gram = DMatrix::from_row_iterator(rows, cols, m.gram.into_iter().flatten());
        OperatorMatrix::new(m.domain, m.codomain, gram)
    }
}

impl Serialize for OperatorMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for OperatorMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        MatrixJson::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

/// `T f`.
pub fn apply(t: &OperatorMatrix, f: &HardyElement) -> Result<HardyElement> {
    t.apply(f)
}

fn require_square(t: &OperatorMatrix) -> Result<()> {
    if !t.is_square() {
        return Err(Error::Precondition("operator must map V_N to itself".into()));
    }
    Ok(())
}

/// `⟨T h_Q, h_Q⟩` in canonical order.
pub fn diagonal(t: &OperatorMatrix) -> Result<Vec<f64>> {
    require_square(t)?;
    Ok(t.gram.diagonal().iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeDiagonal {
    pub holds: bool,
    /// Minimizer of `|⟨T h_Q, h_Q⟩| / |Q|`.
    pub worst: DyadicRectangle,
    pub worst_ratio: f64,
}

/// Whether `|⟨T h_Q, h_Q⟩| ≥ δ|Q|` for every `Q`.
pub fn has_large_diagonal(t: &OperatorMatrix, delta: f64) -> Result<LargeDiagonal> {
    require_square(t)?;
    let b = basis(t.domain.resolution);
    let mut worst = (DyadicRectangle::UNIT, f64::INFINITY);
    let mut holds = true;
    for (i, r) in b.iter().enumerate() {
        let v = t.gram[(i, i)].abs();
        let w = r.measure();
        if v < delta * w {
            holds = false;
        }
        if v / w < worst.1 {
            worst = (r, v / w);
        }
    }
    Ok(LargeDiagonal { holds, worst: worst.0, worst_ratio: worst.1 })
}

/// `M h_Q = sign(⟨T h_Q, h_Q⟩) h_Q`.
pub fn multiplication_m(t: &OperatorMatrix) -> Result<OperatorMatrix> {
    OperatorMatrix::diagonal_multiplier(t.domain, &diagonal_signs(t)?)
}

/// `sign(⟨T h_Q, h_Q⟩)` for every `Q`; zero entries are rejected.
pub fn diagonal_signs(t: &OperatorMatrix) -> Result<Vec<f64>> {
    let b = basis(t.domain.resolution);
    diagonal(t)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v == 0.0 || v.is_nan() {
                Err(Error::DegenerateDiagonal(b.get(i).to_string()))
            } else {
                Ok(v.signum())
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Diagonal,
    DiagonalPlusNoise,
    PermutedBlocks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMethod {
    SpectralP2q2,
    Sampled,
    TriangleBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    /// Attained by a witness vector.
    pub lower: f64,
    pub upper: Option<f64>,
    pub method: NormMethod,
}

impl NormEstimate {
    /// The certified upper bound, if any.
    pub fn certified_upper(&self) -> Option<f64> {
        self.upper
    }
}

/// `‖T‖` on `L²`: largest singular value of the orthonormal matrix.
pub fn spectral_norm_l2(t: &OperatorMatrix) -> f64 {
    spectral_norm(&t.orthonormal())
}

/// Triangle-inequality bound on `‖T‖_{H^p(H^q)}`.
///
/// The pieces with equal domain and codomain rectangle form a multiplier,
/// bounded by the largest `|c_Q|` (the norm only sees `|a_R|`). Every other
/// entry is a rank-one map `f ↦ c·a_Q(f)·h_{Q'}` of norm
/// `|c|·‖h_{Q'}‖ / ‖h_Q‖`, since `‖a_Q‖_* = ‖h_Q‖_*/|Q| = 1/‖h_Q‖`.
pub fn triangle_bound(t: &OperatorMatrix, e: ExponentPair) -> f64 {
    let (dom, cod) = (basis(t.domain.resolution), basis(t.codomain.resolution));
    let hnorm = |r: DyadicRectangle| r.x.measure().powf(1.0 / e.p()) * r.y.measure().powf(1.0 / e.q());
    let dn: Vec<f64> = dom.iter().map(hnorm).collect();
    let cn: Vec<f64> = cod.iter().map(hnorm).collect();
    let action = t.action();
    let mut diag = 0.0f64;
    let mut off = 0.0f64;
    for j in 0..action.ncols() {
        let rj = dom.get(j);
        for i in 0..action.nrows() {
            let c = action[(i, j)];
            if c == 0.0 {
                continue;
            }
            if cod.get(i) == rj {
                diag = diag.max(c.abs());
            } else {
                off += c.abs() * cn[i] / dn[j];
            }
        }
    }
    diag + off
}

/// A guaranteed upper bound on `‖T‖` in the exponents of the domain:
/// exact at `p = q = 2`, the triangle bound otherwise.
pub fn certified_norm_upper(t: &OperatorMatrix) -> f64 {
    let e = t.domain.exponents;
    if e.is_euclidean() {
        spectral_norm_l2(t)
    } else if t.domain.side == Side::Dual {
        triangle_bound(&t.adjoint(), e)
    } else {
        triangle_bound(t, e)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NormSampling {
    pub samples: usize,
    pub seed: u64,
}

impl Default for NormSampling {
    fn default() -> Self {
        Self { samples: 64, seed: 0 }
    }
}

/// `‖T‖_{V_dom → V_cod}` with default sampling.
pub fn norm_estimate(t: &OperatorMatrix, e: ExponentPair) -> NormEstimate {
    norm_estimate_with(t, e, NormSampling::default())
}

/// At `p = q = 2` the exact spectral norm. Otherwise the best sampled ratio
/// `‖Tf‖/‖f‖` over coordinates, block sign patterns, leading singular
/// vectors and seeded random vectors, with the triangle bound as upper.
/// Dual-side operators are measured through their adjoint.
pub fn norm_estimate_with(t: &OperatorMatrix, e: ExponentPair, sampling: NormSampling) -> NormEstimate {
    if t.domain.side == Side::Dual {
        return norm_estimate_with(&t.adjoint(), e, sampling);
    }
    if e.is_euclidean() {
        let s = spectral_norm_l2(t);
        return NormEstimate { lower: s, upper: Some(s), method: NormMethod::SpectralP2q2 };
    }
    let lower = sampled_lower(t, e, sampling);
    let upper = triangle_bound(t, e);
    NormEstimate { lower: lower.min(upper), upper: Some(upper), method: NormMethod::Sampled }
}

fn sampled_lower(t: &OperatorMatrix, e: ExponentPair, sampling: NormSampling) -> f64 {
    let dres = t.domain.resolution;
    let dim = t.domain.dim();
    let action = t.action();
    let ratio = |a: Vec<f64>| -> f64 {
        let f = HardyElement::new(dres, a).expect("domain length");
        let nf = mixed_norm(&f, e);
        if nf == 0.0 {
            return 0.0;
        }
        let out = &action * DVector::from_column_slice(f.coefficients());
        let tf = HardyElement::new(t.codomain.resolution, out.as_slice().to_vec()).expect("codomain length");
        mixed_norm(&tf, e) / nf
    };

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for j in 0..dim {
        let mut a = vec![0.0; dim];
        a[j] = 1.0;
        candidates.push(a);
    }
    if dim <= 1500 {
        let w = measures(dres);
        let svd = t.orthonormal().svd(false, true);
        if let Some(vt) = svd.v_t {
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            for &k in order.iter().take(4) {
                candidates.push((0..dim).map(|j| vt[(k, j)] / w[j].sqrt()).collect());
            }
        }
    }
    let dom = basis(dres);
    let mut r = rng::stream(sampling.seed, "norm/blocks", 0);
    for lx in 0..=dres {
        for ly in 0..=dres {
            let a = dom
                .iter()
                .map(|q| {
                    if q.x.level() == lx && q.y.level() == ly {
                        if r.random_bool(0.5) { 1.0 } else { -1.0 }
                    } else {
                        0.0
                    }
                })
                .collect();
            candidates.push(a);
        }
    }
    let fixed = candidates.into_par_iter().map(ratio).reduce(|| 0.0, f64::max);
    let random = (0..sampling.samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(sampling.seed, "norm/sample", k);
            ratio(HardyElement::random(dres, &mut r).into_coefficients())
        })
        .reduce(|| 0.0, f64::max);
    fixed.max(random)
}

/// A random operator on `V_N` with `|⟨T h_Q,h_Q⟩| ≥ δ|Q|` and a certified `‖T‖ ≤ γ`.
///
/// Diagonal multipliers draw `d_Q ∈ [δ, γ]`. The noisy structures draw
/// `d_Q ∈ [δ, (δ+γ)/2]` and add off-diagonal couplings (dense Gaussian, or a
/// random perfect pairing of rectangles) scaled into the remaining budget,
/// measured by the spectral norm at `p = q = 2` and the triangle bound
/// otherwise.
pub fn generate_test_operator(
    resolution: u32,
    delta: f64,
    gamma: f64,
    exponents: ExponentPair,
    structure: Structure,
    seed: u64,
) -> Result<OperatorMatrix> {
    if !(delta > 0.0 && delta.is_finite() && gamma.is_finite()) {
        return Err(Error::Generation(format!("delta = {delta}, gamma = {gamma} must be finite and positive")));
    }
    if delta > gamma {
        return Err(Error::Generation(format!("infeasible: delta = {delta} exceeds gamma = {gamma}")));
    }
    if resolution > crate::dyadic::max_resolution() {
        return Err(Error::ResolutionExceeded { level: resolution, max: crate::dyadic::max_resolution() });
    }
    let space = SpaceDescriptor::primal(resolution, exponents);
    let dim = space.dim();
    let mut r = rng::stream(seed, "operator/generate", 0);
    let top = match structure {
        Structure::Diagonal => gamma,
        _ => delta + 0.5 * (gamma - delta),
    };
    let d: Vec<f64> = (0..dim).map(|_| if top > delta { r.random_range(delta..=top) } else { delta }).collect();
    let diag = OperatorMatrix::diagonal_multiplier(space, &d)?;
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let budget = gamma - dmax;

    let t = if structure == Structure::Diagonal || budget <= 0.0 {
        diag
    } else {
        let mut k = DMatrix::<f64>::zeros(dim, dim);
        match structure {
            Structure::DiagonalPlusNoise => {
                for i in 0..dim {
                    for j in 0..dim {
                        if i != j {
                            k[(i, j)] = r.sample(rand_distr::StandardNormal);
                        }
                    }
                }
            }
            Structure::PermutedBlocks => {
                let mut perm: Vec<usize> = (0..dim).collect();
                perm.shuffle(&mut r);
                for pair in perm.chunks_exact(2) {
                    k[(pair[0], pair[1])] = r.random_range(-1.0..1.0);
                    k[(pair[1], pair[0])] = r.random_range(-1.0..1.0);
                }
            }
            Structure::Diagonal => unreachable!(),
        }
        // orthonormal coordinates -> Gram values
        let w = measures(resolution);
        let noise_gram = DMatrix::from_fn(dim, dim, |i, j| k[(i, j)] * (w[i] * w[j]).sqrt());
        let noise = OperatorMatrix::on(space, noise_gram)?;
        let size = if exponents.is_euclidean() { spectral_norm_l2(&noise) } else { triangle_bound(&noise, exponents) };
        let scale = if size > 0.0 { 0.999 * budget / size } else { 0.0 };
        OperatorMatrix::on(space, diag.gram() + noise.gram().scale(scale))?
    };

    if !has_large_diagonal(&t, delta)?.holds {
        return Err(Error::Generation("generated operator misses the diagonal lower bound".into()));
    }
    let certified = if exponents.is_euclidean() { spectral_norm_l2(&t) } else { triangle_bound(&t, exponents) };
    if certified > gamma * (1.0 + 1e-10) {
        return Err(Error::Generation(format!("certified norm {certified} exceeds gamma = {gamma}")));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::l2_inner;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn random_operator(res: u32, seed: u64) -> OperatorMatrix {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = basis_len(res);
        let g = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        OperatorMatrix::on(SpaceDescriptor::euclidean(res), g).unwrap()
    }

    #[test]
    fn apply_examples() {
        let s = SpaceDescriptor::euclidean(2);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let f = HardyElement::random(2, &mut r);
        let id = OperatorMatrix::identity(s);
        let out = id.apply(&f).unwrap();
        for (a, b) in out.coefficients().iter().zip(f.coefficients()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(OperatorMatrix::zero(s).apply(&f).unwrap().is_zero());
        assert!(id.apply(&HardyElement::zeros(1)).is_err());
    }

    #[test]
    fn apply_matches_pairing_oracle() {
        let t = random_operator(2, 4);
        let b = basis(2);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let f = HardyElement::random(2, &mut r);
        let tf = t.apply(&f).unwrap();
        for (qi, q) in b.iter().enumerate() {
            let hq = HardyElement::basis(q, 2).unwrap();
            let paired = l2_inner(&tf, &hq).unwrap();
            let contraction: f64 = (0..b.len()).map(|j| t.gram()[(qi, j)] * f.coefficients()[j]).sum();
            assert!((paired - contraction).abs() < 1e-12, "{paired} vs {contraction}");
        }
    }

    #[test]
    fn diagonal_examples() {
        let s = SpaceDescriptor::euclidean(2);
        let b = basis(2);
        let id = diagonal(&OperatorMatrix::identity(s)).unwrap();
        let scaled = diagonal(&OperatorMatrix::scaled_identity(s, 0.3)).unwrap();
        for (i, q) in b.iter().enumerate() {
            assert_eq!(id[i], q.measure());
            assert_eq!(scaled[i], 0.3 * q.measure());
        }
        let t = random_operator(2, 9);
        let d = diagonal(&t).unwrap();
        for (i, q) in b.iter().enumerate() {
            let hq = HardyElement::basis(q, 2).unwrap();
            let v = l2_inner(&t.apply(&hq).unwrap(), &hq).unwrap();
            assert!((v - d[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn large_diagonal_examples() {
        let s = SpaceDescriptor::euclidean(2);
        let id = OperatorMatrix::identity(s);
        assert!(has_large_diagonal(&id, 1.0).unwrap().holds);
        let r = has_large_diagonal(&id, 1.01).unwrap();
        assert!(!r.holds);
        assert_eq!(r.worst_ratio, 1.0);
        let g = generate_test_operator(2, 0.5, 1.0, ExponentPair::EUCLIDEAN, Structure::DiagonalPlusNoise, 3).unwrap();
        assert!(has_large_diagonal(&g, 0.5).unwrap().holds);
    }

    #[test]
    fn multiplication_operator_examples() {
        let s = SpaceDescriptor::euclidean(2);
        let id = OperatorMatrix::identity(s);
        assert_eq!(multiplication_m(&id).unwrap(), id);

        let t = generate_test_operator(2, 0.5, 1.0, ExponentPair::EUCLIDEAN, Structure::DiagonalPlusNoise, 8).unwrap();
        let mut signs = vec![1.0; s.dim()];
        signs[7] = -1.0;
        let flipped = t.with_column_signs(&signs).unwrap();
        let m = multiplication_m(&flipped).unwrap();
        let md = diagonal(&m).unwrap();
        let b = basis(2);
        for (i, q) in b.iter().enumerate() {
            assert_eq!(md[i], signs[i] * q.measure());
        }
        let tm = flipped.compose(&m).unwrap();
        let (d_t, d_tm) = (diagonal(&flipped).unwrap(), diagonal(&tm).unwrap());
        for i in 0..d_t.len() {
            assert_eq!(d_tm[i], d_t[i].abs());
        }

        let neg = OperatorMatrix::scaled_identity(s, -1.0);
        let m = multiplication_m(&neg).unwrap();
        assert_eq!(m, neg);
        assert_eq!(neg.compose(&m).unwrap(), id);

        let mut zero_diag = id.clone().into_gram();
        zero_diag[(3, 3)] = 0.0;
        let z = OperatorMatrix::on(s, zero_diag).unwrap();
        assert!(matches!(multiplication_m(&z), Err(Error::DegenerateDiagonal(_))));
    }

    #[test]
    fn generator_examples() {
        let e = ExponentPair::EUCLIDEAN;
        let s = SpaceDescriptor::euclidean(2);
        assert_eq!(generate_test_operator(2, 1.0, 1.0, e, Structure::Diagonal, 0).unwrap(), OperatorMatrix::identity(s));
        let t = generate_test_operator(2, 0.5, 1.0, e, Structure::DiagonalPlusNoise, 1).unwrap();
        assert!(has_large_diagonal(&t, 0.5).unwrap().holds);
        assert!(spectral_norm_l2(&t) <= 1.0 + 1e-10);
        // genuinely off-diagonal
        assert!(t.gram()[(0, 1)] != 0.0);
        assert!(matches!(
            generate_test_operator(2, 1.0, 0.5, e, Structure::Diagonal, 0),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn generator_post_conditions() {
        let exps = [ExponentPair::EUCLIDEAN, ExponentPair::new(1.0, 2.0).unwrap(), ExponentPair::new(3.0, 1.5).unwrap()];
        for (k, &e) in exps.iter().enumerate() {
            for structure in [Structure::Diagonal, Structure::DiagonalPlusNoise, Structure::PermutedBlocks] {
                for seed in 0..4 {
                    let t = generate_test_operator(2, 0.25, 1.5, e, structure, seed + 10 * k as u64).unwrap();
                    assert!(has_large_diagonal(&t, 0.25).unwrap().holds);
                    let est = norm_estimate(&t, e);
                    assert!(est.upper.unwrap() <= 1.5 * (1.0 + 1e-10));
                    assert!(spectral_norm_l2(&t) <= triangle_bound(&t, ExponentPair::EUCLIDEAN) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn norm_estimate_examples() {
        let s = SpaceDescriptor::euclidean(2);
        let est = norm_estimate(&OperatorMatrix::identity(s), ExponentPair::EUCLIDEAN);
        assert!((est.lower - 1.0).abs() < 1e-12 && (est.upper.unwrap() - 1.0).abs() < 1e-12);
        for &(p, q) in &[(1.0, 1.0), (1.0, 2.0), (3.0, 1.5)] {
            let e = ExponentPair::new(p, q).unwrap();
            let est = norm_estimate(&OperatorMatrix::scaled_identity(s, 0.3), e);
            assert!((est.lower - 0.3).abs() < 1e-12);
            assert!((est.upper.unwrap() - 0.3).abs() < 1e-12);
        }
        for seed in 0..5 {
            let t = random_operator(2, seed);
            let exact = spectral_norm_l2(&t);
            let sampled = sampled_lower(&t, ExponentPair::EUCLIDEAN, NormSampling::default());
            assert!(sampled <= exact * (1.0 + 1e-12));
            // the leading singular vector is among the candidates
            assert!(sampled >= exact * (1.0 - 1e-9));
        }
    }

    #[test]
    fn compose_and_adjoint() {
        let a = random_operator(1, 1);
        let b = random_operator(1, 2);
        let ab = a.compose(&b).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let f = HardyElement::random(1, &mut r);
        let lhs = ab.apply(&f).unwrap();
        let rhs = a.apply(&b.apply(&f).unwrap()).unwrap();
        for (x, y) in lhs.coefficients().iter().zip(rhs.coefficients()) {
            assert!((x - y).abs() < 1e-12);
        }
        // ⟨T f, g⟩ = ⟨f, T* g⟩
        let g = HardyElement::random(1, &mut r);
        let l = l2_inner(&a.apply(&f).unwrap(), &g).unwrap();
        let rr = l2_inner(&f, &a.adjoint().apply(&g).unwrap()).unwrap();
        assert!((l - rr).abs() < 1e-12);
    }

    #[test]
    fn binary_dump_layout() {
        let t = random_operator(1, 3);
        let bytes = t.to_binary().unwrap();
        assert_eq!(&bytes[..4], b"HFGM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), 16 + 8 * 81);
        assert_eq!(f64::from_le_bytes(bytes[16 + 8..24 + 8].try_into().unwrap()), t.gram()[(0, 1)]);
        assert_eq!(OperatorMatrix::from_binary(&bytes, ExponentPair::EUCLIDEAN).unwrap(), t);
        assert!(OperatorMatrix::from_binary(&bytes[..20], ExponentPair::EUCLIDEAN).is_err());
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["order"], "canonical-v1");
        assert_eq!(OperatorMatrix::from_json(&t.to_json()).unwrap(), t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn apply_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let t = random_operator(2, seed);
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
            let f = HardyElement::random(2, &mut r);
            let g = HardyElement::random(2, &mut r);
            let lhs = t.apply(&f.scaled(a).add(&g.scaled(b)).unwrap()).unwrap();
            let rhs = t.apply(&f).unwrap().scaled(a).add(&t.apply(&g).unwrap().scaled(b)).unwrap();
            for (x, y) in lhs.coefficients().iter().zip(rhs.coefficients()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn sampled_lower_never_exceeds_spectral(seed in any::<u64>()) {
            let t = random_operator(1, seed);
            let est = sampled_lower(&t, ExponentPair::EUCLIDEAN, NormSampling { samples: 16, seed });
            prop_assert!(est <= spectral_norm_l2(&t) * (1.0 + 1e-12));
        }
    }
}
