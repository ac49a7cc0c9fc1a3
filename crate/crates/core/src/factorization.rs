//! Factoring `Id_{V_n}` through an operator `T` on `V_N` with large diagonal.
//!
//! After the sign correction `T ↦ TM` the pipeline takes Gamlen–Gaudet
//! families, searches almost-diagonalizing signs, and forms
//! `U f = Σ ⟨f, b_R⟩/⟨T b_R, b_R⟩ b_R`, `S = (UTI)⁻¹U`, `E = M·B` and
//! `F = A_{|Y}·S`. Because `S` lands in `Y = span{b_R}` and `A b_R = h_R`,
//! `F` is just `S` written in the coordinates `(c_R)` of `Σ c_R b_R`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::block_basis::{build_system, coordinates_with, operator_b, BlockBasisSystem};
use crate::collections::gamlen_gaudet;
use crate::error::{Error, Result};
use crate::haar::{ExponentPair, SpaceDescriptor};
use crate::numeric::max_abs_from_identity;
use crate::operators::{
    has_large_diagonal, multiplication_m, norm_estimate_with, spectral_norm_l2, NormEstimate, NormSampling,
    OperatorMatrix,
};
use crate::randomization::{block_gram, search_signs, SignSearchReport};

/// Residual tolerance for `F·T·E = Id`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;
const NEUMANN_TERMS: usize = 50;
const NEUMANN_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    Theoretical,
    Practical {
        #[serde(rename = "N")]
        big_n: u32,
        m0: u32,
        eta0: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationParams {
    pub n: u32,
    pub delta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub mode: Mode,
    #[serde(default = "default_attempts")]
    pub max_attempts: u64,
    #[serde(default = "default_exponents")]
    pub exponents: ExponentPair,
}

fn default_attempts() -> u64 {
    10_000
}

fn default_exponents() -> ExponentPair {
    ExponentPair::EUCLIDEAN
}

impl FactorizationParams {
    pub fn practical(n: u32, big_n: u32, m0: u32, eta0: f64, delta: f64, gamma: f64, eta: f64) -> Self {
        Self {
            n,
            delta,
            gamma,
            eta,
            mode: Mode::Practical { big_n, m0, eta0 },
            max_attempts: default_attempts(),
            exponents: default_exponents(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.eta > 0.0 && self.gamma >= self.delta) {
            return Err(Error::Precondition(format!(
                "need delta > 0, eta > 0 and gamma ≥ delta (got {}, {}, {})",
                self.delta, self.eta, self.gamma
            )));
        }
        if let Mode::Practical { big_n, m0, eta0 } = self.mode {
            if eta0.is_nan() || eta0 <= 0.0 {
                return Err(Error::Precondition(format!("eta0 = {eta0} must be positive")));
            }
            if m0 + self.n > big_n {
                return Err(Error::Precondition(format!("n + m0 = {} exceeds N = {big_n}", self.n + m0)));
            }
            if big_n > crate::dyadic::max_resolution() {
                return Err(Error::ResolutionExceeded { level: big_n, max: crate::dyadic::max_resolution() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub eta0: f64,
    pub m0: u64,
    /// `41(n+3) + ⌊4 log₂(Γ/δ) + 4 log₂(1+1/η)⌋`.
    #[serde(rename = "N")]
    pub big_n: u64,
}

/// Smallest integer `k` with `2^k > y` (for `y > 0`).
fn smallest_exceeding_power(y: f64) -> i64 {
    let mut k = y.log2().floor() as i64 + 1;
    while k > -1070 && pow2(k - 1) > y {
        k -= 1;
    }
    while pow2(k) <= y {
        k += 1;
    }
    k
}

fn pow2(k: i64) -> f64 {
    if k < -1000 {
        2f64.powi(-1000) * 2f64.powi((k + 1000) as i32)
    } else {
        2f64.powi(k as i32)
    }
}

/// `η₀ = ηδ/((1+η)2^{8(n+2)})`, the least `m₀` with `2^{m₀} > 2^{8(n+3)}Γ⁴/η₀⁴`, and `N`.
pub fn constants(n: u32, delta: f64, gamma: f64, eta: f64) -> Result<Constants> {
    if !(delta > 0.0 && eta > 0.0 && gamma >= delta && gamma.is_finite() && eta.is_finite()) {
        return Err(Error::Precondition(format!(
            "need delta > 0, eta > 0 and finite gamma ≥ delta (got {delta}, {gamma}, {eta})"
        )));
    }
    let n64 = i64::from(n);
    let c = eta * delta / (1.0 + eta);
    let eta0 = c * pow2(-8 * (n64 + 2));
    // 2^{m₀} > 2^{8(n+3)+32(n+2)}·(Γ/c)⁴
    let k = smallest_exceeding_power((gamma / c).powi(4));
    let m0 = (8 * (n64 + 3) + 32 * (n64 + 2) + k).max(0) as u64;
    // ⌊log₂ z⌋ for z = ((Γ/δ)(1+1/η))⁴, which is ≥ 1
    let z = (gamma / delta * (1.0 + 1.0 / eta)).powi(4);
    let floor_log = smallest_exceeding_power(z) - 1;
    Ok(Constants { eta0, m0, big_n: (41 * (n64 + 3) + floor_log) as u64 })
}

/// `U` written in the coordinates of `Y`: `f ↦ (⟨f, b_R⟩/⟨T b_R, b_R⟩)_R`.
pub fn build_u_coordinates(t: &OperatorMatrix, sys: &BlockBasisSystem) -> Result<OperatorMatrix> {
    let tau = block_gram(t, sys).diagonal();
    if let Some(k) = tau.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateBlockDiagonal(sys.small_basis().get(k).to_string()));
    }
    Ok(coordinates_with(sys, tau.as_slice()))
}

/// `U : V_N → Y ⊂ V_N`.
pub fn build_u(t: &OperatorMatrix, sys: &BlockBasisSystem) -> Result<OperatorMatrix> {
    operator_b(sys).compose(&build_u_coordinates(t, sys)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannCheck {
    pub terms: usize,
    pub max_diff: f64,
    pub converged: bool,
}

pub struct SOperator {
    /// `S` in the coordinates of `Y`, i.e. `F`.
    pub coordinates: OperatorMatrix,
    /// `U·T·I` in the coordinates of `Y`.
    pub uti: DMatrix<f64>,
    pub condition_number: f64,
    pub neumann: Option<NeumannCheck>,
}

/// `S = (UTI)⁻¹U`; the Neumann series for `(UTI)⁻¹` is cross-checked when `neumann_ratio < 1`.
pub fn build_s(t: &OperatorMatrix, sys: &BlockBasisSystem, u_coords: &OperatorMatrix, neumann_ratio: f64) -> Result<SOperator> {
    let g = block_gram(t, sys);
    let d = g.nrows();
    // (UTI)[R, R'] = ⟨T b_{R'}, b_R⟩ / ⟨T b_R, b_R⟩
    let uti = DMatrix::from_fn(d, d, |r, r2| g[(r, r2)] / g[(r, r)]);
    let inv = uti
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Infeasible("U·T·I is singular".into()))?;
    let sv = uti.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let neumann = (neumann_ratio < 1.0).then(|| {
        let k = DMatrix::identity(d, d) - &uti;
        let mut term = DMatrix::identity(d, d);
        let mut sum = term.clone();
        for _ in 1..NEUMANN_TERMS {
            term = &term * &k;
            sum += &term;
        }
        let max_diff = crate::numeric::max_abs_diff(&sum, &inv);
        NeumannCheck { terms: NEUMANN_TERMS, max_diff, converged: max_diff <= NEUMANN_TOLERANCE }
    });
    let action = inv * u_coords.action();
    let coordinates = OperatorMatrix::from_action(u_coords.domain(), u_coords.codomain(), action)?;
    Ok(SOperator { coordinates, uti, condition_number, neumann })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationArtifacts {
    pub params: FactorizationParams,
    pub constants: Constants,
    #[serde(rename = "N")]
    pub big_n: u32,
    pub m0: u32,
    pub eta0: f64,
    pub e: OperatorMatrix,
    pub f: OperatorMatrix,
    /// `sign(⟨T h_Q, h_Q⟩)` in canonical order.
    pub m_signs: Vec<f64>,
    pub system: BlockBasisSystem,
    pub search: SignSearchReport,
    pub residual: f64,
    pub norm_product_lower: f64,
    pub theoretical_bound: f64,
    pub neumann_ratio: f64,
    pub neumann: Option<NeumannCheck>,
    pub condition_number: f64,
    /// Exact `‖U‖` at `p = q = 2`.
    pub u_norm_l2: f64,
    /// `1/(δ − η₀2^{2n})` when the denominator is positive.
    pub u_bound: Option<f64>,
}

impl FactorizationArtifacts {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `max |F·T·E − Id|` from plain matrix products of the coefficient actions.
pub fn residual(f: &OperatorMatrix, t: &OperatorMatrix, e: &OperatorMatrix) -> f64 {
    max_abs_from_identity(&(f.action() * t.action() * e.action()))
}

/// `η₀·2^{8(n+1)}/(δ − η₀·2^{2n})` (`∞` when the denominator is not positive).
pub fn neumann_ratio(n: u32, delta: f64, eta0: f64) -> f64 {
    let den = delta - eta0 * pow2(2 * i64::from(n));
    if den > 0.0 {
        eta0 * pow2(8 * (i64::from(n) + 1)) / den
    } else {
        f64::INFINITY
    }
}

/// Runs the whole pipeline. Theoretical mode is rejected as intractable.
pub fn factorize(t: &OperatorMatrix, params: &FactorizationParams, seed: u64) -> Result<FactorizationArtifacts> {
    params.validate()?;
    let consts = constants(params.n, params.delta, params.gamma, params.eta)?;
    let (big_n, m0, eta0) = match params.mode {
        Mode::Practical { big_n, m0, eta0 } => (big_n, m0, eta0),
        Mode::Theoretical => {
            return Err(Error::Infeasible(format!(
                "theoretical constants need N = {} and m0 = {}; at most N = {} is tractable",
                consts.big_n,
                consts.m0,
                crate::dyadic::max_resolution()
            )))
        }
    };
    if !t.is_square() || t.domain().resolution != big_n {
        return Err(Error::ResolutionMismatch { left: t.domain().resolution, right: big_n });
    }
    let diag = has_large_diagonal(t, params.delta)?;
    if !diag.holds {
        return Err(Error::Precondition(format!(
            "|<T h_Q, h_Q>| ≥ delta|Q| fails at {} (ratio {})",
            diag.worst, diag.worst_ratio
        )));
    }

    let m = multiplication_m(t)?;
    let m_signs: Vec<f64> = crate::operators::diagonal_signs(t)?;
    let tm = t.compose(&m)?;

    let (x, y) = gamlen_gaudet(params.n, m0)?;
    let (x, y) = (x.lift(big_n)?, y.lift(big_n)?);
    let search = search_signs(&tm, &x, &y, eta0, params.max_attempts, seed)?;
    if !search.accepted {
        return Err(Error::SignsNotFound(Box::new(search)));
    }
    let sys = build_system(&x, &y, search.theta.as_ref().expect("accepted"), search.eps.as_ref().expect("accepted"))?;

    let ratio = neumann_ratio(params.n, params.delta, eta0);
    let u = build_u_coordinates(&tm, &sys)?;
    let s = build_s(&tm, &sys, &u, ratio)?;
    let e = m.compose(&operator_b(&sys))?;
    let f = s.coordinates;
    let res = residual(&f, t, &e);

    let sampling = NormSampling { samples: 64, seed };
    let product = norm_estimate_with(&e, params.exponents, sampling).lower
        * norm_estimate_with(&f, params.exponents, sampling).lower;
    let u_den = params.delta - eta0 * pow2(2 * i64::from(params.n));
    Ok(FactorizationArtifacts {
        params: *params,
        constants: consts,
        big_n,
        m0,
        eta0,
        u_norm_l2: spectral_norm_l2(&operator_b(&sys).compose(&u)?),
        e,
        f,
        m_signs,
        system: sys,
        search,
        residual: res,
        norm_product_lower: product,
        theoretical_bound: (1.0 + params.eta) / params.delta,
        neumann_ratio: ratio,
        neumann: s.neumann,
        condition_number: s.condition_number,
        u_bound: (u_den > 0.0).then(|| 1.0 / u_den),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramReport {
    pub residual: f64,
    pub residual_ok: bool,
    pub norm_e: NormEstimate,
    pub norm_f: NormEstimate,
    pub norm_product_lower: f64,
    pub bound: f64,
    /// `norm_product_lower ≤ (1+η)/δ·(1+1e−9)`.
    pub within_bound: bool,
    /// `‖E‖‖F‖` at `p = q = 2`.
    pub exact_product: Option<f64>,
    /// `1/(δ − η₀(2^{2n} + 2^{8(n+1)}))` when positive.
    pub arithmetic_bound: Option<f64>,
    pub within_arithmetic_bound: Option<bool>,
    pub passed: bool,
}

/// Re-checks the residual against `T` and measures `‖E‖‖F‖`.
pub fn verify_diagram(
    art: &FactorizationArtifacts,
    t: &OperatorMatrix,
    exponents: ExponentPair,
    samples: usize,
    seed: u64,
) -> Result<DiagramReport> {
    if t.domain().resolution != art.e.codomain().resolution || !t.is_square() {
        return Err(Error::ResolutionMismatch { left: t.domain().resolution, right: art.e.codomain().resolution });
    }
    let res = residual(&art.f, t, &art.e);
    let sampling = NormSampling { samples, seed };
    let (ne, nf) = (norm_estimate_with(&art.e, exponents, sampling), norm_estimate_with(&art.f, exponents, sampling));
    let product = ne.lower * nf.lower;
    let bound = (1.0 + art.params.eta) / art.params.delta;
    let within = product <= bound * (1.0 + 1e-9);
    let exact = exponents.is_euclidean().then(|| spectral_norm_l2(&art.e) * spectral_norm_l2(&art.f));
    let n = i64::from(art.params.n);
    let den = art.params.delta - art.eta0 * (pow2(2 * n) + pow2(8 * (n + 1)));
    let arithmetic = (den > 0.0).then(|| 1.0 / den);
    let within_arith = match (exact, arithmetic) {
        (Some(p), Some(b)) => Some(p <= b * (1.0 + 1e-9)),
        _ => None,
    };
    let residual_ok = res <= RESIDUAL_TOLERANCE;
    Ok(DiagramReport {
        residual: res,
        residual_ok,
        norm_e: ne,
        norm_f: nf,
        norm_product_lower: product,
        bound,
        within_bound: within,
        exact_product: exact,
        arithmetic_bound: arithmetic,
        within_arithmetic_bound: within_arith,
        passed: residual_ok && within && within_arith.unwrap_or(true),
    })
}

/// The spaces `V_n` and `V_N` as used by `E : V_n → V_N`.
pub fn spaces(art: &FactorizationArtifacts) -> (SpaceDescriptor, SpaceDescriptor) {
    (art.e.domain(), art.e.codomain())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_basis::{operator_a, projection_p, SignAssignment};
    use crate::collections::gamlen_gaudet;
    use crate::operators::{generate_test_operator, Structure};

    fn euclid(n: u32) -> SpaceDescriptor {
        SpaceDescriptor::euclidean(n)
    }

    #[test]
    fn constants_examples() {
        let c = constants(0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(c.big_n, 127);
        assert_eq!(c.eta0, 2f64.powi(-17));
        assert_eq!(c.m0, 93);
        assert_eq!(constants(1, 1.0, 2.0, 1.0).unwrap().big_n, 172);
        let ns: Vec<u64> = (0..6).map(|n| constants(n, 1.0, 1.0, 1.0).unwrap().big_n).collect();
        assert_eq!(ns, [127, 168, 209, 250, 291, 332]);
        assert!(constants(0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn m0_matches_direct_comparison() {
        for n in 0..3u32 {
            for &(d, g, e) in &[(1.0, 1.0, 1.0), (0.5, 1.0, 0.25), (0.3, 2.0, 3.0)] {
                let c = constants(n, d, g, e).unwrap();
                // log₂ of 2^{8(n+3)}Γ⁴/η₀⁴
                let rhs = 8.0 * f64::from(n + 3) + 4.0 * (g / c.eta0).log2();
                assert!((c.m0 as f64) > rhs - 1e-9 && (c.m0 as f64) <= rhs + 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn u_and_s_for_diagonal_operators() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let s = SignAssignment::all_plus(2);
        let sys = build_system(&x, &y, &s, &s).unwrap();
        let id = OperatorMatrix::identity(euclid(2));
        let a = operator_a(&sys);
        assert!(crate::numeric::max_abs_diff(&build_u(&id, &sys).unwrap().action(), &projection_p(&sys).action()) < 1e-15);
        let half = OperatorMatrix::scaled_identity(euclid(2), 0.5);
        let u = build_u_coordinates(&half, &sys).unwrap();
        assert!(crate::numeric::max_abs_diff(&u.action(), &a.action().scale(2.0)) < 1e-15);
        let s_op = build_s(&half, &sys, &u, 2.0).unwrap();
        assert!(max_abs_from_identity(&s_op.uti) < 1e-15);
        assert!(crate::numeric::max_abs_diff(&s_op.coordinates.action(), &u.action()) < 1e-15);
        assert!(s_op.neumann.is_none());
        let zero = OperatorMatrix::zero(euclid(2));
        assert!(matches!(build_u_coordinates(&zero, &sys), Err(Error::DegenerateBlockDiagonal(_))));
    }

    #[test]
    fn diagonal_example_is_exact() {
        let t = OperatorMatrix::scaled_identity(euclid(2), 0.5);
        let p = FactorizationParams::practical(1, 2, 1, 0.05, 0.5, 1.0, 1.0);
        let art = factorize(&t, &p, 0).unwrap();
        assert!(art.residual <= 1e-12);
        let report = verify_diagram(&art, &t, ExponentPair::EUCLIDEAN, 16, 0).unwrap();
        assert!((report.exact_product.unwrap() - 2.0).abs() <= 1e-12);
        assert!(report.passed);
        let back = FactorizationArtifacts::from_json(&art.to_json()).unwrap();
        assert_eq!(back.residual, art.residual);
        assert_eq!(back.f, art.f);
    }

    #[test]
    fn negative_diagonal_is_corrected() {
        let base = generate_test_operator(2, 0.5, 1.0, ExponentPair::EUCLIDEAN, Structure::DiagonalPlusNoise, 6).unwrap();
        let signs: Vec<f64> = (0..base.domain().dim()).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let t = base.with_column_signs(&signs).unwrap();
        let p = FactorizationParams::practical(1, 2, 1, 0.05, 0.5, 1.0, 1.0);
        let a = factorize(&t, &p, 1).unwrap();
        let b = factorize(&base, &p, 1).unwrap();
        assert!(a.residual <= 1e-9);
        assert_eq!(a.residual, b.residual);
    }

    #[test]
    fn end_to_end_noise() {
        let t = generate_test_operator(3, 0.5, 1.0, ExponentPair::EUCLIDEAN, Structure::DiagonalPlusNoise, 2).unwrap();
        let p = FactorizationParams::practical(1, 3, 1, 0.05, 0.5, 1.0, 1.0);
        let art = factorize(&t, &p, 5).unwrap();
        assert!(art.search.accepted);
        assert!(art.residual <= 1e-9);
        let r = verify_diagram(&art, &t, ExponentPair::EUCLIDEAN, 8, 0).unwrap();
        assert!(r.residual_ok);
    }

    #[test]
    fn scaling_covariance() {
        let t = generate_test_operator(2, 0.5, 1.0, ExponentPair::EUCLIDEAN, Structure::DiagonalPlusNoise, 9).unwrap();
        let c = 3.0;
        let p = FactorizationParams::practical(1, 2, 1, 0.05, 0.5, 1.0, 1.0);
        let pc = FactorizationParams::practical(1, 2, 1, 0.05 * c, 0.5 * c, 1.0 * c, 1.0);
        let a = factorize(&t, &p, 3).unwrap();
        let b = factorize(&t.scaled(c), &pc, 3).unwrap();
        assert_eq!(a.e, b.e);
        assert!(crate::numeric::max_abs_diff(&a.f.action(), &b.f.action().scale(c)) <= 1e-10);
        assert!((a.residual - b.residual).abs() <= 1e-10);
    }

    #[test]
    fn mode_and_precondition_errors() {
        let t = OperatorMatrix::scaled_identity(euclid(2), 0.5);
        let mut p = FactorizationParams::practical(1, 2, 1, 0.05, 0.5, 1.0, 1.0);
        p.mode = Mode::Theoretical;
        assert!(matches!(factorize(&t, &p, 0), Err(Error::Infeasible(_))));
        let p = FactorizationParams::practical(1, 2, 2, 0.05, 0.5, 1.0, 1.0);
        assert!(matches!(factorize(&t, &p, 0), Err(Error::Precondition(_))));
        let p = FactorizationParams::practical(1, 2, 1, 0.05, 0.6, 1.0, 1.0);
        assert!(matches!(factorize(&t, &p, 0), Err(Error::Precondition(_))));
        let dense = generate_test_operator(2, 0.5, 1.0, ExponentPair::EUCLIDEAN, Structure::DiagonalPlusNoise, 1).unwrap();
        let mut p = FactorizationParams::practical(1, 2, 1, 1e-12, 0.5, 1.0, 1.0);
        p.max_attempts = 5;
        match factorize(&dense, &p, 0) {
            Err(Error::SignsNotFound(r)) => assert_eq!(r.attempts, 5),
            other => panic!("{other:?}"),
        }
    }
}
