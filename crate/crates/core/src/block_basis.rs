//! Randomized block bases `b_{I×J} = f_I ⊗ g_J` with
//! `f_I = Σ_{K∈𝒳_I} θ_K h_K`, `g_J = Σ_{L∈𝒴_J} ε_L h_L`, and the operators
//! `B : V_n → V_N`, `A : V_N → V_n` and `P = BA`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collections::{check_jones, CollectionFamily};
use crate::dyadic::{enumerate_with_max, interval_count, BasisEnumeration, DyadicInterval, DyadicRectangle};
use crate::error::{Error, Result};
use crate::haar::{HardyElement, SpaceDescriptor};
use crate::operators::OperatorMatrix;

/// A sign for every interval of `𝒟_{≤N}`, stored by linear index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSigns", into = "RawSigns")]
pub struct SignAssignment {
    resolution: u32,
    values: Vec<i8>,
}

#[derive(Serialize, Deserialize)]
struct RawSigns {
    resolution: u32,
    values: Vec<i8>,
}

impl TryFrom<RawSigns> for SignAssignment {
    type Error = Error;
    fn try_from(r: RawSigns) -> Result<Self> {
        Self::from_values(r.resolution, r.values)
    }
}

impl From<SignAssignment> for RawSigns {
    fn from(s: SignAssignment) -> Self {
        RawSigns { resolution: s.resolution, values: s.values }
    }
}

impl SignAssignment {
    pub fn all_plus(resolution: u32) -> Self {
        Self { resolution, values: vec![1; interval_count(resolution)] }
    }

    pub fn from_values(resolution: u32, values: Vec<i8>) -> Result<Self> {
        if values.len() != interval_count(resolution) {
            return Err(Error::DimensionMismatch { expected: interval_count(resolution), got: values.len() });
        }
        if values.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::Precondition("signs must be +1 or -1".into()));
        }
        Ok(Self { resolution, values })
    }

    /// Uniform signs on `support` (in the given order), `+1` elsewhere.
    pub fn random_on(resolution: u32, support: &[DyadicInterval], rng: &mut impl Rng) -> Self {
        let mut s = Self::all_plus(resolution);
        for &k in support {
            s.values[k.linear_index()] = if rng.random_bool(0.5) { 1 } else { -1 };
        }
        s
    }

    /// `+1` everywhere except on the members of `support` whose bit in `mask` is set.
    pub fn from_mask(resolution: u32, support: &[DyadicInterval], mask: u64) -> Self {
        let mut s = Self::all_plus(resolution);
        for (b, &k) in support.iter().enumerate() {
            if mask >> b & 1 == 1 {
                s.values[k.linear_index()] = -1;
            }
        }
        s
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn get(&self, i: DyadicInterval) -> f64 {
        f64::from(self.values[i.linear_index()])
    }

    pub fn set(&mut self, i: DyadicInterval, sign: i8) -> Result<()> {
        if sign != 1 && sign != -1 {
            return Err(Error::Precondition("signs must be +1 or -1".into()));
        }
        if i.level() > self.resolution {
            return Err(Error::InsufficientResolution { needed: i.level(), got: self.resolution });
        }
        self.values[i.linear_index()] = sign;
        Ok(())
    }

    pub fn flipped(&self, i: DyadicInterval) -> Self {
        let mut s = self.clone();
        s.values[i.linear_index()] *= -1;
        s
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }
}

/// A validated system `{b_R : R ∈ 𝒟_{≤n}⊗𝒟_{≤n}}` inside `V_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct BlockBasisSystem {
    xfam: CollectionFamily,
    yfam: CollectionFamily,
    theta: SignAssignment,
    eps: SignAssignment,
    /// `(canonical index in V_N, ±1)` per block, in canonical order of `V_n`.
    blocks: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct RawSystem {
    xfam: CollectionFamily,
    yfam: CollectionFamily,
    theta: SignAssignment,
    eps: SignAssignment,
}

impl TryFrom<RawSystem> for BlockBasisSystem {
    type Error = Error;
    fn try_from(r: RawSystem) -> Result<Self> {
        build_system(&r.xfam, &r.yfam, &r.theta, &r.eps)
    }
}

impl From<BlockBasisSystem> for RawSystem {
    fn from(s: BlockBasisSystem) -> Self {
        RawSystem { xfam: s.xfam, yfam: s.yfam, theta: s.theta, eps: s.eps }
    }
}

/// Validates both families and assembles every block.
pub fn build_system(
    xfam: &CollectionFamily,
    yfam: &CollectionFamily,
    theta: &SignAssignment,
    eps: &SignAssignment,
) -> Result<BlockBasisSystem> {
    validate_families(xfam, yfam)?;
    assemble(xfam, yfam, theta, eps)
}

pub(crate) fn validate_families(xfam: &CollectionFamily, yfam: &CollectionFamily) -> Result<()> {
    if xfam.domain_resolution() != yfam.domain_resolution() {
        return Err(Error::ResolutionMismatch { left: xfam.domain_resolution(), right: yfam.domain_resolution() });
    }
    if xfam.target_resolution() != yfam.target_resolution() {
        return Err(Error::ResolutionMismatch { left: xfam.target_resolution(), right: yfam.target_resolution() });
    }
    let big_n = xfam.target_resolution();
    if big_n > crate::dyadic::max_resolution() {
        return Err(Error::ResolutionExceeded { level: big_n, max: crate::dyadic::max_resolution() });
    }
    for fam in [xfam, yfam] {
        fam.ensure_complete()?;
        let report = check_jones(fam)?;
        if !report.passed {
            return Err(Error::InvalidFamily(Box::new(report)));
        }
    }
    Ok(())
}

/// Assembles blocks for families already known to be valid.
pub(crate) fn assemble(
    xfam: &CollectionFamily,
    yfam: &CollectionFamily,
    theta: &SignAssignment,
    eps: &SignAssignment,
) -> Result<BlockBasisSystem> {
    let big_n = xfam.target_resolution();
    for s in [theta, eps] {
        if s.resolution != big_n {
            return Err(Error::ResolutionMismatch { left: big_n, right: s.resolution });
        }
    }
    let small = enumerate_with_max(xfam.domain_resolution(), big_n)?;
    let blocks = small
        .order()
        .par_iter()
        .map(|r| {
            let xs = xfam.collection(r.x).expect("complete family");
            let ys = yfam.collection(r.y).expect("complete family");
            let mut b = Vec::with_capacity(xs.len() * ys.len());
            for &k in xs {
                for &l in ys {
                    b.push((DyadicRectangle::new(k, l).canonical_index(big_n), theta.get(k) * eps.get(l)));
                }
            }
            b.sort_unstable_by_key(|e| e.0);
            b
        })
        .collect();
    Ok(BlockBasisSystem { xfam: xfam.clone(), yfam: yfam.clone(), theta: theta.clone(), eps: eps.clone(), blocks })
}

impl BlockBasisSystem {
    /// `n`.
    pub fn small_resolution(&self) -> u32 {
        self.xfam.domain_resolution()
    }

    /// `N`.
    pub fn large_resolution(&self) -> u32 {
        self.xfam.target_resolution()
    }

    pub fn xfam(&self) -> &CollectionFamily {
        &self.xfam
    }

    pub fn yfam(&self) -> &CollectionFamily {
        &self.yfam
    }

    pub fn theta(&self) -> &SignAssignment {
        &self.theta
    }

    pub fn eps(&self) -> &SignAssignment {
        &self.eps
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `𝒟_{≤n}⊗𝒟_{≤n}` in canonical order.
    pub fn small_basis(&self) -> BasisEnumeration {
        enumerate_with_max(self.small_resolution(), self.large_resolution()).expect("validated")
    }

    /// Nonzero coefficients of the `k`-th block.
    pub fn block(&self, k: usize) -> &[(usize, f64)] {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[Vec<(usize, f64)>] {
        &self.blocks
    }

    /// `b_R` as an element of `V_N`.
    pub fn element(&self, r: DyadicRectangle) -> Result<HardyElement> {
        let k = self
            .small_basis()
            .index_of(r)
            .ok_or(Error::InsufficientResolution { needed: r.max_level(), got: self.small_resolution() })?;
        Ok(self.element_at(k))
    }

    pub fn element_at(&self, k: usize) -> HardyElement {
        let mut c = vec![0.0; crate::dyadic::basis_len(self.large_resolution())];
        for &(i, s) in &self.blocks[k] {
            c[i] = s;
        }
        HardyElement::new(self.large_resolution(), c).expect("length")
    }

    /// `‖b_R‖₂²` per block.
    pub fn block_norms_sq(&self) -> Vec<f64> {
        let big = enumerate_with_max(self.large_resolution(), self.large_resolution()).expect("validated");
        self.blocks.iter().map(|b| b.iter().map(|&(i, _)| big.get(i).measure()).sum()).collect()
    }

    fn spaces(&self) -> (SpaceDescriptor, SpaceDescriptor) {
        (SpaceDescriptor::euclidean(self.small_resolution()), SpaceDescriptor::euclidean(self.large_resolution()))
    }
}

/// `B f = Σ_R a_R b_R`: the columns of the coefficient action are the `b_R`.
pub fn operator_b(sys: &BlockBasisSystem) -> OperatorMatrix {
    let (small, large) = sys.spaces();
    let mut c = nalgebra::DMatrix::zeros(large.dim(), small.dim());
    for (k, b) in sys.blocks.iter().enumerate() {
        for &(i, s) in b {
            c[(i, k)] = s;
        }
    }
    OperatorMatrix::from_action(small, large, c).expect("dimensions agree")
}

/// `A f = Σ_R ⟨f, b_R⟩/‖b_R‖₂² h_R`.
pub fn operator_a(sys: &BlockBasisSystem) -> OperatorMatrix {
    coordinates_with(sys, &sys.block_norms_sq())
}

/// `f ↦ Σ_R ⟨f, b_R⟩/w_R h_R` for arbitrary denominators `w_R`.
pub(crate) fn coordinates_with(sys: &BlockBasisSystem, denominators: &[f64]) -> OperatorMatrix {
    let (small, large) = sys.spaces();
    let big = enumerate_with_max(sys.large_resolution(), sys.large_resolution()).expect("validated");
    let mut c = nalgebra::DMatrix::zeros(small.dim(), large.dim());
    for (k, b) in sys.blocks.iter().enumerate() {
        for &(i, s) in b {
            c[(k, i)] = s * big.get(i).measure() / denominators[k];
        }
    }
    OperatorMatrix::from_action(large, small, c).expect("dimensions agree")
}

/// `P = B·A`.
pub fn projection_p(sys: &BlockBasisSystem) -> OperatorMatrix {
    operator_b(sys).compose(&operator_a(sys)).expect("resolutions agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collections::gamlen_gaudet;
    use crate::haar::{l2_inner, mixed_norm, ExponentPair};
    use crate::numeric::{max_abs_diff, max_abs_from_identity};
    use rand::SeedableRng;

    fn iv(l: u32, k: u64) -> DyadicInterval {
        DyadicInterval::new(l, k).unwrap()
    }

    fn random_system(n: u32, m0: u32, seed: u64) -> BlockBasisSystem {
        let (x, y) = gamlen_gaudet(n, m0).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let th = SignAssignment::random_on(n + m0, &x.support(), &mut r);
        let ep = SignAssignment::random_on(n + m0, &y.support(), &mut r);
        build_system(&x, &y, &th, &ep).unwrap()
    }

    #[test]
    fn identity_families_give_haar_functions() {
        let id = CollectionFamily::identity(2).unwrap();
        let s = SignAssignment::all_plus(2);
        let sys = build_system(&id, &id, &s, &s).unwrap();
        for r in sys.small_basis().iter() {
            assert_eq!(sys.element(r).unwrap(), HardyElement::basis(r, 2).unwrap());
        }
        let b = operator_b(&sys);
        assert_eq!(b, OperatorMatrix::identity(SpaceDescriptor::euclidean(2)));
        assert_eq!(projection_p(&sys), b);
    }

    #[test]
    fn gamlen_gaudet_top_block() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        let s = SignAssignment::all_plus(2);
        let sys = build_system(&x, &y, &s, &s).unwrap();
        let top = sys.element(DyadicRectangle::UNIT).unwrap();
        let expected: Vec<DyadicRectangle> = crate::dyadic::tensor(
            &DyadicInterval::level_intervals(1).collect::<Vec<_>>(),
            &DyadicInterval::level_intervals(1).collect::<Vec<_>>(),
        );
        assert_eq!(expected.len(), 4);
        for q in enumerate_with_max(2, 2).unwrap().iter() {
            assert_eq!(top.get(q), if expected.contains(&q) { 1.0 } else { 0.0 });
        }
        let f = HardyElement::basis(DyadicRectangle::UNIT, 1).unwrap();
        assert_eq!(operator_b(&sys).apply(&f).unwrap(), top);
    }

    #[test]
    fn biorthogonality_is_exact() {
        for n in 0..=2 {
            for m0 in 0..=2 {
                if n + m0 > 4 {
                    continue;
                }
                let sys = random_system(n, m0, 17 * n as u64 + m0 as u64);
                let els: Vec<_> = (0..sys.len()).map(|k| sys.element_at(k)).collect();
                let basis = sys.small_basis();
                for (a, fa) in els.iter().enumerate() {
                    for (b, fb) in els.iter().enumerate() {
                        let v = l2_inner(fa, fb).unwrap();
                        let want = if a == b { basis.get(a).measure() } else { 0.0 };
                        assert_eq!(v, want, "n={n} m0={m0} {a} {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn a_inverts_b_and_p_is_idempotent() {
        let sys = random_system(1, 1, 5);
        let (a, b, p) = (operator_a(&sys), operator_b(&sys), projection_p(&sys));
        assert!(max_abs_from_identity(&a.compose(&b).unwrap().action()) <= 1e-12);
        let pp = p.compose(&p).unwrap();
        assert!(max_abs_diff(&pp.action(), &p.action()) <= 1e-11);
        for k in 0..sys.len() {
            let bk = sys.element_at(k);
            let back = a.apply(&bk).unwrap();
            assert_eq!(back, HardyElement::basis(sys.small_basis().get(k), 1).unwrap());
            assert_eq!(p.apply(&bk).unwrap(), bk);
        }
        // h_Q outside every block is annihilated
        let (x, _) = gamlen_gaudet(1, 1).unwrap();
        let used: Vec<_> = x.support();
        let unused = DyadicInterval::up_to(2).find(|k| !used.contains(k)).unwrap();
        let hq = HardyElement::basis(DyadicRectangle::new(unused, unused), 2).unwrap();
        assert!(a.apply(&hq).unwrap().is_zero());
    }

    #[test]
    fn b_is_an_isometry() {
        let sys = random_system(1, 1, 9);
        let b = operator_b(&sys);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &(p, q) in &[(1.0, 1.0), (1.0, 2.0), (2.0, 2.0), (3.0, 1.5)] {
            let e = ExponentPair::new(p, q).unwrap();
            for _ in 0..20 {
                let f = HardyElement::random(1, &mut r);
                let (nf, nb) = (mixed_norm(&f, e), mixed_norm(&b.apply(&f).unwrap(), e));
                assert!((nf - nb).abs() <= 1e-10 * nf);
            }
        }
    }

    #[test]
    fn flipping_theta_flips_rows() {
        let sys = random_system(1, 1, 2);
        let k = iv(2, 1);
        let flipped = build_system(sys.xfam(), sys.yfam(), &sys.theta().flipped(k), sys.eps()).unwrap();
        let (b0, b1) = (operator_b(&sys).action(), operator_b(&flipped).action());
        let big = enumerate_with_max(2, 2).unwrap();
        for (i, q) in big.iter().enumerate() {
            for j in 0..b0.ncols() {
                if q.x == k {
                    assert_eq!(b1[(i, j)], -b0[(i, j)]);
                } else {
                    assert_eq!(b1[(i, j)], b0[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn signs_validate_and_roundtrip() {
        assert!(SignAssignment::from_values(1, vec![1, 1]).is_err());
        assert!(SignAssignment::from_values(1, vec![1, 0, 1]).is_err());
        let sys = random_system(1, 1, 4);
        let json = serde_json::to_string(&sys).unwrap();
        let back: BlockBasisSystem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn invalid_family_is_rejected() {
        let mut a = std::collections::BTreeMap::new();
        a.insert(DyadicInterval::UNIT, vec![iv(1, 0)]);
        a.insert(iv(1, 0), vec![iv(1, 0)]);
        a.insert(iv(1, 1), vec![iv(1, 1)]);
        let bad = CollectionFamily::new(1, 1, 1.0, a).unwrap();
        let s = SignAssignment::all_plus(1);
        assert!(matches!(build_system(&bad, &bad, &s, &s), Err(Error::InvalidFamily(_))));
    }
}
