//! Interval collections `I ↦ 𝒳_I`, Jones' compatibility condition (J1)–(J4),
//! Capon's local product condition (P1)–(P4) for `𝒳_I ⊗ 𝒴_J`, and the
//! Gamlen–Gaudet construction.
//!
//! Point sets `Z_I = ⋃𝒵_I` are bitsets over the cells of the level-`N` grid,
//! so every measure is an integer cell count and every inequality is checked
//! without tolerance.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, DyadicRectangle};
use crate::error::{Error, Result};

/// Largest target resolution of a family (bitsets have `2^N` cells).
pub const MAX_FAMILY_RESOLUTION: u32 = 24;

type CellSet = BitVec<u64, Lsb0>;

/// `I ↦ 𝒳_I` on `𝒟_{≤n}`, with intervals in `𝒟_{≤N}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionFamily {
    n: u32,
    #[serde(rename = "N")]
    target: u32,
    kappa: f64,
    assignments: BTreeMap<DyadicInterval, Vec<DyadicInterval>>,
}

impl CollectionFamily {
    pub fn new(
        n: u32,
        target: u32,
        kappa: f64,
        assignments: BTreeMap<DyadicInterval, Vec<DyadicInterval>>,
    ) -> Result<Self> {
        if target > MAX_FAMILY_RESOLUTION {
            return Err(Error::ResolutionExceeded { level: target, max: MAX_FAMILY_RESOLUTION });
        }
        if n > target {
            return Err(Error::ResolutionExceeded { level: n, max: target });
        }
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::Precondition(format!("kappa = {kappa} must be a finite number ≥ 1")));
        }
        for (i, c) in &assignments {
            if i.level() > n {
                return Err(Error::ResolutionExceeded { level: i.level(), max: n });
            }
            if let Some(k) = c.iter().find(|k| k.level() > target) {
                return Err(Error::ResolutionExceeded { level: k.level(), max: target });
            }
        }
        Ok(Self { n, target, kappa, assignments })
    }

    /// `𝒳_I = {I}`.
    pub fn identity(n: u32) -> Result<Self> {
        let assignments = DyadicInterval::up_to(n).map(|i| (i, vec![i])).collect();
        Self::new(n, n, 1.0, assignments)
    }

    pub fn domain_resolution(&self) -> u32 {
        self.n
    }

    pub fn target_resolution(&self) -> u32 {
        self.target
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::Precondition(format!("kappa = {kappa} must be a finite number ≥ 1")));
        }
        self.kappa = kappa;
        Ok(self)
    }

    /// Same collections, viewed inside `𝒟_{≤N}` for a larger `N`.
    pub fn lift(mut self, target: u32) -> Result<Self> {
        if target < self.target {
            return Err(Error::InsufficientResolution { needed: self.target, got: target });
        }
        if target > MAX_FAMILY_RESOLUTION {
            return Err(Error::ResolutionExceeded { level: target, max: MAX_FAMILY_RESOLUTION });
        }
        self.target = target;
        Ok(self)
    }

    pub fn assignments(&self) -> &BTreeMap<DyadicInterval, Vec<DyadicInterval>> {
        &self.assignments
    }

    pub fn collection(&self, i: DyadicInterval) -> Option<&[DyadicInterval]> {
        self.assignments.get(&i).map(Vec::as_slice)
    }

    /// The collection of `I`, or `IncompleteFamily`.
    pub fn get(&self, i: DyadicInterval) -> Result<&[DyadicInterval]> {
        self.collection(i).ok_or_else(|| Error::IncompleteFamily(i.to_string()))
    }

    pub fn ensure_complete(&self) -> Result<()> {
        for i in DyadicInterval::up_to(self.n) {
            self.get(i)?;
        }
        Ok(())
    }

    /// Every interval used by some collection, sorted and deduplicated.
    pub fn support(&self) -> Vec<DyadicInterval> {
        let mut s: Vec<_> = self.assignments.values().flatten().copied().collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// `Z_I = ⋃𝒳_I` as a set of level-`N` cells.
    pub fn union_cells(&self, i: DyadicInterval) -> Result<CellSet> {
        Ok(cells_of(self.get(i)?, self.target))
    }

    /// `|Z_I|`.
    pub fn union_measure(&self, i: DyadicInterval) -> Result<f64> {
        Ok(self.union_cells(i)?.count_ones() as f64 * cell_measure(self.target))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: Self = serde_json::from_str(s)?;
        Self::new(raw.n, raw.target, raw.kappa, raw.assignments)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("family serializes")
    }
}

fn cell_measure(res: u32) -> f64 {
    (0.5f64).powi(res as i32)
}

fn cells_of(c: &[DyadicInterval], res: u32) -> CellSet {
    let mut set = bitvec![u64, Lsb0; 0; 1usize << res];
    for k in c {
        let r = k.cell_range(res).expect("family intervals are within the target resolution");
        set[r].fill(true);
    }
    set
}

fn count_in(set: &CellSet, k: DyadicInterval, res: u32) -> usize {
    set[k.cell_range(res).expect("within resolution")].count_ones()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionTag {
    J1,
    J2,
    J3,
    J4,
    P1,
    P2,
    P3,
    P4,
}

impl fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Witness {
    Interval(DyadicInterval),
    Rectangle(DyadicRectangle),
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Interval(i) => write!(f, "{i}"),
            Witness::Rectangle(r) => write!(f, "{r}"),
        }
    }
}

impl Serialize for Witness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Witness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.contains(',') {
            s.parse().map(Witness::Rectangle).map_err(serde::de::Error::custom)
        } else {
            s.parse().map(Witness::Interval).map_err(serde::de::Error::custom)
        }
    }
}

/// One failed inequality with the intervals/rectangles that exhibit it.
///
/// `ratio` is the measured quantity: overlap measure for disjointness
/// failures (J1, J2, P1, P2), `|Z_I|/|I|` for J3/P3, and
/// `(|K∩Z_{I₀}|/|K|) / (|Z_{I₀}|/|Z_I|)` for J4/P4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tag: ConditionTag,
    pub witnesses: Vec<Witness>,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

impl ConditionReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self { passed: violations.is_empty(), violations }
    }

    pub fn has(&self, tag: ConditionTag) -> bool {
        self.violations.iter().any(|v| v.tag == tag)
    }

    pub fn first(&self, tag: ConditionTag) -> Option<&Violation> {
        self.violations.iter().find(|v| v.tag == tag)
    }
}

fn iw(i: DyadicInterval) -> Witness {
    Witness::Interval(i)
}

/// Shared state for checking one family with constant `kappa`.
struct Checked<'a> {
    fam: &'a CollectionFamily,
    domain: Vec<DyadicInterval>,
    unions: Vec<CellSet>,
}

impl<'a> Checked<'a> {
    fn new(fam: &'a CollectionFamily) -> Result<Self> {
        fam.ensure_complete()?;
        let domain: Vec<_> = DyadicInterval::up_to(fam.n).collect();
        let unions = domain.iter().map(|&i| fam.union_cells(i)).collect::<Result<_>>()?;
        Ok(Self { fam, domain, unions })
    }

    fn res(&self) -> u32 {
        self.fam.target
    }

    fn union(&self, i: DyadicInterval) -> &CellSet {
        &self.unions[i.linear_index()]
    }

    fn count(&self, i: DyadicInterval) -> usize {
        self.union(i).count_ones()
    }

    /// Collections consist of pairwise disjoint intervals.
    fn internal_disjointness(&self, tag: ConditionTag, out: &mut Vec<Violation>) {
        for &i in &self.domain {
            let c = &self.fam.assignments[&i];
            for (a, &k) in c.iter().enumerate() {
                for &k2 in &c[a + 1..] {
                    if k.intersects(k2) {
                        let overlap = k.measure().min(k2.measure());
                        out.push(Violation { tag, witnesses: vec![iw(i), iw(k), iw(k2)], ratio: overlap });
                    }
                }
            }
        }
    }

    /// (J3)/(P3): `κ⁻¹|I| ≤ |Z_I| ≤ κ|I|`.
    fn measure_bounds(&self, tag: ConditionTag, kappa: f64, out: &mut Vec<Violation>) {
        for &i in &self.domain {
            let z = self.count(i) as f64;
            let full = (1u64 << (self.res() - i.level())) as f64;
            if kappa * z < full || z > kappa * full {
                out.push(Violation { tag, witnesses: vec![iw(i)], ratio: z / full });
            }
        }
    }

    /// (J4)/(P4): `|K∩Z_{I₀}|/|K| ≥ κ⁻¹|Z_{I₀}|/|Z_I|` for `I₀ ⊆ I`, `K ∈ 𝒵_I`.
    fn local_density(&self, tag: ConditionTag, kappa: f64, out: &mut Vec<Violation>) {
        for &i in &self.domain {
            let zi = self.count(i);
            if zi == 0 {
                continue;
            }
            for &i0 in self.domain.iter().filter(|&&i0| i.contains(i0)) {
                let z0 = self.count(i0);
                for &k in &self.fam.assignments[&i] {
                    let k_cells = 1usize << (self.res() - k.level());
                    let hit = count_in(self.union(i0), k, self.res());
                    let lhs = kappa * hit as f64 * zi as f64;
                    let rhs = z0 as f64 * k_cells as f64;
                    if lhs < rhs {
                        let ratio = (hit as f64 / k_cells as f64) / (z0 as f64 / zi as f64);
                        out.push(Violation { tag, witnesses: vec![iw(i0), iw(i), iw(k)], ratio });
                    }
                }
            }
        }
    }

    /// The smallest `κ` satisfying (J3) and (J4).
    fn minimal_kappa(&self) -> f64 {
        let mut kappa = 1.0f64;
        for &i in &self.domain {
            let z = self.count(i) as f64;
            let full = (1u64 << (self.res() - i.level())) as f64;
            kappa = kappa.max(if z == 0.0 { f64::INFINITY } else { (full / z).max(z / full) });
            if z == 0.0 {
                continue;
            }
            for &i0 in self.domain.iter().filter(|&&i0| i.contains(i0)) {
                let z0 = self.count(i0) as f64;
                for &k in &self.fam.assignments[&i] {
                    let k_cells = (1u64 << (self.res() - k.level())) as f64;
                    let hit = count_in(self.union(i0), k, self.res()) as f64;
                    if hit > 0.0 {
                        kappa = kappa.max((z0 * k_cells) / (hit * z));
                    } else if z0 > 0.0 {
                        kappa = f64::INFINITY;
                    }
                }
            }
        }
        kappa
    }
}

/// Verifies Jones' condition (J1)–(J4) with the family's own `κ`.
pub fn check_jones(fam: &CollectionFamily) -> Result<ConditionReport> {
    let c = Checked::new(fam)?;
    let res = c.res();
    let mut v = Vec::new();

    // (J1)
    c.internal_disjointness(ConditionTag::J1, &mut v);
    let mut owner: BTreeMap<DyadicInterval, DyadicInterval> = BTreeMap::new();
    for &i in &c.domain {
        for &k in &fam.assignments[&i] {
            match owner.get(&k) {
                Some(&prev) if prev != i => v.push(Violation {
                    tag: ConditionTag::J1,
                    witnesses: vec![iw(prev), iw(i), iw(k)],
                    ratio: k.measure(),
                }),
                Some(_) => {}
                None => {
                    owner.insert(k, i);
                }
            }
        }
    }

    // (J2)
    for &i in c.domain.iter().filter(|i| i.level() < fam.n) {
        let (plus, minus) = i.split()?;
        for child in [plus, minus] {
            let outside = c.union(child).iter_ones().filter(|&cell| !c.union(i)[cell]).count();
            if outside > 0 {
                v.push(Violation {
                    tag: ConditionTag::J2,
                    witnesses: vec![iw(i), iw(child)],
                    ratio: outside as f64 * cell_measure(res),
                });
            }
        }
        let overlap = (c.union(plus).clone() & c.union(minus)).count_ones();
        if overlap > 0 {
            v.push(Violation {
                tag: ConditionTag::J2,
                witnesses: vec![iw(plus), iw(minus)],
                ratio: overlap as f64 * cell_measure(res),
            });
        }
    }

    // (J3), (J4)
    c.measure_bounds(ConditionTag::J3, fam.kappa, &mut v);
    c.local_density(ConditionTag::J4, fam.kappa, &mut v);
    Ok(ConditionReport::from_violations(v))
}

/// The smallest `κ ≥ 1` for which (J3) and (J4) hold (`∞` if none does).
pub fn minimal_kappa(fam: &CollectionFamily) -> Result<f64> {
    Ok(Checked::new(fam)?.minimal_kappa())
}

/// Verifies Capon's condition (P1)–(P4) for `ℬ_{I×J} = 𝒳_I ⊗ 𝒴_J` with
/// `C_X = C_Y = max(κ_x, κ_y)`.
pub fn check_capon(xfam: &CollectionFamily, yfam: &CollectionFamily) -> Result<ConditionReport> {
    let cx = Checked::new(xfam)?;
    let cy = Checked::new(yfam)?;
    let constant = xfam.kappa.max(yfam.kappa);
    let mut v = Vec::new();

    // (P1): each ℬ_R consists of pairwise disjoint rectangles, and ℬ_{R₀} ∩ ℬ_{R₁} = ∅.
    let mut owner: HashMap<DyadicRectangle, DyadicRectangle> = HashMap::new();
    for &i in &cx.domain {
        for &j in &cy.domain {
            let r = DyadicRectangle::new(i, j);
            let rects = crate::dyadic::tensor(&xfam.assignments[&i], &yfam.assignments[&j]);
            let dup = rects.len() != xfam.assignments[&i].len() * yfam.assignments[&j].len();
            if dup {
                v.push(Violation { tag: ConditionTag::P1, witnesses: vec![Witness::Rectangle(r)], ratio: 0.0 });
            }
            'pairs: for (a, &q) in rects.iter().enumerate() {
                for &q2 in &rects[a + 1..] {
                    if q.intersects(q2) {
                        v.push(Violation {
                            tag: ConditionTag::P1,
                            witnesses: vec![Witness::Rectangle(r), Witness::Rectangle(q), Witness::Rectangle(q2)],
                            ratio: q.measure().min(q2.measure()),
                        });
                        break 'pairs;
                    }
                }
            }
            for &q in &rects {
                match owner.get(&q) {
                    Some(&prev) if prev != r => v.push(Violation {
                        tag: ConditionTag::P1,
                        witnesses: vec![Witness::Rectangle(prev), Witness::Rectangle(r), Witness::Rectangle(q)],
                        ratio: q.measure(),
                    }),
                    Some(_) => {}
                    None => {
                        owner.insert(q, r);
                    }
                }
            }
        }
    }

    // (P2), per axis
    for c in [&cx, &cy] {
        let res = c.res();
        for &i in &c.domain {
            let inside: Vec<_> = c.domain.iter().copied().filter(|&k| i.contains(k)).collect();
            for (a, &i0) in inside.iter().enumerate() {
                for &i1 in &inside[a + 1..] {
                    if i0.intersects(i1) {
                        continue;
                    }
                    let overlap = (c.union(i0).clone() & c.union(i1)).count_ones();
                    if overlap > 0 {
                        v.push(Violation {
                            tag: ConditionTag::P2,
                            witnesses: vec![iw(i), iw(i0), iw(i1)],
                            ratio: overlap as f64 * cell_measure(res),
                        });
                    }
                    let both = c.union(i0).clone() | c.union(i1);
                    let outside = both.iter_ones().filter(|&cell| !c.union(i)[cell]).count();
                    if outside > 0 {
                        v.push(Violation {
                            tag: ConditionTag::P2,
                            witnesses: vec![iw(i), iw(i0), iw(i1)],
                            ratio: outside as f64 * cell_measure(res),
                        });
                    }
                }
            }
        }
    }

    // (P3), (P4)
    for c in [&cx, &cy] {
        c.measure_bounds(ConditionTag::P3, constant, &mut v);
    }
    for c in [&cx, &cy] {
        c.local_density(ConditionTag::P4, constant, &mut v);
    }
    Ok(ConditionReport::from_violations(v))
}

/// `𝒳_{[0,1)} = 𝒟_{m₀}`, then `𝒳_{I⁺} = {K⁺ : K∈𝒳_I}` and `𝒳_{I⁻} = {K⁻ : K∈𝒳_I}`.
/// Returns identical `x` and `y` families on `𝒟_{≤n}` with target `N = n + m₀`.
pub fn gamlen_gaudet(n: u32, m0: u32) -> Result<(CollectionFamily, CollectionFamily)> {
    let target = n
        .checked_add(m0)
        .filter(|&t| t <= MAX_FAMILY_RESOLUTION)
        .ok_or(Error::ResolutionExceeded { level: n.saturating_add(m0), max: MAX_FAMILY_RESOLUTION })?;
    let mut assignments = BTreeMap::new();
    assignments.insert(DyadicInterval::UNIT, DyadicInterval::level_intervals(m0).collect::<Vec<_>>());
    for level in 0..n {
        for i in DyadicInterval::level_intervals(level) {
            let (plus, minus) = i.split()?;
            let parent = assignments[&i].clone();
            let lefts = parent.iter().map(|k| k.plus()).collect::<Result<Vec<_>>>()?;
            let rights = parent.iter().map(|k| k.minus()).collect::<Result<Vec<_>>>()?;
            assignments.insert(plus, lefts);
            assignments.insert(minus, rights);
        }
    }
    let fam = CollectionFamily::new(n, target, 1.0, assignments)?;
    Ok((fam.clone(), fam))
}

/// `α = max{|K|, |L| : K ∈ 𝒳_I, L ∈ 𝒴_J}`.
pub fn alpha(xfam: &CollectionFamily, yfam: &CollectionFamily) -> f64 {
    xfam.assignments
        .values()
        .chain(yfam.assignments.values())
        .flatten()
        .map(|k| k.measure())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(l: u32, k: u64) -> DyadicInterval {
        DyadicInterval::new(l, k).unwrap()
    }

    type Row<'a> = ((u32, u64), &'a [(u32, u64)]);

    fn family(n: u32, target: u32, rows: &[Row]) -> CollectionFamily {
        let a = rows
            .iter()
            .map(|&(i, c)| (iv(i.0, i.1), c.iter().map(|&(l, k)| iv(l, k)).collect()))
            .collect();
        CollectionFamily::new(n, target, 1.0, a).unwrap()
    }

    #[test]
    fn gamlen_gaudet_small_case() {
        let (x, y) = gamlen_gaudet(1, 1).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.get(DyadicInterval::UNIT).unwrap(), &[iv(1, 0), iv(1, 1)]);
        assert_eq!(x.get(iv(1, 0)).unwrap(), &[iv(2, 0), iv(2, 2)]);
        assert_eq!(x.get(iv(1, 1)).unwrap(), &[iv(2, 1), iv(2, 3)]);
        let (x0, _) = gamlen_gaudet(0, 0).unwrap();
        assert_eq!(x0, CollectionFamily::identity(0).unwrap());
    }

    #[test]
    fn gamlen_gaudet_measures_and_sizes() {
        for n in 0..=3 {
            for m0 in 0..=4 {
                let (x, _) = gamlen_gaudet(n, m0).unwrap();
                for i in DyadicInterval::up_to(n) {
                    let c = x.get(i).unwrap();
                    assert_eq!(c.len(), 1 << m0);
                    assert!(c.iter().all(|k| k.level() == m0 + i.level()));
                    assert_eq!(x.union_measure(i).unwrap(), i.measure());
                }
                // same-level collections tile [0,1)
                for k in 0..=n {
                    let mut all = bitvec![u64, Lsb0; 0; 1 << x.target_resolution()];
                    for i in DyadicInterval::level_intervals(k) {
                        all |= x.union_cells(i).unwrap();
                    }
                    assert!(all.all());
                }
            }
        }
    }

    #[test]
    fn gamlen_gaudet_rejects_overflow() {
        assert!(matches!(gamlen_gaudet(20, 10), Err(Error::ResolutionExceeded { .. })));
    }

    #[test]
    fn identity_family_passes() {
        for n in 0..=3 {
            let f = CollectionFamily::identity(n).unwrap();
            assert!(check_jones(&f).unwrap().passed);
            assert!(check_capon(&f, &f).unwrap().passed);
            assert_eq!(minimal_kappa(&f).unwrap(), 1.0);
        }
    }

    #[test]
    fn cross_duplicate_fails_j1() {
        let f = family(1, 2, &[((0, 0), &[(2, 0)]), ((1, 0), &[(2, 0)]), ((1, 1), &[(2, 3)])]);
        let r = check_jones(&f).unwrap();
        assert!(!r.passed);
        let w = r.first(ConditionTag::J1).unwrap();
        assert_eq!(w.witnesses, vec![iw(DyadicInterval::UNIT), iw(iv(1, 0)), iw(iv(2, 0))]);
    }

    #[test]
    fn internal_overlap_fails_j1() {
        let f = family(0, 2, &[((0, 0), &[(1, 0), (2, 1), (1, 1)])]);
        let r = check_jones(&f).unwrap();
        assert!(r.has(ConditionTag::J1));
    }

    #[test]
    fn density_violation_fails_j4_and_p4() {
        // 𝒳_{[0,1)} = 𝒟₁, children tile their own halves: (J1)–(J3) hold with κ=1
        // but K = [1/2,1) ∈ 𝒳_{[0,1)} misses Z_{[0,1/2)} entirely.
        let f = family(
            1,
            2,
            &[((0, 0), &[(1, 0), (1, 1)]), ((1, 0), &[(2, 0), (2, 1)]), ((1, 1), &[(2, 2), (2, 3)])],
        );
        let r = check_jones(&f).unwrap();
        assert!(!r.has(ConditionTag::J1) && !r.has(ConditionTag::J2) && !r.has(ConditionTag::J3));
        let w = r.first(ConditionTag::J4).unwrap();
        assert_eq!(w.witnesses, vec![iw(iv(1, 0)), iw(DyadicInterval::UNIT), iw(iv(1, 1))]);
        assert_eq!(w.ratio, 0.0);
        assert_eq!(minimal_kappa(&f).unwrap(), f64::INFINITY);

        let ident = CollectionFamily::identity(1).unwrap().lift(2).unwrap();
        let p = check_capon(&f, &ident).unwrap();
        let pw = p.first(ConditionTag::P4).unwrap();
        // direct ratio: |K∩X_{I₀}|/|K| = 0 against |X_{I₀}|/|X_I| = 1/2
        let k = iv(1, 1);
        let direct = count_in(&f.union_cells(iv(1, 0)).unwrap(), k, 2) as f64;
        assert_eq!(direct, 0.0);
        assert_eq!(pw.witnesses, w.witnesses);
    }

    #[test]
    fn nesting_violation_fails_j2() {
        let f = family(1, 2, &[((0, 0), &[(1, 0)]), ((1, 0), &[(2, 0)]), ((1, 1), &[(2, 3)])]);
        let mut f = f;
        f.kappa = 4.0;
        let r = check_jones(&f).unwrap();
        let w = r.first(ConditionTag::J2).unwrap();
        assert_eq!(w.witnesses, vec![iw(DyadicInterval::UNIT), iw(iv(1, 1))]);
        assert_eq!(w.ratio, 0.25);
    }

    #[test]
    fn measure_violation_fails_j3_and_kappa_repairs_it() {
        let f = family(0, 2, &[((0, 0), &[(1, 0)])]);
        let r = check_jones(&f).unwrap();
        assert_eq!(r.first(ConditionTag::J3).unwrap().ratio, 0.5);
        assert_eq!(minimal_kappa(&f).unwrap(), 2.0);
        assert!(check_jones(&f.with_kappa(2.0).unwrap()).unwrap().passed);
    }

    #[test]
    fn incomplete_family_is_an_error() {
        let f = family(1, 1, &[((0, 0), &[(0, 0)])]);
        assert!(matches!(check_jones(&f), Err(Error::IncompleteFamily(_))));
    }

    #[test]
    fn alpha_examples() {
        let (x, y) = gamlen_gaudet(1, 3).unwrap();
        assert_eq!(alpha(&x, &y), 0.125);
        let id = CollectionFamily::identity(0).unwrap();
        assert_eq!(alpha(&id, &id), 1.0);
        let (x, y) = gamlen_gaudet(2, 1).unwrap();
        assert_eq!(alpha(&x, &y), 0.5);
    }

    #[test]
    fn json_layout() {
        let (x, _) = gamlen_gaudet(1, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&x.to_json()).unwrap();
        assert_eq!(v["n"], 1);
        assert_eq!(v["N"], 2);
        assert_eq!(v["kappa"], 1.0);
        assert_eq!(v["assignments"]["0:0"], serde_json::json!(["1:0", "1:1"]));
        assert_eq!(CollectionFamily::from_json(&x.to_json()).unwrap(), x);
    }
}
