use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use hardy_factor::{
    generate_test_operator, CollectionFamily, Error, ExponentPair, FactorizationParams, HardyElement, Mode,
    OperatorMatrix, RandomVariable, RvIndex, SpaceDescriptor, Structure,
};
use serde::Deserialize;

use crate::failure::Failure;

static BASE_DIR: OnceLock<PathBuf> = OnceLock::new();

/// Relative paths inside a config are taken from the config's directory.
pub fn resolve(p: &Path) -> PathBuf {
    match BASE_DIR.get() {
        Some(base) if p.is_relative() => base.join(p),
        _ => p.to_path_buf(),
    }
}

/// Reads a JSON config; an absent path means all defaults.
pub fn load<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    if let Some(dir) = path.parent() {
        let _ = BASE_DIR.set(dir.to_path_buf());
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(Failure::config(format!("config {} is empty", path.display())));
    }
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("malformed config {}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, Deserialize)]
pub struct Exponents {
    pub p: f64,
    pub q: f64,
}

impl Default for Exponents {
    fn default() -> Self {
        Self { p: 2.0, q: 2.0 }
    }
}

impl Exponents {
    pub fn pair(self) -> Result<ExponentPair, Failure> {
        ExponentPair::new(self.p, self.q).map_err(Failure::from)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity {
        #[serde(rename = "N")]
        big_n: u32,
    },
    ScaledIdentity {
        #[serde(rename = "N")]
        big_n: u32,
        c: f64,
    },
    Generate {
        #[serde(rename = "N")]
        big_n: u32,
        delta: f64,
        gamma: f64,
        structure: Structure,
        /// Falls back to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A JSON Gram matrix, or a binary dump when the file ends in `.hfgm`.
    Path { path: PathBuf },
}

impl Default for OperatorSpec {
    fn default() -> Self {
        OperatorSpec::Identity { big_n: 2 }
    }
}

impl OperatorSpec {
    pub fn build(&self, seed: u64, exponents: ExponentPair) -> Result<OperatorMatrix, Failure> {
        let space = |n: u32| SpaceDescriptor::primal(n, exponents);
        let guard = |n: u32| {
            let max = hardy_factor::dyadic::max_resolution();
            if n > max {
                Err(Failure::from(Error::ResolutionExceeded { level: n, max }))
            } else {
                Ok(())
            }
        };
        Ok(match self {
            OperatorSpec::Identity { big_n } => {
                guard(*big_n)?;
                OperatorMatrix::identity(space(*big_n))
            }
            OperatorSpec::ScaledIdentity { big_n, c } => {
                guard(*big_n)?;
                OperatorMatrix::scaled_identity(space(*big_n), *c)
            }
            OperatorSpec::Generate { big_n, delta, gamma, structure, seed: s } => {
                generate_test_operator(*big_n, *delta, *gamma, exponents, *structure, s.unwrap_or(seed))?
            }
            OperatorSpec::Path { path } => {
                let path = &resolve(path);
                let bytes = std::fs::read(path)
                    .map_err(|e| Failure::config(format!("cannot read operator {}: {e}", path.display())))?;
                if path.extension().is_some_and(|x| x == "hfgm") {
                    OperatorMatrix::from_binary(&bytes, exponents)?
                } else {
                    let text = String::from_utf8(bytes).map_err(|e| Failure::config(e.to_string()))?;
                    OperatorMatrix::from_json(&text)?.with_exponents(exponents)
                }
            }
        })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    GamlenGaudet {
        n: u32,
        m0: u32,
        #[serde(default, rename = "N")]
        big_n: Option<u32>,
    },
    Files { x: PathBuf, y: PathBuf },
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec::GamlenGaudet { n: 1, m0: 1, big_n: None }
    }
}

impl FamilySpec {
    pub fn build(&self) -> Result<(CollectionFamily, CollectionFamily), Failure> {
        match self {
            FamilySpec::GamlenGaudet { n, m0, big_n } => {
                let (x, y) = hardy_factor::gamlen_gaudet(*n, *m0)?;
                match big_n {
                    Some(t) => Ok((x.lift(*t)?, y.lift(*t)?)),
                    None => Ok((x, y)),
                }
            }
            FamilySpec::Files { x, y } => Ok((read_family(x)?, read_family(y)?)),
        }
    }
}

fn read_family(path: &Path) -> Result<CollectionFamily, Failure> {
    let path = &resolve(path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read family {}: {e}", path.display())))?;
    Ok(CollectionFamily::from_json(&text)?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConfig {
    pub seed: u64,
    pub element: Option<PathBuf>,
    /// Used when no element file is given.
    pub random_resolution: Option<u32>,
    pub exponents: Exponents,
    pub dual_trials: Option<usize>,
}

impl NormConfig {
    pub fn element(&self, seed: u64) -> Result<HardyElement, Failure> {
        if let Some(path) = &self.element {
            let path = &resolve(path);
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("cannot read element {}: {e}", path.display())))?;
            let raw: HardyElement = serde_json::from_str(&text).map_err(|e| Failure::config(e.to_string()))?;
            return Ok(HardyElement::new(raw.resolution(), raw.into_coefficients())?);
        }
        let n = self.random_resolution.unwrap_or(2);
        let max = hardy_factor::dyadic::max_resolution();
        if n > max {
            return Err(Error::ResolutionExceeded { level: n, max }.into());
        }
        let mut r = hardy_factor::rng::stream(seed, "cli/norm/element", 0);
        Ok(HardyElement::random(n, &mut r))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionsConfig {
    pub seed: u64,
    pub families: FamilySpec,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GamlenGaudetConfig {
    pub seed: u64,
    pub n: u32,
    pub m0: u32,
}

impl Default for GamlenGaudetConfig {
    fn default() -> Self {
        Self { seed: 0, n: 1, m0: 1 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub seed: u64,
    pub operator: OperatorSpec,
    pub families: FamilySpec,
    pub exponents: Exponents,
    pub variables: Vec<RandomVariable>,
    /// Explicit tuples; every admissible tuple when absent.
    pub indices: Option<Vec<RvIndex>>,
    pub trials: u64,
    pub exhaustive: bool,
    pub monte_carlo: bool,
    pub trace: bool,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            operator: OperatorSpec::default(),
            families: FamilySpec::default(),
            exponents: Exponents::default(),
            variables: RandomVariable::ALL.to_vec(),
            indices: None,
            trials: 10_000,
            exhaustive: true,
            monte_carlo: true,
            trace: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub seed: u64,
    pub operator: OperatorSpec,
    pub families: FamilySpec,
    pub exponents: Exponents,
    pub eta0: f64,
    pub max_attempts: u64,
    /// Values of `m0` for the acceptance-rate series; defaults to every feasible value.
    pub plot_m0: Option<Vec<u32>>,
    pub plot_attempts: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            operator: OperatorSpec::default(),
            families: FamilySpec::default(),
            exponents: Exponents::default(),
            eta0: 0.05,
            max_attempts: 10_000,
            plot_m0: None,
            plot_attempts: 64,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorizeConfig {
    pub seed: u64,
    pub operator: OperatorSpec,
    pub params: FactorizationParams,
    pub samples: usize,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            operator: OperatorSpec::ScaledIdentity { big_n: 2, c: 0.5 },
            params: FactorizationParams {
                mode: Mode::Practical { big_n: 2, m0: 1, eta0: 0.05 },
                ..FactorizationParams::practical(1, 2, 1, 0.05, 0.5, 1.0, 1.0)
            },
            samples: 64,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimFormulaConfig {
    pub seed: u64,
    pub n: Vec<u32>,
    /// `Γ/δ`.
    pub ratio: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Default for DimFormulaConfig {
    fn default() -> Self {
        Self { seed: 0, n: (0..=5).collect(), ratio: vec![1.0], eta: vec![1.0] }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub seed: u64,
    pub bundle: Option<PathBuf>,
}
