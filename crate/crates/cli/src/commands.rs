use std::collections::BTreeMap;
use std::path::Path;

use hardy_factor::randomization::{block_gram, write_trace, MomentContext};
use hardy_factor::{
    alpha, build_system, check_capon, check_jones, constants, dual_norm_lower_bound, factorize, gamlen_gaudet,
    mixed_norm, rng, search_signs, verify_diagram, CollectionFamily, DiagramReport, Error, FactorizationArtifacts,
    MomentMethod, MomentReport, OperatorMatrix, RvIndex, SignAssignment,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    load, CollectionsConfig, DimFormulaConfig, FactorizeConfig, GamlenGaudetConfig, MomentsConfig, NormConfig,
    ReportConfig, SearchConfig,
};
use crate::failure::Failure;
use crate::output::{num, Output};

/// Relative slack when comparing a computed second moment with its bound.
const BOUND_SLACK: f64 = 1e-9;
/// Standard errors subtracted from a sampled second moment before comparing.
const MC_SIGMAS: f64 = 4.0;

pub struct Run<'a> {
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub out: &'a mut Output,
}

impl Run<'_> {
    fn seed(&self, from_config: u64) -> u64 {
        self.seed.unwrap_or(from_config)
    }
}

pub fn norm(run: Run) -> Result<u64, Failure> {
    let cfg: NormConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    let e = cfg.exponents.pair()?;
    let f = cfg.element(seed)?;
    let trials = cfg.dual_trials.unwrap_or(256);
    let primal = mixed_norm(&f, e);
    let dual = dual_norm_lower_bound(&f, e, trials, seed);
    run.out.json(
        "norm.json",
        &json!({
            "resolution": f.resolution(),
            "exponents": e,
            "primal_norm": primal,
            "dual_exponents": { "p": e.p_dual(), "q": e.q_dual() },
            "dual_norm_lower_bound": dual,
            "dual_trials": trials,
        }),
    )?;
    println!("primal norm {primal}, dual norm ≥ {dual}");
    Ok(seed)
}

pub fn check_collections(run: Run) -> Result<u64, Failure> {
    let cfg: CollectionsConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    let (x, y) = cfg.families.build()?;
    let jx = check_jones(&x)?;
    let jy = check_jones(&y)?;
    let capon = check_capon(&x, &y)?;
    let passed = jx.passed && jy.passed && capon.passed;
    run.out.json(
        "collections.json",
        &json!({
            "passed": passed,
            "jones_x": jx,
            "jones_y": jy,
            "capon": capon,
            "alpha": alpha(&x, &y),
        }),
    )?;
    if !passed {
        let count = jx.violations.len() + jy.violations.len() + capon.violations.len();
        return Err(Failure::verification(format!("{count} condition violations")));
    }
    println!("families satisfy all conditions");
    Ok(seed)
}

#[derive(Serialize, Deserialize)]
struct FamilyPair {
    x: CollectionFamily,
    y: CollectionFamily,
}

pub fn gamlen_gaudet_families(run: Run) -> Result<u64, Failure> {
    let cfg: GamlenGaudetConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    let (x, y) = gamlen_gaudet(cfg.n, cfg.m0)?;
    run.out.text("x_family.json", &format!("{}\n", x.to_json()))?;
    run.out.text("y_family.json", &format!("{}\n", y.to_json()))?;
    run.out.json("families.json", &FamilyPair { x, y })?;
    println!("families for n = {}, m0 = {}", cfg.n, cfg.m0);
    Ok(seed)
}

#[derive(Serialize, Deserialize)]
struct MomentsBundle {
    norm_upper: f64,
    alpha: f64,
    violations: usize,
    reports: Vec<MomentReport>,
}

fn violates(r: &MomentReport) -> bool {
    let slack = r.bound * (1.0 + BOUND_SLACK) + 1e-300;
    match r.method {
        MomentMethod::Exhaustive => r.second_moment > slack,
        MomentMethod::MonteCarlo => r.second_moment - MC_SIGMAS * r.stderr_second > slack,
    }
}

fn moments_table(reports: &[MomentReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let method = match r.method {
                MomentMethod::Exhaustive => "exhaustive",
                MomentMethod::MonteCarlo => "monte-carlo",
            };
            vec![
                r.variable.to_string(),
                r.indices.to_string(),
                method.to_string(),
                r.trials.to_string(),
                num(r.mean),
                num(r.second_moment),
                num(r.stderr_second),
                num(r.bound),
            ]
        })
        .collect()
}

const MOMENTS_HEADER: [&str; 8] = ["variable", "indices", "method", "trials", "mean", "m2", "stderr", "bound"];

pub fn moments(run: Run) -> Result<u64, Failure> {
    let cfg: MomentsConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    let e = cfg.exponents.pair()?;
    let t = cfg.operator.build(seed, e)?;
    let (x, y) = cfg.families.build()?;
    let ctx = MomentContext::new(&t, &x, &y);
    let n = x.domain_resolution();

    let mut tuples = Vec::new();
    for &v in &cfg.variables {
        match &cfg.indices {
            Some(list) => tuples.extend(list.iter().filter(|i| i.check(v).is_ok()).map(|&i| (v, i))),
            None => tuples.extend(RvIndex::all(v, n).into_iter().map(|i| (v, i))),
        }
    }
    if tuples.is_empty() {
        return Err(Failure::config("no admissible (variable, indices) pairs"));
    }

    let mut reports = Vec::new();
    if cfg.exhaustive {
        let ex: Result<Vec<_>, Error> = tuples.par_iter().map(|&(v, i)| ctx.exhaustive(v, i)).collect();
        reports.extend(ex?);
    }
    if cfg.monte_carlo {
        let mc: Result<Vec<_>, Error> =
            tuples.par_iter().map(|&(v, i)| ctx.monte_carlo(v, i, cfg.trials, seed)).collect();
        reports.extend(mc?);
    }
    if cfg.trace {
        let mut buf = Vec::new();
        for (k, &(v, i)) in tuples.iter().enumerate() {
            let values = ctx.samples(v, i, cfg.trials, seed)?;
            write_trace(&mut buf, v, i, &values, k == 0)?;
        }
        run.out.text("trace.csv", &String::from_utf8(buf).expect("trace is utf-8"))?;
    }

    let violations = reports.iter().filter(|r| violates(r)).count();
    run.out.csv("moments.csv", &MOMENTS_HEADER, &moments_table(&reports))?;
    let points: Vec<(f64, f64)> = reports.iter().map(|r| (r.bound, r.second_moment)).collect();
    run.out.series("plot_m2_vs_bound.csv", &points)?;
    let bundle = MomentsBundle { norm_upper: ctx.norm_upper(), alpha: alpha(&x, &y), violations, reports };
    run.out.json("moments.json", &bundle)?;
    if violations > 0 {
        return Err(Failure::verification(format!("{violations} second moments exceed their bound")));
    }
    println!("{} moment reports, all within bound", bundle.reports.len());
    Ok(seed)
}

/// Fraction of the first `attempts` draws that are almost diagonal at level `eta0`.
fn acceptance_rate(
    t: &OperatorMatrix,
    x: &CollectionFamily,
    y: &CollectionFamily,
    eta0: f64,
    attempts: u64,
    seed: u64,
) -> Result<f64, Failure> {
    let big_n = x.target_resolution();
    let (xs, ys) = (x.support(), y.support());
    let hits: Result<Vec<bool>, Error> = (0..attempts)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, "search/attempt", k);
            let th = SignAssignment::random_on(big_n, &xs, &mut r);
            let ep = SignAssignment::random_on(big_n, &ys, &mut r);
            let sys = build_system(x, y, &th, &ep)?;
            let (off, diag) = hardy_factor::randomization::almost_diagonal_errors(t, &sys);
            Ok(off <= eta0 && diag <= eta0)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / attempts as f64)
}

pub fn search(run: Run) -> Result<u64, Failure> {
    let cfg: SearchConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    let e = cfg.exponents.pair()?;
    let t = cfg.operator.build(seed, e)?;
    let (x, y) = cfg.families.build()?;
    let report = search_signs(&t, &x, &y, cfg.eta0, cfg.max_attempts, seed)?;
    run.out.json("search.json", &report)?;

    if run.out.plot && cfg.plot_attempts > 0 {
        let n = x.domain_resolution();
        let big_n = t.domain().resolution;
        let m0s = cfg.plot_m0.clone().unwrap_or_else(|| (1..=big_n.saturating_sub(n)).collect());
        let mut points = Vec::new();
        for m0 in m0s {
            let (gx, gy) = gamlen_gaudet(n, m0)?;
            let (gx, gy) = (gx.lift(big_n)?, gy.lift(big_n)?);
            points.push((f64::from(m0), acceptance_rate(&t, &gx, &gy, cfg.eta0, cfg.plot_attempts, seed)?));
        }
        run.out.series("plot_acceptance_vs_m0.csv", &points)?;
    }

    if !report.accepted {
        return Err(Failure::infeasible(format!(
            "no sign assignment within eta0 = {} after {} attempts (best {} / {})",
            cfg.eta0, report.attempts, report.max_offdiag, report.max_diag_deviation
        )));
    }
    println!("accepted at attempt {}", report.attempts);
    Ok(seed)
}

pub fn factorize_cmd(run: Run) -> Result<u64, Failure> {
    let cfg: FactorizeConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    let e = cfg.params.exponents;
    let t = cfg.operator.build(seed, e)?;
    let art = match factorize(&t, &cfg.params, seed) {
        Ok(a) => a,
        Err(Error::SignsNotFound(report)) => {
            run.out.json("search.json", &report)?;
            return Err(Error::SignsNotFound(report).into());
        }
        Err(err) => return Err(err.into()),
    };
    let check = verify_diagram(&art, &t, e, cfg.samples, seed)?;
    run.out.text("factorization.json", &format!("{}\n", art.to_json()))?;
    run.out.json("verification.json", &check)?;
    if run.out.plot {
        let g = block_gram(&t.compose(&hardy_factor::operators::multiplication_m(&t)?)?, &art.system);
        let points: Vec<(f64, f64)> = (0..g.ncols()).map(|r| (r as f64, g[(r, r)])).collect();
        run.out.series("plot_block_diagonal.csv", &points)?;
    }
    if !check.passed {
        return Err(Failure::verification(format!(
            "verification failed: residual {}, norm product {} against bound {}",
            check.residual, check.norm_product_lower, check.bound
        )));
    }
    println!("residual {}, norm product ≥ {} (bound {})", check.residual, check.norm_product_lower, check.bound);
    Ok(seed)
}

pub fn dim_formula(run: Run) -> Result<u64, Failure> {
    let cfg: DimFormulaConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    if cfg.n.is_empty() || cfg.ratio.is_empty() || cfg.eta.is_empty() {
        return Err(Failure::config("dim-formula needs non-empty n, ratio and eta grids"));
    }
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &n in &cfg.n {
        for &ratio in &cfg.ratio {
            for &eta in &cfg.eta {
                let c = constants(n, 1.0, ratio, eta)?;
                rows.push(vec![
                    n.to_string(),
                    num(ratio),
                    num(eta),
                    num(c.eta0),
                    c.m0.to_string(),
                    c.big_n.to_string(),
                ]);
                table.push(json!({ "n": n, "ratio": ratio, "eta": eta, "eta0": c.eta0, "m0": c.m0, "N": c.big_n }));
                println!("n = {n}, ratio = {ratio}, eta = {eta}: N = {}, m0 = {}", c.big_n, c.m0);
            }
        }
    }
    run.out.json("dim_formula.json", &table)?;
    run.out.csv("dim_formula.csv", &["n", "ratio", "eta", "eta0", "m0", "N"], &rows)?;
    let points: Vec<(f64, f64)> = table
        .iter()
        .map(|r| (r["n"].as_f64().unwrap_or(0.0), r["N"].as_f64().unwrap_or(0.0)))
        .collect();
    run.out.series("plot_N_vs_n.csv", &points)?;
    Ok(seed)
}

fn read_nonempty(path: &Path) -> Result<String, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read bundle {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(Failure::config(format!("bundle {} is empty", path.display())));
    }
    Ok(text)
}

/// Collects scalar leaves of `v` as dotted keys.
fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, x)| flatten(&key(k), x, out)),
        Value::Array(_) => {}
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

pub fn report(run: Run, bundle: Option<&Path>) -> Result<u64, Failure> {
    let cfg: ReportConfig = load(run.config)?;
    let seed = run.seed(cfg.seed);
    let path = bundle
        .map(Path::to_path_buf)
        .or_else(|| cfg.bundle.as_deref().map(crate::config::resolve))
        .ok_or_else(|| Failure::config("report needs a bundle path"))?;

    let (main, verification) = if path.is_dir() {
        let (f, m) = (path.join("factorization.json"), path.join("moments.json"));
        if f.exists() {
            let v = path.join("verification.json");
            (f, v.exists().then_some(v))
        } else if m.exists() {
            (m, None)
        } else {
            return Err(Failure::config(format!("{} holds no bundle", path.display())));
        }
    } else {
        (path.clone(), None)
    };
    let text = read_nonempty(&main)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Failure::config(format!("malformed bundle: {e}")))?;

    if value.get("reports").is_none() {
        let art = FactorizationArtifacts::from_json(&text)
            .map_err(|e| Failure::config(format!("malformed bundle: {e}")))?;
        let check: Option<DiagramReport> = match verification {
            Some(p) => Some(
                serde_json::from_str(&read_nonempty(&p)?)
                    .map_err(|e| Failure::config(format!("malformed verification: {e}")))?,
            ),
            None => None,
        };
        let mut keys = BTreeMap::new();
        let summary = json!({
            "n": art.params.n,
            "N": art.big_n,
            "m0": art.m0,
            "eta0": art.eta0,
            "delta": art.params.delta,
            "gamma": art.params.gamma,
            "eta": art.params.eta,
            "residual": art.residual,
            "norm_product_lower": art.norm_product_lower,
            "bound": art.theoretical_bound,
            "attempts": art.search.attempts,
            "neumann_ratio": art.neumann_ratio,
            "condition_number": art.condition_number,
            "u_norm_l2": art.u_norm_l2,
        });
        flatten("", &summary, &mut keys);
        if let Some(c) = &check {
            let v = serde_json::to_value(c).map_err(|e| Failure::config(e.to_string()))?;
            flatten("verification", &v, &mut keys);
        }
        write_summary(run.out, &keys)?;
        if run.out.plot {
            run.out.series(
                "plot_search.csv",
                &[(art.search.attempts as f64, art.search.max_offdiag.max(art.search.max_diag_deviation))],
            )?;
        }
    } else {
        let bundle: MomentsBundle = serde_json::from_value(value)
            .map_err(|e| Failure::config(format!("malformed bundle: {e}")))?;
        run.out.csv("moments_table.csv", &MOMENTS_HEADER, &moments_table(&bundle.reports))?;
        let mut keys = BTreeMap::new();
        let max_ratio = bundle
            .reports
            .iter()
            .filter(|r| r.bound > 0.0)
            .map(|r| r.second_moment / r.bound)
            .fold(0.0f64, f64::max);
        flatten(
            "",
            &json!({
                "reports": bundle.reports.len(),
                "violations": bundle.violations,
                "norm_upper": bundle.norm_upper,
                "alpha": bundle.alpha,
                "max_m2_over_bound": max_ratio,
            }),
            &mut keys,
        );
        write_summary(run.out, &keys)?;
        let points: Vec<(f64, f64)> = bundle.reports.iter().map(|r| (r.bound, r.second_moment)).collect();
        run.out.series("plot_m2_vs_bound.csv", &points)?;
    }
    Ok(seed)
}

fn write_summary(out: &mut Output, keys: &BTreeMap<String, String>) -> Result<(), Failure> {
    let body: String = keys.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    print!("{body}");
    out.text("summary.txt", &body)?;
    let rows: Vec<Vec<String>> = keys.iter().map(|(k, v)| vec![k.clone(), v.clone()]).collect();
    out.csv("summary.csv", &["key", "value"], &rows)
}
