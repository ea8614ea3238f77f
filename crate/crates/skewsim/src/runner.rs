//! Experiment dispatch: turns a validated `RunConfig` into one
//! `ExperimentReport` plus artifact files. Every experiment is deterministic
//! given (config, seed) — ensembles are indexed per-path streams, so the
//! rayon pool size changes wall time, never bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{
    ConditionsConfig, ConfigError, Experiment, FkSection, LocaltimeConfig, ReflectedConfig,
    RunConfig, SchemeKind, SimulateConfig,
};
use crate::engine::{
    ensemble, mean_se, simulate_atom_scheme, simulate_classical, simulate_reflected,
    simulate_transform_scheme, spec_hash, transform_path, AtomicFlow, BrownianDriver, EngineError,
    FlowAtom, TimeGrid, ATOM_WINDOW_EXPONENT,
};
use crate::fk::{fk_domain, pde_solve, transformed_diffusion_sup, FkError, PdeGrid};
use crate::func::RealFn;
use crate::localtime::{
    estimate_field, estimate_occupation, estimate_tanaka, level_grid, occupation_residual,
    LocalTimeError,
};
use crate::measure::SignedMeasure;
use crate::report::{ExperimentReport, Metric, RefinementRow};
use crate::transform::{build_transform, check_i_sigma, DiffusionSpec, TransformError};
use crate::verify::{
    auto_domain, check_a3a4, check_sobolev_condition, continuity_experiment, nakao_check,
    time_regularity_experiment, uniqueness_experiment, VerifyError,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("transform: {0}")]
    Transform(#[from] TransformError),
    #[error("verification: {0}")]
    Verify(#[from] VerifyError),
    #[error("value comparison: {0}")]
    Fk(#[from] FkError),
    #[error("local time: {0}")]
    LocalTime(#[from] LocalTimeError),
    #[error("cannot write outputs: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a run produces before anything touches the disk.
#[derive(Debug)]
pub struct RunOutput {
    pub report: ExperimentReport,
    /// Extra CSV artifacts as (file name, content).
    pub artifacts: Vec<(String, String)>,
    /// Seed that actually drove the randomness (None for deterministic checks).
    pub seed: Option<u64>,
}

/// Runs the configured experiment inside a rayon pool of the requested size,
/// writes report.json, metrics.csv, refinement.csv, any experiment artifacts,
/// and manifest.json into `out_dir`, and returns the process exit code:
/// 0 when the report verdict passes, 2 when it fails. Errors (bad config,
/// unwritable directory) are returned for the caller to map to exit 1.
pub fn execute(
    cfg: &RunConfig,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
    threads_override: Option<usize>,
) -> Result<(i32, PathBuf), RunnerError> {
    let threads = threads_override.or(cfg.threads);
    let output = match threads {
        Some(0) => {
            return Err(ConfigError::Invalid("threads must be positive".into()).into());
        }
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| {
                RunnerError::Config(ConfigError::Invalid(format!("thread pool: {e}")))
            })?;
            pool.install(|| run_experiment(cfg, seed_override))?
        }
        None => run_experiment(cfg, seed_override)?,
    };
    let out_dir = out_override
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("skewsim-out"));
    write_outputs(&out_dir, cfg, &output, threads)?;
    Ok((if output.report.verdict { 0 } else { 2 }, out_dir))
}

/// Validates the config, builds the working model, and dispatches.
pub fn run_experiment(
    cfg: &RunConfig,
    seed_override: Option<u64>,
) -> Result<RunOutput, RunnerError> {
    cfg.validate()?;
    let (spec, working) = cfg.build_model()?;
    match cfg.experiment {
        Experiment::Simulate => {
            let mut sec = cfg.simulate.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.seed = s;
            }
            run_simulate(&spec, &working, cfg.x0, &sec)
        }
        Experiment::Localtime => {
            let mut sec = cfg.localtime.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.seed = s;
            }
            run_localtime(&spec, &working, cfg.x0, &sec)
        }
        Experiment::Uniqueness => {
            let mut sec = cfg.uniqueness.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.seed = s;
            }
            let report = uniqueness_experiment(&spec, &working, cfg.x0, &sec)?;
            Ok(RunOutput { report, artifacts: vec![], seed: Some(sec.seed) })
        }
        Experiment::Conditions => {
            let mut sec = cfg.conditions.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.seed = s;
            }
            run_conditions(cfg, &spec, &working, &sec)
        }
        Experiment::Reflected => {
            let mut sec = cfg.reflected.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.seed = s;
            }
            run_reflected(&spec, cfg.x0, &sec)
        }
        Experiment::Fk => {
            let mut sec = cfg.fk.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.compare.seed = s;
            }
            run_fk(&spec, &working, &sec)
        }
        Experiment::Continuity => {
            let mut sec = cfg.continuity.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.seed = s;
            }
            let report = continuity_experiment(&spec, &working, cfg.x0, &sec)?;
            Ok(RunOutput { report, artifacts: vec![], seed: Some(sec.seed) })
        }
        Experiment::Regularity => {
            let mut sec = cfg.regularity.clone().unwrap_or_default();
            if let Some(s) = seed_override {
                sec.seed = s;
            }
            let report = time_regularity_experiment(&spec, &working, cfg.x0, &sec)?;
            Ok(RunOutput { report, artifacts: vec![], seed: Some(sec.seed) })
        }
        Experiment::Sobolev => {
            let sec = cfg.sobolev.clone().unwrap_or_default();
            let report = check_sobolev_condition(&spec, sec.domain, sec.resolution);
            Ok(RunOutput { report, artifacts: vec![], seed: None })
        }
        Experiment::Nakao => {
            let sec = cfg.nakao.clone().unwrap_or_default();
            let report = nakao_check(&spec, sec.eps_floor, &sec.compacts);
            Ok(RunOutput { report, artifacts: vec![], seed: None })
        }
    }
}

fn run_simulate(
    spec: &DiffusionSpec,
    measure: &SignedMeasure,
    x0: f64,
    sec: &SimulateConfig,
) -> Result<RunOutput, RunnerError> {
    let grid = TimeGrid::new(sec.horizon, sec.steps)?;
    let driver = BrownianDriver::new(sec.seed, sec.paths, grid);
    let mut artifacts = Vec::new();
    let (set, scheme) = match sec.scheme {
        SchemeKind::Transform => {
            let domain = sec
                .domain
                .unwrap_or_else(|| auto_domain(spec, measure, x0, sec.horizon, 1.0));
            let transform = build_transform(measure, domain, sec.resolution)?;
            artifacts.push(("transform.csv".to_string(), transform.dump_csv()));
            (simulate_transform_scheme(spec, &transform, x0, &driver)?, "transform")
        }
        SchemeKind::Atom => {
            if !measure.pieces().is_empty() {
                return Err(ConfigError::Invalid(
                    "the atom scheme needs a purely atomic measure; \
                     the config declares density pieces"
                        .into(),
                )
                .into());
            }
            let flow = AtomicFlow {
                atoms: measure
                    .atoms()
                    .iter()
                    .map(|a| FlowAtom {
                        location: a.location,
                        beta: RealFn::constant(a.weight),
                        deriv_bound: 0.0,
                    })
                    .collect(),
            };
            (simulate_atom_scheme(spec, &flow, x0, &driver)?, "atom")
        }
        SchemeKind::Classical => {
            if spec.drift.is_none() {
                return Err(ConfigError::Invalid(
                    "the classical scheme needs a drift section".into(),
                )
                .into());
            }
            (simulate_classical(spec, x0, &driver)?, "classical")
        }
        SchemeKind::Reflected => {
            let (set, _pushes) = simulate_reflected(spec, x0, &driver)?;
            (set, "reflected")
        }
    };
    let terminals = set.terminal_values();
    let (mean, se) = mean_se(&terminals);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for path in &set.values {
        for &v in path {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let metrics = vec![
        Metric::info("terminal mean", mean),
        Metric::info("terminal standard error", se),
        Metric::info("path minimum", lo),
        Metric::info("path maximum", hi),
        Metric::info("exited paths", set.meta.exited_paths as f64),
    ];
    if sec.dump_paths {
        artifacts.push(("paths.csv".to_string(), set.dump_csv()));
    }
    let report = ExperimentReport::new(
        "simulate",
        json!({
            "scheme": scheme, "paths": sec.paths, "steps": sec.steps,
            "horizon": sec.horizon, "seed": sec.seed, "x0": x0,
        }),
        metrics,
        vec![],
    );
    Ok(RunOutput { report, artifacts, seed: Some(sec.seed) })
}

fn run_localtime(
    spec: &DiffusionSpec,
    measure: &SignedMeasure,
    x0: f64,
    sec: &LocaltimeConfig,
) -> Result<RunOutput, RunnerError> {
    let g = sec.weight.clone().unwrap_or_else(|| RealFn::constant(1.0));
    let domain = auto_domain(spec, measure, x0, sec.horizon, 1.0);
    let transform = build_transform(measure, domain, sec.resolution)?;
    transform.forward(x0)?;
    let sigma = spec.sigma.clone();

    let mut rows = Vec::new();
    let mut residual_ladder = Vec::new();
    let mut finest: Option<(f64, f64, f64, f64)> = None; // occ mean/se, tanaka mean/se
    let levels_of = sec.refinements.max(1);
    for r in 0..levels_of {
        let steps = sec.steps << r;
        let grid = TimeGrid::new(sec.horizon, steps)?;
        let driver = BrownianDriver::new(sec.seed, sec.paths, grid);
        let dt = grid.dt();
        let eps = dt.powf(ATOM_WINDOW_EXPONENT);
        let per_path: Vec<(f64, f64, f64)> = ensemble(&driver, |_, incs| {
            let (vals, _) = transform_path(spec, &transform, x0, incs)
                .expect("start point pre-checked");
            let upto = vals.len() - 1;
            let occ = estimate_occupation(&vals, &grid, &sigma, sec.level, eps, upto)
                .expect("bandwidth and knot pre-checked");
            let tan = estimate_tanaka(&vals, sec.level, upto)
                .expect("knot pre-checked");
            let resid = occupation_residual(&vals, &grid, &sigma, &g, eps)
                .expect("bandwidth pre-checked");
            let scale: f64 = vals
                .iter()
                .take(vals.len() - 1)
                .map(|&x| g.eval(x).abs() * sigma.eval(x) * sigma.eval(x) * dt)
                .sum();
            (occ, tan, resid / scale.max(1e-12))
        });
        let occ: Vec<f64> = per_path.iter().map(|t| t.0).collect();
        let tan: Vec<f64> = per_path.iter().map(|t| t.1).collect();
        let rel: Vec<f64> = per_path.iter().map(|t| t.2).collect();
        let (occ_m, occ_se) = mean_se(&occ);
        let (tan_m, tan_se) = mean_se(&tan);
        let (rel_m, _) = mean_se(&rel);
        rows.push(RefinementRow {
            label: "occupation_mean".into(),
            parameter: steps as f64,
            metric: occ_m,
        });
        rows.push(RefinementRow {
            label: "tanaka_mean".into(),
            parameter: steps as f64,
            metric: tan_m,
        });
        rows.push(RefinementRow {
            label: "relative_residual".into(),
            parameter: steps as f64,
            metric: rel_m,
        });
        residual_ladder.push(rel_m);
        finest = Some((occ_m, occ_se, tan_m, tan_se));
    }
    let (occ_m, occ_se, tan_m, tan_se) = finest.expect("at least one refinement");

    let worst_rise = residual_ladder
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone_pass = residual_ladder.len() < 2 || worst_rise <= 1e-12;
    let final_rel = *residual_ladder.last().expect("non-empty ladder");
    // Factor 2: the positive-part residual estimates half the symmetric
    // local time, the occupation estimator the full one.
    let agree = (occ_m - 2.0 * tan_m).abs();
    let agree_tol = 0.05 * (1.0 + occ_m.abs()) + 3.0 * (occ_se + 2.0 * tan_se);

    let mut metrics = vec![
        Metric::checked(
            "occupation residual decreases under refinement",
            worst_rise,
            0.0,
            monotone_pass,
        ),
        Metric::checked(
            "occupation residual at finest step",
            final_rel,
            sec.residual_tolerance,
            final_rel <= sec.residual_tolerance,
        ),
        Metric::checked(
            "occupation and positive-part estimators agree",
            agree,
            agree_tol,
            agree <= agree_tol,
        ),
        Metric::info("local time mean at finest step", occ_m),
        Metric::info("local time standard error at finest step", occ_se),
    ];

    // Finest grid, materialized: feeds the field artifact and the two-path
    // identity checks.
    let steps = sec.steps << (levels_of - 1);
    let grid = TimeGrid::new(sec.horizon, steps)?;
    let driver = BrownianDriver::new(sec.seed, sec.paths, grid);
    let set = simulate_transform_scheme(spec, &transform, x0, &driver)?;
    let eps = grid.dt().powf(ATOM_WINDOW_EXPONENT);

    let mut lattice_rel = Vec::new();
    let mut minmax_rel = Vec::new();
    for pair in set.values.chunks_exact(2) {
        let upto = pair[0].len() - 1;
        let base = crate::localtime::estimate_occupation_realized(
            &pair[0], sec.level, eps, upto,
        )?
        .max(crate::localtime::estimate_occupation_realized(&pair[1], sec.level, eps, upto)?);
        // Pairs that barely touch the level carry no evidence.
        if base < 0.05 {
            continue;
        }
        let lat = crate::localtime::lattice_identity_check(&pair[0], &pair[1], sec.level, eps)?;
        lattice_rel.push(lat / base);
        let (_, rhs, resid) =
            crate::localtime::minmax_additivity_check(&pair[0], &pair[1], sec.level, eps)?;
        minmax_rel.push(resid / rhs.max(base));
    }
    metrics.push(Metric::info("identity pairs evaluated", lattice_rel.len() as f64));
    if !lattice_rel.is_empty() {
        let (lat_m, _) = mean_se(&lattice_rel);
        let (mm_m, _) = mean_se(&minmax_rel);
        metrics.push(Metric::checked(
            "lattice identity mean relative residual",
            lat_m,
            sec.identity_tolerance,
            lat_m <= sec.identity_tolerance,
        ));
        metrics.push(Metric::checked(
            "min/max additivity mean relative residual",
            mm_m,
            sec.identity_tolerance,
            mm_m <= sec.identity_tolerance,
        ));
    }

    let refs: Vec<&[f64]> = set.values.iter().map(|v| v.as_slice()).collect();
    let levels = level_grid(&refs, eps, 16);
    let knots = vec![steps / 4, steps / 2, 3 * steps / 4, steps];
    let field = estimate_field(&set.values, &grid, &sigma, &levels, &knots, eps)?;
    let artifacts = vec![("field.csv".to_string(), field.dump_csv(&grid))];

    let report = ExperimentReport::new(
        "localtime",
        json!({
            "level": sec.level, "paths": sec.paths, "coarsest_steps": sec.steps,
            "refinements": levels_of, "horizon": sec.horizon, "seed": sec.seed,
            "x0": x0, "weight": g,
        }),
        metrics,
        rows,
    );
    Ok(RunOutput { report, artifacts, seed: Some(sec.seed) })
}

fn run_conditions(
    cfg: &RunConfig,
    spec: &DiffusionSpec,
    working: &SignedMeasure,
    sec: &ConditionsConfig,
) -> Result<RunOutput, RunnerError> {
    // The raw measure (before restriction) is what the clauses judge; the
    // config gate has already checked the restriction's strong pair.
    let atoms = cfg
        .atoms
        .iter()
        .map(|&(location, weight)| crate::measure::Atom { location, weight })
        .collect();
    let raw = SignedMeasure::new(atoms, cfg.pieces.clone()).map_err(ConfigError::Measure)?;
    let raw_report = raw.check_conditions(&cfg.zero_set);

    let mut metrics = Vec::new();
    for tag in ["(A1)", "(A2)", "(A1w)", "(A2w)"] {
        let violations =
            raw_report.violations.iter().filter(|v| v.condition == tag).count();
        metrics.push(Metric::checked(
            format!("measure clause {tag} holds"),
            violations as f64,
            0.0,
            raw_report.clause_passes(tag),
        ));
    }
    for v in &raw_report.violations {
        metrics.push(Metric::info(
            format!("violation {} at {} ({})", v.condition, v.witness, v.detail),
            v.value,
        ));
    }
    metrics.push(Metric::checked(
        "working measure satisfies the strong pair",
        f64::from(u8::from(working.strong_pair_passes())),
        0.0,
        working.strong_pair_passes(),
    ));

    let i_sigma = check_i_sigma(spec, &sec.compacts);
    metrics.push(Metric::checked(
        "inverse-square diffusion locally integrable on compacts",
        i_sigma.violations.len() as f64,
        0.0,
        i_sigma.passed,
    ));
    for v in &i_sigma.violations {
        metrics.push(Metric::info(
            format!("violation {} at {} ({})", v.condition, v.witness, v.detail),
            v.value,
        ));
    }

    let mut rows = Vec::new();
    let mut inputs = json!({
        "compacts": sec.compacts, "samples": sec.samples, "seed": sec.seed,
        "raw_notes": raw_report.notes, "i_sigma_notes": i_sigma.notes,
    });
    if let Some(pair) = &sec.pair {
        let domain = sec
            .domain
            .unwrap_or_else(|| auto_domain(spec, working, cfg.x0, 1.0, 1.0));
        let modulus = check_a3a4(spec, pair, domain, sec.samples, sec.seed);
        inputs["modulus_inputs"] = modulus.inputs.clone();
        metrics.extend(modulus.metrics);
        rows.extend(modulus.refinement_table);
    }

    let report = ExperimentReport::new("conditions", inputs, metrics, rows);
    Ok(RunOutput { report, artifacts: vec![], seed: Some(sec.seed) })
}

fn run_reflected(
    spec: &DiffusionSpec,
    x0: f64,
    sec: &ReflectedConfig,
) -> Result<RunOutput, RunnerError> {
    let grid = TimeGrid::new(sec.horizon, sec.steps)?;
    let driver = BrownianDriver::new(sec.seed, sec.paths, grid);
    let (set, _pushes) = simulate_reflected(spec, x0, &driver)?;
    // Partner ensemble on the same driver: coupled pairs for the two-path
    // identities. The difference of two same-driver reflected solutions moves
    // only through boundary pushes, which is what the support check probes.
    let (partner, _) = simulate_reflected(spec, x0 + sec.partner_offset, &driver)?;
    let eps = grid.dt().powf(ATOM_WINDOW_EXPONENT);

    let mut minimum = f64::INFINITY;
    for path in &set.values {
        for &v in path {
            minimum = minimum.min(v);
        }
    }
    let terminals = set.terminal_values();
    let (mean, se) = mean_se(&terminals);

    let mut power_rel = Vec::new();
    let mut support_frac = Vec::new();
    for (x, y) in set.values.iter().zip(&partner.values) {
        let upto = x.len() - 1;
        let (lhs, rhs, resid) =
            crate::localtime::odd_power_identity_check(x, y, sec.power, eps)?;
        // Dominant local-time scale of the pair: both identity sides plus the
        // boundary local times the reflection generates.
        let scale = crate::localtime::estimate_occupation_realized(x, 0.0, eps, upto)?
            .max(crate::localtime::estimate_occupation_realized(y, 0.0, eps, upto)?)
            .max(lhs.abs())
            .max(rhs.abs())
            .max(1e-12);
        power_rel.push(resid / scale);
        let (frac, _total) =
            crate::localtime::support_check(x, y, sec.support_delta, eps)?;
        support_frac.push(frac);
    }
    let (power_m, _) = mean_se(&power_rel);
    let (frac_m, _) = mean_se(&support_frac);

    let mut metrics = vec![
        Metric::checked("paths stay nonnegative", minimum, 0.0, minimum >= 0.0),
        Metric::checked(
            "odd-power identity mean relative residual",
            power_m,
            sec.power_tolerance,
            power_m <= sec.power_tolerance,
        ),
        Metric::checked(
            "local-time support fraction beyond the gap",
            frac_m,
            sec.support_tolerance,
            frac_m <= sec.support_tolerance,
        ),
        Metric::info("terminal mean", mean),
        Metric::info("terminal standard error", se),
    ];
    // Closed form only for the driftless unit coefficient started at zero:
    // the reflected path is a folded Brownian motion.
    if spec.sigma == RealFn::constant(1.0) && x0 == 0.0 && spec.drift.is_none() {
        let expected = (2.0 * sec.horizon / std::f64::consts::PI).sqrt();
        let gap = (mean - expected).abs();
        let tol = 3.0 * se + 1e-12;
        metrics.push(Metric::checked(
            "terminal mean matches the folded gaussian",
            gap,
            tol,
            gap <= tol,
        ));
    }

    let report = ExperimentReport::new(
        "reflected",
        json!({
            "paths": sec.paths, "steps": sec.steps, "horizon": sec.horizon,
            "seed": sec.seed, "x0": x0, "partner_offset": sec.partner_offset,
            "power": sec.power, "support_delta": sec.support_delta,
        }),
        metrics,
        vec![],
    );
    Ok(RunOutput { report, artifacts: vec![], seed: Some(sec.seed) })
}

fn run_fk(
    spec: &DiffusionSpec,
    measure: &SignedMeasure,
    sec: &FkSection,
) -> Result<RunOutput, RunnerError> {
    let report = crate::fk::fk_compare(spec, measure, &sec.payoff, &sec.compare)?;

    // Field artifact: one solve on the comparison grid, dumped at the probe
    // times plus the initial time.
    let cfg = &sec.compare;
    let domain = fk_domain(spec, measure, &cfg.probes, cfg.horizon)?;
    let transform = build_transform(measure, domain, cfg.resolution)?;
    let s2_max = transformed_diffusion_sup(spec, &transform)?;
    let (y_lo, y_hi) = transform.image();
    let grid = PdeGrid::with_cfl(y_lo, y_hi, cfg.pde_cells, cfg.horizon, s2_max)?;
    let mut times: Vec<f64> = cfg
        .probes
        .iter()
        .map(|&(s, _)| s)
        .filter(|s| (0.0..=cfg.horizon).contains(s))
        .collect();
    times.push(0.0);
    let solution = pde_solve(spec, &transform, &sec.payoff, &grid, &times)?;
    let artifacts = vec![("pde_field.csv".to_string(), solution.to_csv())];

    Ok(RunOutput { report, artifacts, seed: Some(cfg.seed) })
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("label,value,tolerance,pass\n");
    for m in &report.metrics {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&m.label),
            m.value,
            m.tolerance,
            m.pass
        ));
    }
    out
}

fn refinement_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("label,parameter,metric\n");
    for r in &report.refinement_table {
        out.push_str(&format!("{},{},{}\n", csv_field(&r.label), r.parameter, r.metric));
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Writes all files for one run. The manifest records the config hash, the
/// effective seed and thread count, the crate version, and a content hash per
/// output file, so byte-identical reruns are checkable from the manifest
/// alone.
pub fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    output: &RunOutput,
    threads: Option<usize>,
) -> Result<(), RunnerError> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = vec![
        (
            "report.json".to_string(),
            serde_json::to_string_pretty(&output.report).map_err(ConfigError::Json)? + "\n",
        ),
        ("metrics.csv".to_string(), metrics_csv(&output.report)),
        ("refinement.csv".to_string(), refinement_csv(&output.report)),
    ];
    files.extend(output.artifacts.iter().cloned());

    let mut hashes = BTreeMap::new();
    for (name, content) in &files {
        fs::write(dir.join(name), content)?;
        hashes.insert(name.clone(), sha256_hex(content.as_bytes()));
    }
    let manifest = json!({
        "experiment": cfg.experiment.name(),
        "config_sha256": spec_hash(cfg),
        "seed": output.seed,
        "threads": threads,
        "versions": { env!("CARGO_PKG_NAME"): env!("CARGO_PKG_VERSION") },
        "outputs": hashes,
        "verdict": output.report.verdict,
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(ConfigError::Json)? + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        RunConfig::from_json(text).expect("config parses")
    }

    fn brownian(experiment: &str, section: &str) -> RunConfig {
        parse(&format!(
            r#"{{"experiment": "{experiment}",
                "sigma": {{"kind": "const", "value": 1.0}},
                {section}}}"#
        ))
    }

    #[test]
    fn simulate_run_is_deterministic_and_dumps_paths() {
        let cfg = brownian("simulate", r#""simulate": {"paths": 8, "steps": 64}"#);
        let a = run_experiment(&cfg, None).unwrap();
        let b = run_experiment(&cfg, None).unwrap();
        assert!(a.report.verdict);
        assert_eq!(a.artifacts.len(), 2); // transform.csv + paths.csv
        assert_eq!(a.artifacts, b.artifacts);
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn seed_override_reaches_the_driver() {
        let cfg = brownian("simulate", r#""simulate": {"paths": 4, "steps": 32}"#);
        let a = run_experiment(&cfg, Some(1)).unwrap();
        let b = run_experiment(&cfg, Some(2)).unwrap();
        assert_eq!(a.seed, Some(1));
        assert_ne!(a.artifacts, b.artifacts);
    }

    #[test]
    fn atom_scheme_rejects_density_pieces() {
        let cfg = parse(
            r#"{"experiment": "simulate",
                "sigma": {"kind": "const", "value": 1.0},
                "pieces": [{"lo": 0.0, "hi": 1.0,
                            "density": {"kind": "const", "value": 0.2}}],
                "simulate": {"scheme": "atom", "paths": 2, "steps": 16}}"#,
        );
        assert!(matches!(
            run_experiment(&cfg, None),
            Err(RunnerError::Config(ConfigError::Invalid(_)))
        ));
    }

    #[test]
    fn classical_scheme_needs_a_drift() {
        let cfg = brownian(
            "simulate",
            r#""simulate": {"scheme": "classical", "paths": 2, "steps": 16}"#,
        );
        assert!(matches!(
            run_experiment(&cfg, None),
            Err(RunnerError::Config(ConfigError::Invalid(_)))
        ));
    }

    #[test]
    fn localtime_run_on_brownian_motion_passes() {
        let cfg = brownian(
            "localtime",
            r#""localtime": {"paths": 64, "steps": 256, "refinements": 2, "seed": 3}"#,
        );
        let out = run_experiment(&cfg, None).unwrap();
        assert!(out.report.verdict, "report: {:?}", out.report.metrics);
        assert_eq!(out.artifacts.len(), 1);
        assert!(out.artifacts[0].1.starts_with("level,time,estimate"));
    }

    #[test]
    fn conditions_run_reports_every_clause() {
        let cfg = parse(
            r#"{"experiment": "conditions",
                "sigma": {"kind": "const", "value": 1.0},
                "atoms": [[0.0, 0.5]]}"#,
        );
        let out = run_experiment(&cfg, None).unwrap();
        assert!(out.report.verdict);
        for tag in ["(A1)", "(A2)", "(A1w)", "(A2w)"] {
            assert!(
                out.report.metric(&format!("measure clause {tag} holds")).is_some(),
                "missing clause metric {tag}"
            );
        }
    }

    #[test]
    fn conditions_run_fails_on_overweight_atom_on_the_zero_set() {
        // Admissible for path experiments (the working measure drops the
        // atom) but the raw clauses (A1)/(A1w) fail, so the verdict is false.
        let cfg = parse(
            r#"{"experiment": "conditions",
                "sigma": {"kind": "abs_pow", "scale": 1.0, "exponent": 1.0, "offset": 0.0},
                "zero_set": {"points": [0.0]},
                "atoms": [[0.0, 1.0]]}"#,
        );
        let out = run_experiment(&cfg, None).unwrap();
        assert!(!out.report.verdict);
        assert!(!out.report.metric("measure clause (A1) holds").unwrap().pass);
    }

    #[test]
    fn reflected_run_checks_the_folded_gaussian() {
        // Step count keeps eps = dt^0.4 below support_delta; coarser grids
        // inflate the support fraction by pure window overlap.
        let cfg = brownian(
            "reflected",
            r#""reflected": {"paths": 128, "steps": 4096, "seed": 9}"#,
        );
        let out = run_experiment(&cfg, None).unwrap();
        assert!(out.report.verdict, "metrics: {:?}", out.report.metrics);
        assert!(out.report.metric("terminal mean matches the folded gaussian").is_some());
    }

    #[test]
    fn write_outputs_produces_the_manifest_with_hashes() {
        let cfg = brownian("simulate", r#""simulate": {"paths": 4, "steps": 32}"#);
        let out = run_experiment(&cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &cfg, &out, Some(2)).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["experiment"], "simulate");
        assert_eq!(manifest["threads"], 2);
        assert_eq!(manifest["config_sha256"], json!(spec_hash(&cfg)));
        let outputs = manifest["outputs"].as_object().unwrap();
        for name in ["report.json", "metrics.csv", "refinement.csv", "paths.csv"] {
            let content = fs::read(dir.path().join(name)).unwrap();
            assert_eq!(outputs[name], json!(sha256_hex(&content)), "hash mismatch for {name}");
        }
    }

    #[test]
    fn execute_exit_code_follows_the_verdict() {
        let cfg = brownian("simulate", r#""simulate": {"paths": 2, "steps": 16}"#);
        let dir = tempfile::tempdir().unwrap();
        let (code, out_dir) =
            execute(&cfg, None, Some(dir.path().join("run")), Some(2)).unwrap();
        assert_eq!(code, 0);
        assert!(out_dir.join("report.json").is_file());
    }

    #[test]
    fn execute_is_thread_count_independent() {
        let cfg = brownian(
            "simulate",
            r#""simulate": {"paths": 16, "steps": 128, "seed": 5}"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let (_, d1) = execute(&cfg, None, Some(dir.path().join("t1")), Some(1)).unwrap();
        let (_, d4) = execute(&cfg, None, Some(dir.path().join("t4")), Some(4)).unwrap();
        for name in ["report.json", "metrics.csv", "refinement.csv", "paths.csv"] {
            assert_eq!(
                fs::read(d1.join(name)).unwrap(),
                fs::read(d4.join(name)).unwrap(),
                "file {name} differs between thread counts"
            );
        }
        // Manifests differ only in the recorded thread count.
        let m1 = fs::read_to_string(d1.join("manifest.json")).unwrap();
        let m4 = fs::read_to_string(d4.join("manifest.json")).unwrap();
        assert_eq!(m1.replace("\"threads\": 1", ""), m4.replace("\"threads\": 4", ""));
    }

    #[test]
    fn metrics_csv_quotes_labels() {
        let report = ExperimentReport::new(
            "t",
            json!({}),
            vec![Metric::info("a, label with commas", 1.0)],
            vec![],
        );
        let csv = metrics_csv(&report);
        assert!(csv.contains("\"a, label with commas\",1,0,true"));
    }
}
