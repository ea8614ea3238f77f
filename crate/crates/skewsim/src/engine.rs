//! Path simulation for the local-time SDE family: the transform scheme
//! (Euler in transformed coordinates), a regularized local-time Euler scheme
//! for atomic time-dependent drifts, a reflected scheme, and plain classical
//! Euler. All schemes draw from seeded per-path Brownian substreams so that
//! ensembles are reproducible bit-for-bit and independent of thread count.

use crate::func::RealFn;
use crate::transform::{DiffusionSpec, TransformError, ZvonkinTransform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Hard cap on materialized ensemble storage (f64 count, ~1 GiB).
pub const MAX_ELEMENTS: usize = 1 << 27;
/// Regularization window for the atom scheme: eps = dt^0.4, which keeps
/// dt << eps^2 so the windowed quadratic-variation mass is a consistent
/// local-time increment.
pub const ATOM_WINDOW_EXPONENT: f64 = 0.4;
/// "Far from every atom" means beyond this many step standard deviations.
pub const FAR_FIELD_SD: f64 = 6.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("time grid needs a positive finite horizon and at least one step")]
    BadGrid,
    #[error("ensemble of {elements} values exceeds the storage budget of {MAX_ELEMENTS}")]
    BudgetExceeded { elements: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("invalid coefficient function: {0}")]
    Fn(#[from] crate::func::FnError),
    #[error("reflected scheme needs x0 >= 0, got {x0}")]
    NegativeStart { x0: f64 },
    #[error("sigma must be bounded away from zero on the working window; sampled min {min} at x = {at}")]
    SigmaNotElliptic { min: f64, at: f64 },
    #[error("atom influence zones overlap: |{a} - {b}| too small for this step size")]
    OverlappingAtoms { a: f64, b: f64 },
    #[error("flow coefficient invalid: {detail}")]
    BadFlow { detail: String },
    #[error("drift required for the classical scheme")]
    DriftMissing,
    #[error("path {path} became non-finite at step {step}")]
    NonFinite { path: usize, step: usize },
}

/// Uniform grid on [0, T]: knots t_k = k * dt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, EngineError> {
        if !(horizon.is_finite() && horizon > 0.0) || steps == 0 {
            return Err(EngineError::BadGrid);
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn knot(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }
}

/// Seeded Brownian increments, one independent substream per path
/// (counter-based: the stream id is the path index). Increments are
/// generated on demand; nothing is stored.
#[derive(Debug, Clone, Copy)]
pub struct BrownianDriver {
    pub seed: u64,
    pub paths: usize,
    pub grid: TimeGrid,
}

impl BrownianDriver {
    pub fn new(seed: u64, paths: usize, grid: TimeGrid) -> Self {
        BrownianDriver { seed, paths, grid }
    }

    /// Writes the `steps` Normal(0, dt) increments of one path.
    pub fn fill_increments(&self, path: usize, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.grid.steps);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        let sdt = self.grid.dt().sqrt();
        for v in buf.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * sdt;
        }
    }

    pub fn increments(&self, path: usize) -> Vec<f64> {
        let mut buf = vec![0.0; self.grid.steps];
        self.fill_increments(path, &mut buf);
        buf
    }

    /// Full M x N increment array; guarded by the storage budget.
    pub fn materialize(&self) -> Result<Vec<Vec<f64>>, EngineError> {
        let elements = self.paths.saturating_mul(self.grid.steps);
        if elements > MAX_ELEMENTS {
            return Err(EngineError::BudgetExceeded { elements });
        }
        Ok((0..self.paths).map(|p| self.increments(p)).collect())
    }
}

/// Runs `job` once per path in parallel, handing it the path index and that
/// path's increments. Results come back in path order regardless of thread
/// count, which keeps every downstream reduction deterministic.
pub fn ensemble<R, F>(driver: &BrownianDriver, job: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, &[f64]) -> R + Sync,
{
    (0..driver.paths)
        .into_par_iter()
        .map_init(
            || vec![0.0f64; driver.grid.steps],
            |buf, p| {
                driver.fill_increments(p, buf);
                job(p, buf)
            },
        )
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathMeta {
    pub scheme: String,
    pub seed: u64,
    pub x0: f64,
    pub exited_paths: usize,
    pub spec_hash: String,
}

/// Materialized ensemble: values[path][knot], knot 0 holding x0.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
    pub meta: PathMeta,
}

impl PathSet {
    pub fn terminal_values(&self) -> Vec<f64> {
        self.values.iter().map(|p| *p.last().unwrap()).collect()
    }

    /// Time-major CSV (t, path_0, ..., path_{M-1}) with a metadata header.
    pub fn dump_csv(&self) -> String {
        let mut out = format!(
            "# scheme={} seed={} x0={} exited={} spec_hash={}\n",
            self.meta.scheme, self.meta.seed, self.meta.x0, self.meta.exited_paths,
            self.meta.spec_hash
        );
        out.push_str("t");
        for p in 0..self.values.len() {
            out.push_str(&format!(",path_{p}"));
        }
        out.push('\n');
        for k in 0..=self.grid.steps {
            out.push_str(&format!("{}", self.grid.knot(k)));
            for path in &self.values {
                out.push_str(&format!(",{}", path[k]));
            }
            out.push('\n');
        }
        out
    }
}

fn check_budget(paths: usize, steps: usize) -> Result<(), EngineError> {
    let elements = paths.saturating_mul(steps + 1);
    if elements > MAX_ELEMENTS {
        return Err(EngineError::BudgetExceeded { elements });
    }
    Ok(())
}

/// Stable hash of anything serializable, for tagging outputs with the exact
/// inputs that produced them.
pub fn spec_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    let mut h = Sha256::new();
    h.update(&bytes);
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One transform-scheme path. Returns the trajectory and whether the path
/// left the transform image (it is then frozen at the last interior value:
/// absorbing exit policy).
pub fn transform_path(
    spec: &DiffusionSpec,
    transform: &ZvonkinTransform,
    x0: f64,
    increments: &[f64],
) -> Result<(Vec<f64>, bool), TransformError> {
    let y0 = transform.forward(x0)?;
    let (ylo, yhi) = transform.image();
    let mut vals = Vec::with_capacity(increments.len() + 1);
    vals.push(x0);
    let mut x = x0;
    let mut y = y0;
    // sigma_tilde at the current state, right-continuous branch of f
    let mut st = transform.slope(x0) * spec.sigma.eval(x0);
    let mut exited = false;
    for &dw in increments {
        if !exited {
            let inc = st * dw;
            if inc != 0.0 {
                // a zero increment moves nothing: skipping the inversion
                // keeps constant paths (x0 in the zero set) exactly constant
                let ynew = y + inc;
                if ynew < ylo || ynew > yhi {
                    exited = true;
                } else {
                    let (xn, f) = transform
                        .inverse_with_slope(ynew)
                        .expect("ynew checked against image");
                    x = xn;
                    y = ynew;
                    st = f * spec.sigma.eval(x);
                }
            }
        }
        vals.push(x);
    }
    Ok((vals, exited))
}

/// Transform-scheme ensemble: Euler in transformed coordinates, mapped back
/// through the inverse transform each step.
pub fn simulate_transform_scheme(
    spec: &DiffusionSpec,
    transform: &ZvonkinTransform,
    x0: f64,
    driver: &BrownianDriver,
) -> Result<PathSet, EngineError> {
    check_budget(driver.paths, driver.grid.steps)?;
    transform.forward(x0)?; // fail fast on a bad start point
    let results: Vec<(Vec<f64>, bool)> = ensemble(driver, |_, incs| {
        transform_path(spec, transform, x0, incs).expect("start point pre-checked")
    });
    let exited_paths = results.iter().filter(|(_, e)| *e).count();
    let values = results.into_iter().map(|(v, _)| v).collect();
    Ok(PathSet {
        grid: driver.grid,
        values,
        meta: PathMeta {
            scheme: "transform".into(),
            seed: driver.seed,
            x0,
            exited_paths,
            spec_hash: spec_hash(&(&spec.sigma, x0, driver.seed, driver.grid.steps)),
        },
    })
}

/// An atom of the time-dependent local-time drift: location, coefficient
/// t -> beta(t) in (-1, 1), and a declared bound on |beta'|.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowAtom {
    pub location: f64,
    pub beta: RealFn,
    pub deriv_bound: f64,
}

/// Finitely many atoms with time-varying coefficients.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AtomicFlow {
    pub atoms: Vec<FlowAtom>,
}

impl AtomicFlow {
    /// Samples every coefficient on the grid: values must stay strictly
    /// inside (-1, 1) and difference quotients within the declared bound.
    fn validate(&self, grid: &TimeGrid) -> Result<(), EngineError> {
        let dt = grid.dt();
        for atom in &self.atoms {
            atom.beta.validate()?;
            let mut prev = f64::NAN;
            for k in 0..=grid.steps {
                let b = atom.beta.eval(grid.knot(k));
                if !(b.abs() < 1.0) {
                    return Err(EngineError::BadFlow {
                        detail: format!(
                            "beta({}) = {b} at atom {} leaves (-1, 1)",
                            grid.knot(k),
                            atom.location
                        ),
                    });
                }
                if k > 0 {
                    let quot = (b - prev).abs() / dt;
                    if quot > atom.deriv_bound * (1.0 + 1e-6) + 1e-9 {
                        return Err(EngineError::BadFlow {
                            detail: format!(
                                "difference quotient {quot} exceeds declared bound {} at atom {}",
                                atom.deriv_bound, atom.location
                            ),
                        });
                    }
                }
                prev = b;
            }
        }
        Ok(())
    }
}

/// One regularized local-time Euler path: each step adds the windowed
/// quadratic-variation estimate of the local-time increment at every atom,
/// weighted by the frozen coefficient beta(t_k):
///
/// `x += sigma(x) dw + sum_i beta_i(t_k) 1_{|x-a_i|<eps} sigma(x)^2 dt / (2 eps)`
///
/// with eps = dt^0.4. When no window triggers the step is plain Euler,
/// bitwise (a flow with beta identically zero never triggers).
pub fn atom_path(
    spec: &DiffusionSpec,
    flow: &AtomicFlow,
    x0: f64,
    increments: &[f64],
    grid: &TimeGrid,
) -> Vec<f64> {
    let dt = grid.dt();
    let eps = dt.powf(ATOM_WINDOW_EXPONENT);
    let mut vals = Vec::with_capacity(increments.len() + 1);
    vals.push(x0);
    let mut x = x0;
    for (k, &dw) in increments.iter().enumerate() {
        let s = spec.sigma.eval(x);
        let diff = s * dw;
        let mut bump = 0.0;
        let mut hit = false;
        for atom in &flow.atoms {
            if (x - atom.location).abs() < eps {
                let beta = atom.beta.eval(grid.knot(k));
                if beta != 0.0 {
                    hit = true;
                    bump += beta * s * s * dt / (2.0 * eps);
                }
            }
        }
        x = if hit { x + diff + bump } else { x + diff };
        vals.push(x);
    }
    vals
}

/// Atomic-flow ensemble. Requires sigma elliptic on the working window and
/// atom windows that cannot interact within one step.
pub fn simulate_atom_scheme(
    spec: &DiffusionSpec,
    flow: &AtomicFlow,
    x0: f64,
    driver: &BrownianDriver,
) -> Result<PathSet, EngineError> {
    check_budget(driver.paths, driver.grid.steps)?;
    flow.validate(&driver.grid)?;
    let dt = driver.grid.dt();
    let eps = dt.powf(ATOM_WINDOW_EXPONENT);

    // working window: everything a path can plausibly visit
    let probe = {
        let mut lo = x0;
        let mut hi = x0;
        for a in &flow.atoms {
            lo = lo.min(a.location);
            hi = hi.max(a.location);
        }
        let rough = spec.sigma.sampled_sup(lo - 8.0, hi + 8.0, 1 << 10).max(1.0);
        let r = FAR_FIELD_SD * rough * driver.grid.horizon.sqrt() + 1.0;
        (lo - r, hi + r)
    };
    // the declared zero set is authoritative: sampling can miss an exact
    // zero between grid points
    for &p in &spec.zero_set.points {
        if probe.0 <= p && p <= probe.1 {
            return Err(EngineError::SigmaNotElliptic { min: 0.0, at: p });
        }
    }
    for &(lo, hi) in &spec.zero_set.intervals {
        if lo <= probe.1 && hi >= probe.0 {
            return Err(EngineError::SigmaNotElliptic { min: 0.0, at: lo.max(probe.0) });
        }
    }
    let mut smin = f64::INFINITY;
    let mut smin_at = probe.0;
    let mut smax = 0.0f64;
    for i in 0..=(1 << 10) {
        let x = probe.0 + (probe.1 - probe.0) * i as f64 / f64::from(1 << 10);
        let s = spec.sigma.eval(x).abs();
        if s < smin {
            smin = s;
            smin_at = x;
        }
        smax = smax.max(s);
    }
    if !(smin > 0.0) {
        return Err(EngineError::SigmaNotElliptic { min: smin, at: smin_at });
    }
    let min_sep = 2.0 * eps.max(FAR_FIELD_SD * smax * dt.sqrt());
    for i in 0..flow.atoms.len() {
        for j in i + 1..flow.atoms.len() {
            let (a, b) = (flow.atoms[i].location, flow.atoms[j].location);
            if (a - b).abs() <= min_sep {
                return Err(EngineError::OverlappingAtoms { a, b });
            }
        }
    }

    let grid = driver.grid;
    let values: Vec<Vec<f64>> =
        ensemble(driver, |_, incs| atom_path(spec, flow, x0, incs, &grid));
    for (p, path) in values.iter().enumerate() {
        if let Some(step) = path.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite { path: p, step });
        }
    }
    Ok(PathSet {
        grid,
        values,
        meta: PathMeta {
            scheme: "atom".into(),
            seed: driver.seed,
            x0,
            exited_paths: 0,
            spec_hash: spec_hash(&(&spec.sigma, x0, driver.seed, grid.steps)),
        },
    })
}

/// One reflected path: project onto [0, inf) after each Euler step. The
/// second vector accumulates the projections, the discrete boundary pushing
/// process (half the boundary local time in the symmetric convention).
pub fn reflected_path(spec: &DiffusionSpec, x0: f64, increments: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut vals = Vec::with_capacity(increments.len() + 1);
    let mut pushes = Vec::with_capacity(increments.len() + 1);
    vals.push(x0);
    pushes.push(0.0);
    let mut x = x0;
    let mut k_acc = 0.0;
    for &dw in increments {
        let xt = x + spec.sigma.eval(x) * dw;
        let xn = xt.max(0.0);
        k_acc += xn - xt;
        x = xn;
        vals.push(x);
        pushes.push(k_acc);
    }
    (vals, pushes)
}

/// Reflected ensemble; returns paths and the per-path pushing processes.
pub fn simulate_reflected(
    spec: &DiffusionSpec,
    x0: f64,
    driver: &BrownianDriver,
) -> Result<(PathSet, Vec<Vec<f64>>), EngineError> {
    if !(x0 >= 0.0) {
        return Err(EngineError::NegativeStart { x0 });
    }
    check_budget(driver.paths, 2 * driver.grid.steps + 1)?;
    let results: Vec<(Vec<f64>, Vec<f64>)> =
        ensemble(driver, |_, incs| reflected_path(spec, x0, incs));
    let mut values = Vec::with_capacity(results.len());
    let mut pushes = Vec::with_capacity(results.len());
    for (v, k) in results {
        values.push(v);
        pushes.push(k);
    }
    let set = PathSet {
        grid: driver.grid,
        values,
        meta: PathMeta {
            scheme: "reflected".into(),
            seed: driver.seed,
            x0,
            exited_paths: 0,
            spec_hash: spec_hash(&(&spec.sigma, x0, driver.seed, driver.grid.steps)),
        },
    };
    Ok((set, pushes))
}

/// One classical Euler path with drift.
pub fn classical_path(
    spec: &DiffusionSpec,
    drift: &RealFn,
    x0: f64,
    increments: &[f64],
    dt: f64,
) -> Vec<f64> {
    let mut vals = Vec::with_capacity(increments.len() + 1);
    vals.push(x0);
    let mut x = x0;
    for &dw in increments {
        x = x + spec.sigma.eval(x) * dw + drift.eval(x) * dt;
        vals.push(x);
    }
    vals
}

/// Classical Euler ensemble, the cross-check target for the drift-to-measure
/// route.
pub fn simulate_classical(
    spec: &DiffusionSpec,
    x0: f64,
    driver: &BrownianDriver,
) -> Result<PathSet, EngineError> {
    let drift = spec.drift.as_ref().ok_or(EngineError::DriftMissing)?;
    check_budget(driver.paths, driver.grid.steps)?;
    let dt = driver.grid.dt();
    let b = drift.b.clone();
    let values: Vec<Vec<f64>> =
        ensemble(driver, |_, incs| classical_path(spec, &b, x0, incs, dt));
    for (p, path) in values.iter().enumerate() {
        if let Some(step) = path.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite { path: p, step });
        }
    }
    Ok(PathSet {
        grid: driver.grid,
        values,
        meta: PathMeta {
            scheme: "classical".into(),
            seed: driver.seed,
            x0,
            exited_paths: 0,
            spec_hash: spec_hash(&(&spec.sigma, x0, driver.seed, driver.grid.steps)),
        },
    })
}

/// Mean over paths of the sup-norm gap between two ensembles on the same
/// grid and driver.
pub fn mean_sup_gap(a: &PathSet, b: &PathSet) -> f64 {
    assert_eq!(a.values.len(), b.values.len(), "ensembles must pair up");
    let mut total = 0.0;
    for (pa, pb) in a.values.iter().zip(&b.values) {
        assert_eq!(pa.len(), pb.len(), "grids must match");
        let sup = pa.iter().zip(pb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        total += sup;
    }
    total / a.values.len() as f64
}

/// Sample mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{SignedMeasure, ZeroSet};
    use crate::transform::build_transform;

    fn unit_spec() -> DiffusionSpec {
        DiffusionSpec::new(RealFn::constant(1.0), ZeroSet::empty(), None, None).unwrap()
    }

    fn grid(steps: usize) -> TimeGrid {
        TimeGrid::new(1.0, steps).unwrap()
    }

    #[test]
    fn driver_is_deterministic_and_streams_differ() {
        let d = BrownianDriver::new(7, 3, grid(16));
        assert_eq!(d.increments(1), d.increments(1));
        assert_ne!(d.increments(0), d.increments(1));
        let again = BrownianDriver::new(7, 3, grid(16));
        assert_eq!(d.materialize().unwrap(), again.materialize().unwrap());
    }

    #[test]
    fn increment_moments_match_normal() {
        let d = BrownianDriver::new(3, 64, grid(1 << 14));
        let mut all = Vec::new();
        for p in 0..d.paths {
            all.extend(d.increments(p));
        }
        let n = all.len() as f64;
        let dt = d.grid.dt();
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let se_mean = dt.sqrt() / n.sqrt();
        let se_var = dt * (2.0 / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 4.0 * se_mean, "mean {mean}, se {se_mean}");
        assert!((var - dt).abs() <= 4.0 * se_var, "var {var}, dt {dt}");
    }

    #[test]
    fn budget_guard_triggers() {
        let d = BrownianDriver::new(0, 1 << 16, grid(1 << 14));
        assert!(matches!(d.materialize(), Err(EngineError::BudgetExceeded { .. })));
    }

    #[test]
    fn empty_measure_unit_sigma_is_exactly_partial_sums() {
        let spec = unit_spec();
        let t = build_transform(&SignedMeasure::empty(), (-100.0, 100.0), 4).unwrap();
        let d = BrownianDriver::new(11, 2, grid(256));
        let set = simulate_transform_scheme(&spec, &t, 0.5, &d).unwrap();
        for p in 0..2 {
            let incs = d.increments(p);
            let mut acc = 0.5;
            for (k, dw) in incs.iter().enumerate() {
                acc += dw;
                assert_eq!(set.values[p][k + 1], acc, "path {p} step {k}");
            }
        }
        assert_eq!(set.meta.exited_paths, 0);
    }

    #[test]
    fn start_in_zero_set_stays_exactly_constant() {
        // sigma = |x| vanishes at 0; a path started there never moves
        let spec = DiffusionSpec::new(
            RealFn::AbsPow { scale: 1.0, exponent: 1.0, offset: 0.0 },
            ZeroSet::points(vec![0.0]),
            None,
            None,
        )
        .unwrap();
        let t = build_transform(&SignedMeasure::empty(), (-10.0, 10.0), 4).unwrap();
        let d = BrownianDriver::new(5, 3, grid(512));
        let set = simulate_transform_scheme(&spec, &t, 0.0, &d).unwrap();
        for path in &set.values {
            assert!(path.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn exits_are_absorbing_and_counted() {
        let spec = unit_spec();
        let t = build_transform(&SignedMeasure::empty(), (-0.05, 0.05), 4).unwrap();
        let d = BrownianDriver::new(2, 64, grid(256));
        let set = simulate_transform_scheme(&spec, &t, 0.0, &d).unwrap();
        assert!(set.meta.exited_paths > 0, "narrow domain must be exited");
        for path in &set.values {
            // frozen after exit: values stay inside the domain
            assert!(path.iter().all(|&v| (-0.05..=0.05).contains(&v)));
        }
    }

    #[test]
    fn atom_scheme_with_zero_beta_matches_plain_euler_bitwise() {
        let spec = unit_spec();
        let flow = AtomicFlow {
            atoms: vec![FlowAtom {
                location: 0.0,
                beta: RealFn::constant(0.0),
                deriv_bound: 0.0,
            }],
        };
        let d = BrownianDriver::new(9, 4, grid(512));
        let atom = simulate_atom_scheme(&spec, &flow, 0.2, &d).unwrap();
        for p in 0..4 {
            let incs = d.increments(p);
            let euler = classical_path(&spec, &RealFn::constant(0.0), 0.2, &incs, d.grid.dt());
            // drift eval is 0.0*dt here, identical arithmetic either way
            for (a, b) in atom.values[p].iter().zip(&euler) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn atom_scheme_rejects_overlapping_atoms() {
        let spec = unit_spec();
        let flow = AtomicFlow {
            atoms: vec![
                FlowAtom { location: 0.0, beta: RealFn::constant(0.3), deriv_bound: 0.0 },
                FlowAtom { location: 0.01, beta: RealFn::constant(0.3), deriv_bound: 0.0 },
            ],
        };
        let d = BrownianDriver::new(1, 2, grid(256));
        assert!(matches!(
            simulate_atom_scheme(&spec, &flow, 0.0, &d),
            Err(EngineError::OverlappingAtoms { .. })
        ));
    }

    #[test]
    fn atom_scheme_rejects_beta_outside_open_interval() {
        let spec = unit_spec();
        let flow = AtomicFlow {
            atoms: vec![FlowAtom {
                location: 0.0,
                beta: RealFn::constant(1.0),
                deriv_bound: 0.0,
            }],
        };
        let d = BrownianDriver::new(1, 2, grid(64));
        assert!(matches!(
            simulate_atom_scheme(&spec, &flow, 0.0, &d),
            Err(EngineError::BadFlow { .. })
        ));
    }

    #[test]
    fn atom_scheme_rejects_vanishing_sigma() {
        let spec = DiffusionSpec::new(
            RealFn::AbsPow { scale: 1.0, exponent: 1.0, offset: 0.0 },
            ZeroSet::points(vec![0.0]),
            None,
            None,
        )
        .unwrap();
        let flow = AtomicFlow {
            atoms: vec![FlowAtom {
                location: 1.0,
                beta: RealFn::constant(0.2),
                deriv_bound: 0.0,
            }],
        };
        let d = BrownianDriver::new(1, 2, grid(64));
        assert!(matches!(
            simulate_atom_scheme(&spec, &flow, 1.0, &d),
            Err(EngineError::SigmaNotElliptic { .. })
        ));
    }

    #[test]
    fn atom_and_transform_schemes_track_each_other() {
        let spec = unit_spec();
        let measure = SignedMeasure::from_atoms(&[(0.0, 0.4)]).unwrap();
        let t = build_transform(&measure, (-12.0, 12.0), 1 << 12).unwrap();
        let flow = AtomicFlow {
            atoms: vec![FlowAtom {
                location: 0.0,
                beta: RealFn::constant(0.4),
                deriv_bound: 0.0,
            }],
        };
        let d = BrownianDriver::new(21, 64, grid(1 << 10));
        let a = simulate_transform_scheme(&spec, &t, 0.0, &d).unwrap();
        let b = simulate_atom_scheme(&spec, &flow, 0.0, &d).unwrap();
        assert_eq!(a.meta.exited_paths, 0);
        let gap = mean_sup_gap(&a, &b);
        assert!(gap < 0.5, "schemes diverged: mean sup gap {gap}");
    }

    #[test]
    fn reflected_paths_stay_nonnegative_with_monotone_pushing() {
        let spec = unit_spec();
        let d = BrownianDriver::new(4, 32, grid(1024));
        let (set, pushes) = simulate_reflected(&spec, 0.0, &d).unwrap();
        for (path, push) in set.values.iter().zip(&pushes) {
            assert!(path.iter().all(|&v| v >= 0.0));
            assert!(push.windows(2).all(|w| w[1] >= w[0]));
            assert!(*push.last().unwrap() > 0.0, "path from 0 must reflect");
        }
    }

    #[test]
    fn reflected_mean_matches_folded_normal() {
        let spec = unit_spec();
        let d = BrownianDriver::new(17, 20_000, grid(1024));
        let (set, _) = simulate_reflected(&spec, 0.0, &d).unwrap();
        let (mean, se) = mean_se(&set.terminal_values());
        let oracle = (2.0 / std::f64::consts::PI).sqrt();
        // discrete reflection biases low by about 0.58 sqrt(dt)
        let budget = 0.6 * d.grid.dt().sqrt() + 3.0 * se;
        assert!((mean - oracle).abs() <= budget, "mean {mean} vs {oracle}, budget {budget}");
    }

    #[test]
    fn reflected_far_start_rarely_touches_boundary() {
        let spec = unit_spec();
        let d = BrownianDriver::new(6, 10_000, grid(256));
        let (_, pushes) = simulate_reflected(&spec, 10.0, &d).unwrap();
        let touched = pushes.iter().filter(|p| *p.last().unwrap() > 0.0).count();
        assert!((touched as f64) < 1e-4 * 10_000.0 + 1.0, "touched {touched}");
    }

    #[test]
    fn reflected_zero_sigma_is_frozen() {
        let spec = DiffusionSpec::new(RealFn::constant(0.0), ZeroSet::empty(), None, None);
        // constant-zero sigma has an empty declared zero set here; build the
        // spec directly to bypass the spot check's sampling of declared zeros
        let spec = spec.unwrap();
        let d = BrownianDriver::new(8, 4, grid(64));
        let (set, pushes) = simulate_reflected(&spec, 1.5, &d).unwrap();
        for (path, push) in set.values.iter().zip(&pushes) {
            assert!(path.iter().all(|&v| v == 1.5));
            assert!(push.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reflected_rejects_negative_start() {
        let spec = unit_spec();
        let d = BrownianDriver::new(1, 2, grid(16));
        assert!(matches!(
            simulate_reflected(&spec, -1.0, &d),
            Err(EngineError::NegativeStart { .. })
        ));
    }

    #[test]
    fn classical_drift_free_is_scaled_partial_sums() {
        let spec = DiffusionSpec::new(
            RealFn::constant(2.0),
            ZeroSet::empty(),
            Some(crate::transform::DriftSpec {
                b: RealFn::constant(0.0),
                zero_set: ZeroSet::empty(),
            }),
            None,
        )
        .unwrap();
        let d = BrownianDriver::new(13, 2, grid(128));
        let set = simulate_classical(&spec, 1.0, &d).unwrap();
        for p in 0..2 {
            let incs = d.increments(p);
            let mut acc = 1.0;
            for (k, dw) in incs.iter().enumerate() {
                acc = acc + 2.0 * dw + 0.0 * d.grid.dt();
                assert_eq!(set.values[p][k + 1], acc);
            }
        }
    }

    #[test]
    fn classical_unit_drift_mean() {
        let spec = DiffusionSpec::new(
            RealFn::constant(1.0),
            ZeroSet::empty(),
            Some(crate::transform::DriftSpec {
                b: RealFn::constant(1.0),
                zero_set: ZeroSet::empty(),
            }),
            None,
        )
        .unwrap();
        let d = BrownianDriver::new(23, 20_000, grid(256));
        let set = simulate_classical(&spec, 0.5, &d).unwrap();
        let (mean, se) = mean_se(&set.terminal_values());
        assert!((mean - 1.5).abs() <= 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn classical_ou_variance_matches_closed_form() {
        let spec = DiffusionSpec::new(
            RealFn::constant(1.0),
            ZeroSet::empty(),
            Some(crate::transform::DriftSpec {
                b: RealFn::Poly { coeffs: vec![0.0, -1.0] },
                zero_set: ZeroSet::points(vec![0.0]),
            }),
            None,
        )
        .unwrap();
        let d = BrownianDriver::new(29, 20_000, grid(1024));
        let set = simulate_classical(&spec, 0.0, &d).unwrap();
        let terminal = set.terminal_values();
        let (mean, _) = mean_se(&terminal);
        let var = terminal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (terminal.len() - 1) as f64;
        let oracle = 0.5 * (1.0 - (-2.0f64).exp());
        assert!((var - oracle).abs() <= 0.025, "var {var} vs {oracle}");
    }

    #[test]
    fn transform_scheme_order_violations_shrink_under_refinement() {
        // away from the atom order holds exactly (monotone maps, same
        // driver), but a step straddling it can flip the order by one step's
        // displacement and the inverse map amplifies the flip by the slope
        // ratio, so the honest claim is that violations vanish with the step
        let spec = unit_spec();
        let measure = SignedMeasure::from_atoms(&[(0.0, 0.5)]).unwrap();
        let t = build_transform(&measure, (-12.0, 12.0), 1 << 12).unwrap();
        let mean_violation = |steps: usize| {
            let d = BrownianDriver::new(31, 128, grid(steps));
            let lo = simulate_transform_scheme(&spec, &t, -0.1, &d).unwrap();
            let hi = simulate_transform_scheme(&spec, &t, 0.1, &d).unwrap();
            let mut acc = 0.0;
            for (pl, ph) in lo.values.iter().zip(&hi.values) {
                let mut worst = 0.0f64;
                for (a, b) in pl.iter().zip(ph) {
                    worst = worst.max(a - b);
                }
                acc += worst;
            }
            acc / lo.values.len() as f64
        };
        let coarse = mean_violation(1 << 8);
        let fine = mean_violation(1 << 14);
        assert!(
            fine < 0.7 * coarse,
            "violation did not shrink: coarse {coarse}, fine {fine}"
        );
        assert!(fine <= 0.2, "fine violation {fine} not small");
    }

    #[test]
    fn identical_runs_are_bitwise_identical_across_thread_counts() {
        let spec = unit_spec();
        let measure = SignedMeasure::from_atoms(&[(0.0, 0.5)]).unwrap();
        let t = build_transform(&measure, (-12.0, 12.0), 1 << 10).unwrap();
        let d = BrownianDriver::new(42, 64, grid(512));
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| simulate_transform_scheme(&spec, &t, 0.0, &d).unwrap().values)
        };
        let single = run(1);
        let multi = run(4);
        assert_eq!(single, multi);
    }

    #[test]
    fn path_set_csv_has_header_and_rows() {
        let spec = unit_spec();
        let t = build_transform(&SignedMeasure::empty(), (-50.0, 50.0), 4).unwrap();
        let d = BrownianDriver::new(3, 2, grid(4));
        let set = simulate_transform_scheme(&spec, &t, 0.0, &d).unwrap();
        let csv = set.dump_csv();
        assert!(csv.starts_with("# scheme=transform"));
        assert!(csv.contains("t,path_0,path_1"));
        assert_eq!(csv.lines().count(), 2 + 5 + 1 - 1); // header, columns, 5 knots
    }
}
