//! The space transform that removes a local-time drift measure.
//!
//! For an admissible signed measure `nu` the density
//! `f(x) = exp(-2 nu_c((-inf, x])) * prod_{y <= x} (1 - nu{y})/(1 + nu{y})`
//! is positive, right-continuous, and bounded away from 0 and infinity on a
//! compact working domain; its primitive `F(x) = int_0^x f` is a bi-Lipschitz
//! space change under which the measure-drift process becomes driftless with
//! diffusion coefficient `sigma_tilde(y) = (f * sigma)(F^{-1}(y))`.
//!
//! Representation: `f` is sampled on a uniform grid with every atom location
//! present twice (left and right limits), `F` is the running trapezoid
//! integral of that sampled profile, and in-segment evaluation integrates the
//! chord of `f` exactly. Between atoms of a purely atomic measure `f` is
//! constant, so the chord rule makes `F` piecewise linear and exact there;
//! for tabulated densities it is second-order accurate. `F(0) = 0` always
//! (affine continuation anchors the origin when it lies outside the domain).

use crate::func::RealFn;
use crate::measure::{IntervalUnion, MeasureError, SignedMeasure, ZeroSet};
use crate::quad::{adaptive_trapezoid, ADAPTIVE_TOL};
use crate::report::{ConditionReport, Violation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Local-integrability guard for the `I_sigma` membership test.
const I_SIGMA_GUARD: f64 = 1e10;
/// Guard on tabulated drift-to-measure density values.
const DENSITY_GUARD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("domain [{lo}, {hi}] is not a bounded interval")]
    BadDomain { lo: f64, hi: f64 },
    #[error("resolution {resolution} too small, need at least 2 grid cells")]
    ResolutionTooSmall { resolution: usize },
    #[error("atom at {location} lies outside the working domain")]
    AtomOutsideDomain { location: f64 },
    #[error("measure is not admissible: {0}")]
    Measure(#[from] MeasureError),
    #[error("invalid coefficient function: {0}")]
    Fn(#[from] crate::func::FnError),
    #[error("transform density is not finite and positive at x = {at}")]
    BadScale { at: f64 },
    #[error("x = {x} outside transform domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("y = {y} outside transform image [{lo}, {hi}]")]
    OutOfImage { y: f64, lo: f64, hi: f64 },
    #[error("diffusion spec inconsistent: {detail} (witness x = {witness})")]
    SpecInconsistent { witness: f64, detail: String },
    #[error("no drift declared on the diffusion spec")]
    DriftMissing,
    #[error("drift-to-measure condition fails: {detail} (witness x = {witness})")]
    DriftCondition { witness: f64, detail: String },
}

/// Classical drift together with its declared zero set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftSpec {
    pub b: RealFn,
    #[serde(default)]
    pub zero_set: ZeroSet,
}

/// A time-homogeneous diffusion coefficient with its declared zero set,
/// optional classical drift, and optional linear growth bound
/// `|sigma(x)| <= a (b + |x|)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub sigma: RealFn,
    #[serde(default)]
    pub zero_set: ZeroSet,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    #[serde(default)]
    pub growth_bound: Option<(f64, f64)>,
}

impl DiffusionSpec {
    /// Validates the functions and spot-checks the declarations: sigma must
    /// vanish exactly on declared zero-set samples and obey the growth bound
    /// on a coarse grid when one is given.
    pub fn new(
        sigma: RealFn,
        zero_set: ZeroSet,
        drift: Option<DriftSpec>,
        growth_bound: Option<(f64, f64)>,
    ) -> Result<Self, TransformError> {
        sigma.validate()?;
        if let Some(d) = &drift {
            d.b.validate()?;
        }
        let spec = DiffusionSpec { sigma, zero_set, drift, growth_bound };
        spec.spot_check()?;
        Ok(spec)
    }

    fn spot_check(&self) -> Result<(), TransformError> {
        let mut samples: Vec<f64> = self.zero_set.points.clone();
        for &(lo, hi) in &self.zero_set.intervals {
            samples.extend([lo, 0.5 * (lo + hi), hi]);
        }
        for x in samples {
            if self.sigma.eval(x) != 0.0 {
                return Err(TransformError::SpecInconsistent {
                    witness: x,
                    detail: "sigma is nonzero on its declared zero set".into(),
                });
            }
        }
        if let Some((a, b)) = self.growth_bound {
            for i in 0..=100 {
                let x = -50.0 + i as f64;
                if self.sigma.eval(x).abs() > a * (b + x.abs()) + 1e-12 {
                    return Err(TransformError::SpecInconsistent {
                        witness: x,
                        detail: format!("growth bound |sigma| <= {a}({b} + |x|) fails"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The built transform: knot grid (atom locations duplicated as left/right
/// limits), sampled density `f`, primitive `F`, and the two-sided Lipschitz
/// constants. Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct ZvonkinTransform {
    domain: (f64, f64),
    knots: Vec<f64>,
    f_vals: Vec<f64>,
    big_f: Vec<f64>,
    m_lower: f64,
    m_upper: f64,
    identity: bool,
}

/// Builds the transform for `measure` on `domain` with `resolution` uniform
/// grid cells. Every atom must lie inside the domain and carry |weight| < 1;
/// the measure's variation on the domain must be finite.
pub fn build_transform(
    measure: &SignedMeasure,
    domain: (f64, f64),
    resolution: usize,
) -> Result<ZvonkinTransform, TransformError> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(TransformError::BadDomain { lo, hi });
    }
    if resolution < 2 {
        return Err(TransformError::ResolutionTooSmall { resolution });
    }
    if measure.is_empty() {
        return Ok(ZvonkinTransform {
            domain,
            knots: vec![lo, hi],
            f_vals: vec![1.0, 1.0],
            big_f: vec![lo, hi],
            m_lower: 1.0,
            m_upper: 1.0,
            identity: true,
        });
    }
    for atom in measure.atoms() {
        if atom.location < lo || atom.location > hi {
            return Err(TransformError::AtomOutsideDomain { location: atom.location });
        }
    }
    let tv = measure.tv_on(&IntervalUnion::of(lo, hi));
    if !tv.is_finite() {
        return Err(MeasureError::Divergent { near: hi }.into());
    }

    // knot assembly: uniform grid, atom collisions replaced by a left/right
    // pair so f can jump at the atom while F stays continuous
    let h = (hi - lo) / resolution as f64;
    struct Knot {
        x: f64,
        left_copy: bool,
    }
    let mut knots: Vec<Knot> = (0..=resolution)
        .map(|i| if i == resolution { hi } else { lo + i as f64 * h })
        .filter(|&x| !measure.atoms().iter().any(|a| a.location == x))
        .map(|x| Knot { x, left_copy: false })
        .collect();
    for atom in measure.atoms() {
        knots.push(Knot { x: atom.location, left_copy: true });
        knots.push(Knot { x: atom.location, left_copy: false });
    }
    knots.sort_by(|p, q| p.x.total_cmp(&q.x).then(q.left_copy.cmp(&p.left_copy)));

    let mut xs = Vec::with_capacity(knots.len());
    let mut f_vals = Vec::with_capacity(knots.len());
    for k in &knots {
        let cdf = measure.continuous_cdf(k.x)?;
        let prod = if k.left_copy {
            measure.atom_product_left(k.x)?
        } else {
            measure.atom_product(k.x)?
        };
        let f = (-2.0 * cdf).exp() * prod;
        if !f.is_finite() || f <= 0.0 {
            return Err(TransformError::BadScale { at: k.x });
        }
        xs.push(k.x);
        f_vals.push(f);
    }

    // running trapezoid integral of the sampled profile; exact between knots
    // whenever f is constant there (purely atomic measures)
    let mut big_f = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    big_f.push(0.0);
    for i in 1..xs.len() {
        acc += (xs[i] - xs[i - 1]) * 0.5 * (f_vals[i] + f_vals[i - 1]);
        big_f.push(acc);
    }

    let m_lower = f_vals.iter().copied().fold(f64::INFINITY, f64::min);
    let m_upper = f_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut t = ZvonkinTransform {
        domain,
        knots: xs,
        f_vals,
        big_f,
        m_lower,
        m_upper,
        identity: false,
    };
    // anchor F(0) = 0, continuing affinely when 0 is outside the domain
    let at_zero = t.raw_forward(0.0);
    for v in &mut t.big_f {
        *v -= at_zero;
    }
    debug_assert!(t
        .big_f
        .windows(2)
        .zip(t.knots.windows(2))
        .all(|(fv, kv)| kv[0] == kv[1] || fv[1] > fv[0]));
    Ok(t)
}

impl ZvonkinTransform {
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Image interval [F(lo), F(hi)].
    pub fn image(&self) -> (f64, f64) {
        if self.identity {
            return self.domain;
        }
        (self.big_f[0], *self.big_f.last().unwrap())
    }

    pub fn m_lower(&self) -> f64 {
        self.m_lower
    }

    pub fn m_upper(&self) -> f64 {
        self.m_upper
    }

    /// True when the measure was empty; forward/inverse are then the exact
    /// identity (no grid arithmetic at all).
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_vals
    }

    pub fn big_f_values(&self) -> &[f64] {
        &self.big_f
    }

    /// F(x) for x in the domain.
    pub fn forward(&self, x: f64) -> Result<f64, TransformError> {
        let (lo, hi) = self.domain;
        if !(lo <= x && x <= hi) {
            return Err(TransformError::OutOfDomain { x, lo, hi });
        }
        Ok(self.raw_forward(x))
    }

    /// F extended affinely beyond the domain edges (slope = edge f value).
    pub fn forward_extended(&self, x: f64) -> f64 {
        self.raw_forward(x)
    }

    fn raw_forward(&self, x: f64) -> f64 {
        if self.identity {
            return x;
        }
        let n = self.knots.len();
        if x < self.knots[0] {
            return self.big_f[0] + (x - self.knots[0]) * self.f_vals[0];
        }
        if x >= self.knots[n - 1] {
            return self.big_f[n - 1] + (x - self.knots[n - 1]) * self.f_vals[n - 1];
        }
        // last knot <= x; at a duplicated atom location this is the right
        // copy, giving the right-continuous branch
        let k = self.knots.partition_point(|&t| t <= x) - 1;
        let h = self.knots[k + 1] - self.knots[k];
        let dx = x - self.knots[k];
        let df = self.f_vals[k + 1] - self.f_vals[k];
        // integral of the chord of f over [knot_k, x]; the quadratic term is
        // exactly 0.0 when f is constant on the segment
        self.big_f[k] + dx * self.f_vals[k] + 0.5 * dx * dx * df / h
    }

    /// The density f(x), right-continuous; clamped to the edge values
    /// outside the domain.
    pub fn slope(&self, x: f64) -> f64 {
        if self.identity {
            return 1.0;
        }
        let n = self.knots.len();
        if x < self.knots[0] {
            return self.f_vals[0];
        }
        if x >= self.knots[n - 1] {
            return self.f_vals[n - 1];
        }
        let k = self.knots.partition_point(|&t| t <= x) - 1;
        let h = self.knots[k + 1] - self.knots[k];
        let w = (x - self.knots[k]) / h;
        self.f_vals[k] + w * (self.f_vals[k + 1] - self.f_vals[k])
    }

    /// F^{-1}(y) for y in the image.
    pub fn inverse(&self, y: f64) -> Result<f64, TransformError> {
        self.inverse_with_slope(y).map(|(x, _)| x)
    }

    /// F^{-1}(y) together with f(F^{-1}(y)) from the same segment lookup;
    /// the slope is the right-continuous branch at atom images.
    pub fn inverse_with_slope(&self, y: f64) -> Result<(f64, f64), TransformError> {
        if self.identity {
            let (lo, hi) = self.domain;
            if !(lo <= y && y <= hi) {
                return Err(TransformError::OutOfImage { y, lo, hi });
            }
            return Ok((y, 1.0));
        }
        let n = self.big_f.len();
        let (ilo, ihi) = (self.big_f[0], self.big_f[n - 1]);
        if !(ilo <= y && y <= ihi) {
            return Err(TransformError::OutOfImage { y, lo: ilo, hi: ihi });
        }
        // last F-knot <= y; duplicated (equal) values at an atom resolve to
        // the right copy, so the returned slope is the right limit
        let k = (self.big_f.partition_point(|&v| v <= y) - 1).min(n - 2);
        let q = y - self.big_f[k];
        let h = self.knots[k + 1] - self.knots[k];
        let f0 = self.f_vals[k];
        let df = self.f_vals[k + 1] - self.f_vals[k];
        let dx = if df == 0.0 || q == 0.0 {
            q / f0
        } else {
            // invert big_f[k] + f0 dx + (df / 2h) dx^2 = y; the stable root
            // of the increasing branch
            let disc = f0 * f0 + 2.0 * df * q / h;
            2.0 * q / (f0 + disc.max(0.0).sqrt())
        };
        let x = self.knots[k] + dx;
        Ok((x, f0 + df * dx / h))
    }

    /// CSV dump (knot, f, F) for plots and regression baselines.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("knot,f,F\n");
        if self.identity {
            let (lo, hi) = self.domain;
            out.push_str(&format!("{lo},1,{lo}\n{hi},1,{hi}\n"));
            return out;
        }
        for i in 0..self.knots.len() {
            out.push_str(&format!("{},{},{}\n", self.knots[i], self.f_vals[i], self.big_f[i]));
        }
        out
    }
}

/// The transformed diffusion coefficient `sigma_tilde(y) = f(x) sigma(x)`
/// with `x = F^{-1}(y)`, using the right-continuous branch of f.
pub struct SigmaTilde<'a> {
    transform: &'a ZvonkinTransform,
    sigma: &'a RealFn,
}

pub fn build_sigma_tilde<'a>(
    transform: &'a ZvonkinTransform,
    spec: &'a DiffusionSpec,
) -> SigmaTilde<'a> {
    SigmaTilde { transform, sigma: &spec.sigma }
}

impl SigmaTilde<'_> {
    pub fn eval(&self, y: f64) -> Result<f64, TransformError> {
        let (x, f) = self.transform.inverse_with_slope(y)?;
        Ok(f * self.sigma.eval(x))
    }

    pub fn image(&self) -> (f64, f64) {
        self.transform.image()
    }
}

/// Converts a classical drift into the equivalent local-time measure with
/// density `b / sigma^2` off the drift's zero set, tabulated on `domain`.
///
/// Errors when sigma vanishes where the drift does not (the declared zero
/// sets must nest the same way) or when the tabulated density blows up.
pub fn drift_to_measure(
    spec: &DiffusionSpec,
    domain: (f64, f64),
    resolution: usize,
) -> Result<SignedMeasure, TransformError> {
    let drift = spec.drift.as_ref().ok_or(TransformError::DriftMissing)?;
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(TransformError::BadDomain { lo, hi });
    }
    if resolution < 2 {
        return Err(TransformError::ResolutionTooSmall { resolution });
    }
    if !spec.zero_set.subset_of(&drift.zero_set) {
        return Err(TransformError::DriftCondition {
            witness: f64::NAN,
            detail: "declared zero set of sigma is not contained in the drift's zero set".into(),
        });
    }
    let h = (hi - lo) / resolution as f64;
    let mut xs = Vec::with_capacity(resolution + 1);
    let mut ys = Vec::with_capacity(resolution + 1);
    for i in 0..=resolution {
        let x = if i == resolution { hi } else { lo + i as f64 * h };
        let y = if drift.zero_set.contains(x) {
            0.0
        } else {
            let s = spec.sigma.eval(x);
            let b = drift.b.eval(x);
            if s == 0.0 {
                if b == 0.0 {
                    0.0
                } else {
                    return Err(TransformError::DriftCondition {
                        witness: x,
                        detail: "sigma vanishes where the drift does not".into(),
                    });
                }
            } else {
                let g = b / (s * s);
                if !g.is_finite() || g.abs() > DENSITY_GUARD {
                    return Err(TransformError::DriftCondition {
                        witness: x,
                        detail: "density b/sigma^2 exceeds the divergence guard".into(),
                    });
                }
                g
            }
        };
        xs.push(x);
        ys.push(y);
    }
    if ys.iter().all(|&v| v == 0.0) {
        return Ok(SignedMeasure::empty());
    }
    let measure = SignedMeasure::new(
        vec![],
        vec![crate::measure::DensityPiece { lo, hi, density: RealFn::Table { xs, ys } }],
    )?;
    let tv = measure.tv_on(&IntervalUnion::whole_line());
    if !tv.is_finite() {
        return Err(TransformError::DriftCondition {
            witness: hi,
            detail: "total variation of b/sigma^2 diverges on the domain".into(),
        });
    }
    Ok(measure)
}

/// Samples each compact off the declared zero set and tests whether
/// `sigma^{-2}` is locally integrable there (three dyadic window radii,
/// divergence flagged past 1e10). A diffusion whose zeros are all declared
/// should pass everywhere; an undeclared zero shows up as a witness.
pub fn check_i_sigma(spec: &DiffusionSpec, compacts: &[(f64, f64)]) -> ConditionReport {
    const SAMPLES: usize = 25;
    let mut violations = Vec::new();
    let mut tested = 0usize;
    for &(lo, hi) in compacts {
        for i in 0..SAMPLES {
            let a = lo + (i as f64 + 0.5) * (hi - lo) / SAMPLES as f64;
            if spec.zero_set.contains(a) {
                continue;
            }
            // keep the window clear of declared zeros: integrability is a
            // local property, so shrinking the neighborhood is legitimate
            let clear = spec.zero_set.distance(a);
            let base = if clear.is_finite() { (0.5 * clear).min(1e-2) } else { 1e-2 };
            if base <= 0.0 {
                continue;
            }
            tested += 1;
            let radii = [base, 0.5 * base, 0.25 * base];
            let mut smallest = f64::INFINITY;
            for r in radii {
                let s = &spec.sigma;
                let v = adaptive_trapezoid(
                    &|y: f64| {
                        let sv = s.eval(y);
                        1.0 / (sv * sv)
                    },
                    a - r,
                    a + r,
                    ADAPTIVE_TOL.max(1e-12),
                );
                smallest = v;
            }
            if !(smallest < I_SIGMA_GUARD) {
                violations.push(Violation {
                    condition: "(I_sigma)".into(),
                    witness: a,
                    value: I_SIGMA_GUARD,
                    detail: format!(
                        "sigma^-2 not locally integrable near {a}: undeclared zero suspected"
                    ),
                });
            }
        }
    }
    let notes = format!(
        "local integrability of sigma^-2 sampled at {tested} points off the declared zero set: {}",
        if violations.is_empty() { "consistent" } else { "violations found" }
    );
    ConditionReport::new(violations, notes)
}
