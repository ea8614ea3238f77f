//! Quadrature helpers. The measure layer uses an adaptive trapezoid rule with
//! a hard divergence guard; the condition checkers use log-spaced trapezoid
//! sums that resolve power-law singularities at an interval endpoint.

/// Absolute tolerance target for adaptive integration of measure densities.
pub const ADAPTIVE_TOL: f64 = 1e-10;
/// Values beyond this are reported as divergent (extended-real +infinity).
pub const DIVERGENCE_GUARD: f64 = 1e12;

const MAX_DEPTH: u32 = 44;

/// Adaptive trapezoid integral of `f` over `[a, b]`.
///
/// Returns `f64::INFINITY` when the accumulated magnitude passes
/// [`DIVERGENCE_GUARD`]. Intended for piecewise-smooth bounded integrands
/// (polynomial, tabulated or step densities); integrable endpoint
/// singularities are better served by [`log_trapezoid`].
pub fn adaptive_trapezoid<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let whole = (fa + fb) * 0.5 * (b - a);
    let v = adapt(f, a, b, fa, fb, whole, tol, MAX_DEPTH);
    if v.abs() > DIVERGENCE_GUARD {
        f64::INFINITY * v.signum()
    } else {
        v
    }
}

fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    if m <= a || m >= b {
        return whole;
    }
    let fm = f(m);
    let left = (fa + fm) * 0.5 * (m - a);
    let right = (fm + fb) * 0.5 * (b - m);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= tol || refined.abs() > 4.0 * DIVERGENCE_GUARD {
        return refined;
    }
    let half_tol = 0.5 * tol;
    adapt(f, a, m, fa, fm, left, half_tol, depth - 1)
        + adapt(f, m, b, fm, fb, right, half_tol, depth - 1)
}

/// Trapezoid rule on a geometric grid from `a` to `b`, `0 < a < b`.
///
/// The grid is exponentially refined toward `a`, so integrands with a
/// power-law singularity at 0 (evaluated on `[a, b]` with `a` the shrinking
/// cutoff) are integrated accurately. `nodes` counts grid points (>= 2).
pub fn log_trapezoid<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, nodes: usize) -> f64 {
    assert!(a > 0.0 && b > a, "log_trapezoid needs 0 < a < b");
    let n = nodes.max(2);
    let (la, lb) = (a.ln(), b.ln());
    let h = (lb - la) / ((n - 1) as f64);
    // substitution x = e^u: integrand f(e^u) * e^u
    let g = |u: f64| {
        let x = u.exp();
        f(x) * x
    };
    let mut acc = 0.5 * (g(la) + g(lb));
    for k in 1..n - 1 {
        acc += g(la + h * (k as f64));
        if acc > 4.0 * DIVERGENCE_GUARD {
            return f64::INFINITY;
        }
    }
    let v = acc * h;
    if v.abs() > DIVERGENCE_GUARD {
        f64::INFINITY * v.signum()
    } else {
        v
    }
}

/// Plain trapezoid sum of tabulated values on a uniform grid with step `h`.
pub fn uniform_trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    (inner + 0.5 * (values[0] + values[values.len() - 1])) * h
}
