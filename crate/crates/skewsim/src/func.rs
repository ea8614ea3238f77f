//! Evaluable real functions shared by coefficient specs, measure densities,
//! payoffs and time-dependent atom weights. A closed enum rather than a trait
//! object so configs can name every function, results can be hashed, and
//! evaluation stays `Send + Sync` for the path-parallel engine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FnError {
    #[error("table needs at least two nodes, got {0}")]
    TableTooShort(usize),
    #[error("table abscissae must be finite and strictly increasing (index {0})")]
    TableNotIncreasing(usize),
    #[error("non-finite value in function definition")]
    NonFinite,
    #[error("abs_pow exponent must be >= 0, got {0}")]
    BadExponent(f64),
}

/// A real function of one variable with a serializable, closed description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RealFn {
    /// `value`
    Const { value: f64 },
    /// `slope * x + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `c0 + c1 x + c2 x^2 + ...`
    Poly { coeffs: Vec<f64> },
    /// `scale * |x|^exponent + offset`
    AbsPow { scale: f64, exponent: f64, offset: f64 },
    /// right-continuous step: `below` for x < at, `from` for x >= at
    Step { at: f64, below: f64, from: f64 },
    /// `inside` on [lo, hi), `outside` elsewhere
    Band { lo: f64, hi: f64, inside: f64, outside: f64 },
    /// piecewise linear through (xs[i], ys[i]); clamped outside the table
    Table { xs: Vec<f64>, ys: Vec<f64> },
    /// `offset + amplitude * cos(angular_frequency * x + phase)`
    Cosine { amplitude: f64, angular_frequency: f64, phase: f64, offset: f64 },
    /// `1 + |sin(1/x)|`, with value 1 at x = 0; unbounded variation near 0
    OnePlusAbsSinInv,
}

impl RealFn {
    pub fn constant(value: f64) -> Self {
        RealFn::Const { value }
    }

    /// Checks the description itself (finiteness, table monotonicity). Cheap;
    /// run once when a spec or config is constructed.
    pub fn validate(&self) -> Result<(), FnError> {
        let all_finite = |vs: &[f64]| vs.iter().all(|v| v.is_finite());
        match self {
            RealFn::Const { value } => {
                if !value.is_finite() {
                    return Err(FnError::NonFinite);
                }
            }
            RealFn::Linear { slope, intercept } => {
                if !all_finite(&[*slope, *intercept]) {
                    return Err(FnError::NonFinite);
                }
            }
            RealFn::Poly { coeffs } => {
                if !all_finite(coeffs) {
                    return Err(FnError::NonFinite);
                }
            }
            RealFn::AbsPow { scale, exponent, offset } => {
                if !all_finite(&[*scale, *exponent, *offset]) {
                    return Err(FnError::NonFinite);
                }
                if *exponent < 0.0 {
                    return Err(FnError::BadExponent(*exponent));
                }
            }
            RealFn::Step { at, below, from } => {
                if !all_finite(&[*at, *below, *from]) {
                    return Err(FnError::NonFinite);
                }
            }
            RealFn::Band { lo, hi, inside, outside } => {
                if !all_finite(&[*lo, *hi, *inside, *outside]) {
                    return Err(FnError::NonFinite);
                }
            }
            RealFn::Table { xs, ys } => {
                if xs.len() < 2 || xs.len() != ys.len() {
                    return Err(FnError::TableTooShort(xs.len().min(ys.len())));
                }
                if !all_finite(xs) || !all_finite(ys) {
                    return Err(FnError::NonFinite);
                }
                for i in 1..xs.len() {
                    if !(xs[i] > xs[i - 1]) {
                        return Err(FnError::TableNotIncreasing(i));
                    }
                }
            }
            RealFn::Cosine { amplitude, angular_frequency, phase, offset } => {
                if !all_finite(&[*amplitude, *angular_frequency, *phase, *offset]) {
                    return Err(FnError::NonFinite);
                }
            }
            RealFn::OnePlusAbsSinInv => {}
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RealFn::Const { value } => *value,
            RealFn::Linear { slope, intercept } => slope * x + intercept,
            RealFn::Poly { coeffs } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
            RealFn::AbsPow { scale, exponent, offset } => {
                let m = x.abs();
                // 0^0 = 1 by convention so exponent 0 means a constant.
                let p = if *exponent == 0.0 { 1.0 } else { m.powf(*exponent) };
                scale * p + offset
            }
            RealFn::Step { at, below, from } => {
                if x >= *at {
                    *from
                } else {
                    *below
                }
            }
            RealFn::Band { lo, hi, inside, outside } => {
                if x >= *lo && x < *hi {
                    *inside
                } else {
                    *outside
                }
            }
            RealFn::Table { xs, ys } => {
                let n = xs.len();
                if x <= xs[0] {
                    return ys[0];
                }
                if x >= xs[n - 1] {
                    return ys[n - 1];
                }
                // first index with xs[i] > x; the segment is [i-1, i]
                let i = xs.partition_point(|&v| v <= x);
                let (x0, x1) = (xs[i - 1], xs[i]);
                let (y0, y1) = (ys[i - 1], ys[i]);
                let w = (x - x0) / (x1 - x0);
                y0 + w * (y1 - y0)
            }
            RealFn::Cosine { amplitude, angular_frequency, phase, offset } => {
                offset + amplitude * (angular_frequency * x + phase).cos()
            }
            RealFn::OnePlusAbsSinInv => {
                if x == 0.0 {
                    1.0
                } else {
                    1.0 + (1.0 / x).sin().abs()
                }
            }
        }
    }

    /// Supremum of |f| over a uniform sample of `[lo, hi]`; used for bound
    /// estimates, never for verdicts on its own.
    pub fn sampled_sup(&self, lo: f64, hi: f64, n: usize) -> f64 {
        let n = n.max(2);
        let mut sup: f64 = 0.0;
        for k in 0..=n {
            let x = lo + (hi - lo) * (k as f64) / (n as f64);
            sup = sup.max(self.eval(x).abs());
        }
        sup
    }
}
