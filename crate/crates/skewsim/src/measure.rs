//! Finite signed measures on the line: finitely many atoms plus an absolutely
//! continuous part carried by compact density pieces. This is the measure
//! `nu` acting through the local time of the unknown process; everything the
//! space transform needs (atom products, the continuous cdf, total variation,
//! restriction away from a zero set) lives here.
//!
//! Conventions:
//! * atoms are points with signed weights; the transform requires |weight| < 1
//!   for every atom at or below the evaluation point;
//! * density pieces live on half-open intervals [lo, hi) and add where they
//!   overlap; single points carry no density mass;
//! * total variation is extended-real: a divergence guard maps blowups to
//!   `f64::INFINITY` rather than erroring, because "is it finite" is exactly
//!   the question condition (A2) asks.

use crate::func::RealFn;
use crate::quad::{adaptive_trapezoid, ADAPTIVE_TOL, DIVERGENCE_GUARD};
use crate::report::{ConditionReport, Violation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("atom at {location} duplicated")]
    DuplicateAtom { location: f64 },
    #[error("atom at {location} has non-finite weight")]
    NonFiniteAtom { location: f64 },
    #[error("atom at {location} has |weight| = {weight} >= 1, product factor undefined")]
    AtomWeightTooLarge { location: f64, weight: f64 },
    #[error("density piece [{lo}, {hi}) is not a bounded interval")]
    BadPiece { lo: f64, hi: f64 },
    #[error("invalid density function: {0}")]
    BadDensity(#[from] crate::func::FnError),
    #[error("continuous part diverges beyond the guard near x = {near}")]
    Divergent { near: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Absolutely continuous mass on [lo, hi) with an evaluable density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub density: RealFn,
}

/// Union of closed intervals minus a finite point set. Endpoints may be
/// infinite. Used as the domain argument of total-variation queries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IntervalUnion {
    pub intervals: Vec<(f64, f64)>,
    pub excluded: Vec<f64>,
}

impl IntervalUnion {
    pub fn whole_line() -> Self {
        IntervalUnion { intervals: vec![(f64::NEG_INFINITY, f64::INFINITY)], excluded: vec![] }
    }

    pub fn of(lo: f64, hi: f64) -> Self {
        IntervalUnion { intervals: vec![(lo, hi)], excluded: vec![] }
    }

    pub fn without(mut self, points: &[f64]) -> Self {
        self.excluded.extend_from_slice(points);
        self
    }

    pub fn contains(&self, x: f64) -> bool {
        if self.excluded.iter().any(|&p| p == x) {
            return false;
        }
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }
}

/// Declared zero set of a coefficient: isolated points plus closed intervals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroSet {
    #[serde(default)]
    pub points: Vec<f64>,
    #[serde(default)]
    pub intervals: Vec<(f64, f64)>,
}

impl ZeroSet {
    pub fn empty() -> Self {
        ZeroSet::default()
    }

    pub fn points(points: Vec<f64>) -> Self {
        ZeroSet { points, intervals: vec![] }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.points.iter().any(|&p| p == x)
            || self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    /// The complement as an integration domain: everything outside the
    /// intervals, with the isolated points excluded.
    pub fn complement(&self) -> IntervalUnion {
        let mut ivs: Vec<(f64, f64)> = self.intervals.clone();
        ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in ivs {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        let mut out = Vec::new();
        let mut excluded = self.points.clone();
        let mut cursor = f64::NEG_INFINITY;
        for (lo, hi) in merged {
            if lo > cursor {
                out.push((cursor, lo));
            }
            // the complement is open at interval endpoints
            excluded.extend([lo, hi]);
            cursor = cursor.max(hi);
        }
        out.push((cursor, f64::INFINITY));
        IntervalUnion { intervals: out, excluded }
    }

    /// Distance from `x` to the set (0 when the set contains `x`, infinity
    /// when the set is empty).
    pub fn distance(&self, x: f64) -> f64 {
        let mut d = f64::INFINITY;
        for &p in &self.points {
            d = d.min((x - p).abs());
        }
        for &(lo, hi) in &self.intervals {
            let gap = if x < lo {
                lo - x
            } else if x > hi {
                x - hi
            } else {
                0.0
            };
            d = d.min(gap);
        }
        d
    }

    /// True when every point and interval of `self` lies inside `other`.
    pub fn subset_of(&self, other: &ZeroSet) -> bool {
        let point_ok = self.points.iter().all(|&p| other.contains(p));
        let interval_ok = self.intervals.iter().all(|&(lo, hi)| {
            // interval containment needs a covering interval; points can't
            // cover an interval of positive length
            other.intervals.iter().any(|&(olo, ohi)| olo <= lo && hi <= ohi)
                || (lo == hi && other.contains(lo))
        });
        point_ok && interval_ok
    }
}

/// Finite signed measure: sorted atoms plus density pieces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignedMeasure {
    atoms: Vec<Atom>,
    pieces: Vec<DensityPiece>,
}

impl SignedMeasure {
    pub fn empty() -> Self {
        SignedMeasure::default()
    }

    /// Builds a measure; atoms get sorted by location, zero-weight atoms are
    /// dropped, duplicate locations are rejected.
    pub fn new(atoms: Vec<Atom>, pieces: Vec<DensityPiece>) -> Result<Self, MeasureError> {
        let mut atoms: Vec<Atom> = atoms.into_iter().filter(|a| a.weight != 0.0).collect();
        for a in &atoms {
            if !a.location.is_finite() || !a.weight.is_finite() {
                return Err(MeasureError::NonFiniteAtom { location: a.location });
            }
        }
        atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        for w in atoms.windows(2) {
            if w[0].location == w[1].location {
                return Err(MeasureError::DuplicateAtom { location: w[0].location });
            }
        }
        for p in &pieces {
            if !(p.lo.is_finite() && p.hi.is_finite() && p.lo < p.hi) {
                return Err(MeasureError::BadPiece { lo: p.lo, hi: p.hi });
            }
            p.density.validate()?;
        }
        Ok(SignedMeasure { atoms, pieces })
    }

    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self, MeasureError> {
        SignedMeasure::new(
            atoms.iter().map(|&(location, weight)| Atom { location, weight }).collect(),
            vec![],
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.pieces.is_empty()
    }

    /// Total variation |nu|(set): sum of |atom weights| in the set plus the
    /// integral of |density| over it. Extended-real: `f64::INFINITY` when the
    /// guard trips.
    pub fn tv_on(&self, set: &IntervalUnion) -> f64 {
        let mut total: f64 = self
            .atoms
            .iter()
            .filter(|a| set.contains(a.location))
            .map(|a| a.weight.abs())
            .sum();
        for piece in &self.pieces {
            for &(lo, hi) in &set.intervals {
                let a = piece.lo.max(lo);
                let b = piece.hi.min(hi);
                if a < b {
                    let d = &piece.density;
                    total += adaptive_trapezoid(&|x| d.eval(x).abs(), a, b, ADAPTIVE_TOL);
                }
                if total > DIVERGENCE_GUARD {
                    return f64::INFINITY;
                }
            }
        }
        total
    }

    /// The continuous part's cdf `nu_c((-inf, x])`, signed.
    pub fn continuous_cdf(&self, x: f64) -> Result<f64, MeasureError> {
        let mut total = 0.0;
        for piece in &self.pieces {
            let b = piece.hi.min(x);
            if piece.lo < b {
                let d = &piece.density;
                total += adaptive_trapezoid(&|t| d.eval(t), piece.lo, b, ADAPTIVE_TOL);
            }
            if !total.is_finite() || total.abs() > DIVERGENCE_GUARD {
                return Err(MeasureError::Divergent { near: b });
            }
        }
        Ok(total)
    }

    /// `prod_{y <= x} (1 - nu{y}) / (1 + nu{y})`. Errors when an atom at or
    /// below `x` has |weight| >= 1 (the factor is zero or negative there).
    pub fn atom_product(&self, x: f64) -> Result<f64, MeasureError> {
        self.atom_product_until(x, true)
    }

    /// Left-limit variant: the product over atoms strictly below `x`.
    pub(crate) fn atom_product_left(&self, x: f64) -> Result<f64, MeasureError> {
        self.atom_product_until(x, false)
    }

    fn atom_product_until(&self, x: f64, inclusive: bool) -> Result<f64, MeasureError> {
        let mut prod = 1.0;
        for a in &self.atoms {
            let below = if inclusive { a.location <= x } else { a.location < x };
            if !below {
                break;
            }
            if a.weight.abs() >= 1.0 {
                return Err(MeasureError::AtomWeightTooLarge {
                    location: a.location,
                    weight: a.weight,
                });
            }
            prod *= (1.0 - a.weight) / (1.0 + a.weight);
        }
        Ok(prod)
    }

    /// Restriction of the measure to the complement of `zero_set`: atoms on
    /// the zero set are dropped, density pieces lose the covered intervals.
    /// Piece endpoints keep the closed-left representation, so restricting
    /// twice gives a structurally identical measure.
    pub fn restrict(&self, zero_set: &ZeroSet) -> SignedMeasure {
        let atoms: Vec<Atom> =
            self.atoms.iter().filter(|a| !zero_set.contains(a.location)).copied().collect();
        let mut pieces: Vec<DensityPiece> = Vec::new();
        for piece in &self.pieces {
            let mut fragments = vec![(piece.lo, piece.hi)];
            for &(zlo, zhi) in &zero_set.intervals {
                let mut next = Vec::new();
                for (lo, hi) in fragments {
                    if zhi <= lo || zlo >= hi {
                        next.push((lo, hi));
                        continue;
                    }
                    if lo < zlo {
                        next.push((lo, zlo));
                    }
                    if zhi < hi {
                        // the single point zhi carries no density mass, so the
                        // closed-left representation [zhi, hi) stays canonical
                        next.push((zhi, hi));
                    }
                }
                fragments = next;
            }
            for (lo, hi) in fragments {
                if lo < hi {
                    pieces.push(DensityPiece { lo, hi, density: piece.density.clone() });
                }
            }
        }
        SignedMeasure { atoms, pieces }
    }

    /// Reports the strong admissibility pair and the weakened pair.
    ///
    /// Strong pair: (A1) every atom has |weight| < 1; (A2) |nu|(R) finite.
    /// Weakened pair, recorded literally: the atom bound is demanded only on
    /// the declared zero set, and the total variation off the zero set must
    /// be finite. The simulation pipeline separately requires the restriction
    /// of `nu` to the complement of the zero set to pass the strong pair
    /// before a transform is built, which is what the construction needs.
    pub fn check_conditions(&self, zero_set: &ZeroSet) -> ConditionReport {
        let mut violations = Vec::new();
        for a in &self.atoms {
            if a.weight.abs() >= 1.0 {
                violations.push(Violation {
                    condition: "(A1)".into(),
                    witness: a.location,
                    value: a.weight,
                    detail: format!("atom at {} has |weight| >= 1", a.location),
                });
            }
        }
        let tv_all = self.tv_on(&IntervalUnion::whole_line());
        if !tv_all.is_finite() {
            violations.push(Violation {
                condition: "(A2)".into(),
                witness: 0.0,
                value: DIVERGENCE_GUARD,
                detail: "total variation over the line exceeds the divergence guard".into(),
            });
        }
        for a in &self.atoms {
            if zero_set.contains(a.location) && a.weight.abs() >= 1.0 {
                violations.push(Violation {
                    condition: "(A1w)".into(),
                    witness: a.location,
                    value: a.weight,
                    detail: format!("atom at {} on the zero set has |weight| >= 1", a.location),
                });
            }
        }
        let tv_off = self.tv_on(&zero_set.complement());
        if !tv_off.is_finite() {
            violations.push(Violation {
                condition: "(A2w)".into(),
                witness: 0.0,
                value: DIVERGENCE_GUARD,
                detail: "total variation off the zero set exceeds the divergence guard".into(),
            });
        }
        let strong = violations.iter().all(|v| v.condition != "(A1)" && v.condition != "(A2)");
        let weak = violations.iter().all(|v| v.condition != "(A1w)" && v.condition != "(A2w)");
        let notes = format!(
            "strong pair: {}; weakened pair: {}; |nu|(R) = {:.6}, |nu|(off zero set) = {:.6}",
            if strong { "pass" } else { "fail" },
            if weak { "pass" } else { "fail" },
            tv_all.min(DIVERGENCE_GUARD),
            tv_off.min(DIVERGENCE_GUARD),
        );
        ConditionReport::new(violations, notes)
    }

    /// Strong-pair verdict for the measure actually used by the engine.
    pub fn strong_pair_passes(&self) -> bool {
        let r = self.check_conditions(&ZeroSet::empty());
        r.clause_passes("(A1)") && r.clause_passes("(A2)")
    }
}
