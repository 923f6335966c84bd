//! The concave dual of the center-constrained transport problem.
//!
//! For atomic measures the dual value at a price vector `p` is
//!
//! ```text
//! value(p) = sum_i s_i min_j [c1(x_i, z_j) + p_j]
//!          + sum_i t_i min_j [c2(z_j, y_i) - p_j]
//! ```
//!
//! a weighted sum of minima of affine functions, hence piecewise linear and
//! concave. One supergradient is the vector of per-cell mass imbalances
//! `mu(A_j(p)) - nu(B_j(-p))`: each atom's chosen affine piece dominates its
//! min everywhere and touches it at `p`, so the selection is a valid
//! supergradient even at kinks. Kinks occur exactly where some atom's
//! cheapest center is not unique; with atomic measures this is the generic
//! situation at the optimum, so ties are counted and surfaced instead of
//! being hidden.
//!
//! The hedonic variant clamps each per-atom minimum at zero: an atom whose
//! cheapest price-adjusted cost is positive opts out (the implicit null
//! cell) and contributes neither value nor mass.

use crate::cost::{dist2, CenterSet, CostSpec, Leg};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Point};

/// Absolute tolerance below which two price-adjusted costs count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// One price per center. Shifting all prices equally leaves the dual value
/// unchanged; the canonical representative sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector {
    values: Vec<f64>,
}

impl PriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("price vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("price vector has a non-finite entry".into()));
        }
        Ok(PriceVector { values })
    }

    pub fn zeros(m: usize) -> Self {
        PriceVector { values: vec![0.0; m] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The sum-zero representative of the same price class.
    pub fn canonical(&self) -> PriceVector {
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        PriceVector {
            values: self.values.iter().map(|v| v - mean).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl From<Vec<f64>> for PriceVector {
    fn from(values: Vec<f64>) -> Self {
        PriceVector { values }
    }
}

/// Value, supergradient, and cell masses of the dual at one price vector.
#[derive(Debug, Clone)]
pub struct DualEval {
    /// The dual objective.
    pub value: f64,
    /// Per-cell mass imbalance `mu_masses - nu_masses`.
    pub supergradient: Vec<f64>,
    /// Mass of each source cell `A_j(p)`.
    pub mu_masses: Vec<f64>,
    /// Mass of each target cell `B_j(-p)`.
    pub nu_masses: Vec<f64>,
    /// Atoms whose cheapest center is not unique within [`TIE_TOL`].
    pub tie_count: usize,
    /// Smallest runner-up margin over all atoms; infinite for `m = 1`.
    /// A comfortably positive margin certifies the evaluation point is
    /// kink-free, i.e. the dual is differentiable there.
    pub min_margin: f64,
}

/// Cheapest price-adjusted leg cost for one atom:
/// `min_j leg(point, z_j) + p_j` and the achieving index (smallest on ties
/// within [`TIE_TOL`]).
pub fn leg_min(
    p: &PriceVector,
    point: &Point,
    z: &CenterSet,
    leg: Leg,
    spec: &CostSpec,
) -> Result<(f64, usize)> {
    if point.dim() != z.dim() {
        return Err(Error::Dimension(format!(
            "point of dimension {} against centers of dimension {}",
            point.dim(),
            z.dim()
        )));
    }
    if p.len() != z.m() {
        return Err(Error::Dimension(format!(
            "price vector of length {} against {} centers",
            p.len(),
            z.m()
        )));
    }
    let scan = scan_atom(point.coords(), z, spec, p.values(), leg);
    Ok((scan.best, scan.best_j))
}

struct AtomScan {
    best: f64,
    best_j: usize,
    /// Runner-up value minus best; infinite when `m = 1`.
    margin: f64,
}

#[inline]
fn scan_atom(coords: &[f64], z: &CenterSet, spec: &CostSpec, prices: &[f64], leg: Leg) -> AtomScan {
    // c1(x,z) and c2(z,y) agree for power legs; the scan is shared and the
    // leg only matters for callers holding asymmetric specs.
    let _ = leg;
    let mut best = f64::INFINITY;
    let mut best_j = 0;
    let mut second = f64::INFINITY;
    for (j, c) in z.centers().iter().enumerate() {
        let v = spec.leg_of_dist2(dist2(coords, c.coords())) + prices[j];
        if v < best {
            second = best;
            best = v;
            best_j = j;
        } else if v < second {
            second = v;
        }
    }
    AtomScan { best, best_j, margin: second - best }
}

/// Flattened instance data reused across evaluations by the ascent loop.
pub(crate) struct Workspace<'a> {
    pub(crate) mu: &'a DiscreteMeasure,
    pub(crate) nu: &'a DiscreteMeasure,
    pub(crate) z: &'a CenterSet,
    pub(crate) spec1: CostSpec,
    pub(crate) spec2: CostSpec,
    pub(crate) hedonic: bool,
}

impl<'a> Workspace<'a> {
    pub(crate) fn standard(
        mu: &'a DiscreteMeasure,
        nu: &'a DiscreteMeasure,
        z: &'a CenterSet,
        spec: &CostSpec,
    ) -> Result<Self> {
        Workspace::check(mu, nu, z)?;
        Ok(Workspace { mu, nu, z, spec1: *spec, spec2: *spec, hedonic: false })
    }

    pub(crate) fn hedonic(
        mu: &'a DiscreteMeasure,
        nu: &'a DiscreteMeasure,
        z: &'a CenterSet,
        spec1: &CostSpec,
        spec2: &CostSpec,
    ) -> Result<Self> {
        Workspace::check(mu, nu, z)?;
        Ok(Workspace { mu, nu, z, spec1: *spec1, spec2: *spec2, hedonic: true })
    }

    fn check(mu: &DiscreteMeasure, nu: &DiscreteMeasure, z: &CenterSet) -> Result<()> {
        if mu.dim() != z.dim() || nu.dim() != z.dim() {
            return Err(Error::Dimension(format!(
                "measures of dimension {}/{} against centers of dimension {}",
                mu.dim(),
                nu.dim(),
                z.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn m(&self) -> usize {
        self.z.m()
    }

    /// One full evaluation: value, masses, supergradient, tie census.
    pub(crate) fn eval(&self, prices: &[f64]) -> DualEval {
        let m = self.m();
        debug_assert_eq!(prices.len(), m);
        let mut value = 0.0;
        let mut mu_masses = vec![0.0; m];
        let mut nu_masses = vec![0.0; m];
        let mut tie_count = 0;
        let mut min_margin = f64::INFINITY;

        let mut side = |measure: &DiscreteMeasure,
                        spec: &CostSpec,
                        leg: Leg,
                        signed: &[f64],
                        masses: &mut [f64]| {
            let mut sum = 0.0;
            for (point, &w) in measure.points().iter().zip(measure.weights()) {
                let scan = scan_atom(point.coords(), self.z, spec, signed, leg);
                let mut margin = scan.margin;
                if self.hedonic {
                    sum += w * scan.best.min(0.0);
                    // Ties with the opt-out option resolve to the real cell.
                    if scan.best <= TIE_TOL {
                        masses[scan.best_j] += w;
                        margin = margin.min(-scan.best);
                    } else {
                        margin = margin.min(scan.best);
                    }
                } else {
                    sum += w * scan.best;
                    masses[scan.best_j] += w;
                }
                if margin <= TIE_TOL {
                    tie_count += 1;
                }
                min_margin = min_margin.min(margin);
            }
            sum
        };

        value += side(self.mu, &self.spec1, Leg::Source, prices, &mut mu_masses);
        let negated: Vec<f64> = prices.iter().map(|p| -p).collect();
        value += side(self.nu, &self.spec2, Leg::Target, &negated, &mut nu_masses);

        let supergradient: Vec<f64> = mu_masses
            .iter()
            .zip(&nu_masses)
            .map(|(a, b)| a - b)
            .collect();
        DualEval { value, supergradient, mu_masses, nu_masses, tie_count, min_margin }
    }
}

/// Evaluates the dual at `p`: the target side is priced at `-p` internally.
pub fn evaluate(
    p: &PriceVector,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec: &CostSpec,
) -> Result<DualEval> {
    if p.len() != z.m() {
        return Err(Error::Dimension(format!(
            "price vector of length {} against {} centers",
            p.len(),
            z.m()
        )));
    }
    Ok(Workspace::standard(mu, nu, z, spec)?.eval(p.values()))
}

/// Hedonic variant: per-atom minima are clamped at zero (the null
/// commodity) and opted-out atoms carry no cell mass, so the mass vectors
/// sum to at most one. The two legs may use unrelated specs.
pub fn evaluate_hedonic(
    p: &PriceVector,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec1: &CostSpec,
    spec2: &CostSpec,
) -> Result<DualEval> {
    if p.len() != z.m() {
        return Err(Error::Dimension(format!(
            "price vector of length {} against {} centers",
            p.len(),
            z.m()
        )));
    }
    Ok(Workspace::hedonic(mu, nu, z, spec1, spec2)?.eval(p.values()))
}
