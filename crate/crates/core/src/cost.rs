//! Two-leg power costs and the center-constrained (semi-discrete) cost.
//!
//! The ground cost is `|x - y|^sigma`. Routing through a center set `Z`
//! replaces it by `min_z c1(x,z) + c2(z,y)` with leg costs
//! `scale * |.|^sigma`; at the default `scale = 2^(sigma-1)` the relay
//! through the midpoint reproduces the ground cost exactly, so the
//! semi-discrete cost always dominates it and converges to it as centers
//! fill in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::Point;

/// Power-cost parameters for one leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Exponent of the power cost, `>= 1`.
    pub sigma: f64,
    /// Leg coefficient, `> 0`. [`CostSpec::auto`] picks `2^(sigma-1)`.
    pub scale: f64,
}

impl CostSpec {
    pub fn new(sigma: f64, scale: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 1.0 {
            return Err(Error::Validation(format!("sigma must be >= 1, got {}", sigma)));
        }
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Validation(format!("scale must be positive, got {}", scale)));
        }
        Ok(CostSpec { sigma, scale })
    }

    /// The scale that makes the two legs interpolate the ground cost.
    pub fn auto(sigma: f64) -> Result<Self> {
        CostSpec::new(sigma, (sigma - 1.0).exp2())
    }

    /// `d2^(sigma/2)`, i.e. `|w|^sigma` from a squared norm. The quadratic
    /// and Euclidean cases skip `powf`.
    #[inline]
    pub(crate) fn power_of_dist2(&self, d2: f64) -> f64 {
        if self.sigma == 2.0 {
            d2
        } else if self.sigma == 1.0 {
            d2.sqrt()
        } else {
            d2.powf(self.sigma * 0.5)
        }
    }

    #[inline]
    pub(crate) fn leg_of_dist2(&self, d2: f64) -> f64 {
        self.scale * self.power_of_dist2(d2)
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Which leg of the relay a cost belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    /// Source to center, `c1(x, z)`.
    Source,
    /// Center to target, `c2(z, y)`.
    Target,
}

fn check_dims(a: &Point, b: &Point) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "points of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Source-leg cost `scale * |x - z|^sigma`.
pub fn leg1_cost(x: &Point, z: &Point, spec: &CostSpec) -> Result<f64> {
    check_dims(x, z)?;
    Ok(spec.leg_of_dist2(dist2(x.coords(), z.coords())))
}

/// Target-leg cost `scale * |z - y|^sigma`.
pub fn leg2_cost(z: &Point, y: &Point, spec: &CostSpec) -> Result<f64> {
    check_dims(z, y)?;
    Ok(spec.leg_of_dist2(dist2(z.coords(), y.coords())))
}

/// The exact ground cost `|x - y|^sigma` (no leg coefficient).
pub fn ground_cost(x: &Point, y: &Point, spec: &CostSpec) -> Result<f64> {
    check_dims(x, y)?;
    Ok(spec.power_of_dist2(dist2(x.coords(), y.coords())))
}

/// The `m` points mass is routed through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    dim: usize,
    centers: Vec<Point>,
}

impl CenterSet {
    /// Validates: nonempty, consistent finite coordinates, pairwise
    /// distinct centers.
    pub fn new(dim: usize, centers: Vec<Point>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be at least 1".into()));
        }
        if centers.is_empty() {
            return Err(Error::Validation("center set is empty".into()));
        }
        for (i, c) in centers.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::Dimension(format!(
                    "center {} has dimension {}, expected {}",
                    i,
                    c.dim(),
                    dim
                )));
            }
            if c.coords().iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("center {} has non-finite coordinate", i)));
            }
        }
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                if centers[i] == centers[j] {
                    return Err(Error::Validation(format!("centers {} and {} coincide", i, j)));
                }
            }
        }
        Ok(CenterSet { dim, centers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of centers.
    pub fn m(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn center(&self, j: usize) -> &Point {
        &self.centers[j]
    }
}

/// Cheapest relay through the center set: returns
/// `min_z c1(x,z) + c2(z,y)` and the achieving index (smallest on ties).
pub fn semidiscrete_cost(x: &Point, y: &Point, z: &CenterSet, spec: &CostSpec) -> Result<(f64, usize)> {
    if x.dim() != z.dim() || y.dim() != z.dim() {
        return Err(Error::Dimension(format!(
            "points of dimension {}/{} against centers of dimension {}",
            x.dim(),
            y.dim(),
            z.dim()
        )));
    }
    let mut best = f64::INFINITY;
    let mut best_j = 0;
    for (j, c) in z.centers().iter().enumerate() {
        let v = spec.leg_of_dist2(dist2(x.coords(), c.coords()))
            + spec.leg_of_dist2(dist2(c.coords(), y.coords()));
        if v < best {
            best = v;
            best_j = j;
        }
    }
    Ok((best, best_j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(coords: &[f64]) -> Point {
        Point(coords.to_vec())
    }

    fn centers(dim: usize, cs: &[&[f64]]) -> CenterSet {
        CenterSet::new(dim, cs.iter().map(|c| pt(c)).collect()).unwrap()
    }

    #[test]
    fn leg_cost_values() {
        let spec = CostSpec::new(2.0, 2.0).unwrap();
        assert_eq!(leg1_cost(&pt(&[0.0]), &pt(&[1.0]), &spec).unwrap(), 2.0);
        assert_eq!(leg1_cost(&pt(&[0.5]), &pt(&[0.5]), &spec).unwrap(), 0.0);
        let spec1 = CostSpec::new(1.0, 1.0).unwrap();
        assert_eq!(leg1_cost(&pt(&[0.0, 0.0]), &pt(&[3.0, 4.0]), &spec1).unwrap(), 5.0);
        // The two legs are the same power cost.
        assert_eq!(
            leg2_cost(&pt(&[1.0]), &pt(&[0.0]), &spec).unwrap(),
            leg1_cost(&pt(&[0.0]), &pt(&[1.0]), &spec).unwrap()
        );
    }

    #[test]
    fn leg_cost_dimension_error() {
        let spec = CostSpec::auto(2.0).unwrap();
        assert_eq!(
            leg1_cost(&pt(&[0.0]), &pt(&[0.0, 0.0]), &spec).unwrap_err().kind(),
            "DimensionError"
        );
    }

    #[test]
    fn spec_validation() {
        assert!(CostSpec::new(0.5, 1.0).is_err());
        assert!(CostSpec::new(2.0, 0.0).is_err());
        assert_eq!(CostSpec::auto(2.0).unwrap().scale, 2.0);
        assert_eq!(CostSpec::auto(1.0).unwrap().scale, 1.0);
        assert_eq!(CostSpec::auto(3.0).unwrap().scale, 4.0);
    }

    #[test]
    fn semidiscrete_midpoint_center_is_exact() {
        let spec = CostSpec::new(2.0, 2.0).unwrap();
        let z = centers(1, &[&[1.0]]);
        let (v, j) = semidiscrete_cost(&pt(&[0.0]), &pt(&[2.0]), &z, &spec).unwrap();
        assert_eq!((v, j), (4.0, 0));
    }

    #[test]
    fn semidiscrete_off_midpoint_dominates() {
        let spec = CostSpec::new(2.0, 2.0).unwrap();
        let z = centers(1, &[&[0.0]]);
        let (v, j) = semidiscrete_cost(&pt(&[0.0]), &pt(&[2.0]), &z, &spec).unwrap();
        assert_eq!((v, j), (8.0, 0));
    }

    #[test]
    fn semidiscrete_picks_cheapest_center() {
        let spec = CostSpec::new(2.0, 2.0).unwrap();
        let z = centers(1, &[&[0.0], &[1.0]]);
        // Enumerating both: via 0 costs 8, via 1 costs 4.
        let (v, j) = semidiscrete_cost(&pt(&[0.0]), &pt(&[2.0]), &z, &spec).unwrap();
        assert_eq!((v, j), (4.0, 1));
    }

    #[test]
    fn ground_cost_values() {
        let spec = CostSpec::auto(2.0).unwrap();
        assert_eq!(ground_cost(&pt(&[0.0]), &pt(&[2.0]), &spec).unwrap(), 4.0);
        assert_eq!(ground_cost(&pt(&[0.7]), &pt(&[0.7]), &spec).unwrap(), 0.0);
        let spec1 = CostSpec::auto(1.0).unwrap();
        let v = ground_cost(&pt(&[0.0, 0.0]), &pt(&[1.0, 1.0]), &spec1).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn center_set_rejects_duplicates() {
        let err = CenterSet::new(1, vec![pt(&[0.5]), pt(&[0.5])]).unwrap_err();
        assert_eq!(err.kind(), "ValidationError");
    }

    #[test]
    fn ties_break_to_smallest_index() {
        let spec = CostSpec::new(2.0, 2.0).unwrap();
        // Both centers are symmetric relays for this pair.
        let z = centers(1, &[&[0.5], &[1.5]]);
        let (_, j) = semidiscrete_cost(&pt(&[0.0]), &pt(&[2.0]), &z, &spec).unwrap();
        assert_eq!(j, 0);
    }

    proptest! {
        /// Dominance: the relay cost never goes below the ground cost at the
        /// interpolating scale, and adding a center never increases it.
        #[test]
        fn dominance_and_center_monotonicity(
            x in prop::collection::vec(-2.0f64..2.0, 2),
            y in prop::collection::vec(-2.0f64..2.0, 2),
            zs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..5),
            extra in prop::collection::vec(-2.0f64..2.0, 2),
            sigma in prop::sample::select(vec![1.0f64, 2.0]),
        ) {
            let spec = CostSpec::auto(sigma).unwrap();
            let x = Point(x);
            let y = Point(y);
            let mut pts: Vec<Point> = zs.into_iter().map(Point).collect();
            pts.dedup();
            let z = CenterSet::new(2, pts.clone()).unwrap();
            let (sd, _) = semidiscrete_cost(&x, &y, &z, &spec).unwrap();
            let g = ground_cost(&x, &y, &spec).unwrap();
            prop_assert!(sd >= g - 1e-12);

            // Symmetry of the relay in (x, y) when the legs share a spec.
            let (sd_rev, _) = semidiscrete_cost(&y, &x, &z, &spec).unwrap();
            prop_assert!((sd - sd_rev).abs() <= 1e-12 * (1.0 + sd.abs()));

            let extra = Point(extra);
            if !pts.contains(&extra) {
                pts.push(extra);
                let z_bigger = CenterSet::new(2, pts).unwrap();
                let (sd2, _) = semidiscrete_cost(&x, &y, &z_bigger, &spec).unwrap();
                prop_assert!(sd2 <= sd + 1e-12);
            }
        }

        /// With the midpoint available and sigma > 1 the relay is exact.
        #[test]
        fn midpoint_attains_ground(
            x in prop::collection::vec(-2.0f64..2.0, 2),
            y in prop::collection::vec(-2.0f64..2.0, 2),
            decoy in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let spec = CostSpec::auto(2.0).unwrap();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let x = Point(x);
            let y = Point(y);
            let mut pts = vec![Point(mid), Point(decoy)];
            pts.dedup();
            let z = CenterSet::new(2, pts).unwrap();
            let (sd, _) = semidiscrete_cost(&x, &y, &z, &spec).unwrap();
            let g = ground_cost(&x, &y, &spec).unwrap();
            prop_assert!((sd - g).abs() <= 1e-12 * (1.0 + g.abs()));
        }
    }
}
