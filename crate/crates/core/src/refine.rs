//! Monotone improvement of the center set.
//!
//! Alternates dual maximization with per-cell center re-estimation. Each new
//! center minimizes its cell's two-leg cost (for the quadratic cost this is
//! the weighted mean of both sides), and a candidate is only accepted when
//! it does not cost more than the old center, so the sequence of solved
//! values never increases beyond solver accuracy. Cells that die (empty on
//! both sides) keep their center frozen; reseeding them is available as an
//! explicitly non-monotone mode.

use crate::cost::{dist2, CenterSet, CostSpec};
use crate::dual::PriceVector;
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Point};
use crate::optimizer::{maximize_dual, SolveOptions};
use crate::partition::{assign, balance, Partition, Side, DEFAULT_ASSIGN_TIE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The center update stopped moving (a fixed point up to tolerance).
    Saturated,
    MaxRounds,
    /// Saturated with at least one cell empty on both sides.
    CellDeath,
}

#[derive(Debug, Clone)]
pub struct RefineOptions {
    pub rounds: usize,
    /// Relative per-round value decrease below which a round counts as
    /// stalled; two consecutive stalled rounds plus a movement stall stop
    /// the loop.
    pub saturation_rel: f64,
    /// Sup-norm center movement below which the update counts as a fixed
    /// point.
    pub movement_tol: f64,
    /// Relocate dead cells onto the heaviest unused atom. Breaks the
    /// monotone-value guarantee.
    pub reseed_dead: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            rounds: 40,
            saturation_rel: 1e-7,
            movement_tol: 1e-9,
            reseed_dead: false,
        }
    }
}

/// Trajectory of one refinement run.
#[derive(Debug, Clone)]
pub struct RefineTrajectory {
    pub center_history: Vec<CenterSet>,
    /// Solved dual value per round; nonincreasing within solver accuracy.
    pub value_history: Vec<f64>,
    pub p_history: Vec<PriceVector>,
    pub stopped_reason: StopReason,
}

const DEAD_MASS: f64 = 1e-15;

/// Per-cell atom lists with effective (split-adjusted) weights from both
/// sides.
fn cell_atoms<'a>(
    part_a: &Partition,
    part_b: &Partition,
    mu: &'a DiscreteMeasure,
    nu: &'a DiscreteMeasure,
    m: usize,
) -> Vec<Vec<(&'a [f64], f64)>> {
    let mut cells: Vec<Vec<(&[f64], f64)>> = vec![Vec::new(); m];
    for (part, measure) in [(part_a, mu), (part_b, nu)] {
        for i in 0..measure.len() {
            for (c, f) in part.atom_fractions(i) {
                if c < m {
                    let w = measure.weight(i) * f;
                    if w > 0.0 {
                        cells[c].push((measure.point(i).coords(), w));
                    }
                }
            }
        }
    }
    cells
}

fn cell_cost(atoms: &[(&[f64], f64)], center: &[f64], spec: &CostSpec) -> f64 {
    atoms
        .iter()
        .map(|&(coords, w)| w * spec.leg_of_dist2(dist2(coords, center)))
        .sum()
}

/// Weighted mean of the cell; the exact minimizer for the quadratic cost.
fn cell_mean(atoms: &[(&[f64], f64)], dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut total = 0.0;
    for &(coords, w) in atoms {
        for (s, c) in sum.iter_mut().zip(coords) {
            *s += w * c;
        }
        total += w;
    }
    sum.iter_mut().for_each(|s| *s /= total);
    sum
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Convex cell cost minimized coordinate-by-coordinate for general
/// exponents, to tolerance 1e-8.
fn minimize_cell_cost(atoms: &[(&[f64], f64)], dim: usize, init: Vec<f64>, spec: &CostSpec) -> Vec<f64> {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &(coords, _) in atoms {
        for k in 0..dim {
            lo[k] = lo[k].min(coords[k]);
            hi[k] = hi[k].max(coords[k]);
        }
    }
    let mut x = init;
    for _ in 0..60 {
        let mut moved = 0.0f64;
        for k in 0..dim {
            if hi[k] - lo[k] <= 1e-14 {
                continue;
            }
            let xk = golden_section(
                |t| {
                    let mut probe = x.clone();
                    probe[k] = t;
                    cell_cost(atoms, &probe, spec)
                },
                lo[k],
                hi[k],
                1e-8,
            );
            moved = moved.max((x[k] - xk).abs());
            x[k] = xk;
        }
        if moved < 1e-10 {
            break;
        }
    }
    x
}

/// Re-estimates every center from the balanced partitions. A candidate is
/// kept only if it does not increase its cell's cost over the old center;
/// dead cells keep their center.
#[allow(clippy::needless_range_loop)] // cells and centers are indexed in parallel
pub fn update_centers(
    part_a: &Partition,
    part_b: &Partition,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec: &CostSpec,
) -> Result<CenterSet> {
    let m = z.m();
    if part_a.m() != m || part_b.m() != m {
        return Err(Error::Dimension(format!(
            "partitions with {}/{} cells against {} centers",
            part_a.m(),
            part_b.m(),
            m
        )));
    }
    let dim = z.dim();
    let cells = cell_atoms(part_a, part_b, mu, nu, m);

    let mut new_centers: Vec<Point> = Vec::with_capacity(m);
    for j in 0..m {
        let old = z.center(j).coords();
        if cells[j].is_empty() {
            new_centers.push(Point(old.to_vec()));
            continue;
        }
        let mean = cell_mean(&cells[j], dim);
        let candidate = if spec.sigma == 2.0 {
            mean
        } else {
            minimize_cell_cost(&cells[j], dim, mean, spec)
        };
        let chosen = if cell_cost(&cells[j], &candidate, spec) < cell_cost(&cells[j], old, spec) {
            candidate
        } else {
            old.to_vec()
        };
        new_centers.push(Point(chosen));
    }

    // Exact collisions (symmetric data) fall back to the old center, then
    // to the next representable value, so the set stays valid.
    for j in 0..m {
        let collides = |cand: &Point, upto: usize, list: &[Point]| -> bool {
            list[..upto].iter().any(|c| c == cand)
        };
        if collides(&new_centers[j], j, &new_centers) {
            let old = Point(z.center(j).coords().to_vec());
            if !collides(&old, j, &new_centers) {
                new_centers[j] = old;
            } else {
                let mut bumped = new_centers[j].clone();
                while collides(&bumped, j, &new_centers) {
                    bumped.0[0] = bumped.0[0].next_up();
                }
                new_centers[j] = bumped;
            }
        }
    }

    CenterSet::new(dim, new_centers)
}

/// Alternates warm-started dual solves with center updates until the
/// update stops moving, the round budget runs out, or (rarely) the value
/// stalls for many rounds without a movement stall.
pub fn refine_loop(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z0: &CenterSet,
    spec: &CostSpec,
    opts: &RefineOptions,
    solve: &SolveOptions,
) -> Result<RefineTrajectory> {
    if opts.rounds < 1 {
        return Err(Error::Validation("refine needs at least one round".into()));
    }
    let mut centers = z0.clone();
    let mut warm = solve.warm_start.clone();
    let mut center_history = Vec::new();
    let mut value_history: Vec<f64> = Vec::new();
    let mut p_history = Vec::new();
    let mut stall_count = 0usize;
    let mut stopped_reason = StopReason::MaxRounds;

    for round in 0..opts.rounds {
        let mut so = solve.clone();
        so.warm_start = warm.clone();
        let report = maximize_dual(mu, nu, &centers, spec, &so)?;

        center_history.push(centers.clone());
        value_history.push(report.value);
        p_history.push(report.p_star.clone());
        warm = Some(report.p_star.clone());

        let pa = assign(&report.p_star, mu, &centers, spec, Side::Source, DEFAULT_ASSIGN_TIE_TOL)?;
        let pb = assign(&report.p_star, nu, &centers, spec, Side::Target, DEFAULT_ASSIGN_TIE_TOL)?;
        let (pa, pb, _) = balance(pa, pb, mu, nu)?;
        let dead: Vec<usize> = (0..centers.m())
            .filter(|&j| pa.cell_masses[j] <= DEAD_MASS && pb.cell_masses[j] <= DEAD_MASS)
            .collect();

        let mut next = update_centers(&pa, &pb, mu, nu, &centers, spec)?;
        if opts.reseed_dead && !dead.is_empty() {
            next = reseed(&next, &dead, mu, nu)?;
        }

        let movement = centers
            .centers()
            .iter()
            .zip(next.centers())
            .map(|(a, b)| {
                a.coords()
                    .iter()
                    .zip(b.coords())
                    .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
            })
            .fold(0.0f64, f64::max);

        if movement <= opts.movement_tol {
            stopped_reason = if dead.is_empty() { StopReason::Saturated } else { StopReason::CellDeath };
            break;
        }

        if round >= 1 {
            let prev = value_history[round - 1];
            let decrease = prev - report.value;
            if decrease < opts.saturation_rel * prev.abs().max(1.0) {
                stall_count += 1;
            } else {
                stall_count = 0;
            }
            // Anti-cycling: a long value stall without a movement stall
            // only happens on degenerate symmetric data.
            if stall_count >= 25 {
                stopped_reason = if dead.is_empty() { StopReason::Saturated } else { StopReason::CellDeath };
                break;
            }
        }

        centers = next;
    }

    Ok(RefineTrajectory { center_history, value_history, p_history, stopped_reason })
}

/// Moves each dead cell onto the heaviest atom that is not already a
/// center. Deterministic: heavier wins, source side then atom order break
/// ties.
fn reseed(z: &CenterSet, dead: &[usize], mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<CenterSet> {
    let mut centers: Vec<Point> = z.centers().to_vec();
    for &j in dead {
        let mut best: Option<(f64, &Point)> = None;
        for measure in [mu, nu] {
            for (p, &w) in measure.points().iter().zip(measure.weights()) {
                if centers.iter().any(|c| c == p) {
                    continue;
                }
                if best.is_none_or(|(bw, _)| w > bw) {
                    best = Some((w, p));
                }
            }
        }
        if let Some((_, p)) = best {
            centers[j] = p.clone();
        }
    }
    CenterSet::new(z.dim(), centers)
}
