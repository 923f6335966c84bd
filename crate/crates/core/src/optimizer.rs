//! Maximization of the concave, piecewise-linear dual over the sum-zero
//! hyperplane.
//!
//! The engine is projected supergradient ascent. Because the objective is
//! piecewise linear, its maximum generically sits at a kink where the
//! selected supergradient never vanishes, so two refinements are layered on
//! the textbook diminishing schedule:
//!
//! * running-best tracking with restart-from-best: whenever a round of
//!   steps stops improving the best value, the base step is halved and the
//!   iterate is reset to the best point, giving geometric late-stage
//!   convergence instead of the `1/sqrt(k)` crawl;
//! * a tie-aware stopping test: at a kink the whole superdifferential is
//!   spanned by fractional splits of tied atoms, so the mass imbalance left
//!   after [`crate::partition::balance`] is the sup-norm of an achievable
//!   supergradient. When it drops below `grad_tol` the point is declared
//!   optimal. The split tolerance is kept at 1e-9, which can overstate
//!   optimality by at most that much in value.
//!
//! Cells empty on both sides have zero supergradient components and simply
//! stay frozen; they are not errors.

use crate::cost::{CenterSet, CostSpec, dist2};
use crate::dual::{DualEval, PriceVector, Workspace};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::partition::{assign, balance, Side};

/// Step-size schedule for the ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// Constant step `eta`.
    Fixed { eta: f64 },
    /// `eta0 / sqrt(k)` within a round, with the base halved and the
    /// iterate reset to the running best whenever a round plateaus.
    Diminishing { eta0: f64 },
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Convergence threshold on the sup-norm of the (balanced)
    /// supergradient, i.e. the largest per-cell mass imbalance.
    pub grad_tol: f64,
    pub step: StepPolicy,
    /// Evaluate the average iterate of each round as well. Averaged
    /// iterates track kink ridges that raw steps zigzag across, so this is
    /// on by default.
    pub averaging: bool,
    pub warm_start: Option<PriceVector>,
}

impl SolveOptions {
    /// Data-driven defaults: `grad_tol` at half the smallest atom weight
    /// (the finest meaningful imbalance) and the base step set to the leg
    /// cost spread, so stepping is scale-free.
    pub fn for_instance(
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        z: &CenterSet,
        spec: &CostSpec,
    ) -> SolveOptions {
        let grad_tol = 0.5 * mu.min_weight().min(nu.min_weight());
        let eta0 = leg_cost_spread(mu, nu, z, spec).max(1e-12);
        SolveOptions {
            max_iters: 50_000,
            grad_tol,
            step: StepPolicy::Diminishing { eta0 },
            averaging: true,
            warm_start: None,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Validation("max_iters must be at least 1".into()));
        }
        if !self.grad_tol.is_finite() || self.grad_tol <= 0.0 {
            return Err(Error::Validation(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        let eta = match self.step {
            StepPolicy::Fixed { eta } => eta,
            StepPolicy::Diminishing { eta0 } => eta0,
        };
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::Validation(format!("step size must be positive, got {}", eta)));
        }
        if let Some(w) = &self.warm_start {
            if w.len() != m {
                return Err(Error::Dimension(format!(
                    "warm start of length {} against {} centers",
                    w.len(),
                    m
                )));
            }
        }
        Ok(())
    }
}

/// Range of leg costs over all (atom, center) pairs on both sides.
pub fn leg_cost_spread(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec: &CostSpec,
) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for measure in [mu, nu] {
        for point in measure.points() {
            for c in z.centers() {
                let v = spec.leg_of_dist2(dist2(point.coords(), c.coords()));
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if hi.is_finite() && lo.is_finite() && hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Outcome of one dual maximization.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub p_star: PriceVector,
    pub value: f64,
    /// Sup-norm of the best supergradient found at `p_star`; when the
    /// tie-aware test fired this is the balanced residual.
    pub grad_sup_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Running best value per evaluation; nondecreasing.
    pub value_history: Vec<f64>,
}

/// Maximizes the dual over the sum-zero hyperplane; every iterate is
/// projected back after stepping.
pub fn maximize_dual(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec: &CostSpec,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let ws = Workspace::standard(mu, nu, z, spec)?;
    ascend(&ws, opts, true)
}

/// Maximizes the hedonic dual. The fixed zero price of the opt-out option
/// breaks shift invariance, so no sum-zero projection is applied.
pub fn maximize_hedonic(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec1: &CostSpec,
    spec2: &CostSpec,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let ws = Workspace::hedonic(mu, nu, z, spec1, spec2)?;
    ascend(&ws, opts, false)
}

const PATIENCE: u32 = 16;
const ROUND_CAP: u64 = 256;
const MAX_HALVINGS: u32 = 45;
const RESIDUAL_TIE_TOL: f64 = 1e-9;

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project_sum_zero(p: &mut [f64]) {
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter_mut().for_each(|v| *v -= mean);
}

/// Per-atom choice sets within a margin window of the minimum; the vertex
/// contribution of cell `j` is `+w e_j` on the first leg and `-w e_j` on
/// the second. `None` encodes the hedonic opt-out (zero contribution).
struct ChoiceSet {
    weight: f64,
    positive: bool,
    cells: Vec<usize>,
    allow_null: bool,
}

fn choice_sets(ws: &Workspace, p: &[f64], window: f64) -> Vec<ChoiceSet> {
    let m = ws.m();
    let mut sets = Vec::with_capacity(ws.mu.len() + ws.nu.len());
    let negated: Vec<f64> = p.iter().map(|v| -v).collect();
    for (measure, spec, signed, positive) in [
        (ws.mu, &ws.spec1, p, true),
        (ws.nu, &ws.spec2, negated.as_slice(), false),
    ] {
        for (point, &w) in measure.points().iter().zip(measure.weights()) {
            let mut values = Vec::with_capacity(m);
            let mut best = f64::INFINITY;
            for (j, c) in ws.z.centers().iter().enumerate() {
                let v = spec.leg_of_dist2(dist2(point.coords(), c.coords())) + signed[j];
                values.push(v);
                best = best.min(v);
            }
            if ws.hedonic && best > window {
                continue; // firmly opted out; contributes nothing
            }
            let cells: Vec<usize> = (0..m).filter(|&j| values[j] - best <= window).collect();
            let allow_null = ws.hedonic && best >= -window;
            sets.push(ChoiceSet { weight: w, positive, cells, allow_null });
        }
    }
    sets
}

/// Euclidean projection of `t` onto the probability simplex.
fn project_simplex(t: &[f64]) -> Vec<f64> {
    let mut sorted = t.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let cand = (acc - 1.0) / (k + 1) as f64;
        if v - cand > 0.0 {
            theta = cand;
        }
    }
    t.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Approximate minimal-norm element of the window-relaxed
/// superdifferential at `p`: block-coordinate descent over the product of
/// per-atom simplices, each block solved exactly by simplex projection.
/// A nonzero result is an ascent direction; the raw smallest-index
/// selection can circulate around non-optimal kinks, this cannot.
fn min_norm_supergradient(ws: &Workspace, p: &[f64], window: f64) -> Vec<f64> {
    let m = ws.m();
    let sets = choice_sets(ws, p, window);
    // Fractions per atom over its tied cells (plus an opt-out slot), all
    // mass initially on the usual selection.
    let mut fractions: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| {
            let mut f = vec![0.0; s.cells.len() + 1];
            f[0] = 1.0;
            f
        })
        .collect();
    let mut g = vec![0.0; m];
    for s in &sets {
        g[s.cells[0]] += if s.positive { s.weight } else { -s.weight };
    }

    for _ in 0..60 {
        let mut shifted = 0.0f64;
        for (s, f) in sets.iter().zip(fractions.iter_mut()) {
            let sw = if s.positive { s.weight } else { -s.weight };
            // Remove the atom's contribution, re-optimize its block.
            for (&j, &fj) in s.cells.iter().zip(f.iter()) {
                g[j] -= sw * fj;
            }
            // Minimizing |g + sw * lambda|^2 over the block is the
            // projection of -g[T]/sw onto the simplex; the opt-out slot
            // costs nothing, so with it the feasible set is sum <= 1.
            let mut target = Vec::with_capacity(s.cells.len());
            for &j in &s.cells {
                target.push(-g[j] / sw);
            }
            let new_f = if s.allow_null {
                let clipped: Vec<f64> = target.iter().map(|&v| v.max(0.0)).collect();
                let total: f64 = clipped.iter().sum();
                let mut nf = if total <= 1.0 { clipped } else { project_simplex(&target) };
                nf.push(1.0 - nf.iter().sum::<f64>());
                nf
            } else {
                let mut nf = project_simplex(&target);
                nf.push(0.0);
                nf
            };
            for (old, new) in f.iter().zip(&new_f) {
                shifted = shifted.max((old - new).abs());
            }
            *f = new_f;
            for (&j, &fj) in s.cells.iter().zip(f.iter()) {
                g[j] += sw * fj;
            }
        }
        if shifted <= 1e-14 {
            break;
        }
    }
    g
}

/// Sup-norm of the balanced supergradient at `p`: extract both cell
/// systems treating near-ties as splittable and let the greedy relay
/// cancel what it can.
fn balanced_residual(ws: &Workspace, p: &[f64]) -> Result<f64> {
    let pv = PriceVector::from(p.to_vec());
    let (sa, sb) = if ws.hedonic {
        (Side::HedonicSource, Side::HedonicTarget)
    } else {
        (Side::Source, Side::Target)
    };
    let pa = assign(&pv, ws.mu, ws.z, &ws.spec1, sa, RESIDUAL_TIE_TOL)?;
    let pb = assign(&pv, ws.nu, ws.z, &ws.spec2, sb, RESIDUAL_TIE_TOL)?;
    let (_, _, residual) = balance(pa, pb, ws.mu, ws.nu)?;
    Ok(residual)
}

fn ascend(ws: &Workspace, opts: &SolveOptions, project: bool) -> Result<SolveReport> {
    let m = ws.m();
    opts.validate(m)?;

    let mut p: Vec<f64> = match &opts.warm_start {
        Some(w) => w.values().to_vec(),
        None => vec![0.0; m],
    };
    if project {
        project_sum_zero(&mut p);
    }

    let mut eval = ws.eval(&p);
    check_finite(&eval)?;
    let mut iterations = 1usize;
    let mut best_p = p.clone();
    let mut best = eval.clone();
    let mut history = vec![best.value];

    let finish = |p_star: Vec<f64>,
                  value: f64,
                  grad: f64,
                  iterations: usize,
                  converged: bool,
                  history: Vec<f64>| SolveReport {
        p_star: PriceVector::from(p_star),
        value,
        grad_sup_norm: grad,
        iterations,
        converged,
        value_history: history,
    };

    // The start may already be optimal, e.g. a warm restart.
    let g0 = sup_norm(&best.supergradient);
    if g0 <= opts.grad_tol {
        return Ok(finish(best_p, best.value, g0, iterations, true, history));
    }
    if best.tie_count > 0 || best.min_margin <= RESIDUAL_TIE_TOL {
        let r = balanced_residual(ws, &best_p)?;
        if r <= opts.grad_tol {
            return Ok(finish(best_p, best.value, r, iterations, true, history));
        }
    }

    let mut halvings: u32 = 0;
    let mut rounds_on_rung: u32 = 0;
    let mut k_round: u64 = 0;
    let mut since_improve: u32 = 0;
    let mut avg_sum = p.clone();
    let mut avg_n: f64 = 1.0;

    while iterations < opts.max_iters {
        k_round += 1;
        let step = match opts.step {
            StepPolicy::Fixed { eta } => eta,
            StepPolicy::Diminishing { eta0 } => {
                eta0 * 0.5f64.powi(halvings as i32) / (k_round as f64).sqrt()
            }
        };
        for (pj, gj) in p.iter_mut().zip(&eval.supergradient) {
            *pj += step * gj;
        }
        if project {
            project_sum_zero(&mut p);
        }
        eval = ws.eval(&p);
        check_finite(&eval)?;
        iterations += 1;

        if opts.averaging {
            for (s, v) in avg_sum.iter_mut().zip(&p) {
                *s += v;
            }
            avg_n += 1.0;
        }

        if eval.value > best.value {
            best = eval.clone();
            best_p = p.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
        }
        history.push(best.value);

        let g = sup_norm(&eval.supergradient);
        if g <= opts.grad_tol {
            return Ok(finish(p, eval.value, g, iterations, true, history));
        }

        // A round also ends on a hop budget: steady micro-improvements
        // from zigzag hops must not starve the probes and checks below.
        if since_improve >= PATIENCE || k_round >= ROUND_CAP {
            let before_round_best = best.value;
            if opts.averaging && iterations < opts.max_iters {
                let mut avg: Vec<f64> = avg_sum.iter().map(|s| s / avg_n).collect();
                if project {
                    project_sum_zero(&mut avg);
                }
                let avg_eval = ws.eval(&avg);
                check_finite(&avg_eval)?;
                iterations += 1;
                if avg_eval.value > best.value {
                    best = avg_eval;
                    best_p = avg;
                }
                history.push(best.value);
            }

            // Escape cycles: the raw selection can circulate around a
            // non-optimal kink forever, so climb along the minimal-norm
            // supergradient over a ladder of margin windows, each probed
            // with expanding line searches until that stops paying.
            let base_step = match opts.step {
                StepPolicy::Fixed { eta } => eta,
                StepPolicy::Diminishing { eta0 } => eta0 * 0.5f64.powi(halvings as i32),
            };
            'windows: for shrink in [1.0, 1e-2, 1e-4, 1e-6] {
                let window = (4.0 * base_step * shrink).max(RESIDUAL_TIE_TOL);
                let mut window_gain = false;
                'cycles: for _ in 0..12 {
                    if iterations >= opts.max_iters {
                        break 'windows;
                    }
                    let mut dir = min_norm_supergradient(ws, &best_p, window);
                    if project {
                        project_sum_zero(&mut dir);
                    }
                    let dnorm = norm2(&dir);
                    if dnorm <= opts.grad_tol {
                        break;
                    }
                    let unit: Vec<f64> = dir.iter().map(|d| d / dnorm).collect();
                    // Along a concave ray, once a value falls below the
                    // running maximum every larger step is worse, so the
                    // doubling expansion is safe to run until it declines.
                    let cycle_before = best.value;
                    let mut ray_max = best.value;
                    for i in 0..90 {
                        if iterations >= opts.max_iters {
                            break 'windows;
                        }
                        let t = window * 0.25 * 2f64.powi(i);
                        let mut probe: Vec<f64> =
                            best_p.iter().zip(&unit).map(|(a, d)| a + t * d).collect();
                        if project {
                            project_sum_zero(&mut probe);
                        }
                        let probe_eval = ws.eval(&probe);
                        check_finite(&probe_eval)?;
                        iterations += 1;
                        let v = probe_eval.value;
                        if v > best.value {
                            best = probe_eval;
                            best_p = probe;
                        }
                        history.push(best.value);
                        if v > ray_max {
                            ray_max = v;
                        } else {
                            break;
                        }
                    }
                    if best.value <= cycle_before {
                        break 'cycles;
                    }
                    window_gain = true;
                }
                if window_gain {
                    break;
                }
            }

            let r = balanced_residual(ws, &best_p)?;
            if r <= opts.grad_tol {
                return Ok(finish(best_p, best.value, r, iterations, true, history));
            }

            // Collapse the step when the whole round, probes included,
            // went nowhere beyond numerical dust; never sit on one rung
            // forever even while gaining.
            let improved =
                best.value > before_round_best + 1e-13 * (1.0 + before_round_best.abs());
            rounds_on_rung += 1;
            if (!improved || rounds_on_rung >= 8)
                && matches!(opts.step, StepPolicy::Diminishing { .. })
            {
                halvings += 1;
                rounds_on_rung = 0;
                if halvings > MAX_HALVINGS {
                    break;
                }
            }
            k_round = 0;
            since_improve = 0;
            p = best_p.clone();
            eval = best.clone();
            avg_sum = p.clone();
            avg_n = 1.0;
        }
    }

    let r = balanced_residual(ws, &best_p)?;
    let grad = r.min(sup_norm(&best.supergradient));
    let converged = grad <= opts.grad_tol;
    let value = best.value;
    Ok(finish(best_p, value, grad, iterations, converged, history))
}

fn check_finite(eval: &DualEval) -> Result<()> {
    if !eval.value.is_finite() {
        return Err(Error::NonFinite(format!(
            "dual objective evaluated to {}; input data is corrupt",
            eval.value
        )));
    }
    Ok(())
}
