//! Ground-truth discrete transport for small instances, plus gap and
//! decay-rate measurements against it.
//!
//! The exact solver is a hand-rolled successive-shortest-path method with
//! node potentials on the bipartite supply/demand graph: every augmentation
//! follows a true shortest path in the residual network, so the final flow
//! is exactly optimal, and each augmentation exhausts a supply or a demand,
//! bounding the path count by `n1 + n2`. The oracle must be trustworthy and
//! self-contained, so no external LP dependency is used.

use serde::Serialize;

use crate::cost::{CenterSet, CostSpec};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::optimizer::{maximize_dual, SolveOptions};
use crate::refine::{refine_loop, RefineOptions};
use crate::seeding::kmeans_pp_centers;

/// Dense pairwise cost matrix, row-major.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(n_rows: usize, n_cols: usize, mut f: F) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Validation("cost matrix must be nonempty".into()));
        }
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                let v = f(i, j);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("cost entry ({}, {}) is {}", i, j, v)));
                }
                data.push(v);
            }
        }
        Ok(CostMatrix { n_rows, n_cols, data })
    }

    /// Ground-cost matrix `|x_i - y_j|^sigma`.
    pub fn ground(mu: &DiscreteMeasure, nu: &DiscreteMeasure, spec: &CostSpec) -> Result<Self> {
        if mu.dim() != nu.dim() {
            return Err(Error::Dimension(format!(
                "measures of dimension {} and {}",
                mu.dim(),
                nu.dim()
            )));
        }
        CostMatrix::from_fn(mu.len(), nu.len(), |i, j| {
            spec.power_of_dist2(crate::cost::dist2(mu.point(i).coords(), nu.point(j).coords()))
        })
    }

    /// Center-constrained cost matrix `min_z c1(x_i,z) + c2(z,y_j)`.
    pub fn semidiscrete(
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        z: &CenterSet,
        spec: &CostSpec,
    ) -> Result<Self> {
        if mu.dim() != z.dim() || nu.dim() != z.dim() {
            return Err(Error::Dimension("measure and center dimensions differ".into()));
        }
        CostMatrix::from_fn(mu.len(), nu.len(), |i, j| {
            let x = mu.point(i).coords();
            let y = nu.point(j).coords();
            let mut best = f64::INFINITY;
            for c in z.centers() {
                let v = spec.leg_of_dist2(crate::cost::dist2(x, c.coords()))
                    + spec.leg_of_dist2(crate::cost::dist2(c.coords(), y));
                if v < best {
                    best = v;
                }
            }
            best
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    /// Transposed copy.
    pub fn transposed(&self) -> CostMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.n_cols {
            for i in 0..self.n_rows {
                data.push(self.get(i, j));
            }
        }
        CostMatrix { n_rows: self.n_cols, n_cols: self.n_rows, data }
    }
}

/// Largest `n1 * n2` the exact solver accepts by default.
pub const DEFAULT_LP_BUDGET: usize = 1_000_000;

/// One flow entry: (source index, target index, mass).
pub type FlowTriplet = (usize, usize, f64);

const SUPPLY_EPS: f64 = 1e-15;
const FEAS_TOL: f64 = 1e-12;

/// Exact optimal transport between the weight vectors of `mu` and `nu`
/// under an explicit cost matrix. Returns the optimal value and the sparse
/// flow as (source, target, mass) triplets in row-major order.
pub fn exact_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    c: &CostMatrix,
) -> Result<(f64, Vec<FlowTriplet>)> {
    exact_ot_with_budget(mu, nu, c, DEFAULT_LP_BUDGET)
}

#[allow(clippy::needless_range_loop)] // index loops read better over the parallel node arrays
pub fn exact_ot_with_budget(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    c: &CostMatrix,
    budget: usize,
) -> Result<(f64, Vec<FlowTriplet>)> {
    let n1 = mu.len();
    let n2 = nu.len();
    if c.n_rows != n1 || c.n_cols != n2 {
        return Err(Error::Dimension(format!(
            "cost matrix is {}x{} but measures have {} and {} atoms",
            c.n_rows, c.n_cols, n1, n2
        )));
    }
    if n1 * n2 > budget {
        return Err(Error::Capacity(format!(
            "{}x{} = {} variables exceeds the budget {}",
            n1,
            n2,
            n1 * n2,
            budget
        )));
    }
    let supply_total: f64 = mu.weights().iter().sum();
    let demand_total: f64 = nu.weights().iter().sum();
    if (supply_total - demand_total).abs() > FEAS_TOL {
        return Err(Error::Infeasible(format!(
            "total supply {} differs from total demand {}",
            supply_total, demand_total
        )));
    }

    let mut supply = mu.weights().to_vec();
    let mut demand = nu.weights().to_vec();
    let mut flow = vec![0.0f64; n1 * n2];

    // Node layout for the shortest-path search: sources then sinks.
    // Potentials make all residual reduced costs nonnegative; initially
    // pi_j = min_i c_ij does it because no residual arcs exist yet.
    let mut pi_src = vec![0.0f64; n1];
    let mut pi_snk: Vec<f64> = (0..n2)
        .map(|j| (0..n1).fold(f64::INFINITY, |lo, i| lo.min(c.get(i, j))))
        .collect();

    let n_nodes = n1 + n2;
    let mut dist = vec![0.0f64; n_nodes];
    let mut done = vec![false; n_nodes];
    let mut parent: Vec<Option<usize>> = vec![None; n_nodes]; // predecessor node

    loop {
        let active_supply = (0..n1).any(|i| supply[i] > SUPPLY_EPS);
        if !active_supply {
            break;
        }
        // Dijkstra from the set of sources with remaining supply.
        for v in 0..n_nodes {
            dist[v] = f64::INFINITY;
            done[v] = false;
            parent[v] = None;
        }
        for i in 0..n1 {
            if supply[i] > SUPPLY_EPS {
                dist[i] = 0.0;
            }
        }
        let mut best_sink: Option<usize> = None;
        for _ in 0..n_nodes {
            let mut u = usize::MAX;
            let mut du = f64::INFINITY;
            for v in 0..n_nodes {
                if !done[v] && dist[v] < du {
                    du = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < n1 {
                let i = u;
                for j in 0..n2 {
                    let v = n1 + j;
                    if done[v] {
                        continue;
                    }
                    let rc = c.get(i, j) + pi_src[i] - pi_snk[j];
                    debug_assert!(rc >= -1e-9, "negative reduced cost {}", rc);
                    let nd = du + rc.max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        parent[v] = Some(u);
                    }
                }
            } else {
                let j = u - n1;
                for i in 0..n1 {
                    if done[i] || flow[i * n2 + j] <= 0.0 {
                        continue;
                    }
                    let rc = -c.get(i, j) - pi_src[i] + pi_snk[j];
                    debug_assert!(rc >= -1e-9, "negative residual reduced cost {}", rc);
                    let nd = du + rc.max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        parent[i] = Some(u);
                    }
                }
            }
        }
        // Cheapest open sink.
        let mut best = f64::INFINITY;
        for j in 0..n2 {
            if demand[j] > SUPPLY_EPS && dist[n1 + j] < best {
                best = dist[n1 + j];
                best_sink = Some(n1 + j);
            }
        }
        let Some(sink) = best_sink else {
            break; // all demand met (up to feasibility dust)
        };

        // Update potentials with the found distances.
        let d_sink = dist[sink];
        for i in 0..n1 {
            pi_src[i] += dist[i].min(d_sink);
        }
        for j in 0..n2 {
            pi_snk[j] += dist[n1 + j].min(d_sink);
        }

        // Bottleneck along the path.
        let mut delta = demand[sink - n1];
        let mut v = sink;
        while let Some(u) = parent[v] {
            if u < n1 {
                // forward arc u -> v; capacity unbounded
            } else {
                // residual arc (sink u) -> (source v): limited by the flow
                delta = delta.min(flow[v * n2 + (u - n1)]);
            }
            v = u;
        }
        delta = delta.min(supply[v]);
        if delta <= SUPPLY_EPS {
            break;
        }

        // Apply the augmentation.
        let mut v = sink;
        while let Some(u) = parent[v] {
            if u < n1 {
                flow[u * n2 + (v - n1)] += delta;
            } else {
                flow[v * n2 + (u - n1)] -= delta;
            }
            v = u;
        }
        supply[v] -= delta;
        demand[sink - n1] -= delta;
    }

    // Value and plan from the final flow, row-major for reproducibility.
    let mut value = 0.0;
    let mut plan = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let f = flow[i * n2 + j];
            if f > 0.0 {
                value += f * c.get(i, j);
                plan.push((i, j, f));
            }
        }
    }
    Ok((value, plan))
}

/// Excess of the center-constrained transport value over the exact one.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub semidiscrete_value: f64,
    pub exact_value: f64,
    pub gap: f64,
    pub m: usize,
    pub n: usize,
}

/// Measures the approximation gap for one center set. Self-transport
/// instances (bitwise-identical measures) have exact value zero by the
/// stay-in-place plan and skip the LP, which keeps large quantization runs
/// inside the solver budget.
pub fn gap(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec: &CostSpec,
    opts: &SolveOptions,
) -> Result<GapReport> {
    let report = maximize_dual(mu, nu, z, spec, opts)?;
    let exact_value = if mu.same_atoms(nu) {
        0.0
    } else {
        let c = CostMatrix::ground(mu, nu, spec)?;
        exact_ot(mu, nu, &c)?.0
    };
    Ok(GapReport {
        semidiscrete_value: report.value,
        exact_value,
        gap: report.value - exact_value,
        m: z.m(),
        n: mu.len().max(nu.len()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub m: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log gap` against `log m`.
    pub slope: f64,
}

/// For each center count, refines from seeded starts and records the
/// smallest gap achieved, then fits the log-log decay slope.
pub fn asymptotic_sweep(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    spec: &CostSpec,
    m_list: &[usize],
    rounds: usize,
    seeds: &[u64],
) -> Result<SweepResult> {
    if m_list.len() < 2 {
        return Err(Error::Validation("sweep needs at least two center counts".into()));
    }
    if !m_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Validation("center counts must be strictly increasing".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Validation("sweep needs at least one seed".into()));
    }
    let exact_value = if mu.same_atoms(nu) {
        0.0
    } else {
        let c = CostMatrix::ground(mu, nu, spec)?;
        exact_ot(mu, nu, &c)?.0
    };

    let mut points = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let mut best = f64::INFINITY;
        for &seed in seeds {
            let z0 = kmeans_pp_centers(mu, nu, m, seed)?;
            let solve = SolveOptions::for_instance(mu, nu, &z0, spec);
            let refine = RefineOptions { rounds, ..RefineOptions::default() };
            let traj = refine_loop(mu, nu, &z0, spec, &refine, &solve)?;
            let low = traj.value_history.iter().cloned().fold(f64::INFINITY, f64::min);
            best = best.min(low - exact_value);
        }
        points.push(SweepPoint { m, gap: best });
    }

    let slope = log_log_slope(&points);
    Ok(SweepResult { points, slope })
}

/// Slope of the least-squares line through (ln m, ln gap); points with a
/// nonpositive gap (perfect quantization) are excluded.
pub fn log_log_slope(points: &[SweepPoint]) -> f64 {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.gap > 0.0)
        .map(|p| ((p.m as f64).ln(), p.gap.ln()))
        .collect();
    if data.len() < 2 {
        return f64::NAN;
    }
    let n = data.len() as f64;
    let mx = data.iter().map(|d| d.0).sum::<f64>() / n;
    let my = data.iter().map(|d| d.1).sum::<f64>() / n;
    let sxy: f64 = data.iter().map(|d| (d.0 - mx) * (d.1 - my)).sum();
    let sxx: f64 = data.iter().map(|d| (d.0 - mx) * (d.0 - mx)).sum();
    sxy / sxx
}
