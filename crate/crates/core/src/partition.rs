//! Cell extraction, mass balancing, and transport-plan assembly.
//!
//! At solved prices every atom is labeled by its cheapest center. With
//! atomic measures the two sides generically balance only after atoms that
//! are tied between cells are split fractionally; splitting anywhere else
//! would contradict a strict minimizer, so only tie-flagged atoms ever
//! move. Balancing pushes surplus along augmenting paths through the tie
//! graph and reports the irreducible remainder honestly.

use crate::cost::{dist2, CenterSet, CostSpec};
use crate::dual::{PriceVector, TIE_TOL};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Default margin below which an atom counts as tied during extraction.
/// Wider than the evaluation tie tolerance because the prices feeding the
/// extraction are themselves converged only to solver accuracy.
pub const DEFAULT_ASSIGN_TIE_TOL: f64 = 1e-9;

/// Which cell system a partition describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Source cells `A_z(p)` under the first leg.
    Source,
    /// Target cells `B_z(-p)` under the second leg.
    Target,
    /// Source cells with the opt-out option; label `m` is the null cell.
    HedonicSource,
    /// Target cells with the opt-out option; label `m` is the null cell.
    HedonicTarget,
}

impl Side {
    pub fn is_hedonic(&self) -> bool {
        matches!(self, Side::HedonicSource | Side::HedonicTarget)
    }

    fn is_source_leg(&self) -> bool {
        matches!(self, Side::Source | Side::HedonicSource)
    }
}

/// An atom whose cheapest cell is not unique at the given prices.
#[derive(Debug, Clone)]
pub struct TieAtom {
    pub atom: usize,
    /// Tied cells in ascending order; may include the null cell index `m`.
    pub cells: Vec<usize>,
}

/// Fractions of one atom over several cells; fractions are in `(0, 1]` and
/// sum to one.
#[derive(Debug, Clone)]
pub struct SplitAtom {
    pub atom: usize,
    pub fractions: Vec<(usize, f64)>,
}

/// Per-atom cell assignment with cell masses.
#[derive(Debug, Clone)]
pub struct Partition {
    pub side: Side,
    /// Primary label per atom: the smallest index achieving the minimum.
    pub labels: Vec<usize>,
    /// Mass per cell, length `m` (`m + 1` for hedonic sides, null last).
    pub cell_masses: Vec<f64>,
    /// Atoms divided between tied cells by [`balance`].
    pub split_atoms: Vec<SplitAtom>,
    /// Tie-flagged atoms, candidates for fractional splitting.
    pub tie_atoms: Vec<TieAtom>,
}

impl Partition {
    /// Number of real cells (excludes the hedonic null cell).
    pub fn m(&self) -> usize {
        if self.side.is_hedonic() {
            self.cell_masses.len() - 1
        } else {
            self.cell_masses.len()
        }
    }

    /// Mass fractions of one atom as (cell, fraction) pairs.
    pub fn atom_fractions(&self, atom: usize) -> Vec<(usize, f64)> {
        for s in &self.split_atoms {
            if s.atom == atom {
                return s.fractions.clone();
            }
        }
        vec![(self.labels[atom], 1.0)]
    }

    /// Total mass over all cells (including the null cell, if any).
    pub fn total_mass(&self) -> f64 {
        self.cell_masses.iter().sum()
    }
}

/// Labels every atom of one side by its cheapest price-adjusted cell.
///
/// The target side is priced at `-p` internally, so callers pass the same
/// solved price vector for both sides. Atoms whose runner-up margin is
/// within `tie_tol` are flagged for balancing; hedonic sides send atoms
/// with a strictly positive minimum to the null cell (index `m`).
pub fn assign(
    p: &PriceVector,
    measure: &DiscreteMeasure,
    z: &CenterSet,
    spec: &CostSpec,
    side: Side,
    tie_tol: f64,
) -> Result<Partition> {
    if measure.dim() != z.dim() {
        return Err(Error::Dimension(format!(
            "measure of dimension {} against centers of dimension {}",
            measure.dim(),
            z.dim()
        )));
    }
    let m = z.m();
    if p.len() != m {
        return Err(Error::Dimension(format!(
            "price vector of length {} against {} centers",
            p.len(),
            m
        )));
    }
    let tie_tol = tie_tol.max(TIE_TOL);
    let hedonic = side.is_hedonic();
    let sign = if side.is_source_leg() { 1.0 } else { -1.0 };
    let n_cells = if hedonic { m + 1 } else { m };

    let mut labels = Vec::with_capacity(measure.len());
    let mut cell_masses = vec![0.0; n_cells];
    let mut tie_atoms = Vec::new();

    for (i, (point, &w)) in measure.points().iter().zip(measure.weights()).enumerate() {
        let mut values = Vec::with_capacity(m);
        let mut best = f64::INFINITY;
        for (j, c) in z.centers().iter().enumerate() {
            let v = spec.leg_of_dist2(dist2(point.coords(), c.coords())) + sign * p.values()[j];
            values.push(v);
            if v < best {
                best = v;
            }
        }
        if hedonic && best > tie_tol {
            // Firmly opted out: never splittable, whatever ties the real
            // cells have among themselves.
            labels.push(m);
            cell_masses[m] += w;
            continue;
        }
        let mut tied: Vec<usize> = (0..m).filter(|&j| values[j] - best <= tie_tol).collect();
        if hedonic && best.abs() <= tie_tol {
            tied.push(m); // opting out costs the same as the best cell
        }
        let label = tied[0];
        labels.push(label);
        cell_masses[label] += w;
        if tied.len() > 1 {
            tie_atoms.push(TieAtom { atom: i, cells: tied });
        }
    }

    Ok(Partition { side, labels, cell_masses, split_atoms: Vec::new(), tie_atoms })
}

/// Internal mutable view used while balancing: per tie atom, its current
/// mass in each tied cell.
struct TieState {
    atom: usize,
    cells: Vec<usize>,
    mass: Vec<f64>,
}

const MASS_EPS: f64 = 1e-15;

/// One relay move in the balancing search: the cell left behind, which
/// side's tie atom carries the mass, that atom's index in its tie list,
/// and the slots the mass leaves and enters.
type RelayStep = (usize, bool, usize, usize, usize);

/// Splits tie-flagged atoms across their tied cells to reduce the per-cell
/// imbalance `mu(A_j) - nu(B_j)`, pushing surplus along augmenting paths
/// through the tie graph. Non-tied atoms are never reassigned. Returns the
/// rebuilt partitions and the largest remaining imbalance.
pub fn balance(
    part_a: Partition,
    part_b: Partition,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<(Partition, Partition, f64)> {
    if part_a.m() != part_b.m() {
        return Err(Error::Dimension(format!(
            "partitions with {} and {} cells",
            part_a.m(),
            part_b.m()
        )));
    }
    if part_a.labels.len() != mu.len() || part_b.labels.len() != nu.len() {
        return Err(Error::Dimension("partition does not match its measure".into()));
    }
    let m = part_a.m();
    let hedonic = part_a.side.is_hedonic();
    let null = m; // virtual bucket, only reachable on hedonic sides

    // Imbalance per real cell; the null cell absorbs anything.
    let mut imbalance: Vec<f64> = part_a.cell_masses[..m]
        .iter()
        .zip(&part_b.cell_masses[..m])
        .map(|(a, b)| a - b)
        .collect();

    let init_state = |part: &Partition, measure: &DiscreteMeasure| -> Result<Vec<TieState>> {
        part.tie_atoms
            .iter()
            .map(|t| {
                let mut mass = vec![0.0; t.cells.len()];
                let here = t
                    .cells
                    .iter()
                    .position(|&c| c == part.labels[t.atom])
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "tie atom {} is labeled {} but tied to {:?}",
                            t.atom, part.labels[t.atom], t.cells
                        ))
                    })?;
                mass[here] = measure.weight(t.atom);
                Ok(TieState { atom: t.atom, cells: t.cells.clone(), mass })
            })
            .collect()
    };
    let mut state_a = init_state(&part_a, mu)?;
    let mut state_b = init_state(&part_b, nu)?;

    // One directed relay step moves imbalance from cell `u` to cell `v` by
    // shifting tied mass; augmenting along a path leaves interior cells
    // untouched. Capped for termination; leftovers are reported honestly.
    let slot_count: usize = state_a.iter().chain(&state_b).map(|t| t.cells.len()).sum();
    let max_rounds = 16 * (slot_count + m + 1);
    for _ in 0..max_rounds {
        // Deterministic pick: the worst surplus cell with an escape route.
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            imbalance[b]
                .abs()
                .partial_cmp(&imbalance[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut advanced = false;
        for &start in &order {
            if imbalance[start].abs() <= MASS_EPS {
                break;
            }
            // Work in the orientation where `start` has positive surplus;
            // for a deficit cell relay directions flip, which is the same
            // search with the roles of A and B swapped.
            let surplus_side_a = imbalance[start] > 0.0;
            if augment(start, surplus_side_a, &mut state_a, &mut state_b, &mut imbalance, null, hedonic)
                .is_some()
            {
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }

    let residual = imbalance.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let rebuilt_a = rebuild(part_a, mu, state_a);
    let rebuilt_b = rebuild(part_b, nu, state_b);
    Ok((rebuilt_a, rebuilt_b, residual))
}

/// Breadth-first search for a path from a surplus cell to a deficit cell
/// (or the null bucket) through tie atoms with movable mass; pushes the
/// bottleneck amount along it. Returns the moved mass, or `None`.
fn augment(
    start: usize,
    surplus_side_a: bool,
    state_a: &mut [TieState],
    state_b: &mut [TieState],
    imbalance: &mut [f64],
    null: usize,
    hedonic: bool,
) -> Option<f64> {
    let m = imbalance.len();
    let n_nodes = m + 1; // last node is the null bucket
    let mut prev: Vec<Option<RelayStep>> = vec![None; n_nodes];
    let mut seen = vec![false; n_nodes];
    let mut queue = std::collections::VecDeque::new();
    seen[start] = true;
    queue.push_back(start);

    let goal = |node: usize, imbalance: &[f64]| -> bool {
        if node == null {
            return hedonic;
        }
        if node == start {
            return false;
        }
        if surplus_side_a {
            imbalance[node] < -MASS_EPS
        } else {
            imbalance[node] > MASS_EPS
        }
    };

    let mut target = None;
    'bfs: while let Some(u) = queue.pop_front() {
        // Moving surplus out of `u` uses A-side mass sitting in `u`, or
        // B-side mass sitting in a neighbor that can relocate into `u`.
        // For a deficit start the sides swap.
        for (pass, states) in [(true, &*state_a), (false, &*state_b)] {
            let outgoing = pass == surplus_side_a;
            for (ti, t) in states.iter().enumerate() {
                for (si, &cell) in t.cells.iter().enumerate() {
                    if outgoing {
                        if cell != u || t.mass[si] <= MASS_EPS {
                            continue;
                        }
                        for (di, &dest) in t.cells.iter().enumerate() {
                            if dest == u || seen[dest] {
                                continue;
                            }
                            seen[dest] = true;
                            prev[dest] = Some((u, pass, ti, si, di));
                            if goal(dest, imbalance) {
                                target = Some(dest);
                                break 'bfs;
                            }
                            queue.push_back(dest);
                        }
                    } else {
                        // Pull opposite-side mass into `u` from wherever it
                        // currently sits.
                        if !t.cells.contains(&u) || cell == u || t.mass[si] <= MASS_EPS {
                            continue;
                        }
                        let dest = cell;
                        if seen[dest] {
                            continue;
                        }
                        let into = t.cells.iter().position(|&c| c == u).unwrap();
                        seen[dest] = true;
                        prev[dest] = Some((u, pass, ti, si, into));
                        if goal(dest, imbalance) {
                            target = Some(dest);
                            break 'bfs;
                        }
                        queue.push_back(dest);
                    }
                }
            }
        }
    }

    let target = target?;
    // Walk back to find the bottleneck.
    let mut path = Vec::new();
    let mut node = target;
    while node != start {
        let step = prev[node].unwrap();
        path.push(step);
        node = step.0;
    }
    path.reverse();

    let head = imbalance[start].abs();
    let tail = if target == null { f64::INFINITY } else { imbalance[target].abs() };
    let mut delta = head.min(tail);
    for &(_, side_a, ti, si, _) in &path {
        let t = if side_a { &state_a[ti] } else { &state_b[ti] };
        delta = delta.min(t.mass[si]);
    }
    if delta <= MASS_EPS {
        return None;
    }
    for &(_, side_a, ti, si, di) in &path {
        let t = if side_a { &mut state_a[ti] } else { &mut state_b[ti] };
        t.mass[si] -= delta;
        t.mass[di] += delta;
        let c_from = t.cells[si];
        let c_to = t.cells[di];
        // A-side mass entering a cell raises its score, B-side mass lowers it.
        let sgn = if side_a { 1.0 } else { -1.0 };
        if c_from < imbalance.len() {
            imbalance[c_from] -= sgn * delta;
        }
        if c_to < imbalance.len() {
            imbalance[c_to] += sgn * delta;
        }
    }
    Some(delta)
}

fn rebuild(part: Partition, measure: &DiscreteMeasure, state: Vec<TieState>) -> Partition {
    let mut cell_masses = vec![0.0; part.cell_masses.len()];
    let mut split_atoms = Vec::new();
    let mut moved: Vec<Option<&TieState>> = vec![None; measure.len()];
    for t in &state {
        moved[t.atom] = Some(t);
    }
    for i in 0..measure.len() {
        let w = measure.weight(i);
        match moved[i] {
            Some(t) => {
                let total: f64 = t.mass.iter().sum();
                let mut fractions: Vec<(usize, f64)> = t
                    .cells
                    .iter()
                    .zip(&t.mass)
                    .filter(|(_, &mass)| mass > MASS_EPS)
                    .map(|(&c, &mass)| (c, mass / total))
                    .collect();
                fractions.sort_by_key(|&(c, _)| c);
                for &(c, f) in &fractions {
                    cell_masses[c] += w * f;
                }
                // A full relocation to another tied cell is recorded as a
                // one-fraction split so labels keep the smallest tied index.
                if fractions.len() > 1 || fractions[0].0 != part.labels[i] {
                    split_atoms.push(SplitAtom { atom: i, fractions });
                }
            }
            None => {
                cell_masses[part.labels[i]] += w;
            }
        }
    }
    split_atoms.sort_by_key(|s| s.atom);
    Partition { cell_masses, split_atoms, ..part }
}

/// One coupling entry: `mass` moved from source atom to target atom through
/// the cell's center.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
    pub cell: usize,
}

/// Sparse transport plan assembled cell by cell.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Entries sorted by (cell, source, target).
    pub entries: Vec<PlanEntry>,
}

impl TransportPlan {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    /// Row and column sums against the two atom lists.
    pub fn marginals(&self, n_source: usize, n_target: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rows = vec![0.0; n_source];
        let mut cols = vec![0.0; n_target];
        for e in &self.entries {
            rows[e.source] += e.mass;
            cols[e.target] += e.mass;
        }
        (rows, cols)
    }
}

/// Assembles the per-cell product coupling: within cell `z` of mass `r_z`,
/// the pair (source atom `a`, target atom `b`) gets mass
/// `w_a * w_b / r_z`. Cells with no mass emit nothing; a cell populated on
/// one side only is an error (it signals an unconverged dual).
pub fn make_plan(
    part_a: &Partition,
    part_b: &Partition,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    imbalance_tol: f64,
) -> Result<TransportPlan> {
    if part_a.m() != part_b.m() {
        return Err(Error::Dimension(format!(
            "partitions with {} and {} cells",
            part_a.m(),
            part_b.m()
        )));
    }
    let m = part_a.m();
    // Per-cell atom lists with effective (possibly split) masses.
    let collect = |part: &Partition, measure: &DiscreteMeasure| -> Vec<Vec<(usize, f64)>> {
        let mut cells: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for i in 0..measure.len() {
            for (c, f) in part.atom_fractions(i) {
                if c < m {
                    let w = measure.weight(i) * f;
                    if w > 0.0 {
                        cells[c].push((i, w));
                    }
                }
            }
        }
        cells
    };
    let cells_a = collect(part_a, mu);
    let cells_b = collect(part_b, nu);

    let mut entries = Vec::new();
    for cell in 0..m {
        let r_a: f64 = cells_a[cell].iter().map(|&(_, w)| w).sum();
        let r_b: f64 = cells_b[cell].iter().map(|&(_, w)| w).sum();
        if r_a <= MASS_EPS && r_b <= MASS_EPS {
            continue;
        }
        if (r_a - r_b).abs() > imbalance_tol {
            return Err(Error::Imbalance(format!(
                "cell {} holds mass {} on the source side but {} on the target side",
                cell, r_a, r_b
            )));
        }
        for &(a, wa) in &cells_a[cell] {
            for &(b, wb) in &cells_b[cell] {
                let mass = wa * wb / r_a;
                if mass > 0.0 {
                    entries.push(PlanEntry { source: a, target: b, mass, cell });
                }
            }
        }
    }
    entries.sort_by_key(|e| (e.cell, e.source, e.target));
    Ok(TransportPlan { entries })
}

/// Total plan cost under an arbitrary pairwise cost.
pub fn plan_cost_with<F>(plan: &TransportPlan, mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: F) -> f64
where
    F: Fn(&crate::measures::Point, &crate::measures::Point) -> f64,
{
    plan.entries
        .iter()
        .map(|e| e.mass * cost(mu.point(e.source), nu.point(e.target)))
        .sum()
}

/// Plan cost under the ground cost `|x - y|^sigma`.
pub fn plan_cost_ground(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    spec: &CostSpec,
) -> f64 {
    plan_cost_with(plan, mu, nu, |x, y| spec.power_of_dist2(dist2(x.coords(), y.coords())))
}

/// Plan cost under the center-constrained cost.
pub fn plan_cost_semidiscrete(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    z: &CenterSet,
    spec: &CostSpec,
) -> f64 {
    plan_cost_with(plan, mu, nu, |x, y| {
        let mut best = f64::INFINITY;
        for c in z.centers() {
            let v = spec.leg_of_dist2(dist2(x.coords(), c.coords()))
                + spec.leg_of_dist2(dist2(c.coords(), y.coords()));
            if v < best {
                best = v;
            }
        }
        best
    })
}
