//! Discrete probability measures: validation, file ingestion, and the
//! synthetic generators used by the experiment presets.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest atom count a generator will produce without an explicit budget.
pub const DEFAULT_ATOM_BUDGET: usize = 1 << 20;

const MASS_TOL: f64 = 1e-12;

/// A point in `R^d`. The ambient dimension is owned by the container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point(coords)
    }
}

/// A weighted point cloud with strictly positive masses summing to one.
///
/// Weights are normalized (divided by their sum) at construction: all
/// downstream machinery assumes probability measures. Duplicate points are
/// permitted and never merged, so atom identity survives into partition
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates and normalizes. Rejects empty support, dimension
    /// mismatches, non-finite coordinates, and weights `<= 0`.
    pub fn new(dim: usize, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::Validation("measure has empty support".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::Validation(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::Dimension(format!(
                    "point {} has dimension {}, expected {}",
                    i,
                    p.dim(),
                    dim
                )));
            }
            if p.coords().iter().any(|c| !c.is_finite()) {
                return Err(Error::Validation(format!("point {} has non-finite coordinate", i)));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Validation(format!("weight {} is {}, must be positive", i, w)));
            }
        }
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Validation(format!("total mass {} is not positive", total)));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= MASS_TOL);
        Ok(DiscreteMeasure { dim, points, weights })
    }

    /// Rewraps weights that are already normalized, skipping the division
    /// so they survive bitwise (push-forwards keep weights untouched).
    fn from_normalized(dim: usize, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "weights sum to {}, expected a normalized measure",
                total
            )));
        }
        let m = DiscreteMeasure::new(dim, points, vec![1.0; weights.len()])?;
        Ok(DiscreteMeasure { weights, ..m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// True when both measures carry bitwise-identical atoms. Self-transport
    /// instances are recognized this way: their exact transport cost is zero
    /// with the stay-in-place plan, no solver needed.
    pub fn same_atoms(&self, other: &DiscreteMeasure) -> bool {
        self.dim == other.dim && self.points == other.points && self.weights == other.weights
    }
}

/// Loads a measure from JSON (the native format) or from CSV with header
/// `x1,...,xd,w`. The format is sniffed from the first non-blank byte.
pub fn load_measure<R: Read>(source: R) -> Result<DiscreteMeasure> {
    let mut buf = Vec::new();
    let mut reader = BufReader::new(source);
    reader
        .read_to_end(&mut buf)
        .map_err(|e| Error::Parse(format!("read failed: {}", e)))?;
    let first = buf.iter().find(|b| !b.is_ascii_whitespace());
    match first {
        Some(b'{') => load_measure_json(&buf[..]),
        Some(_) => load_measure_csv(&buf[..]),
        None => Err(Error::Parse("empty input".into())),
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureDoc {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

pub fn load_measure_json<R: Read>(source: R) -> Result<DiscreteMeasure> {
    let doc: MeasureDoc =
        serde_json::from_reader(source).map_err(|e| Error::Parse(format!("bad measure JSON: {}", e)))?;
    DiscreteMeasure::new(doc.dim, doc.points.into_iter().map(Point).collect(), doc.weights)
}

pub fn load_measure_csv<R: Read>(source: R) -> Result<DiscreteMeasure> {
    let reader = BufReader::new(source);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?
        .map_err(|e| Error::Parse(format!("read failed: {}", e)))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "w" {
        return Err(Error::Parse(format!("expected header x1,...,xd,w, got {:?}", header)));
    }
    let dim = cols.len() - 1;
    for (i, c) in cols[..dim].iter().enumerate() {
        if *c != format!("x{}", i + 1) {
            return Err(Error::Parse(format!("expected column x{}, got {:?}", i + 1, c)));
        }
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("read failed: {}", e)))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!(
                "row {}: expected {} fields, got {}",
                lineno + 2,
                dim + 1,
                fields.len()
            )));
        }
        let mut coords = Vec::with_capacity(dim);
        for f in &fields[..dim] {
            coords.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {}", lineno + 2, e)))?,
            );
        }
        let w = fields[dim]
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("row {}: {}", lineno + 2, e)))?;
        points.push(Point(coords));
        weights.push(w);
    }
    DiscreteMeasure::new(dim, points, weights)
}

pub fn save_measure_json<W: Write>(measure: &DiscreteMeasure, mut sink: W) -> Result<()> {
    let doc = MeasureDoc {
        dim: measure.dim(),
        points: measure.points().iter().map(|p| p.0.clone()).collect(),
        weights: measure.weights().to_vec(),
    };
    serde_json::to_writer(&mut sink, &doc).map_err(|e| Error::Parse(format!("write failed: {}", e)))?;
    Ok(())
}

pub fn save_measure_csv<W: Write>(measure: &DiscreteMeasure, mut sink: W) -> Result<()> {
    let d = measure.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{}", i)).collect();
    header.push("w".into());
    writeln!(sink, "{}", header.join(",")).map_err(|e| Error::Parse(format!("write failed: {}", e)))?;
    for (p, w) in measure.points().iter().zip(measure.weights()) {
        let row: Vec<String> = p.coords().iter().map(|c| format!("{}", c)).collect();
        writeln!(sink, "{},{}", row.join(","), w).map_err(|e| Error::Parse(format!("write failed: {}", e)))?;
    }
    Ok(())
}

/// The empirical uniform measure on the grid `(i1/k, ..., id/k)`,
/// `1 <= i <= k`: `k^d` atoms of weight `k^-d` each.
pub fn grid_uniform(d: usize, k: usize) -> Result<DiscreteMeasure> {
    grid_uniform_with_budget(d, k, DEFAULT_ATOM_BUDGET)
}

pub fn grid_uniform_with_budget(d: usize, k: usize, budget: usize) -> Result<DiscreteMeasure> {
    if d < 1 || k < 1 {
        return Err(Error::Validation(format!("grid needs d >= 1 and k >= 1, got d={}, k={}", d, k)));
    }
    let n = (k as u128).checked_pow(d as u32).ok_or_else(|| {
        Error::Capacity(format!("grid {}^{} overflows the atom count", k, d))
    })?;
    if n > budget as u128 {
        return Err(Error::Capacity(format!(
            "grid {}^{} = {} atoms exceeds budget {}",
            k, d, n, budget
        )));
    }
    let n = n as usize;
    let w = (k as f64).powi(d as i32).recip();
    let mut points = Vec::with_capacity(n);
    let mut idx = vec![1usize; d];
    loop {
        points.push(Point(idx.iter().map(|&i| i as f64 / k as f64).collect()));
        // odometer increment over (1..=k)^d
        let mut pos = 0;
        loop {
            if pos == d {
                return DiscreteMeasure::new(d, points, vec![w; n]);
            }
            idx[pos] += 1;
            if idx[pos] <= k {
                break;
            }
            idx[pos] = 1;
            pos += 1;
        }
    }
}

/// Which map a pushforward applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Identity,
    /// Gradient of the planar potential
    /// `phi(x) = (x1^2 + x2^2)/2 + lambda (cos(x1 + 2 x2) - sin(x1 - x2))`,
    /// the benchmark deformation of the identity. Requires `dim == 2`.
    TrigPotential,
}

/// A gradient map used to generate target measures from a source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub lambda: f64,
    pub kind: MapKind,
}

impl MapSpec {
    pub fn identity() -> Self {
        MapSpec { lambda: 0.0, kind: MapKind::Identity }
    }

    pub fn trig_potential(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::Validation(format!("lambda must be finite, got {}", lambda)));
        }
        Ok(MapSpec { lambda, kind: MapKind::TrigPotential })
    }
}

/// Gradient of the trig potential at a planar point.
fn grad_trig_potential(lambda: f64, x: &[f64]) -> Vec<f64> {
    let (x1, x2) = (x[0], x[1]);
    let u = x1 + 2.0 * x2;
    let v = x1 - x2;
    vec![
        x1 + lambda * (-u.sin() - v.cos()),
        x2 + lambda * (-2.0 * u.sin() + v.cos()),
    ]
}

/// Push-forward of `mu` under the requested gradient map: points move to
/// `T(x_i)`, weights are untouched (total mass is preserved exactly).
pub fn pushforward_gradient_map(mu: &DiscreteMeasure, spec: &MapSpec) -> Result<DiscreteMeasure> {
    if !spec.lambda.is_finite() {
        return Err(Error::Validation(format!("lambda must be finite, got {}", spec.lambda)));
    }
    match spec.kind {
        MapKind::Identity => Ok(mu.clone()),
        MapKind::TrigPotential => {
            if mu.dim() != 2 {
                return Err(Error::Dimension(format!(
                    "trig potential map needs dim 2, measure has dim {}",
                    mu.dim()
                )));
            }
            let points: Vec<Point> = mu
                .points()
                .iter()
                .map(|p| Point(grad_trig_potential(spec.lambda, p.coords())))
                .collect();
            DiscreteMeasure::from_normalized(2, points, mu.weights().to_vec())
        }
    }
}
