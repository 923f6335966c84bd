//! Seeded center initializers.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::cost::{dist2, CenterSet};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Point};

/// Weighted D^2 seeding over the union of both supports: the first center
/// is drawn by weight, each further one with probability proportional to
/// weight times squared distance to the nearest chosen center.
pub fn kmeans_pp_centers(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    m: usize,
    seed: u64,
) -> Result<CenterSet> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension(format!(
            "measures of dimension {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if m < 1 {
        return Err(Error::Validation("need at least one center".into()));
    }
    let mut cloud: Vec<(&Point, f64)> = Vec::with_capacity(mu.len() + nu.len());
    for (p, &w) in mu.points().iter().zip(mu.weights()) {
        cloud.push((p, 0.5 * w));
    }
    for (p, &w) in nu.points().iter().zip(nu.weights()) {
        cloud.push((p, 0.5 * w));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<Point> = Vec::with_capacity(m);

    let first = sample_index(&mut rng, cloud.iter().map(|&(_, w)| w));
    chosen.push(cloud[first].0.clone());

    while chosen.len() < m {
        let scores: Vec<f64> = cloud
            .iter()
            .map(|&(p, w)| {
                let d2 = chosen
                    .iter()
                    .map(|c| dist2(p.coords(), c.coords()))
                    .fold(f64::INFINITY, f64::min);
                w * d2
            })
            .collect();
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            let idx = sample_index(&mut rng, scores.iter().cloned());
            chosen.push(cloud[idx].0.clone());
        } else {
            // All remaining mass sits on already-chosen locations; fall
            // back to the first unused distinct support point.
            let fallback = cloud.iter().map(|&(p, _)| p).find(|p| !chosen.contains(p));
            match fallback {
                Some(p) => chosen.push(p.clone()),
                None => {
                    return Err(Error::Validation(format!(
                        "support has fewer than {} distinct points",
                        m
                    )))
                }
            }
        }
    }
    CenterSet::new(mu.dim(), chosen)
}

/// Uniform draws inside the joint bounding box of both supports.
pub fn random_box_centers(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    m: usize,
    seed: u64,
) -> Result<CenterSet> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension(format!(
            "measures of dimension {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if m < 1 {
        return Err(Error::Validation("need at least one center".into()));
    }
    let d = mu.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for measure in [mu, nu] {
        for p in measure.points() {
            for k in 0..d {
                lo[k] = lo[k].min(p.coords()[k]);
                hi[k] = hi[k].max(p.coords()[k]);
            }
        }
    }
    for k in 0..d {
        if hi[k] - lo[k] < 1e-12 {
            lo[k] -= 0.5;
            hi[k] += 0.5;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Point> = Vec::with_capacity(m);
    let mut attempts = 0;
    while centers.len() < m {
        let cand = Point((0..d).map(|k| rng.gen_range(lo[k]..hi[k])).collect());
        if centers.contains(&cand) {
            attempts += 1;
            if attempts > 100 {
                return Err(Error::Validation("could not draw distinct centers".into()));
            }
            continue;
        }
        centers.push(cand);
    }
    CenterSet::new(d, centers)
}

fn sample_index<I: Iterator<Item = f64>>(rng: &mut ChaCha8Rng, weights: I) -> usize {
    let ws: Vec<f64> = weights.collect();
    let total: f64 = ws.iter().sum();
    let t = rng.gen_range(0.0..1.0) * total;
    let mut acc = 0.0;
    for (i, w) in ws.iter().enumerate() {
        acc += w;
        if acc >= t {
            return i;
        }
    }
    ws.len() - 1
}
