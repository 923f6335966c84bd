//! Dependency-free SVG scatter rendering of planar partitions.
//!
//! Atoms are filled squares colored by cell, centers are black dots with a
//! white ring. Output carries no timestamps or text, so identical inputs
//! give identical bytes.

use sdot_core::cost::CenterSet;
use sdot_core::error::{Error, Result};
use sdot_core::measures::Point;

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 24.0;

/// Seeded color palette: a golden-angle hue walk from a random phase.
pub fn palette(m: usize, seed: u64) -> Vec<String> {
    // A tiny splitmix step keeps the phase reproducible without pulling in
    // a full RNG for one number.
    let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
    s = (s ^ (s >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94d049bb133111eb);
    let phase = (s ^ (s >> 31)) as f64 / u64::MAX as f64;
    (0..m)
        .map(|k| {
            let h = (phase + k as f64 * 0.618_033_988_749_895).fract();
            let (r, g, b) = hsl_to_rgb(h, 0.62, 0.5);
            format!("#{:02x}{:02x}{:02x}", r, g, b)
        })
        .collect()
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    (
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    )
}

/// The color used for atoms in the hedonic null cell or without a plan
/// entry.
pub const NULL_COLOR: &str = "#b0b0b0";

/// Renders one partition: `labels[i]` picks the color of atom `i`; label
/// `m` (one past the palette) draws in gray.
pub fn render_cells(
    points: &[Point],
    labels: &[usize],
    centers: &CenterSet,
    colors: &[String],
) -> Result<String> {
    if centers.dim() != 2 {
        return Err(Error::Dimension(format!(
            "figures need planar data, got dimension {}",
            centers.dim()
        )));
    }
    if points.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} points against {} labels",
            points.len(),
            labels.len()
        )));
    }

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points.iter().chain(centers.centers()) {
        for k in 0..2 {
            lo[k] = lo[k].min(p.coords()[k]);
            hi[k] = hi[k].max(p.coords()[k]);
        }
    }
    for k in 0..2 {
        if hi[k] - lo[k] < 1e-12 {
            lo[k] -= 0.5;
            hi[k] += 0.5;
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = (CANVAS - 2.0 * MARGIN) / span;
    let px = |p: &Point| -> (f64, f64) {
        let x = MARGIN + (p.coords()[0] - lo[0]) * scale;
        // SVG y grows downward.
        let y = CANVAS - MARGIN - (p.coords()[1] - lo[1]) * scale;
        (x, y)
    };

    let half = (0.42 * (CANVAS - 2.0 * MARGIN) / (points.len() as f64).sqrt()).clamp(1.5, 12.0);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{c}\" height=\"{c}\" viewBox=\"0 0 {c} {c}\">\n",
        c = CANVAS
    ));
    svg.push_str(&format!("<rect width=\"{c}\" height=\"{c}\" fill=\"white\"/>\n", c = CANVAS));
    for (p, &label) in points.iter().zip(labels) {
        let (x, y) = px(p);
        let color = colors.get(label).map(|s| s.as_str()).unwrap_or(NULL_COLOR);
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
            x - half,
            y - half,
            2.0 * half,
            2.0 * half,
            color
        ));
    }
    for c in centers.centers() {
        let (x, y) = px(c);
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.1}\" fill=\"black\" stroke=\"white\" stroke-width=\"1.5\"/>\n",
            x,
            y,
            (half * 1.2).clamp(3.0, 9.0)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_seeded_and_distinct() {
        let a = palette(10, 7);
        let b = palette(10, 7);
        let c = palette(10, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn single_center_renders_one_color() {
        let pts = vec![Point(vec![0.0, 0.0]), Point(vec![1.0, 1.0])];
        let z = CenterSet::new(2, vec![Point(vec![0.5, 0.5])]).unwrap();
        let svg = render_cells(&pts, &[0, 0], &z, &palette(1, 1)).unwrap();
        assert_eq!(svg.matches("<rect").count(), 3); // background + 2 atoms
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn rejects_non_planar_data() {
        let z = CenterSet::new(1, vec![Point(vec![0.5])]).unwrap();
        let err = render_cells(&[Point(vec![0.0])], &[0], &z, &palette(1, 1)).unwrap_err();
        assert_eq!(err.kind(), "DimensionError");
    }

    #[test]
    fn null_label_falls_back_to_gray() {
        let pts = vec![Point(vec![0.0, 0.0])];
        let z = CenterSet::new(2, vec![Point(vec![1.0, 1.0])]).unwrap();
        let svg = render_cells(&pts, &[1], &z, &palette(1, 1)).unwrap();
        assert!(svg.contains(NULL_COLOR));
    }
}
