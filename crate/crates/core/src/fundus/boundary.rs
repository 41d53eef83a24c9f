//! Circle Hough transform for the bright fundus disc.
//!
//! Edge pixels vote for a centre along their gradient direction (the gradient
//! of a bright disc on a dark background points inward), the accumulator peak
//! gives the centre, and the radius is read from the distances of the
//! supporting edge pixels. Slightly elliptical discs are accepted: the mean of
//! the supporting distances approximates the mean of the semi-axes.

use image::GrayImage;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BoundaryOptions {
    /// Edge threshold as a fraction of the strongest gradient.
    pub edge_fraction: f64,
    /// Absolute floor on gradient magnitude (Sobel units).
    pub min_edge_magnitude: f64,
    /// Search radii as fractions of the smaller image dimension.
    pub min_radius_fraction: f64,
    pub max_radius_fraction: f64,
    /// Accumulator peak must collect at least this share of edge votes.
    pub min_peak_support: f64,
    pub denoise: bool,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        Self {
            edge_fraction: 0.25,
            min_edge_magnitude: 40.0,
            min_radius_fraction: 0.05,
            max_radius_fraction: 0.75,
            min_peak_support: 0.2,
            denoise: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedDisc {
    pub center_px: [f64; 2],
    pub diameter_px: f64,
    pub support: usize,
}

struct Edge {
    x: f64,
    y: f64,
    ux: f64,
    uy: f64,
}

fn median3(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dimensions();
    let src = img.as_raw();
    let mut out = vec![0u8; src.len()];
    out.par_chunks_mut(w as usize).enumerate().for_each(|(y, row)| {
        let y = y as i64;
        for x in 0..w as i64 {
            let mut win = [0u8; 9];
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let xx = (x + dx).clamp(0, w as i64 - 1) as usize;
                    let yy = (y + dy).clamp(0, h as i64 - 1) as usize;
                    win[n] = src[yy * w as usize + xx];
                    n += 1;
                }
            }
            win.sort_unstable();
            row[x as usize] = win[4];
        }
    });
    GrayImage::from_raw(w, h, out).expect("buffer size matches")
}

fn sobel_edges(img: &GrayImage, opts: &BoundaryOptions) -> Vec<Edge> {
    let (w, h) = img.dimensions();
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let px = |x: u32, y: u32| img.get_pixel(x, y)[0] as f64;
    let grads: Vec<(u32, u32, f64, f64)> = (1..h - 1)
        .into_par_iter()
        .flat_map_iter(|y| {
            (1..w - 1).filter_map(move |x| {
                let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
                let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
                if gx == 0.0 && gy == 0.0 {
                    None
                } else {
                    Some((x, y, gx, gy))
                }
            })
        })
        .collect();
    let max_mag = grads.iter().map(|g| g.2.hypot(g.3)).fold(0.0, f64::max);
    let threshold = (max_mag * opts.edge_fraction).max(opts.min_edge_magnitude);
    grads
        .into_iter()
        .filter_map(|(x, y, gx, gy)| {
            let m = gx.hypot(gy);
            (m >= threshold).then(|| Edge {
                x: x as f64,
                y: y as f64,
                ux: gx / m,
                uy: gy / m,
            })
        })
        .collect()
}

/// Locates the fundus disc in a grayscale raster. Coordinates are raster
/// (column, row) with pixel centres at integers.
pub fn detect_fundus_boundary(img: &GrayImage, opts: &BoundaryOptions) -> Result<DetectedDisc> {
    let (w, h) = img.dimensions();
    let filtered;
    let src = if opts.denoise {
        filtered = median3(img);
        &filtered
    } else {
        img
    };
    let edges = sobel_edges(src, opts);
    if edges.len() < 16 {
        return Err(Error::BoundaryNotFound(format!("only {} edge pixels", edges.len())));
    }

    let min_dim = w.min(h) as f64;
    let r_min = (min_dim * opts.min_radius_fraction).max(2.0);
    let r_max = min_dim * opts.max_radius_fraction;

    let mut acc = vec![0u32; (w * h) as usize];
    for e in &edges {
        let mut r = r_min;
        while r <= r_max {
            let cx = (e.x + e.ux * r).round();
            let cy = (e.y + e.uy * r).round();
            if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
                break;
            }
            acc[cy as usize * w as usize + cx as usize] += 1;
            r += 1.0;
        }
    }

    // Peak of the 3×3-summed accumulator.
    let at = |x: i64, y: i64| -> u32 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0
        } else {
            acc[y as usize * w as usize + x as usize]
        }
    };
    let (mut best, mut best_xy) = (0u32, (0i64, 0i64));
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if at(x, y) == 0 {
                continue;
            }
            let s: u32 = (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dx, dy))).map(|(dx, dy)| at(x + dx, y + dy)).sum();
            if s > best {
                best = s;
                best_xy = (x, y);
            }
        }
    }
    let needed = (edges.len() as f64 * opts.min_peak_support).max(30.0);
    if (best as f64) < needed {
        return Err(Error::BoundaryNotFound(format!(
            "accumulator peak {best} below threshold {needed:.0}"
        )));
    }

    // Weighted centroid in a 5×5 window for a sub-pixel centre.
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for dy in -2..=2 {
        for dx in -2..=2 {
            let v = at(best_xy.0 + dx, best_xy.1 + dy) as f64;
            sw += v;
            sx += v * (best_xy.0 + dx) as f64;
            sy += v * (best_xy.1 + dy) as f64;
        }
    }
    let (mut cx, mut cy) = (sx / sw, sy / sw);

    // Supporting edges point at the centre. Two refinement passes: estimate
    // the radius, then re-centre on the supporting pixels' implied centres.
    let mut radius = 0.0;
    let mut support = 0;
    for _ in 0..2 {
        let mut dists: Vec<(f64, &Edge)> = edges
            .iter()
            .filter_map(|e| {
                let (dx, dy) = (cx - e.x, cy - e.y);
                let d = dx.hypot(dy);
                (d > 0.0 && (dx * e.ux + dy * e.uy) / d > 0.95).then_some((d, e))
            })
            .collect();
        if dists.len() < 16 {
            return Err(Error::BoundaryNotFound("too few edges support the centre".into()));
        }
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mode = histogram_mode(dists.iter().map(|d| d.0));
        let inliers: Vec<&(f64, &Edge)> = dists.iter().filter(|d| d.0 > 0.75 * mode && d.0 < 1.33 * mode).collect();
        radius = inliers.iter().map(|d| d.0).sum::<f64>() / inliers.len() as f64;
        support = inliers.len();
        let n = inliers.len() as f64;
        cx = inliers.iter().map(|(_, e)| e.x + e.ux * radius).sum::<f64>() / n;
        cy = inliers.iter().map(|(_, e)| e.y + e.uy * radius).sum::<f64>() / n;
    }

    Ok(DetectedDisc {
        center_px: [cx, cy],
        diameter_px: 2.0 * radius,
        support,
    })
}

fn histogram_mode(values: impl Iterator<Item = f64>) -> f64 {
    let mut bins: Vec<u32> = Vec::new();
    for v in values {
        let i = v.floor() as usize;
        if i >= bins.len() {
            bins.resize(i + 1, 0);
        }
        bins[i] += 1;
    }
    let (i, _) = bins
        .windows(3)
        .enumerate()
        .max_by_key(|(_, w)| w.iter().sum::<u32>())
        .unwrap_or((0, &[0, 0, 0]));
    i as f64 + 1.5
}
