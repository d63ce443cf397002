//! SVG figures: SBC rank histograms and posterior corner plots.

use std::path::Path;

use anyhow::anyhow;
use plotters::prelude::*;
use rsnpe::calibration::{rank_histogram, RankRecord, THETA_NAMES};
use rsnpe::inference::quantile_sorted;

const LABELS: [&str; 3] = ["ε", "σ (m)", "m"];

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

/// One panel per θ dimension with the expected count and its 99% band.
pub fn rank_histograms(path: &Path, ranks: &RankRecord, n_bins: usize) -> anyhow::Result<()> {
    let rows = rank_histogram(ranks, n_bins);
    let n = ranks.len() as f64;
    let root = SVGBackend::new(path, (1200, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 3));
    for (d, panel) in panels.iter().enumerate() {
        let counts: Vec<usize> = rows.iter().map(|r| [r.eps, r.sigma, r.slope][d]).collect();
        let values = (ranks.l + 1) as f64;
        let expected: Vec<f64> = rows.iter().map(|r| n * (r.hi - r.lo + 1) as f64 / values).collect();
        let y_max = counts.iter().map(|&c| c as f64).chain(expected.iter().map(|e| e + 3.0 * e.sqrt())).fold(1.0, f64::max);
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("SBC ranks: {}", THETA_NAMES[d]), ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(0f64..values, 0f64..y_max * 1.1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("rank").y_desc("count").draw().map_err(plot_err)?;
        for (row, e) in rows.iter().zip(&expected) {
            let p = e / n;
            let band = 2.576 * (n * p * (1.0 - p)).sqrt();
            let (x0, x1) = (row.lo as f64, row.hi as f64 + 1.0);
            chart
                .draw_series(std::iter::once(Rectangle::new(
                    [(x0, (e - band).max(0.0)), (x1, e + band)],
                    RGBColor(220, 220, 220).filled(),
                )))
                .map_err(plot_err)?;
        }
        chart
            .draw_series(rows.iter().zip(&counts).map(|(row, &c)| {
                Rectangle::new([(row.lo as f64, 0.0), (row.hi as f64 + 1.0, c as f64)], BLUE.mix(0.6).filled())
            }))
            .map_err(plot_err)?;
        chart
            .draw_series(rows.iter().zip(&expected).map(|(row, &e)| {
                PathElement::new(vec![(row.lo as f64, e), (row.hi as f64 + 1.0, e)], BLACK.stroke_width(2))
            }))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Display range of one dimension: the central 99% widened by 5%.
fn axis_range(samples: &[[f64; 3]], d: usize) -> (f64, f64) {
    let mut col: Vec<f64> = samples.iter().map(|s| s[d]).collect();
    col.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&col, 0.005);
    let hi = quantile_sorted(&col, 0.995);
    let pad = 0.05 * (hi - lo).max(1e-9);
    (lo - pad, hi + pad)
}

const GRID: usize = 48;

/// Gaussian KDE on a `GRID × GRID` lattice of cell centres with Scott's
/// bandwidth; `density[iy][ix]`.
fn kde_2d(pts: &[(f64, f64)], xr: (f64, f64), yr: (f64, f64)) -> Vec<Vec<f64>> {
    let n = pts.len() as f64;
    let sd = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let m = pts.iter().map(f).sum::<f64>() / n;
        (pts.iter().map(|p| (f(p) - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let factor = n.powf(-1.0 / 6.0);
    let bx = (sd(&|p| p.0) * factor).max((xr.1 - xr.0) / GRID as f64);
    let by = (sd(&|p| p.1) * factor).max((yr.1 - yr.0) / GRID as f64);
    let cx = |i: usize| xr.0 + (i as f64 + 0.5) * (xr.1 - xr.0) / GRID as f64;
    let cy = |i: usize| yr.0 + (i as f64 + 0.5) * (yr.1 - yr.0) / GRID as f64;
    (0..GRID)
        .map(|iy| {
            (0..GRID)
                .map(|ix| {
                    let (x, y) = (cx(ix), cy(iy));
                    pts.iter()
                        .map(|p| (-0.5 * (((p.0 - x) / bx).powi(2) + ((p.1 - y) / by).powi(2))).exp())
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Density levels enclosing the given probability masses (highest first).
fn hpd_levels(density: &[Vec<f64>], masses: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = density.iter().flatten().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = v.iter().sum();
    masses
        .iter()
        .map(|&m| {
            let mut acc = 0.0;
            for &d in &v {
                acc += d;
                if acc >= m * total {
                    return d;
                }
            }
            *v.last().unwrap_or(&0.0)
        })
        .collect()
}

type Segment = ((f64, f64), (f64, f64));

/// Marching squares over cell centres; returns iso-line segments in grid
/// index coordinates.
fn contour_segments(density: &[Vec<f64>], level: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    let lerp = |a: f64, b: f64| if (b - a).abs() < 1e-300 { 0.5 } else { (level - a) / (b - a) };
    for iy in 0..GRID - 1 {
        for ix in 0..GRID - 1 {
            let v = [density[iy][ix], density[iy][ix + 1], density[iy + 1][ix + 1], density[iy + 1][ix]];
            let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (v[e], v[(e + 1) % 4]);
                if (a >= level) != (b >= level) {
                    let t = lerp(a, b);
                    let (p, q) = (corners[e], corners[(e + 1) % 4]);
                    crossings.push((ix as f64 + p.0 + t * (q.0 - p.0), iy as f64 + p.1 + t * (q.1 - p.1)));
                }
            }
            for pair in crossings.chunks_exact(2) {
                out.push((pair[0], pair[1]));
            }
        }
    }
    out
}

/// Corner plot: marginal histograms on the diagonal, KDE heatmaps with 68%
/// and 95% highest-density contours below it.
pub fn corner(path: &Path, samples: &[[f64; 3]], title: &str) -> anyhow::Result<()> {
    if samples.is_empty() {
        return Err(anyhow!("no samples to plot"));
    }
    let stride = samples.len().div_ceil(2000);
    let thin: Vec<[f64; 3]> = samples.iter().step_by(stride).copied().collect();
    let ranges: Vec<(f64, f64)> = (0..3).map(|d| axis_range(samples, d)).collect();

    let root = SVGBackend::new(path, (900, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root.titled(title, ("sans-serif", 20)).map_err(plot_err)?;
    let panels = root.split_evenly((3, 3));
    for row in 0..3 {
        for col in 0..3 {
            let panel = &panels[row * 3 + col];
            if col > row {
                continue;
            }
            let xr = ranges[col];
            if row == col {
                let bins = 40;
                let width = (xr.1 - xr.0) / bins as f64;
                let mut counts = vec![0usize; bins];
                for s in samples {
                    let b = ((s[col] - xr.0) / width).floor();
                    if b >= 0.0 && (b as usize) < bins {
                        counts[b as usize] += 1;
                    }
                }
                let top = *counts.iter().max().unwrap_or(&1) as f64;
                let mut chart = ChartBuilder::on(panel)
                    .margin(6)
                    .x_label_area_size(28)
                    .y_label_area_size(36)
                    .build_cartesian_2d(xr.0..xr.1, 0f64..top * 1.05)
                    .map_err(plot_err)?;
                chart.configure_mesh().x_desc(LABELS[col]).disable_y_mesh().draw().map_err(plot_err)?;
                chart
                    .draw_series(counts.iter().enumerate().map(|(i, &c)| {
                        let x0 = xr.0 + i as f64 * width;
                        Rectangle::new([(x0, 0.0), (x0 + width, c as f64)], BLUE.mix(0.6).filled())
                    }))
                    .map_err(plot_err)?;
                continue;
            }
            let yr = ranges[row];
            let pts: Vec<(f64, f64)> = thin.iter().map(|s| (s[col], s[row])).collect();
            let density = kde_2d(&pts, xr, yr);
            let peak = density.iter().flatten().copied().fold(0.0, f64::max).max(1e-300);
            let mut chart = ChartBuilder::on(panel)
                .margin(6)
                .x_label_area_size(28)
                .y_label_area_size(36)
                .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
                .map_err(plot_err)?;
            chart.configure_mesh().x_desc(LABELS[col]).y_desc(LABELS[row]).draw().map_err(plot_err)?;
            let (dx, dy) = ((xr.1 - xr.0) / GRID as f64, (yr.1 - yr.0) / GRID as f64);
            chart
                .draw_series((0..GRID).flat_map(|iy| (0..GRID).map(move |ix| (ix, iy))).map(|(ix, iy)| {
                    let t = density[iy][ix] / peak;
                    let shade = (255.0 * (1.0 - 0.85 * t)) as u8;
                    let (x0, y0) = (xr.0 + ix as f64 * dx, yr.0 + iy as f64 * dy);
                    Rectangle::new([(x0, y0), (x0 + dx, y0 + dy)], RGBColor(shade, shade, 255).filled())
                }))
                .map_err(plot_err)?;
            let to_data = |p: (f64, f64)| (xr.0 + (p.0 + 0.5) * dx, yr.0 + (p.1 + 0.5) * dy);
            for level in hpd_levels(&density, &[0.68, 0.95]) {
                chart
                    .draw_series(
                        contour_segments(&density, level)
                            .into_iter()
                            .map(|(a, b)| PathElement::new(vec![to_data(a), to_data(b)], BLACK.stroke_width(1))),
                    )
                    .map_err(plot_err)?;
            }
        }
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
