//! Gaussian random field surfaces with prescribed RMS height and RMS slope.
//!
//! Heights have a Gaussian autocorrelation `C(r) = σ² exp(-r²/l²)`. For that
//! family the gradient of the surface has mean squared magnitude `4σ²/l²`, so
//! an RMS slope `m` fixes the correlation length at `l = 2σ/m`.
//!
//! Fields are synthesized spectrally on a grid 1.25 times larger than the
//! requested one and cropped, which keeps the periodic wraparound of the FFT
//! away from the returned mesh.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Oversampling of the synthesis grid relative to the returned mesh.
const PAD_FACTOR: f64 = 1.25;

/// Recipe for one surface realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    /// RMS height, m.
    pub sigma: f64,
    /// RMS slope (rise over run).
    pub slope: f64,
    /// Facet edge, m.
    pub dx: f64,
    /// Grid points per side.
    pub n: usize,
    pub seed: u64,
}

impl SurfaceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("surface.sigma", "must be finite and >= 0"));
        }
        if !(self.slope >= 0.0) || !self.slope.is_finite() {
            return Err(Error::config("surface.slope", "must be finite and >= 0"));
        }
        if !(self.dx > 0.0) || !self.dx.is_finite() {
            return Err(Error::config("surface.dx", "must be finite and > 0"));
        }
        if self.n < 2 {
            return Err(Error::config("surface.n", "must be >= 2"));
        }
        Ok(())
    }

    /// Correlation length `2σ/m`; infinite when the slope is zero.
    pub fn correlation_length(&self) -> f64 {
        if self.slope == 0.0 {
            f64::INFINITY
        } else {
            2.0 * self.sigma / self.slope
        }
    }
}

/// Square grid of heights, row-major, `heights[row * n + col]`.
///
/// Grid point `(row, col)` sits at `x = (col - (n-1)/2)·dx`,
/// `y = (row - (n-1)/2)·dx`, so the mesh is centred on the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    n: usize,
    dx: f64,
    heights: Vec<f64>,
}

impl SurfaceMesh {
    pub fn new(n: usize, dx: f64, heights: Vec<f64>) -> Result<Self> {
        if heights.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} heights for a {n}x{n} grid, got {}",
                n * n,
                heights.len()
            )));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::Domain("surface heights must be finite".into()));
        }
        Ok(Self { n, dx, heights })
    }

    pub fn flat(n: usize, dx: f64) -> Self {
        Self {
            n,
            dx,
            heights: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    #[inline]
    pub fn height(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.n + col]
    }

    /// Horizontal coordinate of grid index `i` along either axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.dx
    }

    /// Adds a constant to every height.
    pub fn offset(&mut self, dz: f64) {
        self.heights.iter_mut().for_each(|h| *h += dz);
    }

    /// Multiplies every height by `c`.
    pub fn scale(&mut self, c: f64) {
        self.heights.iter_mut().for_each(|h| *h *= c);
    }

    /// Height gradient at an interior or edge point. Central differences in
    /// the interior, one-sided at the border.
    pub fn gradient(&self, row: usize, col: usize) -> (f64, f64) {
        let n = self.n;
        let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / (span as f64 * self.dx);
        let (c0, c1) = (col.saturating_sub(1), (col + 1).min(n - 1));
        let (r0, r1) = (row.saturating_sub(1), (row + 1).min(n - 1));
        let gx = diff(self.height(row, c0), self.height(row, c1), c1 - c0);
        let gy = diff(self.height(r0, col), self.height(r1, col), r1 - r0);
        (gx, gy)
    }

    /// Writes `<base>.json` (n, dx, seed) and `<base>.bin` (little-endian f64
    /// heights, row-major).
    pub fn write_dump(&self, base: &Path, seed: u64) -> Result<()> {
        let header = serde_json::json!({
            "format": "rsnpe-mesh",
            "version": 1,
            "n": self.n,
            "dx": self.dx,
            "seed": seed,
            "layout": "row-major f64 little-endian",
        });
        fs::write(base.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
        let mut out = std::io::BufWriter::new(fs::File::create(base.with_extension("bin"))?);
        for h in &self.heights {
            out.write_all(&h.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Synthesizes one realization of the field described by `spec`.
///
/// Deterministic in `spec.seed`. The sample RMS of the returned heights about
/// their mean equals `spec.sigma` exactly.
pub fn synthesize_grf(spec: &SurfaceSpec) -> Result<SurfaceMesh> {
    spec.validate()?;
    let n = spec.n;
    if spec.sigma == 0.0 {
        return Ok(SurfaceMesh::flat(n, spec.dx));
    }
    if spec.slope == 0.0 {
        return Err(Error::config(
            "surface.slope",
            "zero slope with nonzero height has an infinite correlation length",
        ));
    }
    let corr = spec.correlation_length();
    if corr < 2.0 * spec.dx * (1.0 - 1e-12) {
        return Err(Error::config(
            "surface.slope",
            format!(
                "correlation length {corr:.4} m is below two facets ({:.4} m); \
                 reduce the slope or increase sigma",
                2.0 * spec.dx
            ),
        ));
    }

    let big = ((n as f64) * PAD_FACTOR).ceil() as usize;
    let mut rng = stream_rng(spec.seed, Stream::Surface, 0);
    let mut field: Vec<Complex64> = (0..big * big)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();

    fft2(&mut field, big, false);

    // Amplitude filter: square root of the Gaussian spectrum exp(-k²l²/4).
    let dk = 2.0 * std::f64::consts::PI / (big as f64 * spec.dx);
    let freq = |i: usize| {
        let signed = if i <= big / 2 { i as f64 } else { i as f64 - big as f64 };
        signed * dk
    };
    let decay = corr * corr / 8.0;
    for row in 0..big {
        let ky = freq(row);
        for col in 0..big {
            let kx = freq(col);
            field[row * big + col] *= (-(kx * kx + ky * ky) * decay).exp();
        }
    }

    fft2(&mut field, big, true);

    let off = (big - n) / 2;
    let mut heights = Vec::with_capacity(n * n);
    for row in 0..n {
        let src = (row + off) * big + off;
        heights.extend(field[src..src + n].iter().map(|c| c.re));
    }

    let mean = heights.iter().sum::<f64>() / heights.len() as f64;
    let rms = (heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / heights.len() as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::config("surface", "synthesized field has zero variance"));
    }
    let gain = spec.sigma / rms;
    heights.iter_mut().for_each(|h| *h = (*h - mean) * gain);

    SurfaceMesh::new(n, spec.dx, heights)
}

/// In-place 2-D FFT of a `size × size` row-major grid. The inverse is
/// normalized by `1 / size²`.
fn fft2(data: &mut [Complex64], size: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(size)
    } else {
        planner.plan_fft_forward(size)
    };
    fft.process(data);
    let mut col = vec![Complex64::default(); size];
    for c in 0..size {
        for r in 0..size {
            col[r] = data[r * size + c];
        }
        fft.process(&mut col);
        for r in 0..size {
            data[r * size + c] = col[r];
        }
    }
    if inverse {
        let norm = 1.0 / (size * size) as f64;
        data.iter_mut().for_each(|v| *v *= norm);
    }
}

/// Sample RMS height about the mean and RMS gradient magnitude from central
/// differences over interior points.
pub fn estimate_surface_stats(mesh: &SurfaceMesh) -> Result<(f64, f64)> {
    let n = mesh.n();
    if n < 3 {
        return Err(Error::Insufficient(format!(
            "surface statistics need at least a 3x3 grid, got {n}x{n}"
        )));
    }
    let h = mesh.heights();
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    let sigma = (h.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / h.len() as f64).sqrt();

    let mut acc = 0.0;
    for row in 1..n - 1 {
        for col in 1..n - 1 {
            let (gx, gy) = mesh.gradient(row, col);
            acc += gx * gx + gy * gy;
        }
    }
    let slope = (acc / ((n - 2) * (n - 2)) as f64).sqrt();
    Ok((sigma, slope))
}
