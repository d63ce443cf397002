//! Monotone rational-quadratic splines on `[-B, B]` with identity tails.
//!
//! One scalar spline is described by `3K - 1` unconstrained numbers: `K` bin
//! width logits, `K` bin height logits, and `K - 1` interior derivative
//! pre-activations. Widths and heights go through a softmax with a floor,
//! interior derivatives through a shifted softplus that maps zero to one, and
//! the two boundary derivatives are pinned to one so the spline joins the
//! linear tails smoothly. All-zero parameters therefore give the identity.
//!
//! Inside bin `k`, with `ξ = (x - x_k)/w_k` and `s = h_k/w_k`:
//!
//! ```text
//! y = y_k + h_k (s ξ² + d_k ξ(1-ξ)) / (s + (d_k + d_{k+1} - 2s) ξ(1-ξ))
//! ```

use crate::error::{Error, Result};

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Number of unconstrained parameters for a spline with `n_bins` bins.
pub const fn params_per_dim(n_bins: usize) -> usize {
    3 * n_bins - 1
}

/// Offset that makes `MIN_DERIVATIVE + softplus(0 + shift) = 1`.
fn derivative_shift() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|l| (l - max).exp()));
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
}

/// Decoded knots of one spline.
#[derive(Debug, Clone, Default)]
pub struct Knots {
    /// Softmax of width logits (before the floor).
    width_soft: Vec<f64>,
    height_soft: Vec<f64>,
    /// Knot positions, `K + 1` each.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Derivatives at the knots, `K + 1`.
    pub ds: Vec<f64>,
    /// Interior derivative pre-activations (with shift), `K - 1`.
    d_pre: Vec<f64>,
}

impl Knots {
    pub fn n_bins(&self) -> usize {
        self.xs.len() - 1
    }

    /// Decodes `params` for a spline with `n_bins` bins on `[-bound, bound]`.
    pub fn decode(params: &[f64], n_bins: usize, bound: f64) -> Result<Self> {
        let mut k = Knots::default();
        k.decode_into(params, n_bins, bound)?;
        Ok(k)
    }

    pub fn decode_into(&mut self, params: &[f64], n_bins: usize, bound: f64) -> Result<()> {
        if params.len() != params_per_dim(n_bins) {
            return Err(Error::Shape(format!(
                "spline with {n_bins} bins needs {} parameters, got {}",
                params_per_dim(n_bins),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("spline parameters must be finite".into()));
        }
        let (uw, rest) = params.split_at(n_bins);
        let (uh, ud) = rest.split_at(n_bins);
        softmax(uw, &mut self.width_soft);
        softmax(uh, &mut self.height_soft);
        cumulate(&self.width_soft, MIN_BIN_WIDTH, bound, &mut self.xs);
        cumulate(&self.height_soft, MIN_BIN_HEIGHT, bound, &mut self.ys);
        let shift = derivative_shift();
        self.d_pre.clear();
        self.d_pre.extend(ud.iter().map(|u| u + shift));
        self.ds.clear();
        self.ds.push(1.0);
        self.ds.extend(self.d_pre.iter().map(|&u| MIN_DERIVATIVE + softplus(u)));
        self.ds.push(1.0);
        Ok(())
    }

    fn bin_of(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        // Largest i with knots[i] <= v, clipped to a valid bin.
        match knots[1..k].iter().position(|&kn| v < kn) {
            Some(i) => i,
            None => k - 1,
        }
    }

    fn bound(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// `(y, log dy/dx)` at `x`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        let b = self.bound();
        if !(-b..=b).contains(&x) {
            return (x, 0.0);
        }
        let bin = Self::bin_of(&self.xs, x);
        let local = Local::new(self, bin, x);
        (local.y(), local.log_deriv())
    }

    /// `(x, log dx/dy)` at `y`.
    pub fn inverse(&self, y: f64) -> (f64, f64) {
        let b = self.bound();
        if !(-b..=b).contains(&y) {
            return (y, 0.0);
        }
        let k = Self::bin_of(&self.ys, y);
        let (xk, wk) = (self.xs[k], self.xs[k + 1] - self.xs[k]);
        let (yk, hk) = (self.ys[k], self.ys[k + 1] - self.ys[k]);
        let (dk, dk1) = (self.ds[k], self.ds[k + 1]);
        let s = hk / wk;
        let dy = y - yk;
        let t = dk + dk1 - 2.0 * s;
        let a = hk * (s - dk) + dy * t;
        let bq = hk * dk - dy * t;
        let c = -s * dy;
        let disc = (bq * bq - 4.0 * a * c).max(0.0);
        let root = (2.0 * c / (-bq - disc.sqrt())).clamp(0.0, 1.0);
        let x = xk + root * wk;
        let local = Local::at_xi(self, k, root);
        (x, -local.log_deriv())
    }

    /// Backward pass of [`Knots::forward`]: given upstream gradients `g_y`
    /// and `g_logdet`, accumulates parameter gradients into `g_params`
    /// (length `3K - 1`) and returns `∂/∂x`.
    pub fn backward(&self, x: f64, g_y: f64, g_logdet: f64, g_params: &mut [f64]) -> f64 {
        let b = self.bound();
        if !(-b..=b).contains(&x) {
            return g_y;
        }
        let n = self.n_bins();
        let bin = Self::bin_of(&self.xs, x);
        let l = Local::new(self, bin, x);
        let p = l.partials();

        let g_xi = g_y * p.y_xi + g_logdet * p.l_xi;
        let g_s = g_y * p.y_s + g_logdet * p.l_s;
        let g_dk = g_y * p.y_dk + g_logdet * p.l_dk;
        let g_dk1 = g_y * p.y_dk1 + g_logdet * p.l_dk1;

        let g_x = g_xi / l.wk;
        let g_xk = -g_xi / l.wk;
        let g_wk = -(g_xi * l.xi + g_s * l.s) / l.wk;
        let g_hk = g_y * p.y_hk + g_s / l.wk;
        let g_yk = g_y;

        let (g_uw, rest) = g_params.split_at_mut(n);
        let (g_uh, g_ud) = rest.split_at_mut(n);
        knot_backward(&self.width_soft, b, bin, g_xk, g_wk, g_uw);
        knot_backward(&self.height_soft, b, bin, g_yk, g_hk, g_uh);
        for (idx, g) in [(bin, g_dk), (bin + 1, g_dk1)] {
            if idx >= 1 && idx < n {
                g_ud[idx - 1] += g * sigmoid(self.d_pre[idx - 1]);
            }
        }
        g_x
    }
}

/// Knot positions from softmax weights: floor, cumulative sum, pin the ends.
fn cumulate(soft: &[f64], min: f64, bound: f64, out: &mut Vec<f64>) {
    let k = soft.len();
    let scale = 1.0 - min * k as f64;
    out.clear();
    out.push(-bound);
    let mut acc = 0.0;
    for s in &soft[..k - 1] {
        acc += min + scale * s;
        out.push(-bound + 2.0 * bound * acc);
    }
    out.push(bound);
}

/// Gradient of a loss through knot `start = knots[bin]` and
/// `width = knots[bin+1] - knots[bin]` back to the logits.
fn knot_backward(soft: &[f64], bound: f64, bin: usize, g_start: f64, g_width: f64, g_logits: &mut [f64]) {
    let k = soft.len();
    // ∂/∂knots[i]; only interior knots depend on the logits.
    let mut g_knot = vec![0.0; k + 1];
    g_knot[bin] += g_start - g_width;
    g_knot[bin + 1] += g_width;
    // knots[i] = -B + 2B Σ_{j<i} w_j  for 1 <= i <= K-1.
    let mut g_w = vec![0.0; k];
    let mut suffix = 0.0;
    for j in (0..k).rev() {
        if j + 1 <= k - 1 {
            suffix += g_knot[j + 1];
        }
        g_w[j] = 2.0 * bound * suffix;
    }
    let scale = 1.0 - MIN_BIN_WIDTH * k as f64;
    debug_assert_eq!(MIN_BIN_WIDTH, MIN_BIN_HEIGHT);
    let dot: f64 = soft.iter().zip(&g_w).map(|(s, g)| s * g).sum();
    for j in 0..k {
        g_logits[j] += scale * soft[j] * (g_w[j] - dot);
    }
}

/// Bin-local quantities at one evaluation point.
struct Local {
    xi: f64,
    wk: f64,
    yk: f64,
    hk: f64,
    s: f64,
    dk: f64,
    dk1: f64,
}

struct Partials {
    y_xi: f64,
    y_s: f64,
    y_dk: f64,
    y_dk1: f64,
    y_hk: f64,
    l_xi: f64,
    l_s: f64,
    l_dk: f64,
    l_dk1: f64,
}

impl Local {
    fn new(k: &Knots, bin: usize, x: f64) -> Self {
        let wk = k.xs[bin + 1] - k.xs[bin];
        let xi = ((x - k.xs[bin]) / wk).clamp(0.0, 1.0);
        Self::at_xi(k, bin, xi)
    }

    fn at_xi(k: &Knots, bin: usize, xi: f64) -> Self {
        let wk = k.xs[bin + 1] - k.xs[bin];
        let hk = k.ys[bin + 1] - k.ys[bin];
        Self {
            xi,
            wk,
            yk: k.ys[bin],
            hk,
            s: hk / wk,
            dk: k.ds[bin],
            dk1: k.ds[bin + 1],
        }
    }

    fn num(&self) -> f64 {
        self.s * self.xi * self.xi + self.dk * self.xi * (1.0 - self.xi)
    }

    fn den(&self) -> f64 {
        self.s + (self.dk + self.dk1 - 2.0 * self.s) * self.xi * (1.0 - self.xi)
    }

    fn deriv_num(&self) -> f64 {
        let xi = self.xi;
        self.dk1 * xi * xi + 2.0 * self.s * xi * (1.0 - xi) + self.dk * (1.0 - xi) * (1.0 - xi)
    }

    fn y(&self) -> f64 {
        self.yk + self.hk * self.num() / self.den()
    }

    fn log_deriv(&self) -> f64 {
        2.0 * self.s.ln() + self.deriv_num().ln() - 2.0 * self.den().ln()
    }

    fn partials(&self) -> Partials {
        let (xi, s, dk, dk1) = (self.xi, self.s, self.dk, self.dk1);
        let a = xi * (1.0 - xi);
        let a_xi = 1.0 - 2.0 * xi;
        let n = self.num();
        let d = self.den();
        let m = self.deriv_num();

        let n_xi = 2.0 * s * xi + dk * a_xi;
        let n_s = xi * xi;
        let n_dk = a;

        let d_xi = (dk + dk1 - 2.0 * s) * a_xi;
        let d_s = 1.0 - 2.0 * a;
        let d_dk = a;
        let d_dk1 = a;

        let m_xi = 2.0 * dk1 * xi + 2.0 * s * a_xi - 2.0 * dk * (1.0 - xi);
        let m_s = 2.0 * a;
        let m_dk = (1.0 - xi) * (1.0 - xi);
        let m_dk1 = xi * xi;

        let ratio = |nv: f64, dv: f64| self.hk * (nv * d - n * dv) / (d * d);
        Partials {
            y_xi: ratio(n_xi, d_xi),
            y_s: ratio(n_s, d_s),
            y_dk: ratio(n_dk, d_dk),
            y_dk1: ratio(0.0, d_dk1),
            y_hk: n / d,
            l_xi: m_xi / m - 2.0 * d_xi / d,
            l_s: 2.0 / s + m_s / m - 2.0 * d_s / d,
            l_dk: m_dk / m - 2.0 * d_dk / d,
            l_dk1: m_dk1 / m - 2.0 * d_dk1 / d,
        }
    }
}

/// Elementwise spline transform of `x`. `params` holds `x.len()` blocks of
/// `3·n_bins - 1` values. Returns the transformed vector and the summed log
/// absolute derivative.
pub fn rqs_forward(x: &[f64], params: &[f64], n_bins: usize, bound: f64) -> Result<(Vec<f64>, f64)> {
    apply(x, params, n_bins, bound, Knots::forward)
}

/// Inverse of [`rqs_forward`]; the returned log-determinant is negated.
pub fn rqs_inverse(y: &[f64], params: &[f64], n_bins: usize, bound: f64) -> Result<(Vec<f64>, f64)> {
    apply(y, params, n_bins, bound, Knots::inverse)
}

fn apply(
    v: &[f64],
    params: &[f64],
    n_bins: usize,
    bound: f64,
    f: fn(&Knots, f64) -> (f64, f64),
) -> Result<(Vec<f64>, f64)> {
    let per = params_per_dim(n_bins);
    if params.len() != per * v.len() {
        return Err(Error::Shape(format!(
            "{} inputs need {} spline parameters, got {}",
            v.len(),
            per * v.len(),
            params.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("spline input must be finite".into()));
    }
    let mut out = Vec::with_capacity(v.len());
    let mut logdet = 0.0;
    let mut knots = Knots::default();
    for (x, p) in v.iter().zip(params.chunks(per)) {
        knots.decode_into(p, n_bins, bound)?;
        let (y, l) = f(&knots, *x);
        out.push(y);
        logdet += l;
    }
    Ok((out, logdet))
}
