//! Conditional density estimator `q(θ | h)`: a stack of rational-quadratic
//! spline coupling layers over a standard normal base.
//!
//! Coordinates inside the flow are standardized: each θ dimension by the
//! training mean and standard deviation, and the context as `log h`
//! standardized the same way. The density direction maps standardized θ to
//! the base variable `z` through [`spline::Knots::forward`] in every layer;
//! sampling runs the layers in reverse with the closed-form spline inverse.
//!
//! Layer `t` leaves dimension `t mod D` untouched and transforms the others
//! with splines whose parameters a small network predicts from the untouched
//! dimension and the context.

pub mod spline;
mod train;

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::TrainSample;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json, FORMAT_VERSION};
use crate::nn::{MlpCache, MlpShape};
use crate::rng::{stream_rng, Stream};
use spline::{params_per_dim, Knots};

pub use train::{train_flow, EpochLoss, History, TrainConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Architecture of the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub n_transforms: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub n_bins: usize,
    pub tail_bound: f64,
    pub context_dim: usize,
    pub theta_dim: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_transforms: 5,
            hidden_units: 64,
            hidden_layers: 1,
            n_bins: 8,
            tail_bound: 5.0,
            context_dim: 1,
            theta_dim: 3,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_transforms < 1 {
            return Err(Error::config("flow.n_transforms", "must be >= 1"));
        }
        if self.n_bins < 2 {
            return Err(Error::config("flow.n_bins", "must be >= 2"));
        }
        if !(self.tail_bound > 0.0) || !self.tail_bound.is_finite() {
            return Err(Error::config("flow.tail_bound", "must be finite and > 0"));
        }
        if self.hidden_units < 1 || self.hidden_layers < 1 {
            return Err(Error::config("flow.hidden_units", "need at least one hidden unit and layer"));
        }
        if self.theta_dim < 2 {
            return Err(Error::config("flow.theta_dim", "coupling layers need at least two dimensions"));
        }
        if self.context_dim != 1 {
            return Err(Error::config("flow.context_dim", "only a scalar context (h) is supported"));
        }
        Ok(())
    }

    /// Dimension left untouched by layer `t`.
    pub fn identity_dim(&self, t: usize) -> usize {
        t % self.theta_dim
    }

    /// Dimensions transformed by layer `t`, ascending.
    pub fn transformed_dims(&self, t: usize) -> Vec<usize> {
        let keep = self.identity_dim(t);
        (0..self.theta_dim).filter(|&d| d != keep).collect()
    }

    pub fn conditioner_shape(&self) -> MlpShape {
        let mut sizes = vec![1 + self.context_dim];
        sizes.extend(std::iter::repeat(self.hidden_units).take(self.hidden_layers));
        sizes.push((self.theta_dim - 1) * params_per_dim(self.n_bins));
        MlpShape::new(sizes)
    }

    pub fn param_count(&self) -> usize {
        self.n_transforms * self.conditioner_shape().param_count()
    }
}

/// Affine maps between physical and flow coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub theta_mean: Vec<f64>,
    pub theta_std: Vec<f64>,
    /// Mean of `ln h` over the training split.
    pub context_mean: f64,
    /// Standard deviation of `ln h` over the training split.
    pub context_std: f64,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            theta_mean: vec![0.0; dim],
            theta_std: vec![1.0; dim],
            context_mean: 0.0,
            context_std: 1.0,
        }
    }

    pub fn fit(samples: &[TrainSample]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Insufficient("standardization needs at least two samples".into()));
        }
        let n = samples.len() as f64;
        let mean_std = |vals: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = vals.collect();
            let m = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, if s > 0.0 { s } else { 1.0 })
        };
        let mut theta_mean = Vec::with_capacity(3);
        let mut theta_std = Vec::with_capacity(3);
        for d in 0..3 {
            let (m, s) = mean_std(&mut samples.iter().map(|t| t.theta.to_array()[d]));
            theta_mean.push(m);
            theta_std.push(s);
        }
        let (context_mean, context_std) = mean_std(&mut samples.iter().map(|t| log_h(t.h)));
        Ok(Self { theta_mean, theta_std, context_mean, context_std })
    }

    pub fn theta_to_flow(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.theta_mean.iter().zip(&self.theta_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn theta_from_flow(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.theta_mean.iter().zip(&self.theta_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn context_to_flow(&self, h: f64) -> f64 {
        (log_h(h) - self.context_mean) / self.context_std
    }

    /// `-Σ ln std`, the log-Jacobian from flow to physical coordinates.
    pub fn log_jacobian(&self) -> f64 {
        -self.theta_std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// `ln h` with zero mapped to the smallest positive double.
pub fn log_h(h: f64) -> f64 {
    h.max(f64::MIN_POSITIVE).ln()
}

/// A trained (or freshly initialized) flow. Immutable once built; share it
/// freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    standardizer: Standardizer,
    params: Vec<f64>,
    shape: MlpShape,
}

/// Scratch buffers for one sample's pass through the flow.
#[derive(Debug, Default)]
struct Trace {
    inputs: Vec<Vec<f64>>,
    caches: Vec<MlpCache>,
    knots: Vec<Vec<Knots>>,
}

impl FlowModel {
    /// A flow whose every layer is the identity; conditioner hidden layers
    /// get random weights, output layers start at zero.
    pub fn new(config: FlowConfig, standardizer: Standardizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if standardizer.theta_mean.len() != config.theta_dim || standardizer.theta_std.len() != config.theta_dim {
            return Err(Error::Shape("standardizer dimension does not match theta_dim".into()));
        }
        let shape = config.conditioner_shape();
        let per = shape.param_count();
        let mut params = vec![0.0; config.n_transforms * per];
        let mut rng = stream_rng(seed, Stream::Flow, 0);
        for chunk in params.chunks_mut(per) {
            shape.init(chunk, &mut rng, true);
        }
        Ok(Self { config, standardizer, params, shape })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Adds `U(-scale, scale)` noise to every weight. Used to move a fresh
    /// model away from the identity when probing its numerics.
    pub fn jitter_params(&mut self, scale: f64, seed: u64) {
        use rand::Rng;
        let mut rng = stream_rng(seed, Stream::Flow, 1);
        for p in &mut self.params {
            *p += rng.random_range(-scale..scale);
        }
    }

    fn layer_params<'a>(&self, params: &'a [f64], t: usize) -> &'a [f64] {
        let per = self.shape.param_count();
        &params[t * per..(t + 1) * per]
    }

    /// Offset of the context column of layer `t`'s first weight matrix.
    /// Exposed for tests that sever the conditioning.
    pub fn context_weight_indices(&self, t: usize) -> Vec<usize> {
        let per = self.shape.param_count();
        let n_in = self.shape.sizes[0];
        let n_out = self.shape.sizes[1];
        (0..n_out).map(|o| t * per + o * n_in + 1).collect()
    }

    fn pass(&self, params: &[f64], x: &[f64], ctx: f64, trace: &mut Trace) -> Result<(Vec<f64>, f64)> {
        let cfg = &self.config;
        let per_dim = params_per_dim(cfg.n_bins);
        trace.inputs.resize_with(cfg.n_transforms, Vec::new);
        trace.caches.resize_with(cfg.n_transforms, MlpCache::default);
        trace.knots.resize_with(cfg.n_transforms, Vec::new);
        let mut cur = x.to_vec();
        let mut logdet = 0.0;
        for t in 0..cfg.n_transforms {
            trace.inputs[t].clear();
            trace.inputs[t].extend_from_slice(&cur);
            let keep = cfg.identity_dim(t);
            let cache = &mut trace.caches[t];
            self.shape.forward(self.layer_params(params, t), &[cur[keep], ctx], cache);
            let out = cache.output();
            let dims = cfg.transformed_dims(t);
            let knots = &mut trace.knots[t];
            knots.resize_with(dims.len(), Knots::default);
            for (j, &d) in dims.iter().enumerate() {
                knots[j]
                    .decode_into(&out[j * per_dim..(j + 1) * per_dim], cfg.n_bins, cfg.tail_bound)
                    .map_err(|e| Error::NonFinite { transform: t, message: e.to_string() })?;
                let (y, l) = knots[j].forward(cur[d]);
                cur[d] = y;
                logdet += l;
            }
            if !logdet.is_finite() || cur.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { transform: t, message: "non-finite output".into() });
            }
        }
        Ok((cur, logdet))
    }

    /// `log q(x | c)` in flow coordinates: `x` standardized θ, `ctx`
    /// standardized `ln h`.
    pub fn log_prob_standardized(&self, x: &[f64], ctx: f64) -> Result<f64> {
        if x.len() != self.config.theta_dim {
            return Err(Error::Shape(format!("expected {} dims, got {}", self.config.theta_dim, x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) || !ctx.is_finite() {
            return Err(Error::Domain("log_prob inputs must be finite".into()));
        }
        let (z, logdet) = self.pass(&self.params, x, ctx, &mut Trace::default())?;
        Ok(std_normal_log_density(&z) + logdet)
    }

    /// `log q(θ | h)` in physical units.
    pub fn log_prob(&self, theta: &[f64], h: f64) -> Result<f64> {
        let x = self.standardizer.theta_to_flow(theta);
        let ctx = self.standardizer.context_to_flow(h);
        Ok(self.log_prob_standardized(&x, ctx)? + self.standardizer.log_jacobian())
    }

    /// Maps base draws `z` to flow coordinates for context `ctx`.
    pub fn push_forward(&self, z: &[f64], ctx: f64) -> Vec<f64> {
        let cfg = &self.config;
        let per_dim = params_per_dim(cfg.n_bins);
        let mut cur = z.to_vec();
        let mut cache = MlpCache::default();
        let mut knots = Knots::default();
        for t in (0..cfg.n_transforms).rev() {
            let keep = cfg.identity_dim(t);
            self.shape.forward(self.layer_params(&self.params, t), &[cur[keep], ctx], &mut cache);
            let out = cache.output();
            for (j, d) in cfg.transformed_dims(t).into_iter().enumerate() {
                knots
                    .decode_into(&out[j * per_dim..(j + 1) * per_dim], cfg.n_bins, cfg.tail_bound)
                    .expect("conditioner outputs have the right length");
                cur[d] = knots.inverse(cur[d]).0;
            }
        }
        cur
    }

    /// Inverse of [`FlowModel::push_forward`]: flow coordinates to base draws.
    pub fn to_base(&self, x: &[f64], ctx: f64) -> Result<Vec<f64>> {
        Ok(self.to_base_with_logdet(x, ctx)?.0)
    }

    /// Base draw for `x` and `ln |det ∂z/∂x|`.
    pub fn to_base_with_logdet(&self, x: &[f64], ctx: f64) -> Result<(Vec<f64>, f64)> {
        self.pass(&self.params, x, ctx, &mut Trace::default())
    }

    /// `n` posterior draws for relative power `h`, in physical units,
    /// `[ε, σ, m]` each. Deterministic in `seed`.
    pub fn sample(&self, h: f64, n: usize, seed: u64) -> Vec<[f64; 3]> {
        let ctx = self.standardizer.context_to_flow(h);
        self.sample_standardized(ctx, n, seed)
            .into_iter()
            .map(|x| {
                let v = self.standardizer.theta_from_flow(&x);
                [v[0], v[1], v[2]]
            })
            .collect()
    }

    /// `n` draws in flow coordinates.
    pub fn sample_standardized(&self, ctx: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        const CHUNK: usize = 512;
        let dim = self.config.theta_dim;
        let chunks = n.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = stream_rng(seed, Stream::Posterior, c as u64);
                let len = CHUNK.min(n - c * CHUNK);
                (0..len)
                    .map(|_| {
                        let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                        self.push_forward(&z, ctx)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Mean negative log-likelihood (flow coordinates) of `batch` and its
    /// gradient with respect to `params`.
    pub fn nll_and_grad(&self, params: &[f64], batch: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
        const CHUNK: usize = 64;
        let partials: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; params.len()];
                let mut loss = 0.0;
                let mut trace = Trace::default();
                for (x, ctx) in chunk {
                    loss += self.sample_backward(params, x, *ctx, &mut trace, &mut grad)?;
                }
                Ok((loss, grad))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for p in partials {
            let (l, g) = p?;
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    /// Mean negative log-likelihood without gradients.
    pub fn nll(&self, params: &[f64], batch: &[(Vec<f64>, f64)]) -> Result<f64> {
        const CHUNK: usize = 256;
        let partials: Vec<Result<f64>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut trace = Trace::default();
                chunk.iter().try_fold(0.0, |acc, (x, ctx)| {
                    let (z, logdet) = self.pass(params, x, *ctx, &mut trace)?;
                    Ok(acc - std_normal_log_density(&z) - logdet)
                })
            })
            .collect();
        let mut total = 0.0;
        for p in partials {
            total += p?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Negative log-likelihood of one sample; accumulates its gradient.
    fn sample_backward(
        &self,
        params: &[f64],
        x: &[f64],
        ctx: f64,
        trace: &mut Trace,
        grad: &mut [f64],
    ) -> Result<f64> {
        let cfg = &self.config;
        let (z, logdet) = self.pass(params, x, ctx, trace)?;
        let loss = -std_normal_log_density(&z) - logdet;

        let per_dim = params_per_dim(cfg.n_bins);
        let per_layer = self.shape.param_count();
        let mut g_cur = z;
        let mut g_spline = vec![0.0; self.shape.output_dim()];
        let mut g_in = [0.0; 2];
        for t in (0..cfg.n_transforms).rev() {
            let input = &trace.inputs[t];
            let keep = cfg.identity_dim(t);
            g_spline.iter_mut().for_each(|g| *g = 0.0);
            for (j, d) in cfg.transformed_dims(t).into_iter().enumerate() {
                let gp = &mut g_spline[j * per_dim..(j + 1) * per_dim];
                g_cur[d] = trace.knots[t][j].backward(input[d], g_cur[d], -1.0, gp);
            }
            let layer = t * per_layer..(t + 1) * per_layer;
            self.shape.backward(
                &params[layer.clone()],
                &trace.caches[t],
                &g_spline,
                &mut grad[layer],
                Some(&mut g_in),
            );
            g_cur[keep] += g_in[0];
        }
        Ok(loss)
    }

    /// Writes `<base>.json` (manifest) and `<base>.bin` (weights).
    pub fn save(&self, base: &Path) -> Result<()> {
        use std::io::Write as _;
        let manifest = ModelManifest {
            format: MODEL_FORMAT.into(),
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            standardizer: self.standardizer.clone(),
            identity_dims: (0..self.config.n_transforms).map(|t| self.config.identity_dim(t)).collect(),
            conditioner_sizes: self.shape.sizes.clone(),
            param_count: self.params.len(),
            weight_layout: WEIGHT_LAYOUT.into(),
            weights_sha256: crate::io::config_hash(&self.params)?,
        };
        write_json(&base.with_extension("json"), &manifest)?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(base.with_extension("bin"))?);
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let json = base.with_extension("json");
        let manifest: ModelManifest = read_json(&json)?;
        let bad = |message: String| Error::Format { path: json.clone(), message };
        if manifest.format != MODEL_FORMAT || manifest.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported model format {} v{}",
                manifest.format, manifest.format_version
            )));
        }
        let mut model = Self::new(manifest.config.clone(), manifest.standardizer.clone(), 0)?;
        if model.shape.sizes != manifest.conditioner_sizes || model.params.len() != manifest.param_count {
            return Err(bad("conditioner layout does not match the configuration".into()));
        }
        let bin = base.with_extension("bin");
        let bytes = std::fs::read(&bin)?;
        if bytes.len() != 8 * manifest.param_count {
            return Err(Error::Format {
                path: bin,
                message: format!("expected {} bytes, found {}", 8 * manifest.param_count, bytes.len()),
            });
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if crate::io::config_hash(&params)? != manifest.weights_sha256 {
            return Err(bad("weights checksum mismatch".into()));
        }
        model.params = params;
        Ok(model)
    }
}

const MODEL_FORMAT: &str = "rsnpe-flow";
const WEIGHT_LAYOUT: &str = "for each transform in order: for each conditioner layer in order: \
     weights row-major (out x in), then biases; f64 little-endian";

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    format_version: u32,
    config: FlowConfig,
    standardizer: Standardizer,
    identity_dims: Vec<usize>,
    conditioner_sizes: Vec<usize>,
    param_count: usize,
    weight_layout: String,
    weights_sha256: String,
}

/// Log-density of the standard normal in `z.len()` dimensions.
pub fn std_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * LN_2PI
}
