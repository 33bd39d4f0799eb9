//! The affordance model: per-channel encoders, observation averaging, convex
//! blending into one shared latent, and per-channel Gaussian decoders.
//!
//! Trajectory values are standardized per channel before encoding and
//! decoded means/deviations are mapped back, so every public input and output
//! is in the channel's own units.

mod blend;
pub(crate) mod layers;
mod io;
mod train;

pub use blend::{blend, flat_dirichlet, BlendWeights};
pub use io::{read_model, read_model_from, write_model, write_model_to, MODEL_MAGIC};
pub use train::{continue_training, plan_gradients, plan_loss, train, train_step, StepPlan, TrainConfig, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataspec::{validate_specs, ChannelSpec, Dataset, GenerationRequest};
use crate::error::{Error, Result};
use crate::numerics::{he_normal, ParamSet, Tape, Tensor, Var};

pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub conv_channels: [usize; 3],
    /// Times enter the networks as `time_scale·(t − 0.5)`, which lets
    /// first-layer units place sharp features inside the unit interval.
    pub time_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 128,
            hidden: 128,
            conv_channels: [16, 32, 64],
            time_scale: 10.0,
            seed: 0,
        }
    }
}

/// Affine standardization of one channel: `(x − mean[d]) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNorm {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl ChannelNorm {
    pub fn identity(dim: usize) -> Self {
        ChannelNorm {
            mean: vec![0.0; dim],
            scale: 1.0,
        }
    }

    /// Per-dim means and one shared scale, never below 1 so that small-valued
    /// channels keep their natural units (and σ keeps its floor).
    pub fn fit(spec: &ChannelSpec, data: &Dataset, channel: usize) -> Self {
        if spec.is_image() {
            return ChannelNorm {
                mean: vec![0.5],
                scale: 1.0,
            };
        }
        let dim = spec.dim;
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for s in &data.samples {
            if let Some(t) = &s.channels[channel] {
                for row in t.data().chunks(dim) {
                    sum.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                count += t.len() / dim;
            }
        }
        if count == 0 {
            return ChannelNorm::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
        let mut var = 0.0;
        for s in &data.samples {
            if let Some(t) = &s.channels[channel] {
                for row in t.data().chunks(dim) {
                    var += row.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
                }
            }
        }
        let std = (var / (count * dim) as f64).sqrt();
        ChannelNorm {
            mean,
            scale: std.max(1.0),
        }
    }

    fn mean_at(&self, i: usize) -> f64 {
        self.mean[i % self.mean.len()]
    }

    pub fn forward(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean_at(i)) / self.scale)
            .collect()
    }

    pub fn inverse(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.scale + self.mean_at(i))
            .collect()
    }
}

/// Observations of one channel.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    /// `values` is `[n, dim]`, row `i` observed at `times[i]`.
    Trajectory { times: Vec<f64>, values: Tensor },
    Image(Tensor),
}

impl Observation {
    /// Every row of a canonical-grid payload, or the image itself.
    pub fn full(spec: &ChannelSpec, payload: &Tensor) -> Observation {
        if spec.is_image() {
            Observation::Image(payload.clone())
        } else {
            let rows: Vec<usize> = (0..payload.shape()[0]).collect();
            Observation::rows(payload, &rows)
        }
    }

    /// Selected grid rows of a `[T, dim]` payload.
    pub fn rows(payload: &Tensor, rows: &[usize]) -> Observation {
        let total = payload.shape()[0];
        let dim = payload.shape()[1];
        let mut values = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            values.extend_from_slice(payload.row_slice(r));
        }
        Observation::Trajectory {
            times: rows.iter().map(|&r| crate::dataspec::grid_time(r, total)).collect(),
            values: Tensor::new(vec![rows.len(), dim], values).expect("row gather"),
        }
    }
}

/// Decoded distribution for one channel, in channel units.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPrediction {
    pub channel: String,
    /// Query times; empty for images.
    pub times: Vec<f64>,
    /// `[n_t, dim]` for trajectories, `[h, w]` for images.
    pub mean: Tensor,
    /// Same shape as `mean` for trajectories; a single value for images.
    pub sigma: Tensor,
}

impl ChannelPrediction {
    pub fn mean_sigma(&self) -> f64 {
        self.sigma.sum() / self.sigma.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceModel {
    pub config: ModelConfig,
    pub specs: Vec<ChannelSpec>,
    pub norms: Vec<ChannelNorm>,
    pub params: ParamSet,
}

/// Standard-normal init scaled by `sqrt(gain / fan_in)`.
pub(crate) fn init(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    he_normal(shape, fan_in, rng).map(|v| v * (gain / 2.0).sqrt())
}

impl AffordanceModel {
    /// Fresh parameters from `config.seed`, with normalization fitted to `data`.
    pub fn for_dataset(data: &Dataset, config: ModelConfig) -> Result<Self> {
        let norms = data
            .specs
            .iter()
            .enumerate()
            .map(|(c, spec)| ChannelNorm::fit(spec, data, c))
            .collect();
        AffordanceModel::new(data.specs.clone(), norms, config)
    }

    pub fn new(specs: Vec<ChannelSpec>, norms: Vec<ChannelNorm>, config: ModelConfig) -> Result<Self> {
        validate_specs(&specs)?;
        if specs.is_empty() {
            return Err(Error::invalid("model needs at least one channel"));
        }
        if norms.len() != specs.len() {
            return Err(Error::invalid("one normalization per channel required"));
        }
        if config.latent_dim == 0 || config.hidden == 0 || config.conv_channels.contains(&0) {
            return Err(Error::invalid("model sizes must be positive"));
        }
        if !(config.time_scale > 0.0 && config.time_scale.is_finite()) {
            return Err(Error::invalid("time_scale must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamSet::new();
        let (d, h) = (config.latent_dim, config.hidden);
        for spec in &specs {
            let n = &spec.name;
            if spec.is_image() {
                layers::insert_encoder(&mut p, spec, config.conv_channels, d, &mut rng)?;
                layers::insert_decoder(&mut p, spec, config.conv_channels, d, &mut rng)?;
            } else {
                let dim = spec.dim;
                layers::insert_mlp(&mut p, &format!("{n}/enc"), &[dim + 1, h, h, d], &mut rng)?;
                layers::insert_mlp(&mut p, &format!("{n}/dec"), &[d + 1, h, h, 2 * dim], &mut rng)?;
            }
        }
        Ok(AffordanceModel {
            config,
            specs,
            norms,
            params: p,
        })
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Errors unless `specs` declares exactly this model's channels.
    pub fn check_specs(&self, specs: &[ChannelSpec]) -> Result<()> {
        if specs != self.specs.as_slice() {
            let names = |s: &[ChannelSpec]| s.iter().map(|c| c.name.clone()).collect::<Vec<_>>().join(",");
            return Err(Error::ChannelMismatch(format!(
                "model channels [{}] vs data channels [{}]",
                names(&self.specs),
                names(specs)
            )));
        }
        Ok(())
    }

    fn time_feature(&self, t: f64) -> f64 {
        self.config.time_scale * (t - 0.5)
    }

    /// Encodes and averages one channel's observations into a `[1, d_L]` latent.
    pub fn encode(&self, tape: &mut Tape, channel: usize, obs: &Observation) -> Result<Var> {
        let spec = self
            .specs
            .get(channel)
            .ok_or_else(|| Error::UnknownChannel(format!("#{channel}")))?;
        let norm = &self.norms[channel];
        let n = &spec.name;
        match (obs, spec.is_image()) {
            (Observation::Trajectory { times, values }, false) => {
                let (rows, dim) = values.dims2("encode")?;
                if rows == 0 || rows != times.len() {
                    return Err(Error::invalid(format!("channel `{n}`: empty or mismatched observations")));
                }
                if dim != spec.dim {
                    return Err(Error::shape("encode", format!("`{n}` rows have {dim} values, expected {}", spec.dim)));
                }
                let mut input = Vec::with_capacity(rows * (dim + 1));
                for (i, &t) in times.iter().enumerate() {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::invalid(format!("channel `{n}`: t={t} outside [0,1]")));
                    }
                    input.push(self.time_feature(t));
                    input.extend(norm.forward(values.row_slice(i)));
                }
                let x = tape.input(Tensor::new(vec![rows, dim + 1], input)?)?;
                let per_obs = layers::mlp(tape, &format!("{n}/enc"), x, 3)?;
                tape.mean_rows(per_obs)
            }
            (Observation::Image(img), true) => layers::encode_image(tape, spec, norm, img),
            _ => Err(Error::invalid(format!("observation kind does not match channel `{n}`"))),
        }
    }

    /// `(μ, σ)` in normalized units: trajectories `[n_t, dim]` each; images
    /// `[1, h, w]` and `[1, 1]`.
    pub fn decode(&self, tape: &mut Tape, channel: usize, latent: Var, times: &[f64]) -> Result<(Var, Var)> {
        let spec = self
            .specs
            .get(channel)
            .ok_or_else(|| Error::UnknownChannel(format!("#{channel}")))?;
        let n = &spec.name;
        if spec.is_image() {
            layers::decode_image(tape, spec, self.config.conv_channels, latent)
        } else {
            if times.is_empty() || times.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::invalid(format!("channel `{n}`: target times must be nonempty and within [0,1]")));
            }
            let rep = tape.repeat_rows(latent, times.len())?;
            let feats = times.iter().map(|&t| self.time_feature(t)).collect();
            let t = tape.input(Tensor::new(vec![times.len(), 1], feats)?)?;
            let x = tape.concat_cols(rep, t)?;
            let out = layers::mlp(tape, &format!("{n}/dec"), x, 3)?;
            let mu = tape.slice_cols(out, 0, spec.dim)?;
            let raw = tape.slice_cols(out, spec.dim, 2 * spec.dim)?;
            let s = tape.softplus(raw)?;
            let sigma = tape.add_scalar(s, SIGMA_FLOOR)?;
            Ok((mu, sigma))
        }
    }

    /// Encodes every channel in the weights' support and blends on the tape.
    pub fn blend_on_tape(
        &self,
        tape: &mut Tape,
        observed: &[(usize, Observation)],
        weights: &BlendWeights,
    ) -> Result<Var> {
        if weights.len() != self.specs.len() {
            return Err(Error::InvalidWeights(format!("{} weights for {} channels", weights.len(), self.specs.len())));
        }
        let mut terms = Vec::new();
        for c in weights.support() {
            let obs = observed
                .iter()
                .find(|(oc, _)| *oc == c)
                .map(|(_, o)| o)
                .ok_or_else(|| Error::InvalidWeights(format!("nonzero weight on unobserved channel `{}`", self.specs[c].name)))?;
            let l = self.encode(tape, c, obs)?;
            terms.push((l, weights.as_slice()[c]));
        }
        tape.weighted_sum(&terms)
    }

    /// Blended affordance latent for the given observations.
    pub fn latent(&self, observed: &[(usize, Observation)], weights: &BlendWeights) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let l = self.blend_on_tape(&mut tape, observed, weights)?;
        Ok(tape.value(l).data().to_vec())
    }

    /// Per-channel latent (before blending).
    pub fn channel_latent(&self, channel: usize, obs: &Observation) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let l = self.encode(&mut tape, channel, obs)?;
        Ok(tape.value(l).data().to_vec())
    }

    /// Equal-weight conditioning on `observed`, decoding `outputs` at `times`.
    pub fn predict(&self, observed: &[(usize, Observation)], outputs: &[usize], times: &[f64]) -> Result<Vec<ChannelPrediction>> {
        if observed.is_empty() {
            return Err(Error::invalid("at least one observed channel is required"));
        }
        let mut idx: Vec<usize> = observed.iter().map(|(c, _)| *c).collect();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() != observed.len() {
            return Err(Error::invalid("channel observed twice"));
        }
        let weights = BlendWeights::equal(self.specs.len(), &idx)?;
        let mut tape = Tape::new(&self.params);
        let latent = self.blend_on_tape(&mut tape, observed, &weights)?;
        let mut out = Vec::with_capacity(outputs.len());
        for &c in outputs {
            let spec = self
                .specs
                .get(c)
                .ok_or_else(|| Error::UnknownChannel(format!("#{c}")))?;
            let (mu, sigma) = self.decode(&mut tape, c, latent, times)?;
            let norm = &self.norms[c];
            let mean = norm.inverse(tape.value(mu).data());
            let sig: Vec<f64> = tape.value(sigma).data().iter().map(|s| s * norm.scale).collect();
            let (mean, sigma, times) = if spec.is_image() {
                let shape = spec.payload_shape();
                (Tensor::new(shape, mean)?, Tensor::new(vec![1], sig)?, Vec::new())
            } else {
                let shape = vec![times.len(), spec.dim];
                (Tensor::new(shape.clone(), mean)?, Tensor::new(shape, sig)?, times.to_vec())
            };
            out.push(ChannelPrediction {
                channel: spec.name.clone(),
                times,
                mean,
                sigma,
            });
        }
        Ok(out)
    }

    /// Serves a [`GenerationRequest`].
    pub fn generate(&self, request: &GenerationRequest) -> Result<Vec<ChannelPrediction>> {
        request.validate(&self.specs)?;
        if request.observed.is_empty() {
            return Err(Error::invalid("request observes no channel"));
        }
        let mut observed = Vec::new();
        for (name, points) in &request.observed {
            let c = self.channel_index(name)?;
            let spec = &self.specs[c];
            let obs = if spec.is_image() {
                Observation::Image(Tensor::new(spec.payload_shape(), points[0].values.clone())?)
            } else {
                let mut values = Vec::with_capacity(points.len() * spec.dim);
                for p in points {
                    values.extend_from_slice(&p.values);
                }
                Observation::Trajectory {
                    times: points.iter().map(|p| p.t.unwrap_or_default()).collect(),
                    values: Tensor::new(vec![points.len(), spec.dim], values)?,
                }
            };
            observed.push((c, obs));
        }
        let outputs = request
            .outputs
            .iter()
            .map(|n| self.channel_index(n))
            .collect::<Result<Vec<_>>>()?;
        self.predict(&observed, &outputs, &request.target_times())
    }
}
