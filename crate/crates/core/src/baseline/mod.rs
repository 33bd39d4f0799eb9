//! Next-step comparator: each channel's current state is embedded by its own
//! encoder, embeddings are randomly dropped during training, concatenated,
//! and a shared trunk predicts every channel one grid step ahead. Generation
//! is an autoregressive rollout over the canonical grid.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataspec::{grid_time, read_arrays, validate_specs, write_arrays, AffordanceSample, ChannelSpec, Dataset, GenerationRequest, Split};
use crate::error::{Error, Result};
use crate::model::layers::{self, decode_image, encode_image, mlp};
use crate::model::{ChannelNorm, ChannelPrediction, TrainConfig, TrainReport, SIGMA_FLOOR};
use crate::numerics::{adam_step, AdamConfig, OptimizerState, ParamSet, Tape, Tensor, Var};

pub const BASELINE_MAGIC: [u8; 4] = *b"AFFB";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Nll,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaselineVariant {
    pub loss: Loss,
    pub with_time: bool,
}

impl BaselineVariant {
    pub const ALL: [BaselineVariant; 4] = [
        BaselineVariant { loss: Loss::Nll, with_time: true },
        BaselineVariant { loss: Loss::Nll, with_time: false },
        BaselineVariant { loss: Loss::Mse, with_time: true },
        BaselineVariant { loss: Loss::Mse, with_time: false },
    ];
}

impl fmt::Display for BaselineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let loss = match self.loss {
            Loss::Nll => "nll",
            Loss::Mse => "mse",
        };
        let time = if self.with_time { "with" } else { "without" };
        write!(f, "{loss}-{time}-time")
    }
}

impl FromStr for BaselineVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineVariant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = BaselineVariant::ALL.iter().map(|v| v.to_string()).collect();
                Error::invalid(format!("unknown baseline variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub conv_channels: [usize; 3],
    pub time_scale: f64,
    /// Transitions per training step.
    pub batch: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            latent_dim: 128,
            hidden: 128,
            conv_channels: [16, 32, 64],
            time_scale: 10.0,
            batch: 10,
            seed: 0,
        }
    }
}

/// Current state of one channel fed to the network.
enum State<'a> {
    /// Normalized `[b, dim]` rows.
    Rows(Tensor),
    Image(&'a Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub variant: BaselineVariant,
    pub config: BaselineConfig,
    pub specs: Vec<ChannelSpec>,
    pub norms: Vec<ChannelNorm>,
    pub params: ParamSet,
}

/// Keeps each available channel with probability 1/2, redrawing until at
/// least one is kept.
pub fn dropout_mask(n_channels: usize, available: &[usize], rng: &mut impl Rng) -> Result<Vec<bool>> {
    if available.is_empty() {
        return Err(Error::invalid("sample has no available channel"));
    }
    loop {
        let mut keep = vec![false; n_channels];
        for &c in available {
            keep[c] = rng.random_bool(0.5);
        }
        if keep.iter().any(|&k| k) {
            return Ok(keep);
        }
    }
}

impl BaselineModel {
    pub fn for_dataset(data: &Dataset, variant: BaselineVariant, config: BaselineConfig) -> Result<Self> {
        let norms = data
            .specs
            .iter()
            .enumerate()
            .map(|(c, s)| ChannelNorm::fit(s, data, c))
            .collect();
        BaselineModel::new(data.specs.clone(), norms, variant, config)
    }

    pub fn new(specs: Vec<ChannelSpec>, norms: Vec<ChannelNorm>, variant: BaselineVariant, config: BaselineConfig) -> Result<Self> {
        validate_specs(&specs)?;
        if specs.is_empty() || norms.len() != specs.len() {
            return Err(Error::invalid("baseline needs channels with one normalization each"));
        }
        if config.latent_dim == 0 || config.hidden == 0 || config.batch == 0 || config.conv_channels.contains(&0) {
            return Err(Error::invalid("baseline sizes must be positive"));
        }
        let mut lengths = specs.iter().filter(|s| !s.is_image()).map(|s| s.length);
        if let Some(first) = lengths.next() {
            if first < 2 || lengths.any(|l| l != first) {
                return Err(Error::invalid("baseline trajectories must share one length ≥ 2"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamSet::new();
        let (d, h) = (config.latent_dim, config.hidden);
        let extra = usize::from(variant.with_time);
        for spec in &specs {
            if spec.is_image() {
                layers::insert_encoder(&mut p, spec, config.conv_channels, d, &mut rng)?;
            } else {
                layers::insert_mlp(&mut p, &format!("{}/enc", spec.name), &[spec.dim + extra, h, h, d], &mut rng)?;
            }
        }
        layers::insert_mlp(&mut p, "trunk", &[specs.len() * d, h, h], &mut rng)?;
        for spec in &specs {
            if spec.is_image() {
                layers::insert_decoder(&mut p, spec, config.conv_channels, h, &mut rng)?;
            } else {
                layers::insert_mlp(&mut p, &format!("{}/head", spec.name), &[h, h, 2 * spec.dim], &mut rng)?;
            }
        }
        Ok(BaselineModel {
            variant,
            config,
            specs,
            norms,
            params: p,
        })
    }

    /// Shared trajectory length (the canonical grid of every channel).
    pub fn horizon(&self) -> usize {
        self.specs
            .iter()
            .find(|s| !s.is_image())
            .map_or(crate::dataspec::CANONICAL_T, |s| s.length)
    }

    fn channel_index(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    fn time_feature(&self, t: f64) -> f64 {
        self.config.time_scale * (t - 0.5)
    }

    /// Normalized `[rows.len(), dim(+1)]` encoder input for a trajectory.
    fn rows_state(&self, c: usize, payload: &Tensor, rows: &[usize]) -> Result<Tensor> {
        let spec = &self.specs[c];
        let values: Vec<Vec<f64>> = rows.iter().map(|&r| payload.row_slice(r).to_vec()).collect();
        let times: Vec<f64> = rows.iter().map(|&r| grid_time(r, spec.length)).collect();
        self.state_from(c, &values, &times)
    }

    fn state_from(&self, c: usize, values: &[Vec<f64>], times: &[f64]) -> Result<Tensor> {
        let dim = self.specs[c].dim;
        let width = dim + usize::from(self.variant.with_time);
        let mut data = Vec::with_capacity(values.len() * width);
        for (v, &t) in values.iter().zip(times) {
            if self.variant.with_time {
                data.push(self.time_feature(t));
            }
            data.extend(self.norms[c].forward(v));
        }
        Tensor::new(vec![values.len(), width], data)
    }

    /// Predicted next states `(μ, σ)` (normalized) for the channels in
    /// `outputs`; `states[c] = None` drops that channel's embedding.
    fn forward(&self, tape: &mut Tape, states: &[Option<State>], batch: usize, outputs: &[usize]) -> Result<Vec<(usize, Var, Var)>> {
        let d = self.config.latent_dim;
        let mut joint: Option<Var> = None;
        for (c, spec) in self.specs.iter().enumerate() {
            let e = match &states[c] {
                None => tape.input(Tensor::zeros(&[batch, d]))?,
                Some(State::Image(img)) => {
                    let e = encode_image(tape, spec, &self.norms[c], img)?;
                    tape.repeat_rows(e, batch)?
                }
                Some(State::Rows(rows)) => {
                    let x = tape.input(rows.clone())?;
                    mlp(tape, &format!("{}/enc", spec.name), x, 3)?
                }
            };
            joint = Some(match joint {
                None => e,
                Some(j) => tape.concat_cols(j, e)?,
            });
        }
        let joint = joint.ok_or_else(|| Error::invalid("no channels"))?;
        let hidden = mlp(tape, "trunk", joint, 2)?;
        let hidden = tape.relu(hidden)?;
        let mut out = Vec::with_capacity(outputs.len());
        for &c in outputs {
            let spec = &self.specs[c];
            if spec.is_image() {
                // the image is static, so one decode from the pooled trunk suffices
                let pooled = tape.mean_rows(hidden)?;
                let (mu, sigma) = decode_image(tape, spec, self.config.conv_channels, pooled)?;
                out.push((c, mu, sigma));
            } else {
                let o = mlp(tape, &format!("{}/head", spec.name), hidden, 2)?;
                let mu = tape.slice_cols(o, 0, spec.dim)?;
                let raw = tape.slice_cols(o, spec.dim, 2 * spec.dim)?;
                let s = tape.softplus(raw)?;
                let sigma = tape.add_scalar(s, SIGMA_FLOOR)?;
                out.push((c, mu, sigma));
            }
        }
        Ok(out)
    }

    /// Loss of predicting rows `from + 1` given rows `from`, with `keep`
    /// selecting which channel embeddings are visible.
    pub fn transition_loss(&self, tape: &mut Tape, sample: &AffordanceSample, from: &[usize], keep: &[bool]) -> Result<Var> {
        let avail = sample.available();
        let mut states = Vec::with_capacity(self.specs.len());
        for (c, spec) in self.specs.iter().enumerate() {
            let state = match (&sample.channels[c], keep[c]) {
                (Some(p), true) if spec.is_image() => Some(State::Image(p)),
                (Some(p), true) => Some(State::Rows(self.rows_state(c, p, from)?)),
                _ => None,
            };
            states.push(state);
        }
        let preds = self.forward(tape, &states, from.len(), &avail)?;
        let mut losses = Vec::with_capacity(preds.len());
        for (c, mu, sigma) in preds {
            let spec = &self.specs[c];
            let p = sample.channels[c].as_ref().expect("available channel");
            let target = if spec.is_image() {
                Tensor::new(vec![1, p.len()], self.norms[c].forward(p.data()))?
            } else {
                let mut vals = Vec::with_capacity(from.len() * spec.dim);
                for &r in from {
                    vals.extend(self.norms[c].forward(p.row_slice(r + 1)));
                }
                Tensor::new(vec![from.len(), spec.dim], vals)?
            };
            losses.push(match self.variant.loss {
                Loss::Nll => tape.gaussian_nll(mu, sigma, target)?,
                Loss::Mse => tape.mse(mu, target)?,
            });
        }
        tape.mean_of(&losses)
    }

    fn train_step(&mut self, optimizer: &mut OptimizerState, sample: &AffordanceSample, clip: f64, rng: &mut impl Rng) -> Result<f64> {
        sample.validate(&self.specs)?;
        let keep = dropout_mask(self.specs.len(), &sample.available(), rng)?;
        let last = self.horizon() - 1;
        let from: Vec<usize> = (0..self.config.batch).map(|_| rng.random_range(0..last)).collect();
        let mut tape = Tape::new(&self.params);
        let loss = self.transition_loss(&mut tape, sample, &from, &keep)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss, None)?;
        if clip > 0.0 {
            grads.clip_norm(clip);
        }
        adam_step(&mut self.params, &grads, optimizer)?;
        Ok(value)
    }

    /// Autoregressive rollout over the grid. `initial` holds the observed
    /// channels: a `[dim]` (or `[1, dim]`) start state for trajectories, the
    /// image for image channels. Unobserved channels start hidden and are
    /// fed their own predictions from the second step on; their first row
    /// is reported as the channel mean.
    pub fn rollout(&self, initial: &[(usize, Tensor)]) -> Result<Vec<ChannelPrediction>> {
        let t_len = self.horizon();
        let n = self.specs.len();
        let mut given: Vec<Option<&Tensor>> = vec![None; n];
        for (c, t) in initial {
            let spec = self.specs.get(*c).ok_or_else(|| Error::UnknownChannel(format!("#{c}")))?;
            if t.len() != spec.dim {
                return Err(Error::shape("rollout", format!("`{}` initial state has {} values, expected {}", spec.name, t.len(), spec.dim)));
            }
            if given[*c].replace(t).is_some() {
                return Err(Error::invalid(format!("channel `{}` given twice", spec.name)));
            }
        }
        let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(t_len); n];
        let mut sigmas: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(t_len); n];
        let mut image: Vec<Option<(Tensor, f64)>> = vec![None; n];
        for (c, spec) in self.specs.iter().enumerate() {
            let floor = vec![SIGMA_FLOOR * self.norms[c].scale; spec.dim];
            match given[c] {
                Some(t) if spec.is_image() => image[c] = Some((t.clone(), SIGMA_FLOOR * self.norms[c].scale)),
                Some(t) => rows[c].push(t.data().to_vec()),
                None if spec.is_image() => {}
                None => rows[c].push(self.norms[c].inverse(&vec![0.0; spec.dim])),
            }
            if !spec.is_image() {
                sigmas[c].push(floor);
            }
        }
        let outputs: Vec<usize> = (0..n).filter(|&c| !(self.specs[c].is_image() && given[c].is_some())).collect();
        for k in 0..t_len - 1 {
            let t = grid_time(k, t_len);
            let mut states = Vec::with_capacity(n);
            for (c, spec) in self.specs.iter().enumerate() {
                let visible = k > 0 || given[c].is_some();
                states.push(match (visible, spec.is_image()) {
                    (false, _) => None,
                    (true, true) => image[c].as_ref().map(|(img, _)| State::Image(img)),
                    (true, false) => Some(State::Rows(self.state_from(c, &rows[c][k..=k], &[t])?)),
                });
            }
            let mut tape = Tape::new(&self.params);
            let preds = self.forward(&mut tape, &states, 1, &outputs)?;
            drop(states);
            for (c, mu, sigma) in preds {
                let norm = &self.norms[c];
                let mean = norm.inverse(tape.value(mu).data());
                let sig: Vec<f64> = tape.value(sigma).data().iter().map(|s| s * norm.scale).collect();
                if self.specs[c].is_image() {
                    image[c] = Some((Tensor::new(self.specs[c].payload_shape(), mean)?, sig[0]));
                } else {
                    rows[c].push(mean);
                    sigmas[c].push(sig);
                }
            }
        }
        let times: Vec<f64> = (0..t_len).map(|i| grid_time(i, t_len)).collect();
        let mut out = Vec::with_capacity(n);
        for (c, spec) in self.specs.iter().enumerate() {
            let pred = if spec.is_image() {
                let (mean, s) = image[c].take().expect("image decoded or given");
                ChannelPrediction {
                    channel: spec.name.clone(),
                    times: Vec::new(),
                    mean,
                    sigma: Tensor::new(vec![1], vec![s])?,
                }
            } else {
                ChannelPrediction {
                    channel: spec.name.clone(),
                    times: times.clone(),
                    mean: Tensor::new(vec![t_len, spec.dim], rows[c].concat())?,
                    sigma: Tensor::new(vec![t_len, spec.dim], sigmas[c].concat())?,
                }
            };
            out.push(pred);
        }
        Ok(out)
    }

    /// Serves a request by rolling out from each trajectory's earliest
    /// observed point; only the canonical grid is supported.
    pub fn generate(&self, request: &GenerationRequest) -> Result<Vec<ChannelPrediction>> {
        request.validate(&self.specs)?;
        if request.observed.is_empty() {
            return Err(Error::invalid("request observes no channel"));
        }
        if request.times.is_some() {
            return Err(Error::invalid("baseline rollouts are produced on the canonical grid only"));
        }
        let mut initial = Vec::new();
        for (name, points) in &request.observed {
            let c = self.channel_index(name)?;
            let first = points
                .iter()
                .min_by(|a, b| a.t.unwrap_or(0.0).total_cmp(&b.t.unwrap_or(0.0)))
                .expect("validated nonempty");
            initial.push((c, Tensor::new(vec![first.values.len()], first.values.clone())?));
        }
        let outputs = request
            .outputs
            .iter()
            .map(|n| self.channel_index(n))
            .collect::<Result<Vec<_>>>()?;
        let all = self.rollout(&initial)?;
        Ok(outputs.into_iter().map(|c| all[c].clone()).collect())
    }
}

/// Trains a fresh baseline on the dataset's training split.
pub fn baseline_train(
    data: &Dataset,
    variant: BaselineVariant,
    config: &BaselineConfig,
    train: &TrainConfig,
    on_snapshot: &mut dyn FnMut(usize, &BaselineModel) -> Result<()>,
) -> Result<(BaselineModel, TrainReport)> {
    data.validate()?;
    let mut model = BaselineModel::for_dataset(&data.split(Split::Train), variant, config.clone())?;
    let pool: Vec<&AffordanceSample> = data.samples.iter().filter(|s| s.meta.split == Split::Train).collect();
    if pool.is_empty() && train.iterations > 0 {
        return Err(Error::invalid("no training samples"));
    }
    let adam = AdamConfig {
        lr: train.learning_rate,
        ..AdamConfig::default()
    };
    let mut optimizer = OptimizerState::new(&model.params, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut report = TrainReport::default();
    for step in 0..train.iterations {
        if train.is_snapshot_step(step) {
            on_snapshot(step, &model)?;
            report.snapshot_steps.push(step);
        }
        optimizer.config.lr = train.learning_rate_at(step);
        let sample = pool[rng.random_range(0..pool.len())];
        report.losses.push(model.train_step(&mut optimizer, sample, train.clip_norm, &mut rng)?);
    }
    Ok((model, report))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    variant: BaselineVariant,
    config: BaselineConfig,
    specs: Vec<ChannelSpec>,
    norms: Vec<ChannelNorm>,
}

pub fn write_baseline_to(model: &BaselineModel, w: &mut impl Write) -> Result<()> {
    let header = serde_json::to_value(Header {
        variant: model.variant,
        config: model.config.clone(),
        specs: model.specs.clone(),
        norms: model.norms.clone(),
    })?;
    write_arrays(w, BASELINE_MAGIC, &header, &model.params)
}

pub fn write_baseline(model: &BaselineModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_baseline_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_baseline_from(r: &mut impl Read) -> Result<BaselineModel> {
    let (header, arrays) = read_arrays(r, BASELINE_MAGIC)?;
    let h: Header = serde_json::from_value(header)?;
    let mut model = BaselineModel::new(h.specs, h.norms, h.variant, h.config)?;
    model.params.assign_from(arrays)?;
    Ok(model)
}

pub fn read_baseline(path: impl AsRef<Path>) -> Result<BaselineModel> {
    read_baseline_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests;
