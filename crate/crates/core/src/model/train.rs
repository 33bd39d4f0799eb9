use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AffordanceModel, BlendWeights, Observation};
use crate::dataspec::{grid_time, AffordanceSample, ChannelSpec, Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, Gradients, OptimizerState, Tape, Tensor};

const MAX_CONDITION_POINTS: usize = 10;
const TARGET_POINTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Snapshot period in steps; 0 disables snapshots. Snapshots are taken
    /// before steps 0, k, 2k, …, so the first one is the initialization.
    pub snapshot_every: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// The rate follows a cosine from `learning_rate` down to this value.
    pub final_learning_rate: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 30_000,
            snapshot_every: 500,
            seed: 0,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    /// Cosine-annealed rate for the 0-based `step`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.iterations.max(1) as f64;
        let span = self.learning_rate - self.final_learning_rate;
        self.final_learning_rate + span * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Whether a snapshot is due before the 0-based `step`.
    pub fn is_snapshot_step(&self, step: usize) -> bool {
        self.snapshot_every > 0 && step % self.snapshot_every == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    /// Completed-step counts at which snapshots were taken.
    pub snapshot_steps: Vec<usize>,
}

/// The random choices of one training step, drawn up front so the loss is a
/// deterministic function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub weights: BlendWeights,
    /// Per selected channel: condition rows (empty for images).
    pub conditions: Vec<(usize, Vec<usize>)>,
    /// Per available channel: target rows (empty for images).
    pub targets: Vec<(usize, Vec<usize>)>,
}

fn draw_rows<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, len, n.min(len)).into_vec()
}

impl StepPlan {
    pub fn draw(specs: &[ChannelSpec], sample: &AffordanceSample, rng: &mut impl Rng) -> Result<Self> {
        let avail = sample.available();
        if avail.is_empty() {
            return Err(Error::invalid("sample has no available channel"));
        }
        let subset: Vec<usize> = if rng.random_bool(0.5) {
            avail.clone()
        } else {
            let mask: u64 = rng.random_range(1..(1u64 << avail.len()));
            avail
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &c)| c)
                .collect()
        };
        let weights = BlendWeights::hierarchical_dirichlet(specs, &subset, rng)?;
        let rows_for = |c: usize, n: usize, rng: &mut dyn rand::RngCore| {
            if specs[c].is_image() {
                Vec::new()
            } else {
                draw_rows(specs[c].length, n, rng)
            }
        };
        let mut conditions = Vec::with_capacity(subset.len());
        for &c in &subset {
            let n = rng.random_range(1..=MAX_CONDITION_POINTS);
            conditions.push((c, rows_for(c, n, rng)));
        }
        let mut targets = Vec::with_capacity(avail.len());
        for &c in &avail {
            targets.push((c, rows_for(c, TARGET_POINTS, rng)));
        }
        Ok(StepPlan {
            weights,
            conditions,
            targets,
        })
    }
}

fn payload<'a>(model: &AffordanceModel, sample: &'a AffordanceSample, c: usize) -> Result<&'a Tensor> {
    sample.channels[c]
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("channel `{}` unavailable in sample", model.specs[c].name)))
}

/// Mean over decoded channels of the per-channel mean Gaussian NLL.
pub fn plan_loss(model: &AffordanceModel, tape: &mut Tape, sample: &AffordanceSample, plan: &StepPlan) -> Result<crate::numerics::Var> {
    let mut observed = Vec::with_capacity(plan.conditions.len());
    for (c, rows) in &plan.conditions {
        let p = payload(model, sample, *c)?;
        let obs = if model.specs[*c].is_image() {
            Observation::Image(p.clone())
        } else {
            Observation::rows(p, rows)
        };
        observed.push((*c, obs));
    }
    let latent = model.blend_on_tape(tape, &observed, &plan.weights)?;
    let mut losses = Vec::with_capacity(plan.targets.len());
    for (c, rows) in &plan.targets {
        let spec = &model.specs[*c];
        let p = payload(model, sample, *c)?;
        let norm = &model.norms[*c];
        let (times, target) = if spec.is_image() {
            (Vec::new(), Tensor::new(vec![p.len()], norm.forward(p.data()))?)
        } else {
            let mut vals = Vec::with_capacity(rows.len() * spec.dim);
            for &r in rows {
                vals.extend(norm.forward(p.row_slice(r)));
            }
            let times = rows.iter().map(|&r| grid_time(r, spec.length)).collect::<Vec<_>>();
            (times, Tensor::new(vec![rows.len(), spec.dim], vals)?)
        };
        let (mu, sigma) = model.decode(tape, *c, latent, &times)?;
        losses.push(tape.gaussian_nll(mu, sigma, target)?);
    }
    tape.mean_of(&losses)
}

/// Loss and parameter gradients for one planned step.
pub fn plan_gradients(model: &AffordanceModel, sample: &AffordanceSample, plan: &StepPlan) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(&model.params);
    let loss = plan_loss(model, &mut tape, sample, plan)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss, None)?;
    Ok((value, grads))
}

/// One optimization step on `sample`; returns the pre-update loss.
pub fn train_step(
    model: &mut AffordanceModel,
    optimizer: &mut OptimizerState,
    sample: &AffordanceSample,
    clip_norm: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    sample.validate(&model.specs)?;
    let plan = StepPlan::draw(&model.specs, sample, rng)?;
    let (loss, mut grads) = plan_gradients(model, sample, &plan)?;
    if clip_norm > 0.0 {
        grads.clip_norm(clip_norm);
    }
    adam_step(&mut model.params, &grads, optimizer)?;
    Ok(loss)
}

fn run(
    model: &mut AffordanceModel,
    pools: &[Vec<&AffordanceSample>],
    config: &TrainConfig,
    on_snapshot: &mut dyn FnMut(usize, &AffordanceModel) -> Result<()>,
) -> Result<TrainReport> {
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut optimizer = OptimizerState::new(&model.params, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pools: Vec<&Vec<&AffordanceSample>> = pools.iter().filter(|p| !p.is_empty()).collect();
    if pools.is_empty() && config.iterations > 0 {
        return Err(Error::invalid("no training samples"));
    }
    let mut report = TrainReport::default();
    for step in 0..config.iterations {
        if config.is_snapshot_step(step) {
            on_snapshot(step, model)?;
            report.snapshot_steps.push(step);
        }
        optimizer.config.lr = config.learning_rate_at(step);
        let pool = if pools.len() > 1 {
            pools[rng.random_range(0..pools.len())]
        } else {
            pools[0]
        };
        let sample = pool[rng.random_range(0..pool.len())];
        report.losses.push(train_step(model, &mut optimizer, sample, config.clip_norm, &mut rng)?);
    }
    Ok(report)
}

fn train_pool<'d>(model: &AffordanceModel, data: &'d Dataset) -> Result<Vec<&'d AffordanceSample>> {
    model.check_specs(&data.specs)?;
    Ok(data.samples.iter().filter(|s| s.meta.split == Split::Train).collect())
}

/// Trains on the dataset's training split, sampling uniformly. Calls
/// `on_snapshot(completed_steps, model)` before every `snapshot_every`-th step.
pub fn train(
    model: &mut AffordanceModel,
    data: &Dataset,
    config: &TrainConfig,
    on_snapshot: &mut dyn FnMut(usize, &AffordanceModel) -> Result<()>,
) -> Result<TrainReport> {
    let pool = train_pool(model, data)?;
    run(model, &[pool], config, on_snapshot)
}

/// Replay training: each step flips a fair coin between the old and new
/// training splits, then draws uniformly within the chosen one.
pub fn continue_training(
    model: &mut AffordanceModel,
    old: &Dataset,
    new: &Dataset,
    config: &TrainConfig,
    on_snapshot: &mut dyn FnMut(usize, &AffordanceModel) -> Result<()>,
) -> Result<TrainReport> {
    let old_pool = train_pool(model, old)?;
    let new_pool = train_pool(model, new)?;
    run(model, &[old_pool, new_pool], config, on_snapshot)
}
