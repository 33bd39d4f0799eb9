use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineModel;
use crate::dataspec::{grid_time, ChannelSpec, Dataset};
use crate::error::{Error, Result};
use crate::model::{AffordanceModel, ChannelPrediction, Observation};
use crate::numerics::Tensor;

/// Anything that decodes channel distributions from observed channels.
pub trait Predictor {
    fn specs(&self) -> &[ChannelSpec];

    fn predict(&self, observed: &[(usize, Observation)], outputs: &[usize], times: &[f64]) -> Result<Vec<ChannelPrediction>>;
}

impl Predictor for AffordanceModel {
    fn specs(&self) -> &[ChannelSpec] {
        &self.specs
    }

    fn predict(&self, observed: &[(usize, Observation)], outputs: &[usize], times: &[f64]) -> Result<Vec<ChannelPrediction>> {
        AffordanceModel::predict(self, observed, outputs, times)
    }
}

/// Rolls out from the earliest observed row of each trajectory; only the
/// canonical grid can be queried.
impl Predictor for BaselineModel {
    fn specs(&self) -> &[ChannelSpec] {
        &self.specs
    }

    fn predict(&self, observed: &[(usize, Observation)], outputs: &[usize], times: &[f64]) -> Result<Vec<ChannelPrediction>> {
        let t_len = self.horizon();
        let on_grid = times.len() == t_len && times.iter().enumerate().all(|(i, &t)| (t - grid_time(i, t_len)).abs() < 1e-12);
        if !on_grid {
            return Err(Error::invalid("baseline rollouts are produced on the canonical grid only"));
        }
        let mut initial = Vec::with_capacity(observed.len());
        for (c, obs) in observed {
            let state = match obs {
                Observation::Image(img) => img.clone(),
                Observation::Trajectory { times, values } => {
                    let first = (0..times.len())
                        .min_by(|&a, &b| times[a].total_cmp(&times[b]))
                        .ok_or_else(|| Error::invalid("empty observation"))?;
                    Tensor::new(vec![values.shape()[1]], values.row_slice(first).to_vec())?
                }
            };
            initial.push((*c, state));
        }
        let all = self.rollout(&initial)?;
        outputs
            .iter()
            .map(|&c| all.get(c).cloned().ok_or_else(|| Error::UnknownChannel(format!("#{c}"))))
            .collect()
    }
}

/// A nonempty set of observed channels, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InputConfiguration(Vec<usize>);

impl InputConfiguration {
    pub fn new(mut channels: Vec<usize>) -> Result<Self> {
        channels.sort_unstable();
        channels.dedup();
        if channels.is_empty() {
            return Err(Error::invalid("input configuration must name at least one channel"));
        }
        Ok(InputConfiguration(channels))
    }

    pub fn channels(&self) -> &[usize] {
        &self.0
    }

    /// Every nonempty subset of `n` channels, in bitmask order.
    pub fn all(n: usize) -> Vec<Self> {
        (1u64..(1 << n))
            .map(|mask| InputConfiguration((0..n).filter(|i| mask >> i & 1 == 1).collect()))
            .collect()
    }

    /// `"all"`, or comma-separated configurations whose channels are joined
    /// by `+`, e.g. `object+effect,effect`.
    pub fn parse_list(text: &str, specs: &[ChannelSpec]) -> Result<Vec<Self>> {
        if text.trim() == "all" {
            return Ok(Self::all(specs.len()));
        }
        text.split(',')
            .map(|cfg| {
                let channels = cfg
                    .split('+')
                    .map(|name| {
                        let name = name.trim();
                        specs
                            .iter()
                            .position(|s| s.name == name)
                            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                InputConfiguration::new(channels)
            })
            .collect()
    }

    pub fn label(&self, specs: &[ChannelSpec]) -> String {
        self.0
            .iter()
            .map(|&c| specs.get(c).map_or("?", |s| s.name.as_str()))
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub configuration: String,
    pub channel: String,
    pub units: String,
    pub rms: f64,
    pub mean_sigma: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn get(&self, configuration: &str, channel: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.configuration == configuration && r.channel == channel)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityScore {
    pub configuration: String,
    pub channel: String,
    pub mean_sigma: f64,
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sq / a.len() as f64).sqrt()
}

/// For each configuration, conditions on the full observed channels of every
/// sample that has them (equal weights), decodes every channel the sample
/// carries on its grid, and averages per-sample RMS and mean σ.
pub fn rms_table(model: &dyn Predictor, data: &Dataset, configs: &[InputConfiguration]) -> Result<EvaluationReport> {
    let specs = model.specs();
    for (c, spec) in data.specs.iter().enumerate() {
        if specs.get(c) != Some(spec) {
            return Err(Error::ChannelMismatch(format!("data channel `{}` not declared by the model", spec.name)));
        }
    }
    let mut report = EvaluationReport::default();
    for cfg in configs {
        if let Some(&bad) = cfg.channels().iter().find(|&&c| c >= data.specs.len()) {
            return Err(Error::UnknownChannel(format!("#{bad}")));
        }
        let n = data.specs.len();
        let mut err = vec![0.0; n];
        let mut sig = vec![0.0; n];
        let mut count = vec![0usize; n];
        for s in &data.samples {
            if !cfg.channels().iter().all(|&c| s.is_available(c)) {
                continue;
            }
            let observed: Vec<(usize, Observation)> = cfg
                .channels()
                .iter()
                .map(|&c| (c, Observation::full(&data.specs[c], s.channels[c].as_ref().expect("available"))))
                .collect();
            let outputs = s.available();
            let t_len = data
                .specs
                .iter()
                .find(|sp| !sp.is_image())
                .map_or(1, |sp| sp.length);
            let times: Vec<f64> = (0..t_len).map(|i| grid_time(i, t_len)).collect();
            let preds = model.predict(&observed, &outputs, &times)?;
            for (&c, p) in outputs.iter().zip(&preds) {
                let truth = s.channels[c].as_ref().expect("available");
                if p.mean.len() != truth.len() {
                    return Err(Error::shape("rms_table", format!("`{}` prediction {:?} vs truth {:?}", p.channel, p.mean.shape(), truth.shape())));
                }
                err[c] += rms(p.mean.data(), truth.data());
                sig[c] += p.mean_sigma();
                count[c] += 1;
            }
        }
        let label = cfg.label(&data.specs);
        for (c, spec) in data.specs.iter().enumerate() {
            if count[c] == 0 {
                continue;
            }
            report.rows.push(ReportRow {
                configuration: label.clone(),
                channel: spec.name.clone(),
                units: spec.units.as_str().to_string(),
                rms: err[c] / count[c] as f64,
                mean_sigma: sig[c] / count[c] as f64,
                samples: count[c],
            });
        }
    }
    Ok(report)
}

/// Mean decoded σ per configuration and output channel.
pub fn ambiguity_scores(model: &dyn Predictor, data: &Dataset, configs: &[InputConfiguration]) -> Result<Vec<AmbiguityScore>> {
    Ok(rms_table(model, data, configs)?
        .rows
        .into_iter()
        .map(|r| AmbiguityScore {
            configuration: r.configuration,
            channel: r.channel,
            mean_sigma: r.mean_sigma,
        })
        .collect())
}
