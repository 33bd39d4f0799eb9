//! Affordance samples, channel declarations and their on-disk formats.

mod format;
mod request;
mod resample;

pub use format::{
    read_arrays, read_dataset, read_dataset_from, write_arrays, write_dataset, write_dataset_to,
    ArrayEntry, DATASET_MAGIC, FORMAT_VERSION,
};
pub use request::{ConditionPoint, GenerationRequest};
pub use resample::{grid_time, resample_trajectory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Canonical number of timesteps per trajectory.
pub const CANONICAL_T: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    Trajectory,
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    Radians,
    Newtons,
    Meters,
    NormalizedDepth,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Radians => "radians",
            Units::Newtons => "newtons",
            Units::Meters => "meters",
            Units::NormalizedDepth => "normalized-depth",
        }
    }
}

/// Which slot of the (effect, (agent, (object, action))) tuple a channel fills.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Action { agent: String },
    Effect,
    Object,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub kind: ChannelKind,
    /// Values per timestep, or `height·width` for images.
    pub dim: usize,
    /// Timesteps; always 1 for images.
    pub length: usize,
    pub units: Units,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    /// `[height, width]` for image channels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_shape: Option<[usize; 2]>,
}

impl ChannelSpec {
    pub fn trajectory(name: &str, dim: usize, units: Units, agent: Option<&str>) -> Self {
        ChannelSpec {
            name: name.to_string(),
            kind: ChannelKind::Trajectory,
            dim,
            length: CANONICAL_T,
            units,
            agent: agent.map(str::to_string),
            image_shape: None,
        }
    }

    pub fn image(name: &str, height: usize, width: usize) -> Self {
        ChannelSpec {
            name: name.to_string(),
            kind: ChannelKind::Image,
            dim: height * width,
            length: 1,
            units: Units::NormalizedDepth,
            agent: None,
            image_shape: Some([height, width]),
        }
    }

    pub fn modality(&self) -> Modality {
        match (self.kind, &self.agent) {
            (ChannelKind::Image, _) => Modality::Object,
            (ChannelKind::Trajectory, Some(agent)) => Modality::Action {
                agent: agent.clone(),
            },
            (ChannelKind::Trajectory, None) => Modality::Effect,
        }
    }

    pub fn is_image(&self) -> bool {
        self.kind == ChannelKind::Image
    }

    /// Shape of one payload tensor.
    pub fn payload_shape(&self) -> Vec<usize> {
        match (self.kind, self.image_shape) {
            (ChannelKind::Image, Some([h, w])) => vec![h, w],
            (ChannelKind::Image, None) => vec![self.dim],
            (ChannelKind::Trajectory, _) => vec![self.length, self.dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.dim == 0 {
            return Err(Error::invalid("channel needs a name and positive dim"));
        }
        match self.kind {
            ChannelKind::Trajectory => {
                if self.length < 2 {
                    return Err(Error::invalid(format!(
                        "trajectory `{}` needs length >= 2",
                        self.name
                    )));
                }
                if self.image_shape.is_some() {
                    return Err(Error::invalid(format!("trajectory `{}` has an image shape", self.name)));
                }
            }
            ChannelKind::Image => {
                if self.length != 1 {
                    return Err(Error::invalid(format!("image `{}` must have length 1", self.name)));
                }
                if let Some([h, w]) = self.image_shape {
                    if h * w != self.dim {
                        return Err(Error::invalid(format!(
                            "image `{}`: {h}x{w} != dim {}",
                            self.name, self.dim
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Checks a channel list for validity and unique names.
pub fn validate_specs(specs: &[ChannelSpec]) -> Result<()> {
    for (i, s) in specs.iter().enumerate() {
        s.validate()?;
        if specs[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::invalid(format!("duplicate channel `{}`", s.name)));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Evaluation-only annotations. Never read by any training path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub scenario: String,
    /// Object identity, e.g. `opening-0.05` or `side-cylinder-45`.
    pub object: String,
    pub object_param: f64,
    /// Ground-truth outcome class, e.g. `insertable`, `lifted`, `rolled`.
    pub outcome: String,
    pub split: Split,
    /// Action variant, e.g. `straight/palm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

/// One interaction record: a payload per available channel plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceSample {
    /// Indexed like the dataset's channel specs; `None` marks an unavailable channel.
    pub channels: Vec<Option<Tensor>>,
    pub meta: SampleMeta,
}

impl AffordanceSample {
    pub fn is_available(&self, channel: usize) -> bool {
        self.channels.get(channel).is_some_and(Option::is_some)
    }

    pub fn available(&self) -> Vec<usize> {
        (0..self.channels.len())
            .filter(|&c| self.is_available(c))
            .collect()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.channels.iter().map(Option::is_some).collect()
    }

    pub fn validate(&self, specs: &[ChannelSpec]) -> Result<()> {
        if self.channels.len() != specs.len() {
            return Err(Error::ChannelMismatch(format!(
                "sample has {} channels, specs declare {}",
                self.channels.len(),
                specs.len()
            )));
        }
        if self.channels.iter().all(Option::is_none) {
            return Err(Error::invalid("sample has no available channel"));
        }
        for (payload, spec) in self.channels.iter().zip(specs) {
            if let Some(t) = payload {
                if t.shape() != spec.payload_shape().as_slice() {
                    return Err(Error::ChannelMismatch(format!(
                        "channel `{}` payload {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.payload_shape()
                    )));
                }
                t.ensure_finite(&spec.name)?;
            }
        }
        Ok(())
    }
}

/// Channel declarations plus samples that conform to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub specs: Vec<ChannelSpec>,
    pub samples: Vec<AffordanceSample>,
    /// Free-form scenario description carried in the file header.
    pub scenario: serde_json::Value,
}

impl Dataset {
    pub fn new(specs: Vec<ChannelSpec>, samples: Vec<AffordanceSample>) -> Result<Self> {
        let ds = Dataset {
            specs,
            samples,
            scenario: serde_json::Value::Null,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        validate_specs(&self.specs)?;
        for s in &self.samples {
            s.validate(&self.specs)?;
        }
        Ok(())
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same specs, samples filtered by `keep`.
    pub fn filter(&self, keep: impl Fn(&AffordanceSample) -> bool) -> Dataset {
        Dataset {
            specs: self.specs.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            scenario: self.scenario.clone(),
        }
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.filter(|s| s.meta.split == split)
    }

    /// Distinct object identifiers in first-appearance order.
    pub fn objects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.meta.object) {
                out.push(s.meta.object.clone());
            }
        }
        out
    }
}
