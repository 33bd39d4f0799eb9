use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{grid_time, ChannelSpec, CANONICAL_T};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const REQUEST_VERSION: u32 = 1;

/// One observed `(t, values)` pair. Image observations carry no time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub values: Vec<f64>,
}

/// Which channels are observed (and at which points), and which to generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRequest {
    #[serde(default = "default_version")]
    pub version: u32,
    pub observed: BTreeMap<String, Vec<ConditionPoint>>,
    pub outputs: Vec<String>,
    /// Query times for trajectory outputs; the canonical grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

fn default_version() -> u32 {
    REQUEST_VERSION
}

impl GenerationRequest {
    pub fn new(outputs: Vec<String>) -> Self {
        GenerationRequest {
            version: REQUEST_VERSION,
            observed: BTreeMap::new(),
            outputs,
            times: None,
        }
    }

    /// Observe every row of a `[T, dim]` trajectory at its grid time.
    pub fn observe_trajectory(&mut self, channel: &str, values: &Tensor) {
        let rows = values.shape()[0];
        let points = (0..rows)
            .map(|i| ConditionPoint {
                t: Some(grid_time(i, rows)),
                values: values.row_slice(i).to_vec(),
            })
            .collect();
        self.observed.insert(channel.to_string(), points);
    }

    /// Observe selected rows of a `[T, dim]` trajectory.
    pub fn observe_rows(&mut self, channel: &str, values: &Tensor, rows: &[usize]) {
        let total = values.shape()[0];
        let points = rows
            .iter()
            .map(|&i| ConditionPoint {
                t: Some(grid_time(i, total)),
                values: values.row_slice(i).to_vec(),
            })
            .collect();
        self.observed.insert(channel.to_string(), points);
    }

    pub fn observe_image(&mut self, channel: &str, image: &Tensor) {
        self.observed.insert(
            channel.to_string(),
            vec![ConditionPoint {
                t: None,
                values: image.data().to_vec(),
            }],
        );
    }

    pub fn target_times(&self) -> Vec<f64> {
        match &self.times {
            Some(t) => t.clone(),
            None => (0..CANONICAL_T).map(|i| grid_time(i, CANONICAL_T)).collect(),
        }
    }

    pub fn validate(&self, specs: &[ChannelSpec]) -> Result<()> {
        if self.version != REQUEST_VERSION {
            return Err(Error::Version(self.version));
        }
        let find = |name: &str| {
            specs
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| Error::UnknownChannel(name.to_string()))
        };
        for (name, points) in &self.observed {
            let spec = find(name)?;
            if points.is_empty() {
                return Err(Error::invalid(format!("channel `{name}` has no observations")));
            }
            if spec.is_image() && points.len() != 1 {
                return Err(Error::invalid(format!(
                    "image channel `{name}` takes exactly one observation"
                )));
            }
            for p in points {
                if p.values.len() != spec.dim {
                    return Err(Error::invalid(format!(
                        "channel `{name}`: {} values, expected {}",
                        p.values.len(),
                        spec.dim
                    )));
                }
                match (spec.is_image(), p.t) {
                    (true, Some(_)) => {
                        return Err(Error::invalid(format!("image channel `{name}` takes no time")))
                    }
                    (false, None) => {
                        return Err(Error::invalid(format!("channel `{name}`: missing time")))
                    }
                    (false, Some(t)) if !(0.0..=1.0).contains(&t) => {
                        return Err(Error::invalid(format!("channel `{name}`: t={t} outside [0,1]")))
                    }
                    _ => {}
                }
                if p.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("observation of `{name}`")));
                }
            }
        }
        for name in &self.outputs {
            find(name)?;
        }
        if let Some(times) = &self.times {
            if times.is_empty() || times.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::invalid("target times must be nonempty and within [0,1]"));
            }
        }
        Ok(())
    }
}
