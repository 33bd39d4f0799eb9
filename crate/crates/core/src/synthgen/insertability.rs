use serde::{Deserialize, Serialize};

use super::render::{render_opening, IMAGE_SIZE};
use super::{add_noise, fixed_pose, joint_trajectory, min_jerk, sample_grid, GenCommon};
use crate::dataspec::{AffordanceSample, ChannelSpec, Dataset, SampleMeta, Split, Units};
use crate::error::{Error, Result};

/// Half-width of the rod, in the same normalized units as the openings.
pub const ROD_HALF_WIDTH: f64 = 0.10;
const PEAK_FORCE: f64 = 10.0;
const AGENT: &str = "ur10";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertabilityConfig {
    #[serde(default)]
    pub common: GenCommon,
    pub train_widths: Vec<f64>,
    pub test_widths: Vec<f64>,
}

impl Default for InsertabilityConfig {
    fn default() -> Self {
        InsertabilityConfig {
            common: GenCommon::default(),
            train_widths: vec![0.02, 0.04, 0.06, 0.08, 0.12, 0.14, 0.16, 0.18],
            test_widths: vec![0.05, 0.15],
        }
    }
}

pub fn is_insertable(half_width: f64) -> bool {
    half_width >= ROD_HALF_WIDTH
}

/// Wrist force: a late ramp to 10 N when the rod goes in, an early ramp and
/// plateau when it hits the rim.
pub fn insertion_force(half_width: f64, t: f64) -> f64 {
    if is_insertable(half_width) {
        if t < 0.9 {
            0.0
        } else {
            PEAK_FORCE * ((t - 0.9) / 0.1).min(1.0)
        }
    } else if t < 0.5 {
        0.0
    } else {
        PEAK_FORCE * ((t - 0.5) / 0.2).min(1.0)
    }
}

/// Six joint angles at time `t`; a blocked rod freezes at the midpoint.
pub fn insertion_action(half_width: f64, t: f64) -> Vec<f64> {
    let start = fixed_pose("ur10/insert/start", 6);
    let end = fixed_pose("ur10/insert/end", 6);
    let s = if is_insertable(half_width) {
        min_jerk(t)
    } else {
        min_jerk(t.min(0.5))
    };
    start.iter().zip(&end).map(|(a, b)| a + (b - a) * s).collect()
}

pub fn insertability_specs() -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::image("object", IMAGE_SIZE, IMAGE_SIZE),
        ChannelSpec::trajectory("effect", 1, Units::Newtons, None),
        ChannelSpec::trajectory(AGENT, 6, Units::Radians, Some(AGENT)),
    ]
}

pub fn gen_insertability(config: &InsertabilityConfig) -> Result<Dataset> {
    config.common.validate()?;
    let widths = config
        .train_widths
        .iter()
        .map(|&w| (w, Split::Train))
        .chain(config.test_widths.iter().map(|&w| (w, Split::Test)));
    let start = fixed_pose("ur10/insert/start", 6);
    let end = fixed_pose("ur10/insert/end", 6);

    let mut samples = Vec::new();
    for (w, split) in widths {
        if !(w > 0.0 && w < 0.5) {
            return Err(Error::invalid(format!("opening half-width {w} outside (0, 0.5)")));
        }
        let image = render_opening(w);
        let force = sample_grid(1, |t| vec![insertion_force(w, t)]);
        let action = if is_insertable(w) {
            joint_trajectory(&start, &end, min_jerk)
        } else {
            joint_trajectory(&start, &end, |t| min_jerk(t.min(0.5)))
        };
        for _ in 0..config.common.samples_per_object {
            let mut rng = config.common.sample_rng(samples.len());
            let mut f = force.clone();
            let mut a = action.clone();
            add_noise(&mut f, config.common.noise, &mut rng);
            add_noise(&mut a, config.common.noise, &mut rng);
            samples.push(AffordanceSample {
                channels: vec![Some(image.clone()), Some(f), Some(a)],
                meta: SampleMeta {
                    scenario: "insertability".into(),
                    object: format!("opening-{w:.2}"),
                    object_param: w,
                    outcome: if is_insertable(w) { "insertable" } else { "non-insertable" }.into(),
                    split,
                    action: Some(format!("{AGENT}/insert")),
                },
            });
        }
    }
    let mut ds = Dataset::new(insertability_specs(), samples)?;
    ds.scenario = serde_json::json!({ "scenario": "insertability", "config": config });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspec::grid_time;

    #[test]
    fn default_split_counts_and_margins() {
        let cfg = InsertabilityConfig::default();
        let train_ins = cfg.train_widths.iter().filter(|&&w| is_insertable(w)).count();
        assert_eq!(train_ins, 4);
        assert_eq!(cfg.train_widths.len() - train_ins, 4);
        let test_ins = cfg.test_widths.iter().filter(|&&w| is_insertable(w)).count();
        assert_eq!((test_ins, cfg.test_widths.len() - test_ins), (1, 1));
        // each test width sits strictly inside its class's training range
        for &w in &cfg.test_widths {
            let same: Vec<f64> = cfg
                .train_widths
                .iter()
                .copied()
                .filter(|&x| is_insertable(x) == is_insertable(w))
                .collect();
            let lo = same.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = same.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo < w && w < hi);
            assert!((w - ROD_HALF_WIDTH).abs() >= 0.05 - 1e-12);
        }
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(insertion_force(0.15, 0.5), 0.0);
        assert_eq!(insertion_force(0.05, 1.0), 10.0);
        assert_eq!(insertion_action(0.05, 0.75), insertion_action(0.05, 0.5));
        assert_ne!(insertion_action(0.15, 0.75), insertion_action(0.15, 0.5));
    }

    #[test]
    fn noise_free_matches_closed_form() {
        let cfg = InsertabilityConfig {
            common: GenCommon {
                noise: 0.0,
                seed: 3,
                samples_per_object: 2,
            },
            ..Default::default()
        };
        let ds = gen_insertability(&cfg).unwrap();
        assert_eq!(ds.len(), 20);
        for s in &ds.samples {
            let w = s.meta.object_param;
            let f = s.channels[1].as_ref().unwrap();
            let a = s.channels[2].as_ref().unwrap();
            for i in 0..100 {
                let t = grid_time(i, 100);
                assert_eq!(f.row_slice(i)[0], insertion_force(w, t));
                assert_eq!(a.row_slice(i), insertion_action(w, t).as_slice());
            }
            assert_eq!(s.meta.outcome == "insertable", is_insertable(w));
        }
    }

    #[test]
    fn rejects_bad_width() {
        let cfg = InsertabilityConfig {
            train_widths: vec![-0.1],
            ..Default::default()
        };
        assert!(gen_insertability(&cfg).is_err());
    }
}
