use serde::{Deserialize, Serialize};

use super::render::{render_box, IMAGE_SIZE};
use super::{add_noise, fixed_pose, joint_trajectory, min_jerk, sample_grid, GenCommon};
use crate::dataspec::{AffordanceSample, ChannelSpec, Dataset, SampleMeta, Split, Units};
use crate::error::{Error, Result};

/// Largest object the small gripper can close around.
pub const BAXTER_MAX_SIZE: f64 = 0.5;
pub const LIFT_HEIGHT: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspabilityConfig {
    #[serde(default)]
    pub common: GenCommon,
    pub train_sizes: Vec<f64>,
    pub test_sizes: Vec<f64>,
}

impl Default for GraspabilityConfig {
    fn default() -> Self {
        GraspabilityConfig {
            common: GenCommon::default(),
            train_sizes: vec![0.1, 0.2, 0.4, 0.5, 0.6, 0.7, 0.9, 1.0],
            test_sizes: vec![0.3, 0.8],
        }
    }
}

pub fn baxter_can_grasp(size: f64) -> bool {
    size <= BAXTER_MAX_SIZE
}

/// Object height above the table: still until t = 0.5, then a linear lift.
pub fn lift_height(lifted: bool, t: f64) -> f64 {
    if !lifted || t < 0.5 {
        0.0
    } else {
        LIFT_HEIGHT * (t - 0.5) / 0.5
    }
}

pub fn graspability_specs() -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::image("object", IMAGE_SIZE, IMAGE_SIZE),
        ChannelSpec::trajectory("effect", 3, Units::Meters, None),
        ChannelSpec::trajectory("ur10", 6, Units::Radians, Some("ur10")),
        ChannelSpec::trajectory("baxter", 7, Units::Radians, Some("baxter")),
    ]
}

fn object_image(size: f64) -> crate::numerics::Tensor {
    render_box(0.05 + 0.25 * size, 0.15)
}

/// Both-graspable sizes yield one sample with both arms and a lift. Larger
/// sizes yield a UR10 lift and a separate failed Baxter attempt.
pub fn gen_graspability(config: &GraspabilityConfig) -> Result<Dataset> {
    config.common.validate()?;
    let ur10 = joint_trajectory(
        &fixed_pose("ur10/grasp/start", 6),
        &fixed_pose("ur10/grasp/end", 6),
        min_jerk,
    );
    let baxter = joint_trajectory(
        &fixed_pose("baxter/grasp/start", 7),
        &fixed_pose("baxter/grasp/end", 7),
        min_jerk,
    );
    let effect = |lifted: bool| sample_grid(3, |t| vec![0.0, 0.0, lift_height(lifted, t)]);

    let sizes = config
        .train_sizes
        .iter()
        .map(|&s| (s, Split::Train))
        .chain(config.test_sizes.iter().map(|&s| (s, Split::Test)));
    let mut samples = Vec::new();
    for (size, split) in sizes {
        if !(size > 0.0 && size <= 1.0) {
            return Err(Error::invalid(format!("object size {size} outside (0, 1]")));
        }
        let image = object_image(size);
        // (ur10 available, baxter available, lifted)
        let layouts: &[(bool, bool, bool)] = if baxter_can_grasp(size) {
            &[(true, true, true)]
        } else {
            &[(true, false, true), (false, true, false)]
        };
        for &(use_ur, use_bx, lifted) in layouts {
            for _ in 0..config.common.samples_per_object {
                let mut rng = config.common.sample_rng(samples.len());
                let mut e = effect(lifted);
                add_noise(&mut e, config.common.noise, &mut rng);
                let ur = use_ur.then(|| {
                    let mut a = ur10.clone();
                    add_noise(&mut a, config.common.noise, &mut rng);
                    a
                });
                let bx = use_bx.then(|| {
                    let mut a = baxter.clone();
                    add_noise(&mut a, config.common.noise, &mut rng);
                    a
                });
                let agents = match (use_ur, use_bx) {
                    (true, true) => "both",
                    (true, false) => "ur10",
                    _ => "baxter",
                };
                samples.push(AffordanceSample {
                    channels: vec![Some(image.clone()), Some(e), ur, bx],
                    meta: SampleMeta {
                        scenario: "graspability".into(),
                        object: format!("object-{size:.1}"),
                        object_param: size,
                        outcome: if lifted { "lifted" } else { "not-lifted" }.into(),
                        split,
                        action: Some(format!("{agents}/grasp")),
                    },
                });
            }
        }
    }
    let mut ds = Dataset::new(graspability_specs(), samples)?;
    ds.scenario = serde_json::json!({ "scenario": "graspability", "config": config });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_free() -> Dataset {
        gen_graspability(&GraspabilityConfig {
            common: GenCommon::ground_truth(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn default_split_by_enumeration() {
        let cfg = GraspabilityConfig::default();
        let all: Vec<f64> = cfg.train_sizes.iter().chain(&cfg.test_sizes).copied().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(all.iter().filter(|&&s| baxter_can_grasp(s)).count(), 5);
        assert_eq!(cfg.train_sizes.len(), 8);
        for &s in &cfg.test_sizes {
            assert!((s - BAXTER_MAX_SIZE).abs() >= 0.2, "test size {s} on the boundary");
        }
    }

    #[test]
    fn small_object_lifted_by_both() {
        let ds = noise_free();
        let s = ds
            .samples
            .iter()
            .find(|s| (s.meta.object_param - 0.3).abs() < 1e-12)
            .unwrap();
        assert_eq!(s.mask(), vec![true, true, true, true]);
        let e = s.channels[1].as_ref().unwrap();
        assert_eq!(e.row_slice(99)[2], 0.3);
    }

    #[test]
    fn large_object_fails_for_baxter() {
        let ds = noise_free();
        let bx: Vec<_> = ds
            .samples
            .iter()
            .filter(|s| (s.meta.object_param - 0.8).abs() < 1e-12 && s.is_available(3))
            .collect();
        assert_eq!(bx.len(), 1);
        assert!(!bx[0].is_available(2));
        assert!(bx[0].channels[1].as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(bx[0].meta.outcome, "not-lifted");
        // 5 small sizes with one layout, 5 large with two
        assert_eq!(ds.len(), 15);
    }

    #[test]
    fn rejects_bad_size() {
        let cfg = GraspabilityConfig {
            test_sizes: vec![1.5],
            ..Default::default()
        };
        assert!(gen_graspability(&cfg).is_err());
    }
}
