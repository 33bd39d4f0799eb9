//! Closed-form affordance generators for the insertability, graspability and
//! rollability scenarios.
//!
//! Every trajectory is sampled on the canonical grid `t_i = i/(T−1)`. Noise
//! is i.i.d. Gaussian, added to trajectories only, drawn from a per-sample
//! generator seeded by `seed ⊕ mix(sample index)`, so samples can be produced
//! in any order with identical results.

mod graspability;
mod insertability;
pub mod render;
mod rollability;

pub use graspability::{
    baxter_can_grasp, gen_graspability, graspability_specs, lift_height, GraspabilityConfig, BAXTER_MAX_SIZE,
    LIFT_HEIGHT,
};
pub use insertability::{
    gen_insertability, insertability_specs, insertion_action, insertion_force, is_insertable, InsertabilityConfig,
    ROD_HALF_WIDTH,
};
pub use rollability::{
    gen_rollability, push_displacement, push_effect, rollability_specs, rolls, Direction, Pusher, RollabilityConfig,
    Shape, UrStyle, ROLLED_DISPLACEMENT, SLID_DISPLACEMENT,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataspec::{grid_time, CANONICAL_T};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Settings shared by all scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenCommon {
    pub noise: f64,
    pub seed: u64,
    pub samples_per_object: usize,
}

impl Default for GenCommon {
    fn default() -> Self {
        GenCommon {
            noise: 0.01,
            seed: 0,
            samples_per_object: 20,
        }
    }
}

impl GenCommon {
    /// One noise-free realization per object layout.
    pub fn ground_truth() -> Self {
        GenCommon {
            noise: 0.0,
            seed: 0,
            samples_per_object: 1,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be >= 0, got {}", self.noise)));
        }
        if self.samples_per_object == 0 {
            return Err(Error::invalid("samples_per_object must be positive"));
        }
        Ok(())
    }

    pub(crate) fn sample_rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Minimum-jerk phase `10t³ − 15t⁴ + 6t⁵`.
pub fn min_jerk(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Samples `f` on the canonical grid into a `[T, dim]` tensor.
pub(crate) fn sample_grid(dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Tensor {
    let mut data = Vec::with_capacity(CANONICAL_T * dim);
    for i in 0..CANONICAL_T {
        let row = f(grid_time(i, CANONICAL_T));
        debug_assert_eq!(row.len(), dim);
        data.extend(row);
    }
    Tensor::new(vec![CANONICAL_T, dim], data).expect("grid shape")
}

pub(crate) fn add_noise(t: &mut Tensor, sigma: f64, rng: &mut impl Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    for v in t.data_mut() {
        *v += normal.sample(rng);
    }
}

/// Fixed joint-space pose for a named action endpoint, uniform in `[−2, 2]`.
/// Distinct tags give unrelated poses.
pub(crate) fn fixed_pose(tag: &str, dim: usize) -> Vec<f64> {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// `q(t) = start + (end − start)·s(phase(t))` on the grid.
pub(crate) fn joint_trajectory(start: &[f64], end: &[f64], phase: impl Fn(f64) -> f64) -> Tensor {
    sample_grid(start.len(), |t| {
        let s = phase(t);
        start.iter().zip(end).map(|(a, b)| a + (b - a) * s).collect()
    })
}
