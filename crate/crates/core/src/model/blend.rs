use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::dataspec::{ChannelSpec, Modality};
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative per-channel blend weights summing to one over the selected
/// channels and zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights(Vec<f64>);

impl BlendWeights {
    /// Validates `weights` against the simplex constraint.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidWeights(format!("weight outside [0,1]: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {total}")));
        }
        Ok(BlendWeights(weights))
    }

    pub fn one_hot(channels: usize, index: usize) -> Result<Self> {
        if index >= channels {
            return Err(Error::InvalidWeights(format!("channel {index} of {channels}")));
        }
        let mut w = vec![0.0; channels];
        w[index] = 1.0;
        Ok(BlendWeights(w))
    }

    /// Equal weights over `selected`.
    pub fn equal(channels: usize, selected: &[usize]) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::InvalidWeights("no channel selected".into()));
        }
        let mut w = vec![0.0; channels];
        for &c in selected {
            if c >= channels {
                return Err(Error::InvalidWeights(format!("channel {c} of {channels}")));
            }
            w[c] = 1.0 / selected.len() as f64;
        }
        BlendWeights::new(w)
    }

    /// Two-stage flat-Dirichlet draw: agents within the action modality,
    /// then across the modalities present in `selected`.
    pub fn hierarchical_dirichlet(specs: &[ChannelSpec], selected: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::InvalidWeights("no channel selected".into()));
        }
        let mut groups: Vec<(bool, Vec<usize>)> = Vec::new();
        for &c in selected {
            let spec = specs
                .get(c)
                .ok_or_else(|| Error::InvalidWeights(format!("channel {c} of {}", specs.len())))?;
            match spec.modality() {
                Modality::Action { .. } => match groups.iter_mut().find(|(action, _)| *action) {
                    Some((_, members)) => members.push(c),
                    None => groups.push((true, vec![c])),
                },
                _ => groups.push((false, vec![c])),
            }
        }
        let outer = flat_dirichlet(groups.len(), rng);
        let mut w = vec![0.0; specs.len()];
        for ((_, members), p) in groups.iter().zip(outer) {
            let inner = flat_dirichlet(members.len(), rng);
            for (&c, q) in members.iter().zip(inner) {
                w[c] = p * q;
            }
        }
        // renormalize away rounding so the simplex check is exact
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        BlendWeights::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Indices with nonzero weight, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&c| self.0[c] > 0.0).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Uniform draw from the probability simplex of dimension `k`.
pub fn flat_dirichlet(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// `Σ_c w_c · latent_c` over the weights' support. Channels outside the
/// support may be `None`; a weighted channel without a latent is an error.
pub fn blend(latents: &[Option<Vec<f64>>], weights: &BlendWeights) -> Result<Vec<f64>> {
    if latents.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} latents, {} weights",
            latents.len(),
            weights.len()
        )));
    }
    let mut out: Option<Vec<f64>> = None;
    for c in weights.support() {
        let w = weights.0[c];
        let l = latents[c]
            .as_ref()
            .ok_or_else(|| Error::InvalidWeights(format!("nonzero weight on missing channel {c}")))?;
        match &mut out {
            None => out = Some(l.iter().map(|v| w * v).collect()),
            Some(acc) => {
                if acc.len() != l.len() {
                    return Err(Error::shape("blend", format!("latent {} vs {}", l.len(), acc.len())));
                }
                acc.iter_mut().zip(l).for_each(|(a, v)| *a += w * v);
            }
        }
    }
    out.ok_or_else(|| Error::InvalidWeights("empty support".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspec::Units;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_way_average() {
        let w = BlendWeights::new(vec![0.5, 0.5]).unwrap();
        let out = blend(&[Some(vec![0.0, 2.0]), Some(vec![2.0, 0.0])], &w).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_off_simplex_and_missing() {
        assert!(BlendWeights::new(vec![0.5, 0.6]).is_err());
        assert!(BlendWeights::new(vec![1.2, -0.2]).is_err());
        assert!(BlendWeights::new(vec![0.5, 0.5 + 2e-9]).is_err());
        let w = BlendWeights::new(vec![0.5, 0.5]).unwrap();
        assert!(blend(&[Some(vec![1.0]), None], &w).is_err());
    }

    #[test]
    fn hierarchical_groups_agents() {
        let specs = vec![
            ChannelSpec::image("object", 4, 4),
            ChannelSpec::trajectory("effect", 1, Units::Meters, None),
            ChannelSpec::trajectory("a", 2, Units::Radians, Some("a")),
            ChannelSpec::trajectory("b", 2, Units::Radians, Some("b")),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut action_share = 0.0;
        let n = 4000;
        for _ in 0..n {
            let w = BlendWeights::hierarchical_dirichlet(&specs, &[0, 1, 2, 3], &mut rng).unwrap();
            action_share += w.as_slice()[2] + w.as_slice()[3];
        }
        // three modalities: the action group's expected share is 1/3, not 1/2
        assert!((action_share / n as f64 - 1.0 / 3.0).abs() < 0.02);
        let w = BlendWeights::hierarchical_dirichlet(&specs, &[1], &mut rng).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
