use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataspec::Dataset;
use crate::error::{Error, Result};
use crate::model::{AffordanceModel, BlendWeights, Observation};

/// Total variance below this counts as a degenerate (all-identical) set.
const DEGENERATE_VARIANCE: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectLatent {
    pub object: String,
    pub outcome: String,
    pub latent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub snapshot: usize,
    pub object: String,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrace {
    pub points: Vec<LatentPoint>,
    /// Outcome class of each point, aligned with `points`.
    pub outcomes: Vec<String>,
    pub degenerate: bool,
}

impl LatentTrace {
    /// CSV rows `snapshot,object,pc1,pc2`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.points {
            out.serialize(p)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn snapshots(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.points.iter().map(|p| p.snapshot).collect();
        s.dedup();
        s
    }

    /// Points of one snapshot with integer class labels (first-seen order).
    pub fn at(&self, snapshot: usize) -> (Vec<[f64; 2]>, Vec<usize>) {
        let mut classes: Vec<&str> = Vec::new();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (p, o) in self.points.iter().zip(&self.outcomes) {
            if p.snapshot != snapshot {
                continue;
            }
            let label = classes.iter().position(|c| c == o).unwrap_or_else(|| {
                classes.push(o);
                classes.len() - 1
            });
            pts.push([p.pc1, p.pc2]);
            labels.push(label);
        }
        (pts, labels)
    }
}

/// Equal-weight affordance latent of each object's first sample, conditioned
/// on every channel that sample carries.
pub fn object_latents(model: &AffordanceModel, data: &Dataset) -> Result<Vec<ObjectLatent>> {
    model.check_specs(&data.specs)?;
    let mut out = Vec::new();
    for object in data.objects() {
        let s = data
            .samples
            .iter()
            .find(|s| s.meta.object == object)
            .expect("object listed by the dataset");
        let avail = s.available();
        let observed: Vec<(usize, Observation)> = avail
            .iter()
            .map(|&c| (c, Observation::full(&data.specs[c], s.channels[c].as_ref().expect("available"))))
            .collect();
        let weights = BlendWeights::equal(data.specs.len(), &avail)?;
        out.push(ObjectLatent {
            object,
            outcome: s.meta.outcome.clone(),
            latent: model.latent(&observed, &weights)?,
        });
    }
    Ok(out)
}

/// Projection of a point set onto its top two principal components.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Variance along each component.
    pub variances: [f64; 2],
    pub degenerate: bool,
}

/// Exact PCA through the eigendecomposition of the covariance matrix.
/// Component signs are fixed so each eigenvector's largest entry is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Projection> {
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("PCA needs at least one point"));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::shape("pca_2d", "points differ in dimension"));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / n as f64);
    }
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    if cov.trace() <= DEGENERATE_VARIANCE || d == 0 {
        return Ok(Projection {
            points: vec![[0.0; 2]; n],
            variances: [0.0; 2],
            degenerate: true,
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut proj = vec![[0.0; 2]; n];
    let mut variances = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        if pivot < 0.0 {
            v = -v;
        }
        let scores = &centered * v;
        for i in 0..n {
            proj[i][k] = scores[i];
        }
        variances[k] = eig.eigenvalues[idx].max(0.0);
    }
    Ok(Projection {
        points: proj,
        variances,
        degenerate: false,
    })
}

/// Pools every snapshot's latents into one PCA and projects each.
pub fn trace_from_latents(snapshots: &[(usize, Vec<ObjectLatent>)]) -> Result<LatentTrace> {
    if snapshots.len() < 2 {
        return Err(Error::invalid("latent trace needs at least two snapshots"));
    }
    let pooled: Vec<Vec<f64>> = snapshots
        .iter()
        .flat_map(|(_, ls)| ls.iter().map(|l| l.latent.clone()))
        .collect();
    let proj = pca_2d(&pooled)?;
    let mut points = Vec::with_capacity(pooled.len());
    let mut outcomes = Vec::with_capacity(pooled.len());
    let mut it = proj.points.iter();
    for (step, ls) in snapshots {
        for l in ls {
            let p = it.next().expect("one projection per latent");
            points.push(LatentPoint {
                snapshot: *step,
                object: l.object.clone(),
                pc1: p[0],
                pc2: p[1],
            });
            outcomes.push(l.outcome.clone());
        }
    }
    Ok(LatentTrace {
        points,
        outcomes,
        degenerate: proj.degenerate,
    })
}

/// Object latents of each `(step, model)` snapshot, projected jointly.
pub fn latent_trace(snapshots: &[(usize, &AffordanceModel)], data: &Dataset) -> Result<LatentTrace> {
    let latents = snapshots
        .iter()
        .map(|(step, m)| Ok((*step, object_latents(m, data)?)))
        .collect::<Result<Vec<_>>>()?;
    trace_from_latents(&latents)
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean silhouette coefficient; points alone in their class score 0.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    total / n as f64
}

/// Mean pairwise distance between points sharing a label.
pub fn mean_intra_class_distance(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if labels[i] == labels[j] {
                sum += dist(&points[i], &points[j]);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}
