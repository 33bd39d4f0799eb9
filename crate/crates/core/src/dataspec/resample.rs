use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Normalized time of row `i` on a uniform grid of `len` rows.
pub fn grid_time(i: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        i as f64 / (len - 1) as f64
    }
}

/// Linear resampling of a `[T', dim]` trajectory onto `target` uniform times in
/// `[0, 1]`. Endpoints are copied, not interpolated.
pub fn resample_trajectory(values: &Tensor, target: usize) -> Result<Tensor> {
    let (src, dim) = values.dims2("resample_trajectory")?;
    if src < 2 {
        return Err(Error::invalid(format!(
            "trajectory needs at least 2 rows to resample, got {src}"
        )));
    }
    if target < 2 {
        return Err(Error::invalid(format!("target length {target} < 2")));
    }
    let mut out = Vec::with_capacity(target * dim);
    for i in 0..target {
        if i == 0 {
            out.extend_from_slice(values.row_slice(0));
            continue;
        }
        if i == target - 1 {
            out.extend_from_slice(values.row_slice(src - 1));
            continue;
        }
        let pos = grid_time(i, target) * (src - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 2);
        let frac = pos - lo as f64;
        let a = values.row_slice(lo);
        let b = values.row_slice(lo + 1);
        out.extend(a.iter().zip(b).map(|(x, y)| x + (y - x) * frac));
    }
    Tensor::new(vec![target, dim], out)
}
