//! 32×32 synthetic depth renders. Pixel values are normalized depth; the table
//! sits at 0.5, raised surfaces are closer (smaller), openings deeper (larger).

use crate::numerics::Tensor;

pub const IMAGE_SIZE: usize = 32;
pub const BACKGROUND_DEPTH: f64 = 0.5;
const SUPERSAMPLE: usize = 4;

/// Renders a height field `h(u, v)` over `u, v ∈ [−0.5, 0.5]` with 4×4
/// supersampling. Depth is `background − h`.
pub fn render_height_field(height: impl Fn(f64, f64) -> f64) -> Tensor {
    let n = IMAGE_SIZE;
    let ss = SUPERSAMPLE as f64;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let u = (col as f64 + (b as f64 + 0.5) / ss) / n as f64 - 0.5;
                    let v = (row as f64 + (a as f64 + 0.5) / ss) / n as f64 - 0.5;
                    acc += height(u, v);
                }
            }
            out.push(BACKGROUND_DEPTH - acc / (ss * ss));
        }
    }
    Tensor::new(vec![n, n], out).expect("square image")
}

/// Table surface with a centered square opening of side `2·half_width` at depth 1.0.
/// Pixel values use exact area coverage so every width renders distinctly.
pub fn render_opening(half_width: f64) -> Tensor {
    let n = IMAGE_SIZE;
    let px = 1.0 / n as f64;
    let overlap = |lo: f64| -> f64 {
        let hi = lo + px;
        (hi.min(half_width) - lo.max(-half_width)).max(0.0) / px
    };
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        let cy = overlap(row as f64 * px - 0.5);
        for col in 0..n {
            let cx = overlap(col as f64 * px - 0.5);
            out.push(BACKGROUND_DEPTH + (1.0 - BACKGROUND_DEPTH) * cx * cy);
        }
    }
    Tensor::new(vec![n, n], out).expect("square image")
}

/// Flat-topped square block seen from above.
pub fn render_box(half_side: f64, height: f64) -> Tensor {
    render_height_field(|u, v| {
        if u.abs() <= half_side && v.abs() <= half_side {
            height
        } else {
            0.0
        }
    })
}

pub fn render_disk(radius: f64, height: f64) -> Tensor {
    render_height_field(|u, v| if u * u + v * v <= radius * radius { height } else { 0.0 })
}

pub fn render_hemisphere(radius: f64, height: f64) -> Tensor {
    render_height_field(|u, v| height * (1.0 - (u * u + v * v) / (radius * radius)).max(0.0).sqrt())
}

pub fn render_cone(radius: f64, height: f64) -> Tensor {
    render_height_field(|u, v| height * (1.0 - (u * u + v * v).sqrt() / radius).max(0.0))
}

/// Cylinder lying on its side: a half-cylinder ridge whose axis makes
/// `axis_deg` with the image x-axis.
pub fn render_ridge(axis_deg: f64, radius: f64, half_length: f64, height: f64) -> Tensor {
    let (s, c) = axis_deg.to_radians().sin_cos();
    render_height_field(|u, v| {
        let along = c * u + s * v;
        let across = -s * u + c * v;
        if along.abs() > half_length {
            return 0.0;
        }
        height * (1.0 - (across / radius).powi(2)).max(0.0).sqrt()
    })
}
