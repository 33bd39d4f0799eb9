use crate::numerics::Tensor;

const BACKGROUND: f64 = 0.5;
const REGION_THRESHOLD: f64 = 0.05;

/// Mean absolute 4-neighbor Laplacian over the object region (pixels more
/// than 0.05 from the background depth), borders replicated; 0 when the
/// region is empty.
pub fn mean_curvature(image: &Tensor) -> f64 {
    let shape = image.shape();
    let (h, w) = match shape {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        _ => return 0.0,
    };
    let d = image.data();
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        d[r * w + c]
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let v = at(r, c);
            if (v - BACKGROUND).abs() <= REGION_THRESHOLD {
                continue;
            }
            let lap = at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * v;
            total += lap.abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
