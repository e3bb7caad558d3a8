//! Small dense kernels shared across modules.

const LANES: usize = 8;

/// Sum of `f(k)` over `0..n` with a fixed eight-lane accumulation order, so
/// results do not depend on how the compiler vectorizes.
#[inline(always)]
fn lane_sum(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = [0f64; LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        for (l, a) in acc.iter_mut().enumerate() {
            *a += f(base + l);
        }
    }
    let mut tail = 0f64;
    for k in chunks * LANES..n {
        tail += f(k);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Euclidean norm accumulated in f64.
pub fn norm_f64(v: &[f32]) -> f64 {
    lane_sum(v.len(), |k| v[k] as f64 * v[k] as f64).sqrt()
}

/// f32 dot product with a fixed eight-lane accumulation order.
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0f32;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    let b = &b[..a.len()];
    lane_sum(a.len(), |k| a[k] * b[k])
}

pub fn sq_dist_f64(a: &[f64], b: &[f64]) -> f64 {
    let b = &b[..a.len()];
    lane_sum(a.len(), |k| (a[k] - b[k]) * (a[k] - b[k]))
}

/// Squared distance between an f64 state and an f32 feature row.
pub fn sq_dist_mixed(a: &[f64], b: &[f32]) -> f64 {
    let b = &b[..a.len()];
    lane_sum(a.len(), |k| {
        let t = a[k] - b[k] as f64;
        t * t
    })
}

/// Squared distance between two f32 rows, accumulated in f64.
pub fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    let b = &b[..a.len()];
    lane_sum(a.len(), |k| {
        let t = a[k] as f64 - b[k] as f64;
        t * t
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.5).collect();
        let b: Vec<f32> = (0..19).map(|i| 1.0 - i as f32 * 0.25).collect();
        let naive: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot_f32(&a, &b) - naive).abs() < 1e-4);
        assert_eq!(norm_f64(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn lane_kernels_match_naive() {
        for n in [0usize, 1, 7, 8, 9, 33] {
            let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f32> = (0..n).map(|i| (i as f32 * 0.11).cos()).collect();
            let bd: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            let af: Vec<f32> = a.iter().map(|&v| v as f32).collect();
            let naive: f64 = a.iter().zip(&bd).map(|(x, y)| (x - y) * (x - y)).sum();
            assert!((sq_dist_mixed(&a, &b) - naive).abs() < 1e-12);
            assert!((sq_dist_f64(&a, &bd) - naive).abs() < 1e-12);
            assert!((dot_f64(&a, &bd) - a.iter().zip(&bd).map(|(x, y)| x * y).sum::<f64>()).abs() < 1e-12);
            let nf: f64 = af.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
            assert!((sq_dist_f32(&af, &b) - nf).abs() < 1e-12);
        }
    }
}
