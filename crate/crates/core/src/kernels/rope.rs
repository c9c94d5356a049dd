//! Rotary position embeddings, 1D and 2D.
//!
//! The 2D variant splits each head vector in half and rotates the first half
//! by the row coordinate and the second half by the column coordinate, each
//! half as an independent rotary embedding over its own dimensions.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default frequency base.
pub const ROPE_BASE: f64 = 10_000.0;

// Angles are computed at f64 regardless of T so f32 runs share the f64
// trigonometry.
fn rotate_pairs<T: Real>(out: &mut [T], pos: i64, base: f64) {
    let dim = out.len();
    let half = dim / 2;
    for m in 0..half {
        let freq = base.powf(-2.0 * m as f64 / dim as f64);
        let (sin, cos) = (pos as f64 * freq).sin_cos();
        let (sin, cos) = (T::from_f64(sin), T::from_f64(cos));
        let a = out[2 * m];
        let b = out[2 * m + 1];
        out[2 * m] = a * cos - b * sin;
        out[2 * m + 1] = a * sin + b * cos;
    }
}

/// Rotate `x` (`[seq x head_dim]`, row-major) by one integer position per row.
pub fn rope_1d<T: Real>(x: &[T], positions: &[i64], base: f64) -> Result<Vec<T>> {
    if positions.is_empty() || x.len() % positions.len() != 0 {
        return Err(Error::Shape(format!(
            "{} values do not divide into {} rows",
            x.len(),
            positions.len()
        )));
    }
    let head_dim = x.len() / positions.len();
    if head_dim % 2 != 0 {
        return Err(Error::Shape(format!("head_dim {head_dim} must be even")));
    }
    let mut out = x.to_vec();
    for (row, &pos) in positions.iter().enumerate() {
        rotate_pairs(&mut out[row * head_dim..(row + 1) * head_dim], pos, base);
    }
    Ok(out)
}

/// Rotate `x` (`[seq x head_dim]`) by one `(i, j)` grid position per row:
/// first half by `i`, second half by `j`.
pub fn rope_2d<T: Real>(x: &[T], positions: &[(i64, i64)], base: f64) -> Result<Vec<T>> {
    if positions.is_empty() || x.len() % positions.len() != 0 {
        return Err(Error::Shape(format!(
            "{} values do not divide into {} rows",
            x.len(),
            positions.len()
        )));
    }
    let head_dim = x.len() / positions.len();
    if head_dim % 4 != 0 {
        return Err(Error::Shape(format!(
            "head_dim {head_dim} must be divisible by 4 for 2D rotation"
        )));
    }
    let half = head_dim / 2;
    let mut out = x.to_vec();
    for (row, &(i, j)) in positions.iter().enumerate() {
        let start = row * head_dim;
        rotate_pairs(&mut out[start..start + half], i, base);
        rotate_pairs(&mut out[start + half..start + head_dim], j, base);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    #[test]
    fn position_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randv(&mut rng, 16);
        assert_eq!(rope_1d(&x, &[0], ROPE_BASE).unwrap(), x);
        assert_eq!(rope_2d(&x, &[(0, 0)], ROPE_BASE).unwrap(), x);
    }

    #[test]
    fn zero_column_leaves_second_half_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randv(&mut rng, 16);
        let y = rope_2d(&x, &[(5, 0)], ROPE_BASE).unwrap();
        assert_eq!(&y[8..], &x[8..]);
        assert_ne!(&y[..8], &x[..8]);
    }

    #[test]
    fn norm_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = randv(&mut rng, 32);
            let p = rng.gen_range(0..512);
            let y = rope_1d(&x, &[p], ROPE_BASE).unwrap();
            assert!((norm(&x) - norm(&y)).abs() < 1e-12);

            let ij = (rng.gen_range(0..64), rng.gen_range(0..64));
            let y = rope_2d(&x, &[ij], ROPE_BASE).unwrap();
            assert!((norm(&x) - norm(&y)).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_shift_invariance_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = randv(&mut rng, 16);
            let k = randv(&mut rng, 16);
            let (p1, p2) = (rng.gen_range(0..256), rng.gen_range(0..256));
            let shift = rng.gen_range(-64..64);
            let a = dot(
                &rope_1d(&q, &[p1], ROPE_BASE).unwrap(),
                &rope_1d(&k, &[p2], ROPE_BASE).unwrap(),
            );
            let b = dot(
                &rope_1d(&q, &[p1 + shift], ROPE_BASE).unwrap(),
                &rope_1d(&k, &[p2 + shift], ROPE_BASE).unwrap(),
            );
            assert!((a - b).abs() <= 1e-9, "1d shift leak: {a} vs {b}");
        }
    }

    #[test]
    fn relative_shift_invariance_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let q = randv(&mut rng, 16);
            let k = randv(&mut rng, 16);
            let p1 = (rng.gen_range(0..32), rng.gen_range(0..32));
            let p2 = (rng.gen_range(0..32), rng.gen_range(0..32));
            let d = (rng.gen_range(-16..16), rng.gen_range(-16..16));
            let a = dot(
                &rope_2d(&q, &[p1], ROPE_BASE).unwrap(),
                &rope_2d(&k, &[p2], ROPE_BASE).unwrap(),
            );
            let b = dot(
                &rope_2d(&q, &[(p1.0 + d.0, p1.1 + d.1)], ROPE_BASE).unwrap(),
                &rope_2d(&k, &[(p2.0 + d.0, p2.1 + d.1)], ROPE_BASE).unwrap(),
            );
            assert!((a - b).abs() <= 1e-9, "2d shift leak: {a} vs {b}");
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let x = vec![0.0f64; 6];
        assert!(rope_1d(&x, &[1, 2], ROPE_BASE).is_err()); // head_dim 3
        assert!(rope_2d(&x, &[(1, 1)], ROPE_BASE).is_err()); // head_dim 6 % 4 != 0
    }
}
