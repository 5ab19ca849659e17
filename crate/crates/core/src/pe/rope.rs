use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_dim, inv_freq, PeError, DEFAULT_BASE};

/// Rotary encoding over interleaved pairs `(2i, 2i+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeParams {
    pub head_dim: usize,
    pub base: f64,
}

impl RopeParams {
    pub fn new(head_dim: usize, base: f64) -> Result<Self, PeError> {
        check_dim(head_dim, base)?;
        Ok(Self { head_dim, base })
    }

    pub fn with_default_base(head_dim: usize) -> Result<Self, PeError> {
        Self::new(head_dim, DEFAULT_BASE)
    }
}

/// Rotates each pair `(v[2i], v[2i+1])` by `position_id * base^(-2i/d)`.
pub fn rope_rotate(v: &[f64], position_id: i64, params: &RopeParams) -> Result<Vec<f64>, PeError> {
    if v.len() != params.head_dim {
        return Err(PeError::DimensionMismatch { expected: params.head_dim, got: v.len() });
    }
    let mut out = vec![0.0; v.len()];
    for i in 0..params.head_dim / 2 {
        let angle = position_id as f64 * inv_freq(i, params.head_dim, params.base);
        let (sin, cos) = angle.sin_cos();
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = x * cos - y * sin;
        out[2 * i + 1] = x * sin + y * cos;
    }
    Ok(out)
}

/// `count` vectors drawn uniformly from the unit sphere in `dim`
/// dimensions (normalized Gaussian samples, ChaCha8 seeded with `seed`).
pub fn unit_vectors(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// Mean over random unit `q` of `<R(0) q, R(delta) q>` for `delta = 0..=max_delta`.
///
/// Deltas are evaluated in parallel; every delta averages the same sample
/// set in the same order, so the result does not depend on thread count.
pub fn rope_attention_decay(
    params: &RopeParams,
    max_delta: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>, PeError> {
    if samples < 100 {
        return Err(PeError::BadArgument(format!("samples must be at least 100, got {samples}")));
    }
    if max_delta == 0 {
        return Err(PeError::BadArgument("max_delta must be positive".into()));
    }
    let queries = unit_vectors(params.head_dim, samples, seed);
    let base: Vec<Vec<f64>> = queries.iter().map(|q| rope_rotate(q, 0, params)).collect::<Result<_, _>>()?;
    (0..=max_delta)
        .into_par_iter()
        .map(|delta| {
            let mut total = 0.0;
            for (q, q0) in queries.iter().zip(&base) {
                let rotated = rope_rotate(q, delta as i64, params)?;
                total += q0.iter().zip(&rotated).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok((delta, total / samples as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_position_is_identity() {
        let p = RopeParams::with_default_base(8).unwrap();
        let v = vec![0.3, -1.2, 4.0, 0.5, -0.1, 2.2, 0.0, 7.5];
        assert_eq!(rope_rotate(&v, 0, &p).unwrap(), v);
    }

    #[test]
    fn first_pair_rotates_by_position() {
        let p = RopeParams::with_default_base(2).unwrap();
        let out = rope_rotate(&[1.0, 0.0], 1, &p).unwrap();
        assert!((out[0] - 1f64.cos()).abs() < 1e-15);
        assert!((out[1] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let p = RopeParams::with_default_base(4).unwrap();
        assert_eq!(rope_rotate(&[1.0, 2.0], 3, &p), Err(PeError::DimensionMismatch { expected: 4, got: 2 }));
        assert!(RopeParams::new(3, 10_000.0).is_err());
    }

    #[test]
    fn relative_position_property() {
        let p = RopeParams::with_default_base(16).unwrap();
        let vs = unit_vectors(16, 2, 11);
        let (q, k) = (&vs[0], &vs[1]);
        let reference = dot(&rope_rotate(q, 40, &p).unwrap(), &rope_rotate(k, 13, &p).unwrap());
        for shift in [1, 7, 1000, 65_536] {
            let s = dot(&rope_rotate(q, 40 + shift, &p).unwrap(), &rope_rotate(k, 13 + shift, &p).unwrap());
            assert!((s - reference).abs() < 1e-9, "shift {shift}: {s} vs {reference}");
        }
    }

    #[test]
    fn decay_curve_basics() {
        let p = RopeParams::with_default_base(64).unwrap();
        let curve = rope_attention_decay(&p, 256, 1000, 7).unwrap();
        assert_eq!(curve.len(), 257);
        assert!((curve[0].1 - 1.0).abs() < 1e-9);
        assert!(curve[1].1 > curve[256].1);
        assert_eq!(curve, rope_attention_decay(&p, 256, 1000, 7).unwrap());
        assert!(rope_attention_decay(&p, 8, 99, 7).is_err());
    }

    #[test]
    fn decay_matches_closed_form_expectation() {
        // E[<q, R(d) q>] = (2/dim) * sum_i cos(d * theta_i) for uniform unit q.
        let p = RopeParams::with_default_base(8).unwrap();
        let curve = rope_attention_decay(&p, 5, 20_000, 3).unwrap();
        for (delta, mean) in curve {
            let expected: f64 = (0..4).map(|i| (delta as f64 * inv_freq(i, 8, p.base)).cos()).sum::<f64>() / 4.0;
            assert!((mean - expected).abs() < 0.02, "delta {delta}: {mean} vs {expected}");
        }
    }
}
