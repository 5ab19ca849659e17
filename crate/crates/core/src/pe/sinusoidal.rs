use super::{check_dim, inv_freq, PeError, DEFAULT_BASE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidalParams {
    pub d_model: usize,
    pub base: f64,
}

impl SinusoidalParams {
    pub fn new(d_model: usize, base: f64) -> Result<Self, PeError> {
        check_dim(d_model, base)?;
        Ok(Self { d_model, base })
    }

    pub fn with_default_base(d_model: usize) -> Result<Self, PeError> {
        Self::new(d_model, DEFAULT_BASE)
    }
}

/// `PE[2i] = sin(pos / base^(2i/d))`, `PE[2i+1] = cos(pos / base^(2i/d))`.
pub fn sinusoidal_pe(pos: u64, params: &SinusoidalParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.d_model);
    for i in 0..params.d_model / 2 {
        let angle = pos as f64 * inv_freq(i, params.d_model, params.base);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Pairwise cosine similarity of the encodings of positions `0..max_pos`.
///
/// The diagonal is set to exactly 1 and the lower triangle mirrors the
/// upper one, so the matrix is symmetric bit-for-bit.
pub fn cosine_similarity_curve(max_pos: usize, params: &SinusoidalParams) -> Result<Vec<Vec<f64>>, PeError> {
    if max_pos < 2 {
        return Err(PeError::BadArgument(format!("max_pos must be at least 2, got {max_pos}")));
    }
    let pes: Vec<Vec<f64>> = (0..max_pos as u64).map(|p| sinusoidal_pe(p, params)).collect();
    let mut m = vec![vec![0.0; max_pos]; max_pos];
    for a in 0..max_pos {
        m[a][a] = 1.0;
        for b in a + 1..max_pos {
            let c = cosine(&pes[a], &pes[b]);
            m[a][b] = c;
            m[b][a] = c;
        }
    }
    Ok(m)
}

/// Mean of `sim(pos, pos + offset)` over every valid `pos` in the matrix.
pub fn mean_similarity_at_offset(matrix: &[Vec<f64>], offset: usize) -> Option<f64> {
    let n = matrix.len();
    if offset >= n {
        return None;
    }
    let total: f64 = (0..n - offset).map(|p| matrix[p][p + offset]).sum();
    Some(total / (n - offset) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn position_zero_alternates() {
        let p = SinusoidalParams::with_default_base(8).unwrap();
        assert_eq!(sinusoidal_pe(0, &p), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn position_one_small_dim() {
        let p = SinusoidalParams::with_default_base(4).unwrap();
        let pe = sinusoidal_pe(1, &p);
        // 10000^(2/4) = 100
        let expected = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in pe.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn norms_are_constant() {
        let p = SinusoidalParams::with_default_base(64).unwrap();
        for pos in [0, 1, 17, 999, 123_456] {
            assert!((norm(&sinusoidal_pe(pos, &p)) - 32f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(SinusoidalParams::new(5, 10_000.0), Err(PeError::OddDimension(5)));
        assert!(SinusoidalParams::new(4, 1.0).is_err());
        let p = SinusoidalParams::with_default_base(4).unwrap();
        assert!(cosine_similarity_curve(1, &p).is_err());
    }

    #[test]
    fn neighbours_beat_distant_positions() {
        let p = SinusoidalParams::with_default_base(128).unwrap();
        let m = cosine_similarity_curve(200, &p).unwrap();
        for pos in 0..150 {
            assert!(m[pos][pos + 1] > m[pos][pos + 50], "pos {pos}");
        }
        for (a, row) in m.iter().enumerate() {
            assert_eq!(row[a], 1.0);
            for (b, &v) in row.iter().enumerate() {
                assert_eq!(v, m[b][a]);
            }
        }
    }
}
