use super::ToyError;

/// Square boolean attention mask indexed `(query, key)`; `true` = may attend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn causal(size: usize) -> Self {
        Self::from_fn(size, |q, k| k <= q)
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(size * size);
        for q in 0..size {
            for k in 0..size {
                allowed.push(f(q, k));
            }
        }
        Self { size, allowed }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.size + key]
    }

    pub fn set(&mut self, query: usize, key: usize, allow: bool) {
        self.allowed[query * self.size + key] = allow;
    }

    /// Every query must see at least one key.
    pub fn check_rows(&self) -> Result<(), ToyError> {
        match (0..self.size).find(|&q| (0..self.size).all(|k| !self.allows(q, k))) {
            Some(row) => Err(ToyError::EmptyAttentionRow { row }),
            None => Ok(()),
        }
    }

    /// Row-major mask over `[prefix keys; own keys]`, prefix always visible.
    pub(crate) fn with_prefix(&self, prefix: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.size * (prefix + self.size));
        for q in 0..self.size {
            out.extend(std::iter::repeat_n(true, prefix));
            out.extend_from_slice(&self.allowed[q * self.size..(q + 1) * self.size]);
        }
        out
    }

    /// Renders the mask as rows of `T`/`F`.
    pub fn render(&self) -> String {
        (0..self.size)
            .map(|q| (0..self.size).map(|k| if self.allows(q, k) { 'T' } else { 'F' }).collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Causal mask over `[vision; voco; text]` in which text queries never see
/// vision keys; the VoCo tokens are the only route from image to text.
pub fn voco_attention_mask(n_vision: usize, n_voco: usize, n_text: usize) -> AttentionMask {
    let text_start = n_vision + n_voco;
    AttentionMask::from_fn(text_start + n_text, |q, k| k <= q && !(q >= text_start && k < n_vision))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_voco_mask() {
        let m = voco_attention_mask(1, 1, 1);
        assert_eq!(m.render(), "TFF\nTTF\nFTT");
    }

    #[test]
    fn text_rows_skip_vision_columns() {
        let m = voco_attention_mask(3, 1, 2);
        for q in 4..6 {
            for k in 0..3 {
                assert!(!m.allows(q, k));
            }
            assert!(m.allows(q, 3));
            assert!(m.allows(q, 4));
        }
        assert!(!m.allows(4, 5));
        assert!(m.allows(5, 5));
        // voco sees every vision token
        assert!((0..4).all(|k| m.allows(3, k)));
        assert!((0..6).all(|i| m.allows(i, i)));
    }

    #[test]
    fn empty_rows_are_detected() {
        let mut m = AttentionMask::causal(3);
        assert!(m.check_rows().is_ok());
        m.set(0, 0, false);
        assert_eq!(m.check_rows(), Err(ToyError::EmptyAttentionRow { row: 0 }));
    }

    #[test]
    fn prefix_columns_are_open() {
        let m = AttentionMask::causal(2);
        assert_eq!(m.with_prefix(1), vec![true, true, false, true, true, true]);
    }
}
