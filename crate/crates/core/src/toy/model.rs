//! A small pre-norm transformer with rotary attention at caller-supplied
//! position IDs.
//!
//! Each layer: `h += Wo * MHA(rms(h))`, then `h += W2 * silu(W1 * rms(h))`.
//! Queries and keys are rotated at the supplied position IDs, never at the
//! physical index. Projections have no biases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::{AttentionMask, Mat, Real, ToyError};
use crate::pe::inv_freq;

pub const RMS_EPS: f64 = 1e-6;
/// Standard deviation of every randomly initialized weight.
pub const INIT_STD: f64 = 0.02;

/// Row of the special-token table holding `[AE]`.
pub const AE_ROW: usize = 0;
/// Row of the special-token table holding `[LM]`.
pub const LM_ROW: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab: usize,
    pub n_layers: usize,
    /// Hidden width of the feed-forward block, as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub rope_base: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { d_model: 32, n_heads: 2, vocab: 64, n_layers: 2, ffn_mult: 2, rope_base: 10_000.0 }
    }
}

impl ToyConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: String| Err(ToyError::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.vocab == 0 || self.n_layers == 0 || self.ffn_mult == 0 {
            return bad("all model dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(2 * self.n_heads) {
            return bad(format!("d_model {} must be a multiple of 2 * n_heads = {}", self.d_model, 2 * self.n_heads));
        }
        if self.rope_base.is_nan() || self.rope_base <= 1.0 {
            return bad(format!("rope_base must exceed 1, got {}", self.rope_base));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub wq: Mat<T>,
    pub wk: Mat<T>,
    pub wv: Mat<T>,
    pub wo: Mat<T>,
    pub w_up: Mat<T>,
    pub w_down: Mat<T>,
}

/// All weights of the toy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    pub config: ToyConfig,
    pub seed: u64,
    /// Token embedding table shared by encoder and decoder inputs.
    pub embed: Mat<T>,
    /// Learnable `[AE]` and `[LM]` rows.
    pub special: Mat<T>,
    pub layers: Vec<LayerWeights<T>>,
    /// Output projection `d_model x vocab`.
    pub head: Mat<T>,
}

/// Memory-token embeddings shared by every chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEmbeddings<T>(pub Mat<T>);

impl<T: Real> MemoryEmbeddings<T> {
    pub fn count(&self) -> usize {
        self.0.rows()
    }

    pub fn cast<U: Real>(&self) -> MemoryEmbeddings<U> {
        MemoryEmbeddings(self.0.cast())
    }
}

impl MemoryEmbeddings<f64> {
    /// Gaussian entries with [`INIT_STD`], drawn from stream 1 of the
    /// ChaCha8 generator seeded with `seed` (stream 0 initializes the model).
    pub fn random(count: usize, d_model: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        MemoryEmbeddings(Mat::from_fn(count, d_model, |_, _| normal.sample(&mut rng)))
    }
}

/// Keys (already rotated) and values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv<T> {
    pub keys: Mat<T>,
    pub values: Mat<T>,
}

/// Per-layer cached keys and values of memory positions; the keys carry
/// the rotation of the position IDs they were written at.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCarrier<T> {
    pub layers: Vec<LayerKv<T>>,
}

impl<T: Real> KvCarrier<T> {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.keys.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks carriers chunk after chunk, layer by layer.
    pub fn concat(parts: &[KvCarrier<T>]) -> KvCarrier<T> {
        let n_layers = parts.first().map_or(0, |p| p.layers.len());
        let layers = (0..n_layers)
            .map(|l| LayerKv {
                keys: Mat::concat_rows(&parts.iter().map(|p| &p.layers[l].keys).collect::<Vec<_>>()),
                values: Mat::concat_rows(&parts.iter().map(|p| &p.layers[l].values).collect::<Vec<_>>()),
            })
            .collect();
        KvCarrier { layers }
    }
}

pub enum ForwardInput<'a, T> {
    Tokens(&'a [usize]),
    Embeddings(&'a Mat<T>),
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// Final normalized hidden states, one row per input.
    pub outputs: Mat<T>,
    pub logits: Mat<T>,
    /// Per-layer keys (rotated) and values of this sequence.
    pub kv: Vec<LayerKv<T>>,
    /// `attention[layer][head]`: queries x (prefix keys + own keys).
    pub attention: Vec<Vec<Mat<T>>>,
    /// Residual stream after each layer.
    pub layer_outputs: Vec<Mat<T>>,
}

pub(crate) struct ModelVars {
    pub embed: Var,
    pub special: Var,
    layers: Vec<[Var; 6]>,
    head: Var,
}

pub(crate) struct ForwardVars {
    pub hidden: Var,
    pub logits: Var,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
    pub attention: Vec<Vec<Var>>,
    pub layer_outputs: Vec<Var>,
}

impl ToyModel<f64> {
    /// Seeded Gaussian initialization with standard deviation [`INIT_STD`].
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self, ToyError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut init = |r, c| Mat::from_fn(r, c, |_, _| normal.sample(&mut rng));
        let d = config.d_model;
        let f = d * config.ffn_mult;
        let embed = init(config.vocab, d);
        let special = init(2, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: init(d, d),
                wk: init(d, d),
                wv: init(d, d),
                wo: init(d, d),
                w_up: init(d, f),
                w_down: init(f, d),
            })
            .collect();
        let head = init(d, config.vocab);
        Ok(Self { config, seed, embed, special, layers, head })
    }
}

impl<T: Real> ToyModel<T> {
    /// Every weight zero.
    pub fn zeros(config: ToyConfig) -> Result<Self, ToyError> {
        config.validate()?;
        let d = config.d_model;
        let f = d * config.ffn_mult;
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: Mat::zeros(d, d),
                wk: Mat::zeros(d, d),
                wv: Mat::zeros(d, d),
                wo: Mat::zeros(d, d),
                w_up: Mat::zeros(d, f),
                w_down: Mat::zeros(f, d),
            })
            .collect();
        Ok(Self {
            config,
            seed: 0,
            embed: Mat::zeros(config.vocab, d),
            special: Mat::zeros(2, d),
            layers,
            head: Mat::zeros(d, config.vocab),
        })
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> ToyModel<U> {
        ToyModel {
            config: self.config,
            seed: self.seed,
            embed: self.embed.cast(),
            special: self.special.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    w_up: l.w_up.cast(),
                    w_down: l.w_down.cast(),
                })
                .collect(),
            head: self.head.cast(),
        }
    }

    pub(crate) fn register(&self, g: &mut Graph<T>) -> ModelVars {
        ModelVars {
            embed: g.leaf(self.embed.clone()),
            special: g.leaf(self.special.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    [
                        g.leaf(l.wq.clone()),
                        g.leaf(l.wk.clone()),
                        g.leaf(l.wv.clone()),
                        g.leaf(l.wo.clone()),
                        g.leaf(l.w_up.clone()),
                        g.leaf(l.w_down.clone()),
                    ]
                })
                .collect(),
            head: g.leaf(self.head.clone()),
        }
    }

    /// Rotation angles for every (row, column pair) of a `rows x d_model`
    /// projection; pairs are interleaved within each head.
    fn angles(&self, positions: &[i64]) -> Mat<f64> {
        let dh = self.config.head_dim();
        let pairs = self.config.d_model / 2;
        Mat::from_fn(positions.len(), pairs, |r, j| {
            positions[r] as f64 * inv_freq(j % (dh / 2), dh, self.config.rope_base)
        })
    }

    /// Builds the forward pass for the input rows `x` into `g`.
    ///
    /// `prefix` holds one `(rotated keys, values)` pair per layer that every
    /// query may attend to ahead of its own sequence. `value_offsets[l]`,
    /// if present, is added to layer `l`'s value projection.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward_vars(
        &self,
        g: &mut Graph<T>,
        mv: &ModelVars,
        x: Var,
        positions: &[i64],
        mask: &AttentionMask,
        prefix: &[(Var, Var)],
        value_offsets: &[Option<Mat<T>>],
    ) -> Result<ForwardVars, ToyError> {
        let n = g.value(x).rows();
        let d = self.config.d_model;
        if g.value(x).cols() != d {
            return Err(ToyError::LengthMismatch(format!("input width {} != d_model {d}", g.value(x).cols())));
        }
        if positions.len() != n {
            return Err(ToyError::LengthMismatch(format!("{} position IDs for {n} inputs", positions.len())));
        }
        if mask.size() != n {
            return Err(ToyError::LengthMismatch(format!("mask of size {} for {n} inputs", mask.size())));
        }
        if !prefix.is_empty() && prefix.len() != self.layers.len() {
            return Err(ToyError::LengthMismatch(format!(
                "prefix has {} layers, model has {}",
                prefix.len(),
                self.layers.len()
            )));
        }
        mask.check_rows()?;

        let eps = T::from(RMS_EPS).unwrap();
        let dh = self.config.head_dim();
        let scale = T::from(1.0 / (dh as f64).sqrt()).unwrap();
        let angles = self.angles(positions);
        let prefix_len = prefix.first().map_or(0, |(k, _)| g.value(*k).rows());
        let allowed = mask.with_prefix(prefix_len);

        let mut h = x;
        let mut out = ForwardVars {
            hidden: x,
            logits: x,
            keys: Vec::new(),
            values: Vec::new(),
            attention: Vec::new(),
            layer_outputs: Vec::new(),
        };
        for (l, &[wq, wk, wv, wo, w_up, w_down]) in mv.layers.iter().enumerate() {
            let a = g.rms_norm(h, eps);
            let q = g.matmul(a, wq);
            let k = g.matmul(a, wk);
            let mut v = g.matmul(a, wv);
            if let Some(Some(delta)) = value_offsets.get(l) {
                v = g.offset(v, delta);
            }
            let q = g.rotate(q, &angles);
            let k = g.rotate(k, &angles);
            let (keys_all, values_all) = match prefix.get(l) {
                Some(&(pk, pv)) => (g.concat_rows(&[pk, k]), g.concat_rows(&[pv, v])),
                None => (k, v),
            };
            let mut heads = Vec::with_capacity(self.config.n_heads);
            let mut maps = Vec::with_capacity(self.config.n_heads);
            for head in 0..self.config.n_heads {
                let qh = g.slice_cols(q, head * dh, dh);
                let kh = g.slice_cols(keys_all, head * dh, dh);
                let vh = g.slice_cols(values_all, head * dh, dh);
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, scale);
                let p = g.masked_softmax(scores, allowed.clone())?;
                heads.push(g.matmul(p, vh));
                maps.push(p);
            }
            let ctx = g.concat_cols(&heads);
            let attn_out = g.matmul(ctx, wo);
            h = g.add(h, attn_out);
            let b = g.rms_norm(h, eps);
            let up = g.matmul(b, w_up);
            let up = g.silu(up);
            let down = g.matmul(up, w_down);
            h = g.add(h, down);

            out.keys.push(k);
            out.values.push(v);
            out.attention.push(maps);
            out.layer_outputs.push(h);
        }
        out.hidden = g.rms_norm(h, eps);
        out.logits = g.matmul(out.hidden, mv.head);
        Ok(out)
    }

    /// Runs the model on one sequence.
    pub fn forward(
        &self,
        input: ForwardInput<'_, T>,
        positions: &[i64],
        mask: &AttentionMask,
    ) -> Result<ForwardOutput<T>, ToyError> {
        self.forward_with(input, positions, mask, None, &[])
    }

    /// [`forward`](Self::forward) with an optional cached-KV prefix and
    /// per-layer additive offsets on the value projections.
    pub fn forward_with(
        &self,
        input: ForwardInput<'_, T>,
        positions: &[i64],
        mask: &AttentionMask,
        prefix: Option<&KvCarrier<T>>,
        value_offsets: &[Option<Mat<T>>],
    ) -> Result<ForwardOutput<T>, ToyError> {
        let mut g = Graph::new();
        let mv = self.register(&mut g);
        let x = match input {
            ForwardInput::Tokens(tokens) => g.gather(mv.embed, tokens)?,
            ForwardInput::Embeddings(m) => g.leaf(m.clone()),
        };
        let prefix_vars: Vec<(Var, Var)> = prefix
            .map(|kv| kv.layers.iter().map(|l| (g.leaf(l.keys.clone()), g.leaf(l.values.clone()))).collect())
            .unwrap_or_default();
        let fv = self.forward_vars(&mut g, &mv, x, positions, mask, &prefix_vars, value_offsets)?;
        Ok(ForwardOutput {
            outputs: g.value(fv.hidden).clone(),
            logits: g.value(fv.logits).clone(),
            kv: fv
                .keys
                .iter()
                .zip(&fv.values)
                .map(|(&k, &v)| LayerKv { keys: g.value(k).clone(), values: g.value(v).clone() })
                .collect(),
            attention: fv.attention.iter().map(|maps| maps.iter().map(|&p| g.value(p).clone()).collect()).collect(),
            layer_outputs: fv.layer_outputs.iter().map(|&h| g.value(h).clone()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyModel<f64> {
        ToyModel::new(ToyConfig::default(), 5).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ToyConfig::default().validate().is_ok());
        let odd = ToyConfig { d_model: 30, n_heads: 4, ..ToyConfig::default() };
        assert!(matches!(odd.validate(), Err(ToyError::InvalidConfig(_))));
    }

    #[test]
    fn initialization_is_seeded() {
        assert_eq!(model(), model());
        assert_ne!(model().embed, ToyModel::new(ToyConfig::default(), 6).unwrap().embed);
        let std = (model().embed.data().iter().map(|x| x * x).sum::<f64>() / 2048.0).sqrt();
        assert!((std - INIT_STD).abs() < 0.002, "std {std}");
    }

    #[test]
    fn single_token_attends_to_itself() {
        let out = model().forward(ForwardInput::Tokens(&[3]), &[0], &AttentionMask::causal(1)).unwrap();
        for layer in &out.attention {
            for map in layer {
                assert_eq!(map.data(), &[1.0]);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let tokens: Vec<usize> = (0..9).map(|i| (i * 7) % 64).collect();
        let positions: Vec<i64> = vec![4, 1, 9, 2, 2, 30, 5, 6, 7];
        let out = model().forward(ForwardInput::Tokens(&tokens), &positions, &AttentionMask::causal(9)).unwrap();
        for layer in &out.attention {
            for map in layer {
                for r in 0..map.rows() {
                    let s: f64 = map.row(r).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    assert!(map.row(r)[r + 1..].iter().all(|&p| p == 0.0));
                }
            }
        }
    }

    #[test]
    fn length_and_mask_errors() {
        let m = model();
        let err = m.forward(ForwardInput::Tokens(&[1, 2]), &[0], &AttentionMask::causal(2));
        assert!(matches!(err, Err(ToyError::LengthMismatch(_))));
        let err = m.forward(ForwardInput::Tokens(&[1, 2]), &[0, 1], &AttentionMask::causal(3));
        assert!(matches!(err, Err(ToyError::LengthMismatch(_))));
        let mut mask = AttentionMask::causal(2);
        mask.set(1, 0, false);
        mask.set(1, 1, false);
        let err = m.forward(ForwardInput::Tokens(&[1, 2]), &[0, 1], &mask);
        assert_eq!(err.unwrap_err(), ToyError::EmptyAttentionRow { row: 1 });
        let err = m.forward(ForwardInput::Tokens(&[64]), &[0], &AttentionMask::causal(1));
        assert!(matches!(err, Err(ToyError::TokenOutOfRange { .. })));
    }

    #[test]
    fn keys_carry_rotation_at_given_ids() {
        let m = model();
        let a = m.forward(ForwardInput::Tokens(&[5]), &[0], &AttentionMask::causal(1)).unwrap();
        let b = m.forward(ForwardInput::Tokens(&[5]), &[17], &AttentionMask::causal(1)).unwrap();
        // single token: outputs do not depend on its position, keys do
        assert!(a.outputs.max_abs_diff(&b.outputs) < 1e-15);
        assert!(a.kv[0].keys.max_abs_diff(&b.kv[0].keys) > 1e-6);
        assert_eq!(a.kv[0].values, b.kv[0].values);
    }

    #[test]
    fn single_precision_runs() {
        let m32 = model().cast::<f32>();
        let out = m32.forward(ForwardInput::Tokens(&[1, 2, 3]), &[0, 1, 2], &AttentionMask::causal(3)).unwrap();
        let out64 = model().forward(ForwardInput::Tokens(&[1, 2, 3]), &[0, 1, 2], &AttentionMask::causal(3)).unwrap();
        assert!((out.logits.get(2, 5) as f64 - out64.logits.get(2, 5)).abs() < 1e-4);
    }
}
