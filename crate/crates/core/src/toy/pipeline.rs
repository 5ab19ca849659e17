//! Chunked compression into memory carriers and the decoder-side losses.
//!
//! Encoder: each chunk `[S^(i); M]` runs through the model under its
//! encoder layout. ICAE carriers are the memory rows of the final hidden
//! states, fed to the decoder as input embeddings at the carrier IDs.
//! X500 carriers are the memory rows' per-layer keys and values, fed to the
//! decoder as a cached prefix whose key rotations stay at the encoder IDs.
//!
//! Decoder: `[carriers; prompt; tokens]` with teacher forcing; row `j` of
//! the prompt-and-tokens block predicts token `j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::model::{ModelVars, AE_ROW, LM_ROW};
use super::{AttentionMask, KvCarrier, LayerKv, Mat, MemoryEmbeddings, Real, ToyError, ToyModel};
use crate::layout::{
    decoder_layout, encoder_layout, partition_context, Framework, LayoutConfig, PositionLayout, Task, TokenRole,
};

/// Weight of the AE loss in the joint pretraining objective.
pub const JOINT_ALPHA: f64 = 0.5;

/// `alpha * ae + (1 - alpha) * lm`.
pub fn joint_loss<T: Real>(ae: T, lm: T, alpha: T) -> T {
    alpha * ae + (T::one() - alpha) * lm
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedChunk<T> {
    /// Final hidden states of the memory rows (`M x d_model`).
    pub memory_outputs: Mat<T>,
    pub kv: KvCarrier<T>,
}

/// What the decoder conditions on.
#[derive(Debug, Clone, PartialEq)]
pub enum Carriers<T> {
    Embeddings(Mat<T>),
    Kv(KvCarrier<T>),
}

impl<T: Real> Carriers<T> {
    pub fn from_chunks(framework: Framework, chunks: &[CompressedChunk<T>]) -> Self {
        match framework {
            Framework::Icae => {
                Carriers::Embeddings(Mat::concat_rows(&chunks.iter().map(|c| &c.memory_outputs).collect::<Vec<_>>()))
            }
            Framework::X500 => {
                Carriers::Kv(KvCarrier::concat(&chunks.iter().map(|c| c.kv.clone()).collect::<Vec<_>>()))
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Carriers::Embeddings(m) => m.rows(),
            Carriers::Kv(kv) => kv.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum CarrierVars {
    Embeddings(Var),
    Kv(Vec<(Var, Var)>),
}

impl CarrierVars {
    fn register<T: Real>(g: &mut Graph<T>, carriers: &Carriers<T>) -> Self {
        match carriers {
            Carriers::Embeddings(m) => CarrierVars::Embeddings(g.leaf(m.clone())),
            Carriers::Kv(kv) => {
                CarrierVars::Kv(kv.layers.iter().map(|l| (g.leaf(l.keys.clone()), g.leaf(l.values.clone()))).collect())
            }
        }
    }

    fn rows<T: Real>(&self, g: &Graph<T>) -> usize {
        match self {
            CarrierVars::Embeddings(v) => g.value(*v).rows(),
            CarrierVars::Kv(layers) => layers.first().map_or(0, |(k, _)| g.value(*k).rows()),
        }
    }
}

struct ChunkVars {
    memory_outputs: Var,
    kv: Vec<(Var, Var)>,
}

fn compress_vars<T: Real>(
    model: &ToyModel<T>,
    g: &mut Graph<T>,
    mv: &ModelVars,
    tokens: &[usize],
    memory: Var,
    layout: &PositionLayout,
) -> Result<ChunkVars, ToyError> {
    let m = g.value(memory).rows();
    let contexts = layout.count_where(|r| *r == TokenRole::Context);
    let memories = layout.count_where(|r| matches!(r, TokenRole::Memory { .. }));
    if contexts != tokens.len() || memories != m || layout.len() != tokens.len() + m {
        return Err(ToyError::LayoutMismatch(format!(
            "encoder layout has {contexts} context / {memories} memory entries ({} total) for {} tokens and {m} memory rows",
            layout.len(),
            tokens.len()
        )));
    }
    let embedded = g.gather(mv.embed, tokens)?;
    let x = g.concat_rows(&[embedded, memory]);
    let n = tokens.len() + m;
    let fv = model.forward_vars(g, mv, x, &layout.position_ids(), &AttentionMask::causal(n), &[], &[])?;
    let start = tokens.len();
    let memory_outputs = g.slice_rows(fv.hidden, start, m);
    let kv =
        fv.keys.iter().zip(&fv.values).map(|(&k, &v)| (g.slice_rows(k, start, m), g.slice_rows(v, start, m))).collect();
    Ok(ChunkVars { memory_outputs, kv })
}

fn carriers_from_vars<T: Real>(g: &mut Graph<T>, framework: Framework, chunks: &[ChunkVars]) -> CarrierVars {
    match framework {
        Framework::Icae => {
            let parts: Vec<Var> = chunks.iter().map(|c| c.memory_outputs).collect();
            CarrierVars::Embeddings(g.concat_rows(&parts))
        }
        Framework::X500 => {
            let n_layers = chunks.first().map_or(0, |c| c.kv.len());
            CarrierVars::Kv(
                (0..n_layers)
                    .map(|l| {
                        let ks: Vec<Var> = chunks.iter().map(|c| c.kv[l].0).collect();
                        let vs: Vec<Var> = chunks.iter().map(|c| c.kv[l].1).collect();
                        (g.concat_rows(&ks), g.concat_rows(&vs))
                    })
                    .collect(),
            )
        }
    }
}

/// Teacher-forced decoder inputs: row `j` of `[prompt; inputs]` predicts
/// `inputs[j]` when `scored(j)` holds.
struct DecoderTask<'a> {
    prompt: TokenRole,
    inputs: Vec<usize>,
    scored: &'a dyn Fn(usize) -> bool,
}

struct DecoderVars {
    loss: Var,
    logits: Var,
}

fn decode_vars<T: Real>(
    model: &ToyModel<T>,
    g: &mut Graph<T>,
    mv: &ModelVars,
    carriers: &CarrierVars,
    task: &DecoderTask<'_>,
    layout: &PositionLayout,
) -> Result<DecoderVars, ToyError> {
    let n_carriers = carriers.rows(g);
    let layout_carriers = layout.count_where(|r| matches!(r, TokenRole::Carrier { .. }));
    if layout_carriers != n_carriers {
        return Err(ToyError::LayoutMismatch(format!("layout has {layout_carriers} carriers, got {n_carriers}")));
    }
    let prompts: Vec<TokenRole> = layout.entries.iter().filter(|e| e.role.is_prompt()).map(|e| e.role).collect();
    if prompts != [task.prompt] {
        return Err(ToyError::LayoutMismatch(format!(
            "expected a single {} prompt, layout has {:?}",
            task.prompt.name(),
            prompts.iter().map(|r| r.name()).collect::<Vec<_>>()
        )));
    }
    let rest: Vec<i64> =
        layout.entries.iter().filter(|e| !matches!(e.role, TokenRole::Carrier { .. })).map(|e| e.position_id).collect();
    if rest.len() != 1 + task.inputs.len() {
        return Err(ToyError::LayoutMismatch(format!(
            "layout has {} prompt/token entries for {} tokens",
            rest.len(),
            task.inputs.len()
        )));
    }

    let prompt_row = if task.prompt == TokenRole::AePrompt { AE_ROW } else { LM_ROW };
    let prompt = g.slice_rows(mv.special, prompt_row, 1);
    let tokens = g.gather(mv.embed, &task.inputs)?;
    let local: Vec<Option<usize>> =
        (0..=task.inputs.len()).map(|j| (j < task.inputs.len() && (task.scored)(j)).then(|| task.inputs[j])).collect();

    let (x, positions, targets, prefix) = match carriers {
        CarrierVars::Embeddings(c) => {
            let x = g.concat_rows(&[*c, prompt, tokens]);
            let mut targets = vec![None; n_carriers];
            targets.extend(local);
            (x, layout.position_ids(), targets, Vec::new())
        }
        CarrierVars::Kv(kv) => (g.concat_rows(&[prompt, tokens]), rest, local, kv.clone()),
    };
    let n = positions.len();
    let fv = model.forward_vars(g, mv, x, &positions, &AttentionMask::causal(n), &prefix, &[])?;
    let loss = g.cross_entropy(fv.logits, targets)?;
    Ok(DecoderVars { loss, logits: fv.logits })
}

/// Compresses one chunk: runs `[chunk_tokens; memory]` under `layout`.
pub fn compress_chunk<T: Real>(
    model: &ToyModel<T>,
    chunk_tokens: &[usize],
    memory: &MemoryEmbeddings<T>,
    layout: &PositionLayout,
) -> Result<CompressedChunk<T>, ToyError> {
    let mut g = Graph::new();
    let mv = model.register(&mut g);
    let mem = g.leaf(memory.0.clone());
    let cv = compress_vars(model, &mut g, &mv, chunk_tokens, mem, layout)?;
    Ok(CompressedChunk {
        memory_outputs: g.value(cv.memory_outputs).clone(),
        kv: KvCarrier {
            layers: cv
                .kv
                .iter()
                .map(|&(k, v)| LayerKv { keys: g.value(k).clone(), values: g.value(v).clone() })
                .collect(),
        },
    })
}

fn decoder_loss<T: Real>(
    model: &ToyModel<T>,
    carriers: &Carriers<T>,
    task: &DecoderTask<'_>,
    layout: &PositionLayout,
) -> Result<T, ToyError> {
    let mut g = Graph::new();
    let mv = model.register(&mut g);
    let cv = CarrierVars::register(&mut g, carriers);
    let dv = decode_vars(model, &mut g, &mv, &cv, task, layout)?;
    Ok(g.value(dv.loss).get(0, 0))
}

/// Mean cross-entropy of reconstructing `context` from `[carriers; [AE]]`.
pub fn ae_loss<T: Real>(
    model: &ToyModel<T>,
    context: &[usize],
    carriers: &Carriers<T>,
    layout: &PositionLayout,
) -> Result<T, ToyError> {
    if context.is_empty() {
        return Err(ToyError::NoTargets);
    }
    let task = DecoderTask { prompt: TokenRole::AePrompt, inputs: context.to_vec(), scored: &|_| true };
    decoder_loss(model, carriers, &task, layout)
}

/// Mean cross-entropy of `completion` given `[carriers; [LM]]`.
pub fn lm_loss<T: Real>(
    model: &ToyModel<T>,
    completion: &[usize],
    carriers: &Carriers<T>,
    layout: &PositionLayout,
) -> Result<T, ToyError> {
    if completion.is_empty() {
        return Err(ToyError::NoTargets);
    }
    let task = DecoderTask { prompt: TokenRole::LmPrompt, inputs: completion.to_vec(), scored: &|_| true };
    decoder_loss(model, carriers, &task, layout)
}

/// Mean cross-entropy of the answer tokens given `[carriers; [LM]; question]`.
pub fn qa_loss<T: Real>(
    model: &ToyModel<T>,
    question: &[usize],
    answer: &[usize],
    carriers: &Carriers<T>,
    layout: &PositionLayout,
) -> Result<T, ToyError> {
    if answer.is_empty() {
        return Err(ToyError::NoTargets);
    }
    let q = question.len();
    let inputs = [question, answer].concat();
    let task = DecoderTask { prompt: TokenRole::LmPrompt, inputs, scored: &|j| j >= q };
    decoder_loss(model, carriers, &task, layout)
}

/// Token sequences for one training instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSample {
    pub context: Vec<usize>,
    pub completion: Vec<usize>,
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
}

impl TaskSample {
    /// Uniform random tokens sized by `config`, from stream 2 of the
    /// ChaCha8 generator seeded with `seed`.
    pub fn random(config: &LayoutConfig, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0..vocab)).collect::<Vec<_>>();
        TaskSample {
            context: draw(config.context_len),
            completion: draw(config.completion_len()),
            question: draw(config.question_len),
            answer: draw(config.answer_len),
        }
    }
}

/// Gradients of a task loss with respect to the memory embeddings and the
/// shared token embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineGrads<T> {
    pub memory: Mat<T>,
    pub embed: Mat<T>,
}

/// End-to-end compression and decoding for one [`LayoutConfig`].
pub struct Pipeline<'a, T> {
    model: &'a ToyModel<T>,
    config: LayoutConfig,
    shift: i64,
}

struct Built {
    memory: Var,
    embed: Var,
    loss: Var,
    logits: Var,
}

impl<'a, T: Real> Pipeline<'a, T> {
    pub fn new(model: &'a ToyModel<T>, config: LayoutConfig) -> Result<Self, ToyError> {
        config.validate()?;
        Ok(Self { model, config, shift: 0 })
    }

    /// Adds `shift` to every encoder and decoder position ID.
    pub fn with_shift(self, shift: i64) -> Self {
        Self { shift, ..self }
    }

    pub fn config(&self) -> &LayoutConfig {
        &self.config
    }

    pub fn encoder_layouts(&self) -> Result<Vec<PositionLayout>, ToyError> {
        (1..=self.config.chunk_count()).map(|i| Ok(encoder_layout(&self.config, i)?.shifted(self.shift))).collect()
    }

    pub fn decoder_layout(&self) -> Result<PositionLayout, ToyError> {
        Ok(decoder_layout(&self.config)?.shifted(self.shift))
    }

    fn check_sample(&self, memory: &MemoryEmbeddings<T>, sample: &TaskSample) -> Result<(), ToyError> {
        let c = &self.config;
        let expect = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(ToyError::LengthMismatch(format!("{what}: {got} tokens, config says {want}")))
            }
        };
        expect("context", sample.context.len(), c.context_len)?;
        match c.task {
            Task::Ae => {}
            Task::Lm => expect("completion", sample.completion.len(), c.completion_len())?,
            Task::Qa => {
                expect("question", sample.question.len(), c.question_len)?;
                expect("answer", sample.answer.len(), c.answer_len)?;
            }
        }
        if memory.count() != c.memory_count {
            return Err(ToyError::LengthMismatch(format!(
                "{} memory embeddings, config says {}",
                memory.count(),
                c.memory_count
            )));
        }
        Ok(())
    }

    fn build(&self, g: &mut Graph<T>, memory: &MemoryEmbeddings<T>, sample: &TaskSample) -> Result<Built, ToyError> {
        self.check_sample(memory, sample)?;
        let mv = self.model.register(g);
        let mem = g.leaf(memory.0.clone());
        let encoders = self.encoder_layouts()?;
        let chunks = partition_context(self.config.context_len, self.config.chunk_size)
            .into_iter()
            .zip(&encoders)
            .map(|((start, end), layout)| compress_vars(self.model, g, &mv, &sample.context[start..end], mem, layout))
            .collect::<Result<Vec<_>, _>>()?;
        let carriers = carriers_from_vars(g, self.config.framework, &chunks);

        let q = sample.question.len();
        let qa_scored = move |j: usize| j >= q;
        let task = match self.config.task {
            Task::Ae => DecoderTask { prompt: TokenRole::AePrompt, inputs: sample.context.clone(), scored: &|_| true },
            Task::Lm => {
                DecoderTask { prompt: TokenRole::LmPrompt, inputs: sample.completion.clone(), scored: &|_| true }
            }
            Task::Qa => DecoderTask {
                prompt: TokenRole::LmPrompt,
                inputs: [sample.question.as_slice(), sample.answer.as_slice()].concat(),
                scored: &qa_scored,
            },
        };
        let dv = decode_vars(self.model, g, &mv, &carriers, &task, &self.decoder_layout()?)?;
        Ok(Built { memory: mem, embed: mv.embed, loss: dv.loss, logits: dv.logits })
    }

    pub fn loss(&self, memory: &MemoryEmbeddings<T>, sample: &TaskSample) -> Result<T, ToyError> {
        let mut g = Graph::new();
        let b = self.build(&mut g, memory, sample)?;
        Ok(g.value(b.loss).get(0, 0))
    }

    /// Decoder logits, one row per decoder input row.
    pub fn decoder_logits(&self, memory: &MemoryEmbeddings<T>, sample: &TaskSample) -> Result<Mat<T>, ToyError> {
        let mut g = Graph::new();
        let b = self.build(&mut g, memory, sample)?;
        Ok(g.value(b.logits).clone())
    }

    pub fn loss_and_grads(
        &self,
        memory: &MemoryEmbeddings<T>,
        sample: &TaskSample,
    ) -> Result<(T, PipelineGrads<T>), ToyError> {
        let mut g = Graph::new();
        let b = self.build(&mut g, memory, sample)?;
        let grads = g.backward(b.loss);
        let out = PipelineGrads {
            memory: grads.get(b.memory, memory.0.shape()),
            embed: grads.get(b.embed, self.model.embed.shape()),
        };
        if !out.memory.is_finite() || !out.embed.is_finite() {
            return Err(ToyError::NonFinite);
        }
        Ok((g.value(b.loss).get(0, 0), out))
    }

    /// Compresses every chunk and returns the decoder carriers.
    pub fn carriers(&self, memory: &MemoryEmbeddings<T>, context: &[usize]) -> Result<Carriers<T>, ToyError> {
        let chunks = partition_context(self.config.context_len, self.config.chunk_size)
            .into_iter()
            .zip(self.encoder_layouts()?)
            .map(|((start, end), layout)| compress_chunk(self.model, &context[start..end], memory, &layout))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Carriers::from_chunks(self.config.framework, &chunks))
    }
}
