//! Seeded end-to-end runs driven by a JSON run spec.

use serde::{Deserialize, Serialize};

use super::{
    grad_check, AttentionMask, Carriers, ForwardInput, GradCheckReport, Mat, MemoryEmbeddings, Pipeline, TaskSample,
    ToyConfig, ToyError, ToyModel, AE_ROW, LM_ROW,
};
use crate::fmt_f64;
use crate::layout::{partition_context, Framework, LayoutConfig, Scheme, Task, TokenRole};

/// Two 8-token chunks with 2 memory tokens each, `|X| = 24`, `|Q| = 4`,
/// `|A| = 3`, ICAE, EPL, AE.
pub fn default_toy_layout() -> LayoutConfig {
    LayoutConfig {
        chunk_size: 8,
        memory_count: 2,
        context_len: 16,
        total_len: 24,
        question_len: 4,
        answer_len: 3,
        framework: Framework::Icae,
        scheme: Scheme::Epl,
        task: Task::Ae,
    }
}

/// `{"model": {...}, "layout": {...}, "seed": n}`; missing sections take
/// the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub model: ToyConfig,
    pub layout: LayoutConfig,
    pub seed: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self { model: ToyConfig::default(), layout: default_toy_layout(), seed: 0 }
    }
}

impl RunSpec {
    pub fn from_json(text: &str) -> Result<Self, ToyError> {
        serde_json::from_str(text).map_err(|e| ToyError::Spec(e.to_string()))
    }

    /// Model, memory embeddings and token sample, all derived from `seed`.
    pub fn instantiate(&self) -> Result<(ToyModel<f64>, MemoryEmbeddings<f64>, TaskSample), ToyError> {
        self.layout.validate()?;
        let model = ToyModel::new(self.model, self.seed)?;
        let memory = MemoryEmbeddings::random(self.layout.memory_count, self.model.d_model, self.seed);
        let sample = TaskSample::random(&self.layout, self.model.vocab, self.seed);
        Ok((model, memory, sample))
    }
}

/// Loss of `spec.layout.task`.
pub fn run_loss(spec: &RunSpec) -> Result<f64, ToyError> {
    let (model, memory, sample) = spec.instantiate()?;
    Pipeline::new(&model, spec.layout)?.loss(&memory, &sample)
}

pub fn run_grad_check(spec: &RunSpec, kind: Task, epsilon: f64) -> Result<GradCheckReport, ToyError> {
    let (model, memory, sample) = spec.instantiate()?;
    grad_check(kind, &model, &spec.layout, &memory, &sample, epsilon)
}

/// Largest absolute difference in decoder logits and loss after adding
/// `shift` to every encoder and decoder position ID.
pub fn run_shift_test(spec: &RunSpec, shift: i64) -> Result<f64, ToyError> {
    let (model, memory, sample) = spec.instantiate()?;
    let base = Pipeline::new(&model, spec.layout)?;
    let moved = Pipeline::new(&model, spec.layout)?.with_shift(shift);
    let logits = base.decoder_logits(&memory, &sample)?.max_abs_diff(&moved.decoder_logits(&memory, &sample)?);
    let loss = (base.loss(&memory, &sample)? - moved.loss(&memory, &sample)?).abs();
    Ok(logits.max(loss))
}

/// Which forward pass to dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnStage {
    /// Encoder pass of a 1-based chunk.
    Encoder(usize),
    Decoder,
}

fn token_rows(model: &ToyModel<f64>, tokens: &[usize]) -> Result<Mat<f64>, ToyError> {
    let vocab = model.config.vocab;
    if let Some(&token) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(ToyError::TokenOutOfRange { token, vocab });
    }
    Ok(Mat::from_fn(tokens.len(), model.config.d_model, |r, c| model.embed.get(tokens[r], c)))
}

/// Attention maps of one pass as CSV: for each (layer, head) a `# layer,head`
/// line followed by the row-major matrix.
pub fn attn_dump_csv(spec: &RunSpec, stage: AttnStage) -> Result<String, ToyError> {
    let (model, memory, sample) = spec.instantiate()?;
    let pipeline = Pipeline::new(&model, spec.layout)?;
    let out = match stage {
        AttnStage::Encoder(chunk) => {
            let layouts = pipeline.encoder_layouts()?;
            let layout = layouts
                .get(chunk.wrapping_sub(1))
                .ok_or(crate::layout::LayoutError::ChunkOutOfRange { index: chunk, chunks: layouts.len() })?;
            let (start, end) = partition_context(spec.layout.context_len, spec.layout.chunk_size)[chunk - 1];
            let x = Mat::concat_rows(&[&token_rows(&model, &sample.context[start..end])?, &memory.0]);
            model.forward(ForwardInput::Embeddings(&x), &layout.position_ids(), &AttentionMask::causal(x.rows()))?
        }
        AttnStage::Decoder => {
            let layout = pipeline.decoder_layout()?;
            let carriers = pipeline.carriers(&memory, &sample.context)?;
            let (prompt_row, tokens) = match spec.layout.task {
                Task::Ae => (AE_ROW, sample.context.clone()),
                Task::Lm => (LM_ROW, sample.completion.clone()),
                Task::Qa => (LM_ROW, [sample.question.as_slice(), sample.answer.as_slice()].concat()),
            };
            let prompt = model.special.slice_rows(prompt_row, 1);
            let body = Mat::concat_rows(&[&prompt, &token_rows(&model, &tokens)?]);
            match &carriers {
                Carriers::Embeddings(c) => {
                    let x = Mat::concat_rows(&[c, &body]);
                    model.forward(
                        ForwardInput::Embeddings(&x),
                        &layout.position_ids(),
                        &AttentionMask::causal(x.rows()),
                    )?
                }
                Carriers::Kv(kv) => {
                    let ids = layout.ids_where(|r| !matches!(r, TokenRole::Carrier { .. }));
                    model.forward_with(
                        ForwardInput::Embeddings(&body),
                        &ids,
                        &AttentionMask::causal(body.rows()),
                        Some(kv),
                        &[],
                    )?
                }
            }
        }
    };
    let mut csv = String::new();
    for (layer, heads) in out.attention.iter().enumerate() {
        for (head, map) in heads.iter().enumerate() {
            csv.push_str(&format!("# {layer},{head}\n"));
            for r in 0..map.rows() {
                let row: Vec<String> = map.row(r).iter().map(|&v| fmt_f64(v)).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
        }
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip_and_defaults() {
        let spec = RunSpec::from_json(r#"{"seed": 5}"#).unwrap();
        assert_eq!(spec, RunSpec { seed: 5, ..RunSpec::default() });
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(RunSpec::from_json(&text).unwrap(), spec);
        assert!(matches!(RunSpec::from_json(r#"{"seeds": 5}"#), Err(ToyError::Spec(_))));
    }

    #[test]
    fn shift_is_invisible() {
        for task in [Task::Ae, Task::Lm, Task::Qa] {
            for fw in [Framework::Icae, Framework::X500] {
                let spec =
                    RunSpec { layout: default_toy_layout().with_task(task).with_framework(fw), ..RunSpec::default() };
                let d = run_shift_test(&spec, 13).unwrap();
                assert!(d < 1e-9, "{task}/{fw}: {d}");
            }
        }
    }

    #[test]
    fn attn_dump_blocks() {
        let spec = RunSpec::default();
        let csv = attn_dump_csv(&spec, AttnStage::Encoder(1)).unwrap();
        let headers: Vec<&str> = csv.lines().filter(|l| l.starts_with('#')).collect();
        assert_eq!(headers, ["# 0,0", "# 0,1", "# 1,0", "# 1,1"]);
        // 10 rows of 10 per block
        assert_eq!(csv.lines().count(), 4 * 11);
        let dec = attn_dump_csv(&spec, AttnStage::Decoder).unwrap();
        assert_eq!(dec.lines().count(), 4 * (1 + 4 + 1 + 16));
        assert!(attn_dump_csv(&spec, AttnStage::Encoder(3)).is_err());
        assert!(attn_dump_csv(&spec, AttnStage::Encoder(0)).is_err());
    }

    #[test]
    fn x500_decoder_dump_has_prefix_columns() {
        let spec = RunSpec { layout: default_toy_layout().with_framework(Framework::X500), ..RunSpec::default() };
        let dec = attn_dump_csv(&spec, AttnStage::Decoder).unwrap();
        let first = dec.lines().nth(1).unwrap();
        assert_eq!(first.split(',').count(), 4 + 17);
    }
}
