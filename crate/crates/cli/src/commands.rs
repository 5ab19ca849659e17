use std::fs;
use std::io::{ErrorKind, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use epl_core::layout::{
    brute_force_optimal_minimax, decoder_layout, encoder_layout, validate_layout, voco_layout, Framework, LayoutConfig,
    PositionLayout, Scheme, Task,
};
use epl_core::pe::{
    cosine_similarity_curve, decay_csv, rope_attention_decay, similarity_csv, RopeParams, SinusoidalParams,
};
use epl_core::toy::{attn_dump_csv, run_grad_check, run_loss, run_shift_test, AttnStage, RunSpec};

use crate::args::{ConfigArgs, Format, LayoutCmd, Output, PeCmd, SpecArgs, Stage, ToyCmd};

/// Gradient-check error at or above this fails `toy grad-check`.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Logit drift at or above this fails `toy shift-test`.
pub const SHIFT_TOLERANCE: f64 = 1e-9;

#[derive(Debug)]
pub enum Failure {
    /// Malformed flags, files or arguments: exit 1.
    Input(String),
    /// The command ran but a check failed; the report was already written.
    Validation,
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// JSON emitted by the toy subcommands.
#[derive(Serialize)]
struct ToyMetrics {
    loss: f64,
    grad_check: Option<f64>,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn emit(output: &Output, mut text: String) -> Outcome {
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match &output.out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display()))),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(Failure::Input(format!("stdout: {e}"))),
            _ => Ok(()),
        },
    }
}

fn emit_json(output: &Output, value: &impl Serialize) -> Outcome {
    emit(output, serde_json::to_string(value).expect("json value"))
}

fn layout_config(args: &ConfigArgs) -> Result<LayoutConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => LayoutConfig::from_json(&read(path)?)?,
        None => LayoutConfig::canonical(Task::Ae, Framework::Icae, Scheme::Epl),
    };
    if let Some(task) = args.task {
        cfg.task = task;
    }
    if let Some(fw) = args.framework {
        cfg.framework = fw;
    }
    if let Some(scheme) = args.scheme {
        cfg.scheme = scheme;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn render(layout: &PositionLayout, format: Format) -> String {
    match format {
        Format::Json => layout.to_json(),
        Format::Csv => layout.to_csv(),
    }
}

pub fn layout(cmd: LayoutCmd) -> Outcome {
    match cmd {
        LayoutCmd::Encode { config, chunk, format, output } => {
            let cfg = layout_config(&config)?;
            emit(&output, render(&encoder_layout(&cfg, chunk)?, format))
        }
        LayoutCmd::Decode { config, format, output } => {
            let cfg = layout_config(&config)?;
            emit(&output, render(&decoder_layout(&cfg)?, format))
        }
        LayoutCmd::Voco { vision, voco, text, scheme, format, output } => {
            emit(&output, render(&voco_layout(vision, voco, text, scheme)?, format))
        }
        LayoutCmd::Validate { config, layout, chunk, output } => {
            let cfg = layout_config(&config)?;
            let target = match (&layout, chunk) {
                (Some(path), _) => {
                    let text = read(path)?;
                    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                        PositionLayout::from_csv(&text)?
                    } else {
                        PositionLayout::from_json(&text)?
                    }
                }
                (None, Some(chunk)) => encoder_layout(&cfg, chunk)?,
                (None, None) => decoder_layout(&cfg)?,
            };
            let report = validate_layout(&target, &cfg);
            emit(&output, report.to_json())?;
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Validation)
            }
        }
        LayoutCmd::Oracle { len, memory, output } => {
            let opt = brute_force_optimal_minimax(len, memory)?;
            emit_json(&output, &json!({ "optimal": opt.optimal_value, "witness": opt.witness }))
        }
    }
}

pub fn pe(cmd: PeCmd) -> Outcome {
    match cmd {
        PeCmd::SineSim { dmodel, maxpos, base, output } => {
            let params = SinusoidalParams::new(dmodel, base)?;
            emit(&output, similarity_csv(&cosine_similarity_curve(maxpos, &params)?))
        }
        PeCmd::RopeDecay { dim, max_delta, samples, seed, base, output } => {
            let params = RopeParams::new(dim, base)?;
            emit(&output, decay_csv(&rope_attention_decay(&params, max_delta, samples, seed)?))
        }
    }
}

fn run_spec(args: &SpecArgs) -> Result<RunSpec, Failure> {
    let mut spec = match &args.spec {
        Some(path) => RunSpec::from_json(&read(path)?)?,
        None => RunSpec::default(),
    };
    let l = &mut spec.layout;
    let overrides = [
        (&mut l.chunk_size, args.chunk_size),
        (&mut l.memory_count, args.memory_count),
        (&mut l.context_len, args.context_len),
        (&mut l.total_len, args.total_len),
        (&mut l.question_len, args.question_len),
        (&mut l.answer_len, args.answer_len),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    if let Some(task) = args.task {
        l.task = task;
    }
    if let Some(fw) = args.framework {
        l.framework = fw;
    }
    if let Some(scheme) = args.scheme {
        l.scheme = scheme;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.layout.validate()?;
    Ok(spec)
}

pub fn toy(cmd: ToyCmd) -> Outcome {
    match cmd {
        ToyCmd::Loss { spec, output } => {
            let spec = run_spec(&spec)?;
            emit_json(&output, &ToyMetrics { loss: run_loss(&spec)?, grad_check: None })
        }
        ToyCmd::GradCheck { spec, loss, epsilon, output } => {
            let spec = run_spec(&spec)?;
            let kind = loss.unwrap_or(spec.layout.task);
            let report = run_grad_check(&spec, kind, epsilon)?;
            emit_json(&output, &ToyMetrics { loss: report.loss, grad_check: Some(report.max_relative_error) })?;
            if report.max_relative_error < GRAD_TOLERANCE {
                Ok(())
            } else {
                Err(Failure::Validation)
            }
        }
        ToyCmd::AttnDump { spec, stage, chunk, output } => {
            let spec = run_spec(&spec)?;
            let stage = match stage {
                Stage::Encoder => AttnStage::Encoder(chunk),
                Stage::Decoder => AttnStage::Decoder,
            };
            emit(&output, attn_dump_csv(&spec, stage)?)
        }
        ToyCmd::ShiftTest { spec, shift, output } => {
            let spec = run_spec(&spec)?;
            let diff = run_shift_test(&spec, shift)?;
            emit_json(&output, &json!({ "max_abs_diff": diff }))?;
            if diff < SHIFT_TOLERANCE {
                Ok(())
            } else {
                Err(Failure::Validation)
            }
        }
    }
}
