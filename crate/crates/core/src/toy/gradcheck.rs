//! Central finite differences against the backpropagated gradient.

use rayon::prelude::*;

use super::{MemoryEmbeddings, Pipeline, TaskSample, ToyError, ToyModel};
use crate::layout::{LayoutConfig, Task};

/// Accepted finite-difference step sizes.
pub const EPS_RANGE: (f64, f64) = (1e-6, 1e-4);

/// Floor of the relative-error denominator.
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over all checked entries.
    pub max_relative_error: f64,
    /// Number of memory plus embedding-table entries compared.
    pub entries: usize,
}

#[derive(Clone, Copy)]
enum Entry {
    Memory(usize),
    Embed(usize),
}

/// Compares the analytic gradient of the `kind` loss with respect to the
/// memory embeddings and the token embedding table to central differences
/// with step `epsilon`. `layout.task` is replaced by `kind`.
pub fn grad_check(
    kind: Task,
    model: &ToyModel<f64>,
    layout: &LayoutConfig,
    memory: &MemoryEmbeddings<f64>,
    sample: &TaskSample,
    epsilon: f64,
) -> Result<GradCheckReport, ToyError> {
    if !(EPS_RANGE.0..=EPS_RANGE.1).contains(&epsilon) {
        return Err(ToyError::BadEpsilon(epsilon));
    }
    let config = layout.with_task(kind);
    let pipeline = Pipeline::new(model, config)?;
    let (loss, grads) = pipeline.loss_and_grads(memory, sample)?;

    let entries: Vec<Entry> =
        (0..memory.0.data().len()).map(Entry::Memory).chain((0..model.embed.data().len()).map(Entry::Embed)).collect();

    let eval = |entry: Entry, delta: f64| -> Result<f64, ToyError> {
        match entry {
            Entry::Memory(i) => {
                let mut m = memory.clone();
                m.0.data_mut()[i] += delta;
                pipeline.loss(&m, sample)
            }
            Entry::Embed(i) => {
                let mut shifted = model.clone();
                shifted.embed.data_mut()[i] += delta;
                Pipeline::new(&shifted, config)?.loss(memory, sample)
            }
        }
    };

    // Collected in entry order, then reduced sequentially.
    let errors = entries
        .par_iter()
        .map(|&entry| {
            let analytic = match entry {
                Entry::Memory(i) => grads.memory.data()[i],
                Entry::Embed(i) => grads.embed.data()[i],
            };
            let numeric = (eval(entry, epsilon)? - eval(entry, -epsilon)?) / (2.0 * epsilon);
            if !numeric.is_finite() {
                return Err(ToyError::NonFinite);
            }
            Ok((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR))
        })
        .collect::<Result<Vec<f64>, ToyError>>()?;

    Ok(GradCheckReport { loss, max_relative_error: errors.iter().copied().fold(0.0, f64::max), entries: entries.len() })
}
