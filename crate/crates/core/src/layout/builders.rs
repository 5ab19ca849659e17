use super::config::Framework;
use super::{uniform_memory_positions, LayoutConfig, LayoutError, PositionId, PositionLayout, Scheme, Task, TokenRole};

/// Splits `[0, p)` into `ceil(p / L)` half-open ranges of length `L`, the
/// last one possibly shorter.
pub fn partition_context(context_len: usize, chunk_size: usize) -> Vec<(usize, usize)> {
    assert!(chunk_size > 0, "chunk size must be positive");
    (0..context_len).step_by(chunk_size).map(|start| (start, (start + chunk_size).min(context_len))).collect()
}

fn check_chunk(config: &LayoutConfig, chunk: usize) -> Result<(), LayoutError> {
    let chunks = config.chunk_count();
    if chunk == 0 || chunk > chunks {
        return Err(LayoutError::ChunkOutOfRange { index: chunk, chunks });
    }
    Ok(())
}

/// Global context IDs of chunk `i` under EPL: `(i-1)L + 1 ..= (i-1)L + len`.
fn epl_context_range(config: &LayoutConfig, chunk: usize) -> (PositionId, PositionId) {
    let start = ((chunk - 1) * config.chunk_size) as PositionId + 1;
    (start, start + config.chunk_len(chunk) as PositionId - 1)
}

fn epl_memory_ids(config: &LayoutConfig, chunk: usize) -> Result<Vec<PositionId>, LayoutError> {
    let (v1, v_last) = epl_context_range(config, chunk);
    uniform_memory_positions(v1, v_last, config.memory_count)
}

/// Encoder sequence `[S^(i); M^(i)]` for chunk `chunk` (1-based).
pub fn encoder_layout(config: &LayoutConfig, chunk: usize) -> Result<PositionLayout, LayoutError> {
    config.validate()?;
    check_chunk(config, chunk)?;
    let len = config.chunk_len(chunk) as PositionId;
    let m = config.memory_count as PositionId;
    let mut layout = PositionLayout::new();
    match config.scheme {
        Scheme::Dpl => {
            layout.push_segment(TokenRole::Context, 0..len);
            layout.push_segment(TokenRole::Memory { chunk }, len..len + m);
        }
        Scheme::Epl => {
            let (v1, v_last) = epl_context_range(config, chunk);
            layout.push_segment(TokenRole::Context, v1..=v_last);
            layout.push_segment(TokenRole::Memory { chunk }, epl_memory_ids(config, chunk)?);
        }
    }
    Ok(layout)
}

/// Decoder sequence `[carriers; [AE]|[LM]; subsequent tokens]`.
///
/// Under EPL the carriers keep their encoder IDs and the remaining tokens
/// get their original sequence positions. Under DPL everything follows the
/// physical order, except that cached KV carriers (X500) keep the encoder
/// DPL IDs of their chunk.
pub fn decoder_layout(config: &LayoutConfig) -> Result<PositionLayout, LayoutError> {
    config.validate()?;
    let k = config.chunk_count();
    let m = config.memory_count as PositionId;
    let p = config.context_len as PositionId;
    let mut layout = PositionLayout::new();

    for chunk in 1..=k {
        let ids: Vec<PositionId> = match (config.scheme, config.framework) {
            (Scheme::Dpl, Framework::Icae) => {
                let start = (chunk as PositionId - 1) * m;
                (start..start + m).collect()
            }
            (Scheme::Dpl, Framework::X500) => {
                let len = config.chunk_len(chunk) as PositionId;
                (len..len + m).collect()
            }
            (Scheme::Epl, _) => epl_memory_ids(config, chunk)?,
        };
        layout.push_segment(TokenRole::Carrier { chunk }, ids);
    }

    let prompt_id = match (config.scheme, config.task) {
        (Scheme::Dpl, _) => k as PositionId * m,
        (Scheme::Epl, Task::Ae) => 0,
        (Scheme::Epl, Task::Lm | Task::Qa) => p,
    };
    let prompt = if config.task == Task::Ae { TokenRole::AePrompt } else { TokenRole::LmPrompt };
    layout.push_segment(prompt, [prompt_id]);

    let mut next = prompt_id + 1;
    let mut segment = |layout: &mut PositionLayout, role: TokenRole, count: usize| {
        let count = count as PositionId;
        layout.push_segment(role, next..next + count);
        next += count;
    };
    match config.task {
        Task::Ae => segment(&mut layout, TokenRole::Context, config.context_len),
        Task::Lm => segment(&mut layout, TokenRole::Completion, config.completion_len()),
        Task::Qa => {
            segment(&mut layout, TokenRole::Question, config.question_len);
            segment(&mut layout, TokenRole::Answer, config.answer_len);
        }
    }
    Ok(layout)
}

/// Vision-compression sequence `[vision; voco; text]`.
///
/// EPL places the VoCo tokens uniformly over the vision IDs `1..=n_vision`
/// and continues the text right after the vision range.
pub fn voco_layout(
    n_vision: usize,
    n_voco: usize,
    n_text: usize,
    scheme: Scheme,
) -> Result<PositionLayout, LayoutError> {
    if n_vision == 0 {
        return Err(LayoutError::Empty("vision"));
    }
    if n_voco == 0 {
        return Err(LayoutError::Empty("voco"));
    }
    if n_text == 0 {
        return Err(LayoutError::Empty("text"));
    }
    if n_voco > n_vision {
        return Err(LayoutError::TooManyMemoryTokens { memory: n_voco, span: n_vision });
    }
    let (nv, nc, nt) = (n_vision as PositionId, n_voco as PositionId, n_text as PositionId);
    let mut layout = PositionLayout::new();
    match scheme {
        Scheme::Dpl => {
            layout.push_segment(TokenRole::Vision, 0..nv);
            layout.push_segment(TokenRole::Voco, nv..nv + nc);
            layout.push_segment(TokenRole::Text, nv + nc..nv + nc + nt);
        }
        Scheme::Epl => {
            layout.push_segment(TokenRole::Vision, 1..=nv);
            layout.push_segment(TokenRole::Voco, uniform_memory_positions(1, nv, n_voco)?);
            layout.push_segment(TokenRole::Text, nv + 1..=nv + nt);
        }
    }
    Ok(layout)
}
