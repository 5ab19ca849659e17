//! Named invariant checks over a [`PositionLayout`].
//!
//! The validator never panics: malformed layouts (wrong roles, missing
//! segments, negative IDs) show up as failed checks.

use serde::Serialize;

use super::config::Framework;
use super::{
    encoder_layout, minimax_bound, minimax_distance, LayoutConfig, PositionId, PositionLayout, Scheme, Task, TokenRole,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Suspicious but allowed.
    Warn,
    /// Not applicable to this layout kind or task.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn push(&mut self, name: &'static str, status: CheckStatus, detail: impl Into<String>) {
        self.checks.push(CheckResult { name, status, detail: detail.into() });
    }

    fn check(&mut self, name: &'static str, ok: bool, detail: impl Into<String>) {
        let status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        self.push(name, status, detail);
    }

    fn skip(&mut self, name: &'static str, why: &str) {
        self.push(name, CheckStatus::Skip, why);
    }
}

pub const NON_NEGATIVE: &str = "non-negative ids";
pub const LAYOUT_KIND: &str = "layout kind";
pub const SEGMENT_ORDER: &str = "segment order";
pub const ENTRY_COUNTS: &str = "entry counts";
pub const MEMORY_IN_RANGE: &str = "memory in context range";
pub const MINIMAX_OPTIMAL: &str = "minimax optimal";
pub const CARRIER_IDENTITY: &str = "carrier identity";
pub const CAUSAL_ORDER: &str = "causal ID ordering";
pub const UNIQUE_MEMORY: &str = "unique memory ids";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Encoder(usize),
    Decoder,
    Voco,
}

/// Which sequence the layout describes, judged from its roles.
fn classify(layout: &PositionLayout) -> Result<Kind, String> {
    let has = |pred: fn(&TokenRole) -> bool| layout.entries.iter().any(|e| pred(&e.role));
    let memory = has(|r| matches!(r, TokenRole::Memory { .. }));
    let carrier = has(|r| matches!(r, TokenRole::Carrier { .. }));
    let vision = has(|r| matches!(r, TokenRole::Vision | TokenRole::Voco));
    match (memory, carrier, vision) {
        (true, false, false) => {
            let chunk = layout.entries.iter().find_map(|e| match e.role {
                TokenRole::Memory { chunk } => Some(chunk),
                _ => None,
            });
            Ok(Kind::Encoder(chunk.unwrap_or(0)))
        }
        (false, true, false) => Ok(Kind::Decoder),
        (false, false, true) => Ok(Kind::Voco),
        (false, false, false) => Err("no memory, carrier or vision tokens".into()),
        _ => Err("mixes encoder, decoder and vision roles".into()),
    }
}

/// Expected `(role name, count)` segments in physical order.
fn expected_segments(kind: Kind, config: &LayoutConfig) -> Option<Vec<(TokenRole, usize)>> {
    let m = config.memory_count;
    match kind {
        Kind::Encoder(chunk) => {
            if chunk == 0 || chunk > config.chunk_count() {
                return None;
            }
            Some(vec![(TokenRole::Context, config.chunk_len(chunk)), (TokenRole::Memory { chunk }, m)])
        }
        Kind::Decoder => {
            let mut segs: Vec<_> = (1..=config.chunk_count()).map(|chunk| (TokenRole::Carrier { chunk }, m)).collect();
            match config.task {
                Task::Ae => {
                    segs.push((TokenRole::AePrompt, 1));
                    segs.push((TokenRole::Context, config.context_len));
                }
                Task::Lm => {
                    segs.push((TokenRole::LmPrompt, 1));
                    segs.push((TokenRole::Completion, config.completion_len()));
                }
                Task::Qa => {
                    segs.push((TokenRole::LmPrompt, 1));
                    segs.push((TokenRole::Question, config.question_len));
                    segs.push((TokenRole::Answer, config.answer_len));
                }
            }
            Some(segs)
        }
        Kind::Voco => None,
    }
}

/// Collapses the layout into maximal runs of one role, checking that the
/// logical indices inside each run count up from zero.
fn segments(layout: &PositionLayout) -> (Vec<(TokenRole, usize)>, Vec<String>) {
    let mut runs: Vec<(TokenRole, usize)> = Vec::new();
    let mut problems = Vec::new();
    for (pos, e) in layout.entries.iter().enumerate() {
        match runs.last_mut() {
            Some((role, count)) if *role == e.role => {
                if e.index != *count {
                    problems.push(format!("entry {pos}: index {} expected {count}", e.index));
                }
                *count += 1;
            }
            _ => {
                if e.index != 0 {
                    problems.push(format!("entry {pos}: segment starts at index {}", e.index));
                }
                runs.push((e.role, 1));
            }
        }
    }
    (runs, problems)
}

fn describe(segs: &[(TokenRole, usize)]) -> String {
    segs.iter()
        .map(|(r, n)| match r.chunk() {
            Some(c) => format!("{}[{c}]x{n}", r.name()),
            None => format!("{}x{n}", r.name()),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn epl_range(config: &LayoutConfig, chunk: usize) -> (PositionId, PositionId) {
    let start = ((chunk - 1) * config.chunk_size) as PositionId + 1;
    (start, start + config.chunk_len(chunk) as PositionId - 1)
}

fn chunk_ids(layout: &PositionLayout, chunk: usize) -> Vec<PositionId> {
    layout.ids_where(|r| r.chunk() == Some(chunk))
}

pub fn validate_layout(layout: &PositionLayout, config: &LayoutConfig) -> ValidationReport {
    let mut report = ValidationReport::default();

    let negative: Vec<_> = layout
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.position_id < 0)
        .map(|(i, e)| format!("entry {i} ({}) = {}", e.role.name(), e.position_id))
        .collect();
    report.check(NON_NEGATIVE, negative.is_empty(), negative.join("; "));

    let kind = match classify(layout) {
        Ok(kind) => {
            report.check(LAYOUT_KIND, true, format!("{kind:?}").to_lowercase());
            kind
        }
        Err(why) => {
            report.check(LAYOUT_KIND, false, why);
            return report;
        }
    };

    let config_ok = match config.validate() {
        Ok(()) => true,
        Err(e) if kind != Kind::Voco => {
            report.check(ENTRY_COUNTS, false, e.to_string());
            false
        }
        Err(_) => true,
    };

    let (runs, index_problems) = segments(layout);
    match kind {
        Kind::Voco => {
            let order_ok = runs.iter().map(|(r, _)| *r).collect::<Vec<_>>()
                == [TokenRole::Vision, TokenRole::Voco, TokenRole::Text];
            let mut detail = describe(&runs);
            if !index_problems.is_empty() {
                detail = format!("{detail}; {}", index_problems.join("; "));
            }
            report.check(SEGMENT_ORDER, order_ok && index_problems.is_empty(), detail);
        }
        _ if config_ok => match expected_segments(kind, config) {
            Some(expected) => {
                let roles_ok = runs.len() == expected.len() && runs.iter().zip(&expected).all(|(a, b)| a.0 == b.0);
                let mut detail = describe(&runs);
                if !index_problems.is_empty() {
                    detail = format!("{detail}; {}", index_problems.join("; "));
                }
                report.check(SEGMENT_ORDER, roles_ok && index_problems.is_empty(), detail);
                report.check(ENTRY_COUNTS, runs == expected, format!("expected {}", describe(&expected)));
            }
            None => {
                report.check(SEGMENT_ORDER, false, format!("chunk index outside 1..={}", config.chunk_count()));
            }
        },
        _ => report.skip(SEGMENT_ORDER, "config invalid"),
    }

    let structure_ok = report.passed();
    if !structure_ok {
        for name in [MEMORY_IN_RANGE, MINIMAX_OPTIMAL, CARRIER_IDENTITY, CAUSAL_ORDER, UNIQUE_MEMORY] {
            report.skip(name, "layout structure invalid");
        }
        return report;
    }

    memory_checks(&mut report, layout, config, kind);
    causal_check(&mut report, layout, config, kind);
    unique_check(&mut report, layout, kind);
    report
}

fn memory_checks(report: &mut ValidationReport, layout: &PositionLayout, config: &LayoutConfig, kind: Kind) {
    match kind {
        Kind::Voco => {
            let vision = layout.ids_where(|r| *r == TokenRole::Vision);
            let voco = layout.ids_where(|r| *r == TokenRole::Voco);
            let (lo, hi) = (*vision.iter().min().unwrap(), *vision.iter().max().unwrap());
            let outside: Vec<_> = voco.iter().filter(|&&u| u < lo || u > hi).collect();
            if voco.iter().all(|&u| u > hi) {
                report.skip(MEMORY_IN_RANGE, "default layout places voco after vision");
            } else {
                report.check(MEMORY_IN_RANGE, outside.is_empty(), format!("outside [{lo}, {hi}]: {outside:?}"));
            }
            report.skip(MINIMAX_OPTIMAL, "vision layout");
            report.skip(CARRIER_IDENTITY, "vision layout");
            return;
        }
        _ if config.scheme == Scheme::Dpl => {
            report.skip(MEMORY_IN_RANGE, "DPL memory follows the context");
            report.skip(MINIMAX_OPTIMAL, "DPL");
        }
        _ => {
            let chunks: Vec<usize> = match kind {
                Kind::Encoder(c) => vec![c],
                _ => (1..=config.chunk_count()).collect(),
            };
            let mut bad = Vec::new();
            let mut worst = Vec::new();
            for chunk in chunks {
                let (lo, hi) = epl_range(config, chunk);
                let ids = chunk_ids(layout, chunk);
                bad.extend(
                    ids.iter()
                        .filter(|&&u| u < lo || u > hi)
                        .map(|u| format!("chunk {chunk}: {u} outside [{lo}, {hi}]")),
                );
                let ctx: Vec<PositionId> = (lo..=hi).collect();
                let got = minimax_distance(&ctx, &ids).unwrap_or(u64::MAX);
                let bound = minimax_bound(ctx.len(), config.memory_count);
                if got != bound {
                    worst.push(format!("chunk {chunk}: minimax {got} vs optimum {bound}"));
                }
            }
            report.check(MEMORY_IN_RANGE, bad.is_empty(), bad.join("; "));
            report.check(MINIMAX_OPTIMAL, worst.is_empty(), worst.join("; "));
        }
    }

    match kind {
        Kind::Decoder if !(config.scheme == Scheme::Dpl && config.framework == Framework::Icae) => {
            let mut mismatched = Vec::new();
            for chunk in 1..=config.chunk_count() {
                let encoder = encoder_layout(config, chunk).map(|l| chunk_ids(&l, chunk)).unwrap_or_default();
                if chunk_ids(layout, chunk) != encoder {
                    mismatched.push(chunk);
                }
            }
            report.check(
                CARRIER_IDENTITY,
                mismatched.is_empty(),
                format!("chunks differing from encoder memory IDs: {mismatched:?}"),
            );
        }
        Kind::Decoder => report.skip(CARRIER_IDENTITY, "ICAE DPL renumbers carriers"),
        _ => report.skip(CARRIER_IDENTITY, "encoder layout"),
    }
}

fn causal_check(report: &mut ValidationReport, layout: &PositionLayout, config: &LayoutConfig, kind: Kind) {
    let (before, prompt, after): (Vec<PositionId>, Option<PositionId>, Vec<PositionId>) = match kind {
        Kind::Encoder(_) => {
            report.skip(CAUSAL_ORDER, "encoder layout");
            return;
        }
        Kind::Decoder if config.task == Task::Ae => {
            report.skip(CAUSAL_ORDER, "AE reconstruction IDs overlap carriers by construction");
            return;
        }
        Kind::Decoder => (
            layout.ids_where(|r| matches!(r, TokenRole::Carrier { .. })),
            layout.ids_where(|r| r.is_prompt()).first().copied(),
            layout.ids_where(|r| matches!(r, TokenRole::Completion | TokenRole::Question | TokenRole::Answer)),
        ),
        Kind::Voco => (
            layout.ids_where(|r| matches!(r, TokenRole::Vision | TokenRole::Voco)),
            None,
            layout.ids_where(|r| *r == TokenRole::Text),
        ),
    };

    let mut problems = Vec::new();
    let max_before = before.iter().copied().max();
    let min_after = after.iter().copied().min();
    match (max_before, prompt, min_after) {
        (Some(b), Some(p), _) if b >= p => problems.push(format!("max carrier {b} >= prompt {p}")),
        _ => {}
    }
    match (prompt, min_after) {
        (Some(p), Some(a)) if p >= a => problems.push(format!("prompt {p} >= first subsequent {a}")),
        (None, Some(a)) => {
            if let Some(b) = max_before.filter(|&b| b >= a) {
                problems.push(format!("max compressed {b} >= first text {a}"));
            }
        }
        _ => {}
    }
    if let Some(w) = after.windows(2).find(|w| w[1] <= w[0]) {
        problems.push(format!("subsequent IDs not increasing at {} -> {}", w[0], w[1]));
    }
    if kind == Kind::Decoder {
        for chunk in 1..config.chunk_count() {
            let cur = chunk_ids(layout, chunk).into_iter().max();
            let next = chunk_ids(layout, chunk + 1).into_iter().min();
            if let (Some(c), Some(n)) = (cur, next) {
                if c >= n {
                    problems.push(format!("chunk {chunk} carrier {c} >= chunk {} carrier {n}", chunk + 1));
                }
            }
        }
    }
    report.check(CAUSAL_ORDER, problems.is_empty(), problems.join("; "));
}

fn unique_check(report: &mut ValidationReport, layout: &PositionLayout, kind: Kind) {
    let groups: Vec<Vec<PositionId>> = match kind {
        Kind::Voco => vec![layout.ids_where(|r| *r == TokenRole::Voco)],
        _ => {
            let mut chunks: Vec<usize> = layout.entries.iter().filter_map(|e| e.role.chunk()).collect();
            chunks.dedup();
            chunks.into_iter().map(|c| chunk_ids(layout, c)).collect()
        }
    };
    let dups: Vec<String> = groups
        .iter()
        .flat_map(|ids| {
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0].to_string()).collect::<Vec<_>>()
        })
        .collect();
    if dups.is_empty() {
        report.check(UNIQUE_MEMORY, true, "");
    } else {
        report.push(UNIQUE_MEMORY, CheckStatus::Warn, format!("duplicate IDs: {}", dups.join(", ")));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{decoder_layout, voco_layout};

    fn status(report: &ValidationReport, name: &str) -> CheckStatus {
        report.get(name).unwrap_or_else(|| panic!("missing check {name}")).status
    }

    #[test]
    fn epl_lm_decoder_passes_everything() {
        let cfg = LayoutConfig::canonical(Task::Lm, Framework::X500, Scheme::Epl);
        let report = validate_layout(&decoder_layout(&cfg).unwrap(), &cfg);
        assert!(report.passed(), "{}", report.to_json());
        assert_eq!(status(&report, CAUSAL_ORDER), CheckStatus::Pass);
        assert_eq!(status(&report, CARRIER_IDENTITY), CheckStatus::Pass);
        assert_eq!(status(&report, MINIMAX_OPTIMAL), CheckStatus::Pass);
    }

    #[test]
    fn dpl_x500_lm_decoder_breaks_causal_order() {
        let cfg = LayoutConfig::canonical(Task::Lm, Framework::X500, Scheme::Dpl);
        let report = validate_layout(&decoder_layout(&cfg).unwrap(), &cfg);
        assert!(!report.passed());
        assert_eq!(status(&report, CAUSAL_ORDER), CheckStatus::Fail);
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn dpl_icae_lm_decoder_is_causal() {
        let cfg = LayoutConfig::canonical(Task::Lm, Framework::Icae, Scheme::Dpl);
        let report = validate_layout(&decoder_layout(&cfg).unwrap(), &cfg);
        assert!(report.passed(), "{}", report.to_json());
    }

    #[test]
    fn ae_skips_causal_order() {
        let cfg = LayoutConfig::canonical(Task::Ae, Framework::Icae, Scheme::Epl);
        let report = validate_layout(&decoder_layout(&cfg).unwrap(), &cfg);
        assert!(report.passed());
        assert_eq!(status(&report, CAUSAL_ORDER), CheckStatus::Skip);
    }

    #[test]
    fn injected_out_of_range_memory_id() {
        let cfg = LayoutConfig::canonical(Task::Ae, Framework::Icae, Scheme::Epl);
        let mut layout = encoder_layout(&cfg, 1).unwrap();
        let last = layout.entries.last_mut().unwrap();
        last.position_id = 612;
        let report = validate_layout(&layout, &cfg);
        assert_eq!(status(&report, MEMORY_IN_RANGE), CheckStatus::Fail);
        assert!(report.get(MEMORY_IN_RANGE).unwrap().detail.contains("612"));
    }

    #[test]
    fn duplicates_are_a_warning() {
        // L = 6, M = 4 gives 1, 3, 4, 6; force a duplicate by hand.
        let cfg = LayoutConfig {
            chunk_size: 6,
            memory_count: 4,
            context_len: 6,
            total_len: 8,
            question_len: 1,
            answer_len: 1,
            ..LayoutConfig::canonical(Task::Ae, Framework::Icae, Scheme::Epl)
        };
        let mut layout = encoder_layout(&cfg, 1).unwrap();
        let n = layout.len();
        layout.entries[n - 1].position_id = layout.entries[n - 2].position_id;
        let report = validate_layout(&layout, &cfg);
        assert_eq!(status(&report, UNIQUE_MEMORY), CheckStatus::Warn);
    }

    #[test]
    fn malformed_layouts_do_not_panic() {
        let cfg = LayoutConfig::canonical(Task::Lm, Framework::Icae, Scheme::Epl);
        let empty = PositionLayout::new();
        assert_eq!(status(&validate_layout(&empty, &cfg), LAYOUT_KIND), CheckStatus::Fail);

        let mut shuffled = decoder_layout(&cfg).unwrap();
        shuffled.entries.swap(0, 300);
        shuffled.entries[5].position_id = -3;
        let report = validate_layout(&shuffled, &cfg);
        assert!(!report.passed());
        assert_eq!(status(&report, NON_NEGATIVE), CheckStatus::Fail);
        assert_eq!(status(&report, SEGMENT_ORDER), CheckStatus::Fail);

        let mut truncated = decoder_layout(&cfg).unwrap();
        truncated.entries.truncate(210);
        assert_eq!(status(&validate_layout(&truncated, &cfg), ENTRY_COUNTS), CheckStatus::Fail);

        let bad_cfg = LayoutConfig { memory_count: 0, ..cfg };
        assert!(!validate_layout(&decoder_layout(&cfg).unwrap(), &bad_cfg).passed());
    }

    #[test]
    fn voco_layouts() {
        let cfg = LayoutConfig::canonical(Task::Qa, Framework::X500, Scheme::Epl);
        let epl = voco_layout(576, 128, 10, Scheme::Epl).unwrap();
        let report = validate_layout(&epl, &cfg);
        assert!(report.passed(), "{}", report.to_json());
        assert_eq!(status(&report, MEMORY_IN_RANGE), CheckStatus::Pass);
        let dpl = voco_layout(576, 128, 10, Scheme::Dpl).unwrap();
        assert!(validate_layout(&dpl, &cfg).passed());
    }
}
