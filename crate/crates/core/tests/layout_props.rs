use itertools::Itertools;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

use epl_core::layout::{
    brute_force_optimal_minimax, checks, decoder_layout, encoder_layout, minimax_bound, minimax_distance,
    uniform_memory_positions, validate_layout, CheckStatus, Framework, LayoutConfig, PositionLayout, Scheme, Task,
    TokenRole, UniformSpec,
};

/// Exhaustive minimax optimum over every M-subset of `1..=len`.
fn exhaustive_optimum(len: usize, memory: usize) -> u64 {
    let context: Vec<i64> = (1..=len as i64).collect();
    context
        .iter()
        .copied()
        .combinations(memory)
        .map(|subset| minimax_distance(&context, &subset).unwrap())
        .min()
        .unwrap()
}

#[test]
fn oracle_matches_exhaustive_enumeration() {
    for len in 1..=12 {
        for m in 1..=len {
            let oracle = brute_force_optimal_minimax(len, m).unwrap();
            assert_eq!(oracle.optimal_value, exhaustive_optimum(len, m), "L={len} M={m}");
            let context: Vec<i64> = (1..=len as i64).collect();
            assert_eq!(minimax_distance(&context, &oracle.witness).unwrap(), oracle.optimal_value);
        }
    }
}

fn config_strategy() -> impl Strategy<Value = LayoutConfig> {
    (1usize..40, 1usize..6, 1usize..4, 1usize..20, 1usize..8, 1usize..6)
        .prop_flat_map(|(chunk, chunks, m_div, extra, q, a)| {
            let memory = (chunk / m_div).max(1);
            let last = 1..=chunk;
            (Just((chunk, chunks, memory, extra, q, a)), last)
        })
        .prop_filter_map("memory must fit the last chunk", |((chunk, chunks, memory, extra, q, a), last)| {
            let context_len = (chunks - 1) * chunk + last;
            (memory <= last).then_some(LayoutConfig {
                chunk_size: chunk,
                memory_count: memory,
                context_len,
                total_len: context_len + extra,
                question_len: q,
                answer_len: a,
                framework: Framework::Icae,
                scheme: Scheme::Epl,
                task: Task::Ae,
            })
        })
}

fn memory_ids(layout: &PositionLayout) -> Vec<i64> {
    layout.ids_where(|r| matches!(r, TokenRole::Memory { .. }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn uniform_positions_cover_their_range(v1 in -50i64..500, len in 1i64..300, m_frac in 0.0f64..1.0) {
        let m = ((len as f64 * m_frac) as usize).max(1);
        let ids = uniform_memory_positions(v1, v1 + len - 1, m).unwrap();
        prop_assert_eq!(ids.len(), m);
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*ids.first().unwrap() >= v1 && *ids.last().unwrap() < v1 + len);
        let context: Vec<i64> = (v1..v1 + len).collect();
        prop_assert_eq!(minimax_distance(&context, &ids).unwrap(), minimax_bound(len as usize, m));
    }

    #[test]
    fn uniform_points_are_mirror_symmetric(v1 in 0i64..200, len in 1i64..200, m_frac in 0.0f64..1.0) {
        let m = ((len as f64 * m_frac) as usize).max(1);
        let spec = UniformSpec::new(v1, v1 + len - 1, m).unwrap();
        let total = spec.point(0) + spec.point(m - 1);
        for j in 0..m {
            prop_assert_eq!(spec.point(j) + spec.point(m - 1 - j), total);
        }
        // integer IDs can break the mirror by one at rounding ties
        let ids = spec.positions();
        for j in 0..m {
            prop_assert!((ids[j] + ids[m - 1 - j] - (2 * v1 + len - 1)).abs() <= 1);
        }
    }

    #[test]
    fn epl_carriers_repeat_encoder_memory_ids(cfg in config_strategy(), fw in prop_oneof![Just(Framework::Icae), Just(Framework::X500)], task in prop_oneof![Just(Task::Ae), Just(Task::Lm), Just(Task::Qa)]) {
        let cfg = cfg.with_framework(fw).with_task(task);
        let encoded: Vec<i64> = (1..=cfg.chunk_count())
            .flat_map(|i| memory_ids(&encoder_layout(&cfg, i).unwrap()))
            .collect();
        let decoder = decoder_layout(&cfg).unwrap();
        prop_assert_eq!(decoder.ids_where(|r| matches!(r, TokenRole::Carrier { .. })), encoded);
        let report = validate_layout(&decoder, &cfg);
        let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
        if task != Task::Ae && last_carrier_hits_prompt(&cfg) {
            prop_assert_eq!(failed, [checks::CAUSAL_ORDER]);
        } else {
            prop_assert!(report.passed(), "{}", report.to_json());
        }
    }

    #[test]
    fn layouts_are_deterministic_and_round_trip(cfg in config_strategy(), scheme in prop_oneof![Just(Scheme::Dpl), Just(Scheme::Epl)]) {
        let cfg = cfg.with_scheme(scheme).with_task(Task::Qa);
        let a = decoder_layout(&cfg).unwrap();
        prop_assert_eq!(&a, &decoder_layout(&cfg).unwrap());
        prop_assert_eq!(&PositionLayout::from_json(&a.to_json()).unwrap(), &a);
        prop_assert_eq!(&PositionLayout::from_csv(&a.to_csv()).unwrap(), &a);
        for i in 1..=cfg.chunk_count() {
            let e = encoder_layout(&cfg, i).unwrap();
            prop_assert!(validate_layout(&e, &cfg).passed());
        }
    }
}

/// With `[LM]` at `p`, the last EPL carrier reaches `p` when the final
/// chunk's ratio is below 2 (or exactly 2 with `p` even): its last point
/// `p - (r - 1) / 2` rounds up to `p`.
fn last_carrier_hits_prompt(cfg: &LayoutConfig) -> bool {
    let k = cfg.chunk_count();
    let len = cfg.chunk_len(k);
    let m = cfg.memory_count;
    len < 2 * m || (len == 2 * m && cfg.context_len.is_multiple_of(2))
}

#[test]
fn causal_ordering_over_random_sweep() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = config_strategy();
    let (mut ordered, mut collisions) = (0, 0);
    while ordered < 1200 {
        let cfg = strategy.new_tree(&mut runner).unwrap().current();
        for fw in [Framework::Icae, Framework::X500] {
            for task in [Task::Lm, Task::Qa] {
                let cfg = cfg.with_framework(fw).with_task(task);
                let layout = decoder_layout(&cfg).unwrap();
                let carriers = layout.ids_where(|r| matches!(r, TokenRole::Carrier { .. }));
                let lm = layout.ids_where(|r| *r == TokenRole::LmPrompt)[0];
                let after =
                    layout.ids_where(|r| matches!(r, TokenRole::Completion | TokenRole::Question | TokenRole::Answer));
                assert_eq!(lm, cfg.context_len as i64);
                assert!(after.iter().all(|&id| id > lm), "{cfg:?}");
                let max_carrier = *carriers.iter().max().unwrap();
                let status = validate_layout(&layout, &cfg).get(checks::CAUSAL_ORDER).unwrap().status;
                if last_carrier_hits_prompt(&cfg) {
                    assert_eq!(max_carrier, lm, "{cfg:?}");
                    assert_eq!(status, CheckStatus::Fail, "{cfg:?}");
                    collisions += 1;
                } else {
                    assert!(max_carrier < lm, "{cfg:?}");
                    assert_eq!(status, CheckStatus::Pass, "{cfg:?}");
                    ordered += 1;
                }
            }
        }
    }
    assert!(collisions > 0);
}

#[test]
fn dpl_x500_lm_breaks_causal_ordering() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = config_strategy();
    for _ in 0..300 {
        let cfg = strategy
            .new_tree(&mut runner)
            .unwrap()
            .current()
            .with_framework(Framework::X500)
            .with_scheme(Scheme::Dpl)
            .with_task(Task::Lm);
        let layout = decoder_layout(&cfg).unwrap();
        let report = validate_layout(&layout, &cfg);
        // chunks repeat IDs, and with one chunk the carriers end at L + M - 1 >= M
        assert_eq!(report.get(checks::CAUSAL_ORDER).unwrap().status, CheckStatus::Fail, "{cfg:?}");
    }
    let canonical = LayoutConfig::canonical(Task::Lm, Framework::X500, Scheme::Dpl);
    let report = validate_layout(&decoder_layout(&canonical).unwrap(), &canonical);
    assert_eq!(report.failures().map(|c| c.name).collect::<Vec<_>>(), [checks::CAUSAL_ORDER]);
}
