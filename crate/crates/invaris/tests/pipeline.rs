//! Library-level end-to-end flows that sit between the unit tests and the
//! acceptance suite.

use invaris::ais::MemoryPool;
use invaris::config::AisConfig;
use invaris::corpus;
use invaris::lang::parse;
use invaris::pipeline::{predict, solve, PipelineError};

#[test]
fn predicting_twice_hits_memory_everywhere() {
    let cfg = AisConfig::default();
    let mut pool = corpus::trained_pool(&cfg);
    let p = corpus::gcd_lcm();

    let first = predict(&p, &mut pool, &cfg);
    assert_eq!(first.failures, 0);
    assert!(first
        .outcomes
        .iter()
        .all(|o| { o.result.as_ref().is_ok_and(|(_, stats)| !stats.memory_hit) }));

    let second = predict(&p, &mut pool, &cfg);
    assert_eq!(second.failures, 0);
    for outcome in &second.outcomes {
        let (template, stats) = outcome.result.as_ref().unwrap();
        assert!(stats.memory_hit, "{}", outcome.fragment.render());
        assert_eq!(stats.iterations, 0);
        let (first_template, _) = first
            .outcomes
            .iter()
            .find(|o| o.fragment.render() == outcome.fragment.render())
            .unwrap()
            .result
            .as_ref()
            .unwrap();
        assert_eq!(template, first_template);
    }
    assert_eq!(first.shape.monomial_set(), second.shape.monomial_set());
}

#[test]
fn prediction_skips_fragments_outside_loops() {
    let cfg = AisConfig::default();
    let mut pool = corpus::trained_pool(&cfg);
    let report = predict(&corpus::gcd_lcm(), &mut pool, &cfg);
    assert_eq!(report.skipped_outside_loops, 4);
    assert_eq!(report.outcomes.len(), 4);
}

#[test]
fn loop_free_programs_predict_a_constant_only_shape() {
    let cfg = AisConfig::default();
    let mut pool = MemoryPool::new(cfg.capacity);
    let p = parse("{ a > 0 }\nx := a;\ny := x + 1;\n").unwrap();
    let report = predict(&p, &mut pool, &cfg);
    assert!(report.shape.is_empty());
    assert!(report.shape.includes_constant);
    assert_eq!(report.failures, 0);
    assert_eq!(report.skipped_outside_loops, 2);

    assert!(matches!(
        solve(&p, &report.shape, &cfg),
        Err(PipelineError::NoLoops)
    ));
}

#[test]
fn budget_exhaustion_still_reports_the_partial_shape() {
    let cfg = AisConfig {
        max_generations: 20,
        ..AisConfig::default()
    };
    let mut pool = corpus::trained_pool(&cfg);
    // The first loop fragment has no closed form in the template family;
    // the second one is routine.
    let p = parse(
        "{ a > 0 }\ns := a;\nw := a;\nx := a;\ny := a;\nwhile w > 0 do\nx := y + 1;\ny := y + s;\nw := w - 1;\nend while;\n",
    )
    .unwrap();
    let report = predict(&p, &mut pool, &cfg);
    assert_eq!(report.failures, 1);
    let solved: Vec<&str> = report
        .outcomes
        .iter()
        .filter(|o| o.result.is_ok())
        .map(|o| o.fragment.lhs.as_str())
        .collect();
    assert!(solved.contains(&"y"));
    // The shape still covers the answered fragments.
    assert!(!report.shape.is_empty());
}

#[test]
fn solving_every_corpus_program_round_trips_through_reports() {
    let cfg = AisConfig {
        input_range: (1, 8),
        ..AisConfig::default()
    };
    let mut pool = corpus::trained_pool(&cfg);
    let p = corpus::gcd_lcm();
    let shape = predict(&p, &mut pool, &cfg).shape;
    let report = solve(&p, &shape, &cfg).unwrap();
    assert_eq!(report.holdout_traces, cfg.holdout_traces);
    for loop_report in &report.loops {
        let sol = loop_report.result.as_ref().unwrap();
        assert_eq!(sol.invariants.len(), 1);
        assert_eq!(sol.invariants[0].render(), "v*y + u*x - a*b = 0");
        assert!(sol.holdout_ok);
        assert_eq!(sol.postcondition_ok, Some(true));
    }
}
