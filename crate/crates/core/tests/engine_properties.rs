use banditswap::domain::{write_traces, EngineConfig, SubstitutionKind};
use banditswap::harness::{
    prepare, run_experiment, run_single, stationary_pool, synthetic_config, ExperimentConfig, StreamSpec,
};
use banditswap::models::{five_arm_specs, synthetic_schema, synthetic_stream, ModelSpec};
use banditswap::window::{Engine, WindowPolicy};
use proptest::prelude::*;

fn config(memory: f64, thr: f64, burn_in: usize, seed: u64, traces: usize) -> ExperimentConfig {
    synthetic_config(
        five_arm_specs(),
        traces,
        EngineConfig {
            memory,
            thr,
            burn_in,
            seed,
            ..EngineConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_memory_matches_fresh_windows(seed in any::<u64>(), burn_in in 5usize..60, thr in 0.0f64..0.3) {
        let cfg = config(0.0, thr, burn_in, seed, 1_500);
        let prepared = prepare(&cfg).unwrap();
        let run = |policy| {
            let mut e = Engine::new(prepared.candidates.clone(), prepared.property, cfg.engine.clone(), policy).unwrap();
            e.run(&prepared.traces, &prepared.evaluator).unwrap();
            e
        };
        let (a, b) = (run(WindowPolicy::Fresh), run(WindowPolicy::Memory(0.0)));
        prop_assert_eq!(a.events(), b.events());
        prop_assert_eq!(a.all_windows(), b.all_windows());
        prop_assert_eq!(a.observations(), b.observations());
    }

    #[test]
    fn report_invariants(seed in any::<u64>(), memory in 0.0f64..=0.5, thr in 0.0f64..0.3, burn_in in 5usize..60, max_early in 1usize..3) {
        let mut cfg = config(memory, thr, burn_in, seed, 1_200);
        cfg.engine.max_early_per_window = max_early;
        let report = run_experiment(&cfg).unwrap();
        let s = &report.summary;
        prop_assert_eq!(report.windows.iter().map(|w| w.size).sum::<usize>(), 1_200);
        prop_assert!(s.early.success <= s.early.relevant && s.early.relevant <= s.early.total);
        prop_assert!(report.traces.windows(2).all(|w| w[1].cumulative_error >= w[0].cumulative_error));
        prop_assert!(report.windows.iter().filter(|w| w.closed).all(|w| w.size > burn_in));
        for w in &report.windows {
            let early = report.events.iter().filter(|e| e.window == w.index && e.kind == SubstitutionKind::Early).count();
            prop_assert!(early <= max_early);
            let eow = report.events.iter().filter(|e| e.window == w.index && e.kind == SubstitutionKind::EndOfWindow).count();
            prop_assert!(eow <= 1);
        }
        for e in &report.events {
            prop_assert_ne!(&e.from, &e.to);
            if e.kind == SubstitutionKind::Early {
                let w = report.windows.iter().find(|w| w.index == e.window).unwrap();
                prop_assert!(w.start <= e.trace && e.trace <= w.end);
                if w.closed {
                    prop_assert_eq!(e.until_window_end, Some(w.end - e.trace));
                }
            }
        }
    }
}

#[test]
fn single_model_pool_closes_after_burn_in() {
    let cfg = synthetic_config(
        stationary_pool(&[0.7]),
        200,
        EngineConfig {
            burn_in: 49,
            ..EngineConfig::default()
        },
    );
    let engine = run_single(&cfg).unwrap();
    assert!(engine.windows().iter().all(|w| w.size == 50));
    assert!(engine.events().is_empty());
}

#[test]
fn csv_stream_with_naive_bayes_pool() {
    let dir = tempfile::tempdir().unwrap();
    let schema = synthetic_schema();
    let stream = synthetic_stream(900, 4);
    write_traces(
        std::fs::File::create(dir.path().join("stream.csv")).unwrap(),
        &stream,
        &schema,
    )
    .unwrap();
    let nb = |id: &str, fraction| ModelSpec::NaiveBayes {
        id: id.into(),
        model: None,
        fraction,
        buckets: 5,
        smoothing: 1.0,
    };
    let cfg = ExperimentConfig {
        engine: EngineConfig {
            burn_in: 20,
            seed: 3,
            ..EngineConfig::default()
        },
        stream: StreamSpec::Csv {
            path: dir.path().join("stream.csv"),
            schema: None,
            train: 300,
        },
        models: vec![nb("nb-a", 0.5), nb("nb-b", 0.8), nb("nb-c", 1.0)],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summary.traces, 600);
    assert!(report.summary.threshold > 0.0);
    let again = run_experiment(&cfg).unwrap();
    assert_eq!(report, again);
}

#[test]
fn malformed_csv_row_reports_trace_index() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut text = String::from("seq,age,gender,race,bail\n0,30,male,latino,1000\n1,31,robot,white,1000\n");
    text.push_str("2,32,female,black,1000\n");
    std::fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig {
        stream: StreamSpec::Csv {
            path,
            schema: None,
            train: 0,
        },
        ..ExperimentConfig::default()
    };
    let err = run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("trace 1"), "{err}");
}
