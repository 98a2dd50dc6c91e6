use std::collections::BTreeSet;

use jaeger::data::{generate_corpus, GenConfig, SplitName};
use jaeger::fusion::ModelConfig;
use jaeger::harness::{
    ablate, corpus_vocab, evaluate, gradcheck, load_params_into, save_checkpoint, train, GradcheckOptions, TrainConfig,
    Trained,
};
use jaeger::numerics::BackwardFault;
use jaeger::Error;

fn tiny() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 1,
        batch_size: 4,
        model: ModelConfig::tiny(),
        ..TrainConfig::default()
    }
}

#[test]
fn untrained_ema_matches_replay_of_dumped_predictions() {
    let docs = generate_corpus(12, 30, &GenConfig::default()).unwrap();
    let cfg = tiny();
    let split = cfg.split_corpus(&docs).unwrap();
    let trained = Trained::init(&cfg, corpus_vocab(&split.train, 1)).unwrap();
    let out = evaluate(&trained, &docs, SplitName::Val, 0.5).unwrap();
    let questions: usize = split.val.iter().map(|d| d.questions.len()).sum();
    assert_eq!(out.report.n, questions);
    assert_eq!(out.report.split, "val");

    // replay from the JSON dump with an independent count
    let dumped: Vec<String> = out
        .predictions
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
    let mut hits = 0;
    for line in &dumped {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let set = |k: &str| {
            let mut ids: Vec<u64> = v[k].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
            ids.sort_unstable();
            ids
        };
        hits += usize::from(set("predicted") == set("gold"));
    }
    assert_eq!(out.report.ema, hits as f64 / dumped.len() as f64);

    let gold_ids: Vec<BTreeSet<usize>> = split
        .val
        .iter()
        .flat_map(|d| d.questions.iter().map(|q| q.answers.clone()))
        .collect();
    assert_eq!(
        out.predictions.iter().map(|r| r.gold.clone()).collect::<Vec<_>>(),
        gold_ids
    );
    assert_eq!(evaluate(&trained, &docs, SplitName::Val, 0.5).unwrap(), out);
}

#[test]
fn width_mismatch_is_a_compatibility_error() {
    let docs = generate_corpus(2, 10, &GenConfig::default()).unwrap();
    let narrow = TrainConfig {
        model: ModelConfig::default(),
        ..tiny()
    };
    let (trained, _) = train(&narrow, &docs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &trained).unwrap();

    let mut wide = narrow.clone();
    wide.model.question_bidir.d_model = 48;
    let mut other = Trained::init(&wide, trained.vocab.clone()).unwrap();
    assert!(matches!(
        load_params_into(&path, &mut other.params),
        Err(Error::Compatibility(_))
    ));
    let mut same = Trained::init(&narrow, trained.vocab.clone()).unwrap();
    load_params_into(&path, &mut same.params).unwrap();
    assert_eq!(same.params, trained.params);
}

#[test]
fn corrupted_concat_backward_is_caught() {
    let opts = GradcheckOptions {
        fault: Some(BackwardFault::ConcatLastLeftDoubled),
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&ModelConfig::tiny(), &opts).unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_error > 1e-2);
    assert!(
        report.failing.iter().any(|n| n.starts_with("fusion.")),
        "{:?}",
        report.failing
    );
    assert!(report.summary().contains("FAIL"));

    let names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
    let unique: BTreeSet<&str> = names.iter().copied().collect();
    assert_eq!(unique.len(), names.len());
    let (_, store) = jaeger::fusion::JaegerModel::build::<f64>(&ModelConfig::tiny(), 30, 0).unwrap();
    assert_eq!(names, store.names().collect::<Vec<_>>());
}

#[test]
fn ablation_rows_and_widths() {
    let docs = generate_corpus(8, 20, &GenConfig::default()).unwrap();
    let cfg = tiny();
    let table = ablate(&cfg, &docs).unwrap();
    assert_eq!(table.rows.len(), 3);
    let widths: Vec<usize> = table.rows.iter().map(|r| r.question_width).collect();
    assert_eq!(widths, [32, 16, 16]);
    for r in &table.rows {
        assert!((0.0..=1.0).contains(&r.val_ema) && (0.0..=1.0).contains(&r.test_ema));
    }
    assert_eq!(ablate(&cfg, &docs).unwrap(), table);
    assert!(table.to_string().lines().count() == 4);
}
