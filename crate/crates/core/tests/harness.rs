use std::path::Path;

use avfuse::data::Split;
use avfuse::harness::{prior_baseline, table, Experiment, ExperimentConfig, TrainedRun, EVAL_REPORT, SWEEP_FILE};
use avfuse::metrics::MetricReport;
use avfuse::textproc::Vocabulary;

fn tiny(root: &Path) -> Experiment {
    let cfg = ExperimentConfig::from_json(
        &serde_json::json!({
            "data": {"n_train": 16, "n_val": 6, "n_eval": 6, "frames": 8, "d_audio": 16, "d_secondary": 16},
            "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32, "max_caption_len": 14},
            "train": {"epochs": 2, "batch_size": 4, "warmup_epochs": 1},
            "decode": {"beam_width": 2, "max_depth": 14},
            "cbow": {"embedding_dim": 16, "epochs": 1},
            "grid": [0.0, 0.5, 1.0],
            "n_seeds": 2,
            "manifest": root.join("data/manifest.jsonl"),
            "out_dir": root.join("runs"),
        })
        .to_string(),
    )
    .unwrap();
    Experiment::new(cfg).unwrap()
}

#[test]
fn recorded_choices_reproduce_from_the_saved_model() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = tiny(tmp.path());
    exp.gen_data().unwrap();
    exp.train(0).unwrap();
    let sweep = exp.sweep(0).unwrap();
    assert_eq!(sweep.rows.len(), 3);

    let run = TrainedRun::load(exp.run_dir(0)).unwrap();
    let (_, val) = exp.evaluate(&run, Split::Val, sweep.chosen_lambda).unwrap();
    assert_eq!(val.corpus.get(&sweep.selection_metric), Some(sweep.chosen_score));

    let eval = exp.eval(0, None).unwrap();
    let (_, again) = exp.evaluate(&run, Split::Eval, sweep.chosen_lambda).unwrap();
    assert_eq!(eval, again);
    assert_eq!(MetricReport::load(exp.run_dir(0).join(EVAL_REPORT)).unwrap(), eval);

    let vision = exp.vision_only(0).unwrap();
    assert_eq!(vision, exp.evaluate(&run, Split::Eval, 0.0).unwrap().1);
    assert_eq!(Vocabulary::load(exp.run_dir(0).join("vocab.txt")).unwrap(), run.vocab);
}

#[test]
fn curve_and_table_cover_every_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = tiny(tmp.path());
    exp.gen_data().unwrap();
    for seed in exp.config.seeds() {
        exp.train(seed).unwrap();
        exp.eval(seed, Some(0.5)).unwrap();
    }
    assert!(!exp.run_dir(0).join(SWEEP_FILE).exists());
    let rows = exp.curve().unwrap();
    assert_eq!(rows.iter().map(|r| r.lambda).collect::<Vec<_>>(), exp.config.grid);
    assert!(rows.iter().all(|r| r.cider_mean.is_finite() && r.cider_sd >= 0.0));
    let t = table(std::slice::from_ref(&exp.config.out_dir), EVAL_REPORT).unwrap();
    assert_eq!(t.rows[0].runs, 2);
    assert!(exp.eval(1, None).is_err(), "eval without a sweep needs an explicit weight");
}

#[test]
fn prior_baseline_scores_the_most_frequent_caption() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = tiny(tmp.path());
    exp.gen_data().unwrap();
    exp.train(0).unwrap();
    let run = TrainedRun::load(exp.run_dir(0)).unwrap();
    let train = exp.clips(Split::Train, &run.vocab).unwrap();
    let eval = exp.clips(Split::Eval, &run.vocab).unwrap();
    let report = prior_baseline(&train, &eval, &exp.metric_options(false).unwrap()).unwrap();
    assert_eq!(report.samples.len(), eval.len());
    assert!(report.corpus.bleu4 >= 0.0 && report.corpus.bleu4 <= 1.0);
}
