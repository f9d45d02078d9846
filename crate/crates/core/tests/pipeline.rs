use std::collections::BTreeMap;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use reading_entropy::corpus::{SkipPolicy, WordKey};
use reading_entropy::inference::{bh_adjust, delta_llh, paired_differences, paired_permutation_test, Significance};
use reading_entropy::pipeline::{self, Analysis, AnalysisSettings, Dataset, PipelineConfig};
use reading_entropy::predictors::{Experiment, FeatureMatrix, Response, Term};
use reading_entropy::regression::{cross_validate, FoldPlan, ModelKind};
use reading_entropy::synth::{generate, GeneratorConfig, Synthetic};
use reading_entropy::{Alpha, Error};

fn dataset(synthetic: &Synthetic, alphas: &[Alpha]) -> Dataset {
    let corpus = synthetic.corpus(SkipPolicy::IncludeAsZero).unwrap();
    Dataset::from_parts(
        "syn",
        corpus,
        &synthetic.positions,
        Some(&synthetic.frequency_map()),
        1e-8,
        alphas,
    )
    .unwrap()
}

fn quick_settings(seed: u64) -> AnalysisSettings {
    AnalysisSettings {
        fold_seed: seed,
        permutation_seed: seed,
        permutations: 1000,
        ..AnalysisSettings::default()
    }
}

#[test]
fn pure_noise_column_is_rarely_significantly_positive() {
    let n = 1000;
    let mut positive = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values_b = Vec::with_capacity(2 * n);
        let mut values_t = Vec::with_capacity(3 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let noise: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            values_b.extend([1.0, x]);
            values_t.extend([1.0, x, noise]);
            y.push(200.0 + 3.0 * x + 30.0 * e);
        }
        let rows: Vec<WordKey> = (0..n as u32).map(|i| WordKey::new(0, i)).collect();
        let matrix = |columns: Vec<Term>, values: Vec<f64>| FeatureMatrix {
            rows: rows.clone(),
            columns,
            values,
            response: y.clone(),
            response_kind: Response::ReadingTime,
            dropped: 0,
        };
        let baseline = matrix(vec![Term::intercept(), Term::surprisal(0)], values_b);
        let target = matrix(
            vec![Term::intercept(), Term::surprisal(0), Term::surprisal(1)],
            values_t,
        );
        let plan = FoldPlan::random(seed, n, 10).unwrap();
        let tf = cross_validate(&target, ModelKind::Linear, &plan).unwrap();
        let bf = cross_validate(&baseline, ModelKind::Linear, &plan).unwrap();
        let diffs = paired_differences(&tf.per_item_heldout_llh, &tf.rows, &bf.per_item_heldout_llh, &bf.rows).unwrap();
        let delta = delta_llh(&tf.per_item_heldout_llh, &tf.rows, &bf.per_item_heldout_llh, &bf.rows).unwrap();
        let p = paired_permutation_test(&diffs, 2000, seed).unwrap();
        let (_, rejected) = bh_adjust(&[p], 0.05).unwrap();
        if Significance::classify(delta, rejected[0]) == Significance::Green {
            positive += 1;
        }
    }
    assert!(positive <= 5, "{positive}/100 noise columns significantly positive");
}

#[test]
fn logistic_budget_and_successor_experiments_run() {
    let mut config = GeneratorConfig::standard(4, 1500);
    config.n_readers = 6;
    config.skip_model = Some(BTreeMap::from([(Term::intercept(), 1.0), (Term::length(0), -0.5)]));
    let synthetic = generate(&config).unwrap();
    let datasets = vec![dataset(&synthetic, &[Alpha::HALF, Alpha::SHANNON])];
    let analysis = Analysis::new(&datasets, quick_settings(2)).unwrap();
    for name in ["exp4", "exp5", "exp6"] {
        let experiment: Experiment = name.parse().unwrap();
        let result = analysis.run_experiment(&experiment).unwrap();
        assert!(!result.reports.is_empty(), "{name}");
        for r in &result.reports {
            assert!(
                r.delta_llh.is_finite() && r.p_value > 0.0 && r.p_value <= 1.0,
                "{name}: {r:?}"
            );
            assert!(r.p_adjusted >= r.p_value);
        }
    }
    let exp4 = analysis.run_experiment(&"exp4".parse().unwrap()).unwrap();
    assert!(exp4.comparisons.iter().all(|c| c.target.model == ModelKind::Logistic));
}

#[test]
fn surprisal_coefficient_is_recovered() {
    let synthetic = generate(&GeneratorConfig::standard(9, 20_000)).unwrap();
    let datasets = vec![dataset(&synthetic, &[Alpha::HALF, Alpha::SHANNON])];
    let analysis = Analysis::new(&datasets, quick_settings(1)).unwrap();
    let result = analysis.run_experiment(&"exp3-add".parse().unwrap()).unwrap();
    let c = result.comparisons.iter().find(|c| c.pair.label() == "add/t").unwrap();
    let coef = |term: Term| {
        let i = c.target.columns.iter().position(|t| *t == term).unwrap();
        c.target.coefficients[i]
    };
    assert!(
        (coef(Term::surprisal(0)) - 3.0).abs() < 0.5,
        "{}",
        coef(Term::surprisal(0))
    );
    assert!(
        (coef(Term::entropy(0, Alpha::HALF)) - 5.0).abs() < 1.0,
        "{}",
        coef(Term::entropy(0, Alpha::HALF))
    );
    assert!(coef(Term::surprisal(2)).abs() < 0.5);
}

#[test]
fn grouped_folds_keep_texts_together() {
    let synthetic = generate(&GeneratorConfig::standard(5, 1000)).unwrap();
    let datasets = vec![dataset(&synthetic, &[Alpha::SHANNON])];
    let settings = AnalysisSettings {
        grouped_folds: true,
        ..quick_settings(3)
    };
    let analysis = Analysis::new(&datasets, settings).unwrap();
    let result = analysis.run_experiment(&"exp1".parse().unwrap()).unwrap();
    let fit = &result.comparisons[0].target;
    let mut fold_of_text = BTreeMap::new();
    for (key, &fold) in fit.rows.iter().zip(&fit.plan.assignment) {
        assert_eq!(*fold_of_text.entry(key.text_id).or_insert(fold), fold);
    }
}

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn config_errors_are_reported_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    generate(&GeneratorConfig::standard(1, 500))
        .unwrap()
        .write(dir.path())
        .unwrap();
    let dataset = r#"{"name": "syn", "corpus": "corpus.tsv", "format": "eye-tracking", "distributions": {"fulldist": "dists.rtd"}"#;
    let cases = [
        format!(r#"{{"datasets": [{dataset}, "colour": 1}}], "experiments": ["exp1"], "output_dir": "out"}}"#),
        format!(r#"{{"datasets": [{dataset}, "skip_policy": "not_applicable"}}], "experiments": ["exp1"], "output_dir": "out"}}"#),
        format!(r#"{{"datasets": [{dataset}}}, {dataset}}}], "experiments": ["exp1"], "output_dir": "out"}}"#),
        format!(r#"{{"datasets": [{dataset}}}], "experiments": [], "output_dir": "out"}}"#),
        format!(r#"{{"datasets": [{dataset}}}], "experiments": ["exp1"], "folds": 1, "output_dir": "out"}}"#),
        r#"{"datasets": [{"name": "syn", "corpus": "missing.tsv", "format": "eye-tracking", "distributions": {"fulldist": "dists.rtd"}}], "experiments": ["exp1"], "output_dir": "out"}"#.to_string(),
    ];
    for body in &cases {
        let path = write_config(dir.path(), body);
        let err = PipelineConfig::load(&path)
            .and_then(|c| pipeline::run(&c).map(|_| ()))
            .unwrap_err();
        assert!(err.is_validation(), "{body}: {err}");
        assert!(!dir.path().join("out").exists(), "{body}");
    }

    let path = write_config(
        dir.path(),
        &format!(r#"{{"datasets": [{dataset}}}], "experiments": ["exp1"], "permutations": 200, "output_dir": "out"}}"#),
    );
    let config = PipelineConfig::load(&path).unwrap();
    assert_eq!(config.datasets[0].corpus, dir.path().join("corpus.tsv"));
    let written = pipeline::run(&config).unwrap();
    assert!(written.iter().any(|p| p.ends_with("exp1.tsv")));
}

#[test]
fn unwritable_output_leaves_no_partial_reports() {
    let dir = tempfile::tempdir().unwrap();
    generate(&GeneratorConfig::standard(1, 500))
        .unwrap()
        .write(dir.path())
        .unwrap();
    // A regular file where the output directory should be.
    fs::write(dir.path().join("out"), "").unwrap();
    let path = write_config(
        dir.path(),
        r#"{"datasets": [{"name": "syn", "corpus": "corpus.tsv", "format": "eye-tracking",
            "distributions": {"fulldist": "dists.rtd"}}], "experiments": ["exp1"], "permutations": 200, "output_dir": "out"}"#,
    );
    let err = pipeline::run(&PipelineConfig::load(&path).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Io { .. } | Error::Stage { .. }), "{err}");
    assert!(dir.path().join("out").is_file());
}
