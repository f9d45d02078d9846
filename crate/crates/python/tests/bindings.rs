use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList, PyModule};

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyModule>) -> PyResult<R>) -> R {
    Python::attach(|py| {
        let m = PyModule::new(py, "reading_entropy_py").unwrap();
        reading_entropy_py::reading_entropy_py(&m).unwrap();
        f(py, &m).unwrap()
    })
}

#[test]
fn entropy_and_effort() {
    with_module(|_, m| {
        let h: f64 = m
            .getattr("renyi_entropy")?
            .call1((vec![0.5, 0.25, 0.25], 1.0))?
            .extract()?;
        assert!((h - 1.5).abs() < 1e-12);
        let h: f64 = m
            .getattr("renyi_entropy")?
            .call1((vec![0.5, 0.25, 0.25], f64::INFINITY))?
            .extract()?;
        assert!((h - 1.0).abs() < 1e-12);
        let s: f64 = m.getattr("surprisal")?.call1((vec![0.5, 0.25, 0.25], 2))?.extract()?;
        assert!((s - 2.0).abs() < 1e-12);
        let total: f64 = m
            .getattr("preprocessing_effort_total")?
            .call1((vec![0.1, 0.2, 0.7], 3.0))?
            .extract()?;
        assert!((total - 1.0).abs() < 1e-12);
        let grid: Vec<f64> = m.getattr("default_alphas")?.call0()?.extract()?;
        assert!(grid.contains(&0.5) && grid.contains(&f64::INFINITY));
        Ok(())
    })
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(|py, m| {
        let err = m.getattr("renyi_entropy")?.call1((vec![0.5, 0.6], 1.0)).unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        let err = m.getattr("renyi_entropy")?.call1((vec![0.5, 0.5], -1.0)).unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        let err = m
            .getattr("spearman")?
            .call1((vec![1.0, 1.0], vec![1.0, 2.0]))
            .unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        let err = m
            .getattr("word_information")?
            .call1(("/nonexistent/dists.rtd",))
            .unwrap_err();
        assert!(err.is_instance_of::<PyOSError>(py), "{err}");
        Ok(())
    })
}

#[test]
fn inference_helpers() {
    with_module(|_, m| {
        let p: f64 = m
            .getattr("permutation_test")?
            .call1((vec![1.0, 1.0, 1.0],))?
            .extract()?;
        assert_eq!(p, 0.25);
        let (adj, rej): (Vec<f64>, Vec<bool>) = m
            .getattr("bh_adjust")?
            .call1((vec![0.001, 0.008, 0.039, 0.041, 0.042, 0.06],))?
            .extract()?;
        assert_eq!(rej, [true, true, false, false, false, false]);
        assert!(adj.iter().all(|&a| a <= 1.0));
        let rho: f64 = m
            .getattr("spearman")?
            .call1((vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0]))?
            .extract()?;
        assert!((rho - 0.5).abs() < 1e-12);
        Ok(())
    })
}

#[test]
fn cross_validate_returns_per_item_llh() {
    with_module(|py, m| {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, i as f64 / 10.0]).collect();
        let y: Vec<f64> = (0..40)
            .map(|i| 1.0 + 2.0 * i as f64 / 10.0 + if i % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let kwargs = PyDict::new(py);
        kwargs.set_item("folds", 5)?;
        let fit = m.getattr("cross_validate")?.call((x.clone(), y), Some(&kwargs))?;
        let coefficients: Vec<f64> = fit.get_item("coefficients")?.extract()?;
        assert!((coefficients[1] - 2.0).abs() < 0.05);
        let heldout: Vec<f64> = fit.get_item("heldout_llh")?.extract()?;
        assert_eq!(heldout.len(), 40);
        let mean: f64 = fit.get_item("mean_heldout_llh")?.extract()?;
        assert!((mean - heldout.iter().sum::<f64>() / 40.0).abs() < 1e-12);

        kwargs.set_item("model", "logistic")?;
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 0.3 } else { 0.6 }).collect();
        let fit = m.getattr("cross_validate")?.call((x, y), Some(&kwargs))?;
        assert!(fit.get_item("sigma2")?.is_none());
        Ok(())
    })
}

#[test]
fn synthetic_corpus_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    with_module(|py, m| {
        let kwargs = PyDict::new(py);
        kwargs.set_item("seed", 2)?;
        kwargs.set_item("words", 800)?;
        let paths = m.getattr("generate_synthetic")?.call((dir.path(),), Some(&kwargs))?;
        let fulldist: std::path::PathBuf = paths.get_item("fulldist")?.extract()?;
        let words = m.getattr("word_information")?.call1((fulldist, vec![0.5, 1.0]))?;
        assert!(words.cast::<PyList>()?.len() >= 800);

        std::fs::write(
            dir.path().join("config.json"),
            r#"{"datasets": [{"name": "syn", "corpus": "corpus.tsv", "format": "eye-tracking",
                "distributions": {"fulldist": "dists.rtd"}, "frequencies": "freq.tsv"}],
                "alphas": [0.5, 1], "experiments": ["exp1"], "permutations": 500, "output_dir": "out"}"#,
        )
        .unwrap();
        let rows = m
            .getattr("run_experiment")?
            .call1((dir.path().join("config.json"), "exp1"))?;
        let rows = rows.cast::<PyList>()?;
        assert_eq!(rows.len(), 4);
        let color: String = rows.get_item(0)?.get_item("significance")?.extract()?;
        assert!(["green", "red", "ns"].contains(&color.as_str()));

        let written: Vec<std::path::PathBuf> = m
            .getattr("run_pipeline")?
            .call1((dir.path().join("config.json"),))?
            .extract()?;
        assert!(written.iter().any(|p| p.ends_with("exp1.tsv")));
        Ok(())
    })
}
