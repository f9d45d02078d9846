//! End-to-end runs: load datasets, fit every experiment's model pairs, test
//! the differences and render report tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ingest_corpus, read_frequency_file, unigram_logprobs, Corpus, CorpusFormat, SkipPolicy, WordKey,
    DEFAULT_FREQUENCY_FLOOR,
};
use crate::error::{Error, Result};
use crate::inference::{
    finalize_table, paired_differences, paired_permutation_test, reports_to_tsv, spearman, ComparisonReport,
    PendingComparison, DEFAULT_FDR, DEFAULT_PERMUTATIONS,
};
use crate::infotheory::{word_infos, Alpha, WordInfo};
use crate::lm::{
    ngram_distributions, read_fulldist, read_summary, tokenize_corpus, NgramConfig, SubwordPosition, Subwordizer,
};
use crate::predictors::{
    build_pair, experiment_pairs, required_alphas, Experiment, ExperimentKind, Response, SpecPair, Term,
};
use crate::regression::{cross_validate, FitResult, FitSummary, FoldPlan, ModelKind, DEFAULT_FOLDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct NgramSource {
    #[serde(flatten)]
    pub config: NgramConfig,
    #[serde(default = "default_subwords")]
    pub subwords: Subwordizer,
}

fn default_subwords() -> Subwordizer {
    Subwordizer::Whitespace
}

/// Where next-subword distributions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionSource {
    Fulldist(PathBuf),
    Summary(PathBuf),
    Ngram(NgramSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub corpus: PathBuf,
    pub format: CorpusFormat,
    /// Defaults to `include_as_zero` for eye tracking and `not_applicable` for
    /// self-paced reading.
    #[serde(default)]
    pub skip_policy: Option<SkipPolicy>,
    pub distributions: DistributionSource,
    /// `surface<TAB>count` file; unigrams are estimated from the corpus without it.
    #[serde(default)]
    pub frequencies: Option<PathBuf>,
    #[serde(default = "default_floor")]
    pub frequency_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FREQUENCY_FLOOR
}

impl DatasetConfig {
    pub fn policy(&self) -> SkipPolicy {
        self.skip_policy.unwrap_or(match self.format {
            CorpusFormat::EyeTracking => SkipPolicy::IncludeAsZero,
            CorpusFormat::SelfPaced => SkipPolicy::NotApplicable,
        })
    }
}

/// Fitting and testing parameters shared by every comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub fold_seed: u64,
    /// Keep each text within one fold.
    #[serde(default)]
    pub grouped_folds: bool,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default)]
    pub permutation_seed: u64,
    /// Benjamini–Hochberg level.
    #[serde(default = "default_fdr")]
    pub fdr: f64,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}

fn default_fdr() -> f64 {
    DEFAULT_FDR
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            folds: DEFAULT_FOLDS,
            fold_seed: 0,
            grouped_folds: false,
            permutations: DEFAULT_PERMUTATIONS,
            permutation_seed: 0,
            fdr: DEFAULT_FDR,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.permutations == 0 {
            return Err(Error::Config("permutation count must be positive".into()));
        }
        if !(self.fdr > 0.0 && self.fdr < 1.0) {
            return Err(Error::Config(format!("fdr must lie in (0, 1), got {}", self.fdr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub datasets: Vec<DatasetConfig>,
    /// Rényi orders to compute; defaults to the standard grid.
    #[serde(default = "Alpha::default_grid")]
    pub alphas: Vec<Alpha>,
    #[serde(default)]
    pub experiments: Vec<Experiment>,
    /// Also tabulate Δllh against α over the whole grid.
    #[serde(default)]
    pub alpha_sweep: bool,
    #[serde(flatten)]
    pub settings: AnalysisSettings,
    pub output_dir: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut config.datasets {
            resolve(base, &mut d.corpus);
            if let Some(f) = &mut d.frequencies {
                resolve(base, f);
            }
            match &mut d.distributions {
                DistributionSource::Fulldist(p) | DistributionSource::Summary(p) => resolve(base, p),
                DistributionSource::Ngram(_) => {}
            }
        }
        resolve(base, &mut config.output_dir);
        Ok(config)
    }

    /// Checks everything that can be checked before touching the data.
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        if self.experiments.is_empty() && !self.alpha_sweep {
            return Err(Error::Config(
                "nothing to run: no experiments and no alpha sweep".into(),
            ));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("alpha grid is empty".into()));
        }
        let grid: BTreeSet<Alpha> = self.alphas.iter().copied().collect();
        for exp in &self.experiments {
            let pairs = experiment_pairs(exp);
            let needed = required_alphas(pairs.iter().flat_map(|p| p.target.iter().chain(&p.baseline)));
            if let Some(a) = needed.difference(&grid).next() {
                return Err(Error::Config(format!(
                    "experiment {exp} needs alpha {a}, which is not in the grid"
                )));
            }
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if d.name.is_empty() || d.name.contains(['\t', '\n']) {
                return Err(Error::Config(format!("invalid dataset name {:?}", d.name)));
            }
            if !names.insert(d.name.as_str()) {
                return Err(Error::Config(format!("duplicate dataset name {:?}", d.name)));
            }
            let mut paths = vec![&d.corpus];
            paths.extend(&d.frequencies);
            match &d.distributions {
                DistributionSource::Fulldist(p) | DistributionSource::Summary(p) => paths.push(p),
                DistributionSource::Ngram(n) => n.config.validate()?,
            }
            if let Some(p) = paths.into_iter().find(|p| !p.is_file()) {
                return Err(Error::Config(format!(
                    "dataset {}: no such file {}",
                    d.name,
                    p.display()
                )));
            }
            match (d.format, d.policy()) {
                (CorpusFormat::SelfPaced, SkipPolicy::NotApplicable) => {}
                (CorpusFormat::EyeTracking, SkipPolicy::IncludeAsZero | SkipPolicy::Exclude) => {}
                (f, p) => {
                    return Err(Error::Config(format!(
                        "dataset {}: skip policy {p:?} invalid for {f:?}",
                        d.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// A corpus with its word-level information quantities.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub corpus: Corpus,
    pub infos: BTreeMap<WordKey, WordInfo>,
}

impl Dataset {
    /// Attaches unigrams (from `frequencies` or the corpus itself) and word
    /// information computed from `positions`.
    pub fn from_parts(
        name: impl Into<String>,
        mut corpus: Corpus,
        positions: &[SubwordPosition],
        frequencies: Option<&HashMap<String, u64>>,
        frequency_floor: f64,
        alphas: &[Alpha],
    ) -> Result<Self> {
        let unigrams = unigram_logprobs(corpus.words().map(|w| w.surface.as_str()), frequencies, frequency_floor)?;
        corpus.assign_unigrams(&unigrams)?;
        let infos = word_infos(positions, alphas)?;
        let covered = corpus.words().filter(|w| infos.contains_key(&w.key())).count();
        if covered == 0 {
            return Err(Error::Validation(
                "language-model positions cover no corpus word".into(),
            ));
        }
        if covered < corpus.word_count() {
            log::warn!(
                "{} corpus words have no language-model position",
                corpus.word_count() - covered
            );
        }
        Ok(Dataset {
            name: name.into(),
            corpus,
            infos,
        })
    }

    pub fn load(config: &DatasetConfig, alphas: &[Alpha]) -> Result<Self> {
        let corpus = ingest_corpus(&config.corpus, config.format, config.policy())?;
        let positions = match &config.distributions {
            DistributionSource::Fulldist(p) => read_fulldist(p)?.0,
            DistributionSource::Summary(p) => read_summary(p)?.0,
            DistributionSource::Ngram(source) => {
                let (vocab, texts) = tokenize_corpus(&corpus, source.subwords);
                ngram_distributions(&texts, &vocab, &source.config)?
            }
        };
        let frequencies = match &config.frequencies {
            Some(p) => Some(read_frequency_file(p)?),
            None => None,
        };
        Dataset::from_parts(
            &config.name,
            corpus,
            &positions,
            frequencies.as_ref(),
            config.frequency_floor,
            alphas,
        )
    }

    /// Spearman correlation of word surprisal with each entropy, over words
    /// with finite surprisal. `None` when a column is constant.
    pub fn surprisal_entropy_correlations(&self, alphas: &[Alpha]) -> Result<Vec<(Alpha, usize, Option<f64>)>> {
        let words: Vec<&WordInfo> = self
            .corpus
            .words()
            .filter_map(|w| self.infos.get(&w.key()))
            .filter(|i| i.surprisal_bits.is_finite())
            .collect();
        let surprisal: Vec<f64> = words.iter().map(|i| i.surprisal_bits).collect();
        alphas
            .iter()
            .map(|&a| {
                let entropy: Vec<f64> = words
                    .iter()
                    .map(|i| {
                        i.entropy_bits
                            .get(&a)
                            .copied()
                            .ok_or_else(|| Error::Config(format!("entropy not computed for alpha {a}")))
                    })
                    .collect::<Result<_>>()?;
                match spearman(&surprisal, &entropy) {
                    Ok(rho) => Ok((a, words.len(), Some(rho))),
                    Err(Error::Domain(_)) => Ok((a, words.len(), None)),
                    Err(e) => Err(e),
                }
            })
            .collect()
    }
}

/// A scored target/baseline pair.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub dataset: String,
    pub pair: SpecPair,
    pub pending: PendingComparison,
    pub target: Arc<FitResult>,
    pub baseline: Arc<FitResult>,
}

type FitKey = (usize, Response, Vec<Term>, Vec<WordKey>);

/// Fits and compares model pairs, reusing fits of identical matrices.
pub struct Analysis<'a> {
    pub datasets: &'a [Dataset],
    pub settings: AnalysisSettings,
    cache: Mutex<HashMap<FitKey, Arc<FitResult>>>,
}

fn stable_hash(parts: &[&str]) -> u64 {
    // FNV-1a; stable across runs and platforms.
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for b in part.bytes().chain([0u8]) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn term_list(terms: &[Term]) -> String {
    terms.iter().map(Term::to_string).collect::<Vec<_>>().join("+")
}

impl<'a> Analysis<'a> {
    pub fn new(datasets: &'a [Dataset], settings: AnalysisSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Analysis {
            datasets,
            settings,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn fold_plan(&self, rows: &[WordKey]) -> Result<FoldPlan> {
        if self.settings.grouped_folds {
            let groups: Vec<u32> = rows.iter().map(|k| k.text_id).collect();
            FoldPlan::grouped(self.settings.fold_seed, &groups, self.settings.folds)
        } else {
            FoldPlan::random(self.settings.fold_seed, rows.len(), self.settings.folds)
        }
    }

    fn fit(&self, d: usize, matrix: &crate::predictors::FeatureMatrix, plan: &FoldPlan) -> Result<Arc<FitResult>> {
        let key: FitKey = (d, matrix.response_kind, matrix.columns.clone(), matrix.rows.clone());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let fit = Arc::new(cross_validate(
            matrix,
            ModelKind::for_response(matrix.response_kind),
            plan,
        )?);
        self.cache.lock().unwrap().insert(key, fit.clone());
        Ok(fit)
    }

    /// Fits both sides of `pair` on dataset `d` and runs the permutation test.
    pub fn compare(&self, d: usize, experiment: &Experiment, pair: &SpecPair) -> Result<Comparison> {
        let dataset = &self.datasets[d];
        let stage = format!("{experiment} {} on {}", pair.label(), dataset.name);
        let run = || -> Result<Comparison> {
            let (tm, bm) = build_pair(
                &dataset.corpus,
                &dataset.infos,
                &pair.target,
                &pair.baseline,
                pair.response,
            )?;
            if tm.n_rows() < self.settings.folds {
                return Err(Error::Validation(format!(
                    "{} usable rows ({} dropped), fewer than {} folds",
                    tm.n_rows(),
                    tm.dropped,
                    self.settings.folds
                )));
            }
            let plan = self.fold_plan(&tm.rows)?;
            let target = self.fit(d, &tm, &plan)?;
            let baseline = self.fit(d, &bm, &plan)?;
            let diffs = paired_differences(
                &target.per_item_heldout_llh,
                &target.rows,
                &baseline.per_item_heldout_llh,
                &baseline.rows,
            )?;
            let seed =
                self.settings.permutation_seed ^ stable_hash(&[&dataset.name, &experiment.to_string(), &pair.label()]);
            let p_value = paired_permutation_test(&diffs, self.settings.permutations, seed)?;
            Ok(Comparison {
                dataset: dataset.name.clone(),
                pair: pair.clone(),
                pending: PendingComparison {
                    dataset: dataset.name.clone(),
                    label: pair.label(),
                    lag: pair.lag,
                    target: term_list(&pair.target),
                    baseline: term_list(&pair.baseline),
                    diffs,
                    p_value,
                },
                target,
                baseline,
            })
        };
        run().map_err(|e| e.at_stage(stage))
    }

    /// Every (dataset, pair) of `experiment`, in dataset-then-pair order.
    pub fn run_experiment(&self, experiment: &Experiment) -> Result<ExperimentResult> {
        let pairs = experiment_pairs(experiment);
        let jobs: Vec<(usize, &SpecPair)> = (0..self.datasets.len())
            .flat_map(|d| pairs.iter().map(move |p| (d, p)))
            .collect();
        let comparisons = jobs
            .par_iter()
            .map(|&(d, p)| self.compare(d, experiment, p))
            .collect::<Result<Vec<_>>>()?;
        let reports = finalize_table(
            comparisons.iter().map(|c| c.pending.clone()).collect(),
            self.settings.fdr,
        )?;
        Ok(ExperimentResult {
            experiment: *experiment,
            comparisons,
            reports,
        })
    }

    /// Δllh of adding surprisal, entropy or both over the spillover-only
    /// baseline, for every α of the grid; one family for the whole table.
    pub fn alpha_sweep(&self, alphas: &[Alpha]) -> Result<Vec<SweepRow>> {
        let experiments: Vec<Experiment> = alphas
            .iter()
            .map(|&a| Experiment::new(ExperimentKind::Sweep, a))
            .collect();
        let jobs: Vec<(usize, Experiment, SpecPair)> = experiments
            .iter()
            .flat_map(|e| {
                (0..self.datasets.len()).flat_map(move |d| experiment_pairs(e).into_iter().map(move |p| (d, *e, p)))
            })
            .collect();
        let comparisons = jobs
            .par_iter()
            .map(|(d, e, p)| self.compare(*d, e, p))
            .collect::<Result<Vec<_>>>()?;
        let reports = finalize_table(
            comparisons.iter().map(|c| c.pending.clone()).collect(),
            self.settings.fdr,
        )?;
        Ok(jobs
            .into_iter()
            .zip(reports)
            .map(|((_, e, _), report)| SweepRow { alpha: e.alpha, report })
            .collect())
    }
}

/// One experiment's table.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub comparisons: Vec<Comparison>,
    pub reports: Vec<ComparisonReport>,
}

impl ExperimentResult {
    pub fn report(&self, dataset: &str, label: &str) -> Option<&ComparisonReport> {
        self.reports.iter().find(|r| r.dataset == dataset && r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: Alpha,
    pub report: ComparisonReport,
}

#[derive(Serialize)]
struct FitPairJson {
    dataset: String,
    label: String,
    target: FitSummary,
    baseline: FitSummary,
}

#[derive(Serialize)]
struct ExperimentJson<'a> {
    experiment: String,
    reports: &'a [ComparisonReport],
    fits: Vec<FitPairJson>,
}

fn file_stem(experiment: &Experiment) -> String {
    experiment.to_string().replace(':', "_")
}

fn fmt_real(v: f64) -> String {
    format!("{v:.6}")
}

/// Report files keyed by file name.
pub type Reports = BTreeMap<String, String>;

const EFFECTS_HEADER: &str = "experiment\tdataset\tlabel\tmodel\tterm\testimate\tfold_mean\tfold_sd";

fn effects_rows(out: &mut String, result: &ExperimentResult) {
    let mut seen = BTreeSet::new();
    for c in &result.comparisons {
        for (role, fit) in [("target", &c.target), ("baseline", &c.baseline)] {
            let model_label = format!("{}/{role}", c.pair.label());
            if !seen.insert((c.dataset.clone(), model_label.clone())) {
                continue;
            }
            for ((term, est), (mean, sd)) in fit
                .columns
                .iter()
                .zip(&fit.coefficients)
                .zip(fit.fold_coefficient_stats())
            {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{term}\t{}\t{}\t{}",
                    result.experiment,
                    c.dataset,
                    c.pair.label(),
                    role,
                    fmt_real(*est),
                    fmt_real(mean),
                    fmt_real(sd)
                );
            }
        }
    }
}

/// Renders experiment tables, the effect-size table, the correlation table
/// and (if given) the α-sweep table.
pub fn render_reports(
    datasets: &[Dataset],
    alphas: &[Alpha],
    results: &[ExperimentResult],
    sweep: Option<&[SweepRow]>,
) -> Result<Reports> {
    let mut files = Reports::new();
    let mut effects = format!("{EFFECTS_HEADER}\n");
    for result in results {
        let stem = file_stem(&result.experiment);
        files.insert(format!("{stem}.tsv"), reports_to_tsv(&result.reports));
        let json = ExperimentJson {
            experiment: result.experiment.to_string(),
            reports: &result.reports,
            fits: result
                .comparisons
                .iter()
                .map(|c| FitPairJson {
                    dataset: c.dataset.clone(),
                    label: c.pair.label(),
                    target: c.target.summary(),
                    baseline: c.baseline.summary(),
                })
                .collect(),
        };
        files.insert(format!("{stem}.json"), serde_json::to_string_pretty(&json)? + "\n");
        effects_rows(&mut effects, result);
    }
    if !results.is_empty() {
        files.insert("effects.tsv".into(), effects);
    }

    let mut corr = String::from("dataset\talpha\tn_words\tspearman_rho\n");
    for d in datasets {
        for (a, n, rho) in d.surprisal_entropy_correlations(alphas)? {
            let rho = rho.map_or("nan".to_string(), fmt_real);
            let _ = writeln!(corr, "{}\t{a}\t{n}\t{rho}", d.name);
        }
    }
    files.insert("spearman.tsv".into(), corr);

    if let Some(rows) = sweep {
        let mut out = String::from(
            "dataset\talpha\tcell\tdelta_llh_x100\tp_value\tp_adjusted\tstars\tcolor\tn_items\ttarget\tbaseline\n",
        );
        for r in rows {
            let rep = &r.report;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}",
                rep.dataset,
                r.alpha,
                rep.label,
                rep.delta_llh * 100.0,
                rep.p_value,
                rep.p_adjusted,
                if rep.stars.is_empty() { "-" } else { &rep.stars },
                rep.significance,
                rep.n_items,
                rep.target,
                rep.baseline
            );
        }
        files.insert("alpha_sweep.tsv".into(), out);
    }
    Ok(files)
}

/// Writes every report; on failure removes the files this call created.
pub fn write_reports(dir: &Path, reports: &Reports) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, content) in reports {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, content) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(Error::io(path, e).at_stage("write reports"));
        }
        written.push(path);
    }
    Ok(written)
}

/// Loads every dataset and runs the configured analyses, in memory.
pub fn compute(config: &PipelineConfig) -> Result<Reports> {
    config.validate()?;
    let datasets = config
        .datasets
        .iter()
        .map(|d| Dataset::load(d, &config.alphas).map_err(|e| e.at_stage(format!("load dataset {}", d.name))))
        .collect::<Result<Vec<_>>>()?;
    analyze(&datasets, config)
}

/// Runs the configured analyses on already-loaded datasets.
pub fn analyze(datasets: &[Dataset], config: &PipelineConfig) -> Result<Reports> {
    let analysis = Analysis::new(datasets, config.settings.clone())?;
    let results = config
        .experiments
        .iter()
        .map(|e| analysis.run_experiment(e))
        .collect::<Result<Vec<_>>>()?;
    let sweep = if config.alpha_sweep {
        Some(analysis.alpha_sweep(&config.alphas)?)
    } else {
        None
    };
    let mut reports = render_reports(datasets, &config.alphas, &results, sweep.as_deref())?;
    let manifest = serde_json::json!({
        "config": config,
        "datasets": datasets.iter().map(|d| serde_json::json!({
            "name": d.name,
            "words": d.corpus.word_count(),
            "words_with_lm": d.corpus.words().filter(|w| d.infos.contains_key(&w.key())).count(),
        })).collect::<Vec<_>>(),
        "files": reports.keys().collect::<Vec<_>>(),
    });
    reports.insert("run.json".into(), serde_json::to_string_pretty(&manifest)? + "\n");
    Ok(reports)
}

/// Validates, computes and writes all reports into the configured directory.
pub fn run(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let reports = compute(config)?;
    write_reports(&config.output_dir, &reports)
}
