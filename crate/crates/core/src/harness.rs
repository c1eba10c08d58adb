//! Monte Carlo parameter-recovery experiments and the gradient check suite.
//!
//! Replication `r` of every dataset uses seed `base_seed + r` for data
//! generation and for any random initialisation of the fits. Replications
//! may run on several workers; results are gathered in
//! (dataset, replication, model) order before anything is aggregated, so the
//! report does not depend on the worker count.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{
    analytic_gradients, finite_diff_gradients, fit, max_relative_error, FitConfig, FitResult,
    LossKind, ModelKind,
};
use crate::io::{self, fmt_f64};
use crate::irt::{ResponseMatrix, UnconstrainedParams};
use crate::recovery::{bootstrap_ci, sign_flips, ConfidenceInterval, RecoveryStats};
use crate::synth::{simulate, GenConfig, TrueParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// How the bootstrap intervals are formed; stored in every report.
pub const CI_RESAMPLING_UNIT: &str = "replication";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetShape {
    pub items: usize,
    pub respondents: usize,
}

/// Per-model settings as written in a config file. Unset fields take the
/// defaults of [`FitConfig::for_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_inits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_tau: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
}

impl ModelSpec {
    pub fn resolve(&self) -> FitConfig {
        let mut c = FitConfig::for_model(self.model);
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.n_epochs {
            c.n_epochs = v;
        }
        if let Some(v) = self.n_inits {
            c.n_inits = v;
        }
        if let Some(v) = self.tol {
            c.tol = v;
        }
        if let Some(v) = self.freeze_tau {
            c.freeze_tau = v;
        }
        if let Some(v) = self.loss {
            c.loss_kind = v;
        }
        c
    }
}

fn default_models() -> Vec<ModelSpec> {
    [ModelKind::Beta3, ModelKind::Beta4WithPriors]
        .into_iter()
        .map(|model| ModelSpec {
            model,
            learning_rate: None,
            n_epochs: Some(50_000),
            n_inits: Some(1_000),
            tol: None,
            freeze_tau: None,
            loss: None,
        })
        .collect()
}

fn default_datasets() -> Vec<DatasetShape> {
    vec![
        DatasetShape {
            items: 100,
            respondents: 20,
        },
        DatasetShape {
            items: 100,
            respondents: 100,
        },
        DatasetShape {
            items: 300,
            respondents: 50,
        },
    ]
}

/// Response-generation settings shared by every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSpec {
    pub n_draws: usize,
    pub sigma0_sq: f64,
    pub ability_dist: crate::synth::BetaShape,
    pub difficulty_dist: crate::synth::BetaShape,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            n_draws: g.n_draws,
            sigma0_sq: g.sigma0_sq,
            ability_dist: g.ability_dist,
            difficulty_dist: g.difficulty_dist,
        }
    }
}

impl GenerationSpec {
    pub fn for_dataset(&self, shape: DatasetShape, seed: u64) -> GenConfig {
        GenConfig {
            respondents: shape.respondents,
            items: shape.items,
            n_draws: self.n_draws,
            sigma0_sq: self.sigma0_sq,
            seed,
            ability_dist: self.ability_dist,
            difficulty_dist: self.difficulty_dist,
        }
    }
}

/// A full recovery experiment. Defaults give the full-size protocol:
/// three dataset shapes, 30 replications, 50000 epochs with 1000 frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetShape>,
    pub n_replications: usize,
    pub base_seed: u64,
    pub models: Vec<ModelSpec>,
    pub generation: GenerationSpec,
    pub confidence_level: f64,
    pub bootstrap_resamples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datasets: default_datasets(),
            n_replications: 30,
            base_seed: 0,
            models: default_models(),
            generation: GenerationSpec::default(),
            confidence_level: 0.95,
            bootstrap_resamples: 10_000,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |span| text[..span.start].matches('\n').count() + 1);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                field: "config".into(),
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&io::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidConfig("no datasets configured".into()));
        }
        if let Some(s) = self
            .datasets
            .iter()
            .find(|s| s.items == 0 || s.respondents == 0)
        {
            return Err(Error::InvalidConfig(format!(
                "dataset shapes must be positive, got {} items x {} respondents",
                s.items, s.respondents
            )));
        }
        if self.n_replications == 0 {
            return Err(Error::InvalidConfig(
                "n_replications must be positive".into(),
            ));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("no models configured".into()));
        }
        let mut kinds: Vec<ModelKind> = self.models.iter().map(|m| m.model).collect();
        kinds.sort();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("each model may appear once".into()));
        }
        for m in &self.models {
            m.resolve().validate()?;
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence_level must be in (0, 1), got {}",
                self.confidence_level
            )));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::InvalidConfig(
                "bootstrap_resamples must be positive".into(),
            ));
        }
        self.generation
            .for_dataset(self.datasets[0], self.base_seed)
            .validate()
    }

    pub fn replication_seed(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }

    pub fn fit_configs(&self) -> Vec<FitConfig> {
        self.models.iter().map(ModelSpec::resolve).collect()
    }
}

/// One fitted model on one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub dataset: usize,
    pub items: usize,
    pub respondents: usize,
    pub model: ModelKind,
    pub replication: usize,
    pub seed: u64,
    /// `None` when the fit failed.
    pub stats: Option<RecoveryStats>,
    pub epochs_run: usize,
    pub converged_at: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RhoTheta,
    RhoDelta,
    RhoA,
    RseTheta,
    RseDelta,
    RseA,
    FlipRate,
    PseudoR2,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::RhoTheta,
        Metric::RhoDelta,
        Metric::RhoA,
        Metric::RseTheta,
        Metric::RseDelta,
        Metric::RseA,
        Metric::FlipRate,
        Metric::PseudoR2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::RhoTheta => "rho_theta",
            Metric::RhoDelta => "rho_delta",
            Metric::RhoA => "rho_a",
            Metric::RseTheta => "rse_theta",
            Metric::RseDelta => "rse_delta",
            Metric::RseA => "rse_a",
            Metric::FlipRate => "flip_rate",
            Metric::PseudoR2 => "pseudo_r2",
        }
    }

    pub fn of(self, s: &RecoveryStats) -> Option<f64> {
        match self {
            Metric::RhoTheta => s.rho_theta,
            Metric::RhoDelta => s.rho_delta,
            Metric::RhoA => s.rho_a,
            Metric::RseTheta => s.rse_theta,
            Metric::RseDelta => s.rse_delta,
            Metric::RseA => s.rse_a,
            Metric::FlipRate => Some(s.flip_rate),
            Metric::PseudoR2 => s.pseudo_r2_fit,
        }
    }
}

/// Aggregate of one metric over the replications of one (dataset, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dataset: usize,
    pub model: ModelKind,
    pub metric: Metric,
    /// Replications contributing a value.
    pub n_values: usize,
    /// Failed fits plus undefined values.
    pub n_excluded: usize,
    pub mean: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub software_version: String,
    pub config: ExperimentConfig,
    pub fit_configs: Vec<FitConfig>,
    pub replication_seeds: Vec<u64>,
    pub ci_resampling_unit: String,
    pub failed_fits: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub replications: Vec<ReplicationRecord>,
    pub summaries: Vec<MetricSummary>,
}

impl RecoveryReport {
    pub fn summary(
        &self,
        dataset: usize,
        model: ModelKind,
        metric: Metric,
    ) -> Option<&MetricSummary> {
        self.summaries
            .iter()
            .find(|s| s.dataset == dataset && s.model == model && s.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            field: "report".into(),
            message: e.to_string(),
        })
    }
}

/// Estimates kept for scatter-plot output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSet {
    pub dataset: usize,
    pub model: ModelKind,
    pub replication: usize,
    pub truth: TrueParams,
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: RecoveryReport,
    pub scatter: Vec<ScatterSet>,
}

struct Outcome {
    record: ReplicationRecord,
    scatter: Option<ScatterSet>,
}

fn run_replication(
    cfg: &ExperimentConfig,
    fit_configs: &[FitConfig],
    dataset: usize,
    replication: usize,
) -> Result<Vec<Outcome>> {
    let shape = cfg.datasets[dataset];
    let seed = cfg.replication_seed(replication);
    let (truth, p) = simulate(&cfg.generation.for_dataset(shape, seed))?;
    let mut out = Vec::with_capacity(fit_configs.len());
    for fc in fit_configs {
        let fc = FitConfig { seed, ..fc.clone() };
        let base = ReplicationRecord {
            dataset,
            items: shape.items,
            respondents: shape.respondents,
            model: fc.model_kind,
            replication,
            seed,
            stats: None,
            epochs_run: 0,
            converged_at: None,
            error: None,
        };
        let outcome = match fit(&p, &fc) {
            Ok(fitted) => {
                let stats = RecoveryStats::compute(&truth, &fitted)?;
                Outcome {
                    record: ReplicationRecord {
                        stats: Some(stats),
                        epochs_run: fitted.loss_trace.len(),
                        converged_at: fitted.converged_at,
                        ..base
                    },
                    scatter: Some(scatter_of(dataset, replication, &truth, fitted)),
                }
            }
            Err(e @ Error::Diverged { .. }) => Outcome {
                record: ReplicationRecord {
                    error: Some(e.to_string()),
                    ..base
                },
                scatter: None,
            },
            Err(e) => return Err(e),
        };
        out.push(outcome);
    }
    Ok(out)
}

fn scatter_of(dataset: usize, replication: usize, truth: &TrueParams, f: FitResult) -> ScatterSet {
    ScatterSet {
        dataset,
        model: f.model_kind,
        replication,
        truth: truth.clone(),
        theta: f.theta,
        delta: f.delta,
        a: f.discrimination,
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    records: &[ReplicationRecord],
    fit_configs: &[FitConfig],
) -> Result<Vec<MetricSummary>> {
    let mut summaries = Vec::new();
    for dataset in 0..cfg.datasets.len() {
        for fc in fit_configs {
            for metric in Metric::ALL {
                let values: Vec<f64> = records
                    .iter()
                    .filter(|r| r.dataset == dataset && r.model == fc.model_kind)
                    .filter_map(|r| r.stats.as_ref().and_then(|s| metric.of(s)))
                    .filter(|v| v.is_finite())
                    .collect();
                let index = summaries.len() as u64;
                let ci = if values.len() >= 2 {
                    let seed = cfg.base_seed.wrapping_mul(0x9E37_79B9).wrapping_add(index);
                    Some(bootstrap_ci(
                        &values,
                        cfg.confidence_level,
                        cfg.bootstrap_resamples,
                        seed,
                    )?)
                } else {
                    None
                };
                let mean =
                    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
                summaries.push(MetricSummary {
                    dataset,
                    model: fc.model_kind,
                    metric,
                    n_values: values.len(),
                    n_excluded: cfg.n_replications - values.len(),
                    mean,
                    ci,
                });
            }
        }
    }
    Ok(summaries)
}

/// Runs every (dataset, replication) job on `workers` threads and aggregates
/// the results. `progress` is called with (finished, total) after each job.
pub fn run_recovery_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let fit_configs = cfg.fit_configs();
    let jobs: Vec<(usize, usize)> = (0..cfg.datasets.len())
        .flat_map(|d| (0..cfg.n_replications).map(move |r| (d, r)))
        .collect();
    let done = AtomicUsize::new(0);
    let total = jobs.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<Result<Vec<Outcome>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(d, r)| {
                let out = run_replication(cfg, &fit_configs, d, r);
                let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                if let Some(cb) = progress {
                    cb(finished, total);
                }
                out
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut scatter = Vec::new();
    for outcome in results
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
    {
        records.push(outcome.record);
        scatter.extend(outcome.scatter);
    }
    records.sort_by_key(|r| (r.dataset, r.model, r.replication));
    scatter.sort_by_key(|s| (s.dataset, s.model, s.replication));

    let summaries = summarize(cfg, &records, &fit_configs)?;
    let failed_fits = records.iter().filter(|r| r.stats.is_none()).count();
    let report = RecoveryReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: RunMetadata {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            fit_configs,
            replication_seeds: (0..cfg.n_replications)
                .map(|r| cfg.replication_seed(r))
                .collect(),
            ci_resampling_unit: CI_RESAMPLING_UNIT.to_string(),
            failed_fits,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
        replications: records,
        summaries,
    };
    Ok(ExperimentOutput { report, scatter })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Flat per-replication statistics, one row per (dataset, model, replication).
pub fn replications_csv(report: &RecoveryReport) -> String {
    let mut out = String::from(
        "dataset,items,respondents,model,replication,seed,status,rho_theta,rho_delta,rho_a,\
         rse_theta,rse_delta,rse_a,flipped,compared,flip_rate,pseudo_r2,epochs_run,converged_at\n",
    );
    for r in &report.replications {
        let (status, cols) = match &r.stats {
            Some(s) => (
                "ok",
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    opt(s.rho_theta),
                    opt(s.rho_delta),
                    opt(s.rho_a),
                    opt(s.rse_theta),
                    opt(s.rse_delta),
                    opt(s.rse_a),
                    s.flipped,
                    s.compared,
                    fmt_f64(s.flip_rate),
                    opt(s.pseudo_r2_fit)
                ),
            ),
            None => ("failed", ",,,,,,,,,".to_string()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.items,
            r.respondents,
            r.model,
            r.replication,
            r.seed,
            status,
            cols,
            r.epochs_run,
            r.converged_at.map(|e| e.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// True against estimated parameters for every successful fit. The
/// `flipped` column is 1 for discriminations whose sign was not recovered.
pub fn scatter_csv(scatter: &[ScatterSet]) -> String {
    let mut out = String::from("dataset,model,replication,kind,index,true,estimated,flipped\n");
    for s in scatter {
        let groups: [(&str, &[f64], &[f64]); 3] = [
            ("theta", &s.truth.theta, &s.theta),
            ("delta", &s.truth.delta, &s.delta),
            ("a", &s.truth.a, &s.a),
        ];
        for (kind, truth, est) in groups {
            for (index, (&t, &e)) in truth.iter().zip(est).enumerate() {
                let flipped = kind == "a" && t != 0.0 && e != 0.0 && t.signum() != e.signum();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    s.dataset,
                    s.model,
                    s.replication,
                    kind,
                    index,
                    fmt_f64(t),
                    fmt_f64(e),
                    u8::from(flipped)
                ));
            }
        }
    }
    out
}

/// Writes `report.json`, `replications.csv` and `scatter.csv` into `dir`.
pub fn write_experiment(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    io::write_all(
        &dir.join("report.json"),
        output.report.to_json()?.as_bytes(),
    )?;
    io::write_all(
        &dir.join("replications.csv"),
        replications_csv(&output.report).as_bytes(),
    )?;
    io::write_all(
        &dir.join("scatter.csv"),
        scatter_csv(&output.scatter).as_bytes(),
    )
}

/// Sanity check for `flip_rate`: recount flips of one (dataset, model,
/// replication) from its scatter rows.
pub fn flips_from_scatter(s: &ScatterSet) -> Result<(usize, usize)> {
    sign_flips(&s.truth.a, &s.a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Largest relative error seen for each loss kind.
    pub max_error: Vec<(LossKind, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_error.iter().all(|&(_, e)| e < self.tolerance)
    }
}

/// Relative-error tolerance between analytic and central-difference
/// gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Coordinates whose analytic and numeric magnitudes are both below this are
/// compared on an absolute scale.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Random instance for the gradient check: shape up to 10x10, responses in
/// (0.02, 0.98), logits in [-2, 2], `o` in [-1, 1.5], `b` in [-1.5, 1.5].
pub fn gradcheck_instance(seed: u64) -> (ResponseMatrix, UnconstrainedParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=10);
    let n = rng.random_range(1..=10);
    let mut v = |k: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..k).map(|_| rng.random_range(lo..hi)).collect()
    };
    let u = UnconstrainedParams {
        t: v(m, -2.0, 2.0),
        d: v(n, -2.0, 2.0),
        o: v(n, -1.0, 1.5),
        b: v(n, -1.5, 1.5),
    };
    let cells = v(m * n, 0.02, 0.98);
    let p = ResponseMatrix::new(ndarray::Array2::from_shape_vec((m, n), cells).expect("m*n"))
        .expect("cells are finite");
    (p, u)
}

/// Compares analytic and finite-difference gradients on `trials` seeded
/// random instances for both loss kinds.
pub fn gradcheck(trials: usize, h: f64, seed: u64) -> Result<GradcheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "step h must be positive, got {h}"
        )));
    }
    let mut max_error = Vec::new();
    for kind in [LossKind::FullCrossEntropy, LossKind::PaperEq6] {
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let (p, u) = gradcheck_instance(seed.wrapping_add(trial as u64));
            let analytic = analytic_gradients(&p, &u, kind)?;
            let numeric = finite_diff_gradients(&p, &u, h, kind);
            worst = worst.max(max_relative_error(&analytic, &numeric, GRADCHECK_FLOOR));
        }
        max_error.push((kind, worst));
    }
    Ok(GradcheckReport {
        trials,
        h,
        tolerance: GRADCHECK_TOLERANCE,
        max_error,
    })
}
