//! Seeded experiment harness behind the `labcvar` binary: single runs across
//! loss specs and seeds, imbalance-ratio sweeps, hyperparameter grids, and
//! their CSV / JSON artifacts.
//!
//! Every (ratio, loss, seed) job is independent and runs on the rayon pool;
//! results are collected in job order, so output bytes do not depend on
//! scheduling.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{downsample_exponential, load_csv, load_csv_with_labels, synth_gaussian_longtail, LabeledDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::{LabCvarParams, LossSpec, Objective, TauSpec};
use crate::metrics::{self, EvalReport};
use crate::model::{train, MlpModel, TrainConfig, TrainTrace};
use crate::numerics::{mean, std_dev, RngState};

/// Seed stream used for model initialization.
const INIT_STREAM: u64 = 20;
/// Seed stream used when downsampling a CSV training set.
const DOWNSAMPLE_STREAM: u64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SynthConfig),
    Csv {
        train: PathBuf,
        validation: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    /// Hidden layer widths; empty for a linear model.
    pub hidden: Vec<usize>,
}

/// One named block of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMethod {
    pub method: String,
    pub points: Vec<LossSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    /// Target `n_L / n_1`. Synthetic data is generated at this ratio; a CSV
    /// training set is downsampled to it when present.
    pub ratio: Option<f64>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub losses: Vec<LossSpec>,
    pub seeds: Vec<u64>,
    /// `k` of the worst-k error column.
    pub wer_k: usize,
    pub out_dir: PathBuf,
    pub grid: Vec<GridMethod>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "synthetic-longtail".into(),
            dataset: DatasetSpec::Synthetic(SynthConfig::default()),
            ratio: Some(100.0),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            losses: vec![
                LossSpec::Erm,
                LossSpec::AlphaCvar { alpha: 0.5 },
                LossSpec::LabCvar(LabCvarParams {
                    k: 0.5,
                    tau1: TauSpec::Relative { relative: 0.5 },
                    eta: 0.5,
                }),
                LossSpec::LabCvarLogit(LabCvarParams {
                    k: 0.5,
                    tau1: TauSpec::Relative { relative: 0.5 },
                    eta: 0.5,
                }),
            ],
            seeds: (0..5).collect(),
            wer_k: 3,
            out_dir: PathBuf::from("results"),
            grid: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::arg("at least one seed is required"));
        }
        if self.wer_k == 0 {
            return Err(Error::arg("wer_k must be at least 1"));
        }
        if let Some(r) = self.ratio {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(Error::arg(format!("ratio must be at least 1, got {r}")));
            }
        } else if matches!(self.dataset, DatasetSpec::Synthetic(_)) {
            return Err(Error::arg("the synthetic dataset needs a ratio"));
        }
        self.train.validate()?;
        for spec in &self.losses {
            spec.validate()?;
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding,
    /// ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Train and validation splits for one seed.
    pub fn datasets(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match &self.dataset {
            DatasetSpec::Synthetic(s) => synth_gaussian_longtail(s, self.ratio.unwrap_or(1.0), seed),
            DatasetSpec::Csv {
                train,
                validation,
                has_header,
            } => {
                let (tr, names) = load_csv(train, *has_header)?;
                let val = load_csv_with_labels(validation, *has_header, &names)?;
                let tr = match self.ratio {
                    Some(r) => {
                        let mut rng = RngState::new(seed).substream(DOWNSAMPLE_STREAM);
                        let down = downsample_exponential(&tr, r, &mut rng)?;
                        // downsampling can reorder counts relative to the ingest order
                        let map = down.count_order();
                        return Ok((down.relabel(&map)?, val.relabel(&map)?));
                    }
                    None => tr,
                };
                Ok((tr, val))
            }
        }
    }
}

/// Result of one (loss, seed) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub ratio: Option<f64>,
    pub loss: LossSpec,
    pub label: String,
    pub seed: u64,
    pub train_counts: Vec<usize>,
    pub report: EvalReport,
    pub trace: TrainTrace,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(v: &[f64]) -> Option<Stat> {
        (!v.is_empty()).then(|| Stat {
            mean: mean(v),
            std: std_dev(v),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub ratio: Option<f64>,
    pub loss: LossSpec,
    pub label: String,
    pub seeds: usize,
    pub ber: Stat,
    pub wer: Stat,
    pub wer_k: Stat,
    pub many: Option<Stat>,
    pub medium: Option<Stat>,
    pub few: Option<Stat>,
    pub repaired_batches: Stat,
}

impl LossSummary {
    fn from_runs(runs: &[&RunResult]) -> LossSummary {
        let col = |f: &dyn Fn(&RunResult) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(r)).collect() };
        let group = |pick: fn(&metrics::GroupErrors) -> Option<metrics::GroupStat>| {
            Stat::of(&col(&|r| r.report.groups.as_ref().and_then(pick).map(|g| g.mean)))
        };
        let first = runs[0];
        LossSummary {
            ratio: first.ratio,
            loss: first.loss,
            label: first.label.clone(),
            seeds: runs.len(),
            ber: Stat::of(&col(&|r| Some(r.report.ber))).expect("non-empty"),
            wer: Stat::of(&col(&|r| Some(r.report.wer))).expect("non-empty"),
            wer_k: Stat::of(&col(&|r| Some(r.report.wer_k.1))).expect("non-empty"),
            many: group(|g| g.many),
            medium: group(|g| g.medium),
            few: group(|g| g.few),
            repaired_batches: Stat::of(&col(&|r| Some(r.trace.repaired_batches as f64))).expect("non-empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub config_hash: String,
    pub runs: Vec<RunResult>,
    pub summaries: Vec<LossSummary>,
}

impl ExperimentResult {
    pub fn summary(&self, ratio: Option<f64>, loss: &LossSpec) -> Option<&LossSummary> {
        self.summaries.iter().find(|s| s.ratio == ratio && s.loss == *loss)
    }
}

/// A grid point whose bounds were infeasible on some seed's training counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub method: String,
    pub point: usize,
    pub loss: LossSpec,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBest {
    pub method: String,
    pub point: usize,
    pub loss: LossSpec,
    pub ber: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub experiment: ExperimentResult,
    /// `(method, point index)` of every evaluated summary, aligned with
    /// `experiment.summaries`.
    pub points: Vec<(String, usize)>,
    pub skipped: Vec<SkippedPoint>,
    pub best: Vec<MethodBest>,
}

struct Job {
    ratio_idx: usize,
    loss_idx: usize,
    seed_idx: usize,
}

/// Trains every (ratio, loss, seed) combination. Bounds are checked against
/// every seed's training counts before any training starts.
fn execute(cfg: &ExperimentConfig, ratios: &[Option<f64>], losses: &[LossSpec]) -> Result<Vec<RunResult>> {
    let mut data = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let c = ExperimentConfig { ratio, ..cfg.clone() };
        let per_seed: Vec<_> = cfg.seeds.iter().map(|&s| c.datasets(s)).collect::<Result<_>>()?;
        for (train_set, _) in &per_seed {
            for spec in losses {
                Objective::new(*spec, train_set.class_counts())?;
            }
        }
        data.push(per_seed);
    }
    let mut jobs = Vec::new();
    for ratio_idx in 0..ratios.len() {
        for loss_idx in 0..losses.len() {
            for seed_idx in 0..cfg.seeds.len() {
                jobs.push(Job {
                    ratio_idx,
                    loss_idx,
                    seed_idx,
                });
            }
        }
    }
    jobs.par_iter()
        .map(|job| {
            let (train_set, val) = &data[job.ratio_idx][job.seed_idx];
            let seed = cfg.seeds[job.seed_idx];
            let spec = losses[job.loss_idx];
            run_single(cfg, ratios[job.ratio_idx], spec, seed, train_set, val)
        })
        .collect()
}

/// One training run on prepared data.
pub fn run_single(
    cfg: &ExperimentConfig,
    ratio: Option<f64>,
    spec: LossSpec,
    seed: u64,
    train_set: &LabeledDataset,
    val: &LabeledDataset,
) -> Result<RunResult> {
    let mut rng = RngState::new(seed).substream(INIT_STREAM);
    let mut model = MlpModel::new(train_set.dim(), &cfg.model.hidden, train_set.num_classes(), &mut rng);
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let trace = train(&mut model, train_set, Some(val), &spec, &tc)?;
    let report = metrics::evaluate(&model, val, Some(train_set.class_counts()), cfg.wer_k)?;
    Ok(RunResult {
        ratio,
        loss: spec,
        label: spec.label(),
        seed,
        train_counts: train_set.class_counts().to_vec(),
        report,
        trace,
    })
}

fn summarize(runs: &[RunResult], ratios: &[Option<f64>], losses: &[LossSpec]) -> Vec<LossSummary> {
    let mut out = Vec::new();
    for &ratio in ratios {
        for spec in losses {
            let group: Vec<&RunResult> = runs.iter().filter(|r| r.ratio == ratio && r.loss == *spec).collect();
            if !group.is_empty() {
                out.push(LossSummary::from_runs(&group));
            }
        }
    }
    out
}

/// One training run per (loss, seed).
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if cfg.losses.is_empty() {
        return Err(Error::arg("no losses configured"));
    }
    let ratios = [cfg.ratio];
    let runs = execute(cfg, &ratios, &cfg.losses)?;
    Ok(ExperimentResult {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        summaries: summarize(&runs, &ratios, &cfg.losses),
        runs,
    })
}

/// [`run`] at each imbalance ratio.
pub fn sweep(cfg: &ExperimentConfig, ratios: &[f64]) -> Result<ExperimentResult> {
    if ratios.is_empty() {
        return Err(Error::arg("no ratios given"));
    }
    let mut cfg = cfg.clone();
    cfg.ratio = Some(ratios[0]);
    for &r in ratios {
        ExperimentConfig { ratio: Some(r), ..cfg.clone() }.validate()?;
    }
    if cfg.losses.is_empty() {
        return Err(Error::arg("no losses configured"));
    }
    let rs: Vec<Option<f64>> = ratios.iter().map(|&r| Some(r)).collect();
    let runs = execute(&cfg, &rs, &cfg.losses)?;
    Ok(ExperimentResult {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        summaries: summarize(&runs, &rs, &cfg.losses),
        runs,
    })
}

/// Exhaustive grid: every point is trained on every seed and ranked by mean
/// validation BER within its method (ties to the earlier point). Points whose
/// bounds are infeasible or whose hyperparameters are inadmissible are
/// recorded as skipped.
pub fn grid(cfg: &ExperimentConfig, methods: &[GridMethod]) -> Result<GridResult> {
    cfg.validate()?;
    if methods.iter().all(|m| m.points.is_empty()) {
        return Err(Error::arg("empty grid"));
    }
    let mut seed_counts = Vec::with_capacity(cfg.seeds.len());
    for &s in &cfg.seeds {
        seed_counts.push(cfg.datasets(s)?.0.class_counts().to_vec());
    }
    let mut live: Vec<LossSpec> = Vec::new();
    let mut tags: Vec<(String, usize)> = Vec::new();
    let mut skipped = Vec::new();
    for m in methods {
        for (i, spec) in m.points.iter().enumerate() {
            let check = seed_counts.iter().try_for_each(|c| Objective::new(*spec, c).map(|_| ()));
            match check {
                Ok(()) => {
                    live.push(*spec);
                    tags.push((m.method.clone(), i));
                }
                Err(e @ (Error::Infeasible { .. } | Error::InvalidArgument(_))) => skipped.push(SkippedPoint {
                    method: m.method.clone(),
                    point: i,
                    loss: *spec,
                    label: spec.label(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    let ratios = [cfg.ratio];
    let runs = if live.is_empty() {
        Vec::new()
    } else {
        execute(cfg, &ratios, &live)?
    };
    // the same spec may appear under two methods; summarize per tag
    let mut summaries = Vec::with_capacity(live.len());
    for spec in &live {
        let group: Vec<&RunResult> = runs.iter().filter(|r| r.loss == *spec).collect();
        summaries.push(LossSummary::from_runs(&group));
    }
    let mut best: Vec<MethodBest> = Vec::new();
    for m in methods {
        let mut top: Option<MethodBest> = None;
        for ((method, point), s) in tags.iter().zip(&summaries) {
            if *method != m.method {
                continue;
            }
            if top.as_ref().is_none_or(|t| s.ber.mean < t.ber.mean) {
                top = Some(MethodBest {
                    method: method.clone(),
                    point: *point,
                    loss: s.loss,
                    ber: s.ber,
                });
            }
        }
        best.extend(top);
    }
    let mut unique_runs = Vec::new();
    for spec in &live {
        if !unique_runs.iter().any(|r: &RunResult| r.loss == *spec) {
            unique_runs.extend(runs.iter().filter(|r| r.loss == *spec).cloned());
        }
    }
    Ok(GridResult {
        experiment: ExperimentResult {
            name: cfg.name.clone(),
            config_hash: cfg.hash(),
            runs: unique_runs,
            summaries,
        },
        points: tags,
        skipped,
        best,
    })
}

/// Search spaces shipped with the tool, one block per method. The LDAM-DRW
/// switch epochs are `int(total_epochs · r)` for `r ∈ {0.6, 0.8}`.
pub fn preset_grid(total_epochs: usize) -> Vec<GridMethod> {
    let wide = [0.2, 0.5, 0.8, 1.0, 2.0, 5.0, 10.0, 15.0];
    let ks = [0.2, 0.5, 0.8, 1.0, 2.0, 5.0];
    let taus = [1.0, 2.0, 5.0];
    let etas = [1.0 / 2.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 11.0, 1.0 / 16.0];
    let lab = |logit: bool| {
        let mut pts = Vec::new();
        for &k in &ks {
            for &t in &taus {
                for &eta in &etas {
                    let p = LabCvarParams {
                        k,
                        tau1: TauSpec::Absolute(t),
                        eta,
                    };
                    pts.push(if logit { LossSpec::LabCvarLogit(p) } else { LossSpec::LabCvar(p) });
                }
            }
        }
        pts
    };
    let drw: Vec<usize> = [0.6, 0.8].iter().map(|r| (total_epochs as f64 * r) as usize).collect();
    vec![
        GridMethod {
            method: "cb_rw".into(),
            points: [0.5, 0.7, 0.8, 0.9, 0.99, 0.999, 0.9999]
                .iter()
                .map(|&gamma| LossSpec::CbRw { gamma })
                .collect(),
        },
        GridMethod {
            method: "focal".into(),
            points: wide.iter().map(|&gamma| LossSpec::Focal { gamma }).collect(),
        },
        GridMethod {
            method: "ldam".into(),
            points: wide.iter().map(|&c| LossSpec::Ldam { c }).collect(),
        },
        GridMethod {
            method: "ldam_drw".into(),
            points: wide
                .iter()
                .flat_map(|&c| drw.iter().map(move |&drw_epoch| LossSpec::LdamDrw { c, drw_epoch }))
                .collect(),
        },
        GridMethod {
            method: "alpha_cvar".into(),
            points: wide.iter().map(|&alpha| LossSpec::AlphaCvar { alpha }).collect(),
        },
        GridMethod {
            method: "lab_cvar".into(),
            points: lab(false),
        },
        GridMethod {
            method: "lab_cvar_logit".into(),
            points: lab(true),
        },
    ]
}

/// Column order of every results CSV.
pub const CSV_HEADER: [&str; 22] = [
    "config_hash",
    "command",
    "ratio",
    "method",
    "loss",
    "point",
    "seed",
    "row_kind",
    "ber",
    "ber_std",
    "wer",
    "wer_std",
    "wer_k",
    "wer_k_std",
    "many",
    "many_std",
    "medium",
    "medium_std",
    "few",
    "few_std",
    "repaired_batches",
    "note",
];

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn stat_cells(s: Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [num(s.mean), num(s.std)],
        None => [String::new(), String::new()],
    }
}

struct CsvWriter<'a> {
    out: csv::Writer<Vec<u8>>,
    hash: &'a str,
    command: &'a str,
}

impl CsvWriter<'_> {
    fn row(&mut self, cells: Vec<String>) -> Result<()> {
        self.out.write_record(&cells).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    fn run_row(&mut self, r: &RunResult, point: Option<usize>) -> Result<()> {
        let g = r.report.groups.as_ref();
        let gm = |pick: fn(&metrics::GroupErrors) -> Option<metrics::GroupStat>| g.and_then(pick).map(|s| s.mean);
        self.row(vec![
            self.hash.into(),
            self.command.into(),
            opt(r.ratio),
            r.loss.name().into(),
            r.label.clone(),
            point.map(|p| p.to_string()).unwrap_or_default(),
            r.seed.to_string(),
            "run".into(),
            num(r.report.ber),
            String::new(),
            num(r.report.wer),
            String::new(),
            num(r.report.wer_k.1),
            String::new(),
            opt(gm(|g| g.many)),
            String::new(),
            opt(gm(|g| g.medium)),
            String::new(),
            opt(gm(|g| g.few)),
            String::new(),
            r.trace.repaired_batches.to_string(),
            String::new(),
        ])
    }

    fn summary_row(&mut self, s: &LossSummary, point: Option<usize>) -> Result<()> {
        let mut cells = vec![
            self.hash.to_string(),
            self.command.to_string(),
            opt(s.ratio),
            s.loss.name().into(),
            s.label.clone(),
            point.map(|p| p.to_string()).unwrap_or_default(),
            String::new(),
            "aggregate".into(),
        ];
        for st in [Some(s.ber), Some(s.wer), Some(s.wer_k), s.many, s.medium, s.few] {
            cells.extend(stat_cells(st));
        }
        cells.push(num(s.repaired_batches.mean));
        cells.push(format!("seeds={}", s.seeds));
        self.row(cells)
    }
}

fn csv_writer<'a>(hash: &'a str, command: &'a str) -> Result<CsvWriter<'a>> {
    let mut w = CsvWriter {
        out: csv::Writer::from_writer(Vec::new()),
        hash,
        command,
    };
    w.row(CSV_HEADER.iter().map(|s| s.to_string()).collect())?;
    Ok(w)
}

fn finish(w: CsvWriter<'_>) -> Result<Vec<u8>> {
    w.out.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Long-format CSV: one `run` row per (ratio, loss, seed) followed by one
/// `aggregate` row (mean and sample std over seeds) per (ratio, loss).
pub fn experiment_csv(result: &ExperimentResult, command: &str) -> Result<Vec<u8>> {
    let mut w = csv_writer(&result.config_hash, command)?;
    for s in &result.summaries {
        for r in result.runs.iter().filter(|r| r.ratio == s.ratio && r.loss == s.loss) {
            w.run_row(r, None)?;
        }
        w.summary_row(s, None)?;
    }
    finish(w)
}

/// Grid CSV: the rows of [`experiment_csv`] tagged with their grid point,
/// plus one `skipped` row per infeasible point and one `best` row per method.
pub fn grid_csv(result: &GridResult) -> Result<Vec<u8>> {
    let e = &result.experiment;
    let mut w = csv_writer(&e.config_hash, "grid")?;
    for ((_, point), s) in result.points.iter().zip(&e.summaries) {
        for r in e.runs.iter().filter(|r| r.loss == s.loss) {
            w.run_row(r, Some(*point))?;
        }
        w.summary_row(s, Some(*point))?;
    }
    let ratio = e.summaries.first().and_then(|s| s.ratio);
    for sk in &result.skipped {
        let mut cells = vec![
            e.config_hash.clone(),
            "grid".into(),
            opt(ratio),
            sk.loss.name().into(),
            sk.label.clone(),
            sk.point.to_string(),
            String::new(),
            "skipped".into(),
        ];
        cells.extend(std::iter::repeat_n(String::new(), 13));
        cells.push(sk.reason.clone());
        w.row(cells)?;
    }
    for b in &result.best {
        let mut cells = vec![
            e.config_hash.clone(),
            "grid".into(),
            opt(ratio),
            b.loss.name().into(),
            b.loss.label(),
            b.point.to_string(),
            String::new(),
            "best".into(),
            num(b.ber.mean),
            num(b.ber.std),
        ];
        cells.extend(std::iter::repeat_n(String::new(), 11));
        cells.push(format!("method={}", b.method));
        w.row(cells)?;
    }
    finish(w)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
