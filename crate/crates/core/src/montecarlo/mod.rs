//! Batch experiments: sweep cells, independent trials with per-trial random
//! streams, and aggregation into [`CellSummary`] rows.
//!
//! Every trial owns a ChaCha stream keyed by `(seed, cell, trial)`, so results
//! do not depend on the worker count or on scheduling order.

pub mod estimators;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsmlError};
use crate::learner::{
    bestcase_certification_trial, run_trial, run_trial_with, SsmlConfig, Target, TrialHooks,
    TrialResult,
};
use crate::qstate::{StateVector, UnitaryMatrix};
use crate::runstats::{geometric_run_pmf, run_mean, RunQuery};

pub use estimators::{
    empirical_cdf, empirical_quantile, fit_exponential_cdf, loglog_slope, CdfPoint, Estimate,
    ExpFit, Quantile, SlopeFit, StopSample,
};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "SSML_WORKERS";

/// Default refusal threshold on the estimated number of simulated shots.
pub const DEFAULT_BUDGET: f64 = 2e10;

/// Independent random stream for one trial of one cell.
pub fn trial_rng(seed: u64, cell: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | (trial as u64 & 0xffff_ffff));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Full learning trials; empirical `P(N)` and its exponential fit.
    LearningProb,
    /// Full learning trials swept over the threshold; `(E[T], E[eps_T])` pairs.
    AccuracyScaling,
    /// Bernoulli(`1 - q`) certification; scaled means against the exact law.
    NoiseCollapse,
    /// Bernoulli(`p`) certification.
    CertBernoulli,
    /// Frozen control of fidelity `p`; pooled success-run lengths.
    RunLengthHistogram,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::LearningProb => "learning_prob",
            ExperimentKind::AccuracyScaling => "accuracy_scaling",
            ExperimentKind::NoiseCollapse => "noise_collapse",
            ExperimentKind::CertBernoulli => "cert_bernoulli",
            ExperimentKind::RunLengthHistogram => "run_length_histogram",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ExperimentKind::LearningProb,
            ExperimentKind::AccuracyScaling,
            ExperimentKind::NoiseCollapse,
            ExperimentKind::CertBernoulli,
            ExperimentKind::RunLengthHistogram,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    fn is_bernoulli(&self) -> bool {
        matches!(self, ExperimentKind::NoiseCollapse | ExperimentKind::CertBernoulli)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NGrid {
    /// `points` evenly spaced checkpoints from 0 to the last stopping time that
    /// still leaves [`GRID_MIN_SURVIVORS`] trials running (beyond it the
    /// empirical log-survival is carried by a handful of trials).
    Auto { points: usize },
    Explicit(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub base: SsmlConfig,
    pub d: Vec<usize>,
    pub mh: Vec<u64>,
    pub q: Vec<f64>,
    /// Noise loads `q * M_H`; when non-empty, `mh` is derived per `q` as `round(q_mh / q)`.
    pub q_mh: Vec<f64>,
    /// Success probability (Bernoulli kinds) or frozen-control fidelity (histograms).
    pub p: Vec<f64>,
    pub trials: usize,
    pub n_grid: NGrid,
    /// Tail level of the reported empirical quantile.
    pub delta: f64,
    pub budget: f64,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, base: SsmlConfig) -> Self {
        let default_trials = match kind {
            ExperimentKind::LearningProb | ExperimentKind::AccuracyScaling => 500,
            _ => 10_000,
        };
        Self {
            kind,
            d: vec![base.d],
            mh: vec![base.mh],
            base,
            q: Vec::new(),
            q_mh: Vec::new(),
            p: Vec::new(),
            trials: default_trials,
            n_grid: NGrid::Auto { points: 64 },
            delta: 0.05,
            budget: DEFAULT_BUDGET,
        }
    }

    /// Expands the sweep into cells, validating each.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.trials == 0 {
            return Err(SsmlError::param("trials must be >= 1"));
        }
        if self.trials > u32::MAX as usize {
            return Err(SsmlError::param("trials must fit in 32 bits"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SsmlError::param(format!("delta = {} must lie in (0, 1)", self.delta)));
        }
        if let NGrid::Auto { points } = self.n_grid {
            if points < 2 {
                return Err(SsmlError::param("n_grid needs at least 2 points"));
            }
        }
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(SsmlError::param(format!("sweep list '{name}' is empty")))
            } else {
                Ok(())
            }
        };
        let mut cells = Vec::new();
        match self.kind {
            ExperimentKind::LearningProb | ExperimentKind::AccuracyScaling => {
                nonempty("d", self.d.len())?;
                nonempty("mh", self.mh.len())?;
                for &d in &self.d {
                    for &mh in &self.mh {
                        cells.push(CellParams {
                            d: Some(d),
                            mh,
                            q: None,
                            p: None,
                        });
                    }
                }
            }
            ExperimentKind::CertBernoulli => {
                nonempty("p", self.p.len())?;
                nonempty("mh", self.mh.len())?;
                for &p in &self.p {
                    for &mh in &self.mh {
                        cells.push(CellParams {
                            d: None,
                            mh,
                            q: None,
                            p: Some(p),
                        });
                    }
                }
            }
            ExperimentKind::NoiseCollapse => {
                nonempty("q", self.q.len())?;
                for &q in &self.q {
                    if !(q > 0.0 && q < 0.5) {
                        return Err(SsmlError::param(format!("q = {q} must lie in (0, 0.5)")));
                    }
                    if self.q_mh.is_empty() {
                        nonempty("mh", self.mh.len())?;
                        for &mh in &self.mh {
                            cells.push(CellParams::collapse(q, mh));
                        }
                    } else {
                        for &load in &self.q_mh {
                            let mh = (load / q).round();
                            if !(mh >= 1.0 && mh.is_finite()) {
                                return Err(SsmlError::param(format!(
                                    "noise load {load} at q = {q} gives no valid threshold"
                                )));
                            }
                            cells.push(CellParams::collapse(q, mh as u64));
                        }
                    }
                }
            }
            ExperimentKind::RunLengthHistogram => {
                nonempty("d", self.d.len())?;
                nonempty("p", self.p.len())?;
                nonempty("mh", self.mh.len())?;
                for &d in &self.d {
                    for &p in &self.p {
                        if !(0.0..1.0).contains(&p) {
                            return Err(SsmlError::param(format!(
                                "frozen fidelity {p} must lie in [0, 1)"
                            )));
                        }
                        for &mh in &self.mh {
                            cells.push(CellParams {
                                d: Some(d),
                                mh,
                                q: None,
                                p: Some(p),
                            });
                        }
                    }
                }
            }
        }
        cells
            .into_iter()
            .enumerate()
            .map(|(index, params)| {
                let cell = Cell { index, params };
                cell.config(self)?.validate()?;
                if let Some(p) = params.p {
                    if self.kind == ExperimentKind::CertBernoulli && !(p > 0.0 && p <= 1.0) {
                        return Err(SsmlError::param(format!("p = {p} must lie in (0, 1]")));
                    }
                }
                Ok(cell)
            })
            .collect()
    }

    /// Estimated simulated shots, used for the budget check.
    pub fn estimated_shots(&self, cells: &[Cell]) -> f64 {
        cells.iter().map(|c| c.estimated_shots(self)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub d: Option<usize>,
    pub mh: u64,
    pub q: Option<f64>,
    pub p: Option<f64>,
}

impl CellParams {
    fn collapse(q: f64, mh: u64) -> Self {
        Self {
            d: None,
            mh,
            q: Some(q),
            p: Some(1.0 - q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub params: CellParams,
}

impl Cell {
    fn config(&self, spec: &ExperimentSpec) -> Result<SsmlConfig> {
        let mut cfg = spec.base.clone();
        cfg.mh = self.params.mh;
        if let Some(d) = self.params.d {
            cfg.d = d;
        }
        if spec.kind.is_bernoulli() {
            // Bernoulli cells have no quantum state; keep the config well-formed.
            cfg.d = cfg.d.max(2);
        }
        Ok(cfg)
    }

    fn bernoulli_p(&self) -> f64 {
        self.params.p.unwrap_or(1.0)
    }

    pub fn estimated_shots(&self, spec: &ExperimentSpec) -> f64 {
        let cap = spec.base.max_shots as f64;
        let per_trial = if spec.kind.is_bernoulli() {
            RunQuery::new(self.bernoulli_p(), self.params.mh)
                .map(|q| run_mean(&q).min(cap))
                .unwrap_or(cap)
        } else {
            cap
        };
        per_trial * spec.trials as f64
    }

    fn run_one(&self, spec: &ExperimentSpec, trial: usize) -> Result<TrialResult> {
        let cfg = self.config(spec)?;
        let mut rng = trial_rng(spec.base.seed, self.index, trial);
        match spec.kind {
            ExperimentKind::LearningProb | ExperimentKind::AccuracyScaling => {
                let eps = 1.0 / cfg.mh as f64;
                run_trial(&cfg, &Target::Haar, &[eps], &mut rng)
            }
            ExperimentKind::NoiseCollapse | ExperimentKind::CertBernoulli => {
                bestcase_certification_trial(cfg.mh, self.bernoulli_p(), cfg.max_shots, &mut rng)
            }
            ExperimentKind::RunLengthHistogram => {
                let psi = StateVector::with_fidelity(cfg.d, self.bernoulli_p())?;
                let hooks = TrialHooks {
                    initial_control: Some(UnitaryMatrix::identity(cfg.d)),
                    freeze_control: true,
                    stop_after_runs: None,
                };
                run_trial_with(&cfg, &Target::Given(psi), &[], &mut rng, &hooks)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub length: u64,
    pub count: u64,
    pub frequency: f64,
    pub pmf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLengthSummary {
    pub eps: f64,
    pub total_runs: u64,
    pub mean: Option<Estimate>,
    /// Bins `0..max_len`, the last bin pooling everything longer.
    pub bins: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub params: CellParams,
    pub trials: usize,
    pub halted: usize,
    pub censored_fraction: f64,
    /// Over halted trials only.
    pub mean_t: Option<Estimate>,
    /// Over halted trials only.
    pub mean_epsilon_t: Option<Estimate>,
    /// Mean of `min(tau, T)` with `tau` the first shot at infidelity `<= 1 / M_H`
    /// (learning kinds, halted trials).
    pub mean_hit: Option<Estimate>,
    pub delta: f64,
    pub quantile: Quantile,
    pub cdf: Vec<CdfPoint>,
    pub fit: Option<ExpFit>,
    pub run_lengths: Option<RunLengthSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses all available CPUs.
    pub workers: Option<usize>,
}

impl RunOptions {
    /// Reads [`WORKERS_ENV`].
    pub fn from_env() -> Result<Self> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => {
                let n: usize = v.trim().parse().map_err(|_| {
                    SsmlError::param(format!("{WORKERS_ENV}='{v}' is not a positive integer"))
                })?;
                if n == 0 {
                    return Err(SsmlError::param(format!("{WORKERS_ENV} must be >= 1")));
                }
                Ok(Self { workers: Some(n) })
            }
            Err(_) => Ok(Self::default()),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            builder = builder.num_threads(n);
        }
        builder
            .build()
            .map_err(|e| SsmlError::param(format!("cannot start worker pool: {e}")))
    }
}

/// Runs every trial of `cells` and returns per-cell trial records in trial order.
fn simulate_cells(
    spec: &ExperimentSpec,
    cells: &[Cell],
    opts: &RunOptions,
) -> Result<Vec<Vec<TrialResult>>> {
    let pool = opts.pool()?;
    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| (0..spec.trials).map(move |t| (ci, t)))
        .collect();
    let results: Vec<Result<TrialResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, t)| cells[ci].run_one(spec, t))
            .collect()
    });
    let mut per_cell: Vec<Vec<TrialResult>> = cells.iter().map(|_| Vec::with_capacity(spec.trials)).collect();
    for ((ci, _), r) in jobs.into_iter().zip(results) {
        per_cell[ci].push(r?);
    }
    Ok(per_cell)
}

/// Executes the experiment, refusing when the shot estimate exceeds `spec.budget`.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<CellSummary>> {
    let cells = spec.cells()?;
    let estimated = spec.estimated_shots(&cells);
    if estimated > spec.budget {
        return Err(SsmlError::Budget {
            estimated,
            budget: spec.budget,
        });
    }
    let records = simulate_cells(spec, &cells, opts)?;
    cells
        .iter()
        .zip(records)
        .map(|(cell, trials)| summarize(spec, cell, &trials))
        .collect()
}

/// Trials that must still be running at the top of an automatic grid.
pub const GRID_MIN_SURVIVORS: usize = 10;

/// Largest `N` with at least [`GRID_MIN_SURVIVORS`] trials satisfying `T > N`;
/// falls back to the largest stopping time for small samples.
fn auto_grid_top(samples: &[StopSample], cap: u64) -> u64 {
    let mut ts: Vec<u64> = samples
        .iter()
        .map(|s| if s.halted { s.shots } else { cap.max(s.shots) })
        .collect();
    ts.sort_unstable();
    match ts.len().checked_sub(GRID_MIN_SURVIVORS + 1) {
        Some(i) if ts[i] > 0 => ts[i],
        _ => ts.last().copied().unwrap_or(cap),
    }
}

fn auto_grid(max_shots: u64, points: usize) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..points)
        .map(|i| ((max_shots as f64) * i as f64 / (points - 1) as f64).round() as u64)
        .collect();
    grid.dedup();
    grid
}

/// Pools completed run lengths and compares them with the geometric law at `eps`.
pub fn run_length_summary(eps: f64, lengths: &[u64], max_len: u64) -> Result<RunLengthSummary> {
    let total = lengths.len() as u64;
    let mut counts = vec![0u64; max_len as usize + 1];
    for &l in lengths {
        counts[l.min(max_len) as usize] += 1;
    }
    let mut bins = Vec::with_capacity(counts.len());
    for (l, &count) in counts.iter().enumerate() {
        let l = l as u64;
        let pmf = if l == max_len {
            // pooled tail P(L >= max_len)
            (1.0 - eps).powf(max_len as f64)
        } else {
            geometric_run_pmf(eps, l)?
        };
        bins.push(HistogramBin {
            length: l,
            count,
            frequency: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            pmf,
        });
    }
    let xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    Ok(RunLengthSummary {
        eps,
        total_runs: total,
        mean: Estimate::from_samples(&xs),
        bins,
    })
}

fn summarize(spec: &ExperimentSpec, cell: &Cell, trials: &[TrialResult]) -> Result<CellSummary> {
    let samples: Vec<StopSample> = trials
        .iter()
        .map(|t| StopSample {
            shots: t.shots,
            halted: t.halted,
        })
        .collect();
    let halted: Vec<&TrialResult> = trials.iter().filter(|t| t.halted).collect();
    let n = trials.len();
    let ts: Vec<f64> = halted.iter().map(|t| t.shots as f64).collect();
    let eps: Vec<f64> = halted.iter().map(|t| t.epsilon_t).collect();

    let learning = matches!(
        spec.kind,
        ExperimentKind::LearningProb | ExperimentKind::AccuracyScaling
    );
    let mean_hit = if learning {
        let hits: Vec<f64> = halted
            .iter()
            .map(|t| {
                t.hitting_times
                    .first()
                    .and_then(|h| h.shot)
                    .map_or(t.shots, |s| s.min(t.shots)) as f64
            })
            .collect();
        Estimate::from_samples(&hits)
    } else {
        None
    };

    let grid = match &spec.n_grid {
        NGrid::Explicit(g) => g.clone(),
        NGrid::Auto { points } => {
            auto_grid(auto_grid_top(&samples, spec.base.max_shots), *points)
        }
    };
    let cdf = empirical_cdf(&samples, &grid);
    let fit = if spec.kind == ExperimentKind::RunLengthHistogram {
        None
    } else {
        fit_exponential_cdf(&cdf).ok()
    };

    let run_lengths = if spec.kind == ExperimentKind::RunLengthHistogram {
        let f = cell.bernoulli_p();
        let eps = 1.0 - f;
        let pooled: Vec<u64> = trials.iter().flat_map(|t| t.run_lengths.iter().copied()).collect();
        // Tail bin where the geometric mass drops below 1e-4.
        let max_len = ((1e-4_f64).ln() / f.ln()).ceil().clamp(1.0, 10_000.0) as u64;
        Some(run_length_summary(eps, &pooled, max_len)?)
    } else {
        None
    };

    Ok(CellSummary {
        cell: cell.index,
        params: cell.params,
        trials: n,
        halted: halted.len(),
        censored_fraction: (n - halted.len()) as f64 / n as f64,
        mean_t: Estimate::from_samples(&ts),
        mean_epsilon_t: if learning { Estimate::from_samples(&eps) } else { None },
        mean_hit,
        delta: spec.delta,
        quantile: empirical_quantile(&samples, spec.delta)?,
        cdf,
        fit,
        run_lengths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub q: f64,
    pub mh: u64,
    pub q_mh: f64,
    /// `q * mean_T` from simulation; `None` when the cell was skipped.
    pub scaled_mean_mc: Option<Estimate>,
    /// `q * E[X_{M_H}(1 - q)]`.
    pub scaled_mean_exact: f64,
    /// `e^{q M_H} - 1`.
    pub asymptote: f64,
    pub censored_fraction: f64,
    pub skipped: bool,
}

/// Scaled certification means for `(q, M_H)` cells. Cells whose expected cost
/// `trials * E[X]` exceeds `budget` are reported with the analytic value only.
pub fn noise_collapse_table(
    spec: &ExperimentSpec,
    opts: &RunOptions,
) -> Result<Vec<CollapseRow>> {
    if spec.kind != ExperimentKind::NoiseCollapse {
        return Err(SsmlError::param("noise_collapse_table needs a noise_collapse spec"));
    }
    let cells = spec.cells()?;
    let (run, skipped): (Vec<Cell>, Vec<Cell>) = cells
        .iter()
        .partition(|c| c.estimated_shots(spec) <= spec.budget);
    let records = simulate_cells(spec, &run, opts)?;

    let mut rows: Vec<(usize, CollapseRow)> = Vec::with_capacity(cells.len());
    let row = |cell: &Cell, trials: Option<&[TrialResult]>| -> Result<CollapseRow> {
        let q = cell.params.q.unwrap_or(0.0);
        let mh = cell.params.mh;
        let exact = run_mean(&RunQuery::new(1.0 - q, mh)?);
        let (mc, censored) = match trials {
            Some(ts) => {
                let scaled: Vec<f64> = ts.iter().filter(|t| t.halted).map(|t| q * t.shots as f64).collect();
                let censored = ts.iter().filter(|t| !t.halted).count() as f64 / ts.len() as f64;
                (Estimate::from_samples(&scaled), censored)
            }
            None => (None, 0.0),
        };
        Ok(CollapseRow {
            q,
            mh,
            q_mh: q * mh as f64,
            scaled_mean_mc: mc,
            scaled_mean_exact: q * exact,
            asymptote: (q * mh as f64).exp_m1(),
            censored_fraction: censored,
            skipped: trials.is_none(),
        })
    };
    for (cell, trials) in run.iter().zip(&records) {
        rows.push((cell.index, row(cell, Some(trials))?));
    }
    for cell in &skipped {
        rows.push((cell.index, row(cell, None)?));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}
