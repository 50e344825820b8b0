//! Seeded ensembles and the checks run on them: one-step descent bounds,
//! Cesàro envelopes, rate fits, stationarity, mini-batch moment scaling.

use std::ops::Range;

use muon_lab_core::bounds::{
    muon0_descent_rhs, muon0_upper_envelope, muon_descent_rhs, muon_upper_envelope, sgd_descent_rhs,
    sgd_upper_envelope, sgd_window_start, BoundConstants, MomentumTerms, WindowSums,
};
use muon_lab_core::noise::{tail_witness, GradientOracle, NoiseKind, NoiseModel, TailWitness};
use muon_lab_core::objective::{ComponentSpec, Family, HolderObjective};
use muon_lab_core::optimizer::{
    run_update_sequence_with, step, DirectionKind, MuonConfig, Optimizer, OptimizerState, Orthogonalizer, StepStreams,
};
use muon_lab_core::rng::{Purpose, StreamKey};
use muon_lab_core::schedule::{
    check_conditions, BatchSchedule, ConditionReport, Method, Series, SeriesAccumulator, SeriesParams, StepSchedule,
    DEFAULT_HORIZONS,
};
use muon_lab_core::{Error, Matrix};
use rayon::prelude::*;

use crate::config::{MomentumInit, OptimizerKind, OrthogonalizerKind, RunConfig};
use crate::error::LabError;

/// Relative slack for the noiseless descent checks, which compare two
/// floating point evaluations of nearly equal size.
pub const DESCENT_ROUNDING: f64 = 1e-12;

/// Number of standard errors a Monte Carlo estimate may sit beyond a bound.
pub const STDERR_RULE: f64 = 4.0;

/// Check verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Fail,
    /// A hypothesis of the bound does not hold at this step.
    Skipped,
    /// The bound is trivially true, e.g. a nonpositive lower constant.
    Vacuous,
    /// No bound exists for this configuration.
    Unavailable,
    /// Diagnostic only.
    Info,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
            Status::Vacuous => "vacuous",
            Status::Unavailable => "unavailable",
            Status::Info => "info",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Status::Pass,
            Status::Fail,
            Status::Skipped,
            Status::Vacuous,
            Status::Unavailable,
            Status::Info,
        ]
        .into_iter()
        .find(|x| x.as_str() == s)
    }
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub check_id: String,
    /// Step index or horizon, depending on the check.
    pub t: u64,
    pub lhs: f64,
    pub rhs: f64,
    /// Signed slack; positive means the inequality holds with room.
    pub margin: f64,
    pub status: Status,
}

impl ReportRow {
    fn new(check_id: impl Into<String>, t: u64, lhs: f64, rhs: f64, margin: f64, status: Status) -> Self {
        ReportRow {
            check_id: check_id.into(),
            t,
            lhs,
            rhs,
            margin,
            status,
        }
    }
}

/// Everything needed to run trials of one configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub objective: HolderObjective,
    /// Shared by all trials.
    pub w0: Matrix,
    pub noise: NoiseModel,
    pub steps: StepSchedule,
    pub batches: BatchSchedule,
    pub optimizer: Optimizer,
}

fn standard_normal() -> NoiseModel {
    NoiseModel {
        kind: NoiseKind::Gaussian { std: 1.0 },
        p: 2.0,
    }
}

impl Experiment {
    /// Builds the problem. Anchors and `W_0` come from the problem streams of
    /// trial 0, so every trial optimizes the same objective from the same
    /// start.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, LabError> {
        cfg.validate()?;
        let o = &cfg.objective;
        let shape = (o.rows, o.cols);
        let mut rng = StreamKey::new(cfg.seed, 0, Purpose::Problem, 0).rng();
        let components = (0..o.components)
            .map(|_| {
                let a = standard_normal().sample_matrix(shape, &mut rng).scale(o.anchor_scale);
                match o.family {
                    Family::PoweredDistance => ComponentSpec::powered_distance(a, o.scale, o.nu),
                    Family::GemanMcClure => ComponentSpec::geman_mcclure(a, o.scale),
                }
            })
            .collect();
        let objective = HolderObjective::new(components)?;
        let mut rng = StreamKey::new(cfg.seed, 0, Purpose::Problem, 1).rng();
        let w0 = standard_normal().sample_matrix(shape, &mut rng).scale(o.init_scale);
        let noise = NoiseModel::new(cfg.noise.kind, cfg.noise.p)?;
        let steps = StepSchedule::new(cfg.schedule.eta, cfg.schedule.a)?;
        let batches = BatchSchedule::new(cfg.schedule.batch, cfg.schedule.max_batch)?;
        let p = &cfg.optimizer;
        let optimizer = match p.kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Muon => {
                let orth = match p.orthogonalizer {
                    OrthogonalizerKind::ExactSvd => Orthogonalizer::ExactSvd,
                    OrthogonalizerKind::NewtonSchulz => Orthogonalizer::NewtonSchulz(p.ns),
                };
                let mut m = MuonConfig::new(p.beta, orth)?;
                m.tolerances = cfg.tolerances;
                if p.m_init == MomentumInit::Gradient {
                    m.m_init = Some(objective.grad_full(&w0)?);
                }
                Optimizer::Muon(m)
            }
        };
        Ok(Experiment {
            config: cfg.clone(),
            objective,
            w0,
            noise,
            steps,
            batches,
            optimizer,
        })
    }

    /// The same experiment with another update rule.
    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn oracle(&self) -> Result<GradientOracle<'_>, LabError> {
        Ok(GradientOracle::new(
            &self.objective,
            self.config.noise.sampling,
            self.noise,
        )?)
    }

    pub fn method(&self) -> Method {
        match &self.optimizer {
            Optimizer::Sgd => Method::Sgd,
            Optimizer::MuonNoMomentum(..) => Method::Muon0,
            Optimizer::Muon(m) if m.beta == 0.0 => Method::Muon0,
            Optimizer::Muon(_) => Method::Muon,
        }
    }

    pub fn beta(&self) -> f64 {
        match &self.optimizer {
            Optimizer::Muon(m) => m.beta,
            _ => 0.0,
        }
    }

    pub fn series_params(&self) -> SeriesParams {
        SeriesParams {
            nu: self.objective.nu(),
            p: self.noise.p,
            beta: self.beta(),
        }
    }

    /// Constants of the bounds: mean Hölder constant, certified `σ^p`, and
    /// `n` the smaller matrix dimension.
    pub fn constants(&self) -> Result<BoundConstants, LabError> {
        let (m, n) = self.objective.shape();
        let c = BoundConstants {
            l: self.objective.mean_l(),
            nu: self.objective.nu(),
            p: self.noise.p,
            sigma_p: self.oracle()?.sigma_p()?,
            n: m.min(n) as f64,
            f_star: self.objective.f_star(),
        };
        c.validate()?;
        Ok(c)
    }

    fn streams(&self, trial: u64) -> StepStreams {
        StepStreams {
            seed: self.config.seed,
            trial,
        }
    }

    /// One trial of `horizon` steps.
    pub fn run_trial(&self, trial: u64) -> Result<Trace, LabError> {
        self.trial_inner(trial)
            .map_err(|source| LabError::Trial { trial, source })
    }

    fn trial_inner(&self, trial: u64) -> Result<Trace, Error> {
        let oracle = GradientOracle::new(&self.objective, self.config.noise.sampling, self.noise)?;
        let horizon = self.config.horizon;
        let mut records = Vec::with_capacity(horizon as usize);
        let mut m0_error = None;
        let last = run_update_sequence_with(
            self.w0.clone(),
            &self.optimizer,
            &self.steps,
            &self.batches,
            &oracle,
            horizon,
            self.streams(trial),
            |pre, out| {
                let grad = self.objective.grad_full(&pre.w)?;
                let f = self.objective.eval_full(&pre.w)?;
                if !f.is_finite() || !grad.is_finite() {
                    return Err(Error::NonFinite);
                }
                if pre.t == 0 && matches!(self.optimizer, Optimizer::Muon(_)) {
                    m0_error = Some(out.state.momentum.sub(&grad)?.frobenius_norm());
                }
                records.push(StepRecord {
                    t: pre.t,
                    eta: self.steps.at(pre.t),
                    b: self.batches.at(pre.t),
                    f,
                    g: grad.frobenius_norm(),
                    kind: out.kind,
                    direction_norm: out.diagnostics.direction_norm,
                    alignment: out.diagnostics.alignment,
                    completed: out.diagnostics.completed,
                });
                Ok(())
            },
        )?;
        let final_f = self.objective.eval_full(&last.w)?;
        let final_g = self.objective.grad_full(&last.w)?.frobenius_norm();
        if !final_f.is_finite() || !final_g.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Trace {
            trial,
            records,
            final_f,
            final_g,
            m0_error,
        })
    }
}

/// Exact objective values along one trajectory, recorded before each step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub eta: f64,
    pub b: u64,
    pub f: f64,
    /// `‖∇f(W_t)‖_F`
    pub g: f64,
    pub kind: DirectionKind,
    pub direction_norm: f64,
    pub alignment: Option<f64>,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trial: u64,
    pub records: Vec<StepRecord>,
    /// `f(W_T)` after the last step.
    pub final_f: f64,
    pub final_g: f64,
    /// `‖M_0 - ∇f(W_0)‖_F` for momentum runs.
    pub m0_error: Option<f64>,
}

impl Trace {
    /// `f(W_t)` for `t` in `0..=T`.
    pub fn f_at(&self, t: usize) -> f64 {
        self.records.get(t).map_or(self.final_f, |r| r.f)
    }
}

/// Per-step ensemble means and standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleRow {
    pub t: u64,
    pub eta: f64,
    pub b: u64,
    pub mean_f: f64,
    pub se_f: f64,
    pub mean_g: f64,
    pub se_g: f64,
    pub mean_g2: f64,
    pub se_g2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub seeds: usize,
    pub rows: Vec<EnsembleRow>,
    pub final_mean_f: f64,
    pub final_mean_g: f64,
    /// Mean of `‖M_0 - ∇f(W_0)‖_F` over trials.
    pub mean_m0_error: Option<f64>,
}

impl EnsembleStats {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `E f(W_t)` for `t` in `0..=T`.
    pub fn mean_f_at(&self, t: usize) -> f64 {
        self.rows.get(t).map_or(self.final_mean_f, |r| r.mean_f)
    }
}

/// Sample mean and standard error of the mean, summed in order. Identical
/// values, including a single one, give that value and zero error exactly.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Aggregates traces in the given order.
pub fn aggregate(traces: &[Trace]) -> Result<EnsembleStats, LabError> {
    let first = traces
        .first()
        .ok_or_else(|| LabError::Harness("ensemble needs at least one trace".into()))?;
    let len = first.records.len();
    if traces.iter().any(|t| t.records.len() != len) {
        return Err(LabError::Harness("traces differ in length".into()));
    }
    let mut rows = Vec::with_capacity(len);
    let mut buf = Vec::with_capacity(traces.len());
    let mut col = |f: &dyn Fn(&Trace) -> f64| {
        buf.clear();
        buf.extend(traces.iter().map(f));
        mean_se(&buf)
    };
    for i in 0..len {
        let r = &first.records[i];
        let (mean_f, se_f) = col(&|tr| tr.records[i].f);
        let (mean_g, se_g) = col(&|tr| tr.records[i].g);
        let (mean_g2, se_g2) = col(&|tr| tr.records[i].g * tr.records[i].g);
        rows.push(EnsembleRow {
            t: r.t,
            eta: r.eta,
            b: r.b,
            mean_f,
            se_f,
            mean_g,
            se_g,
            mean_g2,
            se_g2,
        });
    }
    let final_mean_f = col(&|tr| tr.final_f).0;
    let final_mean_g = col(&|tr| tr.final_g).0;
    let errs: Option<Vec<f64>> = traces.iter().map(|t| t.m0_error).collect();
    Ok(EnsembleStats {
        seeds: traces.len(),
        rows,
        final_mean_f,
        final_mean_g,
        mean_m0_error: errs.map(|e| mean_se(&e).0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub traces: Vec<Trace>,
    pub stats: EnsembleStats,
}

/// Runs trials `0..S` concurrently and aggregates them in trial order. The
/// first failing trial, in order, is reported.
pub fn run_ensemble(exp: &Experiment) -> Result<Ensemble, LabError> {
    let results: Vec<Result<Trace, LabError>> = (0..exp.config.seeds)
        .into_par_iter()
        .map(|k| exp.run_trial(k))
        .collect();
    let traces = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let stats = aggregate(&traces)?;
    Ok(Ensemble { traces, stats })
}

/// Which power of the gradient norm a metric averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    /// `g`
    First,
    /// `g²`
    Second,
}

impl Moment {
    fn power(self) -> f64 {
        match self {
            Moment::First => 1.0,
            Moment::Second => 2.0,
        }
    }

    /// Cesàro metric used for each method: `g²` for SGD, `g` for Muon.
    pub fn for_method(m: Method) -> Self {
        match m {
            Method::Sgd => Moment::Second,
            Method::Muon0 | Method::Muon => Moment::First,
        }
    }
}

fn check_window(len: usize, window: &Range<usize>) -> Result<(), LabError> {
    if window.start >= window.end || window.end > len {
        return Err(LabError::Harness(format!(
            "empty or out-of-range window {}..{} for {len} steps",
            window.start, window.end
        )));
    }
    Ok(())
}

/// `Σ η_t x_t / Σ η_t` over `window`, with `x_t` the ensemble mean of `g` or
/// `g²`.
pub fn cesaro_mean(stats: &EnsembleStats, moment: Moment, window: Range<usize>) -> Result<f64, LabError> {
    check_window(stats.len(), &window)?;
    let (mut num, mut den) = (0.0, 0.0);
    for r in &stats.rows[window] {
        let x = match moment {
            Moment::First => r.mean_g,
            Moment::Second => r.mean_g2,
        };
        num += r.eta * x;
        den += r.eta;
    }
    Ok(num / den)
}

/// The same average on one trace.
pub fn trace_cesaro(trace: &Trace, moment: Moment, window: Range<usize>) -> Result<f64, LabError> {
    check_window(trace.records.len(), &window)?;
    let (mut num, mut den) = (0.0, 0.0);
    for r in &trace.records[window] {
        num += r.eta * r.g.powf(moment.power());
        den += r.eta;
    }
    Ok(num / den)
}

/// Ensemble Cesàro mean with its standard error across trials.
pub fn cesaro_with_se(traces: &[Trace], moment: Moment, window: Range<usize>) -> Result<(f64, f64), LabError> {
    let per: Vec<f64> = traces
        .iter()
        .map(|t| trace_cesaro(t, moment, window.clone()))
        .collect::<Result<_, _>>()?;
    Ok(mean_se(&per))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMetric {
    /// `log` Cesàro mean against `log Σ η_t`.
    Cesaro,
    /// `log` of the Cesàro proxy for `min_t E g_t` against `log T`: the
    /// Cesàro mean of `g` itself, or the root of the Cesàro mean of `g²`.
    MinGrad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub metric: RateMetric,
    pub moment: Moment,
    pub horizons: Vec<u64>,
    pub abscissa: Vec<f64>,
    pub ordinate: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual of the fit.
    pub residual: f64,
    pub target: f64,
    /// `min_{t<T} E g_t` at each horizon.
    pub raw_min: Vec<f64>,
    /// Slope of `log raw_min` against `log T`.
    pub raw_min_slope: f64,
}

/// Least-squares slope, intercept and RMS residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Minimum span of a rate fit's abscissa, in decades.
pub const MIN_DECADES: f64 = 1.5;

/// Fits the decay of a gradient metric over horizons `T` (Cesàro windows
/// `[0, T)`). Needs at least five horizons spanning 1.5 decades of the
/// abscissa in use.
pub fn fit_rate(
    stats: &EnsembleStats,
    metric: RateMetric,
    moment: Moment,
    horizons: &[u64],
    target: f64,
) -> Result<RateFit, LabError> {
    if horizons.len() < 5 {
        return Err(LabError::Harness(format!(
            "rate fit needs 5 horizons, got {}",
            horizons.len()
        )));
    }
    let mut abscissa = Vec::new();
    let mut ordinate = Vec::new();
    let mut raw_min = Vec::new();
    for &h in horizons {
        let end = h as usize;
        let c = cesaro_mean(stats, moment, 0..end)?;
        let eta_sum: f64 = stats.rows[..end].iter().map(|r| r.eta).sum();
        let (x, y) = match metric {
            RateMetric::Cesaro => (eta_sum.ln(), c.ln()),
            RateMetric::MinGrad => ((h as f64).ln(), c.ln() / moment.power()),
        };
        abscissa.push(x);
        ordinate.push(y);
        raw_min.push(stats.rows[..end].iter().map(|r| r.mean_g).fold(f64::INFINITY, f64::min));
    }
    let span = (abscissa.last().unwrap() - abscissa[0]) / std::f64::consts::LN_10;
    if span < MIN_DECADES - 1e-9 {
        return Err(LabError::Harness(format!(
            "rate fit abscissa spans {span:.2} decades, need {MIN_DECADES}"
        )));
    }
    let (slope, intercept, residual) = linear_fit(&abscissa, &ordinate);
    let log_t: Vec<f64> = horizons.iter().map(|&h| (h as f64).ln()).collect();
    let log_min: Vec<f64> = raw_min.iter().map(|x| x.ln()).collect();
    let (raw_min_slope, _, _) = linear_fit(&log_t, &log_min);
    Ok(RateFit {
        metric,
        moment,
        horizons: horizons.to_vec(),
        abscissa,
        ordinate,
        slope,
        intercept,
        residual,
        target,
        raw_min,
        raw_min_slope,
    })
}

/// Expected decay exponent of the min-grad metric: `-(1-a)/2` for SGD,
/// `-(1-a)` for Muon.
pub fn min_grad_target(method: Method, a: f64) -> f64 {
    match method {
        Method::Sgd => -(1.0 - a) / 2.0,
        Method::Muon0 | Method::Muon => -(1.0 - a),
    }
}

/// Half-width of the accepted slope band around the target.
pub fn rate_band(method: Method) -> f64 {
    match method {
        Method::Sgd => 0.08,
        Method::Muon0 | Method::Muon => 0.1,
    }
}

/// One checked step of a descent check.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentEntry {
    pub t: u64,
    /// `f(W_{t+1})`, or its Monte Carlo mean given `W_t`.
    pub estimate: f64,
    pub stderr: f64,
    pub rhs: f64,
    pub replicates: usize,
    pub status: Status,
    pub reason: Option<&'static str>,
}

impl DescentEntry {
    pub fn margin(&self) -> f64 {
        self.rhs - self.estimate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub method: Method,
    /// Every step, noiseless; spot checks otherwise.
    pub deterministic: bool,
    pub entries: Vec<DescentEntry>,
}

impl DescentReport {
    pub fn check_id(&self) -> String {
        let kind = if self.deterministic { "descent-exact" } else { "descent" };
        format!("{kind}/{}", self.method.name())
    }

    pub fn violations(&self) -> usize {
        self.entries.iter().filter(|e| e.status == Status::Fail).count()
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let id = self.check_id();
        self.entries
            .iter()
            .map(|e| ReportRow::new(id.clone(), e.t, e.estimate, e.rhs, e.margin(), e.status))
            .collect()
    }
}

enum Rhs {
    Value(f64),
    Skipped(&'static str),
}

fn descent_rhs(
    exp: &Experiment,
    c: &BoundConstants,
    f: f64,
    g: f64,
    t: u64,
    acc: &SeriesAccumulator,
    m0_error: f64,
) -> Rhs {
    let eta = exp.steps.at(t);
    let b = exp.batches.value_at(t);
    match exp.method() {
        Method::Sgd => match sgd_descent_rhs(c, f, g, eta, b) {
            Ok(v) => Rhs::Value(v),
            Err(u) => Rhs::Skipped(u.reason()),
        },
        Method::Muon0 => Rhs::Value(muon0_descent_rhs(c, f, g, eta, b)),
        Method::Muon => Rhs::Value(muon_descent_rhs(
            c,
            f,
            g,
            eta,
            &MomentumTerms {
                beta: exp.beta(),
                t,
                m0_error,
                inner_eta: acc.next_inner_eta(),
                inner_batch: acc.next_inner_batch(),
            },
        )),
    }
}

/// Evenly spaced step indices in `0..horizon`.
pub fn spot_steps(horizon: u64, count: usize) -> Vec<u64> {
    let count = (count as u64).min(horizon).max(1);
    (0..count).map(|k| k * horizon / count).collect()
}

/// Checks the one-step bound along trial `trial`.
///
/// A noiseless oracle makes `f(W_{t+1})` a function of the state, so every
/// step is compared directly, allowing only rounding slack. Otherwise the
/// conditional expectation at each spot-checked step is estimated from
/// `replicates` independent branches of the frozen state.
pub fn descent_check(exp: &Experiment, trial: u64) -> Result<DescentReport, LabError> {
    let c = exp.constants()?;
    let oracle = exp.oracle()?;
    let method = exp.method();
    let mut acc = SeriesAccumulator::new(exp.steps, exp.batches, exp.series_params());
    let horizon = exp.config.horizon;
    let deterministic = oracle.is_deterministic();
    let targets = if deterministic {
        Vec::new()
    } else {
        spot_steps(horizon, exp.config.checks.descent_steps)
    };
    let grad0 = exp.objective.grad_full(&exp.w0)?;

    let mut entries = Vec::new();
    let mut frozen: Vec<(OptimizerState, f64, f64, SeriesAccumulator)> = Vec::new();
    let mut m0_error = 0.0;
    run_update_sequence_with(
        exp.w0.clone(),
        &exp.optimizer,
        &exp.steps,
        &exp.batches,
        &oracle,
        horizon,
        exp.streams(trial),
        |pre, out| {
            let t = pre.t;
            if t == 0 {
                m0_error = out.state.momentum.sub(&grad0)?.frobenius_norm();
            }
            let f = exp.objective.eval_full(&pre.w)?;
            let g = exp.objective.grad_full(&pre.w)?.frobenius_norm();
            if deterministic {
                let next = exp.objective.eval_full(&out.state.w)?;
                let entry = match descent_rhs(exp, &c, f, g, t, &acc, m0_error) {
                    Rhs::Value(rhs) => DescentEntry {
                        t,
                        estimate: next,
                        stderr: 0.0,
                        rhs,
                        replicates: 1,
                        status: if next <= rhs + DESCENT_ROUNDING * f.abs().max(1.0) {
                            Status::Pass
                        } else {
                            Status::Fail
                        },
                        reason: None,
                    },
                    Rhs::Skipped(why) => skipped(t, next, why),
                };
                entries.push(entry);
            } else if targets.binary_search(&t).is_ok() {
                frozen.push((pre.clone(), f, g, acc.clone()));
            }
            acc.advance();
            Ok(())
        },
    )?;

    if !deterministic {
        let replicates = exp.config.checks.replicates;
        let spot: Vec<Result<DescentEntry, LabError>> = frozen
            .par_iter()
            .map(|(state, f, g, acc)| {
                let t = state.t;
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                let mut m0_sum = 0.0;
                for r in 0..replicates as u64 {
                    let mut rng = StreamKey::new(exp.config.seed, trial, Purpose::Replicate, (t << 24) | r).rng();
                    let out = step(
                        &exp.optimizer,
                        state,
                        &oracle,
                        exp.steps.at(t),
                        exp.batches.at(t),
                        &mut rng,
                    )?;
                    let next = exp.objective.eval_full(&out.state.w)?;
                    sum += next;
                    sum_sq += next * next;
                    if t == 0 {
                        m0_sum += out.state.momentum.sub(&grad0)?.frobenius_norm();
                    }
                }
                let n = replicates as f64;
                let mean = sum / n;
                let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
                let se = (var / n).sqrt();
                // at t = 0 the momentum error is itself part of the expectation
                let m0 = if t == 0 { m0_sum / n } else { m0_error };
                Ok(match descent_rhs(exp, &c, *f, *g, t, acc, m0) {
                    Rhs::Value(rhs) => DescentEntry {
                        t,
                        estimate: mean,
                        stderr: se,
                        rhs,
                        replicates,
                        status: if mean - STDERR_RULE * se > rhs {
                            Status::Fail
                        } else {
                            Status::Pass
                        },
                        reason: None,
                    },
                    Rhs::Skipped(why) => DescentEntry {
                        stderr: se,
                        replicates,
                        ..skipped(t, mean, why)
                    },
                })
            })
            .collect();
        entries = spot.into_iter().collect::<Result<_, _>>()?;
    }
    Ok(DescentReport {
        method,
        deterministic,
        entries,
    })
}

fn skipped(t: u64, estimate: f64, why: &'static str) -> DescentEntry {
    DescentEntry {
        t,
        estimate,
        stderr: 0.0,
        rhs: f64::NAN,
        replicates: 1,
        status: Status::Skipped,
        reason: Some(why),
    }
}

/// Schedule sums over `start..start + len` of the simulated (capped)
/// schedule.
pub fn window_sums(exp: &Experiment, start: u64, len: u64) -> WindowSums {
    let mut acc = SeriesAccumulator::new(exp.steps, exp.batches, exp.series_params());
    let snapshot = |acc: &SeriesAccumulator| WindowSums {
        eta: acc.sum(Series::Eta),
        eta_pow: acc.sum(Series::EtaPow),
        eta_pow_over_batch: acc.sum(Series::EtaPowOverBatch),
        eta_over_batch_root: acc.sum(Series::EtaOverBatchRoot),
        eta_beta: acc.sum(Series::EtaBeta),
        momentum_eta: acc.sum(Series::MomentumEta),
        momentum_batch: acc.sum(Series::MomentumBatch),
    };
    for _ in 0..start {
        acc.advance();
    }
    let a = snapshot(&acc);
    for _ in 0..len {
        acc.advance();
    }
    let b = snapshot(&acc);
    WindowSums {
        eta: b.eta - a.eta,
        eta_pow: b.eta_pow - a.eta_pow,
        eta_pow_over_batch: b.eta_pow_over_batch - a.eta_pow_over_batch,
        eta_over_batch_root: b.eta_over_batch_root - a.eta_over_batch_root,
        eta_beta: b.eta_beta - a.eta_beta,
        momentum_eta: b.momentum_eta - a.momentum_eta,
        momentum_batch: b.momentum_batch - a.momentum_batch,
    }
}

/// First step whose ensemble mean gradient norm is below a tenth of the
/// initial one.
pub fn lower_window_start(stats: &EnsembleStats) -> Option<u64> {
    let g0 = stats.rows.first()?.mean_g;
    stats.rows.iter().position(|r| r.mean_g < 0.1 * g0).map(|t| t as u64)
}

/// Upper and lower Cesàro envelopes at every configured horizon that fits in
/// the run.
pub fn envelope_check(exp: &Experiment, ens: &Ensemble) -> Result<Vec<ReportRow>, LabError> {
    let c = exp.constants()?;
    let method = exp.method();
    let moment = Moment::for_method(method);
    let stats = &ens.stats;
    let horizon = stats.len() as u64;
    let mut rows = Vec::new();
    let upper_id = format!("envelope-upper/{}", method.name());

    let start = match method {
        Method::Sgd => sgd_window_start(&c, |t| exp.steps.at(t), horizon),
        Method::Muon0 | Method::Muon => Some(0),
    };
    for &h in &exp.config.checks.horizons {
        let Some(t1) = start else {
            rows.push(ReportRow::new(
                &upper_id,
                h,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                Status::Unavailable,
            ));
            continue;
        };
        if t1 + h > horizon {
            rows.push(ReportRow::new(
                &upper_id,
                h,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                Status::Skipped,
            ));
            continue;
        }
        let sums = window_sums(exp, t1, h);
        let f_start = stats.mean_f_at(t1 as usize);
        let rhs = match method {
            Method::Sgd => sgd_upper_envelope(&c, f_start, exp.steps.at(t1), &sums).ok(),
            Method::Muon0 => Some(muon0_upper_envelope(&c, f_start, &sums)),
            Method::Muon => Some(muon_upper_envelope(
                &c,
                f_start,
                exp.beta(),
                stats.mean_m0_error.unwrap_or(0.0),
                &sums,
            )),
        };
        let (lhs, se) = cesaro_with_se(&ens.traces, moment, t1 as usize..(t1 + h) as usize)?;
        rows.push(match rhs {
            None => ReportRow::new(&upper_id, h, lhs, f64::NAN, f64::NAN, Status::Unavailable),
            Some(rhs) => {
                let status = if lhs - STDERR_RULE * se > rhs {
                    Status::Fail
                } else {
                    Status::Pass
                };
                ReportRow::new(&upper_id, h, lhs, rhs, rhs - lhs, status)
            }
        });
    }

    let mut lower_id = format!("envelope-lower/{}", method.name());
    if exp.config.objective.family != Family::PoweredDistance {
        lower_id.push_str("/convexity-assumed");
    }
    let root_n = match method {
        Method::Sgd => 1.0,
        Method::Muon0 | Method::Muon => c.n.sqrt(),
    };
    let t2 = lower_window_start(stats);
    for &h in &exp.config.checks.horizons {
        let Some(t2) = t2 else {
            rows.push(ReportRow::new(&lower_id, h, f64::NAN, 0.0, f64::NAN, Status::Vacuous));
            continue;
        };
        if t2 + h > horizon {
            rows.push(ReportRow::new(
                &lower_id,
                h,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                Status::Skipped,
            ));
            continue;
        }
        let f2 = stats.mean_f_at(t2 as usize);
        let drop = (t2 + 1..=t2 + h)
            .map(|t| f2 - stats.mean_f_at(t as usize))
            .fold(f64::INFINITY, f64::min);
        let eta_sum: f64 = (t2..t2 + h).map(|t| exp.steps.at(t)).sum();
        let rhs = drop / root_n / eta_sum;
        let (lhs, se) = cesaro_with_se(&ens.traces, moment, t2 as usize..(t2 + h) as usize)?;
        let status = if drop <= 0.0 {
            Status::Vacuous
        } else if lhs + STDERR_RULE * se < rhs {
            Status::Fail
        } else {
            Status::Pass
        };
        rows.push(ReportRow::new(&lower_id, h, lhs, rhs, lhs - rhs, status));
    }
    Ok(rows)
}

/// Slope of the min-grad metric against its target band.
pub fn rate_check(exp: &Experiment, stats: &EnsembleStats) -> Result<(RateFit, Vec<ReportRow>), LabError> {
    let method = exp.method();
    let target = min_grad_target(method, exp.steps.exponent());
    let fit = fit_rate(
        stats,
        RateMetric::MinGrad,
        Moment::for_method(method),
        &exp.config.checks.horizons,
        target,
    )?;
    let band = rate_band(method);
    let t = *fit.horizons.last().unwrap();
    let margin = band - (fit.slope - target).abs();
    let status = if margin >= 0.0 { Status::Pass } else { Status::Fail };
    let rows = vec![
        ReportRow::new(format!("rate/{}", method.name()), t, fit.slope, target, margin, status),
        ReportRow::new(
            format!("rate-raw-min/{}", method.name()),
            t,
            fit.raw_min_slope,
            target,
            band - (fit.raw_min_slope - target).abs(),
            Status::Info,
        ),
    ];
    Ok((fit, rows))
}

/// `min_{t<=T} E g_t` against the configured threshold.
pub fn stationarity_check(stats: &EnsembleStats, threshold: f64) -> ReportRow {
    let min = stats
        .rows
        .iter()
        .map(|r| r.mean_g)
        .chain([stats.final_mean_g])
        .fold(f64::INFINITY, f64::min);
    let status = if min < threshold { Status::Pass } else { Status::Fail };
    ReportRow::new(
        "stationarity",
        stats.len() as u64,
        min,
        threshold,
        threshold - min,
        status,
    )
}

/// Output of a full `run`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ensemble: Ensemble,
    pub descent: Option<DescentReport>,
    pub rate: Option<RateFit>,
    pub report: Vec<ReportRow>,
}

/// Runs the ensemble and every enabled check.
pub fn run_all(exp: &Experiment) -> Result<RunOutput, LabError> {
    let ensemble = run_ensemble(exp)?;
    let checks = &exp.config.checks;
    let mut report = Vec::new();
    let descent = if checks.descent {
        let d = descent_check(exp, 0)?;
        report.extend(d.rows());
        Some(d)
    } else {
        None
    };
    if checks.envelope {
        report.extend(envelope_check(exp, &ensemble)?);
    }
    let rate = if checks.rate {
        let (fit, rows) = rate_check(exp, &ensemble.stats)?;
        report.extend(rows);
        Some(fit)
    } else {
        None
    };
    if let Some(th) = checks.stationarity {
        report.push(stationarity_check(&ensemble.stats, th));
    }
    Ok(RunOutput {
        ensemble,
        descent,
        rate,
        report,
    })
}

/// Summability conditions of the configured method and schedule.
pub fn schedule_check(exp: &Experiment) -> Result<ConditionReport, LabError> {
    Ok(check_conditions(
        &exp.steps,
        &exp.batches,
        &exp.series_params(),
        exp.method(),
        &DEFAULT_HORIZONS,
    )?)
}

/// Half-width of the accepted band for the moment scaling slope.
pub const NOISE_SLOPE_BAND: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub b: u64,
    pub estimate: f64,
    pub stderr: f64,
    /// `2^{2-p} σ^p / b^{p-1}`
    pub bound: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub rows: Vec<NoiseRow>,
    pub slope: f64,
    pub target: f64,
    pub witness: Option<TailWitness>,
    pub report: Vec<ReportRow>,
}

/// Samples drawn for the tail witness.
pub const WITNESS_SAMPLES: usize = 1 << 22;

/// Mini-batch `p`-variance at each configured batch size, its decay in `b`,
/// the certified bound, and a tail witness for heavy-tailed noise.
pub fn noise_check(exp: &Experiment) -> Result<NoiseReport, LabError> {
    let oracle = exp.oracle()?;
    let p = exp.noise.p;
    let sigma_p = oracle.sigma_p()?;
    let checks = &exp.config.checks;
    let estimates: Vec<Result<_, LabError>> = checks
        .noise_batches
        .par_iter()
        .map(|&b| {
            let mut rng = StreamKey::new(exp.config.seed, 0, Purpose::Moment, b).rng();
            Ok(oracle.estimate_p_variance(&exp.w0, b, p, checks.noise_trials, &mut rng)?)
        })
        .collect();
    let mut rows = Vec::new();
    let mut report = Vec::new();
    for (&b, est) in checks.noise_batches.iter().zip(estimates) {
        let est = est?;
        let bound = 2f64.powf(2.0 - p) * sigma_p / (b as f64).powf(p - 1.0);
        let rel = if est.estimate > 0.0 {
            est.stderr / est.estimate
        } else {
            0.0
        };
        let status = if est.estimate <= bound * (1.0 + STDERR_RULE * rel) {
            Status::Pass
        } else {
            Status::Fail
        };
        report.push(ReportRow::new(
            "noise-moment-bound",
            b,
            est.estimate,
            bound,
            bound - est.estimate,
            status,
        ));
        rows.push(NoiseRow {
            b,
            estimate: est.estimate,
            stderr: est.stderr,
            bound,
            status,
        });
    }
    let target = -(p - 1.0);
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.estimate > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| (r.b as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.estimate.ln()).collect();
        let slope = linear_fit(&x, &y).0;
        let margin = NOISE_SLOPE_BAND - (slope - target).abs();
        let status = if margin >= 0.0 { Status::Pass } else { Status::Fail };
        let last = rows.last().map_or(0, |r| r.b);
        report.push(ReportRow::new("noise-scaling", last, slope, target, margin, status));
        slope
    } else {
        f64::NAN
    };
    let witness = if exp.noise.kind == NoiseKind::None {
        None
    } else {
        let mut rng = StreamKey::new(exp.config.seed, 0, Purpose::Moment, u64::MAX).rng();
        let w = tail_witness(&exp.noise, WITNESS_SAMPLES, &mut rng)?;
        let lo = w.hill_alpha - 2.0 * w.hill_stderr;
        let hi = w.hill_alpha + 2.0 * w.hill_stderr;
        let pass = |ok: bool| if ok { Status::Pass } else { Status::Fail };
        if exp.noise.is_heavy_tailed() {
            report.push(ReportRow::new(
                "noise-tail/infinite-variance",
                w.samples as u64,
                hi,
                2.0,
                2.0 - hi,
                pass(w.infinite_variance()),
            ));
        }
        if exp.noise.tail_index().is_some() {
            report.push(ReportRow::new(
                "noise-tail/finite-moment",
                w.samples as u64,
                lo,
                p,
                lo - p,
                pass(w.finite_moment(p)),
            ));
        }
        Some(w)
    };
    Ok(NoiseReport {
        rows,
        slope,
        target,
        witness,
        report,
    })
}
