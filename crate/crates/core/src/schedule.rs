//! Step-size and batch-size schedules with summability diagnostics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::Error;

/// `η_t = η / (t + 1)^a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    eta: f64,
    a: f64,
}

impl StepSchedule {
    pub fn new(eta: f64, a: f64) -> Result<Self, Error> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::param("eta", format!("must be positive, got {eta}")));
        }
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::param("a", format!("must lie in (0, 1], got {a}")));
        }
        Ok(StepSchedule { eta, a })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn exponent(&self) -> f64 {
        self.a
    }

    pub fn at(&self, t: u64) -> f64 {
        self.eta / libm::pow(t as f64 + 1.0, self.a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchKind {
    Constant {
        b: u64,
    },
    /// `b_t = ceil(b δ^t)`.
    Geometric {
        b: u64,
        delta: f64,
    },
}

/// Batch schedule with an optional simulation cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSchedule {
    kind: BatchKind,
    max: Option<u64>,
}

impl BatchSchedule {
    pub fn constant(b: u64) -> Result<Self, Error> {
        Self::new(BatchKind::Constant { b }, None)
    }

    pub fn geometric(b: u64, delta: f64) -> Result<Self, Error> {
        Self::new(BatchKind::Geometric { b, delta }, None)
    }

    pub fn new(kind: BatchKind, max: Option<u64>) -> Result<Self, Error> {
        let b = match kind {
            BatchKind::Constant { b } => b,
            BatchKind::Geometric { b, delta } => {
                if !(delta > 1.0 && delta.is_finite()) {
                    return Err(Error::param("delta", format!("must exceed 1, got {delta}")));
                }
                b
            }
        };
        if b == 0 {
            return Err(Error::param("b", "batch size must be at least 1"));
        }
        if let Some(m) = max {
            if m < b {
                return Err(Error::param("max_batch", format!("must be at least b = {b}")));
            }
        }
        Ok(BatchSchedule { kind, max })
    }

    pub fn kind(&self) -> BatchKind {
        self.kind
    }

    pub fn max(&self) -> Option<u64> {
        self.max
    }

    /// The same schedule without the cap.
    pub fn uncapped(&self) -> Self {
        BatchSchedule {
            kind: self.kind,
            max: None,
        }
    }

    /// Real-valued `b δ^t` (or `b`), ignoring ceiling and cap.
    pub fn real_at(&self, t: u64) -> f64 {
        match self.kind {
            BatchKind::Constant { b } => b as f64,
            BatchKind::Geometric { b, delta } => b as f64 * libm::pow(delta, t as f64),
        }
    }

    /// Batch size as a float; infinite once `b δ^t` overflows and no cap
    /// applies.
    pub fn value_at(&self, t: u64) -> f64 {
        let v = libm::ceil(self.real_at(t));
        match self.max {
            Some(m) => v.min(m as f64),
            None => v,
        }
    }

    /// Integer batch size, saturating at `u64::MAX`.
    pub fn at(&self, t: u64) -> u64 {
        let v = self.value_at(t);
        if v >= u64::MAX as f64 {
            u64::MAX
        } else {
            v as u64
        }
    }

    /// First step at which the cap binds, if ever.
    pub fn cap_step(&self) -> Option<u64> {
        let m = self.max? as f64;
        match self.kind {
            BatchKind::Constant { .. } => None,
            BatchKind::Geometric { .. } => (0..4096).find(|&t| libm::ceil(self.real_at(t)) >= m),
        }
    }
}

/// The series entering the convergence conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Series {
    /// `Σ η_t`
    Eta,
    /// `Σ η_t^{1+ν}`
    EtaPow,
    /// `Σ η_t^{1+ν} / b_t^{p-1}`
    EtaPowOverBatch,
    /// `Σ η_t / b_t^{(p-1)/p}`
    EtaOverBatchRoot,
    /// `Σ η_t β^t`
    EtaBeta,
    /// `Σ η_t Σ_{i=1}^t β^i η_{t-i}^ν`
    MomentumEta,
    /// `Σ η_t Σ_{i=0}^t β^i / b_{t-i}^{(p-1)/p}`
    MomentumBatch,
}

impl Series {
    pub const ALL: [Series; 7] = [
        Series::Eta,
        Series::EtaPow,
        Series::EtaPowOverBatch,
        Series::EtaOverBatchRoot,
        Series::EtaBeta,
        Series::MomentumEta,
        Series::MomentumBatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Series::Eta => "sum_eta",
            Series::EtaPow => "sum_eta_pow",
            Series::EtaPowOverBatch => "sum_eta_pow_over_batch",
            Series::EtaOverBatchRoot => "sum_eta_over_batch_root",
            Series::EtaBeta => "sum_eta_beta",
            Series::MomentumEta => "sum_momentum_eta",
            Series::MomentumBatch => "sum_momentum_batch",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Exponents shared by the series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesParams {
    pub nu: f64,
    pub p: f64,
    pub beta: f64,
}

impl SeriesParams {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::param("nu", "must lie in (0, 1]"));
        }
        if !(self.p > 1.0 && self.p <= 2.0) {
            return Err(Error::param("p", "must lie in (1, 2]"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::param("beta", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `(p - 1) / p`
    pub fn q(&self) -> f64 {
        (self.p - 1.0) / self.p
    }
}

/// Partial sums of every series up to (excluding) step `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummabilityReport {
    pub horizon: u64,
    sums: [f64; 7],
    /// Integral lower bound on `Σ_{t<T} η_t`.
    pub eta_lower_bound: f64,
}

impl SummabilityReport {
    pub fn sum(&self, s: Series) -> f64 {
        self.sums[s.slot()]
    }
}

/// Running partial sums of all seven series, advanced one step at a time.
///
/// The double sums use `S_t = β (η_{t-1}^ν + S_{t-1})` and
/// `Q_t = b_t^{-q} + β Q_{t-1}`, which equal the direct inner sums.
#[derive(Debug, Clone)]
pub struct SeriesAccumulator {
    step: StepSchedule,
    batch: BatchSchedule,
    params: SeriesParams,
    t: u64,
    sums: [f64; 7],
    beta_pow: f64,
    inner_eta: f64,
    inner_batch: f64,
    prev_eta_nu: f64,
}

impl SeriesAccumulator {
    pub fn new(step: StepSchedule, batch: BatchSchedule, params: SeriesParams) -> Self {
        SeriesAccumulator {
            step,
            batch,
            params,
            t: 0,
            sums: [0.0; 7],
            beta_pow: 1.0,
            inner_eta: 0.0,
            inner_batch: 0.0,
            prev_eta_nu: 0.0,
        }
    }

    /// Steps absorbed so far.
    pub fn horizon(&self) -> u64 {
        self.t
    }

    /// `Σ_{i=1}^t β^i η_{t-i}^ν` for the next step `t`.
    pub fn next_inner_eta(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            self.params.beta * (self.prev_eta_nu + self.inner_eta)
        }
    }

    /// `Σ_{i=0}^t β^i / b_{t-i}^q` for the next step `t`.
    pub fn next_inner_batch(&self) -> f64 {
        let bq = libm::pow(self.batch.value_at(self.t), self.params.q());
        1.0 / bq + self.params.beta * self.inner_batch
    }

    pub fn advance(&mut self) {
        let SeriesParams { nu, p, beta } = self.params;
        let t = self.t;
        let eta = self.step.at(t);
        let b = self.batch.value_at(t);
        let eta_pow = libm::pow(eta, 1.0 + nu);
        let inner_eta = self.next_inner_eta();
        let inner_batch = self.next_inner_batch();
        let terms = [
            eta,
            eta_pow,
            eta_pow / libm::pow(b, p - 1.0),
            eta / libm::pow(b, self.params.q()),
            eta * self.beta_pow,
            eta * inner_eta,
            eta * inner_batch,
        ];
        for (s, x) in self.sums.iter_mut().zip(terms) {
            *s += x;
        }
        self.inner_eta = inner_eta;
        self.inner_batch = inner_batch;
        self.prev_eta_nu = libm::pow(eta, nu);
        self.beta_pow *= beta;
        self.t += 1;
    }

    pub fn sum(&self, s: Series) -> f64 {
        self.sums[s.slot()]
    }

    pub fn report(&self) -> SummabilityReport {
        SummabilityReport {
            horizon: self.t,
            sums: self.sums,
            eta_lower_bound: eta_lower_bound(&self.step, self.t),
        }
    }
}

/// `η/(1-a) ((T+1)^{1-a} - 1)`, or `η ln(T+1)` when `a = 1`, which bounds
/// `Σ_{t<T} η_t` from below.
pub fn eta_lower_bound(step: &StepSchedule, horizon: u64) -> f64 {
    let t1 = horizon as f64 + 1.0;
    if step.a == 1.0 {
        step.eta * libm::log(t1)
    } else {
        step.eta / (1.0 - step.a) * (libm::pow(t1, 1.0 - step.a) - 1.0)
    }
}

/// Direct partial sums of all series to horizon `T`.
pub fn partial_sums(
    step: &StepSchedule,
    batch: &BatchSchedule,
    params: &SeriesParams,
    horizon: u64,
) -> SummabilityReport {
    partial_sums_at(step, batch, params, &[horizon])
        .pop()
        .expect("one horizon")
}

/// Partial sums at several horizons in a single pass. Horizons need not be
/// sorted.
pub fn partial_sums_at(
    step: &StepSchedule,
    batch: &BatchSchedule,
    params: &SeriesParams,
    horizons: &[u64],
) -> Vec<SummabilityReport> {
    let mut order: Vec<usize> = (0..horizons.len()).collect();
    order.sort_by_key(|&i| horizons[i]);
    let mut out: Vec<Option<SummabilityReport>> = alloc::vec![None; horizons.len()];
    let mut acc = SeriesAccumulator::new(*step, *batch, *params);
    for i in order {
        while acc.horizon() < horizons[i] {
            acc.advance();
        }
        out[i] = Some(acc.report());
    }
    out.into_iter().map(|r| r.expect("filled")).collect()
}

/// A closed-form bound on a series, or a note that it diverges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cap {
    Finite(f64),
    Unbounded,
}

impl Cap {
    pub fn value(self) -> Option<f64> {
        match self {
            Cap::Finite(v) => Some(v),
            Cap::Unbounded => None,
        }
    }
}

/// Closed-form caps for the summable series.
///
/// `sound` is a bound valid for the whole series. `printed` is the
/// historically quoted closed form; two of those are too small (the geometric
/// batch sum misses a factor `δ^{p-1}`, the momentum double sum misses the
/// growth in `Σ η_t^{1+ν}`), so status decisions always use `sound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesCap {
    pub sound: Cap,
    pub printed: Cap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormCaps {
    caps: [SeriesCap; 7],
}

impl ClosedFormCaps {
    pub fn get(&self, s: Series) -> SeriesCap {
        self.caps[s.slot()]
    }
}

/// Closed-form caps for each series. `Series::Eta` is always unbounded.
pub fn closed_form_caps(step: &StepSchedule, batch: &BatchSchedule, params: &SeriesParams) -> ClosedFormCaps {
    let SeriesParams { nu, p, beta } = *params;
    let q = params.q();
    let eta = step.eta;
    let s = (1.0 + nu) * step.a;
    let eta_pow = libm::pow(eta, 1.0 + nu);
    let same = |c: Cap| SeriesCap { sound: c, printed: c };

    // Σ (t+1)^{-s} <= s/(s-1) for s > 1
    let zeta = if s > 1.0 { Some(s / (s - 1.0)) } else { None };

    let eta_pow_cap = same(zeta.map_or(Cap::Unbounded, |z| Cap::Finite(eta_pow * z)));

    let (pow_over_batch, over_root, momentum_batch) = match batch.kind {
        BatchKind::Constant { b } => {
            let b = b as f64;
            (
                same(zeta.map_or(Cap::Unbounded, |z| Cap::Finite(eta_pow * z / libm::pow(b, p - 1.0)))),
                same(Cap::Unbounded),
                same(Cap::Unbounded),
            )
        }
        BatchKind::Geometric { b, delta } => {
            let b = b as f64;
            let dp = libm::pow(delta, p - 1.0);
            let dq = libm::pow(delta, q);
            let bp = libm::pow(b, p - 1.0);
            let bq = libm::pow(b, q);
            (
                SeriesCap {
                    sound: Cap::Finite(eta_pow * dp / (bp * (dp - 1.0))),
                    printed: Cap::Finite(eta_pow / (bp * (dp - 1.0))),
                },
                same(Cap::Finite(eta * dq / (bq * (dq - 1.0)))),
                same(Cap::Finite(eta * dq / (bq * (1.0 - beta) * (dq - 1.0)))),
            )
        }
    };

    let momentum_eta = SeriesCap {
        sound: if beta == 0.0 {
            Cap::Finite(0.0)
        } else {
            zeta.map_or(Cap::Unbounded, |z| Cap::Finite(beta / (1.0 - beta) * eta_pow * z))
        },
        printed: Cap::Finite(eta_pow / (1.0 - beta)),
    };

    let mut caps = [same(Cap::Unbounded); 7];
    caps[Series::EtaPow.slot()] = eta_pow_cap;
    caps[Series::EtaPowOverBatch.slot()] = pow_over_batch;
    caps[Series::EtaOverBatchRoot.slot()] = over_root;
    caps[Series::EtaBeta.slot()] = same(Cap::Finite(eta / (1.0 - beta)));
    caps[Series::MomentumEta.slot()] = momentum_eta;
    caps[Series::MomentumBatch.slot()] = momentum_batch;
    ClosedFormCaps { caps }
}

/// Which method's summability conditions to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sgd,
    /// Muon without momentum.
    Muon0,
    Muon,
}

impl Method {
    pub fn required_series(self) -> &'static [Series] {
        match self {
            Method::Sgd => &[Series::Eta, Series::EtaPow, Series::EtaPowOverBatch],
            Method::Muon0 => &[Series::Eta, Series::EtaPow, Series::EtaOverBatchRoot],
            Method::Muon => &[
                Series::Eta,
                Series::EtaPow,
                Series::EtaBeta,
                Series::MomentumEta,
                Series::MomentumBatch,
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Muon0 => "muon0",
            Method::Muon => "muon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    CapCertified,
    CapExceeded,
    Unbounded,
    DivergenceWitnessed,
    DivergenceNotWitnessed,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::CapCertified => "cap-certified",
            RowStatus::CapExceeded => "cap-exceeded",
            RowStatus::Unbounded => "unbounded",
            RowStatus::DivergenceWitnessed => "divergence-witnessed",
            RowStatus::DivergenceNotWitnessed => "divergence-not-witnessed",
        }
    }

    pub fn is_pass(self) -> bool {
        matches!(self, RowStatus::CapCertified | RowStatus::DivergenceWitnessed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub series: Series,
    pub horizon: u64,
    pub partial_sum: f64,
    /// The cap, or for `Series::Eta` the divergence threshold `c T^{1-a}`.
    pub cap: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub method: Method,
    pub pass: bool,
    /// Required series that failed at some horizon, in check order.
    pub failures: Vec<Series>,
    pub rows: Vec<ConditionRow>,
}

pub const DEFAULT_HORIZONS: [u64; 5] = [10, 100, 1_000, 10_000, 100_000];

/// Divergence threshold `0.5 η T^{1-a} / (1-a)`, or `0.5 η ln(T+1)` at `a = 1`.
pub fn divergence_threshold(step: &StepSchedule, horizon: u64) -> f64 {
    if step.a == 1.0 {
        0.5 * step.eta * libm::log(horizon as f64 + 1.0)
    } else {
        0.5 * step.eta / (1.0 - step.a) * libm::pow(horizon as f64, 1.0 - step.a)
    }
}

/// Checks the summability conditions of `method` at the given horizons.
pub fn check_conditions(
    step: &StepSchedule,
    batch: &BatchSchedule,
    params: &SeriesParams,
    method: Method,
    horizons: &[u64],
) -> Result<ConditionReport, Error> {
    params.validate()?;
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::param("horizons", "need at least one positive horizon"));
    }
    // caps assume the geometric growth continues, so sums use it too
    let batch = batch.uncapped();
    let caps = closed_form_caps(step, &batch, params);
    let reports = partial_sums_at(step, &batch, params, horizons);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &series in method.required_series() {
        let mut ok = true;
        for r in &reports {
            let sum = r.sum(series);
            let (cap, status) = if series == Series::Eta {
                let thr = divergence_threshold(step, r.horizon);
                let st = if sum >= thr {
                    RowStatus::DivergenceWitnessed
                } else {
                    RowStatus::DivergenceNotWitnessed
                };
                (Some(thr), st)
            } else {
                match caps.get(series).sound {
                    Cap::Finite(c) if sum <= c => (Some(c), RowStatus::CapCertified),
                    Cap::Finite(c) => (Some(c), RowStatus::CapExceeded),
                    Cap::Unbounded => (None, RowStatus::Unbounded),
                }
            };
            ok &= status.is_pass();
            rows.push(ConditionRow {
                series,
                horizon: r.horizon,
                partial_sum: sum,
                cap,
                status,
            });
        }
        if !ok {
            failures.push(series);
        }
    }
    Ok(ConditionReport {
        method,
        pass: failures.is_empty(),
        failures,
        rows,
    })
}
