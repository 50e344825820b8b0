//! Run configuration: strict TOML parsing, range validation and a
//! canonical echo form.

use std::collections::BTreeSet;
use std::path::Path;

use muon_lab_core::linalg::{NewtonSchulzConfig, Tolerances};
use muon_lab_core::noise::{NoiseKind, Sampling};
use muon_lab_core::objective::Family;
use muon_lab_core::schedule::BatchKind;
use toml::{Table, Value};

use crate::error::{ConfigErrors, ConfigIssue, LabError};

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub family: Family,
    /// Number of components `N`.
    pub components: usize,
    pub rows: usize,
    pub cols: usize,
    pub nu: f64,
    pub scale: f64,
    /// Anchors are `anchor_scale` times standard normal matrices.
    pub anchor_scale: f64,
    /// `W_0` is `init_scale` times a standard normal matrix.
    pub init_scale: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            family: Family::PoweredDistance,
            components: 1,
            rows: 4,
            cols: 3,
            nu: 1.0,
            scale: 1.0,
            anchor_scale: 1.0,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub sampling: Sampling,
    pub p: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::None,
            sampling: Sampling::AdditiveNoise,
            p: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub eta: f64,
    pub a: f64,
    pub batch: BatchKind,
    /// Simulation cap on the batch size.
    pub max_batch: Option<u64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            eta: 0.1,
            a: 0.7,
            batch: BatchKind::Constant { b: 1 },
            max_batch: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Muon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrthogonalizerKind {
    ExactSvd,
    NewtonSchulz,
}

/// `M_{-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumInit {
    Zero,
    /// The full gradient at `W_0`.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta: f64,
    pub orthogonalizer: OrthogonalizerKind,
    pub ns: NewtonSchulzConfig,
    pub m_init: MomentumInit,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Muon,
            beta: 0.0,
            orthogonalizer: OrthogonalizerKind::ExactSvd,
            ns: NewtonSchulzConfig::cubic(),
            m_init: MomentumInit::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChecksConfig {
    /// Horizons for envelope and rate checks.
    pub horizons: Vec<u64>,
    pub descent: bool,
    /// Number of spot-checked steps in the stochastic regime.
    pub descent_steps: usize,
    /// Replicates `R` per spot check.
    pub replicates: usize,
    pub envelope: bool,
    pub rate: bool,
    /// Final `min_t g_t` must fall below this, when set.
    pub stationarity: Option<f64>,
    pub noise_trials: usize,
    pub noise_batches: Vec<u64>,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            horizons: vec![10, 20, 50, 100, 200],
            descent: true,
            descent_steps: 50,
            replicates: 10_000,
            envelope: true,
            rate: false,
            stationarity: None,
            noise_trials: 100_000,
            noise_batches: vec![1, 4, 16, 64, 256],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    /// Ensemble size `S`; trials `0..S`.
    pub seeds: u64,
    /// Steps per trial `T`.
    pub horizon: u64,
    pub out: String,
    pub objective: ObjectiveConfig,
    pub noise: NoiseConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub tolerances: Tolerances,
    pub checks: ChecksConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            seed: 0,
            seeds: 16,
            horizon: 200,
            out: "out".into(),
            objective: ObjectiveConfig::default(),
            noise: NoiseConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            tolerances: Tolerances::default(),
            checks: ChecksConfig::default(),
        }
    }
}

const ALIASES: &[(&str, &str)] = &[
    ("learning_rate", "eta"),
    ("lr", "eta"),
    ("step_size", "eta"),
    ("momentum", "beta"),
    ("batch_size", "b"),
    ("decay", "a"),
    ("steps", "horizon"),
    ("iterations", "K"),
    ("trials", "seeds"),
];

const TOP: &[&str] = &[
    "name",
    "seed",
    "seeds",
    "horizon",
    "out",
    "objective",
    "noise",
    "schedule",
    "optimizer",
    "tolerances",
    "checks",
];
const OBJECTIVE: &[&str] = &[
    "family",
    "components",
    "rows",
    "cols",
    "nu",
    "scale",
    "anchor_scale",
    "init_scale",
];
const NOISE: &[&str] = &["kind", "sampling", "p", "std", "alpha", "x_m", "dof", "scale"];
const SCHEDULE: &[&str] = &["eta", "a", "batch", "b", "delta", "max_batch"];
const OPTIMIZER: &[&str] = &["kind", "beta", "orthogonalizer", "m_init", "ns"];
const NS: &[&str] = &["preset", "K", "coeffs"];
const TOLERANCES: &[&str] = &["orth", "recon", "rank", "newton_schulz", "divergence_cap", "max_sweeps"];
const CHECKS: &[&str] = &[
    "horizons",
    "descent",
    "descent_steps",
    "replicates",
    "envelope",
    "rate",
    "stationarity",
    "noise_trials",
    "noise_batches",
];

fn sections() -> [(&'static str, &'static [&'static str]); 8] {
    [
        ("", TOP),
        ("objective", OBJECTIVE),
        ("noise", NOISE),
        ("schedule", SCHEDULE),
        ("optimizer", OPTIMIZER),
        ("optimizer.ns", NS),
        ("tolerances", TOLERANCES),
        ("checks", CHECKS),
    ]
}

fn join(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Suggestion for an unknown key: an alias first, then the closest known key.
fn suggest(section: &str, key: &str) -> Option<String> {
    let lower = key.to_ascii_lowercase();
    if let Some((_, target)) = ALIASES.iter().find(|(a, _)| *a == lower) {
        let owner = sections()
            .into_iter()
            .find(|(_, keys)| keys.contains(target))
            .map(|(s, _)| s)
            .unwrap_or(section);
        return Some(join(owner, target));
    }
    let known = sections().into_iter().find(|(s, _)| *s == section)?.1;
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(&lower, &k.to_ascii_lowercase()), *k))
        .filter(|(s, _)| *s >= 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| join(section, k))
}

struct Reader {
    issues: Vec<ConfigIssue>,
}

struct Section<'t> {
    path: &'static str,
    table: Option<&'t Table>,
    seen: BTreeSet<&'static str>,
}

impl Reader {
    fn issue(&mut self, path: String, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            path,
            message: message.into(),
        });
    }

    fn section<'t>(&mut self, parent: &'t Table, path: &'static str, key: &str) -> Section<'t> {
        let table = match parent.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.issue(path.to_string(), "expected a table");
                None
            }
        };
        Section {
            path,
            table,
            seen: BTreeSet::new(),
        }
    }

    fn get<'t>(&mut self, s: &mut Section<'t>, key: &'static str) -> Option<&'t Value> {
        s.seen.insert(key);
        s.table.and_then(|t| t.get(key))
    }

    fn f64(&mut self, s: &mut Section<'_>, key: &'static str, default: f64) -> f64 {
        match self.get(s, key) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => {
                self.issue(join(s.path, key), "expected a number");
                default
            }
        }
    }

    fn u64(&mut self, s: &mut Section<'_>, key: &'static str, default: u64) -> u64 {
        match self.get(s, key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(_) => {
                self.issue(join(s.path, key), "expected a non-negative integer");
                default
            }
        }
    }

    fn opt_u64(&mut self, s: &mut Section<'_>, key: &'static str) -> Option<u64> {
        match self.get(s, key) {
            None => None,
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(_) => {
                self.issue(join(s.path, key), "expected a non-negative integer");
                None
            }
        }
    }

    fn opt_f64(&mut self, s: &mut Section<'_>, key: &'static str) -> Option<f64> {
        match self.get(s, key) {
            None => None,
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.issue(join(s.path, key), "expected a number");
                None
            }
        }
    }

    fn bool(&mut self, s: &mut Section<'_>, key: &'static str, default: bool) -> bool {
        match self.get(s, key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.issue(join(s.path, key), "expected true or false");
                default
            }
        }
    }

    fn string(&mut self, s: &mut Section<'_>, key: &'static str) -> Option<String> {
        match self.get(s, key) {
            None => None,
            Some(Value::String(v)) => Some(v.clone()),
            Some(_) => {
                self.issue(join(s.path, key), "expected a string");
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, s: &mut Section<'_>, key: &'static str, options: &[(&str, T)], default: T) -> T {
        let Some(v) = self.string(s, key) else {
            return default;
        };
        match options.iter().find(|(name, _)| *name == v) {
            Some((_, t)) => *t,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.issue(
                    join(s.path, key),
                    format!("unknown value `{v}`, expected one of {}", names.join(", ")),
                );
                default
            }
        }
    }

    fn list<T>(
        &mut self,
        s: &mut Section<'_>,
        key: &'static str,
        default: Vec<T>,
        item: impl Fn(&Value) -> Option<T>,
    ) -> Vec<T> {
        match self.get(s, key) {
            None => default,
            Some(Value::Array(a)) => {
                let parsed: Option<Vec<T>> = a.iter().map(&item).collect();
                match parsed {
                    Some(v) => v,
                    None => {
                        self.issue(join(s.path, key), "list has entries of the wrong type");
                        default
                    }
                }
            }
            Some(_) => {
                self.issue(join(s.path, key), "expected a list");
                default
            }
        }
    }

    /// Unknown keys left in a section.
    fn finish(&mut self, s: Section<'_>) {
        let Some(t) = s.table else {
            return;
        };
        for key in t.keys() {
            if !s.seen.contains(key.as_str()) {
                let msg = match suggest(s.path, key) {
                    Some(k) => format!("unknown key, did you mean `{k}`?"),
                    None => "unknown key".to_string(),
                };
                self.issue(join(s.path, key), msg);
            }
        }
    }

    fn check(&mut self, ok: bool, path: &str, message: impl Into<String>) {
        if !ok {
            self.issue(path.to_string(), message);
        }
    }
}

fn as_u64(v: &Value) -> Option<u64> {
    v.as_integer().filter(|i| *i >= 0).map(|i| i as u64)
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

const FAMILIES: &[(&str, Family)] = &[
    ("powered-distance", Family::PoweredDistance),
    ("geman-mcclure", Family::GemanMcClure),
];
const SAMPLINGS: &[(&str, Sampling)] = &[
    ("additive", Sampling::AdditiveNoise),
    ("index", Sampling::IndexDuN),
    ("both", Sampling::Both),
];
const OPTIMIZERS: &[(&str, OptimizerKind)] = &[("sgd", OptimizerKind::Sgd), ("muon", OptimizerKind::Muon)];
const ORTHOGONALIZERS: &[(&str, OrthogonalizerKind)] = &[
    ("exact-svd", OrthogonalizerKind::ExactSvd),
    ("newton-schulz", OrthogonalizerKind::NewtonSchulz),
];
const M_INITS: &[(&str, MomentumInit)] = &[("zero", MomentumInit::Zero), ("gradient", MomentumInit::Gradient)];

#[derive(Clone, Copy, PartialEq)]
enum NoiseName {
    None,
    Gaussian,
    Pareto,
    StudentT,
}

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, t)| *t == v).map(|(n, _)| *n).expect("listed")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(ConfigErrors::single(path.display().to_string(), e.to_string())))?;
        Ok(Self::parse(&text)?)
    }

    /// Parses and validates, collecting every problem.
    pub fn parse(text: &str) -> Result<Self, ConfigErrors> {
        let root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigErrors::single("", format!("invalid TOML: {}", e.message())))?;
        let d = RunConfig::default();
        let mut r = Reader { issues: Vec::new() };

        let mut top = Section {
            path: "",
            table: Some(&root),
            seen: BTreeSet::new(),
        };
        let name = r.string(&mut top, "name").unwrap_or(d.name.clone());
        let seed = r.u64(&mut top, "seed", d.seed);
        let seeds = r.u64(&mut top, "seeds", d.seeds);
        let horizon = r.u64(&mut top, "horizon", d.horizon);
        let out = r.string(&mut top, "out").unwrap_or_else(|| format!("out/{name}"));
        for key in ["objective", "noise", "schedule", "optimizer", "tolerances", "checks"] {
            top.seen.insert(key);
        }
        r.finish(top);

        let od = ObjectiveConfig::default();
        let mut s = r.section(&root, "objective", "objective");
        let objective = ObjectiveConfig {
            family: r.choice(&mut s, "family", FAMILIES, od.family),
            components: r.u64(&mut s, "components", od.components as u64) as usize,
            rows: r.u64(&mut s, "rows", od.rows as u64) as usize,
            cols: r.u64(&mut s, "cols", od.cols as u64) as usize,
            nu: r.f64(&mut s, "nu", od.nu),
            scale: r.f64(&mut s, "scale", od.scale),
            anchor_scale: r.f64(&mut s, "anchor_scale", od.anchor_scale),
            init_scale: r.f64(&mut s, "init_scale", od.init_scale),
        };
        r.finish(s);

        let mut s = r.section(&root, "noise", "noise");
        let kinds = [
            ("none", NoiseName::None),
            ("gaussian", NoiseName::Gaussian),
            ("pareto", NoiseName::Pareto),
            ("student-t", NoiseName::StudentT),
        ];
        let kind_name = r.choice(&mut s, "kind", &kinds, NoiseName::None);
        let sampling = r.choice(&mut s, "sampling", SAMPLINGS, Sampling::AdditiveNoise);
        let p = r.f64(&mut s, "p", 2.0);
        let kind = match kind_name {
            NoiseName::None => NoiseKind::None,
            NoiseName::Gaussian => NoiseKind::Gaussian {
                std: r.f64(&mut s, "std", 1.0),
            },
            NoiseName::Pareto => NoiseKind::SymmetricPareto {
                alpha: r.f64(&mut s, "alpha", 1.8),
                x_m: r.f64(&mut s, "x_m", 1.0),
            },
            NoiseName::StudentT => NoiseKind::StudentT {
                dof: r.f64(&mut s, "dof", 3.0),
                scale: r.f64(&mut s, "scale", 1.0),
            },
        };
        if let Some(t) = s.table {
            for key in ["std", "alpha", "x_m", "dof", "scale"] {
                if t.contains_key(key) && !s.seen.contains(key) {
                    s.seen.insert(key);
                    let kind = kinds
                        .iter()
                        .find(|(_, k)| *k == kind_name)
                        .map(|(n, _)| *n)
                        .unwrap_or("none");
                    r.issue(join("noise", key), format!("not used by noise kind `{kind}`"));
                }
            }
        }
        r.finish(s);
        let noise = NoiseConfig { kind, sampling, p };

        let sd = ScheduleConfig::default();
        let mut s = r.section(&root, "schedule", "schedule");
        let eta = r.f64(&mut s, "eta", sd.eta);
        let a = r.f64(&mut s, "a", sd.a);
        let geometric = r.choice(&mut s, "batch", &[("constant", false), ("geometric", true)], false);
        let b = r.u64(&mut s, "b", 1);
        let batch = if geometric {
            BatchKind::Geometric {
                b,
                delta: r.f64(&mut s, "delta", 2.0),
            }
        } else {
            if s.table.is_some_and(|t| t.contains_key("delta")) {
                s.seen.insert("delta");
                r.issue("schedule.delta".into(), "only used with batch = \"geometric\"");
            }
            BatchKind::Constant { b }
        };
        let max_batch = r.opt_u64(&mut s, "max_batch");
        r.finish(s);
        let schedule = ScheduleConfig {
            eta,
            a,
            batch,
            max_batch,
        };

        let pd = OptimizerConfig::default();
        let mut s = r.section(&root, "optimizer", "optimizer");
        let kind = r.choice(&mut s, "kind", OPTIMIZERS, pd.kind);
        let beta = r.f64(&mut s, "beta", pd.beta);
        let orthogonalizer = r.choice(&mut s, "orthogonalizer", ORTHOGONALIZERS, pd.orthogonalizer);
        let m_init = r.choice(&mut s, "m_init", M_INITS, pd.m_init);
        s.seen.insert("ns");
        let mut ns_sec = match s.table {
            Some(t) => r.section(t, "optimizer.ns", "ns"),
            None => Section {
                path: "optimizer.ns",
                table: None,
                seen: BTreeSet::new(),
            },
        };
        r.finish(s);
        let base = r.choice(
            &mut ns_sec,
            "preset",
            &[
                ("cubic", NewtonSchulzConfig::cubic()),
                ("quintic", NewtonSchulzConfig::quintic()),
            ],
            NewtonSchulzConfig::cubic(),
        );
        let iterations = r.u64(&mut ns_sec, "K", base.iterations as u64) as usize;
        let coeffs = r.list(&mut ns_sec, "coeffs", vec![base.a, base.b, base.c], as_f64);
        r.finish(ns_sec);
        r.check(
            coeffs.len() == 3,
            "optimizer.ns.coeffs",
            "expected three coefficients [a, b, c]",
        );
        let ns = NewtonSchulzConfig {
            a: coeffs.first().copied().unwrap_or(base.a),
            b: coeffs.get(1).copied().unwrap_or(base.b),
            c: coeffs.get(2).copied().unwrap_or(base.c),
            iterations,
        };
        let optimizer = OptimizerConfig {
            kind,
            beta,
            orthogonalizer,
            ns,
            m_init,
        };

        let td = Tolerances::default();
        let mut s = r.section(&root, "tolerances", "tolerances");
        let tolerances = Tolerances {
            orth: r.f64(&mut s, "orth", td.orth),
            recon: r.f64(&mut s, "recon", td.recon),
            rank: r.f64(&mut s, "rank", td.rank),
            newton_schulz: r.f64(&mut s, "newton_schulz", td.newton_schulz),
            divergence_cap: r.f64(&mut s, "divergence_cap", td.divergence_cap),
            max_sweeps: r.u64(&mut s, "max_sweeps", td.max_sweeps as u64) as usize,
        };
        r.finish(s);

        let cd = ChecksConfig::default();
        let mut s = r.section(&root, "checks", "checks");
        let checks = ChecksConfig {
            horizons: r.list(&mut s, "horizons", cd.horizons.clone(), as_u64),
            descent: r.bool(&mut s, "descent", cd.descent),
            descent_steps: r.u64(&mut s, "descent_steps", cd.descent_steps as u64) as usize,
            replicates: r.u64(&mut s, "replicates", cd.replicates as u64) as usize,
            envelope: r.bool(&mut s, "envelope", cd.envelope),
            rate: r.bool(&mut s, "rate", cd.rate),
            stationarity: r.opt_f64(&mut s, "stationarity"),
            noise_trials: r.u64(&mut s, "noise_trials", cd.noise_trials as u64) as usize,
            noise_batches: r.list(&mut s, "noise_batches", cd.noise_batches.clone(), as_u64),
        };
        r.finish(s);

        let cfg = RunConfig {
            name,
            seed,
            seeds,
            horizon,
            out,
            objective,
            noise,
            schedule,
            optimizer,
            tolerances,
            checks,
        };
        cfg.validate_into(&mut r);
        if r.issues.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigErrors(r.issues))
        }
    }

    /// Range checks. Every violation names the field and its bound.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut r = Reader { issues: Vec::new() };
        self.validate_into(&mut r);
        if r.issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(r.issues))
        }
    }

    fn validate_into(&self, r: &mut Reader) {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        r.check(self.seeds >= 1, "seeds", format!("= {} must be at least 1", self.seeds));
        r.check(
            self.horizon >= 1,
            "horizon",
            format!("= {} must be at least 1", self.horizon),
        );

        let o = &self.objective;
        r.check(o.components >= 1, "objective.components", "must be at least 1");
        r.check(
            o.rows >= 1 && o.cols >= 1,
            "objective.rows",
            "matrix dimensions must be at least 1",
        );
        r.check(
            o.nu > 0.0 && o.nu <= 1.0,
            "objective.nu",
            format!("= {} is outside (0, 1]", o.nu),
        );
        if o.family == Family::GemanMcClure {
            r.check(o.nu == 1.0, "objective.nu", "geman-mcclure requires nu = 1");
        }
        r.check(
            positive(o.scale),
            "objective.scale",
            format!("= {} must be positive", o.scale),
        );
        r.check(
            o.anchor_scale >= 0.0 && o.anchor_scale.is_finite(),
            "objective.anchor_scale",
            "must be non-negative",
        );
        r.check(
            o.init_scale >= 0.0 && o.init_scale.is_finite(),
            "objective.init_scale",
            "must be non-negative",
        );

        let n = &self.noise;
        r.check(
            n.p > 1.0 && n.p <= 2.0,
            "noise.p",
            format!("= {} is outside (1, 2]", n.p),
        );
        match n.kind {
            NoiseKind::None => {}
            NoiseKind::Gaussian { std } => r.check(positive(std), "noise.std", "must be positive"),
            NoiseKind::SymmetricPareto { alpha, x_m } => {
                r.check(positive(x_m), "noise.x_m", "must be positive");
                r.check(
                    alpha > n.p,
                    "noise.alpha",
                    format!("= {alpha} must exceed p = {} for a finite p-th moment", n.p),
                );
            }
            NoiseKind::StudentT { dof, scale } => {
                r.check(positive(scale), "noise.scale", "must be positive");
                r.check(
                    dof > n.p,
                    "noise.dof",
                    format!("= {dof} must exceed p = {} for a finite p-th moment", n.p),
                );
            }
        }

        let s = &self.schedule;
        r.check(positive(s.eta), "schedule.eta", format!("= {} must be positive", s.eta));
        r.check(
            s.a > 0.0 && s.a <= 1.0,
            "schedule.a",
            format!("= {} is outside (0, 1]", s.a),
        );
        let b = match s.batch {
            BatchKind::Constant { b } => b,
            BatchKind::Geometric { b, delta } => {
                r.check(
                    delta > 1.0 && delta.is_finite(),
                    "schedule.delta",
                    format!("= {delta} must exceed 1"),
                );
                b
            }
        };
        r.check(b >= 1, "schedule.b", "must be at least 1");
        if let Some(m) = s.max_batch {
            r.check(m >= b, "schedule.max_batch", format!("= {m} must be at least b = {b}"));
        }
        if matches!(s.batch, BatchKind::Geometric { .. }) && s.max_batch.is_none() {
            r.issue("schedule.max_batch".into(), "geometric batches need a simulation cap");
        }

        let p = &self.optimizer;
        r.check(
            (0.0..1.0).contains(&p.beta),
            "optimizer.beta",
            format!("= {} is outside [0, 1)", p.beta),
        );
        r.check(p.ns.iterations >= 1, "optimizer.ns.K", "must be at least 1");
        r.check(
            [p.ns.a, p.ns.b, p.ns.c].iter().all(|x| x.is_finite()),
            "optimizer.ns.coeffs",
            "must be finite",
        );

        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.orth", t.orth),
            ("tolerances.recon", t.recon),
            ("tolerances.rank", t.rank),
            ("tolerances.newton_schulz", t.newton_schulz),
            ("tolerances.divergence_cap", t.divergence_cap),
        ] {
            r.check(positive(v), name, "must be positive");
        }
        r.check(t.max_sweeps >= 1, "tolerances.max_sweeps", "must be at least 1");

        let c = &self.checks;
        r.check(
            !c.horizons.is_empty() && c.horizons.iter().all(|&h| h >= 1),
            "checks.horizons",
            "need at least one positive horizon",
        );
        r.check(
            c.horizons.windows(2).all(|w| w[0] < w[1]),
            "checks.horizons",
            "must be strictly increasing",
        );
        r.check(
            c.replicates >= 100,
            "checks.replicates",
            format!("= {} must be at least 100", c.replicates),
        );
        r.check(c.descent_steps >= 1, "checks.descent_steps", "must be at least 1");
        r.check(c.noise_trials >= 100, "checks.noise_trials", "must be at least 100");
        r.check(
            !c.noise_batches.is_empty() && c.noise_batches.iter().all(|&b| b >= 1),
            "checks.noise_batches",
            "need at least one batch size of 1 or more",
        );
        if let Some(th) = c.stationarity {
            r.check(positive(th), "checks.stationarity", "must be positive");
        }
    }

    /// Canonical TOML: every field present, keys sorted within sections.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("name".into(), self.name.clone().into());
        root.insert("seed".into(), (self.seed as i64).into());
        root.insert("seeds".into(), (self.seeds as i64).into());
        root.insert("horizon".into(), (self.horizon as i64).into());
        root.insert("out".into(), self.out.clone().into());

        let o = &self.objective;
        let mut t = Table::new();
        t.insert("family".into(), name_of(FAMILIES, o.family).into());
        t.insert("components".into(), (o.components as i64).into());
        t.insert("rows".into(), (o.rows as i64).into());
        t.insert("cols".into(), (o.cols as i64).into());
        t.insert("nu".into(), o.nu.into());
        t.insert("scale".into(), o.scale.into());
        t.insert("anchor_scale".into(), o.anchor_scale.into());
        t.insert("init_scale".into(), o.init_scale.into());
        root.insert("objective".into(), t.into());

        let n = &self.noise;
        let mut t = Table::new();
        t.insert("sampling".into(), name_of(SAMPLINGS, n.sampling).into());
        t.insert("p".into(), n.p.into());
        let kind = match n.kind {
            NoiseKind::None => "none",
            NoiseKind::Gaussian { std } => {
                t.insert("std".into(), std.into());
                "gaussian"
            }
            NoiseKind::SymmetricPareto { alpha, x_m } => {
                t.insert("alpha".into(), alpha.into());
                t.insert("x_m".into(), x_m.into());
                "pareto"
            }
            NoiseKind::StudentT { dof, scale } => {
                t.insert("dof".into(), dof.into());
                t.insert("scale".into(), scale.into());
                "student-t"
            }
        };
        t.insert("kind".into(), kind.into());
        root.insert("noise".into(), t.into());

        let s = &self.schedule;
        let mut t = Table::new();
        t.insert("eta".into(), s.eta.into());
        t.insert("a".into(), s.a.into());
        match s.batch {
            BatchKind::Constant { b } => {
                t.insert("batch".into(), "constant".into());
                t.insert("b".into(), (b as i64).into());
            }
            BatchKind::Geometric { b, delta } => {
                t.insert("batch".into(), "geometric".into());
                t.insert("b".into(), (b as i64).into());
                t.insert("delta".into(), delta.into());
            }
        }
        if let Some(m) = s.max_batch {
            t.insert("max_batch".into(), (m as i64).into());
        }
        root.insert("schedule".into(), t.into());

        let p = &self.optimizer;
        let mut t = Table::new();
        t.insert("kind".into(), name_of(OPTIMIZERS, p.kind).into());
        t.insert("beta".into(), p.beta.into());
        t.insert(
            "orthogonalizer".into(),
            name_of(ORTHOGONALIZERS, p.orthogonalizer).into(),
        );
        t.insert("m_init".into(), name_of(M_INITS, p.m_init).into());
        let mut ns = Table::new();
        ns.insert("K".into(), (p.ns.iterations as i64).into());
        ns.insert(
            "coeffs".into(),
            Value::Array(vec![p.ns.a.into(), p.ns.b.into(), p.ns.c.into()]),
        );
        t.insert("ns".into(), ns.into());
        root.insert("optimizer".into(), t.into());

        let tol = &self.tolerances;
        let mut t = Table::new();
        t.insert("orth".into(), tol.orth.into());
        t.insert("recon".into(), tol.recon.into());
        t.insert("rank".into(), tol.rank.into());
        t.insert("newton_schulz".into(), tol.newton_schulz.into());
        t.insert("divergence_cap".into(), tol.divergence_cap.into());
        t.insert("max_sweeps".into(), (tol.max_sweeps as i64).into());
        root.insert("tolerances".into(), t.into());

        let c = &self.checks;
        let mut t = Table::new();
        let ints = |v: &[u64]| Value::Array(v.iter().map(|&x| Value::Integer(x as i64)).collect());
        t.insert("horizons".into(), ints(&c.horizons));
        t.insert("descent".into(), c.descent.into());
        t.insert("descent_steps".into(), (c.descent_steps as i64).into());
        t.insert("replicates".into(), (c.replicates as i64).into());
        t.insert("envelope".into(), c.envelope.into());
        t.insert("rate".into(), c.rate.into());
        if let Some(th) = c.stationarity {
            t.insert("stationarity".into(), th.into());
        }
        t.insert("noise_trials".into(), (c.noise_trials as i64).into());
        t.insert("noise_batches".into(), ints(&c.noise_batches));
        root.insert("checks".into(), t.into());

        toml::to_string(&root).expect("plain table serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(
            cfg,
            RunConfig {
                out: "out/run".into(),
                ..RunConfig::default()
            }
        );
    }

    #[test]
    fn suggestions() {
        assert_eq!(suggest("", "learning_rate").as_deref(), Some("schedule.eta"));
        assert_eq!(suggest("optimizer", "momentum").as_deref(), Some("optimizer.beta"));
        assert_eq!(suggest("objective", "sacle").as_deref(), Some("objective.scale"));
        assert_eq!(suggest("checks", "zzzz"), None);
    }
}
