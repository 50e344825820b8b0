//! Additive noise laws and stochastic gradient oracles.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Pareto, StandardNormal, StudentT};

use crate::error::Error;
use crate::matrix::Matrix;
use crate::objective::HolderObjective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    None,
    Gaussian {
        std: f64,
    },
    /// Random sign times a Pareto(`x_m`, `alpha`) magnitude.
    SymmetricPareto {
        alpha: f64,
        x_m: f64,
    },
    StudentT {
        dof: f64,
        scale: f64,
    },
}

/// Entrywise i.i.d. noise with a declared moment order `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub p: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, p: f64) -> Result<Self, Error> {
        let m = NoiseModel { kind, p };
        m.validate()?;
        Ok(m)
    }

    pub fn none(p: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::None,
            p,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.p > 1.0 && self.p <= 2.0) {
            return Err(Error::param("p", format!("must lie in (1, 2], got {}", self.p)));
        }
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        };
        match self.kind {
            NoiseKind::None => Ok(()),
            NoiseKind::Gaussian { std } => positive("scale", std),
            NoiseKind::SymmetricPareto { alpha, x_m } => {
                positive("scale", x_m)?;
                tail_ok(alpha, self.p)
            }
            NoiseKind::StudentT { dof, scale } => {
                positive("scale", scale)?;
                tail_ok(dof, self.p)
            }
        }
    }

    /// Tail index, if the law is heavy-tailed at all.
    pub fn tail_index(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::SymmetricPareto { alpha, .. } => Some(alpha),
            NoiseKind::StudentT { dof, .. } => Some(dof),
            _ => None,
        }
    }

    /// Infinite variance, finite `p`-th moment.
    pub fn is_heavy_tailed(&self) -> bool {
        self.tail_index().is_some_and(|a| a <= 2.0)
    }

    pub fn sample_entry<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian { std } => {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            }
            NoiseKind::SymmetricPareto { alpha, x_m } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mag = Pareto::new(x_m, alpha).expect("validated").sample(rng);
                sign * mag
            }
            NoiseKind::StudentT { dof, scale } => scale * StudentT::new(dof).expect("validated").sample(rng),
        }
    }

    pub fn sample_matrix<R: Rng + ?Sized>(&self, shape: (usize, usize), rng: &mut R) -> Matrix {
        if self.kind == NoiseKind::None {
            return Matrix::zeros(shape.0, shape.1);
        }
        Matrix::from_fn(shape.0, shape.1, |_, _| self.sample_entry(rng))
    }

    /// `E |X|^q` of one entry.
    pub fn entry_abs_moment(&self, q: f64) -> Result<f64, Error> {
        match self.kind {
            NoiseKind::None => Ok(0.0),
            NoiseKind::Gaussian { std } => {
                // E|Z|^q = 2^{q/2} Γ((q+1)/2) / √π
                Ok(
                    libm::pow(std, q) * libm::pow(2.0, q / 2.0) * libm::tgamma((q + 1.0) / 2.0)
                        / libm::sqrt(core::f64::consts::PI),
                )
            }
            NoiseKind::SymmetricPareto { alpha, x_m } => pareto_abs_moment(alpha, x_m, q),
            NoiseKind::StudentT { dof, scale } => {
                if q >= dof {
                    return Err(Error::InfiniteMoment { p: q, alpha: dof });
                }
                let m = libm::pow(dof, q / 2.0) * libm::tgamma((q + 1.0) / 2.0) * libm::tgamma((dof - q) / 2.0)
                    / (libm::sqrt(core::f64::consts::PI) * libm::tgamma(dof / 2.0));
                Ok(libm::pow(scale, q) * m)
            }
        }
    }

    /// Certified `σ^p >= E ‖N‖_F^p` for an `m x n` noise matrix.
    ///
    /// With finite variance this is `(E ‖N‖²)^{p/2}`. Otherwise
    /// `(Σ x²)^{p/2} <= Σ |x|^p` for `p <= 2` gives `mn E|X|^p`.
    pub fn sigma_p_certificate(&self, shape: (usize, usize)) -> Result<f64, Error> {
        let k = (shape.0 * shape.1) as f64;
        let finite_var = match self.kind {
            NoiseKind::None => return Ok(0.0),
            NoiseKind::Gaussian { std } => Some(std * std),
            NoiseKind::SymmetricPareto { alpha, x_m } if alpha > 2.0 => Some(pareto_abs_moment(alpha, x_m, 2.0)?),
            NoiseKind::StudentT { dof, scale } if dof > 2.0 => Some(scale * scale * dof / (dof - 2.0)),
            _ => None,
        };
        match finite_var {
            Some(v) => Ok(libm::pow(k * v, self.p / 2.0).min(k * self.entry_abs_moment(self.p)?)),
            None => Ok(k * self.entry_abs_moment(self.p)?),
        }
    }
}

fn tail_ok(alpha: f64, p: f64) -> Result<(), Error> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("tail index must exceed 1, got {alpha}")));
    }
    if p >= alpha {
        return Err(Error::InfiniteMoment { p, alpha });
    }
    Ok(())
}

/// `E X^p = α x_m^p / (α - p)` for `X ~ Pareto(x_m, α)`.
pub fn pareto_abs_moment(alpha: f64, x_m: f64, p: f64) -> Result<f64, Error> {
    if !(x_m > 0.0) || !(alpha > 0.0) || !(p > 0.0) {
        return Err(Error::param("pareto", "alpha, x_m and p must be positive"));
    }
    if p >= alpha {
        return Err(Error::InfiniteMoment { p, alpha });
    }
    Ok(alpha * libm::pow(x_m, p) / (alpha - p))
}

/// Empirical evidence about which moments of a noise law exist.
#[derive(Debug, Clone, PartialEq)]
pub struct TailWitness {
    pub samples: usize,
    /// `(n, running mean of X², running mean of |X|^p)` at doubling sample counts.
    pub checkpoints: Vec<(usize, f64, f64)>,
    /// Hill estimate of the tail index from the top order statistics.
    pub hill_alpha: f64,
    pub hill_stderr: f64,
    pub upper_order_stats: usize,
}

impl TailWitness {
    /// The tail index is below 2 by more than two standard errors.
    pub fn infinite_variance(&self) -> bool {
        self.hill_alpha + 2.0 * self.hill_stderr < 2.0
    }

    /// The tail index exceeds `p` by more than two standard errors.
    pub fn finite_moment(&self, p: f64) -> bool {
        self.hill_alpha - 2.0 * self.hill_stderr > p
    }

    /// Growth of the running second moment over the last `doublings` checkpoints.
    pub fn second_moment_growth(&self, doublings: usize) -> f64 {
        let k = self.checkpoints.len();
        if k == 0 {
            return 1.0;
        }
        let from = k.saturating_sub(doublings + 1);
        self.checkpoints[k - 1].1 / self.checkpoints[from].1
    }
}

/// Draw `samples` entries of `noise` and estimate its tail behaviour.
pub fn tail_witness<R: Rng + ?Sized>(noise: &NoiseModel, samples: usize, rng: &mut R) -> Result<TailWitness, Error> {
    if samples < 1000 {
        return Err(Error::param("samples", "need at least 1000 samples"));
    }
    if noise.kind == NoiseKind::None {
        return Err(Error::param("noise", "no noise to analyse"));
    }
    let p = noise.p;
    let mut mags = Vec::with_capacity(samples);
    let mut checkpoints = Vec::new();
    let (mut s2, mut sp) = (0.0, 0.0);
    let mut next = 1000;
    for n in 1..=samples {
        let x = libm::fabs(noise.sample_entry(rng));
        s2 += x * x;
        sp += libm::pow(x, p);
        mags.push(x);
        if n == next || n == samples {
            checkpoints.push((n, s2 / n as f64, sp / n as f64));
            next *= 2;
        }
    }
    let k = (samples / 1000).max(10);
    mags.select_nth_unstable_by(samples - k - 1, |a, b| a.total_cmp(b));
    let threshold = mags[samples - k - 1];
    let mean_log: f64 = mags[samples - k..]
        .iter()
        .map(|&x| libm::log(x / threshold))
        .sum::<f64>()
        / k as f64;
    let hill_alpha = 1.0 / mean_log;
    Ok(TailWitness {
        samples,
        checkpoints,
        hill_alpha,
        hill_stderr: hill_alpha / libm::sqrt(k as f64),
        upper_order_stats: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Uniform component index, with replacement.
    IndexDuN,
    /// Full gradient plus an additive noise matrix.
    AdditiveNoise,
    /// Component gradient plus an additive noise matrix.
    Both,
}

/// Unbiased stochastic gradient of a [`HolderObjective`].
///
/// The oracle is immutable; randomness is supplied per call so independent
/// streams can be driven concurrently.
#[derive(Debug, Clone, Copy)]
pub struct GradientOracle<'a> {
    pub objective: &'a HolderObjective,
    pub sampling: Sampling,
    pub noise: NoiseModel,
}

/// Monte Carlo estimate of `E ‖X‖^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub p: f64,
    pub estimate: f64,
    pub trials: usize,
    pub stderr: f64,
}

impl<'a> GradientOracle<'a> {
    pub fn new(objective: &'a HolderObjective, sampling: Sampling, noise: NoiseModel) -> Result<Self, Error> {
        noise.validate()?;
        Ok(GradientOracle {
            objective,
            sampling,
            noise,
        })
    }

    /// Exact gradient, no noise.
    pub fn exact(objective: &'a HolderObjective) -> Self {
        GradientOracle {
            objective,
            sampling: Sampling::AdditiveNoise,
            noise: NoiseModel::none(2.0),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise.kind == NoiseKind::None && (self.sampling == Sampling::AdditiveNoise || self.objective.len() == 1)
    }

    fn index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.objective.len())
    }

    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, w: &Matrix, rng: &mut R) -> Result<Matrix, Error> {
        let shape = self.objective.shape();
        match self.sampling {
            Sampling::IndexDuN => {
                let i = self.index(rng);
                self.objective.grad_component(i, w)
            }
            Sampling::AdditiveNoise => {
                let mut g = self.objective.grad_full(w)?;
                g.add_assign(&self.noise.sample_matrix(shape, rng))?;
                Ok(g)
            }
            Sampling::Both => {
                let i = self.index(rng);
                let mut g = self.objective.grad_component(i, w)?;
                g.add_assign(&self.noise.sample_matrix(shape, rng))?;
                Ok(g)
            }
        }
    }

    /// Mean of `b` independent draws.
    ///
    /// The deterministic part and the noise are accumulated separately, so
    /// the additive oracle evaluates the full gradient once and a noiseless
    /// oracle returns it unchanged for every `b`.
    pub fn minibatch_gradient<R: Rng + ?Sized>(&self, w: &Matrix, b: u64, rng: &mut R) -> Result<Matrix, Error> {
        if b == 0 {
            return Err(Error::param("b", "batch size must be at least 1"));
        }
        if self.is_deterministic() {
            return self.objective.grad_full(w);
        }
        if b == 1 {
            return self.stochastic_gradient(w, rng);
        }
        let shape = self.objective.shape();
        let inv = 1.0 / b as f64;
        let mut base = match self.sampling {
            Sampling::AdditiveNoise => self.objective.grad_full(w)?,
            Sampling::IndexDuN | Sampling::Both => {
                let mut acc = Matrix::zeros(shape.0, shape.1);
                let mut noise = Matrix::zeros(shape.0, shape.1);
                for _ in 0..b {
                    let i = self.index(rng);
                    acc.add_assign(&self.objective.grad_component(i, w)?)?;
                    if self.sampling == Sampling::Both {
                        noise.add_assign(&self.noise.sample_matrix(shape, rng))?;
                    }
                }
                acc.scale_assign(inv);
                if self.sampling == Sampling::Both {
                    acc.axpy(inv, &noise)?;
                }
                return Ok(acc);
            }
        };
        if self.noise.kind != NoiseKind::None {
            let mut noise = Matrix::zeros(shape.0, shape.1);
            for _ in 0..b {
                for x in noise.as_mut_slice() {
                    *x += self.noise.sample_entry(rng);
                }
            }
            base.axpy(inv, &noise)?;
        }
        Ok(base)
    }

    /// Monte Carlo `E ‖∇f_ξ(W) - ∇f(W)‖^p` at batch size `b`.
    pub fn estimate_p_variance<R: Rng + ?Sized>(
        &self,
        w: &Matrix,
        b: u64,
        p: f64,
        trials: usize,
        rng: &mut R,
    ) -> Result<MomentEstimate, Error> {
        if trials < 100 {
            return Err(Error::param("trials", "need at least 100 trials"));
        }
        let full = self.objective.grad_full(w)?;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let g = self.minibatch_gradient(w, b, rng)?;
            let x = libm::pow(g.sub(&full)?.frobenius_norm(), p);
            sum += x;
            sum_sq += x * x;
        }
        let n = trials as f64;
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok(MomentEstimate {
            p,
            estimate: mean,
            trials,
            stderr: libm::sqrt(var / n),
        })
    }

    /// Certified `σ^p` for single draws: noise certificate, index-sampling
    /// bound, or `2^{p-1}` times their sum when both are present.
    pub fn sigma_p(&self) -> Result<f64, Error> {
        let shape = self.objective.shape();
        let p = self.noise.p;
        let noise = self.noise.sigma_p_certificate(shape)?;
        let index = || {
            if self.objective.len() == 1 {
                Ok(0.0)
            } else {
                self.objective.index_sigma_p(p)
            }
        };
        match self.sampling {
            Sampling::AdditiveNoise => Ok(noise),
            Sampling::IndexDuN => index(),
            Sampling::Both => Ok(libm::pow(2.0, p - 1.0) * (index()? + noise)),
        }
    }
}
