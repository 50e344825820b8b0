//! Mini-batch SGD and Muon update rules.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linalg::{newton_schulz_orthogonalize, polar_factor_or_completion, NewtonSchulzConfig, Tolerances};
use crate::matrix::Matrix;
use crate::noise::GradientOracle;
use crate::rng::step_rng;
use crate::schedule::{BatchSchedule, StepSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub w: Matrix,
    /// `M_{t-1}`; unused by SGD.
    pub momentum: Matrix,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(w: Matrix) -> Self {
        let momentum = Matrix::zeros(w.rows(), w.cols());
        OptimizerState { w, momentum, t: 0 }
    }

    pub fn with_momentum(w: Matrix, momentum: Matrix) -> Result<Self, Error> {
        if w.shape() != momentum.shape() {
            return Err(Error::DimensionMismatch {
                op: "momentum",
                left: w.shape(),
                right: momentum.shape(),
            });
        }
        Ok(OptimizerState { w, momentum, t: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orthogonalizer {
    ExactSvd,
    NewtonSchulz(NewtonSchulzConfig),
}

impl Orthogonalizer {
    /// Orthogonal factor of a nonzero matrix, and whether a rank-deficient
    /// completion was used.
    pub fn apply(&self, m: &Matrix, tol: &Tolerances) -> Result<(Matrix, bool), Error> {
        match self {
            Orthogonalizer::ExactSvd => polar_factor_or_completion(m, tol),
            Orthogonalizer::NewtonSchulz(cfg) => Ok((newton_schulz_orthogonalize(m, cfg, tol)?, false)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuonConfig {
    pub beta: f64,
    pub orthogonalizer: Orthogonalizer,
    /// `M_{-1}`, zero when absent.
    pub m_init: Option<Matrix>,
    pub tolerances: Tolerances,
}

impl MuonConfig {
    pub fn new(beta: f64, orthogonalizer: Orthogonalizer) -> Result<Self, Error> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::param("beta", alloc::format!("must lie in [0, 1), got {beta}")));
        }
        Ok(MuonConfig {
            beta,
            orthogonalizer,
            m_init: None,
            tolerances: Tolerances::default(),
        })
    }
}

/// Update rule selection.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Muon(MuonConfig),
    /// Muon without momentum, `W - η polar(G)`, implemented without a
    /// momentum buffer.
    MuonNoMomentum(Orthogonalizer, Tolerances),
}

impl Optimizer {
    pub fn initial_state(&self, w0: Matrix) -> Result<OptimizerState, Error> {
        match self {
            Optimizer::Muon(MuonConfig { m_init: Some(m), .. }) => OptimizerState::with_momentum(w0, m.clone()),
            _ => Ok(OptimizerState::new(w0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionKind {
    Sgd,
    Muon,
    SkippedZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub direction_norm: f64,
    /// `‖G_t‖_F` of the mini-batch gradient.
    pub gradient_norm: f64,
    /// `M_t • O_t`, the nuclear norm of `M_t` for the exact orthogonalizer.
    /// `None` for SGD.
    pub alignment: Option<f64>,
    /// A rank-deficient momentum was completed.
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: OptimizerState,
    /// `D_t`, so that `W_{t+1} = W_t + η_t D_t`.
    pub direction: Matrix,
    pub kind: DirectionKind,
    /// The mini-batch gradient `G_t`.
    pub gradient: Matrix,
    pub diagnostics: StepDiagnostics,
}

fn check_step(eta: f64, b: u64) -> Result<(), Error> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::param("eta", "step size must be positive"));
    }
    if b == 0 {
        return Err(Error::param("b", "batch size must be at least 1"));
    }
    Ok(())
}

fn moved(w: &Matrix, eta: f64, dir: &Matrix) -> Matrix {
    let mut out = w.clone();
    for (x, d) in out.as_mut_slice().iter_mut().zip(dir.as_slice()) {
        *x -= eta * d;
    }
    out
}

/// `W_{t+1} = W_t - η_t G_t`.
pub fn sgd_step<R: Rng + ?Sized>(
    state: &OptimizerState,
    oracle: &GradientOracle<'_>,
    eta: f64,
    b: u64,
    rng: &mut R,
) -> Result<StepOutcome, Error> {
    check_step(eta, b)?;
    let g = oracle.minibatch_gradient(&state.w, b, rng)?;
    let w = moved(&state.w, eta, &g);
    let gn = g.frobenius_norm();
    Ok(StepOutcome {
        state: OptimizerState {
            w,
            momentum: state.momentum.clone(),
            t: state.t + 1,
        },
        direction: g.scale(-1.0),
        kind: DirectionKind::Sgd,
        diagnostics: StepDiagnostics {
            direction_norm: gn,
            gradient_norm: gn,
            alignment: None,
            completed: false,
        },
        gradient: g,
    })
}

fn orthogonal_step(
    state: &OptimizerState,
    g: Matrix,
    m: Matrix,
    orth: &Orthogonalizer,
    tol: &Tolerances,
    eta: f64,
) -> Result<StepOutcome, Error> {
    let gradient_norm = g.frobenius_norm();
    if m.is_zero() {
        return Ok(StepOutcome {
            state: OptimizerState {
                w: state.w.clone(),
                momentum: m,
                t: state.t + 1,
            },
            direction: Matrix::zeros(g.rows(), g.cols()),
            kind: DirectionKind::SkippedZero,
            gradient: g,
            diagnostics: StepDiagnostics {
                direction_norm: 0.0,
                gradient_norm,
                alignment: Some(0.0),
                completed: false,
            },
        });
    }
    let (o, completed) = orth.apply(&m, tol)?;
    let w = moved(&state.w, eta, &o);
    let alignment = m.inner(&o)?;
    Ok(StepOutcome {
        state: OptimizerState {
            w,
            momentum: m,
            t: state.t + 1,
        },
        diagnostics: StepDiagnostics {
            direction_norm: o.frobenius_norm(),
            gradient_norm,
            alignment: Some(alignment),
            completed,
        },
        direction: o.scale(-1.0),
        kind: DirectionKind::Muon,
        gradient: g,
    })
}

/// `M_t = β M_{t-1} + (1-β) G_t`, `W_{t+1} = W_t - η_t polar(M_t)`.
pub fn muon_step<R: Rng + ?Sized>(
    state: &OptimizerState,
    oracle: &GradientOracle<'_>,
    cfg: &MuonConfig,
    eta: f64,
    b: u64,
    rng: &mut R,
) -> Result<StepOutcome, Error> {
    check_step(eta, b)?;
    let g = oracle.minibatch_gradient(&state.w, b, rng)?;
    let beta = cfg.beta;
    let mut m = state.momentum.clone();
    for (x, gi) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *x = beta * *x + (1.0 - beta) * gi;
    }
    orthogonal_step(state, g, m, &cfg.orthogonalizer, &cfg.tolerances, eta)
}

/// `W_{t+1} = W_t - η_t U_t V_tᵀ` with `G_t = U_t Σ_t V_tᵀ`.
pub fn muon_no_momentum_step<R: Rng + ?Sized>(
    state: &OptimizerState,
    oracle: &GradientOracle<'_>,
    orth: &Orthogonalizer,
    tol: &Tolerances,
    eta: f64,
    b: u64,
    rng: &mut R,
) -> Result<StepOutcome, Error> {
    check_step(eta, b)?;
    let g = oracle.minibatch_gradient(&state.w, b, rng)?;
    let m = g.clone();
    orthogonal_step(state, g, m, orth, tol, eta)
}

/// One step of `optimizer`.
pub fn step<R: Rng + ?Sized>(
    optimizer: &Optimizer,
    state: &OptimizerState,
    oracle: &GradientOracle<'_>,
    eta: f64,
    b: u64,
    rng: &mut R,
) -> Result<StepOutcome, Error> {
    match optimizer {
        Optimizer::Sgd => sgd_step(state, oracle, eta, b, rng),
        Optimizer::Muon(cfg) => muon_step(state, oracle, cfg, eta, b, rng),
        Optimizer::MuonNoMomentum(orth, tol) => muon_no_momentum_step(state, oracle, orth, tol, eta, b, rng),
    }
}

/// Per-step random streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepStreams {
    pub seed: u64,
    pub trial: u64,
}

impl StepStreams {
    pub fn rng(&self, t: u64) -> ChaCha8Rng {
        step_rng(self.seed, self.trial, t)
    }
}

/// Runs `horizon` steps, handing each pre-step state and outcome to `visit`.
#[allow(clippy::too_many_arguments)]
pub fn run_update_sequence_with<F>(
    w0: Matrix,
    optimizer: &Optimizer,
    step_schedule: &StepSchedule,
    batch_schedule: &BatchSchedule,
    oracle: &GradientOracle<'_>,
    horizon: u64,
    streams: StepStreams,
    mut visit: F,
) -> Result<OptimizerState, Error>
where
    F: FnMut(&OptimizerState, &StepOutcome) -> Result<(), Error>,
{
    if horizon == 0 {
        return Err(Error::param("T", "horizon must be at least 1"));
    }
    let mut state = optimizer.initial_state(w0)?;
    for t in 0..horizon {
        let mut rng = streams.rng(t);
        let out = step(
            optimizer,
            &state,
            oracle,
            step_schedule.at(t),
            batch_schedule.at(t),
            &mut rng,
        )?;
        visit(&state, &out)?;
        state = out.state;
    }
    Ok(state)
}

/// Runs `horizon` steps and collects every outcome.
pub fn run_update_sequence(
    w0: Matrix,
    optimizer: &Optimizer,
    step_schedule: &StepSchedule,
    batch_schedule: &BatchSchedule,
    oracle: &GradientOracle<'_>,
    horizon: u64,
    streams: StepStreams,
) -> Result<Vec<StepOutcome>, Error> {
    let mut out = Vec::with_capacity(horizon as usize);
    run_update_sequence_with(
        w0,
        optimizer,
        step_schedule,
        batch_schedule,
        oracle,
        horizon,
        streams,
        |_, o| {
            out.push(o.clone());
            Ok(())
        },
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ComponentSpec, HolderObjective};
    use alloc::vec;

    fn quadratic(anchor: Matrix) -> HolderObjective {
        HolderObjective::new(vec![ComponentSpec::powered_distance(anchor, 1.0, 1.0)]).unwrap()
    }

    #[test]
    fn sgd_unit_quadratic_lands_on_anchor() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let obj = quadratic(a.clone());
        let oracle = GradientOracle::exact(&obj);
        let s = OptimizerState::new(Matrix::zeros(2, 2));
        let out = sgd_step(&s, &oracle, 1.0, 1, &mut step_rng(0, 0, 0)).unwrap();
        assert_eq!(out.state.w, a);
        let again = sgd_step(&out.state, &oracle, 1.0, 1, &mut step_rng(0, 0, 1)).unwrap();
        assert_eq!(again.state.w, a);
    }

    #[test]
    fn muon_on_positive_diagonal_moves_by_identity() {
        // ∇f(W) = W - A; pick W - A = diag(2, 3).
        let a = Matrix::zeros(2, 2);
        let obj = quadratic(a);
        let oracle = GradientOracle::exact(&obj);
        let w = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]).unwrap();
        let cfg = MuonConfig::new(0.0, Orthogonalizer::ExactSvd).unwrap();
        let out = muon_step(
            &OptimizerState::new(w.clone()),
            &oracle,
            &cfg,
            0.5,
            1,
            &mut step_rng(0, 0, 0),
        )
        .unwrap();
        let want = Matrix::from_rows(&[&[1.5, 0.0], &[0.0, 2.5]]).unwrap();
        assert!(out.state.w.sub(&want).unwrap().max_abs() < 1e-15);
        assert_eq!(out.kind, DirectionKind::Muon);
    }

    #[test]
    fn zero_momentum_is_skipped() {
        let a = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let obj = quadratic(a.clone());
        let oracle = GradientOracle::exact(&obj);
        let cfg = MuonConfig::new(0.5, Orthogonalizer::ExactSvd).unwrap();
        let out = muon_step(
            &OptimizerState::new(a.clone()),
            &oracle,
            &cfg,
            1.0,
            1,
            &mut step_rng(0, 0, 0),
        )
        .unwrap();
        assert_eq!(out.kind, DirectionKind::SkippedZero);
        assert_eq!(out.state.w, a);
        assert_eq!(out.state.t, 1);
    }

    #[test]
    fn rejects_bad_steps() {
        let obj = quadratic(Matrix::zeros(1, 1));
        let oracle = GradientOracle::exact(&obj);
        let s = OptimizerState::new(Matrix::identity(1));
        assert!(sgd_step(&s, &oracle, 0.0, 1, &mut step_rng(0, 0, 0)).is_err());
        assert!(sgd_step(&s, &oracle, 1.0, 0, &mut step_rng(0, 0, 0)).is_err());
        assert!(MuonConfig::new(1.0, Orthogonalizer::ExactSvd).is_err());
    }
}
