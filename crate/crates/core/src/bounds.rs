//! One-step descent bounds and Cesàro-rate envelopes.

use crate::error::Error;

/// Problem constants entering every bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    /// Mean Hölder constant `L`.
    pub l: f64,
    pub nu: f64,
    pub p: f64,
    /// Certified `σ^p`.
    pub sigma_p: f64,
    /// Column count `n` (the smaller dimension), so `‖O‖_F = √n`.
    pub n: f64,
    /// Lower bound `f*`.
    pub f_star: f64,
}

impl BoundConstants {
    pub fn sigma(&self) -> f64 {
        libm::pow(self.sigma_p, 1.0 / self.p)
    }

    /// `(p - 1) / p`
    pub fn q(&self) -> f64 {
        (self.p - 1.0) / self.p
    }

    pub fn validate(&self) -> Result<(), Error> {
        let ok = self.l > 0.0
            && self.nu > 0.0
            && self.nu <= 1.0
            && self.p > 1.0
            && self.p <= 2.0
            && self.sigma_p >= 0.0
            && self.sigma_p.is_finite()
            && self.n >= 1.0
            && self.f_star.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::param("bound constants", "out of range"))
        }
    }
}

/// Why a bound does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unavailable {
    /// The SGD bound needs `1 + ν <= p`.
    ExponentAboveMoment,
    /// The SGD bound needs `η^ν < 2 / L`.
    StepTooLarge,
}

impl Unavailable {
    pub fn reason(self) -> &'static str {
        match self {
            Unavailable::ExponentAboveMoment => "1+nu exceeds p",
            Unavailable::StepTooLarge => "eta^nu >= 2/L",
        }
    }
}

fn sgd_applicable(c: &BoundConstants, eta: f64) -> Result<(), Unavailable> {
    if 1.0 + c.nu > c.p + 1e-12 {
        return Err(Unavailable::ExponentAboveMoment);
    }
    if libm::pow(eta, c.nu) >= 2.0 / c.l {
        return Err(Unavailable::StepTooLarge);
    }
    Ok(())
}

/// Bound on `E[f(W_{t+1})]` for one SGD step from a state with `f(W_t) = f`
/// and `‖∇f(W_t)‖ = g`:
/// `f - η(1 - Lη^ν/2)g² + (1-ν)Lη^{1+ν}/(2(1+ν)) + 2^{3-(ν+p)}Lσ^p η^{1+ν}/((1+ν)b^{p-1})`.
pub fn sgd_descent_rhs(c: &BoundConstants, f: f64, g: f64, eta: f64, b: f64) -> Result<f64, Unavailable> {
    sgd_applicable(c, eta)?;
    let (l, nu, p) = (c.l, c.nu, c.p);
    let en = libm::pow(eta, nu);
    let e1 = eta * en;
    Ok(f - eta * (1.0 - l * en / 2.0) * g * g
        + (1.0 - nu) * l * e1 / (2.0 * (1.0 + nu))
        + libm::pow(2.0, 3.0 - (nu + p)) * l * c.sigma_p * e1 / ((1.0 + nu) * libm::pow(b, p - 1.0)))
}

/// Bound on `E[f(W_{t+1})]` for one Muon step without momentum:
/// `f - ηg + 2^{2/p}√n σ η / b^{(p-1)/p} + L n^{(1+ν)/2} η^{1+ν}/(1+ν)`.
pub fn muon0_descent_rhs(c: &BoundConstants, f: f64, g: f64, eta: f64, b: f64) -> f64 {
    let (l, nu) = (c.l, c.nu);
    f - eta * g
        + libm::pow(2.0, 2.0 / c.p) * libm::sqrt(c.n) * c.sigma() * eta / libm::pow(b, c.q())
        + l * libm::pow(c.n, (1.0 + nu) / 2.0) * libm::pow(eta, 1.0 + nu) / (1.0 + nu)
}

/// History-dependent inputs of the momentum bound at step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumTerms {
    pub beta: f64,
    pub t: u64,
    /// `‖M_0 - ∇f(W_0)‖_F`.
    pub m0_error: f64,
    /// `Σ_{i=1}^t β^i η_{t-i}^ν`.
    pub inner_eta: f64,
    /// `Σ_{i=0}^t β^i / b_{t-i}^{(p-1)/p}`.
    pub inner_batch: f64,
}

/// Bound on `E[f(W_{t+1})]` for one Muon step with momentum:
/// `f - ηg + 2√n η {β^t ‖M_0 - ∇f(W_0)‖ + L n^{ν/2} Σ β^i η_{t-i}^ν
///  + (1-β) 2^{(2-p)/p} σ Σ β^i / b_{t-i}^{(p-1)/p}} + L n^{(1+ν)/2} η^{1+ν}/(1+ν)`.
pub fn muon_descent_rhs(c: &BoundConstants, f: f64, g: f64, eta: f64, m: &MomentumTerms) -> f64 {
    let (l, nu, p) = (c.l, c.nu, c.p);
    let sqrt_n = libm::sqrt(c.n);
    let beta_t = libm::pow(m.beta, m.t as f64);
    let brace = beta_t * m.m0_error
        + l * libm::pow(c.n, nu / 2.0) * m.inner_eta
        + (1.0 - m.beta) * libm::pow(2.0, (2.0 - p) / p) * c.sigma() * m.inner_batch;
    f - eta * g
        + 2.0 * sqrt_n * eta * brace
        + l * libm::pow(c.n, (1.0 + nu) / 2.0) * libm::pow(eta, 1.0 + nu) / (1.0 + nu)
}

/// First step with `η_t^ν <= 0.9 · 2/L`.
pub fn sgd_window_start(c: &BoundConstants, eta_at: impl Fn(u64) -> f64, limit: u64) -> Option<u64> {
    let thr = 0.9 * 2.0 / c.l;
    (0..limit).find(|&t| libm::pow(eta_at(t), c.nu) <= thr)
}

/// Schedule sums over an envelope window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowSums {
    /// `Σ η_t`
    pub eta: f64,
    /// `Σ η_t^{1+ν}`
    pub eta_pow: f64,
    /// `Σ η_t^{1+ν} / b_t^{p-1}`
    pub eta_pow_over_batch: f64,
    /// `Σ η_t / b_t^{(p-1)/p}`
    pub eta_over_batch_root: f64,
    /// `Σ η_t β^t`
    pub eta_beta: f64,
    /// `Σ η_t Σ_{i=1}^t β^i η_{t-i}^ν`
    pub momentum_eta: f64,
    /// `Σ η_t Σ_{i=0}^t β^i / b_{t-i}^{(p-1)/p}`
    pub momentum_batch: f64,
}

/// SGD upper envelope on the window `[t1, t1 + T)`:
/// `(C1 + C2 Σ η^{1+ν} + C3 Σ η^{1+ν}/b^{p-1}) / Σ η` with
/// `C1 = 2(E f(W_{t1}) - f*)/(2 - Lη̄^ν)`, `C2 = (1-ν)L/((1+ν)(2 - Lη̄^ν))`,
/// `C3 = 2^{4-(ν+p)} L σ^p / ((1+ν)(2 - Lη̄^ν))`.
pub fn sgd_upper_envelope(
    c: &BoundConstants,
    f_start: f64,
    eta_bar: f64,
    sums: &WindowSums,
) -> Result<f64, Unavailable> {
    sgd_applicable(c, eta_bar)?;
    let (l, nu, p) = (c.l, c.nu, c.p);
    let d = 2.0 - l * libm::pow(eta_bar, nu);
    let c1 = 2.0 * (f_start - c.f_star) / d;
    let c2 = (1.0 - nu) * l / ((1.0 + nu) * d);
    let c3 = libm::pow(2.0, 4.0 - (nu + p)) * l * c.sigma_p / ((1.0 + nu) * d);
    Ok((c1 + c2 * sums.eta_pow + c3 * sums.eta_pow_over_batch) / sums.eta)
}

/// Muon (no momentum) upper envelope on `[0, T)`:
/// `(C1 + C2 Σ η^{1+ν} + C3 Σ η / b^{(p-1)/p}) / Σ η` with `C1 = f(W_0) - f*`,
/// `C2 = L n^{(1+ν)/2}/(1+ν)`, `C3 = 2^{2/p} √n σ`.
pub fn muon0_upper_envelope(c: &BoundConstants, f0: f64, sums: &WindowSums) -> f64 {
    let c1 = f0 - c.f_star;
    let c2 = c.l * libm::pow(c.n, (1.0 + c.nu) / 2.0) / (1.0 + c.nu);
    let c3 = libm::pow(2.0, 2.0 / c.p) * libm::sqrt(c.n) * c.sigma();
    (c1 + c2 * sums.eta_pow + c3 * sums.eta_over_batch_root) / sums.eta
}

/// Muon upper envelope on `[0, T)` with `C3 = 2√n E‖M_0 - ∇f(W_0)‖`,
/// `C4 = 2 L n^{(1+ν)/2}` and `C5 = 2^{2/p}(1-β)√n σ`; the last coefficient is
/// the one obtained by summing the per-step bound.
pub fn muon_upper_envelope(c: &BoundConstants, f0: f64, beta: f64, m0_error: f64, sums: &WindowSums) -> f64 {
    let sqrt_n = libm::sqrt(c.n);
    let c1 = f0 - c.f_star;
    let c2 = c.l * libm::pow(c.n, (1.0 + c.nu) / 2.0) / (1.0 + c.nu);
    let c3 = 2.0 * sqrt_n * m0_error;
    let c4 = 2.0 * c.l * libm::pow(c.n, (1.0 + c.nu) / 2.0);
    let c5 = libm::pow(2.0, 2.0 / c.p) * (1.0 - beta) * sqrt_n * c.sigma();
    (c1 + c2 * sums.eta_pow + c3 * sums.eta_beta + c4 * sums.momentum_eta + c5 * sums.momentum_batch) / sums.eta
}
