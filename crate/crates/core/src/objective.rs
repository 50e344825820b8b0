//! Finite-sum objectives with Hölder-continuous gradients.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `scale/(1+ν) Σ |w - a|^{1+ν}`, convex with ν-Hölder gradient.
    PoweredDistance,
    /// `scale Σ (w - a)² / (1 + (w - a)²)`, bounded and nonconvex, ν = 1.
    GemanMcClure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub family: Family,
    pub anchor: Matrix,
    pub scale: f64,
    pub nu: f64,
}

impl ComponentSpec {
    pub fn powered_distance(anchor: Matrix, scale: f64, nu: f64) -> Self {
        ComponentSpec {
            family: Family::PoweredDistance,
            anchor,
            scale,
            nu,
        }
    }

    pub fn geman_mcclure(anchor: Matrix, scale: f64) -> Self {
        ComponentSpec {
            family: Family::GemanMcClure,
            anchor,
            scale,
            nu: 1.0,
        }
    }

    /// Hölder constant of the gradient in the Frobenius norm.
    ///
    /// Entrywise `|sgn(x)|x|^ν - sgn(y)|y|^ν| <= 2^{1-ν}|x-y|^ν`; summing over
    /// `mn` entries costs a factor `(mn)^{(1-ν)/2}`.
    pub fn holder_constant(&self) -> f64 {
        match self.family {
            Family::PoweredDistance => {
                let k = (self.anchor.rows() * self.anchor.cols()) as f64;
                self.scale * libm::pow(2.0, 1.0 - self.nu) * libm::pow(k, (1.0 - self.nu) / 2.0)
            }
            Family::GemanMcClure => 2.0 * self.scale,
        }
    }

    /// `inf f_i`.
    pub fn f_star(&self) -> f64 {
        0.0
    }

    /// `sup f_i`, infinite for the unbounded family.
    pub fn f_starstar(&self) -> f64 {
        match self.family {
            Family::PoweredDistance => f64::INFINITY,
            Family::GemanMcClure => self.scale * (self.anchor.rows() * self.anchor.cols()) as f64,
        }
    }

    fn value(&self, w: &Matrix) -> f64 {
        let it = w.as_slice().iter().zip(self.anchor.as_slice());
        match self.family {
            Family::PoweredDistance => {
                let e = 1.0 + self.nu;
                let s: f64 = it.map(|(x, a)| libm::pow((x - a).abs(), e)).sum();
                self.scale / e * s
            }
            Family::GemanMcClure => {
                let s: f64 = it
                    .map(|(x, a)| {
                        let d = x - a;
                        d * d / (1.0 + d * d)
                    })
                    .sum();
                self.scale * s
            }
        }
    }

    fn gradient(&self, w: &Matrix) -> Matrix {
        let mut g = w.clone();
        let anchor = self.anchor.as_slice();
        match self.family {
            Family::PoweredDistance => {
                for (x, a) in g.as_mut_slice().iter_mut().zip(anchor) {
                    let d = *x - a;
                    *x = if d == 0.0 {
                        0.0
                    } else if self.nu == 1.0 {
                        self.scale * d
                    } else {
                        self.scale * libm::copysign(libm::pow(d.abs(), self.nu), d)
                    };
                }
            }
            Family::GemanMcClure => {
                for (x, a) in g.as_mut_slice().iter_mut().zip(anchor) {
                    let d = *x - a;
                    let q = 1.0 + d * d;
                    *x = 2.0 * self.scale * d / (q * q);
                }
            }
        }
        g
    }
}

/// `f(W) = (1/N) Σ f_i(W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderObjective {
    components: Vec<ComponentSpec>,
    shape: (usize, usize),
    declared_l: Vec<f64>,
    nu: f64,
}

impl HolderObjective {
    /// Validates the components and declares each `L_i` from
    /// [`ComponentSpec::holder_constant`].
    pub fn new(components: Vec<ComponentSpec>) -> Result<Self, Error> {
        let first = components
            .first()
            .ok_or_else(|| Error::param("components", "need at least one component"))?;
        let shape = first.anchor.shape();
        let nu = first.nu;
        for (i, c) in components.iter().enumerate() {
            if c.anchor.shape() != shape {
                return Err(Error::DimensionMismatch {
                    op: "objective",
                    left: shape,
                    right: c.anchor.shape(),
                });
            }
            if !c.anchor.is_finite() {
                return Err(Error::NonFinite);
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) {
                return Err(Error::param("scale", format!("component {i}: must be positive")));
            }
            if !(c.nu > 0.0 && c.nu <= 1.0) {
                return Err(Error::param("nu", format!("component {i}: must lie in (0, 1]")));
            }
            if c.family == Family::GemanMcClure && c.nu != 1.0 {
                return Err(Error::param("nu", format!("component {i}: geman-mcclure has nu = 1")));
            }
            if c.nu != nu {
                return Err(Error::param("nu", "all components must share nu"));
            }
        }
        let declared_l = components.iter().map(ComponentSpec::holder_constant).collect();
        Ok(HolderObjective {
            components,
            shape,
            declared_l,
            nu,
        })
    }

    /// Replaces the declared constants, e.g. with probe-validated values.
    pub fn with_declared_l(mut self, l: Vec<f64>) -> Result<Self, Error> {
        if l.len() != self.components.len() || l.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::param("declared_l", "need one positive constant per component"));
        }
        self.declared_l = l;
        Ok(self)
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn declared_l(&self) -> &[f64] {
        &self.declared_l
    }

    /// `L = (1/N) Σ L_i`.
    pub fn mean_l(&self) -> f64 {
        self.declared_l.iter().sum::<f64>() / self.len() as f64
    }

    /// `f* = (1/N) Σ f_i*`, a lower bound on `inf f`.
    pub fn f_star(&self) -> f64 {
        self.components.iter().map(ComponentSpec::f_star).sum::<f64>() / self.len() as f64
    }

    fn check(&self, w: &Matrix) -> Result<(), Error> {
        if w.shape() != self.shape {
            return Err(Error::DimensionMismatch {
                op: "objective",
                left: self.shape,
                right: w.shape(),
            });
        }
        Ok(())
    }

    fn component(&self, i: usize) -> Result<&ComponentSpec, Error> {
        self.components
            .get(i)
            .ok_or_else(|| Error::param("component", format!("index {i} out of range")))
    }

    pub fn eval_component(&self, i: usize, w: &Matrix) -> Result<f64, Error> {
        self.check(w)?;
        Ok(self.component(i)?.value(w))
    }

    pub fn grad_component(&self, i: usize, w: &Matrix) -> Result<Matrix, Error> {
        self.check(w)?;
        Ok(self.component(i)?.gradient(w))
    }

    pub fn eval_full(&self, w: &Matrix) -> Result<f64, Error> {
        self.check(w)?;
        let s: f64 = self.components.iter().map(|c| c.value(w)).sum();
        Ok(s / self.len() as f64)
    }

    /// Mean of the component gradients, summed in index order.
    pub fn grad_full(&self, w: &Matrix) -> Result<Matrix, Error> {
        self.check(w)?;
        let mut acc = self.components[0].gradient(w);
        for c in &self.components[1..] {
            acc.add_assign(&c.gradient(w))?;
        }
        let n = self.len() as f64;
        for x in acc.as_mut_slice() {
            *x /= n;
        }
        Ok(acc)
    }

    /// Largest observed `‖∇f_i(W₁) - ∇f_i(W₂)‖ / ‖W₁ - W₂‖^ν` over random
    /// pairs, mixing antipodal pairs around the anchor (extremal for ν < 1)
    /// with small and large perturbations at log-uniform scales.
    pub fn holder_ratio_probe<R: Rng + ?Sized>(&self, i: usize, samples: usize, rng: &mut R) -> Result<f64, Error> {
        let c = self.component(i)?;
        let (m, n) = self.shape;
        let mut best: f64 = 0.0;
        for s in 0..samples {
            let radius = libm::pow(10.0, rng.random_range(-3.0..3.0));
            let offset = Matrix::from_fn(m, n, |_, _| {
                if s % 2 == 0 {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sign * radius
                } else {
                    radius * sample_normal(rng)
                }
            });
            let w1 = c.anchor.add(&offset)?;
            let w2 = match s % 3 {
                0 => c.anchor.sub(&offset)?,
                1 => {
                    let eps = libm::pow(10.0, rng.random_range(-6.0..0.0)) * radius;
                    let d = Matrix::from_fn(m, n, |_, _| eps * sample_normal(rng));
                    w1.add(&d)?
                }
                _ => {
                    let d = Matrix::from_fn(m, n, |_, _| radius * sample_normal(rng));
                    w1.add(&d)?
                }
            };
            let dw = w1.sub(&w2)?.frobenius_norm();
            if dw == 0.0 {
                continue;
            }
            let dg = c.gradient(&w1).sub(&c.gradient(&w2))?.frobenius_norm();
            best = best.max(dg / libm::pow(dw, c.nu));
        }
        Ok(best)
    }
}

fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Per-component inputs of the index-sampling `σ^p` bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaBoundInputs {
    pub f_star: f64,
    pub f_starstar: f64,
    pub l: f64,
    pub nu: f64,
}

/// `σ^p` for uniform index sampling of a bounded finite sum:
/// `[ (1/N) Σ (2 L^{1+ν}(f** - f*)/(2L^ν - L) + (1-ν)L/((1+ν)(2L^ν - L))) ]^{p/2}`.
pub fn index_sampling_sigma_p(inputs: &[SigmaBoundInputs], p: f64) -> Result<f64, Error> {
    if inputs.is_empty() {
        return Err(Error::param("inputs", "need at least one component"));
    }
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::param("p", "must lie in (1, 2]"));
    }
    let mut total = 0.0;
    for (i, c) in inputs.iter().enumerate() {
        let denom = 2.0 * libm::pow(c.l, c.nu) - c.l;
        if !(denom > 0.0) {
            return Err(Error::Precondition {
                component: i,
                reason: format!("need L < 2 L^nu, got L = {}, nu = {}", c.l, c.nu),
            });
        }
        if !(c.f_starstar >= c.f_star) || !c.f_starstar.is_finite() {
            return Err(Error::Precondition {
                component: i,
                reason: format!("need finite f** >= f*, got f** = {}", c.f_starstar),
            });
        }
        total += 2.0 * libm::pow(c.l, 1.0 + c.nu) * (c.f_starstar - c.f_star) / denom
            + (1.0 - c.nu) * c.l / ((1.0 + c.nu) * denom);
    }
    Ok(libm::pow(total / inputs.len() as f64, p / 2.0))
}

impl HolderObjective {
    /// `σ^p` bound for single-index sampling.
    ///
    /// Bounded objectives use [`index_sampling_sigma_p`]. Powered-distance
    /// objectives with a common scale use the pairwise gradient gap
    /// `‖∇f_i - ∇f_j‖ <= scale 2^{1-ν} (Σ |a_i - a_j|^{2ν})^{1/2}`.
    pub fn index_sigma_p(&self, p: f64) -> Result<f64, Error> {
        if self.components.iter().all(|c| c.family == Family::GemanMcClure) {
            let inputs: Vec<_> = self
                .components
                .iter()
                .zip(&self.declared_l)
                .map(|(c, &l)| SigmaBoundInputs {
                    f_star: c.f_star(),
                    f_starstar: c.f_starstar(),
                    l,
                    nu: c.nu,
                })
                .collect();
            return index_sampling_sigma_p(&inputs, p);
        }
        let first = &self.components[0];
        let uniform = self
            .components
            .iter()
            .all(|c| c.family == Family::PoweredDistance && c.scale == first.scale && c.nu == first.nu);
        if !uniform {
            return Err(Error::param(
                "sampling",
                "index-noise bound needs a bounded family or powered-distance components with a shared scale",
            ));
        }
        let n = self.len();
        let coef = first.scale * libm::pow(2.0, 1.0 - first.nu);
        let mut total = 0.0;
        for ci in &self.components {
            let mut gap = 0.0;
            for cj in &self.components {
                let s: f64 = ci
                    .anchor
                    .as_slice()
                    .iter()
                    .zip(cj.anchor.as_slice())
                    .map(|(a, b)| libm::pow((a - b).abs(), 2.0 * first.nu))
                    .sum();
                gap += coef * libm::sqrt(s);
            }
            total += libm::pow(gap / n as f64, p);
        }
        Ok(total / n as f64)
    }
}
