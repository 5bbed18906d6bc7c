//! Synthetic two-sample data under a known truth, population-level
//! quantities by quadrature, and Monte Carlo experiments.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::bootstrap::replicate_rng;
use crate::data::{Observation, SampleScheme, TwoSampleData};
use crate::elratio::{ci_w0, estimate_c0, log_ratio};
use crate::error::{Error, Result};
use crate::gof::bootstrap_pvalue_with_fit;
use crate::model::{BiasModel, WeightFunction};
use crate::npmle::{DiscreteDistribution, NpmleOptions};
use crate::quadrature::integrate_mapped;
use crate::spmle::{fit_two_sample, SolveOptions, SpmleOptions};

/// Default absolute and relative tolerance for population integrals.
pub const QUAD_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    /// Uniform on `(0, b)`.
    Uniform { b: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Family::Weibull { shape, scale } => shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite(),
            Family::Uniform { b } => b > 0.0 && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("invalid distribution parameters {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match *self {
            Family::Exponential { rate } => rate * (-rate * x).exp(),
            Family::Weibull { shape, scale } => {
                let z = x / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
            Family::Uniform { b } => {
                if x < b {
                    1.0 / b
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Family::Exponential { rate } => -(-rate * x).exp_m1(),
            Family::Weibull { shape, scale } => -(-(x / scale).powf(shape)).exp_m1(),
            Family::Uniform { b } => (x / b).min(1.0),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Family::Exponential { rate } => -(-p).ln_1p() / rate,
            Family::Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            Family::Uniform { b } => b * p,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// Right end of the support, `+∞` for unbounded families.
    pub fn support_end(&self) -> f64 {
        match *self {
            Family::Uniform { b } => b,
            _ => f64::INFINITY,
        }
    }
}

/// A law on `[0, ∞)` given by its density.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Family(Family),
    /// Density `φ(x; θ) f(x)`.
    Tilted { base: Family, model: BiasModel, theta: Vec<f64> },
}

impl Law {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Law::Family(f) => f.pdf(x),
            Law::Tilted { base, model, theta } => {
                let p = base.pdf(x);
                if p == 0.0 {
                    0.0
                } else {
                    model.log_phi_unchecked(x, theta).exp() * p
                }
            }
        }
    }

    fn support_end(&self) -> f64 {
        match self {
            Law::Family(f) | Law::Tilted { base: f, .. } => f.support_end(),
        }
    }

    /// `∫ h dL` over `[0, ∞)`.
    pub fn expect<H: Fn(f64) -> f64>(&self, h: H, tol: f64) -> Result<f64> {
        self.expect_between(h, 0.0, self.support_end(), tol)
    }

    /// `∫_{(a, b]} h dL`.
    pub fn expect_between<H: Fn(f64) -> f64>(&self, h: H, a: f64, b: f64, tol: f64) -> Result<f64> {
        let b = b.min(self.support_end());
        if b <= a {
            return Ok(0.0);
        }
        let f = |x: f64| {
            let d = self.pdf(x);
            if d == 0.0 {
                0.0
            } else {
                h(x) * d
            }
        };
        integrate_mapped(f, a, b, tol, tol)
    }
}

/// How one sample is censored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Censoring {
    Complete,
    /// Right censoring at `C`.
    Right { c: Family },
    /// Window `(D, C]` with `D = U·C`, `U ~ Uniform(0, 1)`.
    Doubly { c: Family },
    /// Current status at examination time `C`.
    Case1 { c: Family },
    /// Two examination times drawn from `c` and sorted.
    Case2 { c: Family },
    /// Exact with probability `p_exact`, otherwise current status at `C`.
    Partly1 { p_exact: f64, c: Family },
    /// Exact with probability `p_exact`, otherwise bracketed by examination
    /// times: the fixed `grid` when given, else `exams` cumulative gaps
    /// drawn from `gap` per subject.
    Partly {
        p_exact: f64,
        #[serde(default)]
        grid: Option<Vec<f64>>,
        #[serde(default)]
        gap: Option<Family>,
        #[serde(default)]
        exams: usize,
    },
}

impl Censoring {
    pub fn scheme(&self) -> SampleScheme {
        match self {
            Censoring::Complete => SampleScheme::Complete,
            Censoring::Right { .. } => SampleScheme::RightCensored,
            Censoring::Doubly { .. } => SampleScheme::DoublyCensored,
            Censoring::Case1 { .. } => SampleScheme::IntervalCase1,
            Censoring::Case2 { .. } => SampleScheme::IntervalCase2,
            Censoring::Partly1 { .. } => SampleScheme::PartlyIntervalCase1,
            Censoring::Partly { .. } => SampleScheme::PartlyIntervalGeneral,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Censoring::Complete => Ok(()),
            Censoring::Right { c } | Censoring::Doubly { c } | Censoring::Case1 { c } | Censoring::Case2 { c } => {
                c.validate()
            }
            Censoring::Partly1 { p_exact, c } => {
                check_fraction(*p_exact)?;
                c.validate()
            }
            Censoring::Partly { p_exact, grid, gap, exams } => {
                check_fraction(*p_exact)?;
                match (grid, gap) {
                    (Some(g), None) => {
                        if g.is_empty() || g[0] <= 0.0 || g.windows(2).any(|w| w[0] >= w[1]) {
                            return Err(Error::Param("grid must be positive and strictly increasing".into()));
                        }
                        Ok(())
                    }
                    (None, Some(f)) => {
                        if *exams == 0 {
                            return Err(Error::Param("at least one examination time required".into()));
                        }
                        f.validate()
                    }
                    _ => Err(Error::Param("give exactly one of `grid` and `gap`".into())),
                }
            }
        }
    }
}

fn check_fraction(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Param(format!("fraction must lie in [0, 1], got {p}")))
    }
}

/// Realised censoring variables for one subject.
#[derive(Debug, Clone, PartialEq)]
pub enum CensorDraw {
    Exact,
    Right { c: f64 },
    Doubly { d: f64, c: f64 },
    Case1 { c: f64 },
    Case2 { d: f64, c: f64 },
    Grid(Vec<f64>),
}

/// Observation recorded for lifetime `x` under the realised censoring.
pub fn censor_with(x: f64, draw: &CensorDraw) -> Result<Observation> {
    match *draw {
        CensorDraw::Exact => Observation::exact(x),
        CensorDraw::Right { c } => {
            if x <= c {
                Observation::exact(x)
            } else {
                Observation::right(c)
            }
        }
        CensorDraw::Doubly { d, c } => {
            if !(d < c) {
                return Err(Error::Param(format!("need D < C, got D = {d}, C = {c}")));
            }
            if x > c {
                Observation::right(c)
            } else if x <= d {
                Observation::left(d)
            } else {
                Observation::exact(x)
            }
        }
        CensorDraw::Case1 { c } => {
            if x <= c {
                Observation::left(c)
            } else {
                Observation::right(c)
            }
        }
        CensorDraw::Case2 { d, c } => {
            if !(d < c) {
                return Err(Error::Param(format!("need D < C, got D = {d}, C = {c}")));
            }
            if x > c {
                Observation::right(c)
            } else if x <= d {
                Observation::left(d)
            } else {
                Observation::interval(d, c)
            }
        }
        CensorDraw::Grid(ref cs) => {
            if cs.is_empty() || cs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Param("examination times must be strictly increasing".into()));
            }
            let j = cs.partition_point(|&c| c < x);
            if j == 0 {
                Observation::left(cs[0])
            } else if j == cs.len() {
                Observation::right(cs[j - 1])
            } else {
                Observation::interval(cs[j - 1], cs[j])
            }
        }
    }
}

/// Draw the censoring variables and censor `x`.
pub fn apply_censoring<R: Rng + ?Sized>(x: f64, censoring: &Censoring, rng: &mut R) -> Result<Observation> {
    let draw = match censoring {
        Censoring::Complete => CensorDraw::Exact,
        Censoring::Right { c } => CensorDraw::Right { c: c.sample(rng) },
        Censoring::Doubly { c } => {
            let c = c.sample(rng);
            let u: f64 = rng.random();
            CensorDraw::Doubly { d: u * c, c }
        }
        Censoring::Case1 { c } => CensorDraw::Case1 { c: c.sample(rng) },
        Censoring::Case2 { c } => {
            let (a, b) = (c.sample(rng), c.sample(rng));
            CensorDraw::Case2 { d: a.min(b), c: a.max(b) }
        }
        Censoring::Partly1 { p_exact, c } => {
            let exact = rng.random::<f64>() < *p_exact;
            let c = c.sample(rng);
            if exact {
                CensorDraw::Exact
            } else {
                CensorDraw::Case1 { c }
            }
        }
        Censoring::Partly { p_exact, grid, gap, exams } => {
            let exact = rng.random::<f64>() < *p_exact;
            let cs = match (grid, gap) {
                (Some(g), _) => g.clone(),
                (None, Some(f)) => {
                    let mut t = 0.0;
                    (0..*exams)
                        .map(|_| {
                            t += f.sample(rng);
                            t
                        })
                        .collect()
                }
                (None, None) => return Err(Error::Param("give exactly one of `grid` and `gap`".into())),
            };
            if exact {
                CensorDraw::Exact
            } else {
                CensorDraw::Grid(cs)
            }
        }
    };
    censor_with(x, &draw)
}

mod model_string {
    use super::BiasModel;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BiasModel, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.spec_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BiasModel, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Known data-generating mechanism for both samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub f0: Family,
    #[serde(with = "model_string")]
    pub model: BiasModel,
    pub theta0: Vec<f64>,
    /// Actual law of the second sample when the model is misspecified;
    /// `φ(·; θ0) f0` when absent.
    #[serde(default)]
    pub g0: Option<Family>,
    pub censor_x: Censoring,
    pub censor_y: Censoring,
    pub n0: usize,
    pub n1: usize,
    pub seed: u64,
}

impl TruthSpec {
    /// `F0 = Exp(1)`, `w(x) = x`, `θ0 = 1`, so `G0 = Gamma(2, 1)`.
    pub fn length_biased_exp(censor_x: Censoring, censor_y: Censoring, n0: usize, n1: usize, seed: u64) -> Self {
        Self {
            f0: Family::Exponential { rate: 1.0 },
            model: BiasModel::length_biased(),
            theta0: vec![1.0],
            g0: None,
            censor_x,
            censor_y,
            n0,
            n1,
            seed,
        }
    }

    /// `F0 = Exp(1)`, `φ = exp(α0 + β0 x)` with `α0 = ln(1 − β0)`, so
    /// `G0 = Exp(1 − β0)`.
    pub fn logistic_exp(beta0: f64, censor_x: Censoring, censor_y: Censoring, n0: usize, n1: usize, seed: u64) -> Self {
        Self {
            f0: Family::Exponential { rate: 1.0 },
            model: BiasModel::logistic(),
            theta0: vec![(1.0 - beta0).ln(), beta0],
            g0: None,
            censor_x,
            censor_y,
            n0,
            n1,
            seed,
        }
    }

    pub fn rho(&self) -> (f64, f64) {
        let n = (self.n0 + self.n1) as f64;
        (self.n0 as f64 / n, self.n1 as f64 / n)
    }

    pub fn f0_law(&self) -> Law {
        Law::Family(self.f0)
    }

    pub fn g0_law(&self) -> Law {
        match self.g0 {
            Some(f) => Law::Family(f),
            None => Law::Tilted {
                base: self.f0,
                model: self.model.clone(),
                theta: self.theta0.clone(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.f0.validate()?;
        self.model.check_theta(&self.theta0)?;
        self.censor_x.validate()?;
        self.censor_y.validate()?;
        if self.n0 == 0 || self.n1 == 0 {
            return Err(Error::EmptySample);
        }
        match self.g0 {
            Some(f) => f.validate(),
            None => {
                let total = self.f0_law().expect(|x| self.model.log_phi_unchecked(x, &self.theta0).exp(), QUAD_TOL)?;
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::Param(format!(
                        "θ0 does not normalise φ(·; θ0) f0: ∫ φ dF0 = {total}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Exactly representable second-sample laws.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ClosedG0 {
    Gamma2 { rate: f64 },
    Family(Family),
}

fn closed_form_g0(truth: &TruthSpec) -> Option<ClosedG0> {
    if let Some(f) = truth.g0 {
        return Some(ClosedG0::Family(f));
    }
    match (&truth.model, truth.f0) {
        (BiasModel::BiasedSampling { weight: WeightFunction::Constant }, f) => Some(ClosedG0::Family(f)),
        (BiasModel::BiasedSampling { weight: WeightFunction::Identity }, Family::Exponential { rate }) => {
            Some(ClosedG0::Gamma2 { rate })
        }
        (BiasModel::Logistic, Family::Exponential { rate }) if truth.theta0[1] < rate => {
            Some(ClosedG0::Family(Family::Exponential { rate: rate - truth.theta0[1] }))
        }
        _ => None,
    }
}

/// `n` draws from `G0`: exact samplers for registered pairs, rejection
/// from `F0` otherwise.
pub fn sample_g0<R: Rng + ?Sized>(truth: &TruthSpec, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if let Some(closed) = closed_form_g0(truth) {
        return Ok((0..n)
            .map(|_| match closed {
                ClosedG0::Family(f) => f.sample(rng),
                ClosedG0::Gamma2 { rate } => {
                    let e = Family::Exponential { rate };
                    e.sample(rng) + e.sample(rng)
                }
            })
            .collect());
    }
    let upper = truth.f0.quantile(1.0 - 1e-9);
    let phi = |x: f64| truth.model.log_phi_unchecked(x, &truth.theta0).exp();
    let mut candidates = vec![0.0, upper];
    if let Some(WeightFunction::Table { xs, .. }) = truth.model.weight() {
        candidates.extend(xs.iter().copied().filter(|&x| x > 0.0 && x < upper));
    }
    // φ is monotone for the built-in weights and linear between table nodes
    let envelope = candidates.iter().map(|&x| phi(x)).fold(0.0, f64::max);
    if !envelope.is_finite() || envelope > 1e6 || envelope <= 0.0 {
        return Err(Error::EnvelopeUnbounded(format!(
            "sup φ on [0, {upper}] is {envelope}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = truth.f0.sample(rng);
        if x > upper {
            continue;
        }
        if rng.random::<f64>() * envelope <= phi(x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// One dataset from the truth.
pub fn generate<R: Rng + ?Sized>(truth: &TruthSpec, rng: &mut R) -> Result<TwoSampleData> {
    let xs: Vec<f64> = (0..truth.n0).map(|_| truth.f0.sample(rng)).collect();
    let ys = sample_g0(truth, truth.n1, rng)?;
    let sx = xs
        .into_iter()
        .map(|x| apply_censoring(x, &truth.censor_x, rng))
        .collect::<Result<Vec<_>>>()?;
    let sy = ys
        .into_iter()
        .map(|y| apply_censoring(y, &truth.censor_y, rng))
        .collect::<Result<Vec<_>>>()?;
    TwoSampleData::new(sx, truth.censor_x.scheme(), sy, truth.censor_y.scheme())
}

fn population_g(f0: &Law, g0: &Law, model: &BiasModel, rho: (f64, f64), theta: &[f64], tol: f64) -> Result<Vec<f64>> {
    model.check_theta(theta)?;
    let (rho0, rho1) = rho;
    let mut out = Vec::with_capacity(model.dim());
    for k in 0..model.dim() {
        let basis = |x: f64| model.score_basis(x)[k];
        let a = f0.expect(
            |x| {
                let phi = model.log_phi_unchecked(x, theta).exp();
                basis(x) * phi / (rho0 + rho1 * phi)
            },
            tol,
        )?;
        let b = g0.expect(
            |x| basis(x) / (rho0 + rho1 * model.log_phi_unchecked(x, theta).exp()),
            tol,
        )?;
        out.push(a - b);
    }
    Ok(out)
}

/// Population estimating equations `g0(θ)` under the truth's `F0` and `G0`.
pub fn population_equations(truth: &TruthSpec, theta: &[f64]) -> Result<Vec<f64>> {
    population_g(&truth.f0_law(), &truth.g0_law(), &truth.model, truth.rho(), theta, QUAD_TOL)
}

/// Limit `F1` of `F̃ₙ` when the second sample follows an arbitrary `G0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitF1 {
    pub theta1: Vec<f64>,
    pub rho0: f64,
    pub rho1: f64,
    f0: Law,
    g0: Law,
    model: BiasModel,
    tol: f64,
}

impl LimitF1 {
    fn density(&self, x: f64) -> f64 {
        let mu = self.rho0 * self.f0.pdf(x) + self.rho1 * self.g0.pdf(x);
        mu / (self.rho0 + self.rho1 * self.model.log_phi_unchecked(x, &self.theta1).exp())
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        Ok(self.cdf_sorted(&[t])?[0])
    }

    /// `F1` at increasing points, integrating segment by segment.
    pub fn cdf_sorted(&self, ts: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ts.len());
        let mut acc = 0.0;
        let mut last = 0.0;
        for &t in ts {
            if t < last {
                return Err(Error::Param("evaluation points must be increasing".into()));
            }
            if t > last {
                let upper = t.min(self.f0.support_end().max(self.g0.support_end()));
                if upper > last {
                    acc += integrate_mapped(|x| self.density(x), last, upper, self.tol, self.tol)?;
                }
                last = t;
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Step function through `F1` on the grid.
    pub fn tabulate(&self, grid: &[f64]) -> Result<DiscreteDistribution> {
        let values = self.cdf_sorted(grid)?;
        let mut prev = 0.0;
        let atoms: Vec<(f64, f64)> = grid
            .iter()
            .zip(values)
            .filter_map(|(&t, v)| {
                let m = v - prev;
                prev = v;
                (m > 0.0).then_some((t, m))
            })
            .collect();
        DiscreteDistribution::from_parts(
            atoms.iter().map(|a| a.0).collect(),
            atoms.iter().map(|a| a.1).collect(),
        )
    }
}

/// Solve the population equations for `θ1` under the actual laws and
/// return the limit `F1(t) = ∫_0^t dμ0 / (ρ0 + ρ1 φ(x; θ1))`.
pub fn misspec_limit_f1(f0: &Law, g0: &Law, model: &BiasModel, rho0: f64, rho1: f64) -> Result<LimitF1> {
    misspec_limit_f1_with_tol(f0, g0, model, rho0, rho1, QUAD_TOL)
}

pub fn misspec_limit_f1_with_tol(
    f0: &Law,
    g0: &Law,
    model: &BiasModel,
    rho0: f64,
    rho1: f64,
    tol: f64,
) -> Result<LimitF1> {
    if !(rho0 > 0.0 && rho1 > 0.0 && ((rho0 + rho1) - 1.0).abs() < 1e-12) {
        return Err(Error::Param("ρ0, ρ1 must be positive and sum to one".into()));
    }
    let rho = (rho0, rho1);
    let q = model.dim();
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut theta = model.default_start();
    let mut g = population_g(f0, g0, model, rho, &theta, tol)?;
    let target = 1e3 * tol;
    for _ in 0..100 {
        if norm(&g) < target {
            return Ok(LimitF1 {
                theta1: theta,
                rho0,
                rho1,
                f0: f0.clone(),
                g0: g0.clone(),
                model: model.clone(),
                tol,
            });
        }
        // Jacobian of g: the moment integral against μ0 divided by h1
        let h1 = model.h1(&theta);
        let mut jac = nalgebra::DMatrix::<f64>::zeros(q, q);
        for a in 0..q {
            for b in a..q {
                let h = |x: f64| {
                    let phi = model.log_phi_unchecked(x, &theta).exp();
                    let s = model.score_basis(x);
                    s[a] * s[b] * phi / (rho0 + rho1 * phi).powi(2)
                };
                let v = rho0 * f0.expect(h, tol)? + rho1 * g0.expect(h, tol)?;
                jac[(a, b)] = v * h1;
                jac[(b, a)] = v * h1;
            }
        }
        let step = jac
            .lu()
            .solve(&nalgebra::DVector::from_vec(g.clone()))
            .ok_or(Error::SingularHessian)?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a - t * d).collect();
            if model.check_theta(&trial).is_ok() {
                if let Ok(gt) = population_g(f0, g0, model, rho, &trial, tol) {
                    if norm(&gt) < norm(&g) {
                        theta = trial;
                        g = gt;
                        improved = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: 100,
        context: format!("population estimating equations, residual {:e}", norm(&g)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Consistency,
    Normality,
    LrCalibration,
    CiCoverage,
    GofSizePower,
}

fn default_b() -> usize {
    199
}
fn default_level() -> f64 {
    0.95
}
fn default_alpha() -> f64 {
    0.05
}
fn default_tol() -> f64 {
    1e-10
}
fn default_npmle_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub reps: usize,
    /// Bootstrap replicates per Monte Carlo replicate.
    #[serde(default = "default_b")]
    pub b: usize,
    /// Confidence level for intervals.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Nominal size of the goodness-of-fit test.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_npmle_tol")]
    pub npmle_tol: f64,
    pub truth: TruthSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            row: e.span().map(|s| s.start).unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn from_toml_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn spmle_options(&self) -> SpmleOptions {
        SpmleOptions {
            npmle: NpmleOptions {
                tol: self.npmle_tol,
                ..NpmleOptions::default()
            },
            solve: SolveOptions {
                tol: self.tol,
                ..SolveOptions::default()
            },
        }
    }
}

/// Outcome of one Monte Carlo replicate; fields not produced by the
/// experiment kind stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub error: Option<String>,
    pub theta: Vec<f64>,
    pub stat: Option<f64>,
    pub c0: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    pub t_n: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    /// Monte Carlo standard error, when one applies.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub failed: usize,
    pub metrics: BTreeMap<String, Metric>,
    pub records: Vec<ReplicateRecord>,
}

/// Well-mixed seed for the bootstrap inside replicate `rep`.
pub fn sub_seed(seed: u64, rep: u64) -> u64 {
    let mut z = seed ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_replicate(cfg: &ExperimentConfig, rep: usize) -> Result<ReplicateRecord> {
    let truth = &cfg.truth;
    let mut rng = replicate_rng(truth.seed, rep as u64);
    let data = generate(truth, &mut rng)?;
    let opts = cfg.spmle_options();
    let fit = fit_two_sample(&data, &truth.model, &opts)?;
    let mut rec = ReplicateRecord {
        rep,
        theta: fit.fit.theta.clone(),
        ..Default::default()
    };
    let seed = sub_seed(truth.seed, rep as u64);
    match cfg.kind {
        ExperimentKind::Consistency | ExperimentKind::Normality => {}
        ExperimentKind::LrCalibration | ExperimentKind::CiCoverage => {
            let theta_hat = fit.fit.theta[0];
            let theta0 = truth.theta0[0];
            let stat = log_ratio(&fit.pooled, &truth.model, theta_hat, theta0)?.stat;
            let c0 = estimate_c0(&data, &truth.model, theta_hat, &opts, cfg.b, seed)?.c0_hat;
            let ci = ci_w0(&fit.pooled, &truth.model, theta_hat, cfg.level, c0)?;
            let w0 = 1.0 / theta0;
            rec.stat = Some(stat);
            rec.c0 = Some(c0);
            rec.ci_lower = Some(ci.lower);
            rec.ci_upper = Some(ci.upper);
            rec.covered = Some(ci.lower <= w0 && w0 <= ci.upper);
        }
        ExperimentKind::GofSizePower => {
            let r = bootstrap_pvalue_with_fit(&data, &fit, &truth.model, cfg.b, seed, &opts)?;
            rec.t_n = Some(r.t_n);
            rec.p_value = Some(r.p_value);
        }
    }
    Ok(rec)
}

/// Run `cfg.reps` replicates in parallel. A failing replicate is recorded
/// with its error and excluded from the summaries, never redrawn.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.reps == 0 {
        return Err(Error::Param("at least one replicate required".into()));
    }
    cfg.truth.validate()?;
    if matches!(cfg.kind, ExperimentKind::LrCalibration | ExperimentKind::CiCoverage)
        && !cfg.truth.model.is_biased_sampling()
    {
        return Err(Error::Param("ratio experiments need a biased sampling model".into()));
    }
    let records: Vec<ReplicateRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            run_replicate(cfg, rep).unwrap_or_else(|e| ReplicateRecord {
                rep,
                error: Some(format!("{}: {e}", e.name())),
                ..Default::default()
            })
        })
        .collect();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let metrics = summarise(cfg, &records);
    Ok(ExperimentReport {
        config: cfg.clone(),
        failed,
        metrics,
        records,
    })
}

fn mean_se(v: &[f64]) -> Metric {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt())
    } else {
        None
    };
    Metric { value: mean, se }
}

fn proportion(hits: usize, n: usize) -> Metric {
    let p = hits as f64 / n as f64;
    Metric {
        value: p,
        se: Some((p * (1.0 - p) / n as f64).sqrt()),
    }
}

/// Correlation between the sorted sample and standard normal quantiles at
/// Blom plotting positions.
pub fn qq_correlation(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let normal = Normal::standard();
    let q: Vec<f64> = (0..v.len())
        .map(|i| normal.inverse_cdf((i as f64 + 1.0 - 0.375) / (n + 0.25)))
        .collect();
    let mv = v.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let cov: f64 = v.iter().zip(&q).map(|(a, b)| (a - mv) * (b - mq)).sum();
    let sv: f64 = v.iter().map(|a| (a - mv).powi(2)).sum::<f64>().sqrt();
    let sq: f64 = q.iter().map(|b| (b - mq).powi(2)).sum::<f64>().sqrt();
    cov / (sv * sq)
}

/// One-sample Kolmogorov–Smirnov distance to a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS statistic `d` at sample size `n`
/// (Kolmogorov series with Stephens' small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn summarise(cfg: &ExperimentConfig, records: &[ReplicateRecord]) -> BTreeMap<String, Metric> {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut m = BTreeMap::new();
    m.insert("completed".into(), Metric { value: ok.len() as f64, se: None });
    if ok.is_empty() {
        return m;
    }
    let r = ok.len();
    for (k, &t0) in cfg.truth.theta0.iter().enumerate() {
        let est: Vec<f64> = ok.iter().map(|rec| rec.theta[k]).collect();
        let errs: Vec<f64> = est.iter().map(|t| t - t0).collect();
        let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
        let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
        let mse = mean_se(&sq);
        let rmse = mse.value.sqrt();
        m.insert(format!("mean_theta_{}", k + 1), mean_se(&est));
        m.insert(format!("bias_theta_{}", k + 1), mean_se(&errs));
        m.insert(
            format!("rmse_theta_{}", k + 1),
            Metric {
                value: rmse,
                se: mse.se.map(|s| s / (2.0 * rmse)),
            },
        );
        m.insert(format!("mean_abs_error_theta_{}", k + 1), mean_se(&abs));
        if r > 2 {
            m.insert(
                format!("qq_correlation_theta_{}", k + 1),
                Metric { value: qq_correlation(&est), se: None },
            );
        }
    }
    match cfg.kind {
        ExperimentKind::Consistency | ExperimentKind::Normality => {}
        ExperimentKind::LrCalibration | ExperimentKind::CiCoverage => {
            let ratios: Vec<f64> = ok.iter().map(|rec| rec.stat.unwrap() / rec.c0.unwrap()).collect();
            let chi = ChiSquared::new(1.0).expect("one degree of freedom");
            let d = ks_distance(&ratios, |x| if x <= 0.0 { 0.0 } else { chi.cdf(x) });
            m.insert("mean_stat_over_c0".into(), mean_se(&ratios));
            m.insert("ks_distance_chi2".into(), Metric { value: d, se: None });
            m.insert("ks_pvalue_chi2".into(), Metric { value: ks_pvalue(d, r), se: None });
            let c0s: Vec<f64> = ok.iter().map(|rec| rec.c0.unwrap()).collect();
            m.insert("mean_c0".into(), mean_se(&c0s));
            let covered = ok.iter().filter(|rec| rec.covered == Some(true)).count();
            m.insert("coverage".into(), proportion(covered, r));
        }
        ExperimentKind::GofSizePower => {
            let p: Vec<f64> = ok.iter().map(|rec| rec.p_value.unwrap()).collect();
            let rejected = p.iter().filter(|&&p| p < cfg.alpha).count();
            m.insert("rejection_rate".into(), proportion(rejected, r));
            m.insert("mean_p_value".into(), mean_se(&p));
            m.insert(
                "ks_distance_uniform".into(),
                Metric {
                    value: ks_distance(&p, |x| x.clamp(0.0, 1.0)),
                    se: None,
                },
            );
        }
    }
    m
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat per-replicate table.
pub fn write_records_csv<W: Write>(writer: W, records: &[ReplicateRecord]) -> Result<()> {
    let q = records.iter().map(|r| r.theta.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["rep".to_string(), "status".into()];
    header.extend((1..=q).map(|k| format!("theta_{k}")));
    header.extend(
        ["stat", "c0", "ci_lower", "ci_upper", "covered", "t_n", "p_value", "error"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for r in records {
        let mut row = vec![
            r.rep.to_string(),
            if r.error.is_some() { "failed" } else { "ok" }.to_string(),
        ];
        row.extend((0..q).map(|k| opt(r.theta.get(k))));
        row.extend([
            opt(r.stat),
            opt(r.c0),
            opt(r.ci_lower),
            opt(r.ci_upper),
            opt(r.covered),
            opt(r.t_n),
            opt(r.p_value),
            r.error.clone().unwrap_or_default(),
        ]);
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
