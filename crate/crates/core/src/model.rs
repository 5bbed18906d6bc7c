//! Bias functions `φ(x; θ)` linking the two sample densities, `g = φ f`.
//!
//! Both shipped models satisfy the factorisation
//! `∇φ(x; θ) = φ(x; θ) h1(θ) (1, h2(x))ᵀ`, which is what the estimating
//! equations and the objective's derivatives are built on.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent accepted before reporting overflow.
pub const EXP_LIMIT: f64 = 700.0;

/// Weight function `w(x)` of the biased sampling model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightFunction {
    /// `w(x) = x` (length bias).
    Identity,
    /// `w(x) = 1`.
    Constant,
    /// Piecewise-linear through `(xs, ws)`, flat outside the table.
    Table { xs: Vec<f64>, ws: Vec<f64> },
}

impl WeightFunction {
    pub fn table(xs: Vec<f64>, ws: Vec<f64>) -> Result<Self> {
        if xs.len() != ws.len() || xs.is_empty() {
            return Err(Error::Param(
                "weight table needs matching, nonempty x and w columns".into(),
            ));
        }
        if xs.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Param("weight table x values must increase".into()));
        }
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Param("weights must be finite and nonnegative".into()));
        }
        let up = ws.windows(2).all(|p| p[0] <= p[1]);
        let down = ws.windows(2).all(|p| p[0] >= p[1]);
        if !(up || down) {
            return Err(Error::Param("weight function must be monotone".into()));
        }
        Ok(WeightFunction::Table { xs, ws })
    }

    /// Read a two-column `x,w` CSV (header optional).
    pub fn from_table_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())
            .map_err(|e| Error::Io(e.to_string()))?;
        let (mut xs, mut ws) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })?;
            let parse = |j: usize| rec.get(j).and_then(|s| s.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(x), Some(w)) => {
                    xs.push(x);
                    ws.push(w);
                }
                _ if i == 0 => continue,
                _ => {
                    return Err(Error::Parse {
                        row: i + 1,
                        message: "expected `x,w`".into(),
                    })
                }
            }
        }
        Self::table(xs, ws)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            WeightFunction::Identity => x,
            WeightFunction::Constant => 1.0,
            WeightFunction::Table { xs, ws } => {
                if x <= xs[0] {
                    return ws[0];
                }
                let k = xs.partition_point(|&v| v <= x);
                if k >= xs.len() {
                    return ws[ws.len() - 1];
                }
                let (x0, x1) = (xs[k - 1], xs[k]);
                let t = (x - x0) / (x1 - x0);
                ws[k - 1] + t * (ws[k] - ws[k - 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasModel {
    /// `φ(x; θ) = θ w(x)`, `θ > 0`; `θ0 = 1 / ∫ w dF0`.
    BiasedSampling { weight: WeightFunction },
    /// `φ(x; α, β) = exp(α + βx)`.
    Logistic,
}

impl BiasModel {
    pub fn biased(weight: WeightFunction) -> Self {
        BiasModel::BiasedSampling { weight }
    }

    pub fn length_biased() -> Self {
        Self::biased(WeightFunction::Identity)
    }

    pub fn logistic() -> Self {
        BiasModel::Logistic
    }

    /// Parameter dimension `q`.
    pub fn dim(&self) -> usize {
        match self {
            BiasModel::BiasedSampling { .. } => 1,
            BiasModel::Logistic => 2,
        }
    }

    pub fn is_biased_sampling(&self) -> bool {
        matches!(self, BiasModel::BiasedSampling { .. })
    }

    pub fn weight(&self) -> Option<&WeightFunction> {
        match self {
            BiasModel::BiasedSampling { weight } => Some(weight),
            BiasModel::Logistic => None,
        }
    }

    /// Interior starting point for the solvers.
    pub fn default_start(&self) -> Vec<f64> {
        match self {
            BiasModel::BiasedSampling { .. } => vec![1.0],
            BiasModel::Logistic => vec![0.0, 0.0],
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Domain(format!(
                "expected {} parameter(s), got {}",
                self.dim(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter {theta:?}")));
        }
        if self.is_biased_sampling() && theta[0] <= 0.0 {
            return Err(Error::Domain(format!(
                "weight parameter must be positive, got {}",
                theta[0]
            )));
        }
        Ok(())
    }

    pub fn h1(&self, theta: &[f64]) -> f64 {
        match self {
            BiasModel::BiasedSampling { .. } => 1.0 / theta[0],
            BiasModel::Logistic => 1.0,
        }
    }

    pub fn grad_h1(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            BiasModel::BiasedSampling { .. } => vec![-1.0 / (theta[0] * theta[0])],
            BiasModel::Logistic => vec![0.0, 0.0],
        }
    }

    pub fn h2(&self, x: f64) -> f64 {
        match self {
            BiasModel::BiasedSampling { .. } => 0.0,
            BiasModel::Logistic => x,
        }
    }

    /// `(1, h2(x))` truncated to the parameter dimension.
    pub fn score_basis(&self, x: f64) -> [f64; 2] {
        [1.0, self.h2(x)]
    }

    /// `ln φ(x; θ)`; `-∞` where the weight vanishes. No domain check.
    pub fn log_phi_unchecked(&self, x: f64, theta: &[f64]) -> f64 {
        match self {
            BiasModel::BiasedSampling { weight } => theta[0].ln() + weight.eval(x).ln(),
            BiasModel::Logistic => theta[0] + theta[1] * x,
        }
    }

    pub fn log_phi(&self, x: f64, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.log_phi_unchecked(x, theta))
    }

    /// `φ(x; θ)`, reporting overflow instead of saturating.
    pub fn phi(&self, x: f64, theta: &[f64]) -> Result<f64> {
        let lp = self.log_phi(x, theta)?;
        match self {
            BiasModel::Logistic if lp > EXP_LIMIT => Err(Error::Overflow(lp)),
            BiasModel::Logistic => Ok(lp.exp()),
            BiasModel::BiasedSampling { weight } => {
                let v = theta[0] * weight.eval(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Overflow(lp))
                }
            }
        }
    }

    /// Analytic `∇_θ φ(x; θ) = φ h1 (1, h2)`.
    pub fn grad_phi(&self, x: f64, theta: &[f64]) -> Result<Vec<f64>> {
        let phi = self.phi(x, theta)?;
        let h1 = self.h1(theta);
        let basis = self.score_basis(x);
        Ok((0..self.dim()).map(|k| phi * h1 * basis[k]).collect())
    }

    /// Spec string: `biased:w=identity`, `biased:w=const`,
    /// `biased:w=table:<file>` or `logistic`.
    pub fn spec_string(&self) -> String {
        match self {
            BiasModel::Logistic => "logistic".into(),
            BiasModel::BiasedSampling { weight } => match weight {
                WeightFunction::Identity => "biased:w=identity".into(),
                WeightFunction::Constant => "biased:w=const".into(),
                WeightFunction::Table { .. } => "biased:w=table".into(),
            },
        }
    }
}

impl fmt::Display for BiasModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec_string())
    }
}

impl FromStr for BiasModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("logistic") {
            return Ok(BiasModel::Logistic);
        }
        let rest = s
            .strip_prefix("biased:w=")
            .ok_or_else(|| Error::Param(format!("unknown model `{s}`")))?;
        let weight = match rest {
            "identity" | "x" => WeightFunction::Identity,
            "const" | "constant" | "1" => WeightFunction::Constant,
            other => match other.strip_prefix("table:") {
                Some(path) => WeightFunction::from_table_file(path)?,
                None => return Err(Error::Param(format!("unknown weight `{other}`"))),
            },
        };
        Ok(BiasModel::biased(weight))
    }
}

/// Quantities of `ρ0 + ρ1 φ` needed by the estimating equations, computed
/// from `ln φ` so that large exponents never overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub log_phi: f64,
    /// `ln(ρ0 + ρ1 φ)`
    pub log_denom: f64,
    /// `φ / (ρ0 + ρ1 φ)`
    pub ratio: f64,
    /// `1 / (ρ0 + ρ1 φ)`
    pub inv: f64,
}

impl Ratios {
    pub fn new(log_phi: f64, rho0: f64, rho1: f64) -> Self {
        let a = rho0.ln();
        let b = rho1.ln() + log_phi;
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let log_denom = if lo == f64::NEG_INFINITY {
            hi
        } else {
            hi + (lo - hi).exp().ln_1p()
        };
        Self {
            log_phi,
            log_denom,
            ratio: (log_phi - log_denom).exp(),
            inv: (-log_denom).exp(),
        }
    }

    /// `φ / (ρ0 + ρ1 φ)^2`
    pub fn ratio_sq(&self) -> f64 {
        (self.log_phi - 2.0 * self.log_denom).exp()
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences of `φ` in `θ` with step `h`, relative to `max(|∂φ|, φ)`.
pub fn grad_check(model: &BiasModel, x: f64, theta: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Param("step must be positive".into()));
    }
    model.check_theta(theta)?;
    let analytic = model.grad_phi(x, theta)?;
    let phi = model.phi(x, theta)?;
    let mut worst: f64 = 0.0;
    for k in 0..model.dim() {
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[k] += h;
        dn[k] -= h;
        let fd = (model.phi(x, &up)? - model.phi(x, &dn)?) / (2.0 * h);
        let err = (fd - analytic[k]).abs();
        if err > 0.0 {
            worst = worst.max(err / analytic[k].abs().max(phi));
        }
    }
    Ok(worst)
}

/// Logistic intercept `α* = α0 − ln((1 − π)/π)` for case probability `π`.
pub fn logistic_alpha_star(alpha0: f64, pi: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::Domain(format!("π must lie in (0, 1), got {pi}")));
    }
    Ok(alpha0 - ((1.0 - pi) / pi).ln())
}
