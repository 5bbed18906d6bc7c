//! Kolmogorov–Smirnov-type goodness-of-fit test of the semiparametric
//! model: compare `F̃ₙ` with `F̂` and calibrate by the bootstrap.

use serde::{Deserialize, Serialize};

use crate::bootstrap;
use crate::data::TwoSampleData;
use crate::error::{Error, Result};
use crate::model::BiasModel;
use crate::npmle::DiscreteDistribution;
use crate::spmle::{fit_two_sample, SpmleFit, SpmleOptions, TwoSampleFit};

/// `sup_t |Σ_k c_k F_k(t)|` over finite `t` for step functions `F_k`.
///
/// Every term is right-continuous and constant between jumps, so the
/// supremum is attained at one of the finite jump points.
pub fn sup_combination(terms: &[(&DiscreteDistribution, f64)]) -> f64 {
    let mut jumps: Vec<(f64, f64)> = terms
        .iter()
        .flat_map(|(d, c)| d.finite_atoms().map(move |(x, m)| (x, c * m)))
        .collect();
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut level = 0.0;
    let mut sup: f64 = 0.0;
    let mut i = 0;
    while i < jumps.len() {
        let x = jumps[i].0;
        while i < jumps.len() && jumps[i].0 == x {
            level += jumps[i].1;
            i += 1;
        }
        sup = sup.max(level.abs());
    }
    sup
}

/// `sup_t |A(t) − B(t)|`.
pub fn sup_diff(a: &DiscreteDistribution, b: &DiscreteDistribution) -> f64 {
    sup_combination(&[(a, 1.0), (b, -1.0)])
}

/// `Tₙ = √n sup_t |F̃ₙ(t) − F̂(t)|`.
pub fn t_statistic(fit: &SpmleFit, fhat: &DiscreteDistribution, n: usize) -> f64 {
    (n as f64).sqrt() * sup_diff(&fit.f_tilde, fhat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub t_n: f64,
    pub b: usize,
    pub p_value: f64,
    pub t_star: Vec<f64>,
    pub seed: u64,
    pub degenerate_replicates: usize,
}

/// Bootstrap p-value `#{T*ₙ > Tₙ}/B` where `T*ₙ = √n ‖τ* − τ̂‖` and
/// `τ = F̃ − F̂`.
pub fn bootstrap_pvalue(
    data: &TwoSampleData,
    model: &BiasModel,
    b: usize,
    seed: u64,
    opts: &SpmleOptions,
) -> Result<GofResult> {
    let observed = fit_two_sample(data, model, opts)?;
    bootstrap_pvalue_with_fit(data, &observed, model, b, seed, opts)
}

/// As [`bootstrap_pvalue`], reusing an existing fit of `data`.
pub fn bootstrap_pvalue_with_fit(
    data: &TwoSampleData,
    observed: &TwoSampleFit,
    model: &BiasModel,
    b: usize,
    seed: u64,
    opts: &SpmleOptions,
) -> Result<GofResult> {
    if b == 0 {
        return Err(Error::Param("at least one bootstrap replicate required".into()));
    }
    let n = data.n();
    let root_n = (n as f64).sqrt();
    let fhat = &observed.fhat.distribution;
    let ftil = &observed.fit.f_tilde;
    let t_n = t_statistic(&observed.fit, fhat, n);
    let reps = bootstrap::run(data, b, seed, |sample| {
        let rep = fit_two_sample(sample, model, opts)?;
        let d = sup_combination(&[
            (&rep.fit.f_tilde, 1.0),
            (&rep.fhat.distribution, -1.0),
            (ftil, -1.0),
            (fhat, 1.0),
        ]);
        Ok(root_n * d)
    })?;
    let exceed = reps.values.iter().filter(|&&t| t > t_n).count();
    Ok(GofResult {
        t_n,
        b,
        p_value: exceed as f64 / b as f64,
        t_star: reps.values,
        seed,
        degenerate_replicates: reps.degenerate,
    })
}

/// Paired step tables of `F̂` and `F̃ₙ` on the union of their jump points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub t: Vec<f64>,
    pub fhat: Vec<f64>,
    pub f_tilde: Vec<f64>,
}

pub fn curves(fhat: &DiscreteDistribution, f_tilde: &DiscreteDistribution) -> Curves {
    let mut t: Vec<f64> = fhat
        .finite_atoms()
        .chain(f_tilde.finite_atoms())
        .map(|(x, _)| x)
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    Curves {
        fhat: t.iter().map(|&x| fhat.cdf(x)).collect(),
        f_tilde: t.iter().map(|&x| f_tilde.cdf(x)).collect(),
        t,
    }
}

/// Whether the bootstrap calibration is backed by asymptotic theory for
/// this pair of schemes. Current-status and case-2 interval data are not.
pub fn bootstrap_applicable(data: &TwoSampleData) -> bool {
    data.scheme_x().has_weak_convergence() && data.scheme_y().has_weak_convergence()
}
