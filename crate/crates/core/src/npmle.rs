//! Nonparametric MLE of a distribution from censored observations.
//!
//! All estimators return a [`DiscreteDistribution`]. Mass that the data can
//! only place beyond the largest finite endpoint sits on the support point
//! `+∞`, so `cdf(t)` never includes it for finite `t` and the finite part is
//! an improper (sub-)distribution.

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::data::{Observation, ObservationKind, SampleScheme};
use crate::error::{Error, Result};

/// Masses below this are dropped after EM convergence.
pub const PRUNE_MASS: f64 = 1e-12;
const TOTAL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscreteDistribution {
    support: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validated constructor: strictly increasing support, positive masses,
    /// total at most one.
    pub fn new(support: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let dist = Self::from_parts(support, masses)?;
        if dist.total() > 1.0 + TOTAL_SLACK {
            return Err(Error::Param(format!(
                "total mass {} exceeds one",
                dist.total()
            )));
        }
        Ok(dist)
    }

    /// Like [`new`](Self::new) but without the total-mass bound. Used for
    /// semiparametric fits evaluated away from their solution.
    pub fn from_parts(support: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if support.len() != masses.len() {
            return Err(Error::Param("support and masses differ in length".into()));
        }
        if support.iter().any(|s| s.is_nan()) {
            return Err(Error::Param("NaN support point".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Param("support must be strictly increasing".into()));
        }
        if masses.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Param("masses must be positive and finite".into()));
        }
        Ok(Self { support, masses })
    }

    /// Build from unsorted atoms; coincident points are merged and
    /// nonpositive masses dropped.
    pub fn from_atoms<I: IntoIterator<Item = (f64, f64)>>(atoms: I) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().filter(|a| a.1 > 0.0).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut masses: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, p) in atoms {
            match support.last() {
                Some(&last) if last == x => *masses.last_mut().unwrap() += p,
                _ => {
                    support.push(x);
                    masses.push(p);
                }
            }
        }
        Self::from_parts(support, masses)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Sum of all masses, including any mass at `+∞`.
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass on finite support points, i.e. `F(∞)` in the improper sense.
    pub fn finite_total(&self) -> f64 {
        self.finite_atoms().map(|(_, p)| p).sum()
    }

    /// Mass carried by the `+∞` support point.
    pub fn tail_mass(&self) -> f64 {
        match self.support.last() {
            Some(s) if s.is_infinite() => *self.masses.last().unwrap(),
            _ => 0.0,
        }
    }

    pub fn finite_atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support
            .iter()
            .zip(&self.masses)
            .filter(|(s, _)| s.is_finite())
            .map(|(&s, &p)| (s, p))
    }

    /// Finite jump points of the step function.
    pub fn jump_points(&self) -> Vec<f64> {
        self.finite_atoms().map(|(s, _)| s).collect()
    }

    /// The finite part only (drops the `+∞` atom).
    pub fn finite_part(&self) -> Self {
        let (support, masses) = self.finite_atoms().unzip();
        Self { support, masses }
    }

    /// `Σ_{W_i ≤ t} p_i`.
    pub fn cdf(&self, t: f64) -> f64 {
        let k = self.support.partition_point(|&s| s <= t);
        self.masses[..k].iter().sum()
    }

    /// `P{X ∈ (lower, upper]}`, or the point mass for exact data.
    pub fn prob(&self, obs: &Observation) -> f64 {
        if obs.is_exact() {
            match self
                .support
                .binary_search_by(|s| s.total_cmp(&obs.lower()))
            {
                Ok(i) => self.masses[i],
                Err(_) => 0.0,
            }
        } else {
            let lo = self.support.partition_point(|&s| s <= obs.lower());
            let hi = self.support.partition_point(|&s| s <= obs.upper());
            self.masses[lo..hi].iter().sum()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DistributionRepr {
    support: Vec<SupportPoint>,
    masses: Vec<f64>,
    total: f64,
}

/// Support values in JSON; `+∞` is written as the string `"inf"`.
#[derive(Clone, Copy)]
struct SupportPoint(f64);

impl Serialize for SupportPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for SupportPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SupportPoint(v)),
            Raw::Str(s) if s.eq_ignore_ascii_case("inf") => Ok(SupportPoint(f64::INFINITY)),
            Raw::Str(s) => Err(de::Error::custom(format!("bad support point `{s}`"))),
        }
    }
}

impl Serialize for DiscreteDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DistributionRepr {
            support: self.support.iter().map(|&x| SupportPoint(x)).collect(),
            masses: self.masses.clone(),
            total: self.total(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = DistributionRepr::deserialize(d)?;
        let support = repr.support.into_iter().map(|p| p.0).collect();
        DiscreteDistribution::from_parts(support, repr.masses).map_err(de::Error::custom)
    }
}

/// A maximal intersection `(left, right]`, or the single point `right` when
/// `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TurnbullInterval {
    pub left: f64,
    pub right: f64,
    pub degenerate: bool,
}

impl TurnbullInterval {
    /// Representative point carrying the interval's mass.
    pub fn mass_point(&self) -> f64 {
        self.right
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnbullSupport {
    pub intervals: Vec<TurnbullInterval>,
    /// Per observation, the half-open index range `[start, end)` of covered
    /// intervals. Coverage is always contiguous because both observations
    /// and intervals are intervals of the line.
    pub membership: Vec<(usize, usize)>,
}

// Endpoint ranks at a tied value: the open left end of an exact point sits
// just below it, closed right ends come next, open left ends of (l, u] last.
const RANK_POINT_LEFT: u8 = 0;
const RANK_RIGHT: u8 = 1;
const RANK_LEFT: u8 = 2;

fn covers(obs: &Observation, iv: &TurnbullInterval) -> bool {
    if iv.degenerate {
        obs.contains(iv.right)
    } else if obs.is_exact() {
        false
    } else {
        obs.lower() <= iv.left && iv.right <= obs.upper()
    }
}

/// Maximal intersections of the observations' information intervals.
pub fn turnbull_support(sample: &[Observation]) -> Result<TurnbullSupport> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    // (value, rank, is_left)
    let mut ends: Vec<(f64, u8)> = Vec::with_capacity(2 * sample.len());
    for obs in sample {
        if obs.is_exact() {
            ends.push((obs.lower(), RANK_POINT_LEFT));
        } else {
            ends.push((obs.lower(), RANK_LEFT));
        }
        ends.push((obs.upper(), RANK_RIGHT));
    }
    ends.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ends.dedup();

    let mut intervals = Vec::new();
    for w in ends.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.1 != RANK_RIGHT && b.1 == RANK_RIGHT {
            intervals.push(TurnbullInterval {
                left: a.0,
                right: b.0,
                degenerate: a.1 == RANK_POINT_LEFT,
            });
        }
    }

    let mut membership = Vec::with_capacity(sample.len());
    for (i, obs) in sample.iter().enumerate() {
        // Intervals are ordered, so coverage is found with two searches.
        let start = intervals.partition_point(|iv| {
            if iv.degenerate {
                iv.right < obs.lower() || (!obs.is_exact() && iv.right == obs.lower())
            } else {
                iv.left < obs.lower()
            }
        });
        let mut end = start;
        while end < intervals.len() && covers(obs, &intervals[end]) {
            end += 1;
        }
        if end == start {
            return Err(Error::DegenerateDatum { index: i });
        }
        membership.push((start, end));
    }
    Ok(TurnbullSupport {
        intervals,
        membership,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpmleOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NpmleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NpmleFit {
    pub distribution: DiscreteDistribution,
    pub iterations: usize,
    pub converged: bool,
    pub loglik: f64,
}

/// Identical observations collapsed to `(observation, multiplicity)`.
fn collapse_ties(sample: &[Observation]) -> Vec<(Observation, f64)> {
    let mut sorted: Vec<Observation> = sample.to_vec();
    sorted.sort_by(|a, b| {
        a.lower()
            .total_cmp(&b.lower())
            .then(a.upper().total_cmp(&b.upper()))
            .then((a.kind() as u8).cmp(&(b.kind() as u8)))
    });
    let mut out: Vec<(Observation, f64)> = Vec::new();
    for obs in sorted {
        match out.last_mut() {
            Some((prev, w)) if *prev == obs => *w += 1.0,
            _ => out.push((obs, 1.0)),
        }
    }
    out
}

/// Self-consistency EM over Turnbull intervals.
pub fn turnbull_em(sample: &[Observation], opts: &NpmleOptions) -> Result<NpmleFit> {
    turnbull_em_impl(sample, opts, None)
}

/// As [`turnbull_em`], also returning the log-likelihood after every iteration.
pub fn turnbull_em_with_trace(
    sample: &[Observation],
    opts: &NpmleOptions,
) -> Result<(NpmleFit, Vec<f64>)> {
    let mut trace = Vec::new();
    let fit = turnbull_em_impl(sample, opts, Some(&mut trace))?;
    Ok((fit, trace))
}

fn turnbull_em_impl(
    sample: &[Observation],
    opts: &NpmleOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<NpmleFit> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Param("tol must be positive".into()));
    }
    let groups = collapse_ties(sample);
    let unique: Vec<Observation> = groups.iter().map(|g| g.0).collect();
    let weights: Vec<f64> = groups.iter().map(|g| g.1).collect();
    let n_total = sample.len() as f64;
    let support = turnbull_support(&unique)?;
    let k = support.intervals.len();
    let ranges = &support.membership;

    let loglik = |p: &[f64], prefix: &mut Vec<f64>| -> f64 {
        prefix.clear();
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in p {
            acc += v;
            prefix.push(acc);
        }
        ranges
            .iter()
            .zip(&weights)
            .map(|(&(a, b), &w)| w * (prefix[b] - prefix[a]).ln())
            .sum()
    };

    let mut p = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    let mut diff = vec![0.0; k + 1];
    let mut prefix = Vec::with_capacity(k + 1);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        prefix.clear();
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in &p {
            acc += v;
            prefix.push(acc);
        }
        diff.iter_mut().for_each(|d| *d = 0.0);
        for (&(a, b), &w) in ranges.iter().zip(&weights) {
            let prob = prefix[b] - prefix[a];
            let c = w / (n_total * prob);
            diff[a] += c;
            diff[b] -= c;
        }
        let mut scale = 0.0;
        let mut max_change: f64 = 0.0;
        for j in 0..k {
            scale += diff[j];
            next[j] = p[j] * scale;
            max_change = max_change.max((next[j] - p[j]).abs());
        }
        std::mem::swap(&mut p, &mut next);
        if let Some(t) = trace.as_deref_mut() {
            t.push(loglik(&p, &mut prefix));
        }
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }

    if k <= POLISH_MAX_INTERVALS && polish(ranges, &weights, &mut p) {
        converged = true;
    }

    let atoms = support
        .intervals
        .iter()
        .zip(&p)
        .filter(|(_, &m)| m >= PRUNE_MASS)
        .map(|(iv, &m)| (iv.mass_point(), m));
    let distribution = DiscreteDistribution::from_atoms(atoms)?;
    let ll = loglik(&p, &mut prefix);
    Ok(NpmleFit {
        distribution,
        iterations,
        converged,
        loglik: ll,
    })
}

/// Largest number of Turnbull intervals for which the EM result is refined
/// by [`polish`].
const POLISH_MAX_INTERVALS: usize = 500;

/// Normalised gradient `d_j = (1/N) Σ_i w_i 1{j ∈ i} / P_i`; the NPMLE has
/// `d_j = 1` on its support and `d_j ≤ 1` elsewhere.
fn em_gradient(ranges: &[(usize, usize)], weights: &[f64], p: &[f64]) -> Option<(Vec<f64>, f64)> {
    let k = p.len();
    let mut prefix = vec![0.0; k + 1];
    for j in 0..k {
        prefix[j + 1] = prefix[j] + p[j];
    }
    let total: f64 = weights.iter().sum();
    let mut diff = vec![0.0; k + 1];
    let mut ll = 0.0;
    for (&(a, b), &w) in ranges.iter().zip(weights) {
        let prob = prefix[b] - prefix[a];
        if !(prob > 0.0) {
            return None;
        }
        ll += w * prob.ln();
        diff[a] += w / prob;
        diff[b] -= w / prob;
    }
    let mut d = vec![0.0; k];
    let mut acc = 0.0;
    for j in 0..k {
        acc += diff[j];
        d[j] = acc / total;
    }
    Some((d, ll))
}

/// Active-set Newton refinement of an EM solution. Self-consistency
/// iterations approach zero masses only sublinearly; here the likelihood is
/// maximised exactly on a candidate support, atoms that leave the simplex are
/// dropped and intervals with `d_j > 1` are added back. `p` is replaced only
/// when the result satisfies the optimality conditions and does not lower the
/// likelihood.
fn polish(ranges: &[(usize, usize)], weights: &[f64], p: &mut [f64]) -> bool {
    let k = p.len();
    let Some((_, ll_start)) = em_gradient(ranges, weights, p) else {
        return false;
    };
    let mut q: Vec<f64> = p.iter().map(|&v| if v >= PRUNE_MASS { v } else { 0.0 }).collect();
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    let mut active: Vec<bool> = q.iter().map(|&v| v > 0.0).collect();
    let total: f64 = weights.iter().sum();

    for _ in 0..(k + 50) {
        for _ in 0..200 {
            let Some((d, ll)) = em_gradient(ranges, weights, &q) else {
                return false;
            };
            let idx: Vec<usize> = (0..k).filter(|&j| active[j]).collect();
            let m = idx.len();
            // Hessian of the log-likelihood over all intervals, assembled from
            // rank-one blocks on contiguous ranges by a 2-D difference table
            let mut prefix = vec![0.0; k + 1];
            for j in 0..k {
                prefix[j + 1] = prefix[j] + q[j];
            }
            let mut table = DMatrix::<f64>::zeros(k + 1, k + 1);
            for (&(a, b), &w) in ranges.iter().zip(weights) {
                let prob = prefix[b] - prefix[a];
                let c = w / (prob * prob);
                table[(a, a)] += c;
                table[(a, b)] -= c;
                table[(b, a)] -= c;
                table[(b, b)] += c;
            }
            for r in 0..=k {
                for c in 1..=k {
                    table[(r, c)] += table[(r, c - 1)];
                }
            }
            for r in 1..=k {
                for c in 0..=k {
                    table[(r, c)] += table[(r - 1, c)];
                }
            }
            let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut rhs = DVector::<f64>::zeros(m + 1);
            for (r, &jr) in idx.iter().enumerate() {
                for (c, &jc) in idx.iter().enumerate() {
                    kkt[(r, c)] = -table[(jr, jc)];
                }
                kkt[(r, m)] = 1.0;
                kkt[(m, r)] = 1.0;
                rhs[r] = -d[jr] * total;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                return false;
            };
            let step: Vec<f64> = (0..m).map(|r| sol[r]).collect();
            if step.iter().any(|v| !v.is_finite()) {
                return false;
            }
            let size = step.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if size < 1e-15 {
                break;
            }
            let (mut t, mut blocking) = (1.0, None);
            for (r, &j) in idx.iter().enumerate() {
                if step[r] < 0.0 && -q[j] / step[r] < t {
                    t = -q[j] / step[r];
                    blocking = Some(j);
                }
            }
            let mut next = q.clone();
            let mut accepted = false;
            for _ in 0..60 {
                for (r, &j) in idx.iter().enumerate() {
                    next[j] = (q[j] + t * step[r]).max(0.0);
                }
                if let Some(j) = blocking {
                    next[j] = 0.0;
                }
                let s: f64 = next.iter().sum();
                next.iter_mut().for_each(|v| *v /= s);
                if let Some((_, ll_next)) = em_gradient(ranges, weights, &next) {
                    if ll_next >= ll - 1e-13 * ll.abs().max(1.0) {
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
                blocking = None;
            }
            if !accepted {
                return false;
            }
            if let Some(j) = blocking {
                active[j] = false;
            }
            q = next;
            if t * size < 1e-15 {
                break;
            }
        }
        let Some((d, _)) = em_gradient(ranges, weights, &q) else {
            return false;
        };
        let entering = (0..k)
            .filter(|&j| !active[j])
            .max_by(|&a, &b| d[a].total_cmp(&d[b]))
            .filter(|&j| d[j] > 1.0 + 1e-10);
        match entering {
            Some(j) => active[j] = true,
            None => break,
        }
    }

    let Some((d, ll)) = em_gradient(ranges, weights, &q) else {
        return false;
    };
    let optimal = (0..k).all(|j| {
        if q[j] > 0.0 {
            (d[j] - 1.0).abs() <= 1e-8
        } else {
            d[j] <= 1.0 + 1e-8
        }
    });
    if optimal && ll >= ll_start - 1e-12 * ll_start.abs().max(1.0) {
        p.copy_from_slice(&q);
        true
    } else {
        false
    }
}

/// Product-limit estimator for exact and right-censored data. Mass beyond a
/// censored largest observation is not represented (the result is improper).
pub fn kaplan_meier(sample: &[Observation]) -> Result<DiscreteDistribution> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut rows: Vec<(f64, bool)> = Vec::with_capacity(sample.len());
    for obs in sample {
        match obs.kind() {
            ObservationKind::Exact => rows.push((obs.lower(), true)),
            ObservationKind::RightCensored => rows.push((obs.lower(), false)),
            other => {
                return Err(Error::Param(format!(
                    "product-limit estimator needs exact or right-censored data, got {other}"
                )))
            }
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = rows.len() as f64;
    let mut at_risk = n;
    let mut surv = 1.0;
    // before the first censoring the estimator is the empirical distribution;
    // dividing by n there keeps it exact
    let mut censored_seen = false;
    let mut atoms = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let t = rows[i].0;
        let mut events = 0.0;
        let mut removed = 0.0;
        while i < rows.len() && rows[i].0 == t {
            if rows[i].1 {
                events += 1.0;
            }
            removed += 1.0;
            i += 1;
        }
        if events > 0.0 {
            let mass = if censored_seen { surv * events / at_risk } else { events / n };
            atoms.push((t, mass));
            surv -= mass;
        }
        censored_seen |= removed > events;
        at_risk -= removed;
    }
    DiscreteDistribution::from_atoms(atoms)
}

/// Current-status NPMLE by weighted pool-adjacent-violators on the
/// indicators `δ = 1{X ≤ C}`, ordered by examination time.
pub fn pava_case1(sample: &[Observation]) -> Result<DiscreteDistribution> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut rows: Vec<(f64, f64)> = Vec::with_capacity(sample.len());
    for obs in sample {
        match obs.kind() {
            ObservationKind::LeftCensored => rows.push((obs.upper(), 1.0)),
            ObservationKind::RightCensored => rows.push((obs.lower(), 0.0)),
            other => {
                return Err(Error::Param(format!(
                    "current-status data must be left or right censored, got {other}"
                )))
            }
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (time, sum of δ, weight) per distinct examination time
    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    for (c, d) in rows {
        match cells.last_mut() {
            Some(last) if last.0 == c => {
                last.1 += d;
                last.2 += 1.0;
            }
            _ => cells.push((c, d, 1.0)),
        }
    }

    // blocks: (first cell index, sum, weight)
    let mut blocks: Vec<(usize, f64, f64)> = Vec::with_capacity(cells.len());
    for (i, &(_, s, w)) in cells.iter().enumerate() {
        blocks.push((i, s, w));
        while blocks.len() >= 2 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.1 / a.2 > b.1 / b.2 {
                blocks.pop();
                let last = blocks.last_mut().unwrap();
                last.1 += b.1;
                last.2 += b.2;
            } else {
                break;
            }
        }
    }

    let mut atoms = Vec::new();
    let mut prev = 0.0;
    for &(start, s, w) in &blocks {
        let level = s / w;
        if level > prev {
            atoms.push((cells[start].0, level - prev));
            prev = level;
        }
    }
    if 1.0 - prev > PRUNE_MASS {
        atoms.push((f64::INFINITY, 1.0 - prev));
    }
    DiscreteDistribution::from_atoms(atoms)
}

/// NPMLE for a sample under its scheme: product-limit for complete and
/// right-censored data, PAVA for current-status data, Turnbull EM otherwise.
/// The returned distribution always carries unobserved tail mass at `+∞`.
pub fn npmle(sample: &[Observation], scheme: SampleScheme, opts: &NpmleOptions) -> Result<NpmleFit> {
    let closed_form = match scheme {
        SampleScheme::Complete | SampleScheme::RightCensored => Some(kaplan_meier(sample)?),
        SampleScheme::IntervalCase1 => Some(pava_case1(sample)?),
        _ => None,
    };
    match closed_form {
        Some(dist) => {
            let tail = 1.0 - dist.total();
            let distribution = if tail > PRUNE_MASS && dist.tail_mass() == 0.0 {
                DiscreteDistribution::from_atoms(
                    dist.support()
                        .iter()
                        .copied()
                        .zip(dist.masses().iter().copied())
                        .chain(std::iter::once((f64::INFINITY, tail))),
                )?
            } else {
                dist
            };
            let loglik = loglik_censored(&distribution, sample)?;
            Ok(NpmleFit {
                distribution,
                iterations: 0,
                converged: true,
                loglik,
            })
        }
        None => turnbull_em(sample, opts),
    }
}

/// `Σ_i ln P_dist{X_i ∈ (lower_i, upper_i]}`.
pub fn loglik_censored(dist: &DiscreteDistribution, sample: &[Observation]) -> Result<f64> {
    let mut total = 0.0;
    for (i, obs) in sample.iter().enumerate() {
        let p = dist.prob(obs);
        if !(p > 0.0) {
            return Err(Error::DegenerateDatum { index: i });
        }
        total += p.ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ex(x: f64) -> Observation {
        Observation::exact(x).unwrap()
    }
    fn rc(x: f64) -> Observation {
        Observation::right(x).unwrap()
    }
    fn lc(x: f64) -> Observation {
        Observation::left(x).unwrap()
    }
    fn iv(a: f64, b: f64) -> Observation {
        Observation::interval(a, b).unwrap()
    }

    #[test]
    fn km_without_censoring_is_ecdf() {
        let d = kaplan_meier(&[ex(1.0), ex(2.0), ex(3.0)]).unwrap();
        assert_eq!(d.support(), &[1.0, 2.0, 3.0]);
        for &m in d.masses() {
            assert_abs_diff_eq!(m, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn km_hand_example() {
        let d = kaplan_meier(&[ex(1.0), rc(2.0), ex(3.0)]).unwrap();
        assert_eq!(d.support(), &[1.0, 3.0]);
        assert_abs_diff_eq!(d.masses()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.masses()[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn km_all_censored_is_empty() {
        let d = kaplan_meier(&[rc(1.0), rc(2.0)]).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.total(), 0.0);
        assert!(matches!(kaplan_meier(&[]), Err(Error::EmptySample)));
    }

    #[test]
    fn km_censored_at_event_time_stays_at_risk() {
        // censored at 1 means X > 1, so it is at risk at time 1
        let d = kaplan_meier(&[ex(1.0), rc(1.0), ex(2.0)]).unwrap();
        assert_abs_diff_eq!(d.masses()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.masses()[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn km_improper_when_largest_censored() {
        let d = kaplan_meier(&[ex(1.0), rc(2.0)]).unwrap();
        assert_abs_diff_eq!(d.total(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn turnbull_examples() {
        let s = turnbull_support(&[iv(0.0, 2.0), rc(1.0)]).unwrap();
        assert_eq!(s.intervals.len(), 1);
        assert_eq!((s.intervals[0].left, s.intervals[0].right), (1.0, 2.0));
        assert_eq!(s.membership, vec![(0, 1), (0, 1)]);

        let s = turnbull_support(&[ex(3.0), ex(1.0), ex(3.0)]).unwrap();
        assert_eq!(s.intervals.len(), 2);
        assert!(s.intervals.iter().all(|i| i.degenerate));

        let s = turnbull_support(&[iv(0.0, 1.0), iv(2.0, 3.0)]).unwrap();
        let got: Vec<(f64, f64)> = s.intervals.iter().map(|i| (i.left, i.right)).collect();
        assert_eq!(got, vec![(0.0, 1.0), (2.0, 3.0)]);
    }

    #[test]
    fn turnbull_half_open_touching() {
        // (0,1] and (1,2] do not intersect
        let s = turnbull_support(&[iv(0.0, 1.0), iv(1.0, 2.0)]).unwrap();
        assert_eq!(s.intervals.len(), 2);
        // exact point at the shared endpoint belongs to the left interval only
        let s = turnbull_support(&[iv(0.0, 1.0), iv(1.0, 2.0), ex(1.0)]).unwrap();
        assert_eq!(s.intervals.len(), 2);
        assert!(s.intervals[0].degenerate);
        assert_eq!(s.membership[2], (0, 1));
        assert_eq!(s.membership[0], (0, 1));
        assert_eq!(s.membership[1], (1, 2));
    }

    #[test]
    fn em_all_exact_is_ecdf() {
        let sample = [ex(1.0), ex(2.0), ex(5.0)];
        let fit = turnbull_em(&sample, &NpmleOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
        assert_eq!(fit.distribution.support(), &[1.0, 2.0, 5.0]);

        // ties become multiplicities
        let sample = [ex(1.0), ex(2.0), ex(2.0), ex(5.0)];
        let fit = turnbull_em(&sample, &NpmleOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.distribution.support(), &[1.0, 2.0, 5.0]);
        assert_abs_diff_eq!(fit.distribution.masses()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn em_single_interval_gets_all_mass() {
        let sample = [iv(0.0, 2.0), rc(1.0)];
        let fit = turnbull_em(&sample, &NpmleOptions::default()).unwrap();
        assert_eq!(fit.distribution.support(), &[2.0]);
        assert_abs_diff_eq!(fit.distribution.masses()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            loglik_censored(&fit.distribution, &sample).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn em_tail_mass_sits_at_infinity() {
        let fit = turnbull_em(&[rc(1.0), rc(2.0)], &NpmleOptions::default()).unwrap();
        assert_eq!(fit.distribution.support(), &[f64::INFINITY]);
        assert_eq!(fit.distribution.cdf(1e300), 0.0);
        assert_abs_diff_eq!(fit.distribution.tail_mass(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn em_ascent_and_self_consistency() {
        let sample = [
            ex(1.0),
            lc(0.5),
            rc(1.5),
            ex(2.5),
            lc(2.0),
            rc(0.7),
            ex(0.9),
        ];
        let opts = NpmleOptions {
            tol: 1e-12,
            max_iter: 100_000,
        };
        let (fit, trace) = turnbull_em_with_trace(&sample, &opts).unwrap();
        assert!(fit.converged);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "EM decreased: {} -> {}", w[0], w[1]);
        }
        // self-consistency at the fixed point
        let d = &fit.distribution;
        let n = sample.len() as f64;
        for (s, p) in d.support().iter().zip(d.masses()) {
            let mut rhs = 0.0;
            for obs in &sample {
                let hit = if s.is_infinite() {
                    obs.upper().is_infinite()
                } else {
                    obs.contains(*s)
                };
                if hit {
                    rhs += p / d.prob(obs);
                }
            }
            assert_abs_diff_eq!(*p, rhs / n, epsilon = 1e-9);
        }
    }

    #[test]
    fn polish_completes_a_truncated_em_run() {
        let sample = [lc(1.0), rc(0.5), lc(2.0), rc(1.5), ex(0.7)];
        let short = turnbull_em(&sample, &NpmleOptions { tol: 1e-15, max_iter: 2 }).unwrap();
        assert!(short.converged);
        assert_eq!(short.iterations, 2);
        let long = turnbull_em(&sample, &NpmleOptions { tol: 1e-15, max_iter: 1_000_000 }).unwrap();
        for t in [0.5, 0.7, 1.0, 1.5, 2.0] {
            assert_abs_diff_eq!(short.distribution.cdf(t), long.distribution.cdf(t), epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_mass_interval_is_found_exactly() {
        // L = p1 p3 (p1 + p2)(p2 + p3) is flat to second order at p2 = 0,
        // where self-consistency steps shrink p2 only like 1/k
        let sample = [ex(1.0), ex(3.0), lc(2.0), iv(1.5, 3.0)];
        let fit = turnbull_em(&sample, &NpmleOptions::default()).unwrap();
        let atoms: Vec<f64> = fit.distribution.masses().to_vec();
        assert_eq!(atoms.len(), 2);
        assert_abs_diff_eq!(atoms[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(atoms[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn em_reports_nonconvergence() {
        // more Turnbull intervals than the Newton refinement accepts
        let mut sample: Vec<Observation> = (1..=600).map(|i| ex(i as f64)).collect();
        sample.extend((1..=600).map(|i| lc(i as f64 + 0.5)));
        let fit = turnbull_em(&sample, &NpmleOptions { tol: 1e-15, max_iter: 2 }).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
    }

    #[test]
    fn pava_examples() {
        let d = pava_case1(&[lc(1.0), rc(2.0)]).unwrap();
        assert_abs_diff_eq!(d.cdf(1.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.cdf(2.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.tail_mass(), 0.5, epsilon = 1e-15);

        // already monotone: running proportions with no pooling
        let d = pava_case1(&[rc(1.0), lc(2.0), rc(2.0), lc(3.0)]).unwrap();
        assert_abs_diff_eq!(d.cdf(1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.cdf(2.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.cdf(3.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn loglik_examples() {
        let sample = [ex(1.0), ex(2.0), ex(3.0), ex(4.0)];
        let d = kaplan_meier(&sample).unwrap();
        assert_abs_diff_eq!(
            loglik_censored(&d, &sample).unwrap(),
            4.0 * (0.25f64).ln(),
            epsilon = 1e-12
        );
        assert!(matches!(
            loglik_censored(&d, &[ex(1.5)]),
            Err(Error::DegenerateDatum { index: 0 })
        ));
    }

    #[test]
    fn distribution_json_roundtrip_keeps_infinity() {
        let d = DiscreteDistribution::new(vec![1.0, f64::INFINITY], vec![0.25, 0.75]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"inf\""));
        let back: DiscreteDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![2.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![1.0], vec![0.0]).is_err());
        assert!(DiscreteDistribution::new(vec![1.0, 2.0], vec![0.7, 0.7]).is_err());
        let d = DiscreteDistribution::from_atoms([(2.0, 0.25), (1.0, 0.25), (2.0, 0.5)]).unwrap();
        assert_eq!(d.support(), &[1.0, 2.0]);
        assert_abs_diff_eq!(d.cdf(1.5), 0.25);
        assert_abs_diff_eq!(d.cdf(2.0), 1.0);
    }
}
