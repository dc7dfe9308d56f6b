//! Explicit, truncated instantiation of CRM hierarchies as ground truth for
//! the collapsed formulas.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::distributions::CountMatrix;
use crate::error::{HcrmError, Result};
use crate::levy::LevySpec;
use crate::parallel::{batch_sizes, map_batches, Execution};
use crate::quad::adaptive_simpson;

/// Relative truncation used when callers do not pick ε themselves.
pub const DEFAULT_RELATIVE_EPS: f64 = 1e-4;

/// Atom weights of one CRM draw above the truncation point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAtoms {
    /// Descending.
    pub weights: Vec<f64>,
    pub z_eps: f64,
    /// Expected total weight of the discarded atoms.
    pub missing_mass_bound: f64,
}

impl WeightedAtoms {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Region {
    mass: f64,
    discount: f64,
    lo: f64,
    /// Power-law body on `[lo, 1)` when true, exponential tail otherwise.
    body: bool,
}

/// A CRM weight sampler prepared for one spec and truncation level.
#[derive(Debug, Clone, PartialEq)]
pub struct CrmSampler {
    z_eps: f64,
    missing: f64,
    regions: Vec<Region>,
    tail_mass: f64,
}

/// `∫_a^b x^{-1-d} e^{-x} dx / Γ(1-d)` by quadrature in log x.
fn intensity_mass(d: f64, a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let f = |y: f64| (-y.exp() - d * y).exp();
    let (la, lb) = (a.ln(), b.ln());
    let n = 64;
    let h = (lb - la) / n as f64;
    let coarse: f64 = (0..n)
        .map(|i| {
            let x = la + i as f64 * h;
            h / 6.0 * (f(x) + 4.0 * f(x + 0.5 * h) + f(x + h))
        })
        .sum();
    adaptive_simpson(f, la, lb, 1e-13 * coarse.max(f64::MIN_POSITIVE)) / ln_gamma(1.0 - d).exp()
}

/// Expected total mass of a spec: `μ(S) ∫ z ρ(dz)`.
pub fn expected_total_mass(spec: &LevySpec) -> f64 {
    spec.mass * spec.intensity_terms().iter().map(|(c, _)| c).sum::<f64>()
}

/// ε used by default: a fixed fraction of the expected total mass.
pub fn default_eps(spec: &LevySpec) -> f64 {
    DEFAULT_RELATIVE_EPS * expected_total_mass(spec)
}

const TAIL_END: f64 = 60.0;

impl CrmSampler {
    /// `eps` bounds the expected mass of discarded atoms (absolute).
    pub fn new(spec: &LevySpec, eps: f64) -> Result<Self> {
        spec.validate()?;
        if !(eps > 0.0) {
            return Err(HcrmError::Domain(format!("truncation eps must be positive, got {eps}")));
        }
        let terms: Vec<(f64, f64)> = spec
            .intensity_terms()
            .into_iter()
            .map(|(c, d)| (c * spec.mass, d))
            .collect();
        let total: f64 = terms.iter().map(|t| t.0).sum();
        if eps >= total {
            return Ok(CrmSampler {
                z_eps: f64::INFINITY,
                missing: total,
                regions: Vec::new(),
                tail_mass: 0.0,
            });
        }
        let missing = |z: f64| -> f64 { terms.iter().map(|&(c, d)| c * gamma_lr(1.0 - d, z)).sum() };
        let (mut lo, mut hi) = ((1e-300f64).ln(), TAIL_END.ln());
        if missing(lo.exp()) > eps {
            return Err(HcrmError::Nonconvergence(format!("eps {eps} below reachable truncation")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if missing(mid.exp()) <= eps {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        if hi - lo >= 1e-6 {
            return Err(HcrmError::Nonconvergence(format!("bisection stalled at [{lo}, {hi}]")));
        }
        let z = lo.exp();
        let mut regions = Vec::new();
        for &(c, d) in &terms {
            if z < 1.0 {
                regions.push(Region {
                    mass: c * intensity_mass(d, z, 1.0),
                    discount: d,
                    lo: z,
                    body: true,
                });
            }
            let b = z.max(1.0);
            regions.push(Region {
                mass: c * intensity_mass(d, b, TAIL_END.max(b + 40.0)),
                discount: d,
                lo: b,
                body: false,
            });
        }
        let tail_mass = regions.iter().map(|r| r.mass).sum();
        Ok(CrmSampler {
            z_eps: z,
            missing: missing(z),
            regions,
            tail_mass,
        })
    }

    pub fn z_eps(&self) -> f64 {
        self.z_eps
    }

    pub fn missing_mass(&self) -> f64 {
        self.missing
    }

    /// Expected number of atoms kept.
    pub fn expected_atoms(&self) -> f64 {
        self.tail_mass
    }

    fn draw_region<R: Rng + ?Sized>(&self, reg: &Region, rng: &mut R) -> f64 {
        let d = reg.discount;
        loop {
            if reg.body {
                let u: f64 = rng.random();
                let x = if d == 0.0 {
                    (reg.lo.ln() * (1.0 - u)).exp()
                } else {
                    let a = reg.lo.powf(-d);
                    (a - u * (a - 1.0)).powf(-1.0 / d)
                };
                if rng.random::<f64>() < (reg.lo - x).exp() {
                    return x;
                }
            } else {
                let e: f64 = Exp1.sample(rng);
                let x = reg.lo + e;
                if rng.random::<f64>() < (x / reg.lo).powf(-1.0 - d) {
                    return x;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightedAtoms {
        let count = poisson(self.tail_mass, rng);
        let mut weights = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut u = rng.random::<f64>() * self.tail_mass;
            let mut chosen = self.regions.len() - 1;
            for (idx, r) in self.regions.iter().enumerate() {
                if u < r.mass {
                    chosen = idx;
                    break;
                }
                u -= r.mass;
            }
            weights.push(self.draw_region(&self.regions[chosen], rng));
        }
        weights.sort_unstable_by(|a, b| b.total_cmp(a));
        WeightedAtoms {
            weights,
            z_eps: self.z_eps,
            missing_mass_bound: self.missing,
        }
    }
}

/// Weights of a CRM (mass included in `spec`) truncated at level `eps`.
pub fn sample_crm_weights<R: Rng + ?Sized>(spec: &LevySpec, eps: f64, rng: &mut R) -> Result<WeightedAtoms> {
    Ok(CrmSampler::new(spec, eps)?.sample(rng))
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if !(rate > 0.0) {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

/// `ln X` for `X ~ Gamma(shape, 1)`, stable for tiny shapes.
fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.ln() + rng.random::<f64>().ln() / shape
    }
}

fn require_gamma_object(object: &LevySpec) -> Result<()> {
    if object.gamma_mass() != Some(1.0) {
        return Err(HcrmError::InvalidSpec(
            "explicit hierarchy sampling needs a unit-mass gamma object measure".into(),
        ));
    }
    Ok(())
}

/// Per-document feature counts keyed by base-atom index.
pub type DocCounts = Vec<BTreeMap<usize, u32>>;

/// Count matrix (features with at least one count) of sparse document counts.
pub fn counts_to_matrix(docs: &DocCounts) -> CountMatrix {
    let n = docs.len();
    let features: std::collections::BTreeSet<usize> =
        docs.iter().flat_map(|d| d.keys().copied()).collect();
    let cols: Vec<usize> = features.into_iter().collect();
    let mut data = vec![0u32; n * cols.len()];
    for (i, d) in docs.iter().enumerate() {
        for (c, f) in cols.iter().enumerate() {
            data[i * cols.len() + c] = d.get(f).copied().unwrap_or(0);
        }
    }
    CountMatrix::from_parts(n, cols.len(), data)
        .expect("every kept feature has a count")
        .canonical()
}

/// One-level draw: `n` Poisson processes driven by one CRM.
pub fn sample_crm_poisson<R: Rng + ?Sized>(sampler: &CrmSampler, n: usize, rng: &mut R) -> DocCounts {
    let atoms = sampler.sample(rng);
    (0..n)
        .map(|_| {
            let mut m = BTreeMap::new();
            for (j, &w) in atoms.weights.iter().enumerate() {
                let c = poisson(w, rng) as u32;
                if c > 0 {
                    m.insert(j, c);
                }
            }
            m
        })
        .collect()
}

/// Two-level draw: base atoms β_j, per-document weights `L_ij ~ Gamma(β_j, 1)`
/// and counts `Poisson(L_ij)`.
pub fn sample_hierarchy<R: Rng + ?Sized>(
    base: &CrmSampler,
    object: &LevySpec,
    n: usize,
    rng: &mut R,
) -> Result<DocCounts> {
    require_gamma_object(object)?;
    let atoms = base.sample(rng);
    Ok((0..n)
        .map(|_| {
            let mut m = BTreeMap::new();
            for (j, &b) in atoms.weights.iter().enumerate() {
                let l = ln_gamma_variate(b, rng).exp();
                let c = poisson(l, rng) as u32;
                if c > 0 {
                    m.insert(j, c);
                }
            }
            m
        })
        .collect())
}

/// How the conditional draws are produced. Both give the same law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionMode {
    /// Full hierarchy draws, kept when every document total matches.
    Literal,
    /// Base atoms accepted with probability proportional to the
    /// negative-binomial likelihood of the targets given `Φ(S)`, then the
    /// counts split by Dirichlet-multinomial.
    #[default]
    Marginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSample {
    /// Canonical count matrices of accepted draws.
    pub matrices: Vec<CountMatrix>,
    pub attempts: u64,
}

impl ConditionalSample {
    pub fn acceptance_rate(&self) -> f64 {
        self.matrices.len() as f64 / self.attempts.max(1) as f64
    }

    pub fn stats(&self) -> Vec<SeatingStat> {
        self.matrices.iter().map(SeatingStat::from_matrix).collect()
    }
}

/// Distinct dishes and sorted per-dish customer totals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeatingStat {
    pub dishes: usize,
    pub sorted_totals: Vec<u32>,
}

impl SeatingStat {
    pub fn from_matrix(m: &CountMatrix) -> Self {
        let mut sorted_totals: Vec<u32> = m.col_sums().iter().map(|&c| c as u32).collect();
        sorted_totals.sort_unstable_by(|a, b| b.cmp(a));
        SeatingStat {
            dishes: m.cols(),
            sorted_totals,
        }
    }
}

fn nb_log_lik(phi: f64, targets: &[u32]) -> f64 {
    targets
        .iter()
        .map(|&t| {
            if t == 0 {
                -phi * std::f64::consts::LN_2
            } else if phi == 0.0 {
                f64::NEG_INFINITY
            } else {
                let t = f64::from(t);
                ln_gamma(t + phi) - ln_gamma(phi) - (phi + t) * std::f64::consts::LN_2
            }
        })
        .sum()
}

fn nb_log_lik_max(targets: &[u32]) -> f64 {
    if targets.iter().all(|&t| t == 0) {
        return 0.0;
    }
    let (a, b) = ((1e-8f64).ln(), (1e4f64).ln());
    let steps = 4000;
    let at = |y: f64| nb_log_lik(y.exp(), targets);
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for s in 0..=steps {
        let v = at(a + (b - a) * s as f64 / steps as f64);
        if v > best_v {
            best_v = v;
            best = s;
        }
    }
    let step = (b - a) / steps as f64;
    let (mut lo, mut hi) = (a + step * (best as f64 - 1.0), a + step * (best as f64 + 1.0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let (x1, x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if at(x1) > at(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    best_v.max(at(0.5 * (lo + hi)))
}

fn split_counts<R: Rng + ?Sized>(weights: &[f64], targets: &[u32], rng: &mut R) -> DocCounts {
    targets
        .iter()
        .map(|&t| {
            let mut m = BTreeMap::new();
            if t == 0 {
                return m;
            }
            let logs: Vec<f64> = weights.iter().map(|&b| ln_gamma_variate(b, rng)).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = p.iter().sum();
            for _ in 0..t {
                let mut u = rng.random::<f64>() * z;
                let mut j = p.len() - 1;
                for (idx, &x) in p.iter().enumerate() {
                    if u < x {
                        j = idx;
                        break;
                    }
                    u -= x;
                }
                *m.entry(j).or_insert(0) += 1;
            }
            m
        })
        .collect()
}

/// Settings for [`conditional_rejection_sample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionConfig {
    pub accepted: usize,
    /// Maximum number of attempted draws.
    pub budget: u64,
    pub seed: u64,
    pub mode: RejectionMode,
    pub batch_size: usize,
    pub execution: Execution,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig {
            accepted: 10_000,
            budget: 100_000_000,
            seed: 0,
            mode: RejectionMode::Marginal,
            batch_size: 2_000,
            execution: Execution::Parallel,
        }
    }
}

/// Hierarchy draws conditioned on the per-document totals `targets`.
pub fn conditional_rejection_sample(
    base: &LevySpec,
    object: &LevySpec,
    targets: &[u32],
    eps: f64,
    cfg: &RejectionConfig,
) -> Result<ConditionalSample> {
    require_gamma_object(object)?;
    if cfg.budget == 0 {
        return Err(HcrmError::Budget("sample budget is zero".into()));
    }
    let sampler = CrmSampler::new(base, eps)?;
    let log_max = nb_log_lik_max(targets) + 1e-9;
    let n = targets.len();
    let quotas = batch_sizes(cfg.accepted, cfg.batch_size);
    let per_batch_budget = (cfg.budget / quotas.len().max(1) as u64).max(1);
    let results = map_batches(cfg.execution, cfg.seed, quotas.len(), |b, rng| {
        let quota = quotas[b];
        let mut out = Vec::with_capacity(quota);
        let mut attempts = 0u64;
        while out.len() < quota && attempts < per_batch_budget {
            attempts += 1;
            match cfg.mode {
                RejectionMode::Literal => {
                    let docs = sample_hierarchy(&sampler, object, n, rng).expect("checked object");
                    let ok = docs
                        .iter()
                        .zip(targets)
                        .all(|(d, &t)| d.values().sum::<u32>() == t);
                    if ok {
                        out.push(counts_to_matrix(&docs));
                    }
                }
                RejectionMode::Marginal => {
                    let atoms = sampler.sample(rng);
                    let ll = nb_log_lik(atoms.total(), targets) - log_max;
                    if rng.random::<f64>().ln() < ll {
                        out.push(counts_to_matrix(&split_counts(&atoms.weights, targets, rng)));
                    }
                }
            }
        }
        (out, attempts)
    });
    let attempts: u64 = results.iter().map(|r| r.1).sum();
    let matrices: Vec<CountMatrix> = results.into_iter().flat_map(|r| r.0).collect();
    if matrices.len() < cfg.accepted {
        return Err(HcrmError::Budget(format!(
            "accepted {} of {} draws after {attempts} attempts (acceptance rate {:.3e})",
            matrices.len(),
            cfg.accepted,
            matrices.len() as f64 / attempts.max(1) as f64
        )));
    }
    Ok(ConditionalSample { matrices, attempts })
}

/// Total-variation distance between two empirical laws.
pub fn empirical_tv<K: Ord + Clone>(a: &[K], b: &[K]) -> f64 {
    let mut map: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for k in a {
        map.entry(k.clone()).or_default().0 += 1.0 / a.len() as f64;
    }
    for k in b {
        map.entry(k.clone()).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * map.values().map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// TV distance between an empirical law and an exact one.
pub fn tv_against<K: Ord + Clone>(sample: &[K], exact: &BTreeMap<K, f64>) -> f64 {
    let mut map: BTreeMap<K, (f64, f64)> = exact.iter().map(|(k, &p)| (k.clone(), (0.0, p))).collect();
    for k in sample {
        map.entry(k.clone()).or_default().0 += 1.0 / sample.len() as f64;
    }
    0.5 * map.values().map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Chi-square statistic, degrees of freedom and p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
}

/// Two-sample chi-square over keyed bins; bins with fewer than `min_count`
/// pooled observations are merged.
pub fn two_sample_chi_square<K: Ord + Clone>(a: &[K], b: &[K], min_count: usize) -> ChiSquare {
    let mut map: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for k in a {
        map.entry(k.clone()).or_default().0 += 1.0;
    }
    for k in b {
        map.entry(k.clone()).or_default().1 += 1.0;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut rest = (0.0, 0.0);
    for (x, y) in map.into_values() {
        if x + y >= min_count as f64 {
            bins.push((x, y));
        } else {
            rest.0 += x;
            rest.1 += y;
        }
    }
    if rest.0 + rest.1 > 0.0 {
        bins.push(rest);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let statistic = bins
        .iter()
        .map(|&(x, y)| (ka * x - kb * y).powi(2) / (x + y))
        .sum();
    let dof = bins.len().saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_p(statistic, dof),
    }
}

/// Goodness of fit of counts against Poisson(rate); the upper tail is merged
/// until every bin expects at least 5.
pub fn poisson_chi_square(sample: &[u64], rate: f64) -> ChiSquare {
    let n = sample.len() as f64;
    let max = sample.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0.0; max as usize + 1];
    for &k in sample {
        observed[k as usize] += 1.0;
    }
    let pmf = |k: usize| (k as f64 * rate.ln() - rate - ln_gamma(k as f64 + 1.0)).exp();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut cdf = 0.0;
    let mut k = 0usize;
    loop {
        let p = pmf(k);
        let remaining = 1.0 - cdf - p;
        if n * p < 5.0 || n * remaining < 5.0 {
            let obs: f64 = observed.iter().skip(k).sum();
            bins.push((obs, n * (1.0 - cdf)));
            break;
        }
        bins.push((observed.get(k).copied().unwrap_or(0.0), n * p));
        cdf += p;
        k += 1;
    }
    let statistic = bins.iter().map(|&(o, e)| (o - e).powi(2) / e).sum();
    let dof = bins.len().saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_p(statistic, dof),
    }
}

/// Thresholds for [`compare_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareThresholds {
    pub max_tv: f64,
    pub min_p_value: f64,
}

impl Default for CompareThresholds {
    fn default() -> Self {
        CompareThresholds {
            max_tv: 0.03,
            min_p_value: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub collapsed_samples: usize,
    pub oracle_samples: usize,
    pub tv_dishes: f64,
    pub chi_square: ChiSquare,
    pub thresholds: CompareThresholds,
    pub pass: bool,
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        format!(
            "collapsed n={} oracle n={}\ntv(distinct dishes) = {:.5} (max {})\nchi-square = {:.3} on {} dof, p = {:.4} (min {})\n{}\n",
            self.collapsed_samples,
            self.oracle_samples,
            self.tv_dishes,
            self.thresholds.max_tv,
            self.chi_square.statistic,
            self.chi_square.dof,
            self.chi_square.p_value,
            self.thresholds.min_p_value,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Compares seating statistics from the collapsed chain and the oracle.
pub fn compare_report(
    collapsed: &[SeatingStat],
    oracle: &[SeatingStat],
    thresholds: CompareThresholds,
) -> Result<ComparisonReport> {
    if collapsed.is_empty() || oracle.is_empty() {
        return Err(HcrmError::NoSamples);
    }
    let da: Vec<usize> = collapsed.iter().map(|s| s.dishes).collect();
    let db: Vec<usize> = oracle.iter().map(|s| s.dishes).collect();
    let tv_dishes = empirical_tv(&da, &db);
    let chi_square = two_sample_chi_square(collapsed, oracle, 10);
    let pass = tv_dishes <= thresholds.max_tv && chi_square.p_value > thresholds.min_p_value;
    Ok(ComparisonReport {
        collapsed_samples: collapsed.len(),
        oracle_samples: oracle.len(),
        tv_dishes,
        chi_square,
        thresholds,
        pass,
    })
}
