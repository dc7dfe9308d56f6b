//! The verification suite behind `hcrm verify`: closed forms, derivative
//! checks, PMF/Gibbs identities and Monte Carlo comparisons with the oracle.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{crm_poisson_log_pmf, crm_poisson_log_pmf_at, restaurant_counts_log_pmf, CountMatrix};
use crate::error::Result;
use crate::franchise::weights::dish_level_point;
use crate::franchise::{
    dish_log_weights, table_log_weights, Chain, FranchiseState, Model, SamplerConfig, TableRule,
    UnitLikelihood,
};
use crate::levy::{psi, psi_deriv, BaseLaplace, GgpComponent, LevySpec};
use crate::oracle::{
    compare_report, conditional_rejection_sample, counts_to_matrix, default_eps, expected_total_mass,
    poisson_chi_square, sample_crm_poisson, sample_hierarchy, tv_against, CompareThresholds, CrmSampler,
    RejectionConfig, SeatingStat,
};
use crate::parallel::{batch_sizes, map_batches, Execution};
use crate::signed_log::{log_sum_exp, SignedLogValue};

/// Deliberate faults for exercising the suite itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negates every ψ^{(k)} the derivative checks see.
    PsiDerivSignFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub random_states: usize,
    pub laplace_draws: usize,
    pub prop1_draws: usize,
    pub eq5_accepted: usize,
    pub eq5_single_draws: usize,
    pub chain_samples: usize,
    pub budget: u64,
    pub execution: Execution,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 20240601,
            random_states: 1000,
            laplace_draws: 100_000,
            prop1_draws: 100_000,
            eq5_accepted: 50_000,
            eq5_single_draws: 200_000,
            chain_samples: 20_000,
            budget: 500_000_000,
            execution: Execution::Parallel,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            pass: value <= threshold,
            value,
            threshold,
            detail,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            pass: value > threshold,
            value,
            threshold,
            detail,
        }
    }

    fn error(name: &str, e: impl std::fmt::Display) -> Self {
        CheckResult {
            name: name.into(),
            pass: false,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: format!("error: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} {:<28} value={:.6e} threshold={:.3e}  {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold,
                c.detail
            ));
        }
        s.push_str(if self.all_pass() { "all checks passed\n" } else { "some checks FAILED\n" });
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn guard(name: &str, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult::error(name, e))
}

/// Specs used by the derivative checks.
pub fn derivative_specs() -> Vec<(String, LevySpec)> {
    vec![
        ("gamma".into(), LevySpec::gamma(1.0).unwrap()),
        ("ggp(0.1)".into(), LevySpec::generalized_gamma(0.1, 1.0).unwrap()),
        ("ggp(0.3)".into(), LevySpec::generalized_gamma(0.3, 1.0).unwrap()),
        (
            "sggp(1:0,1:0.4)".into(),
            LevySpec::sum_generalized_gamma(vec![
                GgpComponent { theta: 1.0, discount: 0.0 },
                GgpComponent { theta: 1.0, discount: 0.4 },
            ])
            .unwrap(),
        ),
    ]
}

fn psi_deriv_checked(spec: &LevySpec, k: u32, t: f64, fault: Option<Fault>) -> Result<SignedLogValue> {
    let v = psi_deriv(spec, k, t)?;
    Ok(match fault {
        Some(Fault::PsiDerivSignFlip) => -v,
        None => v,
    })
}

/// Central difference with two Richardson levels.
pub fn richardson_derivative<F: Fn(f64) -> f64>(f: F, t: f64, h: f64) -> f64 {
    let d = |h: f64| (f(t + h) - f(t - h)) / (2.0 * h);
    let r1 = |h: f64| (4.0 * d(0.5 * h) - d(h)) / 3.0;
    (16.0 * r1(0.5 * h) - r1(h)) / 15.0
}

/// ψ^{(k)} against the Richardson derivative of ψ^{(k-1)}, k ≤ 3.
pub fn check_derivatives(fault: Option<Fault>) -> CheckResult {
    guard("psi_deriv_finite_diff", || {
        let mut worst: f64 = 0.0;
        let mut at = String::new();
        for (name, spec) in derivative_specs() {
            for &t in &[0.1, 1.0, 5.0] {
                for k in 1..=3u32 {
                    let lower = |x: f64| {
                        if k == 1 {
                            psi(&spec, x).unwrap()
                        } else {
                            psi_deriv_checked(&spec, k - 1, x, fault).unwrap().to_f64()
                        }
                    };
                    let fd = richardson_derivative(lower, t, 1e-4);
                    let exact = psi_deriv_checked(&spec, k, t, fault)?.to_f64();
                    let rel = ((exact - fd) / exact).abs();
                    if !(rel <= worst) {
                        worst = rel;
                        at = format!("{name} k={k} t={t}");
                    }
                }
            }
        }
        Ok(CheckResult::at_most("psi_deriv_finite_diff", worst, 1e-6, format!("worst at {at}")))
    })
}

/// Signs of ψ^{(k)} and h^{(k)} for k ≤ 8.
pub fn check_bernstein(fault: Option<Fault>) -> CheckResult {
    guard("bernstein_signs", || {
        let mut violations = 0usize;
        let mut first = String::new();
        for (name, spec) in derivative_specs() {
            let base = BaseLaplace::new(spec.with_mass(if spec.mass_parameters().len() > 1 { 1.0 } else { 1.3 }));
            for &t in &[0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
                let h = base.derivs_upto(8, t)?;
                for k in 1..=8u32 {
                    let ps = psi_deriv_checked(&spec, k, t, fault)?.sign();
                    let want_psi = if k % 2 == 1 { 1 } else { -1 };
                    let hs = h[k as usize].sign();
                    if ps != want_psi || hs != -want_psi {
                        violations += 1;
                        if first.is_empty() {
                            first = format!("{name} k={k} t={t}");
                        }
                    }
                }
            }
        }
        let detail = if violations == 0 { "k<=8 on 7 points".into() } else { format!("first at {first}") };
        Ok(CheckResult::at_most("bernstein_signs", violations as f64, 0.0, detail))
    })
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(w);
    w.iter().map(|x| (x - z).exp()).collect()
}

fn one_restaurant(sizes: &[u32]) -> FranchiseState {
    let mut seat = Vec::new();
    for (j, &m) in sizes.iter().enumerate() {
        seat.extend(std::iter::repeat_n(j, m as usize));
    }
    let n = seat.len();
    FranchiseState::from_assignments(vec![vec![0; n]], vec![seat], vec![vec![0; sizes.len()]])
        .expect("valid by construction")
}

/// Random restaurants of single-customer tables with random dishes.
fn random_dish_state<R: Rng>(rng: &mut R) -> FranchiseState {
    let n = rng.random_range(1..=4usize);
    let p = rng.random_range(1..=5usize);
    let mut items = Vec::new();
    let mut seats: Vec<Vec<usize>> = Vec::new();
    let mut dishes = Vec::new();
    for _ in 0..n {
        let t = rng.random_range(0..=5usize);
        items.push(vec![0; t]);
        seats.push((0..t).collect());
        dishes.push((0..t).map(|_| rng.random_range(0..p)).collect::<Vec<_>>());
    }
    // Make sure every dish in 0..p is used by appending tables to restaurant 0.
    for k in 0..p {
        if !dishes.iter().flatten().any(|&d| d == k) {
            let t = items[0].len();
            items[0].push(0);
            seats[0].push(t);
            dishes[0].push(k);
        }
    }
    FranchiseState::from_assignments(items, seats, dishes).expect("valid by construction")
}

fn random_sizes<R: Rng>(rng: &mut R) -> Vec<u32> {
    let r = rng.random_range(0..=6usize);
    (0..r).map(|_| rng.random_range(1..=8u32)).collect()
}

/// Gamma-Gamma closed forms: dish probabilities `r_·k/(Σr+θ)`, `θ/(Σr+θ)`
/// and table probabilities with the `(θ+r_i·)/(1+ln 2)` new-table mass.
pub fn check_example2(states: usize, seed: u64) -> CheckResult {
    guard("closed_form_gamma_gamma", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let object = LevySpec::gamma(1.0)?;
        let mut worst: f64 = 0.0;
        for _ in 0..states {
            let theta = rng.random_range(0.05..8.0);
            let base = LevySpec::gamma(theta)?;
            let state = random_dish_state(&mut rng);
            let p = state.num_dishes();
            let w = dish_log_weights(&state, &base, &object, &vec![0.0; p], 0.0)?;
            let probs = normalize(&w);
            let counts = state.dish_table_counts();
            let total: f64 = counts.iter().map(|&r| f64::from(r)).sum::<f64>() + theta;
            for k in 0..p {
                worst = worst.max((probs[k] - f64::from(counts[k]) / total).abs());
            }
            worst = worst.max((probs[p] - theta / total).abs());

            let sizes = random_sizes(&mut rng);
            let rest = one_restaurant(&sizes);
            let bl = BaseLaplace::new(base.clone());
            let tw = table_log_weights(&rest, &bl, &object, 0, &vec![0.0; sizes.len()], 0.0)?;
            let tp = normalize(&tw);
            let new_mass = (theta + sizes.len() as f64) / (1.0 + LN_2);
            let denom = sizes.iter().map(|&m| f64::from(m)).sum::<f64>() + new_mass;
            for (j, &m) in sizes.iter().enumerate() {
                worst = worst.max((tp[j] - f64::from(m) / denom).abs());
            }
            worst = worst.max((tp[sizes.len()] - new_mass / denom).abs());
        }
        Ok(CheckResult::at_most(
            "closed_form_gamma_gamma",
            worst,
            1e-12,
            format!("{states} random states"),
        ))
    })
}

/// Gamma-GGP tables: existing weights ∝ (m - d), and the `ln_d 2 = (2^d-1)/d`
/// constant recovered from the new-table weight.
pub fn check_example3(seed: u64) -> CheckResult {
    guard("closed_form_gamma_ggp", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for &d in &[0.1, 0.2, 0.3, 0.4] {
            let object = LevySpec::generalized_gamma(d, 1.0)?;
            let ln_d2 = (2f64.powf(d) - 1.0) / d;
            worst = worst.max((psi(&object, 1.0)? - ln_d2).abs());
            for _ in 0..100 {
                let theta = rng.random_range(0.05..8.0);
                let bl = BaseLaplace::new(LevySpec::gamma(theta)?);
                let mut sizes = random_sizes(&mut rng);
                if sizes.is_empty() {
                    sizes.push(1);
                }
                let rest = one_restaurant(&sizes);
                let w = table_log_weights(&rest, &bl, &object, 0, &vec![0.0; sizes.len()], 0.0)?;
                let p = normalize(&w);
                let r = sizes.len();
                let m0 = f64::from(sizes[0]) - d;
                for (j, &m) in sizes.iter().enumerate() {
                    let want = (f64::from(m) - d) / m0;
                    worst = worst.max((p[j] / p[0] - want).abs() / want);
                }
                // new / existing_0 = (θ + r) 2^d / ((1 + ln_d 2)(m_0 - d)).
                let ratio = p[r] / p[0];
                let implied = (theta + r as f64) * 2f64.powf(d) / (ratio * m0) - 1.0;
                worst = worst.max((implied - ln_d2).abs() / ln_d2);
            }
        }
        Ok(CheckResult::at_most("closed_form_gamma_ggp", worst, 1e-12, "d in {.1,.2,.3,.4}".into()))
    })
}

fn ratio_families() -> Vec<(String, Model)> {
    vec![
        ("gamma-gamma".into(), Model::new(LevySpec::gamma(1.7).unwrap(), LevySpec::gamma(1.0).unwrap()).unwrap()),
        (
            "ggp-ggp".into(),
            Model::new(
                LevySpec::generalized_gamma(0.3, 2.2).unwrap(),
                LevySpec::generalized_gamma(0.2, 1.0).unwrap(),
            )
            .unwrap(),
        ),
        (
            "sggp-gamma".into(),
            Model::new(
                LevySpec::sum_generalized_gamma(vec![
                    GgpComponent { theta: 1.0, discount: 0.0 },
                    GgpComponent { theta: 0.7, discount: 0.4 },
                ])
                .unwrap(),
                LevySpec::gamma(1.0).unwrap(),
            )
            .unwrap(),
        ),
    ]
}

fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b).exp() - 1.0).abs()
}

/// Eqs. 9–10 against single-count increments of the restaurant marginal and
/// Eqs. 11–12 against increments of the dish-level CRM-Poisson PMF.
pub fn check_ratio_identities(states: usize, seed: u64) -> CheckResult {
    guard("gibbs_pmf_ratio_identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for (_, model) in ratio_families() {
            let bl = BaseLaplace::new(model.base.clone());
            for _ in 0..states {
                let sizes = random_sizes(&mut rng);
                let rest = one_restaurant(&sizes);
                let w = table_log_weights(&rest, &bl, &model.object, 0, &vec![0.0; sizes.len()], 0.0)?;
                let total: u32 = sizes.iter().sum();
                let base_lp = restaurant_counts_log_pmf(&bl, &model.object, &sizes)?;
                let scale = f64::from(total + 1).ln();
                for j in 0..sizes.len() {
                    let mut inc = sizes.clone();
                    inc[j] += 1;
                    let lp = restaurant_counts_log_pmf(&bl, &model.object, &inc)?;
                    worst = worst.max(rel_err(w[j], lp - base_lp + scale));
                }
                let mut grown = sizes.clone();
                grown.push(1);
                let lp = restaurant_counts_log_pmf(&bl, &model.object, &grown)?;
                worst = worst.max(rel_err(w[sizes.len()], lp - base_lp + scale));

                let state = random_dish_state(&mut rng);
                let p = state.num_dishes();
                let n = state.num_restaurants();
                let i = rng.random_range(0..n);
                let dw = dish_log_weights(&state, &model.base, &model.object, &vec![0.0; p], 0.0)?;
                let s = dish_level_point(&model.object, n)?;
                let unit = model.base.unit();
                let r = state.table_count_matrix()?;
                let lp0 = crm_poisson_log_pmf_at(model.base.mass, &unit, s, &r)?;
                let scale = (r.row_sums()[i] as f64 + 1.0).ln();
                for k in 0..p {
                    let lp = crm_poisson_log_pmf_at(model.base.mass, &unit, s, &r.incremented(i, k))?;
                    worst = worst.max(rel_err(dw[k], lp - lp0 + scale));
                }
                let lp = crm_poisson_log_pmf_at(model.base.mass, &unit, s, &r.with_new_column(i))?;
                worst = worst.max(rel_err(dw[p], lp - lp0 + scale));
            }
        }
        Ok(CheckResult::at_most(
            "gibbs_pmf_ratio_identity",
            worst,
            1e-10,
            format!("{states} random states x 3 families"),
        ))
    })
}

fn laplace_specs() -> Vec<(String, LevySpec)> {
    vec![
        ("gamma(1)".into(), LevySpec::gamma(1.0).unwrap()),
        ("ggp(0.3,1)".into(), LevySpec::generalized_gamma(0.3, 1.0).unwrap()),
        (
            "sggp(1:0.1,0.5:0.4)".into(),
            LevySpec::sum_generalized_gamma(vec![
                GgpComponent { theta: 1.0, discount: 0.1 },
                GgpComponent { theta: 0.5, discount: 0.4 },
            ])
            .unwrap(),
        ),
    ]
}

fn total_masses(spec: &LevySpec, eps: f64, draws: usize, seed: u64, exec: Execution) -> Result<Vec<f64>> {
    let sampler = CrmSampler::new(spec, eps)?;
    let sizes = batch_sizes(draws, 10_000);
    Ok(map_batches(exec, seed, sizes.len(), |b, rng| {
        (0..sizes[b]).map(|_| sampler.sample(rng).total()).collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean of `e^{-tΛ(S)}` against `exp(-ψ(t))`, and the first moment against
/// `μ(S)|ψ'(0)|`, for t in {0.5, 1, 2}.
pub fn check_laplace_functional(draws: usize, seed: u64, exec: Execution) -> CheckResult {
    guard("laplace_functional", || {
        let mut worst: f64 = 0.0;
        let mut detail = String::new();
        for (idx, (name, spec)) in laplace_specs().into_iter().enumerate() {
            let eps = default_eps(&spec);
            let totals = total_masses(&spec, eps, draws, seed.wrapping_add(idx as u64), exec)?;
            for &t in &[0.5, 1.0, 2.0] {
                let ys: Vec<f64> = totals.iter().map(|x| (-t * x).exp()).collect();
                let (m, se) = mean_se(&ys);
                let exact = (-psi(&spec, t)?).exp();
                let z = (m - exact).abs() / (3.0 * se + t * eps);
                if z > worst {
                    worst = z;
                    detail = format!("worst {name} t={t}: mean {m:.5} vs {exact:.5}");
                }
            }
            let (m, se) = mean_se(&totals);
            let exact = expected_total_mass(&spec);
            let z = (m - exact).abs() / (3.0 * se + eps);
            if z > worst {
                worst = z;
                detail = format!("worst {name} first moment: {m:.5} vs {exact:.5}");
            }
        }
        Ok(CheckResult::at_most(
            "laplace_functional",
            worst,
            1.0,
            format!("|err| / (3 se + t eps); {detail}"),
        ))
    })
}

/// Distinct features among n = 3 processes from one gamma CRM (θ = 1) is
/// Poisson(θψ(n)).
pub fn check_prop1(draws: usize, seed: u64, exec: Execution) -> CheckResult {
    guard("distinct_count_poisson", || {
        let spec = LevySpec::gamma(1.0)?;
        let n = 3;
        let sampler = CrmSampler::new(&spec, 1e-2 * default_eps(&spec))?;
        let sizes = batch_sizes(draws, 10_000);
        let counts: Vec<u64> = map_batches(exec, seed, sizes.len(), |b, rng| {
            (0..sizes[b])
                .map(|_| counts_to_matrix(&sample_crm_poisson(&sampler, n, rng)).cols() as u64)
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        let rate = psi(&spec, n as f64)?;
        let chi = poisson_chi_square(&counts, rate);
        Ok(CheckResult::at_least(
            "distinct_count_poisson",
            chi.p_value,
            0.01,
            format!("chi2 {:.2} on {} dof, rate {rate:.5}", chi.statistic, chi.dof),
        ))
    })
}

/// Distinct dishes of the two-level hierarchy: Poisson(θψ(ψ̄(1)·n)).
pub fn check_prop1_hierarchy(draws: usize, seed: u64, exec: Execution) -> CheckResult {
    guard("distinct_dish_poisson", || {
        let base = LevySpec::gamma(1.0)?;
        let object = LevySpec::gamma(1.0)?;
        let n = 3;
        let sampler = CrmSampler::new(&base, 1e-2 * default_eps(&base))?;
        let sizes = batch_sizes(draws, 10_000);
        let counts: Vec<u64> = map_batches(exec, seed, sizes.len(), |b, rng| {
            (0..sizes[b])
                .map(|_| counts_to_matrix(&sample_hierarchy(&sampler, &object, n, rng).unwrap()).cols() as u64)
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        let rate = psi(&base, dish_level_point(&object, n)?)?;
        let chi = poisson_chi_square(&counts, rate);
        Ok(CheckResult::at_least(
            "distinct_dish_poisson",
            chi.p_value,
            0.01,
            format!("chi2 {:.2} on {} dof, rate {rate:.5}", chi.statistic, chi.dof),
        ))
    })
}

/// All canonical count matrices with `rows` rows and total in `1..=max_total`,
/// plus the empty one.
pub fn enumerate_count_matrices(rows: usize, max_total: u32) -> Vec<CountMatrix> {
    // Nonzero column vectors in descending order, then multisets of them.
    let mut cols: Vec<Vec<u32>> = Vec::new();
    let mut v = vec![0u32; rows];
    fn rec(i: usize, left: u32, v: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == v.len() {
            if v.iter().any(|&x| x > 0) {
                out.push(v.clone());
            }
            return;
        }
        for x in 0..=left {
            v[i] = x;
            rec(i + 1, left - x, v, out);
        }
        v[i] = 0;
    }
    rec(0, max_total, &mut v, &mut cols);
    cols.sort_by(|a, b| b.cmp(a));
    let mut out = Vec::new();
    fn multisets(start: usize, left: u32, cols: &[Vec<u32>], cur: &mut Vec<usize>, rows: usize, out: &mut Vec<CountMatrix>) {
        let k = cur.len();
        let mut data = vec![0u32; rows * k];
        for (c, &idx) in cur.iter().enumerate() {
            for r in 0..rows {
                data[r * k + c] = cols[idx][r];
            }
        }
        out.push(CountMatrix::from_parts(rows, k, data).unwrap().canonical());
        for idx in start..cols.len() {
            let s: u32 = cols[idx].iter().sum();
            if s <= left {
                cur.push(idx);
                multisets(idx, left - s, cols, cur, rows, out);
                cur.pop();
            }
        }
    }
    multisets(0, max_total, &cols, &mut Vec::new(), rows, &mut out);
    out
}

/// Exact law of count-matrix classes under the CRM-Poisson PMF, conditioned on `filter`.
pub fn eq5_class_law(
    theta: f64,
    spec: &LevySpec,
    n: usize,
    classes: &[CountMatrix],
    filter: impl Fn(&CountMatrix) -> bool,
) -> Result<BTreeMap<CountMatrix, f64>> {
    let mut law = BTreeMap::new();
    for m in classes.iter().filter(|m| filter(m)) {
        let lp = crm_poisson_log_pmf(theta, spec, n, m)? + m.ln_labelled_multiplicity();
        law.insert(m.clone(), lp);
    }
    let logs: Vec<f64> = law.values().copied().collect();
    let z = log_sum_exp(&logs);
    Ok(law.into_iter().map(|(k, v)| (k, (v - z).exp())).collect())
}

/// Hierarchy conditioned on sizes (1, 1): P(shared dish) and the law of the
/// two count-matrix classes against the dish-level CRM-Poisson PMF.
pub fn check_eq5_exactness(accepted: usize, budget: u64, seed: u64, exec: Execution) -> Vec<CheckResult> {
    let run = || -> Result<Vec<CheckResult>> {
        let g = LevySpec::gamma(1.0)?;
        let theta = 1.0;
        let cfg = RejectionConfig {
            accepted,
            budget,
            seed,
            execution: exec,
            ..RejectionConfig::default()
        };
        let sample = conditional_rejection_sample(&g, &g, &[1, 1], default_eps(&g), &cfg)?;
        let shared = CountMatrix::from_rows(&[vec![1], vec![1]])?;
        let split = CountMatrix::from_rows(&[vec![1, 0], vec![0, 1]])?.canonical();
        let s = dish_level_point(&g, 2)?;
        let unit = g.unit();
        let ls = crm_poisson_log_pmf_at(theta, &unit, s, &shared)? + shared.ln_labelled_multiplicity();
        let lt = crm_poisson_log_pmf_at(theta, &unit, s, &split)? + split.ln_labelled_multiplicity();
        let p_shared = 1.0 / (1.0 + (lt - ls).exp());
        let n = sample.matrices.len() as f64;
        let freq = sample.matrices.iter().filter(|m| m.cols() == 1).count() as f64 / n;
        let se = (p_shared * (1.0 - p_shared) / n).sqrt();
        let law: BTreeMap<CountMatrix, f64> = [(shared, p_shared), (split, 1.0 - p_shared)].into_iter().collect();
        let tv = tv_against(&sample.matrices, &law);
        Ok(vec![
            CheckResult::at_most(
                "eq5_shared_dish",
                (freq - p_shared).abs() / se,
                3.0,
                format!("oracle {freq:.5} vs collapsed {p_shared:.5} ({} accepted, rate {:.3})", sample.matrices.len(), sample.acceptance_rate()),
            ),
            CheckResult::at_most("eq5_class_tv", tv, 0.02, "sizes (1,1)".into()),
        ])
    };
    run().unwrap_or_else(|e| {
        vec![CheckResult::error("eq5_shared_dish", &e), CheckResult::error("eq5_class_tv", &e)]
    })
}

/// One-level CRM-Poisson: oracle count-matrix classes with total ≤ 3 against
/// exponentiated CRM-Poisson PMF (gamma, θ = 1, n = 2).
pub fn check_eq5_single_level(draws: usize, seed: u64, exec: Execution) -> CheckResult {
    guard("eq5_single_level_tv", || {
        let spec = LevySpec::gamma(1.0)?;
        let n = 2;
        let law = eq5_class_law(1.0, &spec, n, &enumerate_count_matrices(n, 3), |_| true)?;
        let sampler = CrmSampler::new(&spec, default_eps(&spec))?;
        let sizes = batch_sizes(draws, 10_000);
        let sample: Vec<CountMatrix> = map_batches(exec, seed, sizes.len(), |b, rng| {
            (0..sizes[b])
                .map(|_| counts_to_matrix(&sample_crm_poisson(&sampler, n, rng)))
                .filter(|m| m.total() <= 3)
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        let tv = tv_against(&sample, &law);
        Ok(CheckResult::at_most(
            "eq5_single_level_tv",
            tv,
            0.02,
            format!("{} kept draws over {} classes", sample.len(), law.len()),
        ))
    })
}

/// Prior chain on 3 restaurants × 5 customers against the conditional
/// rejection oracle.
pub fn check_franchise_vs_oracle(samples: usize, budget: u64, seed: u64, exec: Execution) -> CheckResult {
    guard("franchise_vs_oracle", || {
        let g = LevySpec::gamma(1.0)?;
        let sizes = [5usize, 5, 5];
        let targets: Vec<u32> = sizes.iter().map(|&s| s as u32).collect();
        let cfg = RejectionConfig {
            accepted: samples,
            budget,
            seed,
            execution: exec,
            ..RejectionConfig::default()
        };
        let oracle = conditional_rejection_sample(&g, &g, &targets, default_eps(&g), &cfg)?;
        let config = SamplerConfig {
            seed: seed ^ 0x5eed,
            resample_hyper: false,
            use_likelihood: false,
            table_rule: TableRule::Conditional,
            ..SamplerConfig::default()
        };
        let mut chain = Chain::new(Model::gamma_gamma(1.0)?, config, FranchiseState::with_sizes(&sizes), UnitLikelihood::default())?;
        for _ in 0..200 {
            chain.sweep()?;
        }
        let mut collapsed = Vec::with_capacity(samples);
        for _ in 0..samples {
            for _ in 0..5 {
                chain.sweep()?;
            }
            collapsed.push(SeatingStat {
                dishes: chain.state().num_dishes(),
                sorted_totals: chain.state().sorted_dish_customer_totals(),
            });
        }
        let report = compare_report(&collapsed, &oracle.stats(), CompareThresholds::default())?;
        Ok(CheckResult {
            name: "franchise_vs_oracle".into(),
            pass: report.pass,
            value: report.tv_dishes,
            threshold: report.thresholds.max_tv,
            detail: format!("chi2 p = {:.4}", report.chi_square.p_value),
        })
    })
}

/// Runs every check.
pub fn run_suite(cfg: &VerifyConfig) -> VerifyReport {
    let mut checks = vec![
        check_derivatives(cfg.fault),
        check_bernstein(cfg.fault),
        check_example2(cfg.random_states, cfg.seed),
        check_example3(cfg.seed),
        check_ratio_identities(cfg.random_states / 2, cfg.seed),
        check_laplace_functional(cfg.laplace_draws, cfg.seed, cfg.execution),
        check_prop1(cfg.prop1_draws, cfg.seed, cfg.execution),
        check_prop1_hierarchy(cfg.prop1_draws, cfg.seed, cfg.execution),
        check_eq5_single_level(cfg.eq5_single_draws, cfg.seed, cfg.execution),
    ];
    checks.extend(check_eq5_exactness(cfg.eq5_accepted, cfg.budget, cfg.seed, cfg.execution));
    checks.push(check_franchise_vs_oracle(cfg.chain_samples, cfg.budget, cfg.seed, cfg.execution));
    VerifyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_checks_pass() {
        for c in [
            check_derivatives(None),
            check_bernstein(None),
            check_example2(100, 1),
            check_example3(1),
            check_ratio_identities(50, 1),
        ] {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let c = check_bernstein(Some(Fault::PsiDerivSignFlip));
        assert!(!c.pass);
    }

    #[test]
    fn enumeration_counts() {
        // n = 1, total <= 3: empty, [1], [2], [3], [1,1], [2,1], [1,1,1].
        assert_eq!(enumerate_count_matrices(1, 3).len(), 7);
    }

    #[test]
    fn budget_zero_fails_eq5() {
        let r = check_eq5_exactness(10, 0, 1, Execution::Sequential);
        assert!(r.iter().all(|c| !c.pass && c.detail.contains("budget")));
    }
}
