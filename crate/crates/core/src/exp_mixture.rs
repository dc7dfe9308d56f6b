//! Exponential-mixture surrogate `h(u) ≈ Σ_r w_r e^{-λ_r u}` for Laplace
//! transforms without closed-form derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{HcrmError, Result};
use crate::levy::{h_eval, LevySpec};
use crate::signed_log::{log_sum_exp, SignedLogValue};

pub const DEFAULT_NUM_TERMS: usize = 40;
pub const DEFAULT_FIT_TOLERANCE: f64 = 1e-6;
pub const RATE_RANGE: (f64, f64) = (1e-2, 1e3);

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMixture {
    weights: Vec<f64>,
    rates: Vec<f64>,
    max_rel_residual: f64,
}

impl ExpMixture {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn max_rel_residual(&self) -> f64 {
        self.max_rel_residual
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, l)| w * (-l * u).exp())
            .sum()
    }

    /// `Σ w_r (-λ_r)^k e^{-λ_r u}`; all terms share the sign `(-1)^k`.
    pub fn deriv(&self, k: u32, u: f64) -> SignedLogValue {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.rates)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, l)| w.ln() + f64::from(k) * l.ln() - l * u)
            .collect();
        SignedLogValue::new(if k.is_multiple_of(2) { 1 } else { -1 }, log_sum_exp(&logs))
    }
}

/// Log-spaced rates on [`RATE_RANGE`].
pub fn log_spaced_rates(num_terms: usize) -> Vec<f64> {
    let (lo, hi) = (RATE_RANGE.0.ln(), RATE_RANGE.1.ln());
    if num_terms == 1 {
        return vec![(0.5 * (lo + hi)).exp()];
    }
    (0..num_terms)
        .map(|r| (lo + (hi - lo) * r as f64 / (num_terms - 1) as f64).exp())
        .collect()
}

/// `{0} ∪ log-spaced(1e-3 .. hi)`, `n` points in total.
pub fn default_grid(hi: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    let (a, b) = (1e-3f64.ln(), hi.ln());
    for i in 0..n.saturating_sub(1) {
        g.push((a + (b - a) * i as f64 / (n.saturating_sub(2).max(1)) as f64).exp());
    }
    g
}

pub fn fit_exp_mixture(base: &LevySpec, num_terms: usize, u_grid: &[f64]) -> Result<ExpMixture> {
    fit_exp_mixture_with_tolerance(base, num_terms, u_grid, DEFAULT_FIT_TOLERANCE)
}

/// Nonnegative least squares of the mixture against `h` on the grid, in
/// relative terms (rows scaled by `1/h(u)`), then renormalised to `h(0) = 1`.
pub fn fit_exp_mixture_with_tolerance(
    base: &LevySpec,
    num_terms: usize,
    u_grid: &[f64],
    tolerance: f64,
) -> Result<ExpMixture> {
    if num_terms == 0 {
        return Err(HcrmError::Domain("num_terms must be positive".into()));
    }
    if u_grid.iter().any(|u| !(*u >= 0.0)) {
        return Err(HcrmError::Domain("fit grid must be nonnegative".into()));
    }
    if u_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(HcrmError::Domain("fit grid must be sorted".into()));
    }
    let mut distinct = u_grid.to_vec();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(HcrmError::DegenerateGrid(distinct.len()));
    }

    let rates = log_spaced_rates(num_terms);
    let target: Vec<f64> = distinct
        .iter()
        .map(|&u| h_eval(base, u))
        .collect::<Result<_>>()?;
    let a = DMatrix::from_fn(distinct.len(), num_terms, |i, r| {
        (-rates[r] * distinct[i]).exp() / target[i]
    });
    let b = DVector::from_element(distinct.len(), 1.0);
    let mut weights = nnls(&a, &b);

    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(HcrmError::FitFailure {
            residual: f64::INFINITY,
            tolerance,
        });
    }
    weights.iter_mut().for_each(|w| *w /= total);

    let mut mix = ExpMixture {
        weights,
        rates,
        max_rel_residual: 0.0,
    };
    mix.max_rel_residual = distinct
        .iter()
        .zip(&target)
        .map(|(&u, &h)| ((mix.eval(u) - h) / h).abs())
        .fold(0.0, f64::max);
    if mix.max_rel_residual > tolerance {
        return Err(HcrmError::FitFailure {
            residual: mix.max_rel_residual,
            tolerance,
        });
    }
    Ok(mix)
}

/// Lawson–Hanson active-set NNLS.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let n = a.ncols();
    // Unit-norm columns keep the passive-set solves better conditioned.
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut an = a.clone();
    for j in 0..n {
        an.column_mut(j).scale_mut(1.0 / norms[j]);
    }
    let a = &an;

    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 10 * n;

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_fn(a.nrows(), idx.len(), |i, c| a[(i, idx[c])]);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-15)
            .expect("svd with u and v requested");
        let mut z = DVector::zeros(n);
        for (c, &j) in idx.iter().enumerate() {
            z[j] = sol[c];
        }
        z
    };

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > 0.0)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        passive[t] = true;

        for _ in 0..(3 * n) {
            let z = solve_passive(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in (0..n).filter(|&j| passive[j] && z[j] <= 0.0) {
                alpha = alpha.min(x[j] / (x[j] - z[j]));
            }
            x += (z - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= 1e-300 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    (0..n).map(|j| x[j].max(0.0) / norms[j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{h_derivs_recursive, LevySpec};
    use std::f64::consts::LN_2;

    fn grid_200() -> Vec<f64> {
        default_grid(20.0, 200)
    }

    #[test]
    fn single_term_cannot_fit_gamma() {
        let g = LevySpec::gamma(1.0).unwrap();
        match fit_exp_mixture(&g, 1, &grid_200()) {
            Err(HcrmError::FitFailure { residual, .. }) => assert!(residual > 1e-6),
            other => panic!("expected fit failure, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_grid() {
        let g = LevySpec::gamma(1.0).unwrap();
        assert_eq!(
            fit_exp_mixture(&g, 10, &[0.0]),
            Err(HcrmError::DegenerateGrid(1))
        );
        assert_eq!(
            fit_exp_mixture(&g, 10, &[0.0, 0.0]),
            Err(HcrmError::DegenerateGrid(1))
        );
    }

    #[test]
    fn ggp_fit_meets_tolerance() {
        let ggp = LevySpec::generalized_gamma(0.3, 1.0).unwrap();
        let mix = fit_exp_mixture(&ggp, DEFAULT_NUM_TERMS, &grid_200()).unwrap();
        assert!(mix.max_rel_residual() <= 1e-8, "{}", mix.max_rel_residual());
        assert!((mix.eval(0.0) - 1.0).abs() < 1e-14);
        assert!(mix.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn mixture_derivs_track_recursion_at_low_order() {
        let ggp = LevySpec::generalized_gamma(0.2, 1.0).unwrap();
        let mix = fit_exp_mixture(&ggp, DEFAULT_NUM_TERMS, &grid_200()).unwrap();
        let exact = h_derivs_recursive(&ggp, 8, LN_2).unwrap();
        for k in 1..=8u32 {
            let m = mix.deriv(k, LN_2);
            assert_eq!(m.sign(), exact[k as usize].sign());
            let rel = ((m.log_mag() - exact[k as usize].log_mag()).exp() - 1.0).abs();
            assert!(rel < 1e-4, "k={k} rel={rel}");
        }
    }
}
