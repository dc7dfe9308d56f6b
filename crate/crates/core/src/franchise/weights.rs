use crate::error::{HcrmError, Result};
use crate::franchise::state::FranchiseState;
use crate::levy::{psi, psi_deriv, BaseLaplace, LevySpec};
use crate::signed_log::{log_sum_exp, SignedLogValue};

fn ln_abs_ratio(num: SignedLogValue, den: SignedLogValue) -> f64 {
    num.log_mag() - den.log_mag()
}

/// Point `ψ̄(1)·n` at which dish-level derivatives are taken.
pub fn dish_level_point(object: &LevySpec, n: usize) -> Result<f64> {
    Ok(psi(object, 1.0)? * n as f64)
}

/// Table weights for an unseated customer of restaurant `i`: one entry per
/// existing table, then the new table.
///
/// Existing table j: `ln|ψ̄^{(m_ij+1)}(1)/ψ̄^{(m_ij)}(1)| + per_table_loglik[j]`.
/// New table: `ln|h^{(r_i·+1)}(ψ̄(1))/h^{(r_i·)}(ψ̄(1))| + ln|ψ̄'(1)| + new_table_loglik`.
pub fn table_log_weights(
    state: &FranchiseState,
    base: &BaseLaplace,
    object: &LevySpec,
    i: usize,
    per_table_loglik: &[f64],
    new_table_loglik: f64,
) -> Result<Vec<f64>> {
    let sizes = state.table_sizes(i);
    if per_table_loglik.len() != sizes.len() {
        return Err(HcrmError::Dimension(format!(
            "{} table log-likelihoods for {} tables",
            per_table_loglik.len(),
            sizes.len()
        )));
    }
    let mut out = Vec::with_capacity(sizes.len() + 1);
    for (j, &m) in sizes.iter().enumerate() {
        if m == 0 {
            return Err(HcrmError::StateCorruption(format!("table ({i},{j}) is empty")));
        }
        let ratio = ln_abs_ratio(psi_deriv(object, m + 1, 1.0)?, psi_deriv(object, m, 1.0)?);
        out.push(ratio + per_table_loglik[j]);
    }
    let r = sizes.len() as u32;
    let u = psi(object, 1.0)?;
    let h = base.derivs_upto(r + 1, u)?;
    let new = ln_abs_ratio(h[r as usize + 1], h[r as usize])
        + psi_deriv(object, 1, 1.0)?.log_mag()
        + new_table_loglik;
    out.push(new);
    Ok(out)
}

/// Dish weights for a dishless table: one entry per existing dish, then the
/// new dish.
///
/// Existing dish k: `ln|ψ^{(r_·k+1)}(s)/ψ^{(r_·k)}(s)| + per_dish_loglik[k]`,
/// new dish: `ln θ + ln|ψ'(s)| + new_dish_loglik`, with `s = ψ̄(1)·n`. The base
/// spec carries θ as its mass.
pub fn dish_log_weights(
    state: &FranchiseState,
    base: &LevySpec,
    object: &LevySpec,
    per_dish_loglik: &[f64],
    new_dish_loglik: f64,
) -> Result<Vec<f64>> {
    let counts = state.dish_table_counts();
    if per_dish_loglik.len() != counts.len() {
        return Err(HcrmError::Dimension(format!(
            "{} dish log-likelihoods for {} dishes",
            per_dish_loglik.len(),
            counts.len()
        )));
    }
    let s = dish_level_point(object, state.num_restaurants())?;
    let unit = base.unit();
    let mut out = Vec::with_capacity(counts.len() + 1);
    for (k, &r) in counts.iter().enumerate() {
        if r == 0 {
            return Err(HcrmError::StateCorruption(format!("dish {k} has no tables")));
        }
        out.push(ln_abs_ratio(psi_deriv(&unit, r + 1, s)?, psi_deriv(&unit, r, s)?) + per_dish_loglik[k]);
    }
    out.push(psi_deriv(base, 1, s)?.log_mag() + new_dish_loglik);
    Ok(out)
}

/// New-table weight of the exact full conditional of the seating:
/// `ln|ψ̄'(1)| + ln Σ_k exp(dish weight_k)`, the dish weights including their
/// likelihood terms.
pub fn conditional_new_table_log_weight(object: &LevySpec, dish_weights: &[f64]) -> Result<f64> {
    Ok(psi_deriv(object, 1, 1.0)?.log_mag() + log_sum_exp(dish_weights))
}

/// Precomputed weight terms for one model and one franchise size.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCache {
    ln_obj_d1: f64,
    obj_ratio: Vec<f64>,
    dish_ratio: Vec<f64>,
    ln_new_dish: f64,
    h_ratio: Vec<f64>,
}

impl WeightCache {
    /// `max_count` bounds both table sizes and dish table counts; `h_orders`
    /// is the largest r_i· whose h ratio is needed (0 skips h entirely).
    pub fn new(
        base: &BaseLaplace,
        object: &LevySpec,
        n: usize,
        max_count: usize,
        h_orders: usize,
    ) -> Result<Self> {
        let max = max_count as u32 + 1;
        let obj_d: Vec<SignedLogValue> = (1..=max + 1)
            .map(|k| psi_deriv(object, k, 1.0))
            .collect::<Result<_>>()?;
        let mut obj_ratio = vec![f64::NAN];
        for m in 1..=max as usize {
            obj_ratio.push(ln_abs_ratio(obj_d[m], obj_d[m - 1]));
        }
        let s = dish_level_point(object, n)?;
        let unit = base.spec().unit();
        let dish_d: Vec<SignedLogValue> = (1..=max + 1)
            .map(|k| psi_deriv(&unit, k, s))
            .collect::<Result<_>>()?;
        let mut dish_ratio = vec![f64::NAN];
        for r in 1..=max as usize {
            dish_ratio.push(ln_abs_ratio(dish_d[r], dish_d[r - 1]));
        }
        let h_ratio = if h_orders > 0 {
            let u = psi(object, 1.0)?;
            let h = base.derivs_upto(h_orders as u32 + 1, u)?;
            h.windows(2).map(|w| ln_abs_ratio(w[1], w[0])).collect()
        } else {
            Vec::new()
        };
        Ok(WeightCache {
            ln_obj_d1: obj_d[0].log_mag(),
            obj_ratio,
            dish_ratio,
            ln_new_dish: psi_deriv(base.spec(), 1, s)?.log_mag(),
            h_ratio,
        })
    }

    /// `ln|ψ̄'(1)|`.
    pub fn ln_object_first(&self) -> f64 {
        self.ln_obj_d1
    }

    /// `ln|ψ̄^{(m+1)}(1)/ψ̄^{(m)}(1)|`.
    pub fn table_ratio(&self, m: u32) -> f64 {
        self.obj_ratio[m as usize]
    }

    /// `ln|ψ^{(r+1)}(s)/ψ^{(r)}(s)|`.
    pub fn dish_ratio(&self, r: u32) -> f64 {
        self.dish_ratio[r as usize]
    }

    /// `ln θ|ψ'(s)|`.
    pub fn new_dish(&self) -> f64 {
        self.ln_new_dish
    }

    /// `ln|h^{(r+1)}(ψ̄(1))/h^{(r)}(ψ̄(1))|`.
    pub fn h_ratio(&self, r: usize) -> f64 {
        self.h_ratio[r]
    }

    pub fn has_h_ratios(&self) -> bool {
        !self.h_ratio.is_empty()
    }
}
