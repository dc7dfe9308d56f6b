//! Collapsed marginal PMFs of CRM-driven Poisson processes.
//!
//! Throughout, Laplace exponents exclude the base mass (`spec.mass == 1`) and
//! θ is passed explicitly. Each PMF value is the probability of one labelled
//! assignment of customers to unlabelled features.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{HcrmError, Result};
use crate::levy::{psi, psi_deriv, BaseLaplace, LevySpec};
use crate::signed_log::SignedLogValue;

/// Dense n×k matrix of feature counts with cached margins.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl CountMatrix {
    /// No features observed across `rows` processes.
    pub fn empty(rows: usize) -> Self {
        CountMatrix {
            rows,
            cols: 0,
            data: Vec::new(),
            row_sums: vec![0; rows],
            col_sums: Vec::new(),
            total: 0,
        }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(HcrmError::InvalidMatrix("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(HcrmError::InvalidMatrix("ragged rows".into()));
        }
        let data: Vec<u32> = rows.iter().flatten().copied().collect();
        Self::from_parts(rows.len(), cols, data)
    }

    pub fn from_parts(rows: usize, cols: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HcrmError::InvalidMatrix(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        let mut row_sums = vec![0u64; rows];
        let mut col_sums = vec![0u64; cols];
        for i in 0..rows {
            for j in 0..cols {
                let v = u64::from(data[i * cols + j]);
                row_sums[i] += v;
                col_sums[j] += v;
            }
        }
        if let Some(j) = col_sums.iter().position(|&c| c == 0) {
            return Err(HcrmError::InvalidMatrix(format!(
                "column {j} is all zero; every distinct feature must occur"
            )));
        }
        let total = row_sums.iter().sum();
        Ok(CountMatrix {
            rows,
            cols,
            data,
            row_sums,
            col_sums,
            total,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.cols + j]
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The matrix with `m_ij + 1`.
    pub fn incremented(&self, i: usize, j: usize) -> Self {
        let mut data = self.data.clone();
        data[i * self.cols + j] += 1;
        Self::from_parts(self.rows, self.cols, data).expect("increment keeps columns nonzero")
    }

    /// The matrix with an extra column `e_i`.
    pub fn with_new_column(&self, i: usize) -> Self {
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.push(u32::from(r == i));
        }
        Self::from_parts(self.rows, cols, data).expect("new column is nonzero")
    }

    /// Columns sorted lexicographically: the representative of the class of
    /// matrices equal up to feature relabelling.
    pub fn canonical(&self) -> Self {
        let mut columns: Vec<Vec<u32>> = (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).collect())
            .collect();
        columns.sort_unstable_by(|a, b| b.cmp(a));
        let mut data = vec![0u32; self.rows * self.cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * self.cols + j] = v;
            }
        }
        Self::from_parts(self.rows, self.cols, data).expect("permutation keeps validity")
    }

    /// ln of the number of labelled customer assignments that produce this
    /// matrix up to column relabelling:
    /// `Π_i m_i·! / (Π_ij m_ij! · Π_s c_s!)` with `c_s` the multiplicities of
    /// identical columns.
    pub fn ln_labelled_multiplicity(&self) -> f64 {
        let mut v: f64 = self
            .row_sums
            .iter()
            .map(|&m| ln_factorial(m))
            .sum::<f64>();
        v -= self.data.iter().map(|&m| ln_factorial(u64::from(m))).sum::<f64>();
        let canon = self.canonical();
        let mut j = 0;
        while j < canon.cols {
            let mut run = 1;
            while j + run < canon.cols
                && (0..canon.rows).all(|i| canon.get(i, j) == canon.get(i, j + run))
            {
                run += 1;
            }
            v -= ln_factorial(run as u64);
            j += run;
        }
        v
    }
}

pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

fn require_unit_mass(spec: &LevySpec) -> Result<()> {
    if spec.mass != 1.0 {
        return Err(HcrmError::InvalidSpec(format!(
            "expected a unit-mass Laplace exponent, got mass {}",
            spec.mass
        )));
    }
    Ok(())
}

/// Eq.-5 CRM-Poisson log-probability for `m.rows()` processes.
pub fn crm_poisson_log_pmf(theta: f64, spec: &LevySpec, n: usize, m: &CountMatrix) -> Result<f64> {
    if n == 0 {
        return Err(HcrmError::Domain("n must be positive".into()));
    }
    if m.rows() != n {
        return Err(HcrmError::Dimension(format!(
            "matrix has {} rows but n = {n}",
            m.rows()
        )));
    }
    crm_poisson_log_pmf_at(theta, spec, n as f64, m)
}

/// The CRM-Poisson PMF with the exponent and its derivatives evaluated at an arbitrary
/// point `t` (the dish level evaluates at `ψ̄(1)·n`).
pub fn crm_poisson_log_pmf_at(theta: f64, spec: &LevySpec, t: f64, m: &CountMatrix) -> Result<f64> {
    require_unit_mass(spec)?;
    if !(theta >= 0.0) {
        return Err(HcrmError::Domain(format!("theta must be >= 0, got {theta}")));
    }
    let k = m.cols();
    // Sorted margins make the result exactly invariant to row/column order.
    let mut cols = m.col_sums().to_vec();
    cols.sort_unstable();
    let mut prod = SignedLogValue::ONE;
    for c in cols {
        prod = prod * psi_deriv(spec, c as u32, t)?;
    }
    let prefactor_odd = (m.total() - k as u64) % 2 == 1;
    let sign = if prefactor_odd { -prod.sign() } else { prod.sign() };
    if sign != 1 {
        return Err(HcrmError::SignAnomaly(format!(
            "product of {k} derivatives has sign {} against (-1)^{}",
            prod.sign(),
            m.total() - k as u64
        )));
    }
    let mut log_p = -theta * psi(spec, t)? + prod.log_mag();
    if k > 0 {
        log_p += k as f64 * theta.ln();
    }
    let mut rows = m.row_sums().to_vec();
    rows.sort_unstable();
    log_p -= rows.into_iter().map(ln_factorial).sum::<f64>();
    Ok(log_p)
}

/// The CRM-Poisson PMF conditioned on `k` distinct features: the CRM-Poisson PMF minus the
/// Poisson(k; θψ(n)) log-mass, evaluated at θ = 1 (θ cancels).
pub fn ccrm_poisson_log_pmf(spec: &LevySpec, n: usize, k: usize, m: &CountMatrix) -> Result<f64> {
    if k == 0 {
        return Err(HcrmError::Domain("k must be positive".into()));
    }
    if m.cols() != k {
        return Err(HcrmError::Dimension(format!(
            "matrix has {} columns but k = {k}",
            m.cols()
        )));
    }
    let joint = crm_poisson_log_pmf(1.0, spec, n, m)?;
    Ok(joint - poisson_log_pmf(k as u64, psi(spec, n as f64)?))
}

/// Per-restaurant marginal of table occupancies `m_row` (ESPF2):
/// `(-1)^{m_i·} h^{(r)}(ψ̄(1)) Π_j ψ̄^{(m_ij)}(1) / m_i·!`.
pub fn restaurant_counts_log_pmf(base: &BaseLaplace, object: &LevySpec, m_row: &[u32]) -> Result<f64> {
    require_unit_mass(object)?;
    if m_row.contains(&0) {
        return Err(HcrmError::InvalidMatrix(
            "every table must seat at least one customer".into(),
        ));
    }
    let u = psi(object, 1.0)?;
    let r = m_row.len() as u32;
    let mut prod = base.deriv(r, u)?;
    let mut total: u64 = 0;
    for &m in m_row {
        prod = prod * psi_deriv(object, m, 1.0)?;
        total += u64::from(m);
    }
    let sign = if total % 2 == 1 { -prod.sign() } else { prod.sign() };
    if sign != 1 {
        return Err(HcrmError::SignAnomaly(format!(
            "restaurant product has sign {} with m = {total}",
            prod.sign()
        )));
    }
    Ok(prod.log_mag() - ln_factorial(total))
}

/// Number of distinct features among n processes: Poisson(θψ(n)).
pub fn distinct_count_log_pmf(theta: f64, spec: &LevySpec, n: usize, k: u64) -> Result<f64> {
    require_unit_mass(spec)?;
    if !(theta >= 0.0) {
        return Err(HcrmError::Domain(format!("theta must be >= 0, got {theta}")));
    }
    Ok(poisson_log_pmf(k, theta * psi(spec, n as f64)?))
}

pub fn poisson_log_pmf(k: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * rate.ln() - rate - ln_factorial(k)
}
