//! Lévy intensities of the supported homogeneous CRMs and their Laplace
//! exponents.
//!
//! Every family is a nonnegative combination of exponentially tilted stable
//! densities `c e^{-z} z^{-1-d} / Γ(1-d)`, so internally a spec reduces to a
//! list of `(c, d)` terms:
//!
//! * Gamma: one term `(1, 0)`;
//! * GeneralizedGamma(d): one term `(1, d)` (with `d = 0` this is *the same*
//!   term as Gamma, so both run identical arithmetic);
//! * SumGeneralizedGamma: one term `(θ_q, d_q)` per component, mass fixed at 1.
//!
//! The mass `μ(S)` multiplies the whole exponent.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{HcrmError, Result};
use crate::exp_mixture::ExpMixture;
use crate::signed_log::{log_sum_exp, SignedLogValue};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgpComponent {
    pub theta: f64,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LevyFamily {
    Gamma,
    GeneralizedGamma { discount: f64 },
    SumGeneralizedGamma { components: Vec<GgpComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevySpec {
    pub family: LevyFamily,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    coef: f64,
    discount: f64,
}

fn check_discount(d: f64) -> Result<()> {
    if !(0.0..1.0).contains(&d) {
        return Err(HcrmError::InvalidSpec(format!(
            "discount {d} outside [0, 1)"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(HcrmError::InvalidSpec(format!(
            "{name} must be positive and finite, got {x}"
        )));
    }
    Ok(())
}

/// `((1+t)^d - 1) / d`, continuous at `d = 0` where it is `ln(1+t)`.
fn tilted_stable_exponent(d: f64, t: f64) -> f64 {
    let l = t.ln_1p();
    if d == 0.0 {
        l
    } else {
        (d * l).exp_m1() / d
    }
}

impl LevySpec {
    pub fn gamma(mass: f64) -> Result<Self> {
        check_positive("mass", mass)?;
        Ok(LevySpec {
            family: LevyFamily::Gamma,
            mass,
        })
    }

    pub fn generalized_gamma(discount: f64, mass: f64) -> Result<Self> {
        check_discount(discount)?;
        check_positive("mass", mass)?;
        Ok(LevySpec {
            family: LevyFamily::GeneralizedGamma { discount },
            mass,
        })
    }

    pub fn sum_generalized_gamma(components: Vec<GgpComponent>) -> Result<Self> {
        let spec = LevySpec {
            family: LevyFamily::SumGeneralizedGamma { components },
            mass: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Re-checks the invariants; used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        check_positive("mass", self.mass)?;
        match &self.family {
            LevyFamily::Gamma => {}
            LevyFamily::GeneralizedGamma { discount } => check_discount(*discount)?,
            LevyFamily::SumGeneralizedGamma { components } => {
                if components.is_empty() {
                    return Err(HcrmError::InvalidSpec(
                        "sum of generalized gamma processes needs at least one component".into(),
                    ));
                }
                for c in components {
                    check_positive("component theta", c.theta)?;
                    check_discount(c.discount)?;
                }
            }
        }
        Ok(())
    }

    /// Same family with a different mass.
    pub fn with_mass(&self, mass: f64) -> Self {
        LevySpec {
            family: self.family.clone(),
            mass,
        }
    }

    /// Same family with mass 1, the convention for object-level exponents
    /// and for Eq.-5 style PMFs where θ is passed separately.
    pub fn unit(&self) -> Self {
        self.with_mass(1.0)
    }

    fn terms(&self) -> Vec<Term> {
        match &self.family {
            LevyFamily::Gamma => vec![Term {
                coef: 1.0,
                discount: 0.0,
            }],
            LevyFamily::GeneralizedGamma { discount } => vec![Term {
                coef: 1.0,
                discount: *discount,
            }],
            LevyFamily::SumGeneralizedGamma { components } => components
                .iter()
                .map(|c| Term {
                    coef: c.theta,
                    discount: c.discount,
                })
                .collect(),
        }
    }

    /// `(coef, discount)` pairs of the intensity, mass excluded.
    pub fn intensity_terms(&self) -> Vec<(f64, f64)> {
        self.terms()
            .into_iter()
            .map(|t| (t.coef, t.discount))
            .collect()
    }

    /// If the intensity is a pure gamma-process one, the total mass of the
    /// equivalent gamma process (`h(u) = (1+u)^{-mass}`).
    pub fn gamma_mass(&self) -> Option<f64> {
        let terms = self.terms();
        if terms.iter().all(|t| t.discount == 0.0) {
            Some(self.mass * terms.iter().map(|t| t.coef).sum::<f64>())
        } else {
            None
        }
    }

    /// Mass parameters that the hyperparameter step may resample: the base
    /// mass θ for Gamma/GGP, each θ_q for SGGP.
    pub fn mass_parameters(&self) -> Vec<f64> {
        match &self.family {
            LevyFamily::SumGeneralizedGamma { components } => {
                components.iter().map(|c| c.theta).collect()
            }
            _ => vec![self.mass],
        }
    }

    pub fn with_mass_parameter(&self, index: usize, value: f64) -> Self {
        match &self.family {
            LevyFamily::SumGeneralizedGamma { components } => {
                let mut components = components.clone();
                components[index].theta = value;
                LevySpec {
                    family: LevyFamily::SumGeneralizedGamma { components },
                    mass: self.mass,
                }
            }
            _ => {
                debug_assert_eq!(index, 0);
                self.with_mass(value)
            }
        }
    }
}

/// Laplace exponent ψ(t) = μ(S) ∫(1 - e^{-tz}) ρ(dz).
pub fn psi(spec: &LevySpec, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(HcrmError::Domain(format!("psi requires t >= 0, got {t}")));
    }
    let s: f64 = spec
        .terms()
        .iter()
        .map(|term| term.coef * tilted_stable_exponent(term.discount, t))
        .sum();
    Ok(spec.mass * s)
}

/// k-th derivative of ψ at t, sign `(-1)^{k-1}`.
pub fn psi_deriv(spec: &LevySpec, k: u32, t: f64) -> Result<SignedLogValue> {
    if k == 0 {
        return Err(HcrmError::Domain(
            "psi_deriv needs k >= 1 (use psi for k = 0)".into(),
        ));
    }
    if !(t >= 0.0) {
        return Err(HcrmError::Domain(format!(
            "psi_deriv requires t >= 0, got {t}"
        )));
    }
    Ok(psi_deriv_unchecked(spec, k, t))
}

pub(crate) fn psi_deriv_unchecked(spec: &LevySpec, k: u32, t: f64) -> SignedLogValue {
    let kf = f64::from(k);
    let l = t.ln_1p();
    let term_log = |term: &Term| {
        term.coef.ln() + ln_gamma(kf - term.discount) - ln_gamma(1.0 - term.discount)
            + (term.discount - kf) * l
    };
    let terms = spec.terms();
    let log_mag = if terms.len() == 1 {
        term_log(&terms[0])
    } else {
        let logs: Vec<f64> = terms.iter().map(term_log).collect();
        log_sum_exp(&logs)
    };
    let sign = if k % 2 == 1 { 1 } else { -1 };
    SignedLogValue::new(sign, spec.mass.ln() + log_mag)
}

/// Laplace transform of the base total mass, `h(u) = E e^{-uΦ(S)} = e^{-ψ(u)}`.
pub fn h_eval(base: &LevySpec, u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(HcrmError::Domain(format!("h requires u >= 0, got {u}")));
    }
    Ok((-psi(base, u)?).exp())
}

/// k-th derivative of h. Closed form for gamma-type bases; other bases need
/// an [`ExpMixture`] or the exact recursion (see [`BaseLaplace`]).
pub fn h_deriv(base: &LevySpec, k: u32, u: f64) -> Result<SignedLogValue> {
    if k == 0 {
        return Err(HcrmError::Domain("h_deriv needs k >= 1".into()));
    }
    if !(u >= 0.0) {
        return Err(HcrmError::Domain(format!("h_deriv requires u >= 0, got {u}")));
    }
    match base.gamma_mass() {
        Some(theta) => Ok(gamma_h_deriv(theta, k, u)),
        None => Err(HcrmError::FitNotAvailable),
    }
}

fn gamma_h_deriv(theta: f64, k: u32, u: f64) -> SignedLogValue {
    let kf = f64::from(k);
    let log_mag = ln_gamma(kf + theta) - ln_gamma(theta) - (kf + theta) * u.ln_1p();
    SignedLogValue::new(if k.is_multiple_of(2) { 1 } else { -1 }, log_mag)
}

/// h, h', ..., h^{(kmax)} at u through
/// `h^{(k+1)} = -Σ_j C(k,j) ψ^{(j+1)} h^{(k-j)}`.
/// Every summand carries the sign `(-1)^{k+1}`, so the sum never cancels.
pub fn h_derivs_recursive(base: &LevySpec, kmax: u32, u: f64) -> Result<Vec<SignedLogValue>> {
    let h0 = SignedLogValue::positive(-psi(base, u)?);
    let kmax = kmax as usize;
    let psi_d: Vec<SignedLogValue> = (1..=kmax as u32)
        .map(|j| psi_deriv_unchecked(base, j, u))
        .collect();
    let mut ln_fact = vec![0.0; kmax + 1];
    for i in 1..=kmax {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(h0);
    let mut terms = Vec::with_capacity(kmax);
    for k in 0..kmax {
        terms.clear();
        for j in 0..=k {
            let ln_binom = ln_fact[k] - ln_fact[j] - ln_fact[k - j];
            let t = psi_d[j] * out[k - j];
            terms.push(SignedLogValue::new(t.sign(), t.log_mag() + ln_binom));
        }
        out.push(-SignedLogValue::sum(terms.iter()));
    }
    Ok(out)
}

/// How derivatives of h are produced for a base measure.
#[derive(Debug, Clone, PartialEq)]
pub enum HRoute {
    ClosedForm,
    Recursion,
    Mixture(ExpMixture),
}

/// A base measure bundled with its route to h^{(k)}.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLaplace {
    spec: LevySpec,
    route: HRoute,
}

impl BaseLaplace {
    /// Closed form for gamma-type bases, exact recursion otherwise.
    pub fn new(spec: LevySpec) -> Self {
        let route = if spec.gamma_mass().is_some() {
            HRoute::ClosedForm
        } else {
            HRoute::Recursion
        };
        BaseLaplace { spec, route }
    }

    pub fn with_mixture(spec: LevySpec, mixture: ExpMixture) -> Self {
        BaseLaplace {
            spec,
            route: HRoute::Mixture(mixture),
        }
    }

    pub fn recursion(spec: LevySpec) -> Self {
        BaseLaplace {
            spec,
            route: HRoute::Recursion,
        }
    }

    pub fn spec(&self) -> &LevySpec {
        &self.spec
    }

    pub fn route(&self) -> &HRoute {
        &self.route
    }

    /// h^{(k)}(u) for k >= 0.
    pub fn deriv(&self, k: u32, u: f64) -> Result<SignedLogValue> {
        if !(u >= 0.0) {
            return Err(HcrmError::Domain(format!("h requires u >= 0, got {u}")));
        }
        match &self.route {
            HRoute::ClosedForm => {
                let theta = self.spec.gamma_mass().ok_or(HcrmError::FitNotAvailable)?;
                Ok(if k == 0 {
                    SignedLogValue::positive(-theta * u.ln_1p())
                } else {
                    gamma_h_deriv(theta, k, u)
                })
            }
            HRoute::Recursion => Ok(h_derivs_recursive(&self.spec, k, u)?[k as usize]),
            HRoute::Mixture(mix) => Ok(mix.deriv(k, u)),
        }
    }

    /// h^{(0..=kmax)}(u) in one pass.
    pub fn derivs_upto(&self, kmax: u32, u: f64) -> Result<Vec<SignedLogValue>> {
        match &self.route {
            HRoute::Recursion => h_derivs_recursive(&self.spec, kmax, u),
            _ => (0..=kmax).map(|k| self.deriv(k, u)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn psi_examples() {
        let g = LevySpec::gamma(1.0).unwrap();
        assert_eq!(psi(&g, 0.0).unwrap(), 0.0);
        assert!(close(psi(&g, 1.0).unwrap(), LN_2, 1e-15));
        let ggp = LevySpec::generalized_gamma(0.5, 1.0).unwrap();
        assert!(close(psi(&ggp, 1.0).unwrap(), 2.0 * (2f64.sqrt() - 1.0), 1e-14));
        assert!(psi(&g, -1e-9).is_err());
    }

    #[test]
    fn psi_deriv_examples() {
        let g = LevySpec::gamma(1.0).unwrap();
        let v = psi_deriv(&g, 1, 1.0).unwrap();
        assert_eq!(v.sign(), 1);
        assert!(close(v.log_mag(), 0.5f64.ln(), 1e-14));
        assert!(close(psi_deriv(&g, 2, 0.0).unwrap().to_f64(), -1.0, 1e-14));
        let ggp = LevySpec::generalized_gamma(0.5, 1.0).unwrap();
        assert!(close(psi_deriv(&ggp, 1, 1.0).unwrap().to_f64(), 0.5f64.sqrt(), 1e-14));
        assert!(psi_deriv(&g, 0, 1.0).is_err());
        assert!(psi_deriv(&g, 1, -0.5).is_err());
    }

    #[test]
    fn h_examples() {
        let g2 = LevySpec::gamma(2.0).unwrap();
        assert_eq!(h_eval(&g2, 0.0).unwrap(), 1.0);
        let g1 = LevySpec::gamma(1.0).unwrap();
        assert!(close(h_eval(&g1, 1.0).unwrap(), 0.5, 1e-15));
        let ggp = LevySpec::generalized_gamma(0.3, 1.0).unwrap();
        let u = LN_2;
        let expected = (-((1.0 + u).powf(0.3) - 1.0) / 0.3).exp();
        assert!(close(h_eval(&ggp, u).unwrap(), expected, 1e-14));
        assert!(h_eval(&g1, -1.0).is_err());

        assert!(close(h_deriv(&g1, 1, 1.0).unwrap().to_f64(), -0.25, 1e-14));
        assert!(close(h_deriv(&g2, 1, 0.0).unwrap().to_f64(), -2.0, 1e-14));
        assert_eq!(h_deriv(&ggp, 1, 1.0), Err(HcrmError::FitNotAvailable));
    }

    #[test]
    fn ggp_zero_discount_is_gamma() {
        let g = LevySpec::gamma(1.7).unwrap();
        let z = LevySpec::generalized_gamma(0.0, 1.7).unwrap();
        for &t in &[0.0, 0.3, 1.0, 7.5] {
            assert_eq!(psi(&g, t).unwrap(), psi(&z, t).unwrap());
            for k in 1..10 {
                assert_eq!(psi_deriv(&g, k, t).unwrap(), psi_deriv(&z, k, t).unwrap());
                assert_eq!(h_deriv(&g, k, t).unwrap(), h_deriv(&z, k, t).unwrap());
            }
        }
    }

    #[test]
    fn recursion_matches_gamma_closed_form() {
        let g = LevySpec::gamma(2.3).unwrap();
        let rec = h_derivs_recursive(&g, 40, LN_2).unwrap();
        for k in 1..=40u32 {
            let exact = h_deriv(&g, k, LN_2).unwrap();
            assert_eq!(rec[k as usize].sign(), exact.sign());
            assert!(
                (rec[k as usize].log_mag() - exact.log_mag()).abs() < 1e-11,
                "k={k}"
            );
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(LevySpec::generalized_gamma(1.0, 1.0).is_err());
        assert!(LevySpec::generalized_gamma(-0.1, 1.0).is_err());
        assert!(LevySpec::gamma(0.0).is_err());
        assert!(LevySpec::sum_generalized_gamma(vec![]).is_err());
        assert!(LevySpec::sum_generalized_gamma(vec![GgpComponent {
            theta: -1.0,
            discount: 0.1
        }])
        .is_err());
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let s = LevySpec::sum_generalized_gamma(vec![
            GgpComponent { theta: 0.1 + 0.2, discount: 0.0 },
            GgpComponent { theta: 1.0 / 3.0, discount: 0.4 },
        ])
        .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: LevySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }
}
