//! Closed-form error bounds and cost model of the MLP scheme, plus the
//! special functions they need.
//!
//! All bounds are assembled in log space and exponentiated once at the end;
//! `Cⁿ 2ⁿ eⁿ` overflows long before the bound itself becomes uninteresting.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("log_gamma needs a finite x > 0, got {x}")));
    }
    Ok(log_gamma_pos(x))
}

fn log_gamma_pos(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - log_gamma_pos(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Exact `C(n, k)`; zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or(Error::Overflow("binomial"))?
            / (i as u128 + 1);
    }
    Ok(acc)
}

/// `C = 2(√(T−t₀)+1)·√((T−t₀)π)·(‖L‖₁+1) + 1`.
pub fn constant_c(horizon: f64, t0: f64, lip_f_l1: f64) -> Result<f64> {
    if !(t0 < horizon) {
        return Err(domain(format!("need t0 < T, got t0 = {t0}, T = {horizon}")));
    }
    if !(lip_f_l1 >= 0.0) {
        return Err(domain(format!("‖L‖₁ must be ≥ 0, got {lip_f_l1}")));
    }
    let span = horizon - t0;
    Ok(2.0 * (span.sqrt() + 1.0) * (span * PI).sqrt() * (lip_f_l1 + 1.0) + 1.0)
}

/// Problem-dependent constants entering the global error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub horizon: f64,
    pub t0: f64,
    /// ‖L‖₁
    pub lip_f_l1: f64,
    /// ‖K‖₁
    pub lip_g_l1: f64,
    /// sup |f(t, z, 0, 0)| over `[t0, T] × R^d`.
    pub sup_f0: f64,
    /// sup ‖(u, ∇u)‖_∞ over `[t0, T] × R^d`.
    pub sup_u: f64,
    /// `sup_k sup ‖(1,∇)((∂_t + ½Δ)^k u)‖_∞ / (k!)^{1−α}` for the α passed to
    /// the bound. [`bound_nnn`] uses α = ¼, so the exponent there is ¾.
    pub deriv_ratio: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let sups = [
            self.lip_f_l1,
            self.lip_g_l1,
            self.sup_f0,
            self.sup_u,
            self.deriv_ratio,
        ];
        if sups.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(domain("bound inputs must be finite and nonnegative"));
        }
        if !(self.horizon > 0.0) || !(self.t0 >= 0.0) || !(self.t0 < self.horizon) {
            return Err(domain(format!(
                "need 0 ≤ t0 < T, got t0 = {}, T = {}",
                self.t0, self.horizon
            )));
        }
        Ok(())
    }
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln(e^a + e^b)` tolerant of `-∞` arguments.
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Natural log of [`bound_nmq`]; `-∞` when the bound is zero.
pub fn log_bound_nmq(inputs: &BoundInputs, n: u32, m: u32, q: u32, alpha: f64) -> Result<f64> {
    inputs.validate()?;
    if n == 0 || q == 0 {
        return Err(domain("the bound needs n ≥ 1 and Q ≥ 1"));
    }
    if m < 2 {
        return Err(domain(format!("the bound needs M ≥ 2, got {m}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let c = constant_c(inputs.horizon, inputs.t0, inputs.lip_f_l1)?;
    let (nf, mf, qf) = (n as f64, m as f64, q as f64);
    let span = inputs.horizon - inputs.t0;

    let numer = inputs.sup_f0 + inputs.sup_u + span.sqrt().max(3f64.sqrt()) * inputs.lip_g_l1;
    let sampling = 7f64.ln() + nf * c.ln() + (nf - 1.0) * 2f64.ln() + mf
        - 0.5 * (nf - 3.0) * mf.ln()
        + ln_or_neg_inf(numer);

    let amplification = log_add(14f64.ln() + (nf - 1.0) * (4.0 * c).ln(), 0.0);
    let quadrature = amplification + (2.0 * qf + 1.0) * inputs.horizon.ln()
        - 2.0 * alpha * qf * qf.ln()
        + ln_or_neg_inf(inputs.deriv_ratio);

    Ok(log_add(sampling, quadrature))
}

/// Global L² error bound for general `(n, M, Q)` and smoothness split α:
///
/// ```text
/// 7Cⁿ2ⁿ⁻¹e^M / √(M^{n−3}) · (sup|F(0)| + sup‖ů‖_∞ + max{√(T−t₀), √3}‖K‖₁)
///   + (14(4C)ⁿ⁻¹ + 1) T^{2Q+1} / Q^{2αQ} · deriv_ratio
/// ```
pub fn bound_nmq(inputs: &BoundInputs, n: u32, m: u32, q: u32, alpha: f64) -> Result<f64> {
    Ok(log_bound_nmq(inputs, n, m, q, alpha)?.exp())
}

/// Natural log of [`bound_nnn`].
pub fn log_bound_nnn(inputs: &BoundInputs, n: u32) -> Result<f64> {
    if n < 2 {
        return Err(domain(format!("the diagonal bound needs n ≥ 2, got {n}")));
    }
    log_bound_nmq(inputs, n, n, n, 0.25)
}

/// The bound on the diagonal `n = M = Q` with α = ¼.
pub fn bound_nnn(inputs: &BoundInputs, n: u32) -> Result<f64> {
    Ok(log_bound_nnn(inputs, n)?.exp())
}

/// `2((T − t₀)π)^{k/2} / Γ(k/2)`.
pub fn iterated_gl_upper_bound(k: u32, span: f64) -> Result<f64> {
    if k == 0 {
        return Err(domain("depth must be at least 1"));
    }
    if !(span >= 0.0) || !span.is_finite() {
        return Err(domain(format!("span must be finite and ≥ 0, got {span}")));
    }
    if span == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    Ok((2f64.ln() + 0.5 * kf * (span * PI).ln() - log_gamma(kf / 2.0)?).exp())
}

fn checked_pow(base: u128, exp: u32, what: &'static str) -> Result<u128> {
    base.checked_pow(exp).ok_or(Error::Overflow(what))
}

/// Evaluates `X(0) = 0`,
/// `X(n) = lead·Mⁿ + Σ_{l<n} Q M^{n−l} (per_node(l) + X(l) + [l ≥ 1] X(l−1))`.
fn cost_recursion(
    n: u32,
    m: u64,
    q: u64,
    lead: u128,
    per_node: impl Fn(u32) -> u128,
    what: &'static str,
) -> Result<u128> {
    let (m, q) = (m as u128, q as u128);
    let mut table: Vec<u128> = vec![0];
    for level in 1..=n {
        let mut total = lead
            .checked_mul(checked_pow(m, level, what)?)
            .ok_or(Error::Overflow(what))?;
        for l in 0..level {
            let mut inner = per_node(l)
                .checked_add(table[l as usize])
                .ok_or(Error::Overflow(what))?;
            if l >= 1 {
                inner = inner
                    .checked_add(table[l as usize - 1])
                    .ok_or(Error::Overflow(what))?;
            }
            let term = q
                .checked_mul(checked_pow(m, level - l, what)?)
                .and_then(|v| v.checked_mul(inner))
                .ok_or(Error::Overflow(what))?;
            total = total.checked_add(term).ok_or(Error::Overflow(what))?;
        }
        table.push(total);
    }
    Ok(table[n as usize])
}

/// Scalar normal variates drawn by one realization of the level-`n`
/// estimator in dimension `d`:
/// `RN(n) = d Mⁿ + Σ_{l<n} Q M^{n−l} (d + RN(l) + [l ≥ 1] RN(l−1))`.
pub fn cost_rn_exact(n: u32, m: u64, q: u64, d: u64) -> Result<u128> {
    let d = d as u128;
    cost_recursion(n, m, q, d, |_| d, "RN cost recursion")
}

/// Evaluations of `f` and `g` by one realization of the level-`n` estimator:
/// `FE(n) = Mⁿ + Σ_{l<n} Q M^{n−l} (1 + FE(l) + [l ≥ 1] + [l ≥ 1] FE(l−1))`.
///
/// The anchor evaluation `g(x)` of the control variate is not part of this
/// count.
pub fn cost_fe_exact(n: u32, m: u64, q: u64) -> Result<u128> {
    cost_recursion(
        n,
        m,
        q,
        1,
        |l| if l >= 1 { 2 } else { 1 },
        "FE cost recursion",
    )
}

/// Norms for [`norm_log_subadditivity_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Max,
}

impl Norm {
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Max => v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs())),
        }
    }
}

/// Checks `1 + ‖x+y‖^p ≤ (1+‖y‖)^p (1+‖x‖^p)`.
///
/// The right-hand side is granted a relative slack of four ulps so that the
/// equality cases (`x = 0` or `y = 0`) are not decided by rounding.
pub fn norm_log_subadditivity_check(norm: Norm, p: u32, x: &[f64], y: &[f64]) -> Result<bool> {
    if p == 0 {
        return Err(domain("p must be at least 1"));
    }
    if x.len() != y.len() {
        return Err(domain("x and y must have the same dimension"));
    }
    let sum: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let p = p as i32;
    let lhs = 1.0 + norm.eval(&sum).powi(p);
    let rhs = (1.0 + norm.eval(y)).powi(p) * (1.0 + norm.eval(x).powi(p));
    Ok(lhs <= rhs * (1.0 + 4.0 * f64::EPSILON))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_gamma_classical_values() {
        assert_relative_eq!(
            log_gamma(0.5).unwrap(),
            PI.sqrt().ln(),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            log_gamma(2.5).unwrap(),
            (0.75 * PI.sqrt()).ln(),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            log_gamma(10.0).unwrap(),
            362_880f64.ln(),
            max_relative = 1e-13
        );
        assert!(log_gamma(1.0).unwrap().abs() < 1e-15);
        assert!(log_gamma(2.0).unwrap().abs() < 1e-15);
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.0).is_err());
    }

    #[test]
    fn log_gamma_matches_factorials() {
        let mut fact = 1f64;
        for k in 1..=100u32 {
            fact *= k as f64;
            assert_relative_eq!(
                log_gamma(k as f64 + 1.0).unwrap(),
                fact.ln(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2).unwrap(), 10);
        assert_eq!(binomial(5, 6).unwrap(), 0);
        assert_eq!(binomial(60, 30).unwrap(), 118_264_581_564_861_424);
        assert!(binomial(200, 100).is_err());
    }

    #[test]
    fn constant_c_examples() {
        assert_relative_eq!(
            constant_c(1.0, 0.0, 0.0).unwrap(),
            4.0 * PI.sqrt() + 1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            constant_c(1.0, 0.0, 1.0).unwrap(),
            8.0 * PI.sqrt() + 1.0,
            max_relative = 1e-15
        );
        assert!((constant_c(1.0, 1.0 - 1e-14, 3.0).unwrap() - 1.0).abs() < 1e-5);
        assert!(constant_c(1.0, 1.0, 0.0).is_err());
    }

    fn zero_inputs() -> BoundInputs {
        BoundInputs {
            horizon: 1.0,
            t0: 0.0,
            lip_f_l1: 0.0,
            lip_g_l1: 0.0,
            sup_f0: 0.0,
            sup_u: 0.0,
            deriv_ratio: 0.0,
        }
    }

    #[test]
    fn bound_vanishes_with_zero_numerators() {
        assert_eq!(bound_nmq(&zero_inputs(), 3, 4, 2, 0.5).unwrap(), 0.0);
        assert_eq!(bound_nnn(&zero_inputs(), 4).unwrap(), 0.0);
    }

    #[test]
    fn bound_nmq_sampling_term_at_two() {
        let inputs = BoundInputs {
            lip_g_l1: 1.0,
            ..zero_inputs()
        };
        let c = 4.0 * PI.sqrt() + 1.0;
        // 7 C² 2¹ e² / √(2⁻¹) · √3
        let expected = 7.0 * c * c * 2.0 * 2f64.exp() * 2f64.sqrt() * 3f64.sqrt();
        assert_relative_eq!(
            bound_nmq(&inputs, 2, 2, 2, 0.25).unwrap(),
            expected,
            max_relative = 1e-13
        );
    }

    #[test]
    fn bound_nmq_quadrature_term() {
        let inputs = BoundInputs {
            horizon: 2.0,
            t0: 0.5,
            lip_f_l1: 0.3,
            deriv_ratio: 1.7,
            ..zero_inputs()
        };
        let c = constant_c(2.0, 0.5, 0.3).unwrap();
        let expected =
            (14.0 * (4.0 * c).powi(2) + 1.0) * 2f64.powi(7) / 3f64.powf(2.0 * 0.4 * 3.0) * 1.7;
        assert_relative_eq!(
            bound_nmq(&inputs, 3, 5, 3, 0.4).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn bound_nnn_is_diagonal_nmq() {
        let inputs = BoundInputs {
            lip_f_l1: 1.0,
            lip_g_l1: 1.0,
            sup_f0: 2.0,
            sup_u: 1.0,
            deriv_ratio: 3.0,
            ..zero_inputs()
        };
        assert_relative_eq!(
            bound_nnn(&inputs, 3).unwrap(),
            bound_nmq(&inputs, 3, 3, 3, 0.25).unwrap(),
            max_relative = 1e-14
        );
        assert!(bound_nnn(&inputs, 1).is_err());
        assert!(bound_nmq(&inputs, 3, 1, 3, 0.25).is_err());
    }

    #[test]
    fn bound_nonincreasing_in_large_m() {
        let inputs = BoundInputs {
            lip_f_l1: 1.0,
            lip_g_l1: 1.0,
            sup_f0: 1.0,
            sup_u: 1.0,
            deriv_ratio: 0.0,
            ..zero_inputs()
        };
        // d/dM [M - (n-3)/2 ln M] < 0 iff M < (n-3)/2; with n = 200 that is M < 98.5
        let vals: Vec<f64> = (2..=64)
            .map(|m| log_bound_nmq(&inputs, 200, m, 4, 0.25).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iterated_upper_bound_examples() {
        assert_relative_eq!(
            iterated_gl_upper_bound(2, 1.0).unwrap(),
            2.0 * PI,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            iterated_gl_upper_bound(1, 1.0).unwrap(),
            2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            iterated_gl_upper_bound(4, 0.25).unwrap(),
            PI * PI / 8.0,
            max_relative = 1e-14
        );
        assert_eq!(iterated_gl_upper_bound(3, 0.0).unwrap(), 0.0);
        assert!(iterated_gl_upper_bound(0, 1.0).is_err());
    }

    #[test]
    fn cost_recursion_examples() {
        assert_eq!(cost_rn_exact(0, 3, 3, 7).unwrap(), 0);
        assert_eq!(cost_fe_exact(0, 3, 3).unwrap(), 0);
        assert_eq!(cost_rn_exact(1, 2, 2, 1).unwrap(), 6);
        // FE(1) = M + Q M (1 + 0)
        assert_eq!(cost_fe_exact(1, 2, 2).unwrap(), 6);
        // RN(2) = d M² + Q M² d + Q M (d + RN(1))
        let rn1 = 2 * 2 + 3 * 2 * 2;
        assert_eq!(
            cost_rn_exact(2, 2, 3, 2).unwrap(),
            2 * 4 + 3 * 4 * 2 + 3 * 2 * (2 + rn1)
        );
    }

    #[test]
    fn cost_cap_holds_on_diagonal() {
        for n in 1..=8u32 {
            let nn = n as u128;
            for d in [1u64, 10, 100] {
                let rn = cost_rn_exact(n, n as u64, n as u64, d).unwrap();
                assert!(rn <= 8 * d as u128 * nn.pow(2 * n), "n={n} d={d}");
            }
            assert!(cost_fe_exact(n, n as u64, n as u64).unwrap() <= 8 * nn.pow(2 * n));
        }
    }

    #[test]
    fn cost_overflow_is_reported() {
        assert!(matches!(
            cost_rn_exact(40, 1000, 1000, 10),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn subadditivity_edge_cases() {
        let x = [0.3, -2.0, 1.5];
        let zero = [0.0; 3];
        for norm in [Norm::L1, Norm::L2, Norm::Max] {
            for p in 1..=6 {
                assert!(norm_log_subadditivity_check(norm, p, &x, &zero).unwrap());
                assert!(norm_log_subadditivity_check(norm, p, &zero, &x).unwrap());
            }
        }
        assert!(norm_log_subadditivity_check(Norm::L2, 0, &x, &x).is_err());
        assert!(norm_log_subadditivity_check(Norm::L2, 1, &x, &x[..2]).is_err());
    }
}
