//! Gauss–Legendre rules on the reference interval `(0, 1)`.
//!
//! A rule of order `Q` integrates polynomials of degree `≤ 2Q − 1` exactly.
//! Nodes on a general interval `[a, b]` are the affine images
//! `a + s (b − a)` of the reference nodes `s`, and the weights scale by
//! `b − a`.
//!
//! Besides plain integration this module exposes the nested quadrature sums
//! that control the propagation of errors through the recursive estimator:
//! sums over node chains `t₀ < t₁ < … < t_k < T`, each `t_{i+1}` a node of
//! the rule on `[t_i, T]`, of `∏ q(t_{i+1}) / √(t_{i+1} − t_i)`.

use std::f64::consts::PI;

use crate::analysis::log_gamma;
use crate::error::{domain, Error, Result};

/// Largest supported order.
pub const MAX_ORDER: usize = 64;

/// Guard for the brute-force chain enumeration in [`iterated_gl_lhs`].
pub const MAX_ITERATED_ORDER: usize = 10;
pub const MAX_ITERATED_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendreRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Evaluates `(P_n(x), P_n'(x))` with the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Builds the order-`q` rule on `(0, 1)`.
///
/// Roots of `P_q` are found by Newton iteration from the Chebyshev-angle
/// guesses `cos(π(i − ¼)/(q + ½))`. Only the nonnegative half is computed;
/// the other half is mirrored so the rule is exactly symmetric about ½.
pub fn build_rule(q: usize) -> Result<GaussLegendreRule> {
    if q == 0 || q > MAX_ORDER {
        return Err(domain(format!(
            "Gauss-Legendre order must lie in 1..={MAX_ORDER}, got {q}"
        )));
    }
    let half = q.div_ceil(2);
    // (root on [-1,1], weight on [0,1]) for the roots in [0, 1), largest first
    let mut upper = Vec::with_capacity(half);
    for i in 1..=half {
        let mut x = if q % 2 == 1 && i == half {
            0.0
        } else {
            (PI * (i as f64 - 0.25) / (q as f64 + 0.5)).cos()
        };
        if x != 0.0 {
            for _ in 0..100 {
                let (p, dp) = legendre(q, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
        }
        let (_, dp) = legendre(q, x);
        let w = 1.0 / ((1.0 - x * x) * dp * dp);
        upper.push((x, w));
    }

    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for (i, &(c, w)) in upper.iter().enumerate() {
        // i-th largest root maps to rank q-1-i; its mirror to rank i
        let low = 0.5 * (1.0 - c);
        nodes[i] = low;
        nodes[q - 1 - i] = 1.0 - low;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    Ok(GaussLegendreRule {
        order: q,
        nodes,
        weights,
    })
}

impl GaussLegendreRule {
    pub fn new(q: usize) -> Result<Self> {
        build_rule(q)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Reference nodes in `(0, 1)`, strictly ascending.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Reference weights, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// A copy of this rule with the weight of node `index` (0-based)
    /// multiplied by `1 + relative`. Used to check that the self-check
    /// detects corrupted rules.
    pub fn with_perturbed_weight(&self, index: usize, relative: f64) -> Self {
        let mut out = self.clone();
        if let Some(w) = out.weights.get_mut(index) {
            *w *= 1.0 + relative;
        }
        out
    }

    /// Node times and weights of the rule mapped to `[a, b]`, ascending.
    ///
    /// Callers are responsible for `a < b`.
    pub fn scaled(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let len = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&s, &w)| (a + s * len, len * w))
    }

    /// `Σ w(s) (1 − s)^exponent / √s` over the reference nodes.
    pub fn root_weighted_moment(&self, exponent: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * (1.0 - s).powf(exponent) / s.sqrt())
            .sum()
    }
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(domain(format!(
            "expected a finite interval a < b, got [{a}, {b}]"
        )));
    }
    Ok(())
}

/// Node `k` (1-based rank) of `rule` on `[a, b]` and its weight `(b − a) w_k`.
pub fn scale_weight(rule: &GaussLegendreRule, a: f64, b: f64, k: usize) -> Result<(f64, f64)> {
    check_interval(a, b)?;
    if k == 0 || k > rule.order {
        return Err(domain(format!(
            "node rank must lie in 1..={}, got {k}",
            rule.order
        )));
    }
    let len = b - a;
    Ok((a + rule.nodes[k - 1] * len, len * rule.weights[k - 1]))
}

/// `Σ_k q_k f(t_k)` over the nodes of `rule` scaled to `[a, b]`.
pub fn integrate<F>(rule: &GaussLegendreRule, a: f64, b: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    check_interval(a, b)?;
    let mut acc = 0.0;
    for (t, w) in rule.scaled(a, b) {
        let v = f(t);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "integrand at t = {t} returned {v}"
            )));
        }
        acc += w * v;
    }
    Ok(acc)
}

fn check_iterated(q: usize, k: usize, t0: f64, horizon: f64) -> Result<()> {
    if k == 0 {
        return Err(domain("iterated quadrature depth must be at least 1"));
    }
    check_interval(t0, horizon)?;
    if q == 0 || q > MAX_ORDER {
        return Err(domain(format!("order {q} outside 1..={MAX_ORDER}")));
    }
    Ok(())
}

/// Nested sum over node chains `t₀ < t₁ < … < t_k < T`, where `t_{i+1}`
/// ranges over the nodes of the order-`q` rule on `[t_i, T]`, of
/// `∏ q^{[t_i,T]}(t_{i+1}) / √(t_{i+1} − t_i)`.
///
/// Enumerates all `q^k` chains, so it is limited to `q ≤ 10`, `k ≤ 8`.
pub fn iterated_gl_lhs(q: usize, k: usize, t0: f64, horizon: f64) -> Result<f64> {
    if q > MAX_ITERATED_ORDER || k > MAX_ITERATED_DEPTH {
        return Err(domain(format!(
            "chain enumeration limited to order ≤ {MAX_ITERATED_ORDER} and depth ≤ {MAX_ITERATED_DEPTH}, got ({q}, {k})"
        )));
    }
    check_iterated(q, k, t0, horizon)?;
    Ok(iterated_gl_lhs_with(&build_rule(q)?, k, t0, horizon))
}

/// [`iterated_gl_lhs`] for an explicit rule, without guards.
pub fn iterated_gl_lhs_with(rule: &GaussLegendreRule, k: usize, t0: f64, horizon: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    rule.scaled(t0, horizon)
        .map(|(t, w)| w / (t - t0).sqrt() * iterated_gl_lhs_with(rule, k - 1, t, horizon))
        .sum()
}

/// Closed form of the nested sum:
/// `(T − t₀)^{k/2} ∏_{i<k} Σ_s w(s) (1 − s)^{i/2} / √s`.
pub fn iterated_gl_rhs(q: usize, k: usize, t0: f64, horizon: f64) -> Result<f64> {
    check_iterated(q, k, t0, horizon)?;
    Ok(iterated_gl_rhs_with(&build_rule(q)?, k, t0, horizon))
}

pub fn iterated_gl_rhs_with(rule: &GaussLegendreRule, k: usize, t0: f64, horizon: f64) -> f64 {
    let product: f64 = (0..k)
        .map(|i| rule.root_weighted_moment(i as f64 / 2.0))
        .product();
    (horizon - t0).powf(k as f64 / 2.0) * product
}

/// `Σ_s w(s) (1 − s)^j / √s`; never exceeds `Γ(½)Γ(j+1)/Γ(j+3/2)`.
pub fn frac_moment_sum(q: usize, j: u32) -> Result<f64> {
    Ok(build_rule(q)?.root_weighted_moment(j as f64))
}

/// `[Q!]⁴ len^{2Q+1} / ((2Q+1) [(2Q)!]³)`, the Gauss–Legendre remainder
/// factor, evaluated in log space.
pub fn gl_error_factor(q: usize, interval_length: f64) -> Result<f64> {
    if q == 0 {
        return Err(domain("order must be at least 1"));
    }
    if !(interval_length >= 0.0) || !interval_length.is_finite() {
        return Err(domain(format!(
            "interval length must be finite and ≥ 0, got {interval_length}"
        )));
    }
    if interval_length == 0.0 {
        return Ok(0.0);
    }
    let qf = q as f64;
    let log = 4.0 * log_gamma(qf + 1.0)? + (2.0 * qf + 1.0) * interval_length.ln()
        - (2.0 * qf + 1.0).ln()
        - 3.0 * log_gamma(2.0 * qf + 1.0)?;
    Ok(log.exp())
}
