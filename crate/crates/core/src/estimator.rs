//! The multilevel Picard estimator with Gauss–Legendre time quadrature.
//!
//! For `n ≥ 1` the level-`n` approximation at `(s, x)` under index `θ` is
//!
//! ```text
//! U_n^θ(s, x) = (g(x), 0)
//!   + M^{−n} Σ_{i ≤ Mⁿ} (g(x + ΔW_T) − g(x)) (1, ΔW_T/(T − s))          ΔW from W^{(θ,0,−i)}
//!   + Σ_{l<n} Σ_t q(t) M^{l−n} Σ_{i ≤ M^{n−l}}
//!       [ F(U_l^{(θ,l,i,t)}) − 1_{l≥1} F(U_{l−1}^{(θ,−l,i,t)}) ](t, x + ΔW_t) (1, ΔW_t/(t − s))
//! ```
//!
//! where `t` runs over the Q nodes of the rule on `[s, T]` with weights
//! `q(t)`, `ΔW_t` comes from the single path `W^{(θ,l,i)}` sampled at all
//! nodes, and `U_0 = 0`. The quadrature time `t` in an index is encoded by its
//! node rank `k ∈ 1..=Q`.

use std::ops::AddAssign;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{cost_fe_exact, cost_rn_exact};
use crate::error::{domain, Error, Result};
use crate::problems::Problem;
use crate::quadrature::{build_rule, GaussLegendreRule, MAX_ORDER};
use crate::randomness::{GaussianStream, MultiIndex};

/// `(value, gradient)` estimate, length `d + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate(Vec<f64>);

impl Estimate {
    pub fn zero(dim: usize) -> Self {
        Self(vec![0.0; dim + 1])
    }

    pub fn from_components(components: Vec<f64>) -> Self {
        Self(components)
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    pub fn gradient(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn into_components(self) -> Vec<f64> {
        self.0
    }
}

/// Realized work of one or more estimator runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostCounters {
    /// Scalar standard normals drawn.
    pub gaussians_drawn: u64,
    pub f_evals: u64,
    /// Evaluations of `g` at shifted points `x + ΔW`.
    pub g_evals: u64,
    /// Evaluations of the control-variate anchor `g(x)`, one per call with
    /// `n ≥ 1`. Not part of the FE cost model.
    pub g_anchor_evals: u64,
}

impl CostCounters {
    /// The quantity modelled by [`cost_fe_exact`].
    pub fn function_evals(&self) -> u64 {
        self.f_evals + self.g_evals
    }
}

impl AddAssign for CostCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.gaussians_drawn += rhs.gaussians_drawn;
        self.f_evals += rhs.f_evals;
        self.g_evals += rhs.g_evals;
        self.g_anchor_evals += rhs.g_anchor_evals;
    }
}

/// Limits checked before an estimator run starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guards {
    pub max_level: u32,
    /// Upper limit on `Mⁿ`.
    pub max_samples: u128,
    /// Upper limit on the predicted `RN + FE` of one realization.
    pub max_cost: u128,
}

impl Default for Guards {
    fn default() -> Self {
        Self {
            max_level: 6,
            max_samples: 100_000_000,
            max_cost: 10_000_000_000,
        }
    }
}

impl Guards {
    /// Fails with [`Error::Budget`] if a level-`n` run in dimension `dim`
    /// would exceed the limits.
    pub fn check(&self, n: u32, m: u32, q: usize, dim: usize) -> Result<()> {
        if n > self.max_level {
            return Err(Error::Budget {
                what: "level",
                predicted: n as u128,
                limit: self.max_level as u128,
            });
        }
        let samples = (m as u128).checked_pow(n).ok_or(Error::Overflow("M^n"))?;
        if samples > self.max_samples {
            return Err(Error::Budget {
                what: "M^n",
                predicted: samples,
                limit: self.max_samples,
            });
        }
        let cost = cost_rn_exact(n, m as u64, q as u64, dim as u64)?
            .checked_add(cost_fe_exact(n, m as u64, q as u64)?)
            .ok_or(Error::Overflow("RN + FE"))?;
        if cost > self.max_cost {
            return Err(Error::Budget {
                what: "RN + FE",
                predicted: cost,
                limit: self.max_cost,
            });
        }
        Ok(())
    }
}

/// A problem together with fixed `(M, Q, seed)`.
pub struct Estimator<'a> {
    problem: &'a Problem,
    rule: GaussLegendreRule,
    samples: u32,
    seed: u64,
    guards: Guards,
}

impl<'a> Estimator<'a> {
    pub fn new(problem: &'a Problem, samples: u32, nodes: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(domain("M must be at least 1"));
        }
        if nodes == 0 || nodes > MAX_ORDER {
            return Err(domain(format!(
                "Q must lie in 1..={MAX_ORDER}, got {nodes}"
            )));
        }
        if problem.dim == 0 {
            return Err(domain("problem dimension must be at least 1"));
        }
        Ok(Self {
            problem,
            rule: build_rule(nodes)?,
            samples,
            seed,
            guards: Guards::default(),
        })
    }

    pub fn with_guards(mut self, guards: Guards) -> Self {
        self.guards = guards;
        self
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn rule(&self) -> &GaussLegendreRule {
        &self.rule
    }

    fn check_point(&self, s: f64, x: &[f64]) -> Result<()> {
        let horizon = self.problem.horizon;
        if !(0.0..horizon).contains(&s) {
            return Err(domain(format!("need 0 ≤ s < T = {horizon}, got s = {s}")));
        }
        if x.len() != self.problem.dim {
            return Err(domain(format!(
                "point has dimension {}, problem has {}",
                x.len(),
                self.problem.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(domain("point must be finite"));
        }
        Ok(())
    }

    /// `U_n^key(s, x)`, adding the work done to `counters`.
    pub fn estimate(
        &self,
        n: u32,
        key: &MultiIndex,
        s: f64,
        x: &[f64],
        counters: &mut CostCounters,
    ) -> Result<Estimate> {
        self.check_point(s, x)?;
        self.guards
            .check(n, self.samples, self.rule.order(), self.problem.dim)?;
        self.level(n, key, s, x, counters).map(Estimate)
    }

    fn level(
        &self,
        n: u32,
        key: &MultiIndex,
        s: f64,
        x: &[f64],
        c: &mut CostCounters,
    ) -> Result<Vec<f64>> {
        let d = self.problem.dim;
        let mut out = vec![0.0; d + 1];
        if n == 0 {
            return Ok(out);
        }
        let horizon = self.problem.horizon;
        let m = self.samples as u64;
        let mut shifted = vec![0.0; d];
        let mut acc = vec![0.0; d + 1];

        let anchor = self.problem.g(x);
        c.g_anchor_evals += 1;
        finite(anchor, "g(x)")?;
        out[0] = anchor;

        // terminal term with the control variate g(x)
        let span = horizon - s;
        let mut dw = vec![0.0; d];
        let count = m.pow(n);
        for i in 1..=count {
            let stream = GaussianStream::new(self.seed, &key.extend(&[0, -(i as i64)]));
            stream.increments_into(d, s, &[horizon], &mut dw);
            c.gaussians_drawn += d as u64;
            for j in 0..d {
                shifted[j] = x[j] + dw[j];
            }
            let gy = self.problem.g(&shifted);
            c.g_evals += 1;
            finite(gy, "g(x + ΔW)")?;
            let diff = gy - anchor;
            acc[0] += diff;
            for j in 0..d {
                acc[1 + j] += diff * dw[j] / span;
            }
        }
        let inv = 1.0 / count as f64;
        out.iter_mut().zip(&acc).for_each(|(o, a)| *o += a * inv);

        // quadrature terms
        let nodes: Vec<(f64, f64)> = self.rule.scaled(s, horizon).collect();
        let times: Vec<f64> = nodes.iter().map(|&(t, _)| t).collect();
        let q = nodes.len();
        let mut increments = vec![0.0; q * d];
        let mut disp = vec![0.0; d];
        for l in 0..n {
            let count = m.pow(n - l);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for i in 1..=count {
                let path_key = key.extend(&[l as i64, i as i64]);
                GaussianStream::new(self.seed, &path_key).increments_into(
                    d,
                    s,
                    &times,
                    &mut increments,
                );
                c.gaussians_drawn += (q * d) as u64;
                disp.iter_mut().for_each(|v| *v = 0.0);
                for (k, &(t, w)) in nodes.iter().enumerate() {
                    for j in 0..d {
                        disp[j] += increments[k * d + j];
                        shifted[j] = x[j] + disp[j];
                    }
                    let rank = k as i64 + 1;
                    let fine = if l == 0 {
                        vec![0.0; d + 1]
                    } else {
                        self.level(l, &path_key.extend(&[rank]), t, &shifted, c)?
                    };
                    let mut fv = self.problem.f(t, &shifted, fine[0], &fine[1..]);
                    c.f_evals += 1;
                    if l >= 1 {
                        let coarse_key = key.extend(&[-(l as i64), i as i64, rank]);
                        let coarse = self.level(l - 1, &coarse_key, t, &shifted, c)?;
                        fv -= self.problem.f(t, &shifted, coarse[0], &coarse[1..]);
                        c.f_evals += 1;
                    }
                    finite(fv, "f difference")?;
                    let wf = w * fv;
                    acc[0] += wf;
                    let lag = t - s;
                    for j in 0..d {
                        acc[1 + j] += wf * disp[j] / lag;
                    }
                }
            }
            let inv = 1.0 / count as f64;
            out.iter_mut().zip(&acc).for_each(|(o, a)| *o += a * inv);
        }
        if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "estimate component {bad} at level {n}"
            )));
        }
        Ok(out)
    }
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// One realization of `U_{n,M,Q}^key(s, x)` with default [`Guards`].
#[allow(clippy::too_many_arguments)]
pub fn mlp_estimate(
    problem: &Problem,
    n: u32,
    m: u32,
    q: usize,
    key: &MultiIndex,
    seed: u64,
    s: f64,
    x: &[f64],
    counters: &mut CostCounters,
) -> Result<Estimate> {
    Estimator::new(problem, m, q, seed)?.estimate(n, key, s, x, counters)
}

/// Root-mean-square error of one component with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentError {
    pub rms: f64,
    pub se: f64,
}

impl ComponentError {
    /// From squared errors of independent replications.
    pub fn from_squared(sq: &[f64]) -> Self {
        let r = sq.len() as f64;
        let total: f64 = sq.iter().sum();
        let rms = (total / r).sqrt();
        if sq.len() < 2 || total == 0.0 {
            return Self { rms, se: 0.0 };
        }
        let loo: Vec<f64> = sq
            .iter()
            .map(|e| ((total - e).max(0.0) / (r - 1.0)).sqrt())
            .collect();
        let mean = loo.iter().sum::<f64>() / r;
        let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (r - 1.0) / r;
        Self {
            rms,
            se: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2ErrorReport {
    /// One entry per component `ν = 1..=d+1`.
    pub components: Vec<ComponentError>,
    pub value: ComponentError,
    /// The gradient component with the largest RMS error.
    pub gradient_sup: ComponentError,
    /// Work summed over all replications.
    pub counters: CostCounters,
    /// Componentwise maximum of the per-replication work.
    pub max_counters: CostCounters,
    pub replications: usize,
}

/// Replication `r` of a study runs under the root index `(r)`.
pub fn replication_key(r: usize) -> MultiIndex {
    MultiIndex::from_labels(&[r as i64])
}

/// Runs `reps` independent realizations in parallel (on the current rayon
/// pool) and returns them in replication order with their counters.
pub fn replicate(
    estimator: &Estimator<'_>,
    n: u32,
    s: f64,
    x: &[f64],
    reps: usize,
) -> Result<Vec<(Estimate, CostCounters)>> {
    estimator.check_point(s, x)?;
    estimator.guards.check(
        n,
        estimator.samples,
        estimator.rule.order(),
        estimator.problem.dim,
    )?;
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut c = CostCounters::default();
            let e = estimator.level(n, &replication_key(r), s, x, &mut c)?;
            Ok((Estimate(e), c))
        })
        .collect()
}

/// L² error of `U_{n,M,Q}(s, x)` against the exact solution over `reps`
/// independent replications.
#[allow(clippy::too_many_arguments)]
pub fn mc_l2_error(
    problem: &Problem,
    n: u32,
    m: u32,
    q: usize,
    s: f64,
    x: &[f64],
    reps: usize,
    seed: u64,
) -> Result<L2ErrorReport> {
    let estimator = Estimator::new(problem, m, q, seed)?;
    l2_error_with(&estimator, n, s, x, reps)
}

pub fn l2_error_with(
    estimator: &Estimator<'_>,
    n: u32,
    s: f64,
    x: &[f64],
    reps: usize,
) -> Result<L2ErrorReport> {
    let problem = estimator.problem;
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Unavailable(problem.name.clone(), "an exact solution"))?;
    if reps < 2 {
        return Err(domain(format!("need at least 2 replications, got {reps}")));
    }
    let truth = exact(s, x);
    let runs = replicate(estimator, n, s, x, reps)?;
    let d = problem.dim;
    let mut counters = CostCounters::default();
    let mut max_counters = CostCounters::default();
    let mut squared = vec![Vec::with_capacity(reps); d + 1];
    for (est, c) in &runs {
        counters += *c;
        max_counters.gaussians_drawn = max_counters.gaussians_drawn.max(c.gaussians_drawn);
        max_counters.f_evals = max_counters.f_evals.max(c.f_evals);
        max_counters.g_evals = max_counters.g_evals.max(c.g_evals);
        max_counters.g_anchor_evals = max_counters.g_anchor_evals.max(c.g_anchor_evals);
        for (nu, (u, v)) in est.components().iter().zip(&truth).enumerate() {
            squared[nu].push((u - v).powi(2));
        }
    }
    let components: Vec<ComponentError> = squared
        .iter()
        .map(|sq| ComponentError::from_squared(sq))
        .collect();
    let gradient_sup = components[1..]
        .iter()
        .copied()
        .fold(None, |best: Option<ComponentError>, e| match best {
            Some(b) if b.rms >= e.rms => Some(b),
            _ => Some(e),
        })
        .expect("dimension ≥ 1");
    Ok(L2ErrorReport {
        value: components[0],
        gradient_sup,
        components,
        counters,
        max_counters,
        replications: reps,
    })
}

/// How the terminal expectation on the right of the discrete Feynman–Kac
/// identity is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalSampling {
    /// Reuse the Brownian increments of the left-hand estimator's terminal
    /// term (common random numbers).
    Common,
    /// Fresh increments.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkResidual {
    /// Mean of `U_n − (terminal term) − (quadrature term)` per component.
    pub residual: Vec<f64>,
    /// Four standard errors of the mean, per component.
    pub radius: Vec<f64>,
    pub replications: usize,
}

impl FkResidual {
    pub fn within_radius(&self) -> bool {
        self.residual
            .iter()
            .zip(&self.radius)
            .all(|(r, rad)| r.abs() <= *rad)
    }
}

/// Monte Carlo check of the discrete Feynman–Kac identity
///
/// ```text
/// E[U_n(s, x)] = E[g(x + W_T − W_s)(1, ΔW_T/(T − s))]
///              + E[Σ_t q(t) F(U_{n−1})(t, x + W_t − W_s)(1, ΔW_t/(t − s))]
/// ```
///
/// Each replication evaluates both sides with its own indices; the residual
/// is the mean of the per-replication differences. Limited to small instances
/// (`d ≤ 3`, `1 ≤ n ≤ 2`, `M ≤ 3`, `Q ≤ 3`).
#[allow(clippy::too_many_arguments)]
pub fn discrete_fk_residual(
    problem: &Problem,
    n: u32,
    m: u32,
    q: usize,
    s: f64,
    x: &[f64],
    reps: usize,
    seed: u64,
    sampling: TerminalSampling,
) -> Result<FkResidual> {
    if problem.dim > 3 || !(1..=2).contains(&n) || m > 3 || q > 3 {
        return Err(domain(format!(
            "residual check limited to d ≤ 3, 1 ≤ n ≤ 2, M ≤ 3, Q ≤ 3; got d = {}, n = {n}, M = {m}, Q = {q}",
            problem.dim
        )));
    }
    if reps < 2 {
        return Err(domain(format!("need at least 2 replications, got {reps}")));
    }
    let est = Estimator::new(problem, m, q, seed)?;
    est.check_point(s, x)?;
    let d = problem.dim;
    let horizon = problem.horizon;
    let nodes: Vec<(f64, f64)> = est.rule.scaled(s, horizon).collect();
    let times: Vec<f64> = nodes.iter().map(|&(t, _)| t).collect();
    let terminal_count = (m as u64).pow(n);

    let diffs: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut scratch = CostCounters::default();
            let lhs_key = MultiIndex::from_labels(&[r as i64, 1]);
            let rhs_key = MultiIndex::from_labels(&[r as i64, 2]);
            let mut diff = est.level(n, &lhs_key, s, x, &mut scratch)?;

            let terminal_root = match sampling {
                TerminalSampling::Common => &lhs_key,
                TerminalSampling::Independent => &rhs_key,
            };
            let span = horizon - s;
            let mut dw = vec![0.0; d];
            let mut y = vec![0.0; d];
            let mut terminal = vec![0.0; d + 1];
            for i in 1..=terminal_count {
                let stream = GaussianStream::new(seed, &terminal_root.extend(&[0, -(i as i64)]));
                stream.increments_into(d, s, &[horizon], &mut dw);
                for j in 0..d {
                    y[j] = x[j] + dw[j];
                }
                let gy = problem.g(&y);
                terminal[0] += gy;
                for j in 0..d {
                    terminal[1 + j] += gy * dw[j] / span;
                }
            }
            let inv = 1.0 / terminal_count as f64;
            for (a, t) in diff.iter_mut().zip(&terminal) {
                *a -= t * inv;
            }

            let mut increments = vec![0.0; nodes.len() * d];
            GaussianStream::new(seed, &rhs_key.extend(&[0, 0])).increments_into(
                d,
                s,
                &times,
                &mut increments,
            );
            let mut disp = vec![0.0; d];
            for (k, &(t, w)) in nodes.iter().enumerate() {
                for j in 0..d {
                    disp[j] += increments[k * d + j];
                    y[j] = x[j] + disp[j];
                }
                let inner = est.level(
                    n - 1,
                    &rhs_key.extend(&[1, k as i64 + 1]),
                    t,
                    &y,
                    &mut scratch,
                )?;
                let wf = w * problem.f(t, &y, inner[0], &inner[1..]);
                diff[0] -= wf;
                for j in 0..d {
                    diff[1 + j] -= wf * disp[j] / (t - s);
                }
            }
            Ok(diff)
        })
        .collect::<Result<_>>()?;

    let rf = reps as f64;
    let mut residual = vec![0.0; d + 1];
    let mut radius = vec![0.0; d + 1];
    for nu in 0..=d {
        let mean = diffs.iter().map(|v| v[nu]).sum::<f64>() / rf;
        let var = diffs.iter().map(|v| (v[nu] - mean).powi(2)).sum::<f64>() / (rf - 1.0);
        residual[nu] = mean;
        radius[nu] = 4.0 * (var / rf).sqrt();
    }
    Ok(FkResidual {
        residual,
        radius,
        replications: reps,
    })
}
