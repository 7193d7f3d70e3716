//! Test problems with closed-form solutions.
//!
//! A [`Problem`] bundles the horizon, the dimension, the terminal condition
//! `g`, the pointwise nonlinearity `f(t, x, w, z)` (with `w = u(t, x)` and
//! `z = ∇u(t, x)`), their Lipschitz vectors and, when known, the exact
//! solution together with its gradient.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::analysis::BoundInputs;
use crate::error::{Error, Result};

pub type Terminal = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type Nonlinearity = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x) ↦ (u, ∇u)`.
pub type ExactSolution = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Suprema that enter the global error bound, known in closed form.
#[derive(Clone)]
pub struct AnalyticConstants {
    /// sup |f(t, z, 0, 0)|
    pub sup_f0: f64,
    /// sup ‖(u, ∇u)‖_∞
    pub sup_u: f64,
    /// α ↦ sup_k ‖(1,∇)((∂_t + ½Δ)^k u)‖_∞ / (k!)^{1−α}
    pub deriv_ratio: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub horizon: f64,
    pub dim: usize,
    pub terminal: Terminal,
    pub nonlinearity: Nonlinearity,
    /// `L ∈ R^{d+1}`: Lipschitz weights of `f` in `(w, z₁, …, z_d)`.
    pub lip_f: Vec<f64>,
    /// `K ∈ R^d`: Lipschitz weights of `g`.
    pub lip_g: Vec<f64>,
    pub exact: Option<ExactSolution>,
    /// Half-width of the cube `‖x‖_∞ ≤ R` on which `lip_g` is valid, if the
    /// terminal condition is only locally Lipschitz.
    pub eval_box: Option<f64>,
    pub constants: Option<AnalyticConstants>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("dim", &self.dim)
            .field("lip_f", &self.lip_f)
            .field("lip_g", &self.lip_g)
            .field("eval_box", &self.eval_box)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl Problem {
    pub fn g(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn f(&self, t: f64, x: &[f64], w: f64, z: &[f64]) -> f64 {
        (self.nonlinearity)(t, x, w, z)
    }

    pub fn lip_f_l1(&self) -> f64 {
        self.lip_f.iter().sum()
    }

    pub fn lip_g_l1(&self) -> f64 {
        self.lip_g.iter().sum()
    }

    /// Constants for the global error bound at smoothness split α.
    pub fn bound_inputs(&self, t0: f64, alpha: f64) -> Result<BoundInputs> {
        let c = self
            .constants
            .as_ref()
            .ok_or_else(|| Error::Unavailable(self.name.clone(), "analytic bound constants"))?;
        Ok(BoundInputs {
            horizon: self.horizon,
            t0,
            lip_f_l1: self.lip_f_l1(),
            lip_g_l1: self.lip_g_l1(),
            sup_f0: c.sup_f0,
            sup_u: c.sup_u,
            deriv_ratio: (c.deriv_ratio)(alpha),
        })
    }
}

/// Finite-difference consistency of an exact solution at one point.
#[derive(Debug, Clone, Copy)]
pub struct ExactCheck {
    /// `|∂_t u + ½Δu + f(t, x, u, ∇u)|`
    pub pde_residual: f64,
    /// `max_i |∂_i u − (∇u)_i|` with `∂_i u` from central differences.
    pub gradient_mismatch: f64,
}

/// Central-difference check of `problem.exact` at `(t, x)` with step `h`.
///
/// The Laplacian is obtained by differencing the exact gradient, which keeps
/// round-off at `O(ε/h)` instead of `O(ε/h²)`.
pub fn check_exact(problem: &Problem, t: f64, x: &[f64], h: f64) -> Result<ExactCheck> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Unavailable(problem.name.clone(), "an exact solution"))?;
    let d = problem.dim;
    let centre = exact(t, x);
    let dt = (exact(t + h, x)[0] - exact(t - h, x)[0]) / (2.0 * h);
    let mut laplacian = 0.0;
    let mut mismatch: f64 = 0.0;
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    for i in 0..d {
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        let (up, um) = (exact(t, &xp), exact(t, &xm));
        laplacian += (up[1 + i] - um[1 + i]) / (2.0 * h);
        mismatch = mismatch.max(((up[0] - um[0]) / (2.0 * h) - centre[1 + i]).abs());
        xp[i] = x[i];
        xm[i] = x[i];
    }
    let f = problem.f(t, x, centre[0], &centre[1..]);
    Ok(ExactCheck {
        pde_residual: (dt + 0.5 * laplacian + f).abs(),
        gradient_mismatch: mismatch,
    })
}

/// `f ≡ 0`, `g(x) = ‖x‖²`, exact solution `‖x‖² + d(T − t)` with gradient
/// `2x`. `g` is Lipschitz only on the cube `‖x‖_∞ ≤ half_width`, where
/// `K_α = 2 · half_width`.
pub fn heat_quadratic(dim: usize, horizon: f64, half_width: f64) -> Result<Problem> {
    check_common(dim, horizon)?;
    if !(half_width > 0.0) {
        return Err(Error::Config(format!(
            "box half-width must be > 0, got {half_width}"
        )));
    }
    let d = dim as f64;
    Ok(Problem {
        name: "heat_quadratic".into(),
        horizon,
        dim,
        terminal: Arc::new(|x: &[f64]| x.iter().map(|v| v * v).sum()),
        nonlinearity: Arc::new(|_, _, _, _| 0.0),
        lip_f: vec![0.0; dim + 1],
        lip_g: vec![2.0 * half_width; dim],
        exact: Some(Arc::new(move |t: f64, x: &[f64]| {
            let mut out = Vec::with_capacity(x.len() + 1);
            out.push(x.iter().map(|v| v * v).sum::<f64>() + d * (horizon - t));
            out.extend(x.iter().map(|v| 2.0 * v));
            out
        })),
        eval_box: Some(half_width),
        constants: None,
    })
}

/// Manufactured solution `u(t, x) = sin(t + c Σ x_i)` with
/// `f(t, x, w, z) = h(t, x) + β sin(w) + γ sin(z₁)`, where `h` is chosen so
/// that `u` solves the equation exactly:
///
/// ```text
/// h = −cos φ + (d c²/2) sin φ − β sin(sin φ) − γ sin(c cos φ),  φ = t + c Σ x_i
/// ```
pub fn manufactured_sine(
    dim: usize,
    horizon: f64,
    c: f64,
    beta: f64,
    gamma: f64,
) -> Result<Problem> {
    check_common(dim, horizon)?;
    for (name, v) in [("c", c), ("beta", beta), ("gamma", gamma)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Config(format!(
                "{name} must be finite and ≥ 0, got {v}"
            )));
        }
    }
    let half_lap = dim as f64 * c * c / 2.0;
    let source = move |phi: f64| {
        -phi.cos() + half_lap * phi.sin() - beta * phi.sin().sin() - gamma * (c * phi.cos()).sin()
    };
    let phase = move |t: f64, x: &[f64]| t + c * x.iter().sum::<f64>();

    let mut lip_f = vec![0.0; dim + 1];
    lip_f[0] = beta;
    lip_f[1] = gamma;

    // sup |h| by a grid over one period plus the Lipschitz slack of h
    let grid = 100_000;
    let step = 2.0 * PI / grid as f64;
    let slope = 1.0 + half_lap + beta + gamma * c;
    let sup_f0 = (0..=grid)
        .map(|i| source(i as f64 * step).abs())
        .fold(0.0, f64::max)
        + slope * step / 2.0;

    let deriv_ratio = move |alpha: f64| sine_deriv_ratio(half_lap, c, alpha);

    Ok(Problem {
        name: "manufactured_sine".into(),
        horizon,
        dim,
        terminal: Arc::new(move |x: &[f64]| phase(horizon, x).sin()),
        nonlinearity: Arc::new(move |t, x, w, z| {
            source(phase(t, x)) + beta * w.sin() + gamma * z[0].sin()
        }),
        lip_f,
        lip_g: vec![c; dim],
        exact: Some(Arc::new(move |t: f64, x: &[f64]| {
            let phi = phase(t, x);
            let mut out = Vec::with_capacity(x.len() + 1);
            out.push(phi.sin());
            out.extend(std::iter::repeat_n(c * phi.cos(), x.len()));
            out
        })),
        eval_box: None,
        constants: Some(AnalyticConstants {
            sup_f0,
            sup_u: c.max(1.0),
            deriv_ratio: Arc::new(deriv_ratio),
        }),
    })
}

/// Number of generator powers scanned by [`sine_deriv_ratio`].
pub const DERIV_RATIO_TERMS: u32 = 200;

/// `max_{k ≤ 200} ‖(1,∇)((∂_t + ½Δ)^k sin φ)‖_∞ / (k!)^{1−α}`.
///
/// The generator maps `a sin φ + b cos φ` to
/// `(−λa − b) sin φ + (a − λb) cos φ` with `λ = d c²/2`; the sup norm of the
/// iterate is its amplitude `√(a² + b²)` and the gradient multiplies it by `c`.
pub fn sine_deriv_ratio(half_lap: f64, c: f64, alpha: f64) -> f64 {
    let (mut a, mut b) = (1.0f64, 0.0f64);
    let mut log_fact = 0.0;
    let mut best: f64 = 0.0;
    for k in 0..=DERIV_RATIO_TERMS {
        if k > 0 {
            (a, b) = (-half_lap * a - b, a - half_lap * b);
            log_fact += (k as f64).ln();
        }
        let amp = a.hypot(b) * c.max(1.0);
        best = best.max(amp * (-(1.0 - alpha) * log_fact).exp());
    }
    best
}

fn check_common(dim: usize, horizon: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!(
            "horizon must be finite and > 0, got {horizon}"
        )));
    }
    Ok(())
}

/// A named problem with parameter overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

pub const PROBLEM_NAMES: [&str; 2] = ["heat_quadratic", "manufactured_sine"];

impl ProblemSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Builds the problem in dimension `dim`.
    ///
    /// Parameters: `T` (default 1) for both; `box` (default 10) for
    /// `heat_quadratic`; `c` (default 1/d), `beta` and `gamma` (default ½) for
    /// `manufactured_sine`.
    pub fn build(&self, dim: usize) -> Result<Problem> {
        let allowed: &[&str] = match self.name.as_str() {
            "heat_quadratic" => &["T", "box"],
            "manufactured_sine" => &["T", "c", "beta", "gamma"],
            other => {
                return Err(Error::Config(format!(
                    "unknown problem `{other}`; expected one of {PROBLEM_NAMES:?}"
                )))
            }
        };
        if let Some(bad) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "problem `{}` has no parameter `{bad}`; allowed: {allowed:?}",
                self.name
            )));
        }
        let get = |k: &str, default: f64| self.params.get(k).copied().unwrap_or(default);
        let horizon = get("T", 1.0);
        match self.name.as_str() {
            "heat_quadratic" => heat_quadratic(dim, horizon, get("box", 10.0)),
            _ => {
                let c = get("c", 1.0 / dim.max(1) as f64);
                manufactured_sine(dim, horizon, c, get("beta", 0.5), get("gamma", 0.5))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn heat_quadratic_examples() {
        let p = heat_quadratic(2, 1.0, 10.0).unwrap();
        let exact = p.exact.as_ref().unwrap();
        assert_eq!(exact(0.0, &[1.0, 1.0]), vec![4.0, 2.0, 2.0]);
        assert_eq!(exact(1.0, &[0.5, -3.0])[0], p.g(&[0.5, -3.0]));
        assert_eq!(p.lip_g, vec![20.0, 20.0]);
        assert!(p.bound_inputs(0.0, 0.25).is_err());
    }

    #[test]
    fn sine_terminal_matches_exact() {
        let p = manufactured_sine(3, 0.7, 0.4, 0.5, 0.5).unwrap();
        let exact = p.exact.as_ref().unwrap();
        let x = [0.1, -1.2, 2.0];
        assert_eq!(exact(0.7, &x)[0], p.g(&x));
    }

    #[test]
    fn sine_residual_vanishes_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (beta, gamma) in [(0.0, 0.0), (0.5, 0.5), (1.3, 0.2)] {
            let d = 3;
            let c = 0.6;
            let p = manufactured_sine(d, 1.0, c, beta, gamma).unwrap();
            let exact = p.exact.as_ref().unwrap();
            for _ in 0..1000 {
                let t: f64 = rng.gen_range(0.0..1.0);
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let phi = t + c * x.iter().sum::<f64>();
                let u = exact(t, &x);
                let residual =
                    phi.cos() - 0.5 * d as f64 * c * c * phi.sin() + p.f(t, &x, u[0], &u[1..]);
                assert!(residual.abs() <= 1e-12, "{residual}");
            }
        }
    }

    #[test]
    fn shipped_problems_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for name in PROBLEM_NAMES {
            for d in [1, 2, 5] {
                let p = ProblemSpec::new(name).build(d).unwrap();
                let half = p.eval_box.unwrap_or(2.0);
                for _ in 0..1000 {
                    let t = rng.gen_range(1e-3..p.horizon - 1e-3);
                    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-half..half)).collect();
                    let check = check_exact(&p, t, &x, 1e-4).unwrap();
                    assert!(check.pde_residual <= 1e-6, "{name} d={d}: {check:?}");
                    assert!(check.gradient_mismatch <= 1e-6, "{name} d={d}: {check:?}");
                }
            }
        }
    }

    #[test]
    fn lipschitz_spot_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for name in PROBLEM_NAMES {
            let d = 3;
            let p = ProblemSpec::new(name).build(d).unwrap();
            let half = p.eval_box.unwrap_or(5.0);
            for _ in 0..10_000 {
                let t = rng.gen_range(0.0..p.horizon);
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-half..half)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-half..half)).collect();
                let lip_g: f64 = p
                    .lip_g
                    .iter()
                    .zip(x.iter().zip(&y))
                    .map(|(k, (a, b))| k * (a - b).abs())
                    .sum();
                assert!((p.g(&x) - p.g(&y)).abs() <= lip_g + 1e-12);

                let (w1, w2): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                let z1: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let z2: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let lip_f = p.lip_f[0] * (w1 - w2).abs()
                    + p.lip_f[1..]
                        .iter()
                        .zip(z1.iter().zip(&z2))
                        .map(|(l, (a, b))| l * (a - b).abs())
                        .sum::<f64>();
                assert!((p.f(t, &x, w1, &z1) - p.f(t, &x, w2, &z2)).abs() <= lip_f + 1e-12);
            }
        }
    }

    #[test]
    fn sine_constants() {
        let d = 2;
        let c = 0.5;
        let p = manufactured_sine(d, 1.0, c, 0.5, 0.5).unwrap();
        let consts = p.constants.as_ref().unwrap();
        assert_eq!(consts.sup_u, 1.0);
        assert_eq!(p.lip_f_l1(), 1.0);
        assert_abs_diff_eq!(p.lip_g_l1(), 1.0);
        // sup |h| bracketed by a dense independent scan
        let half_lap = d as f64 * c * c / 2.0;
        let scan = (0..1_000_000)
            .map(|i| {
                let phi = i as f64 * 2.0 * PI / 1e6;
                (-phi.cos() + half_lap * phi.sin()
                    - 0.5 * phi.sin().sin()
                    - 0.5 * (c * phi.cos()).sin())
                .abs()
            })
            .fold(0.0, f64::max);
        assert!(consts.sup_f0 >= scan && consts.sup_f0 <= scan + 1e-3);
    }

    #[test]
    fn sine_deriv_ratio_against_closed_forms() {
        for (d, c) in [(1usize, 1.0f64), (2, 0.5), (4, 0.25), (3, 2.0)] {
            let lam = d as f64 * c * c / 2.0;
            let ratio = sine_deriv_ratio(lam, c, 0.25);
            // iterate amplitude is exactly (1 + λ²)^{k/2}
            let exact = (0..=DERIV_RATIO_TERMS)
                .map(|k| {
                    let lf: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
                    (0.5 * k as f64 * (1.0 + lam * lam).ln() - 0.75 * lf).exp() * c.max(1.0)
                })
                .fold(0.0, f64::max);
            assert!((ratio - exact).abs() <= 1e-12 * exact);
            // cruder growth estimate (1 + dc²/2)^k (1 + cd) dominates
            let crude = (0..=DERIV_RATIO_TERMS)
                .map(|k| {
                    let lf: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
                    (k as f64 * (1.0 + lam).ln() - 0.75 * lf).exp() * (1.0 + c * d as f64)
                })
                .fold(0.0, f64::max);
            assert!(ratio <= crude);
        }
    }

    #[test]
    fn spec_parsing() {
        let p = ProblemSpec::new("manufactured_sine").build(4).unwrap();
        assert_eq!(p.lip_g, vec![0.25; 4]);
        assert!(ProblemSpec::new("nope").build(1).is_err());
        assert!(ProblemSpec::new("heat_quadratic")
            .with("c", 1.0)
            .build(1)
            .is_err());
        assert!(ProblemSpec::new("heat_quadratic")
            .with("T", -1.0)
            .build(1)
            .is_err());
        assert!(ProblemSpec::new("manufactured_sine").build(0).is_err());
    }
}
