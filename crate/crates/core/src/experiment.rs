//! Convergence tables and the self-check report.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Serialize, Serializer};

use crate::analysis::{
    binomial, bound_nmq, bound_nnn, cost_fe_exact, cost_rn_exact, iterated_gl_upper_bound,
    log_gamma, norm_log_subadditivity_check, Norm,
};
use crate::error::{Error, Result};
use crate::estimator::{l2_error_with, CostCounters, Estimator, Guards};
use crate::problems::{check_exact, ProblemSpec};
use crate::quadrature::{
    build_rule, integrate, iterated_gl_lhs_with, iterated_gl_rhs_with, MAX_ITERATED_ORDER,
};
use crate::randomness::MultiIndex;

/// Where the solution is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum PointSpec {
    Explicit(Vec<f64>),
    /// Uniform in the problem's evaluation box (`[−1, 1]^d` if it has none),
    /// drawn from the experiment seed.
    RandomInBox,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevelSpec {
    /// `n = M = Q` for `n = 1..=N`.
    Diagonal(u32),
    /// Explicit `(n, M, Q)` triples.
    List(Vec<(u32, u32, usize)>),
}

impl LevelSpec {
    pub fn triples(&self) -> Vec<(u32, u32, usize)> {
        match self {
            LevelSpec::Diagonal(top) => (1..=*top).map(|n| (n, n, n as usize)).collect(),
            LevelSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!(
                "unknown format `{other}`; expected csv or json"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub dim: usize,
    pub point: PointSpec,
    pub t0: f64,
    pub levels: LevelSpec,
    pub replications: usize,
    pub seed: u64,
    /// Worker threads for the replication loop; `None` uses the global pool.
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    /// When false, `wall_ms` is written as 0 so repeated runs produce
    /// identical files.
    pub record_wall_time: bool,
    pub guards: Guards,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, dim: usize, levels: LevelSpec) -> Self {
        Self {
            problem,
            dim,
            point: PointSpec::RandomInBox,
            t0: 0.0,
            levels,
            replications: 100,
            seed: 0,
            threads: None,
            output: None,
            format: OutputFormat::Csv,
            record_wall_time: true,
            guards: Guards::default(),
        }
    }
}

/// Column names, in output order.
pub const COLUMNS: [&str; 13] = [
    "n",
    "M",
    "Q",
    "rn_pred",
    "fe_pred",
    "rn_obs",
    "fe_obs",
    "wall_ms",
    "err_value",
    "se_value",
    "err_grad",
    "se_grad",
    "bound",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: u32,
    #[serde(rename = "M")]
    pub m: u32,
    #[serde(rename = "Q")]
    pub q: usize,
    pub rn_pred: u64,
    pub fe_pred: u64,
    /// Largest per-replication count observed.
    pub rn_obs: u64,
    pub fe_obs: u64,
    pub wall_ms: u64,
    pub err_value: f64,
    pub se_value: f64,
    pub err_grad: f64,
    pub se_grad: f64,
    #[serde(serialize_with = "bound_or_na")]
    pub bound: Option<f64>,
}

fn bound_or_na<S: Serializer>(b: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match b {
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_str("n/a"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub point: Vec<f64>,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn write_to<W: Write>(&self, format: OutputFormat, out: W) -> Result<()> {
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(out);
                for row in &self.rows {
                    w.serialize(row)?;
                }
                if self.rows.is_empty() {
                    w.write_record(COLUMNS)?;
                }
                w.flush()?;
            }
            OutputFormat::Json => {
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, &self.rows)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(format, &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv and json output are UTF-8"))
    }
}

fn uniform(seed: u64, label: i64) -> f64 {
    let bits = (MultiIndex::from_labels(&[-1, label]).digest(seed) >> 75) as u64;
    (bits as f64 + 0.5) * 2f64.powi(-53)
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn to_u64(v: u128, what: &'static str) -> Result<u64> {
    u64::try_from(v).map_err(|_| Error::Overflow(what))
}

/// Runs the study described by `config` and returns one row per level.
///
/// Everything except `wall_ms` is a function of the config alone; the thread
/// count does not affect the result. Does not write `config.output`.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceTable> {
    let problem = config.problem.build(config.dim)?;
    if !(config.t0 >= 0.0 && config.t0 < problem.horizon) {
        return Err(config_err(format!(
            "need 0 ≤ t0 < T = {}, got {}",
            problem.horizon, config.t0
        )));
    }
    if config.replications < 2 {
        return Err(config_err(format!(
            "need at least 2 replications, got {}",
            config.replications
        )));
    }
    if problem.exact.is_none() {
        return Err(config_err(format!(
            "problem `{}` has no exact solution",
            problem.name
        )));
    }
    let levels = config.levels.triples();
    if levels.is_empty() {
        return Err(config_err("no levels requested"));
    }
    for &(n, m, q) in &levels {
        if n == 0 || m == 0 || q == 0 {
            return Err(config_err(format!(
                "level ({n}, {m}, {q}) needs n, M, Q ≥ 1"
            )));
        }
        config.guards.check(n, m, q, config.dim)?;
    }
    let point = match &config.point {
        PointSpec::Explicit(x) => {
            if x.len() != config.dim {
                return Err(config_err(format!(
                    "--x has {} entries, dimension is {}",
                    x.len(),
                    config.dim
                )));
            }
            x.clone()
        }
        PointSpec::RandomInBox => {
            let half = problem.eval_box.unwrap_or(1.0);
            (0..config.dim)
                .map(|j| half * (2.0 * uniform(config.seed, j as i64) - 1.0))
                .collect()
        }
    };

    let pool = match config.threads {
        Some(0) => return Err(config_err("thread count must be at least 1")),
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| config_err(format!("cannot start thread pool: {e}")))?,
        ),
        None => None,
    };
    let bound_inputs = problem.bound_inputs(config.t0, 0.25).ok();

    let mut rows = Vec::with_capacity(levels.len());
    for (n, m, q) in levels {
        let estimator = Estimator::new(&problem, m, q, config.seed)?.with_guards(config.guards);
        let started = Instant::now();
        let report = match &pool {
            Some(p) => {
                p.install(|| l2_error_with(&estimator, n, config.t0, &point, config.replications))?
            }
            None => l2_error_with(&estimator, n, config.t0, &point, config.replications)?,
        };
        let elapsed = started.elapsed().as_millis() as u64;
        let bound = bound_inputs.as_ref().and_then(|b| {
            let v = if n == m && m as usize == q {
                bound_nnn(b, n)
            } else {
                bound_nmq(b, n, m, q as u32, 0.25)
            };
            v.ok().filter(|v| v.is_finite())
        });
        let per_rep: CostCounters = report.max_counters;
        rows.push(ConvergenceRow {
            n,
            m,
            q,
            rn_pred: to_u64(
                cost_rn_exact(n, m as u64, q as u64, config.dim as u64)?,
                "rn_pred",
            )?,
            fe_pred: to_u64(cost_fe_exact(n, m as u64, q as u64)?, "fe_pred")?,
            rn_obs: per_rep.gaussians_drawn,
            fe_obs: per_rep.function_evals(),
            wall_ms: if config.record_wall_time { elapsed } else { 0 },
            err_value: report.value.rms,
            se_value: report.value.se,
            err_grad: report.gradient_sup.rms,
            se_grad: report.gradient_sup.se,
            bound,
        });
    }
    Ok(ConvergenceTable { point, rows })
}

/// Cases evaluated by [`run_selfcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckGrid {
    /// Quadrature orders for exactness and the iterated identity (the latter
    /// only up to order 10).
    pub orders: Vec<usize>,
    /// Nesting depths for the iterated identity and its upper bound.
    pub depths: Vec<usize>,
    /// `(t0, T)` pairs.
    pub intervals: Vec<(f64, f64)>,
    /// Exponents `j` for the fractional-moment bound.
    pub moments: Vec<u32>,
    /// `N` values for the diagonal cost bound; values ≤ 3 also drive the
    /// instrumented counter comparison.
    pub cost_levels: Vec<u32>,
    pub dims: Vec<usize>,
    /// Random points per problem and dimension for the PDE residual.
    pub residual_points: usize,
}

impl Default for CheckGrid {
    fn default() -> Self {
        Self {
            orders: (1..=10).collect(),
            depths: (1..=5).collect(),
            intervals: vec![(0.0, 1.0), (0.25, 2.0), (1.5, 3.5), (0.0, 10.0), (2.0, 2.5)],
            moments: (0..=12).collect(),
            cost_levels: (1..=8).collect(),
            dims: vec![1, 2, 3, 5],
            residual_points: 20,
        }
    }
}

impl CheckGrid {
    pub fn empty() -> Self {
        Self {
            orders: vec![],
            depths: vec![],
            intervals: vec![],
            moments: vec![],
            cost_levels: vec![],
            dims: vec![],
            residual_points: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Scale the first weight of the rule used on the left of the iterated
    /// identity by `1 + relative`.
    PerturbWeight { relative: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: Option<String>,
}

impl CheckEntry {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            detail: None,
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(detail());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub entries: Vec<CheckEntry>,
    pub warnings: Vec<String>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(CheckEntry::passed)
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let status = if e.passed() { "PASS" } else { "FAIL" };
            write!(
                f,
                "{status} {} ({} cases, {} failed)",
                e.name, e.cases, e.failures
            )?;
            if let Some(d) = &e.detail {
                write!(f, ": {d}")?;
            }
            writeln!(f)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        write!(
            f,
            "{}",
            if self.passed() {
                "selfcheck passed"
            } else {
                "selfcheck FAILED"
            }
        )
    }
}

/// Deterministic points for the checks, uniform in `[lo, hi)`.
struct Points {
    seed: u64,
    next: i64,
}

impl Points {
    fn new(seed: u64) -> Self {
        Self { seed, next: 0 }
    }

    fn draw(&mut self, lo: f64, hi: f64) -> f64 {
        self.next += 1;
        lo + (hi - lo) * uniform(self.seed, self.next)
    }
}

/// Identities and bounds of the quadrature and cost analysis plus residual
/// checks of the built-in problems. Failures are report entries, not errors.
pub fn run_selfcheck(grid: &CheckGrid, fault: Option<Fault>) -> SelfCheckReport {
    let mut points = Points::new(0x5e1f_c4ec);
    let mut entries = Vec::new();

    let mut exact = CheckEntry::new("quadrature exactness");
    for &q in &grid.orders {
        let Ok(rule) = build_rule(q) else {
            exact.record(false, || format!("order {q} rejected"));
            continue;
        };
        for &(a, b) in &grid.intervals {
            for degree in 0..2 * q {
                let p = degree as i32;
                let got = integrate(&rule, a, b, |t| t.powi(p)).unwrap_or(f64::NAN);
                let want = (b.powi(p + 1) - a.powi(p + 1)) / (p + 1) as f64;
                let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
                exact.record(rel <= 1e-11, || {
                    format!("Q = {q}, degree {degree} on [{a}, {b}]: rel. error {rel:e}")
                });
            }
        }
    }
    entries.push(exact);

    let mut identity = CheckEntry::new("iterated quadrature identity");
    let mut upper = CheckEntry::new("iterated quadrature upper bound");
    for &q in grid.orders.iter().filter(|&&q| q <= MAX_ITERATED_ORDER) {
        let Ok(rule) = build_rule(q) else { continue };
        let lhs_rule = match fault {
            Some(Fault::PerturbWeight { relative }) => rule.with_perturbed_weight(0, relative),
            None => rule.clone(),
        };
        for &k in &grid.depths {
            for &(t0, horizon) in &grid.intervals {
                let lhs = iterated_gl_lhs_with(&lhs_rule, k, t0, horizon);
                let rhs = iterated_gl_rhs_with(&rule, k, t0, horizon);
                let tol = 1e-10 * (1.0 + rhs.abs());
                identity.record((lhs - rhs).abs() <= tol, || {
                    format!(
                        "Q = {q}, k = {k}, [{t0}, {horizon}]: |lhs − rhs| = {:e}",
                        (lhs - rhs).abs()
                    )
                });
                let ub = iterated_gl_upper_bound(k as u32, horizon - t0).unwrap_or(f64::NAN);
                upper.record(lhs <= ub, || {
                    format!("Q = {q}, k = {k}, [{t0}, {horizon}]: {lhs} > {ub}")
                });
            }
        }
    }
    entries.push(identity);
    entries.push(upper);

    let mut moments = CheckEntry::new("fractional moment bound");
    for &q in &grid.orders {
        let Ok(rule) = build_rule(q) else { continue };
        for &j in &grid.moments {
            let sum = rule.root_weighted_moment(j as f64);
            let jf = j as f64;
            let bound = (log_gamma(0.5).unwrap_or(f64::NAN)
                + log_gamma(jf + 1.0).unwrap_or(f64::NAN)
                - log_gamma(jf + 1.5).unwrap_or(f64::NAN))
            .exp();
            moments.record(sum <= bound, || {
                format!("Q = {q}, j = {j}: {sum} > {bound}")
            });
        }
    }
    entries.push(moments);

    let mut chains = CheckEntry::new("iterated sums count");
    for &top in &grid.cost_levels {
        let n = top.min(12);
        for l0 in 0..n {
            let mut counts = vec![0u128; n as usize];
            // subsets of {l0+1, …, n−1} by size
            let free = n - l0 - 1;
            for mask in 0u32..(1 << free) {
                counts[mask.count_ones() as usize] += 1;
            }
            for j in 0..n - l0 {
                let want = binomial((n - l0 - 1) as u64, j as u64).unwrap_or(0);
                chains.record(counts[j as usize] == want, || {
                    format!("n = {n}, l0 = {l0}, j = {j}")
                });
            }
        }
    }
    entries.push(chains);

    let mut subadd = CheckEntry::new("norm log-subadditivity");
    for &d in &grid.dims {
        for p in 1..=4u32 {
            for norm in [Norm::L1, Norm::L2, Norm::Max] {
                let x: Vec<f64> = (0..d).map(|_| points.draw(-5.0, 5.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| points.draw(-5.0, 5.0)).collect();
                let ok = norm_log_subadditivity_check(norm, p, &x, &y).unwrap_or(false);
                subadd.record(ok, || format!("{norm:?}, p = {p}, x = {x:?}, y = {y:?}"));
            }
        }
    }
    entries.push(subadd);

    let mut diag = CheckEntry::new("diagonal cost bound");
    for &top in &grid.cost_levels {
        for &d in &grid.dims {
            let n = top as u64;
            let rn = cost_rn_exact(top, n, n, d as u64);
            let limit = (n as u128).checked_pow(2 * top).map(|p| 8 * d as u128 * p);
            let ok = matches!((&rn, limit), (Ok(r), Some(l)) if *r <= l);
            diag.record(ok, || {
                format!("N = {top}, d = {d}: RN = {rn:?}, 8dN^(2N) = {limit:?}")
            });
        }
    }
    entries.push(diag);

    let mut counters = CheckEntry::new("instrumented cost counters");
    let small: Vec<u32> = grid
        .cost_levels
        .iter()
        .copied()
        .filter(|&n| n <= 3)
        .collect();
    for &d in grid.dims.iter().filter(|&&d| d <= 3) {
        let Ok(problem) = ProblemSpec::new("manufactured_sine").build(d) else {
            continue;
        };
        for &n in &small {
            for &m in &small {
                for &q in &small {
                    let mut c = CostCounters::default();
                    let x = vec![0.1; d];
                    let run = Estimator::new(&problem, m, q as usize, 0)
                        .and_then(|e| e.estimate(n, &MultiIndex::root(), 0.0, &x, &mut c));
                    let rn = cost_rn_exact(n, m as u64, q as u64, d as u64).ok();
                    let fe = cost_fe_exact(n, m as u64, q as u64).ok();
                    let ok = run.is_ok()
                        && rn == Some(c.gaussians_drawn as u128)
                        && fe == Some(c.function_evals() as u128);
                    counters.record(ok, || {
                        format!(
                            "(n, M, Q, d) = ({n}, {m}, {q}, {d}): {c:?} vs RN {rn:?}, FE {fe:?}"
                        )
                    });
                }
            }
        }
    }
    entries.push(counters);

    let mut residual = CheckEntry::new("problem PDE residuals");
    for name in ["heat_quadratic", "manufactured_sine"] {
        for &d in &grid.dims {
            let Ok(problem) = ProblemSpec::new(name).build(d) else {
                residual.record(false, || format!("{name} in dimension {d} failed to build"));
                continue;
            };
            let half = problem.eval_box.unwrap_or(3.0);
            for _ in 0..grid.residual_points {
                let t = points.draw(0.05, problem.horizon - 0.05);
                let x: Vec<f64> = (0..d).map(|_| points.draw(-half, half)).collect();
                let check = check_exact(&problem, t, &x, 1e-4);
                let ok = matches!(&check, Ok(c) if c.pde_residual <= 1e-6 && c.gradient_mismatch <= 1e-6);
                residual.record(ok, || format!("{name}, d = {d}, t = {t}: {check:?}"));
            }
        }
    }
    entries.push(residual);

    let mut warnings = Vec::new();
    let total: usize = entries.iter().map(|e| e.cases).sum();
    if total == 0 {
        warnings.push("the check grid is empty; nothing was checked".to_string());
    } else {
        for e in entries.iter().filter(|e| e.cases == 0) {
            warnings.push(format!("`{}` ran no cases", e.name));
        }
    }
    SelfCheckReport { entries, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            ProblemSpec::new("manufactured_sine"),
            2,
            LevelSpec::Diagonal(2),
        );
        c.replications = 20;
        c.seed = 11;
        c.record_wall_time = false;
        c
    }

    #[test]
    fn rows_have_matching_costs() {
        let table = run_convergence(&small_config()).unwrap();
        assert_eq!(table.rows.len(), 2);
        for r in &table.rows {
            assert_eq!(r.rn_pred, r.rn_obs);
            assert_eq!(r.fe_pred, r.fe_obs);
            assert_eq!(r.wall_ms, 0);
            assert!(r.err_value.is_finite() && r.se_value >= 0.0);
        }
        assert!(table.rows[0].bound.is_none());
        assert!(table.rows[1].bound.unwrap() > 0.0);
    }

    #[test]
    fn csv_and_json_share_columns() {
        let table = run_convergence(&small_config()).unwrap();
        let csv = table.render(OutputFormat::Csv).unwrap();
        assert_eq!(csv.lines().next().unwrap(), COLUMNS.join(","));
        assert!(csv.lines().nth(1).unwrap().ends_with(",n/a"));
        let json: serde_json::Value =
            serde_json::from_str(&table.render(OutputFormat::Json).unwrap()).unwrap();
        let first = json[0].as_object().unwrap();
        assert_eq!(first.len(), COLUMNS.len());
        assert!(COLUMNS.iter().all(|c| first.contains_key(*c)));
        assert_eq!(first["bound"], "n/a");
    }

    #[test]
    fn heat_rows_have_no_bound() {
        let mut c = small_config();
        c.problem = ProblemSpec::new("heat_quadratic");
        c.levels = LevelSpec::List(vec![(2, 2, 2)]);
        let table = run_convergence(&c).unwrap();
        assert!(table.rows[0].bound.is_none());
        assert!(table.point.iter().all(|v| v.abs() <= 10.0));
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.replications = 1;
        assert!(matches!(run_convergence(&c), Err(Error::Config(_))));
        let mut c = small_config();
        c.t0 = 1.0;
        assert!(matches!(run_convergence(&c), Err(Error::Config(_))));
        let mut c = small_config();
        c.point = PointSpec::Explicit(vec![0.0]);
        assert!(matches!(run_convergence(&c), Err(Error::Config(_))));
        let mut c = small_config();
        c.levels = LevelSpec::List(vec![]);
        assert!(matches!(run_convergence(&c), Err(Error::Config(_))));
        let mut c = small_config();
        c.levels = LevelSpec::Diagonal(7);
        assert!(matches!(run_convergence(&c), Err(Error::Budget { .. })));
        let mut c = small_config();
        c.threads = Some(0);
        assert!(matches!(run_convergence(&c), Err(Error::Config(_))));
    }

    #[test]
    fn selfcheck_passes_and_detects_fault() {
        let report = run_selfcheck(&CheckGrid::default(), None);
        assert!(report.passed(), "{report}");
        assert!(report.warnings.is_empty());
        let faulty = run_selfcheck(
            &CheckGrid::default(),
            Some(Fault::PerturbWeight { relative: 1e-6 }),
        );
        assert!(!faulty.passed());
        let failed: Vec<_> = faulty
            .entries
            .iter()
            .filter(|e| !e.passed())
            .map(|e| e.name)
            .collect();
        assert_eq!(failed, ["iterated quadrature identity"]);
    }

    #[test]
    fn empty_grid_passes_with_warning() {
        let report = run_selfcheck(&CheckGrid::empty(), None);
        assert!(report.passed());
        assert_eq!(report.warnings.len(), 1);
        assert!(report.to_string().contains("warning"));
    }
}
