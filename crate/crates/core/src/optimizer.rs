//! Plain, accelerated, and weight-clipped preconditioned SGD loops.
//!
//! All four variants share one preconditioner update; they differ in where
//! the gradient is taken and how the output is averaged:
//!
//! * plain: gradient at `x_k`, output `x̄_K = (1/(K+1)) Σ_{k≤K} x_k`;
//! * accelerated: gradient of `f_k(x) = α_k^{-2} f(α_k x + (1−α_k) x̄_k)` at
//!   `x_k` with `α_k = 2/(k+2)`, output `x̄_{K+1}` from
//!   `x̄_{k+1} = α_k x_{k+1} + (1−α_k) x̄_k`;
//! * clipped variants project the step onto `Q_R = {x : R(x) ≤ R}` and the
//!   accelerated one averages the unprojected point `x_{k+1/2}`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::precond::{loewner_excess, PrecondState, DEFAULT_DELTA};
use crate::rng::seeded;
use crate::space::{Point, Space, SpaceElement, SpaceKind};
use crate::testbed::ProblemSpec;

/// Absolute tolerance on `λ_max(H_{k+1} − H_k)`.
pub const LOEWNER_TOL: f64 = 1e-10;
/// Absolute tolerance on `R(x_k) ≤ R` for clipped runs.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Plain,
    Accelerated,
    PlainClipped,
    AccelClipped,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Plain,
        Algorithm::Accelerated,
        Algorithm::PlainClipped,
        Algorithm::AccelClipped,
    ];

    pub fn is_accelerated(self) -> bool {
        matches!(self, Algorithm::Accelerated | Algorithm::AccelClipped)
    }

    pub fn is_clipped(self) -> bool {
        matches!(self, Algorithm::PlainClipped | Algorithm::AccelClipped)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Plain => "plain",
            Algorithm::Accelerated => "accelerated",
            Algorithm::PlainClipped => "plain-clipped",
            Algorithm::AccelClipped => "accel-clipped",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// `K`; the loop runs `K + 1` iterations.
    pub iterations: usize,
    /// `R`: the distance bound, and the clipping radius for clipped runs.
    pub radius: f64,
    pub delta: f64,
    /// Overrides the default `η = R` (plain) or `η = 2R` (accelerated).
    pub eta: Option<f64>,
    pub seed: u64,
    pub stream: u64,
    pub audit: bool,
    /// `false` runs the memoryless (current-gradient-only) preconditioner.
    pub accumulate_history: bool,
    /// Starting point; the origin when absent.
    pub x0: Option<Point>,
    /// Keep every `x_k` (and `x_{K+1}`) in the trace.
    pub record_iterates: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, iterations: usize, radius: f64) -> Self {
        RunConfig {
            algorithm,
            iterations,
            radius,
            delta: DEFAULT_DELTA,
            eta: None,
            seed: 0,
            stream: 0,
            audit: true,
            accumulate_history: true,
            x0: None,
            record_iterates: false,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(if self.algorithm.is_accelerated() {
            2.0 * self.radius
        } else {
            self.radius
        })
    }
}

/// Iterate bookkeeping for one run.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub x: Point,
    pub x_bar: Point,
    pub k: usize,
    pub alpha: f64,
}

/// One row of a trace. Record `k` describes `x_k` and the output a run with
/// `K = k` would return.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `f(x̄) − f*` for the `K = k` output.
    pub suboptimality: f64,
    /// `R(x_k − x*)`.
    pub dist_to_opt: f64,
    /// `R(x_k)`.
    pub iterate_norm: f64,
    /// Absent in memoryless mode.
    pub ftl_btl_gap: Option<f64>,
    /// `λ_max(H_k − H_{k−1})`; absent at `k = 0`.
    pub loewner_excess: Option<f64>,
    /// `tr(H_k^{-1})`.
    pub trace_h_inv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariant {
    FtlBtl,
    Loewner,
    Feasibility,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invariant::FtlBtl => "ftl-btl",
            Invariant::Loewner => "loewner-monotonicity",
            Invariant::Feasibility => "clip-feasibility",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditFailure {
    pub invariant: Invariant,
    pub iteration: usize,
    /// The offending quantity, signed so that `value > limit` is a failure
    /// for Loewner/feasibility and `value < -limit` for FTL-BTL.
    pub value: f64,
    pub limit: f64,
}

impl fmt::Display for AuditFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at iteration {}: value {:.6e}, limit {:.6e}",
            self.invariant, self.iteration, self.value, self.limit
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub space: Space,
    pub eta: f64,
    pub delta: f64,
    pub radius: f64,
    pub deterministic: bool,
    pub records: Vec<IterationRecord>,
    /// `x_{K+1}`.
    pub final_iterate: Point,
    /// `x̄_K` (plain) or `x̄_{K+1}` (accelerated).
    pub output: Point,
    /// `x_0, …, x_{K+1}` when requested.
    pub iterates: Option<Vec<Point>>,
    pub audits_checked: usize,
    pub audit_failures: Vec<AuditFailure>,
    pub wall_time: Duration,
}

impl RunTrace {
    pub fn checkpoint(&self, k: usize) -> Option<&IterationRecord> {
        self.records.get(k)
    }

    pub fn max_dist_to_opt(&self) -> f64 {
        self.records.iter().map(|r| r.dist_to_opt).fold(0.0, f64::max)
    }
}

/// `x − H g`: the minimizer of `⟨g, x'⟩ + ½‖x' − x‖²_{H^{-1}}`.
pub fn step_plain(x: &Point, g: &Point, h: &SpaceElement) -> Result<Point> {
    h.space().check_point(x)?;
    Ok(x - h.apply(g)?)
}

/// Projection onto `Q_R = {x : R(x) ≤ R}` for diagonal-type spaces. The
/// space's preconditioners act the same way on the blocks the constraint
/// couples, so the weighted projection reduces to clipping:
/// coordinates for `Diagonal`, rows for `RowDiagonal` (radius `R√n`), and the
/// whole vector for `ScalarIdentity` (radius `R√d`).
pub fn project_qr(space: &Space, x: &Point, radius: f64) -> Result<Point> {
    space.check_point(x)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "clipping radius must be positive, got {radius}"
        )));
    }
    // A few ulps of slack keep the map idempotent: a rescaled block can land
    // one rounding step outside the ball.
    let shrink = |norm: f64, limit: f64| {
        if norm > limit * (1.0 + 4.0 * f64::EPSILON) {
            limit / norm
        } else {
            1.0
        }
    };
    match space.kind() {
        SpaceKind::Diagonal => Ok(x.map(|t| t.clamp(-radius, radius))),
        SpaceKind::RowDiagonal => {
            let limit = radius * (space.cols() as f64).sqrt();
            let mut out = x.clone();
            for mut row in out.row_iter_mut() {
                let s = shrink(row.norm(), limit);
                if s < 1.0 {
                    row *= s;
                }
            }
            Ok(out)
        }
        SpaceKind::ScalarIdentity => {
            let limit = radius * (space.rows() as f64).sqrt();
            let s = shrink(x.norm(), limit);
            Ok(if s < 1.0 { x * s } else { x.clone() })
        }
        SpaceKind::LeftMatrix => Err(Error::Unsupported(
            "projection onto Q_R is only implemented for diagonal-type spaces".into(),
        )),
    }
}

/// Stochastic gradient of `f_k(x) = α^{-2} f(α x + (1−α) x̄)` at `x`:
/// `(1/α) ∇f(y; ξ)` with `y = α x + (1−α) x̄`.
pub fn accel_gradient<R: Rng + ?Sized>(
    problem: &ProblemSpec,
    x: &Point,
    x_bar: &Point,
    alpha: f64,
    rng: &mut R,
) -> Result<Point> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "momentum weight must lie in (0, 1], got {alpha}"
        )));
    }
    let y = x * alpha + x_bar * (1.0 - alpha);
    Ok(problem.stochastic_gradient(&y, rng)? / alpha)
}

fn check_preconditions(problem: &ProblemSpec, config: &RunConfig, x0: &Point) -> Result<()> {
    let space = problem.space();
    if config.iterations < 1 {
        return Err(Error::InvalidParameter("iteration count K must be at least 1".into()));
    }
    if !(config.radius > 0.0 && config.radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {}",
            config.radius
        )));
    }
    space.check_point(x0)?;
    if config.algorithm.is_clipped() {
        if space.kind() == SpaceKind::LeftMatrix {
            return Err(Error::Unsupported(
                "weight clipping is not available for the left-matrix space".into(),
            ));
        }
        let r0 = space.norm(x0)?;
        if r0 > config.radius {
            return Err(Error::Contract(format!(
                "x0 must lie in Q_R: R(x0) = {r0} > R = {}",
                config.radius
            )));
        }
        let rs = space.norm(problem.x_star())?;
        if rs >= config.radius {
            return Err(Error::Contract(format!(
                "clipping radius must exceed R(x*) = {rs}, got {}",
                config.radius
            )));
        }
    }
    if config.algorithm.is_accelerated() && space.kind() == SpaceKind::LeftMatrix {
        let commutes = problem.smoothness().is_multiple_of_identity()
            && problem.sigma().is_none_or(|s| s.is_multiple_of_identity());
        if !commutes {
            return Err(Error::Contract(
                "accelerated left-matrix runs need L and Σ to be multiples of the identity".into(),
            ));
        }
    }
    Ok(())
}

fn non_finite(k: usize, what: &str) -> Error {
    Error::Numeric {
        iteration: Some(k),
        what: format!("non-finite {what}"),
    }
}

/// Checks every precondition of [`run`] without iterating.
pub fn validate(problem: &ProblemSpec, config: &RunConfig) -> Result<()> {
    let x0 = config.x0.clone().unwrap_or_else(|| problem.space().zeros());
    check_preconditions(problem, config, &x0)?;
    PrecondState::new(*problem.space(), config.eta(), config.delta).map(|_| ())
}

/// Runs `K + 1` iterations of the configured algorithm.
pub fn run(problem: &ProblemSpec, config: &RunConfig) -> Result<RunTrace> {
    let started = Instant::now();
    let space = *problem.space();
    let x0 = config.x0.clone().unwrap_or_else(|| space.zeros());
    check_preconditions(problem, config, &x0)?;

    let algorithm = config.algorithm;
    let eta = config.eta();
    let mut precond = PrecondState::new(space, eta, config.delta)?
        .with_accumulation(config.accumulate_history)
        .with_audit(config.audit);
    let mut rng = seeded(config.seed, config.stream);

    let mut state = IterateState {
        x: x0.clone(),
        x_bar: x0,
        k: 0,
        alpha: 1.0,
    };
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut iterates = config.record_iterates.then(Vec::new);
    let mut failures = Vec::new();
    let mut audits_checked = 0;
    let mut prev_h: Option<SpaceElement> = None;

    for k in 0..=config.iterations {
        state.k = k;
        let dist_to_opt = space.norm(&(&state.x - problem.x_star()))?;
        let iterate_norm = space.norm(&state.x)?;
        if let Some(v) = iterates.as_mut() {
            v.push(state.x.clone());
        }

        let g = if algorithm.is_accelerated() {
            state.alpha = 2.0 / (k as f64 + 2.0);
            accel_gradient(problem, &state.x, &state.x_bar, state.alpha, &mut rng)
        } else {
            // running mean of x_0..x_k
            state.x_bar += (&state.x - &state.x_bar) / (k as f64 + 1.0);
            problem.stochastic_gradient(&state.x, &mut rng)
        }
        .map_err(|e| e.at_iteration(k))?;

        let h = precond.update(&g)?;
        let half = step_plain(&state.x, &g, &h)?;
        let next = if algorithm.is_clipped() {
            project_qr(&space, &half, config.radius)?
        } else {
            half.clone()
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(k, "iterate"));
        }
        if algorithm.is_accelerated() {
            let averaged = if algorithm.is_clipped() { &half } else { &next };
            state.x_bar = averaged * state.alpha + &state.x_bar * (1.0 - state.alpha);
        }

        let suboptimality = problem.value(&state.x_bar)? - problem.f_star();
        if !suboptimality.is_finite() {
            return Err(non_finite(k, "objective value"));
        }
        let ftl_btl_gap = if precond.accumulates() {
            Some(precond.ftl_btl_gap()?)
        } else {
            None
        };
        let excess = match &prev_h {
            Some(p) => Some(loewner_excess(p, &h)?),
            None => None,
        };
        let trace_h_inv = precond.trace_inverse()?.expect("updated at least once");

        if config.audit {
            if precond.accumulates() {
                audits_checked += 1;
                let gap = ftl_btl_gap.expect("accumulating");
                let tol = precond.ftl_btl_tolerance()?;
                if gap < -tol {
                    failures.push(AuditFailure {
                        invariant: Invariant::FtlBtl,
                        iteration: k,
                        value: gap,
                        limit: tol,
                    });
                }
                if let Some(e) = excess {
                    audits_checked += 1;
                    if e > LOEWNER_TOL {
                        failures.push(AuditFailure {
                            invariant: Invariant::Loewner,
                            iteration: k,
                            value: e,
                            limit: LOEWNER_TOL,
                        });
                    }
                }
            }
            if algorithm.is_clipped() {
                audits_checked += 1;
                let r = space.norm(&next)?;
                if r > config.radius + FEASIBILITY_TOL {
                    failures.push(AuditFailure {
                        invariant: Invariant::Feasibility,
                        iteration: k + 1,
                        value: r,
                        limit: config.radius + FEASIBILITY_TOL,
                    });
                }
            }
        }

        records.push(IterationRecord {
            k,
            suboptimality,
            dist_to_opt,
            iterate_norm,
            ftl_btl_gap,
            loewner_excess: excess,
            trace_h_inv,
        });
        prev_h = Some(h);
        state.x = next;
    }
    if let Some(v) = iterates.as_mut() {
        v.push(state.x.clone());
    }

    Ok(RunTrace {
        algorithm,
        space,
        eta,
        delta: config.delta,
        radius: config.radius,
        deterministic: problem.is_deterministic(),
        records,
        final_iterate: state.x,
        output: state.x_bar,
        iterates,
        audits_checked,
        audit_failures: failures,
        wall_time: started.elapsed(),
    })
}
