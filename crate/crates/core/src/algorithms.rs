//! TD, FQI and partial FQI as stationary iterations `θ ← Hθ + c` on the target
//! system, their preconditioners, and an empirical runner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{max_abs, pseudoinverse, Mat, Vector};
use crate::mdp::MomentSet;
use crate::systems::target_system;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Td,
    Fqi,
    Pfqi,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Td => "TD",
            AlgorithmKind::Fqi => "FQI",
            AlgorithmKind::Pfqi => "PFQI",
        }
    }
}

impl std::str::FromStr for AlgorithmKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "td" => Ok(AlgorithmKind::Td),
            "fqi" => Ok(AlgorithmKind::Fqi),
            "pfqi" => Ok(AlgorithmKind::Pfqi),
            other => Err(Error::field("algo", format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    /// Ignored by FQI.
    pub alpha: f64,
    /// Inner updates per target; PFQI only.
    pub t: usize,
    pub theta0: Vector,
}

impl AlgorithmConfig {
    pub fn td(alpha: f64, theta0: Vector) -> Self {
        Self { kind: AlgorithmKind::Td, alpha, t: 1, theta0 }
    }

    pub fn fqi(theta0: Vector) -> Self {
        Self { kind: AlgorithmKind::Fqi, alpha: 0.0, t: 1, theta0 }
    }

    pub fn pfqi(alpha: f64, t: usize, theta0: Vector) -> Self {
        Self { kind: AlgorithmKind::Pfqi, alpha, t, theta0 }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.theta0.len() != d {
            return Err(Error::field("theta0", format!("length {} but d = {d}", self.theta0.len())));
        }
        if self.kind != AlgorithmKind::Fqi && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::field("alpha", format!("{} must be positive", self.alpha)));
        }
        if self.kind == AlgorithmKind::Pfqi && self.t == 0 {
            return Err(Error::field("t", "must be at least 1"));
        }
        Ok(())
    }
}

/// `θ ↦ Hθ + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub h: Mat,
    pub c: Vector,
}

impl AffineMap {
    pub fn apply(&self, theta: &Vector) -> Vector {
        &self.h * theta + &self.c
    }
}

/// `θ - α(Aθ - b)` on the target system.
pub fn td_step(m: &MomentSet, gamma: f64, alpha: f64, theta: &Vector) -> Vector {
    let sys = target_system(m, gamma);
    theta - (&sys.a * theta - &sys.b) * alpha
}

/// Minimal-norm regression update `γΣcov†Σcr θ + Σcov†θφr`.
pub fn fqi_step(m: &MomentSet, gamma: f64, theta: &Vector) -> Vector {
    let cov_pinv = pseudoinverse(&m.sigma_cov);
    &cov_pinv * (&m.sigma_cr * theta * gamma + &m.theta_phi_r)
}

/// `t` inner gradient steps towards the frozen target `γΣcr θ_target + θφr`,
/// starting from `θ_target`.
pub fn pfqi_step_literal(m: &MomentSet, gamma: f64, alpha: f64, t: usize, theta_target: &Vector) -> Vector {
    let d = m.d();
    let b_inner = Mat::identity(d, d) - &m.sigma_cov * alpha;
    let pull = (&m.sigma_cr * theta_target * gamma + &m.theta_phi_r) * alpha;
    let mut theta = theta_target.clone();
    for _ in 0..t {
        theta = &b_inner * &theta + &pull;
    }
    theta
}

/// `Σ_{i<t} B^i` by binary powering, with `B^t` alongside.
fn geometric_sum(b: &Mat, t: usize) -> (Mat, Mat) {
    let d = b.nrows();
    let mut sum = Mat::zeros(d, d);
    let mut pow = Mat::identity(d, d);
    for bit in (0..usize::BITS - t.leading_zeros()).rev() {
        // k -> 2k
        sum = &sum + &pow * &sum;
        pow = &pow * &pow;
        if (t >> bit) & 1 == 1 {
            // k -> k + 1
            sum = Mat::identity(d, d) + b * &sum;
            pow = b * &pow;
        }
    }
    (sum, pow)
}

/// `M_TD = αI`, `M_FQI = Σcov†`, `M_PFQI = α Σ_{i<t} (I - αΣcov)^i`.
pub fn preconditioner(kind: AlgorithmKind, m: &MomentSet, alpha: f64, t: usize) -> Mat {
    let d = m.d();
    match kind {
        AlgorithmKind::Td => Mat::identity(d, d) * alpha,
        AlgorithmKind::Fqi => pseudoinverse(&m.sigma_cov),
        AlgorithmKind::Pfqi => {
            let b = Mat::identity(d, d) - &m.sigma_cov * alpha;
            geometric_sum(&b, t).0 * alpha
        }
    }
}

/// Closed-form PFQI map `H = αΣ(I - αΣcov)^i γΣcr + (I - αΣcov)^t`, `c = M b`,
/// cross-checked against the preconditioned form `H = I - M A`.
pub fn pfqi_affine(m: &MomentSet, gamma: f64, alpha: f64, t: usize) -> Result<AffineMap> {
    let d = m.d();
    let b = Mat::identity(d, d) - &m.sigma_cov * alpha;
    let (sum, pow) = geometric_sum(&b, t);
    let precond = sum * alpha;
    let h = &precond * &m.sigma_cr * gamma + pow;
    let c = &precond * &m.theta_phi_r;
    let target = target_system(m, gamma);
    let other = Mat::identity(d, d) - &precond * &target.a;
    let tol = 1e-9 * (max_abs(&precond) * max_abs(&target.a) * d as f64).max(1.0);
    let gap = max_abs(&(&h - &other));
    if gap > tol {
        return Err(Error::Diagnostic(format!(
            "PFQI closed form and I - MA differ by {gap:.3e} (tolerance {tol:.3e})"
        )));
    }
    Ok(AffineMap { h, c })
}

pub fn pfqi_step_closed(m: &MomentSet, gamma: f64, alpha: f64, t: usize, theta: &Vector) -> Result<Vector> {
    Ok(pfqi_affine(m, gamma, alpha, t)?.apply(theta))
}

/// The iteration `θ ← Hθ + c` of any of the three algorithms.
pub fn affine_map(kind: AlgorithmKind, m: &MomentSet, gamma: f64, alpha: f64, t: usize) -> Result<AffineMap> {
    let d = m.d();
    match kind {
        AlgorithmKind::Td => {
            let sys = target_system(m, gamma);
            Ok(AffineMap {
                h: Mat::identity(d, d) - sys.a * alpha,
                c: sys.b * alpha,
            })
        }
        AlgorithmKind::Fqi => {
            let cov_pinv = pseudoinverse(&m.sigma_cov);
            Ok(AffineMap {
                h: &cov_pinv * &m.sigma_cr * gamma,
                c: cov_pinv * &m.theta_phi_r,
            })
        }
        AlgorithmKind::Pfqi => pfqi_affine(m, gamma, alpha, t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Diverged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Defaults to 2e5 for TD and 1e4 outer iterations otherwise.
    pub max_iters: Option<usize>,
    /// Step-norm threshold; must hold for 5 consecutive iterations.
    pub tol: f64,
    /// Infinity-norm bound that counts as divergence.
    pub blowup: f64,
    /// Keep every `record_every`-th iterate (the first and last are always kept).
    pub record_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_iters: None,
            tol: 1e-10,
            blowup: 1e12,
            record_every: 1,
        }
    }
}

pub const CONSECUTIVE_SMALL_STEPS: usize = 5;
/// Above this, PFQI runs on the closed-form map instead of the inner loop.
pub const PFQI_LITERAL_MAX_T: usize = 64;

pub fn default_max_iters(kind: AlgorithmKind) -> usize {
    match kind {
        AlgorithmKind::Td => 200_000,
        AlgorithmKind::Fqi | AlgorithmKind::Pfqi => 10_000,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// `(k, θ_k)` for the recorded iterations.
    pub iterates: Vec<(usize, Vector)>,
    /// `|A θ_k - b|` for each recorded iterate.
    pub residuals: Vec<f64>,
    pub status: RunStatus,
    pub iterations: usize,
    pub last: Vector,
    pub limit: Option<Vector>,
}

pub fn run(m: &MomentSet, gamma: f64, config: &AlgorithmConfig, opts: &RunOptions) -> Result<IterationTrace> {
    let d = m.d();
    config.validate(d)?;
    let target = target_system(m, gamma);
    let max_iters = opts.max_iters.unwrap_or_else(|| default_max_iters(config.kind));
    let literal = config.kind == AlgorithmKind::Pfqi && config.t <= PFQI_LITERAL_MAX_T;
    let map = if literal {
        None
    } else {
        Some(affine_map(config.kind, m, gamma, config.alpha, config.t)?)
    };
    // Allocation-free step into `out`; runs dominate campaign time.
    let d_inner = Mat::identity(d, d) - &m.sigma_cov * config.alpha;
    let step = |theta: &Vector, out: &mut Vector| match &map {
        Some(map) => {
            out.copy_from(&map.c);
            out.gemv(1.0, &map.h, theta, 1.0);
        }
        None => {
            let pull = (&m.sigma_cr * theta * gamma + &m.theta_phi_r) * config.alpha;
            let mut cur = theta.clone();
            for _ in 0..config.t {
                out.copy_from(&pull);
                out.gemv(1.0, &d_inner, &cur, 1.0);
                std::mem::swap(&mut cur, out);
            }
            std::mem::swap(&mut cur, out);
        }
    };
    let every = opts.record_every.max(1);
    let mut theta = config.theta0.clone();
    let mut iterates = vec![(0, theta.clone())];
    let mut residuals = vec![target.residual(&theta)];
    let mut small = 0usize;
    let mut status = RunStatus::MaxIters;
    let mut k = 0usize;
    let mut next = Vector::zeros(d);
    while k < max_iters {
        step(&theta, &mut next);
        k += 1;
        let finite = next.iter().all(|x| x.is_finite());
        let step_norm = if finite { next.metric_distance(&theta) } else { f64::INFINITY };
        std::mem::swap(&mut theta, &mut next);
        if !finite || theta.amax() > opts.blowup {
            status = RunStatus::Diverged;
            break;
        }
        small = if step_norm < opts.tol { small + 1 } else { 0 };
        if small >= CONSECUTIVE_SMALL_STEPS {
            status = RunStatus::Converged;
            break;
        }
        if k.is_multiple_of(every) {
            iterates.push((k, theta.clone()));
            residuals.push(target.residual(&theta));
        }
    }
    if iterates.last().map(|(i, _)| *i) != Some(k) {
        iterates.push((k, theta.clone()));
        residuals.push(if theta.iter().all(|x| x.is_finite()) {
            target.residual(&theta)
        } else {
            f64::INFINITY
        });
    }
    let limit = (status == RunStatus::Converged).then(|| theta.clone());
    Ok(IterationTrace {
        iterates,
        residuals,
        status,
        iterations: k,
        last: theta,
        limit,
    })
}
