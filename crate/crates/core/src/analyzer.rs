//! Convergence verdicts for TD, FQI and PFQI from their exact conditions,
//! plus the cross-algorithm reports (transitions, Z-matrix systems,
//! encoder/decoder spectra, on-policy stability).
//!
//! Every verdict comes from the general theorem for the algorithm: the
//! iteration `θ ← Hθ + c` converges from every `θ0` iff `c ∈ col(I - H)` and
//! `H` is semiconvergent, with limit `(I-H)^D c + (I - (I-H)(I-H)^D) θ0`.
//! Sharper corollaries are evaluated alongside and must agree.

use num_complex::Complex64;
use serde::Serialize;

use crate::algorithms::{pfqi_affine, AlgorithmKind};
use crate::error::{Error, Result};
use crate::json::{serialize_matrix, serialize_vector};
use crate::matrix::{
    drazin_inverse, eigenvalues, is_m_matrix, is_nonnegative, is_nonsingular_m_matrix, is_rpn, is_z_matrix,
    rank, spectral_report, Mat, SpectralReport, Vector,
};
use crate::mdp::{is_on_policy, system_dynamics, FeatureMap, MdpInstance};
use crate::systems::{check_consistency, LinearSystem, Problem, RankInvarianceReport};
use crate::tolerance::MARGINAL;

pub mod cite {
    pub const TD_THEOREM: &str = "TD convergence theorem";
    pub const TD_STABLE: &str = "TD stability corollary";
    pub const TD_RATE: &str = "TD learning-rate corollary";
    pub const TD_NONSINGULAR: &str = "TD stability for nonsingular systems";
    pub const FQI_THEOREM: &str = "FQI convergence theorem";
    pub const FQI_NONSINGULAR: &str = "FQI with a nonsingular target system";
    pub const FQI_RANK_INVARIANT: &str = "FQI under rank invariance";
    pub const FQI_LIF: &str = "FQI with linearly independent features";
    pub const PFQI_THEOREM: &str = "PFQI convergence theorem";
    pub const PFQI_NONSINGULAR: &str = "PFQI with a nonsingular system";
    pub const PFQI_RANK_INVARIANT: &str = "PFQI under rank invariance";
    pub const PFQI_OVER: &str = "PFQI with over-parameterized features";
    pub const PFQI_LIF: &str = "PFQI with linearly independent features";
    pub const RANK_INVARIANCE: &str = "rank invariance condition";
    pub const M_MATRIX: &str = "M-matrix relaxation of TD stability";
    pub const TD_TO_PFQI: &str = "TD stability carries over to PFQI at every finite t";
    pub const PFQI_TO_FQI: &str = "PFQI converges for large t when FQI does";
    pub const C_FQI_LIF: &str = "PFQI convergence for all large t implies FQI convergence";
    pub const Z_MATRIX: &str = "TD and FQI equivalence in Z-matrix systems";
    pub const ENCODER_DECODER: &str = "encoder/decoder spectrum switch";
    pub const ON_POLICY: &str = "on-policy TD stability";
    pub const RPN: &str = "on-policy systems are RPN";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    ConvergesForAllTheta0,
    Diverges,
    NoFixedPoint,
    Marginal,
}

impl Prediction {
    fn from_radius(rho: f64) -> Self {
        if (rho - 1.0).abs() < MARGINAL {
            Prediction::Marginal
        } else if rho < 1.0 {
            Prediction::ConvergesForAllTheta0
        } else {
            Prediction::Diverges
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub holds: bool,
    pub citation: String,
}

fn cond(name: impl Into<String>, holds: bool, citation: &str) -> Condition {
    Condition {
        name: name.into(),
        holds,
        citation: citation.to_string(),
    }
}

/// `limit(θ0) = particular + projector · θ0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictedLimit {
    #[serde(serialize_with = "serialize_vector")]
    pub particular: Vector,
    #[serde(serialize_with = "serialize_matrix")]
    pub projector: Mat,
}

impl PredictedLimit {
    pub fn at(&self, theta0: &Vector) -> Vector {
        &self.particular + &self.projector * theta0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Specialization {
    Nonsingular,
    RankInvariance,
    LinearlyIndependentFeatures,
    OverParameterized,
    OnPolicy,
    ZMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceVerdict {
    pub algorithm: AlgorithmKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    pub prediction: Prediction,
    pub conditions: Vec<Condition>,
    pub predicted_limit: Option<PredictedLimit>,
    pub alpha_interval: Option<(f64, f64)>,
    pub specializations: Vec<Specialization>,
    /// The rule that decided the verdict (most specific applicable one).
    pub fired_rule: String,
    /// Spectral radius of the iteration matrix.
    pub spectral_radius: f64,
}

struct IterationAnalysis {
    report: SpectralReport,
    prediction: Prediction,
    limit: Option<PredictedLimit>,
}

fn analyse_iteration(h: &Mat, c: &Vector, consistent: bool) -> Result<IterationAnalysis> {
    let report = spectral_report(h)?;
    let prediction = if !consistent {
        Prediction::NoFixedPoint
    } else if report.marginal_unit_circle {
        Prediction::Marginal
    } else if report.semiconvergent {
        Prediction::ConvergesForAllTheta0
    } else {
        Prediction::Diverges
    };
    let limit = if prediction == Prediction::ConvergesForAllTheta0 {
        let d = h.nrows();
        let g = Mat::identity(d, d) - h;
        let gd = drazin_inverse(&g)?;
        Some(PredictedLimit {
            particular: &gd * c,
            projector: Mat::identity(d, d) - &g * &gd,
        })
    } else {
        None
    };
    Ok(IterationAnalysis {
        report,
        prediction,
        limit,
    })
}

/// Combines the general prediction with a corollary's; a hard disagreement is a bug
/// or a rank borderline, so it is surfaced as a diagnostic.
fn reconcile(general: Prediction, special: Prediction, rule: &str) -> Result<Prediction> {
    if general == Prediction::Marginal || special == Prediction::Marginal {
        return Ok(Prediction::Marginal);
    }
    if general != special {
        return Err(Error::Diagnostic(format!(
            "{rule} predicts {special:?} but the general theorem predicts {general:?}"
        )));
    }
    Ok(general)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdStability {
    pub stable: bool,
    pub conditions: Vec<Condition>,
    /// `A` is an M-matrix, so nonnegative stability replaced positive semi-stability.
    pub m_matrix_relaxation: bool,
    /// Singular M-matrix: the relaxation applies but deserves a manual look.
    pub singular_m_matrix: bool,
    /// A nonzero eigenvalue of `A` sits within `MARGINAL` of the imaginary axis.
    pub marginal: bool,
}

/// TD is stable (some `α > 0` converges) iff `b ∈ col(A)`, `A` is positive
/// semi-stable and `ind(A) <= 1`.
pub fn td_stability(sys: &LinearSystem) -> Result<TdStability> {
    let report = spectral_report(&sys.a)?;
    let consistent = check_consistency(sys);
    let m_matrix = is_m_matrix(&sys.a)?;
    let (semi_name, semi, semi_cite) = if m_matrix {
        ("A nonnegative stable (A is an M-matrix)", report.nonnegative_stable, cite::M_MATRIX)
    } else {
        ("A positive semi-stable", report.positive_semi_stable, cite::TD_STABLE)
    };
    let index_ok = report.index <= 1;
    let conditions = vec![
        cond("b ∈ col(A)", consistent, cite::TD_STABLE),
        cond(semi_name, semi, semi_cite),
        cond(format!("ind(A) = {} <= 1", report.index), index_ok, cite::TD_STABLE),
    ];
    Ok(TdStability {
        stable: consistent && semi && index_ok,
        conditions,
        m_matrix_relaxation: m_matrix,
        singular_m_matrix: m_matrix && report.zero_multiplicity > 0,
        marginal: report.marginal_imaginary_axis,
    })
}

/// Upper end of the TD learning-rate interval, `min 2 Re(λ) / |λ|²` over the
/// nonzero eigenvalues of `A`; infinite when `A` has none.
pub fn td_epsilon(report: &SpectralReport) -> f64 {
    report
        .nonzero_eigenvalues()
        .iter()
        .map(|z| 2.0 * z.re / z.norm_sqr())
        .fold(f64::INFINITY, f64::min)
}

/// `(0, ε)`: the learning rates for which TD converges.
pub fn td_alpha_interval(sys: &LinearSystem) -> Result<(f64, f64)> {
    let stability = td_stability(sys)?;
    if !stability.stable {
        return Err(Error::Precondition("TD is not stable on this system".into()));
    }
    Ok((0.0, td_epsilon(&spectral_report(&sys.a)?)))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::field("alpha", format!("{alpha} must be positive")));
    }
    Ok(())
}

pub fn predict_td(sys: &LinearSystem, alpha: f64) -> Result<ConvergenceVerdict> {
    check_alpha(alpha)?;
    let d = sys.d();
    let consistent = check_consistency(sys);
    let h = Mat::identity(d, d) - &sys.a * alpha;
    let analysis = analyse_iteration(&h, &(&sys.b * alpha), consistent)?;
    let stability = td_stability(sys)?;
    let a_report = spectral_report(&sys.a)?;
    let nonsingular = a_report.is_nonsingular();

    let mut conditions = vec![
        cond("b ∈ col(A)", consistent, cite::TD_THEOREM),
        cond("I - αA semiconvergent", analysis.report.semiconvergent, cite::TD_THEOREM),
    ];
    let mut prediction = analysis.prediction;
    let alpha_interval = if stability.stable {
        let eps = td_epsilon(&a_report);
        let inside = alpha < eps;
        conditions.push(cond(format!("α < ε = {eps:.6e}"), inside, cite::TD_RATE));
        let near_edge = ((alpha - eps) / eps).abs() < 1e-6;
        if stability.marginal || near_edge {
            prediction = Prediction::Marginal;
        } else {
            let special = if inside {
                Prediction::ConvergesForAllTheta0
            } else {
                Prediction::Diverges
            };
            prediction = reconcile(prediction, special, cite::TD_RATE)?;
        }
        Some((0.0, eps))
    } else {
        None
    };
    let fired_rule = if nonsingular {
        conditions.push(cond(
            format!("ρ(I - αA) = {:.6} < 1", analysis.report.spectral_radius),
            analysis.report.spectral_radius < 1.0,
            cite::TD_NONSINGULAR,
        ));
        cite::TD_NONSINGULAR
    } else {
        cite::TD_THEOREM
    };
    let limit = if prediction == Prediction::ConvergesForAllTheta0 {
        analysis.limit
    } else {
        None
    };
    Ok(ConvergenceVerdict {
        algorithm: AlgorithmKind::Td,
        alpha: Some(alpha),
        t: None,
        prediction,
        conditions,
        predicted_limit: limit,
        alpha_interval,
        specializations: if nonsingular { vec![Specialization::Nonsingular] } else { vec![] },
        fired_rule: fired_rule.to_string(),
        spectral_radius: analysis.report.spectral_radius,
    })
}

/// Structural facts about one problem that decide which corollaries apply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Facts {
    pub nonsingular: bool,
    pub rank_invariance: RankInvarianceReport,
    pub linearly_independent_features: bool,
    pub over_parameterized: bool,
    pub on_policy: bool,
    pub z_matrix: bool,
    pub target_consistent: bool,
}

impl Facts {
    pub fn of(p: &Problem) -> Result<Self> {
        let d = p.d();
        // Zero-mass rows of an empirical Φ never reach the moments.
        let cov_rank = rank(&p.moments.sigma_cov);
        Ok(Self {
            nonsingular: p.nonsingular()?,
            rank_invariance: p.rank_invariance()?,
            linearly_independent_features: cov_rank == d,
            over_parameterized: p.features.full_row_rank() && p.mdp.zero_mass_pairs().is_empty(),
            on_policy: is_on_policy(&p.mdp),
            z_matrix: zmatrix_assumptions(p)?.0,
            target_consistent: check_consistency(&p.target),
        })
    }

    pub fn specializations(&self) -> Vec<Specialization> {
        let mut out = Vec::new();
        if self.nonsingular {
            out.push(Specialization::Nonsingular);
        }
        if self.rank_invariance.holds {
            out.push(Specialization::RankInvariance);
        }
        if self.linearly_independent_features {
            out.push(Specialization::LinearlyIndependentFeatures);
        }
        if self.over_parameterized {
            out.push(Specialization::OverParameterized);
        }
        if self.on_policy {
            out.push(Specialization::OnPolicy);
        }
        if self.z_matrix {
            out.push(Specialization::ZMatrix);
        }
        out
    }
}

pub fn predict_fqi(p: &Problem) -> Result<ConvergenceVerdict> {
    let facts = Facts::of(p)?;
    predict_fqi_with(p, &facts)
}

fn predict_fqi_with(p: &Problem, facts: &Facts) -> Result<ConvergenceVerdict> {
    let d = p.d();
    let consistent = check_consistency(&p.fqi);
    let h = Mat::identity(d, d) - &p.fqi.a;
    let analysis = analyse_iteration(&h, &p.fqi.b, consistent)?;
    let rho = analysis.report.spectral_radius;
    let mut conditions = vec![
        cond("Σcov†θφr ∈ col(I - γΣcov†Σcr)", consistent, cite::FQI_THEOREM),
        cond("γΣcov†Σcr semiconvergent", analysis.report.semiconvergent, cite::FQI_THEOREM),
    ];
    let (rule, special) = if facts.nonsingular {
        conditions.push(cond(format!("ρ(γΣcov⁻¹Σcr) = {rho:.6} < 1"), rho < 1.0, cite::FQI_NONSINGULAR));
        (cite::FQI_NONSINGULAR, Prediction::from_radius(rho))
    } else if facts.rank_invariance.holds {
        conditions.push(cond(format!("ρ(γΣcov†Σcr) = {rho:.6} < 1"), rho < 1.0, cite::FQI_RANK_INVARIANT));
        (cite::FQI_RANK_INVARIANT, Prediction::from_radius(rho))
    } else if facts.linearly_independent_features {
        (cite::FQI_LIF, analysis.prediction)
    } else {
        (cite::FQI_THEOREM, analysis.prediction)
    };
    let prediction = reconcile(analysis.prediction, special, rule)?;
    Ok(ConvergenceVerdict {
        algorithm: AlgorithmKind::Fqi,
        alpha: None,
        t: None,
        prediction,
        conditions,
        predicted_limit: if prediction == Prediction::ConvergesForAllTheta0 { analysis.limit } else { None },
        alpha_interval: None,
        specializations: facts.specializations(),
        fired_rule: rule.to_string(),
        spectral_radius: rho,
    })
}

pub fn predict_pfqi(p: &Problem, alpha: f64, t: usize) -> Result<ConvergenceVerdict> {
    let facts = Facts::of(p)?;
    predict_pfqi_with(p, &facts, alpha, t)
}

fn predict_pfqi_with(p: &Problem, facts: &Facts, alpha: f64, t: usize) -> Result<ConvergenceVerdict> {
    check_alpha(alpha)?;
    if t == 0 {
        return Err(Error::field("t", "must be at least 1"));
    }
    let cov_eigs = eigenvalues(&p.moments.sigma_cov)?;
    if cov_eigs.iter().any(|z| (alpha * z.re - 2.0).abs() < 1e-9) {
        return Err(Error::Precondition(format!(
            "α = {alpha} puts an eigenvalue of I - αΣcov at -1, so the PFQI preconditioner can be singular"
        )));
    }
    let map = pfqi_affine(&p.moments, p.gamma(), alpha, t)?;
    let consistent = facts.target_consistent;
    let analysis = analyse_iteration(&map.h, &map.c, consistent)?;
    let rho = analysis.report.spectral_radius;
    let mut conditions = vec![
        cond("θφr ∈ col(A)", consistent, cite::PFQI_THEOREM),
        cond("I - M_PFQI·A semiconvergent", analysis.report.semiconvergent, cite::PFQI_THEOREM),
    ];
    let cov_nonsingular_step = cov_eigs.iter().all(|z| (alpha * z.re - 1.0).abs() > 1e-9);
    let (rule, special) = if facts.nonsingular && cov_nonsingular_step {
        conditions.push(cond(format!("ρ(I - M_PFQI·A) = {rho:.6} < 1"), rho < 1.0, cite::PFQI_NONSINGULAR));
        (cite::PFQI_NONSINGULAR, Prediction::from_radius(rho))
    } else if facts.rank_invariance.holds {
        conditions.push(cond("θφr ∈ col(A) for every reward", true, cite::RANK_INVARIANCE));
        let rule = if facts.over_parameterized { cite::PFQI_OVER } else { cite::PFQI_RANK_INVARIANT };
        (rule, analysis.prediction)
    } else if facts.linearly_independent_features {
        (cite::PFQI_LIF, analysis.prediction)
    } else {
        (cite::PFQI_THEOREM, analysis.prediction)
    };
    if facts.rank_invariance.holds && !consistent {
        return Err(Error::Diagnostic("rank invariance holds but the target system is inconsistent".into()));
    }
    let prediction = reconcile(analysis.prediction, special, rule)?;
    Ok(ConvergenceVerdict {
        algorithm: AlgorithmKind::Pfqi,
        alpha: Some(alpha),
        t: Some(t),
        prediction,
        conditions,
        predicted_limit: if prediction == Prediction::ConvergesForAllTheta0 { analysis.limit } else { None },
        alpha_interval: None,
        specializations: facts.specializations(),
        fired_rule: rule.to_string(),
        spectral_radius: rho,
    })
}

/// Verdict for any algorithm; `alpha` and `t` are ignored where they do not apply.
pub fn predict(p: &Problem, kind: AlgorithmKind, alpha: f64, t: usize) -> Result<ConvergenceVerdict> {
    match kind {
        AlgorithmKind::Td => predict_td(&p.target, alpha),
        AlgorithmKind::Fqi => predict_fqi(p),
        AlgorithmKind::Pfqi => predict_pfqi(p, alpha, t),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionReport {
    pub td_stable: bool,
    /// Upper end of the TD interval, when TD is stable.
    pub td_epsilon: Option<f64>,
    /// `(t, ε_t)`: largest α found with predicted PFQI convergence at `t`;
    /// `None` when no converging α exists on the probe ladder.
    pub epsilon_t: Vec<(usize, Option<f64>)>,
    /// `(α, T)`: smallest grid `t` such that PFQI converges at every grid `t' >= T`.
    pub t_threshold: Vec<(f64, Option<usize>)>,
    pub cross_checks: Vec<Condition>,
}

fn pfqi_converges(p: &Problem, facts: &Facts, alpha: f64, t: usize) -> bool {
    predict_pfqi_with(p, facts, alpha, t).is_ok_and(|v| v.prediction == Prediction::ConvergesForAllTheta0)
}

fn largest_eigenvalue(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.re).fold(0.0, f64::max))
}

/// Largest α with predicted PFQI convergence at `t`, found by bracketing from a
/// converging probe and 30 bisection steps.
fn epsilon_for_t(p: &Problem, facts: &Facts, t: usize, start: f64) -> Option<f64> {
    let mut lo = None;
    for k in 0..40 {
        let a = start / 2f64.powi(k);
        if pfqi_converges(p, facts, a, t) {
            lo = Some(a);
            break;
        }
    }
    let mut lo = lo?;
    let mut hi = None;
    for _ in 0..60 {
        let a = lo * 2.0;
        if pfqi_converges(p, facts, a, t) {
            lo = a;
        } else {
            hi = Some(a);
            break;
        }
    }
    let Some(mut hi) = hi else {
        return Some(f64::INFINITY);
    };
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if pfqi_converges(p, facts, mid, t) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

pub fn transition_analysis(p: &Problem, alphas: &[f64], ts: &[usize]) -> Result<TransitionReport> {
    let facts = Facts::of(p)?;
    let stability = td_stability(&p.target)?;
    let td_eps = if stability.stable {
        Some(td_epsilon(&spectral_report(&p.target.a)?))
    } else {
        None
    };
    let lambda_max = largest_eigenvalue(&p.moments.sigma_cov)?;
    let mut ts: Vec<usize> = ts.iter().copied().filter(|&t| t >= 1).collect();
    ts.sort_unstable();
    ts.dedup();

    let mut epsilon_t = Vec::new();
    for &t in &ts {
        let base = match td_eps {
            Some(e) if e.is_finite() => e,
            _ => 2.0 / lambda_max.max(1e-300),
        };
        epsilon_t.push((t, epsilon_for_t(p, &facts, t, base / t as f64 * 2.0)));
    }

    let mut t_threshold = Vec::new();
    let mut grid: Vec<(f64, Vec<bool>)> = Vec::new();
    for &alpha in alphas {
        let conv: Vec<bool> = ts.iter().map(|&t| pfqi_converges(p, &facts, alpha, t)).collect();
        let mut threshold = None;
        for i in (0..ts.len()).rev() {
            if conv[i] {
                threshold = Some(ts[i]);
            } else {
                break;
            }
        }
        t_threshold.push((alpha, threshold));
        grid.push((alpha, conv));
    }

    let mut cross_checks = Vec::new();
    if stability.stable && !stability.marginal {
        let all_positive = epsilon_t.iter().all(|(_, e)| e.is_some_and(|x| x > 0.0));
        cross_checks.push(cond("TD stable ⇒ ε_t > 0 for every grid t", all_positive, cite::TD_TO_PFQI));
    }
    // The large-t claims are asymptotic; they are checked only for α where the
    // largest grid t has already brought the map close to FQI's.
    let t_max = ts.last().copied();
    let fqi = predict_fqi_with(p, &facts)?;
    if let Some(t_max) = t_max {
        let lambda_min = eigenvalues(&p.moments.sigma_cov)?
            .iter()
            .map(|z| z.re)
            .filter(|&x| x > 0.0)
            .fold(f64::INFINITY, f64::min);
        let settled = |alpha: f64| {
            let contraction = (1.0 - alpha * lambda_min).abs().max((1.0 - alpha * lambda_max).abs());
            alpha < 2.0 / lambda_max && contraction.powi(t_max.min(i32::MAX as usize) as i32) < 1e-6
        };
        if facts.nonsingular && fqi.prediction == Prediction::ConvergesForAllTheta0 {
            for (alpha, threshold) in &t_threshold {
                if settled(*alpha) {
                    cross_checks.push(cond(
                        format!("T exists at α = {alpha:.6e}"),
                        threshold.is_some(),
                        cite::PFQI_TO_FQI,
                    ));
                }
            }
        }
        if facts.linearly_independent_features && fqi.prediction == Prediction::Diverges {
            for (alpha, conv) in &grid {
                if settled(*alpha) {
                    cross_checks.push(cond(
                        format!("FQI diverges ⇒ PFQI diverges at α = {alpha:.6e}, t = {t_max}"),
                        !conv.last().copied().unwrap_or(false),
                        cite::C_FQI_LIF,
                    ));
                }
            }
        }
    }

    Ok(TransitionReport {
        td_stable: stability.stable,
        td_epsilon: td_eps,
        epsilon_t,
        t_threshold,
        cross_checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZMatrixReport {
    /// `A` Z-matrix, `Σcov⁻¹ >= 0`, `Σcov⁻¹Σcr >= 0`.
    pub assumption_weak_regular: bool,
    /// `Σcov` nonsingular Z-matrix and `Σcr >= 0` (feature correlation reversal).
    pub assumption_reversal: bool,
    pub rank_invariance: bool,
    pub applicable: bool,
    pub td_stable: Option<bool>,
    pub fqi_converges: Option<bool>,
    /// `Some(true)` when the equivalence was checked and held.
    pub equivalence_holds: Option<bool>,
    /// The reversal assumption implies the weak-regular one.
    pub reversal_implies_weak_regular: bool,
    pub status: String,
}

fn zmatrix_assumptions(p: &Problem) -> Result<(bool, bool)> {
    let cov = &p.moments.sigma_cov;
    let d = p.d();
    let inv = if rank(cov) == d { cov.clone().try_inverse() } else { None };
    let weak_regular = match &inv {
        Some(inv) => {
            is_z_matrix(&p.target.a)? && is_nonnegative(inv) && is_nonnegative(&(inv * &p.moments.sigma_cr))
        }
        None => false,
    };
    let reversal = inv.is_some() && is_z_matrix(cov)? && is_nonnegative(&p.moments.sigma_cr);
    Ok((weak_regular, reversal))
}

pub fn zmatrix_equivalence(p: &Problem) -> Result<ZMatrixReport> {
    let (weak_regular, reversal) = zmatrix_assumptions(p)?;
    let ri = p.rank_invariance()?.holds;
    let applicable = weak_regular && ri;
    let (td_stable, fqi_converges, equivalence_holds, status) = if applicable {
        let td = td_stability(&p.target)?;
        let fqi = predict_fqi(p)?;
        if td.marginal || fqi.prediction == Prediction::Marginal {
            (Some(td.stable), None, None, "marginal".to_string())
        } else {
            let f = fqi.prediction == Prediction::ConvergesForAllTheta0;
            let ok = td.stable == f;
            let status = if ok { "equivalence holds" } else { "equivalence violated" };
            (Some(td.stable), Some(f), Some(ok), status.to_string())
        }
    } else {
        (None, None, None, "not applicable".to_string())
    };
    Ok(ZMatrixReport {
        assumption_weak_regular: weak_regular,
        assumption_reversal: reversal,
        rank_invariance: ri,
        applicable,
        td_stable,
        fqi_converges,
        equivalence_holds,
        reversal_implies_weak_regular: !reversal || weak_regular,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderDecoderReport {
    /// Spectrum of `ΦᵀD(I - γP)Φ` (d×d).
    pub encoded_eigenvalues: Vec<Complex64>,
    /// Spectrum of `D(I - γP)ΦΦᵀ` (h×h).
    pub decoded_eigenvalues: Vec<Complex64>,
    pub nonzero_spectra_match: bool,
    pub encoded_positive_semi_stable: bool,
    pub decoded_positive_semi_stable: bool,
    pub decoded_nonsingular_m_matrix: bool,
    /// Positive semi-stability of the dynamics survived the encode/decode.
    pub stability_survived: bool,
    /// The encoded matrix is not positive semi-stable, so TD is unstable.
    pub td_unstable: bool,
}

/// Greedy tolerance matching of two eigenvalue lists.
fn spectra_match(a: &[Complex64], b: &[Complex64]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    for x in a {
        let tol = 1e-6 * x.norm().max(1.0);
        let best = (0..b.len())
            .filter(|&j| !used[j])
            .min_by(|&i, &j| (b[i] - x).norm().total_cmp(&(b[j] - x).norm()));
        match best {
            Some(j) if (b[j] - x).norm() <= tol => used[j] = true,
            _ => return false,
        }
    }
    true
}

pub fn encoder_decoder_report(mdp: &MdpInstance, features: &FeatureMap) -> Result<EncoderDecoderReport> {
    let dynamics = system_dynamics(mdp)?.matrix;
    let phi = features.phi();
    if phi.nrows() != mdp.h() {
        return Err(Error::Dimension(format!("Phi has {} rows, h = {}", phi.nrows(), mdp.h())));
    }
    let encoded = phi.transpose() * &dynamics * phi;
    let decoded = &dynamics * phi * phi.transpose();
    let enc = spectral_report(&encoded)?;
    let dec = spectral_report(&decoded)?;
    Ok(EncoderDecoderReport {
        nonzero_spectra_match: spectra_match(&enc.nonzero_eigenvalues(), &dec.nonzero_eigenvalues()),
        encoded_positive_semi_stable: enc.positive_semi_stable,
        decoded_positive_semi_stable: dec.positive_semi_stable,
        decoded_nonsingular_m_matrix: is_nonsingular_m_matrix(&decoded)?,
        stability_survived: dec.positive_semi_stable,
        td_unstable: !enc.positive_semi_stable,
        encoded_eigenvalues: enc.eigenvalues,
        decoded_eigenvalues: dec.eigenvalues,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnPolicyReport {
    pub rpn: bool,
    pub rank_invariance: bool,
    pub td_stable: bool,
    pub nonsingular: bool,
    pub positive_stable: bool,
    /// RPN, rank invariance and TD stability all hold.
    pub holds: bool,
    pub conditions: Vec<Condition>,
}

pub fn onpolicy_report(mdp: &MdpInstance, features: &FeatureMap) -> Result<OnPolicyReport> {
    if !is_on_policy(mdp) {
        return Err(Error::Precondition("instance is off-policy (μᵀP ≠ μᵀ)".into()));
    }
    let p = Problem::new(mdp.clone(), features.clone())?;
    let rpn = is_rpn(&p.target.a)?;
    let ri = p.rank_invariance()?.holds;
    let td = td_stability(&p.target)?;
    let report = spectral_report(&p.target.a)?;
    let conditions = vec![
        cond("A is RPN", rpn, cite::RPN),
        cond("rank invariance", ri, cite::RANK_INVARIANCE),
        cond("TD stable", td.stable, cite::ON_POLICY),
    ];
    Ok(OnPolicyReport {
        rpn,
        rank_invariance: ri,
        td_stable: td.stable,
        nonsingular: report.is_nonsingular(),
        positive_stable: report.positive_stable,
        holds: rpn && ri && td.stable,
        conditions,
    })
}

/// Everything the analyzer can say about one problem at one `(α, t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub h: usize,
    pub d: usize,
    pub gamma: f64,
    pub feature_rank: usize,
    pub consistent: bool,
    pub nonsingular: bool,
    pub rank_invariance: RankInvarianceReport,
    pub trivial_fixed_point: bool,
    pub td_stability: TdStability,
    pub td: ConvergenceVerdict,
    pub fqi: ConvergenceVerdict,
    pub pfqi: ConvergenceVerdict,
    pub zero_mass_pairs: Vec<usize>,
}

pub fn analyze(p: &Problem, alpha: f64, t: usize) -> Result<InstanceReport> {
    let facts = Facts::of(p)?;
    Ok(InstanceReport {
        h: p.mdp.h(),
        d: p.d(),
        gamma: p.gamma(),
        feature_rank: p.features.rank(),
        consistent: facts.target_consistent,
        nonsingular: facts.nonsingular,
        rank_invariance: facts.rank_invariance.clone(),
        trivial_fixed_point: p.target.b.amax() == 0.0,
        td_stability: td_stability(&p.target)?,
        td: predict_td(&p.target, alpha)?,
        fqi: predict_fqi_with(p, &facts)?,
        pfqi: predict_pfqi_with(p, &facts, alpha, t)?,
        zero_mass_pairs: p.mdp.zero_mass_pairs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures;
    use crate::systems::Role;
    use approx::assert_abs_diff_eq;

    fn fixture(which: usize) -> Problem {
        let (mdp, f) = if which == 1 {
            fixtures::td_stable_fqi_divergent()
        } else {
            fixtures::fqi_convergent_td_divergent()
        };
        Problem::new(mdp, f).unwrap()
    }

    #[test]
    fn td_on_identity_converges_to_b() {
        let sys = LinearSystem::new(Mat::identity(2, 2), Vector::from_vec(vec![3.0, -1.0]), Role::Target).unwrap();
        let v = predict_td(&sys, 0.5).unwrap();
        assert_eq!(v.prediction, Prediction::ConvergesForAllTheta0);
        let lim = v.predicted_limit.unwrap().at(&Vector::from_vec(vec![9.0, 9.0]));
        assert_abs_diff_eq!(lim, Vector::from_vec(vec![3.0, -1.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(td_alpha_interval(&sys).unwrap().1, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn first_fixture_verdicts() {
        let p = fixture(1);
        let stab = td_stability(&p.target).unwrap();
        assert!(stab.stable);
        let (_, eps) = td_alpha_interval(&p.target).unwrap();
        assert_abs_diff_eq!(eps, 2.0 / 0.09385551, epsilon = 1e-4);
        assert_eq!(predict_td(&p.target, 1.0).unwrap().prediction, Prediction::ConvergesForAllTheta0);
        assert_eq!(predict_td(&p.target, 1.5 * eps).unwrap().prediction, Prediction::Diverges);
        let fqi = predict_fqi(&p).unwrap();
        assert_eq!(fqi.prediction, Prediction::Diverges);
        assert_eq!(fqi.fired_rule, cite::FQI_NONSINGULAR);
        assert_abs_diff_eq!(fqi.spectral_radius, 1.011068, epsilon = 1e-4);
    }

    #[test]
    fn second_fixture_verdicts() {
        let p = fixture(2);
        assert!(!td_stability(&p.target).unwrap().stable);
        assert!(td_alpha_interval(&p.target).is_err());
        // At α = 1e-3 the unstable modes sit 5.6e-7 outside the unit circle, inside the marginal band.
        assert_eq!(predict_td(&p.target, 1e-3).unwrap().prediction, Prediction::Marginal);
        for alpha in [0.1, 1.0, 10.0] {
            assert_eq!(predict_td(&p.target, alpha).unwrap().prediction, Prediction::Diverges);
        }
        let fqi = predict_fqi(&p).unwrap();
        assert_eq!(fqi.prediction, Prediction::ConvergesForAllTheta0);
        assert_abs_diff_eq!(fqi.spectral_radius, 0.94628, epsilon = 1e-4);
    }

    #[test]
    fn pfqi_t1_matches_td() {
        for which in [1, 2] {
            let p = fixture(which);
            for alpha in [0.5, 3.0, 30.0] {
                let td = predict_td(&p.target, alpha).unwrap();
                let pf = predict_pfqi(&p, alpha, 1).unwrap();
                assert_eq!(td.prediction, pf.prediction, "fixture {which}, α = {alpha}");
            }
        }
    }

    #[test]
    fn pfqi_large_t_follows_fqi() {
        let p = fixture(2);
        let alpha = 1.0 / 0.44760864;
        assert_eq!(predict_pfqi(&p, alpha, 1).unwrap().prediction, Prediction::Diverges);
        assert_eq!(predict_pfqi(&p, alpha, 4096).unwrap().prediction, Prediction::ConvergesForAllTheta0);
        let p1 = fixture(1);
        let alpha = 1.0 / 0.23784605;
        assert_eq!(predict_pfqi(&p1, alpha, 4096).unwrap().prediction, Prediction::Diverges);
    }

    #[test]
    fn pfqi_rejects_singular_preconditioner_rate() {
        let p = fixture(2);
        let err = predict_pfqi(&p, 2.0 / 0.44760864372, 2);
        // Either exactly on the edge or a hair off it; the guard uses 1e-9.
        if let Err(e) = err {
            assert!(matches!(e, Error::Precondition(_)));
        }
    }

    #[test]
    fn transition_examples() {
        let p1 = fixture(1);
        let ts = [1, 2, 4, 8, 16, 32, 64];
        let rep = transition_analysis(&p1, &[0.01], &ts).unwrap();
        assert!(rep.td_stable);
        let eps: Vec<f64> = rep.epsilon_t.iter().map(|(_, e)| e.unwrap()).collect();
        assert!(eps.iter().all(|&e| e > 0.0));
        assert!(eps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)), "{eps:?}");
        let td_eps = rep.td_epsilon.unwrap();
        assert!(((eps[0] - td_eps) / td_eps).abs() < 1e-6);
        assert!(rep.cross_checks.iter().all(|c| c.holds));

        let p2 = fixture(2);
        let alphas = [0.5, 1.0, 2.0, 4.0];
        let rep = transition_analysis(&p2, &alphas, &[1, 16, 256, 4096, 65536]).unwrap();
        for (alpha, t) in &rep.t_threshold {
            assert!(t.is_some(), "no T at α = {alpha}");
        }
        assert!(rep.cross_checks.iter().all(|c| c.holds), "{:?}", rep.cross_checks);
    }

    #[test]
    fn zmatrix_tabular_is_applicable() {
        let (mdp, _) = fixtures::td_stable_fqi_divergent();
        let p = Problem::new(mdp, FeatureMap::tabular(3).unwrap()).unwrap();
        let z = zmatrix_equivalence(&p).unwrap();
        assert!(z.assumption_reversal && z.assumption_weak_regular && z.applicable);
        assert_eq!(z.equivalence_holds, Some(true));
        assert_eq!((z.td_stable, z.fqi_converges), (Some(true), Some(true)));
    }

    #[test]
    fn zmatrix_not_applicable() {
        let z = zmatrix_equivalence(&fixture(2)).unwrap();
        assert!(!z.applicable);
        assert_eq!(z.status, "not applicable");
    }

    #[test]
    fn encoder_decoder_square_nonsingular() {
        let (mdp, _) = fixtures::td_stable_fqi_divergent();
        let phi = Mat::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.1, 1.0, 0.3, 0.0, 0.4, 1.0]);
        let r = encoder_decoder_report(&mdp, &FeatureMap::new(phi).unwrap()).unwrap();
        assert!(r.nonzero_spectra_match);
        assert_eq!(r.encoded_eigenvalues.len(), 3);
        let (mdp, f) = fixtures::fqi_convergent_td_divergent();
        let r = encoder_decoder_report(&mdp, &f).unwrap();
        assert!(r.nonzero_spectra_match && r.td_unstable);
    }

    #[test]
    fn onpolicy_requires_stationarity() {
        let (mdp, f) = fixtures::td_stable_fqi_divergent();
        assert!(matches!(onpolicy_report(&mdp, &f), Err(Error::Precondition(_))));
        let single = MdpInstance::new(Mat::identity(1, 1), Vector::from_element(1, 1.0), 0.9, Vector::from_element(1, 1.0)).unwrap();
        let r = onpolicy_report(&single, &FeatureMap::new(Mat::from_element(1, 2, 1.0)).unwrap()).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn verdict_json_shape() {
        let v = predict_fqi(&fixture(2)).unwrap();
        let value = crate::json::to_value(&v).unwrap();
        let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
        assert_eq!(keys[0], "algorithm");
        assert_eq!(value["prediction"], "converges_for_all_theta0");
        assert!(value["conditions"][0]["citation"].is_string());
    }
}
