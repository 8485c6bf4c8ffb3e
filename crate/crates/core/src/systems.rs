//! The target (LSTD) system `(Σcov - γΣcr) θ = θφr`, the FQI system it
//! projects to, and the structural facts about them: consistency, rank
//! invariance, nonsingularity and solution sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, hstack, max_abs, pseudoinverse, rank, same_column_space, same_kernel, Mat, Vector};
use crate::mdp::{build_moments, EmpiricalModel, FeatureMap, MdpInstance, MomentSet, Sampling};
use crate::tolerance::REALIZABLE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Target,
    Fqi,
    EmpiricalTarget,
    EmpiricalFqi,
    /// `(I - H) θ = c` for an iteration `θ ← Hθ + c`.
    Preconditioned,
}

impl Role {
    pub fn is_target(self) -> bool {
        matches!(self, Role::Target | Role::EmpiricalTarget)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Mat,
    pub b: Vector,
    pub role: Role,
}

impl LinearSystem {
    pub fn new(a: Mat, b: Vector, role: Role) -> Result<Self> {
        let d = matrix::ensure_square(&a)?;
        if b.len() != d {
            return Err(Error::Dimension(format!("A is {d}x{d} but b has {} entries", b.len())));
        }
        Ok(Self { a, b, role })
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    pub fn residual(&self, theta: &Vector) -> f64 {
        (&self.a * theta - &self.b).norm()
    }
}

/// `A = Σcov - γΣcr`, `b = θφr`.
pub fn target_system(m: &MomentSet, gamma: f64) -> LinearSystem {
    LinearSystem {
        a: &m.sigma_cov - &m.sigma_cr * gamma,
        b: m.theta_phi_r.clone(),
        role: Role::Target,
    }
}

/// `A = I - γΣcov†Σcr`, `b = Σcov†θφr`, checked against the target system
/// through `Σcov A_fqi = A_target` and `Σcov b_fqi = b_target`.
pub fn fqi_system(m: &MomentSet, gamma: f64) -> Result<LinearSystem> {
    let d = m.d();
    let cov_pinv = pseudoinverse(&m.sigma_cov);
    let a = Mat::identity(d, d) - &cov_pinv * &m.sigma_cr * gamma;
    let b = &cov_pinv * &m.theta_phi_r;
    let target = target_system(m, gamma);
    let gap = projection_gap(m, &a, &b, &target);
    let scale = max_abs(&target.a).max(target.b.amax()).max(1.0);
    if gap > 1e-8 * scale {
        return Err(Error::Diagnostic(format!(
            "projection identity off by {gap:.3e}; Σcov is too close to the rank threshold"
        )));
    }
    Ok(LinearSystem { a, b, role: Role::Fqi })
}

/// `max(|Σcov A_fqi - A_target|, |Σcov b_fqi - b_target|)`.
pub fn projection_gap(m: &MomentSet, a_fqi: &Mat, b_fqi: &Vector, target: &LinearSystem) -> f64 {
    let da = max_abs(&(&m.sigma_cov * a_fqi - &target.a));
    let db = (&m.sigma_cov * b_fqi - &target.b).amax();
    da.max(db)
}

/// `b ∈ col(A)` by `rank([A|b]) = rank(A)`.
pub fn check_consistency(sys: &LinearSystem) -> bool {
    let b = Mat::from_column_slice(sys.d(), 1, sys.b.as_slice());
    rank(&hstack(&sys.a, &b)) == rank(&sys.a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankInvarianceReport {
    pub holds: bool,
    /// Each equivalent form that was evaluated, with its verdict.
    pub forms: Vec<(String, bool)>,
}

/// Evaluates the equivalent forms of `rank(Φ) = rank(ΦᵀD(I - γP)Φ)` and insists
/// they agree.
///
/// In empirical mode `D` may be singular, so forms that go through `Φ` itself
/// stop being equivalent; only the `Σcov` forms are checked there.
pub fn check_rank_invariance(
    m: &MomentSet,
    features: &FeatureMap,
    mdp: &MdpInstance,
) -> Result<RankInvarianceReport> {
    let target = target_system(m, mdp.gamma());
    let a = &target.a;
    let mut forms = vec![
        ("rank(Σcov) = rank(A)".to_string(), rank(&m.sigma_cov) == rank(a)),
        ("col(Σcov) = col(A)".to_string(), same_column_space(&m.sigma_cov, a)),
        ("ker(Σcov) = ker(A)".to_string(), same_kernel(&m.sigma_cov, a)),
    ];
    if mdp.sampling() == Sampling::Expected {
        let phi = features.phi();
        let h = mdp.h();
        let dyn_phi = mdp.d() * (Mat::identity(h, h) - mdp.p() * mdp.gamma()) * phi;
        forms.push(("rank(Φ) = rank(A)".to_string(), features.rank() == rank(a)));
        forms.push(("ker(Φ) = ker(A)".to_string(), same_kernel(phi, a)));
        // col(M) ∩ ker(Φᵀ) = {0} exactly when Φᵀ is injective on col(M).
        forms.push((
            "ker(Φᵀ) ∩ col(D(I-γP)Φ) = {0}".to_string(),
            rank(a) == rank(&dyn_phi),
        ));
    }
    let holds = forms[0].1;
    if forms.iter().any(|(_, v)| *v != holds) {
        return Err(Error::Diagnostic(format!(
            "rank-invariance forms disagree: {forms:?}"
        )));
    }
    Ok(RankInvarianceReport { holds, forms })
}

/// `A_target` nonsingular, cross-checked against full column rank plus rank
/// invariance.
pub fn check_nonsingularity(m: &MomentSet, features: &FeatureMap, sys: &LinearSystem) -> Result<bool> {
    let d = sys.d();
    let rank_a = rank(&sys.a);
    let nonsingular = rank_a == d;
    // Zero-mass rows of an empirical Φ do not reach the moments.
    let feature_rank = rank(&m.sigma_cov).min(features.rank());
    let implied = feature_rank == d && feature_rank == rank_a;
    if nonsingular != implied {
        return Err(Error::Diagnostic(format!(
            "rank(A) = {rank_a} but feature rank = {feature_rank} with d = {d}"
        )));
    }
    Ok(nonsingular)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSet {
    /// `A†b`; the least-squares point when inconsistent.
    pub particular: Vector,
    /// Orthonormal columns spanning `ker(A)`.
    pub kernel_basis: Mat,
    pub consistent: bool,
    /// `|A A†b - b|`.
    pub residual: f64,
}

pub fn solve(sys: &LinearSystem) -> SolutionSet {
    let particular = pseudoinverse(&sys.a) * &sys.b;
    let residual = sys.residual(&particular);
    SolutionSet {
        particular,
        kernel_basis: matrix::null_space(&sys.a),
        consistent: check_consistency(sys),
        residual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetRelation {
    Equal,
    FirstSubset,
    SecondSubset,
    Incomparable,
}

/// `first ⊆ second` as affine sets; an inconsistent system has the empty set.
fn affine_contained(first: &SolutionSet, second: &SolutionSet) -> bool {
    if !first.consistent {
        return true;
    }
    if !second.consistent {
        return false;
    }
    let k2 = &second.kernel_basis;
    let k1 = &first.kernel_basis;
    let kernels = k1.ncols() == 0 || rank(&hstack(k2, k1)) == k2.ncols();
    let diff = &first.particular - &second.particular;
    let off = if k2.ncols() == 0 {
        diff.clone()
    } else {
        &diff - k2 * (k2.transpose() * &diff)
    };
    let scale = first.particular.norm().max(second.particular.norm()).max(1.0);
    kernels && off.norm() <= REALIZABLE * scale
}

pub fn compare_solution_sets(s1: &SolutionSet, s2: &SolutionSet) -> Result<SetRelation> {
    if s1.particular.len() != s2.particular.len() {
        return Err(Error::Dimension(format!(
            "solution sets live in dimensions {} and {}",
            s1.particular.len(),
            s2.particular.len()
        )));
    }
    Ok(match (affine_contained(s1, s2), affine_contained(s2, s1)) {
        (true, true) => SetRelation::Equal,
        (true, false) => SetRelation::FirstSubset,
        (false, true) => SetRelation::SecondSubset,
        (false, false) => SetRelation::Incomparable,
    })
}

/// Everything derived from one instance and feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub mdp: MdpInstance,
    pub features: FeatureMap,
    pub moments: MomentSet,
    pub target: LinearSystem,
    pub fqi: LinearSystem,
}

impl Problem {
    pub fn new(mdp: MdpInstance, features: FeatureMap) -> Result<Self> {
        let moments = build_moments(&mdp, &features)?;
        Self::assemble(mdp, features, moments)
    }

    pub fn from_empirical(model: EmpiricalModel) -> Result<Self> {
        Self::assemble(model.mdp, model.features, model.moments)
    }

    fn assemble(mdp: MdpInstance, features: FeatureMap, moments: MomentSet) -> Result<Self> {
        let gamma = mdp.gamma();
        let mut target = target_system(&moments, gamma);
        let mut fqi = fqi_system(&moments, gamma)?;
        if mdp.sampling() == Sampling::Empirical {
            target.role = Role::EmpiricalTarget;
            fqi.role = Role::EmpiricalFqi;
        }
        Ok(Self {
            mdp,
            features,
            moments,
            target,
            fqi,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn rank_invariance(&self) -> Result<RankInvarianceReport> {
        check_rank_invariance(&self.moments, &self.features, &self.mdp)
    }

    pub fn nonsingular(&self) -> Result<bool> {
        check_nonsingularity(&self.moments, &self.features, &self.target)
    }

    /// Same instance with rewards replaced; moments and systems are rebuilt.
    pub fn with_reward(&self, r: Vector) -> Result<Self> {
        Self::new(self.mdp.with_reward(r)?, self.features.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures;
    use approx::assert_abs_diff_eq;

    fn sys(a: &[f64], b: &[f64]) -> LinearSystem {
        let d = b.len();
        LinearSystem::new(Mat::from_row_slice(d, d, a), Vector::from_row_slice(b), Role::Target).unwrap()
    }

    #[test]
    fn consistency_examples() {
        assert!(check_consistency(&sys(&[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0])));
        assert!(!check_consistency(&sys(&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0])));
        assert!(check_consistency(&sys(&[1.0, 0.0, 0.0, 0.0], &[3.0, 0.0])));
        assert!(!check_consistency(&sys(&[1.0, 0.0, 0.0, 0.0], &[3.0, 1.0])));
    }

    #[test]
    fn zero_reward_gives_zero_rhs() {
        let (mdp, f) = fixtures::td_stable_fqi_divergent();
        let p = Problem::new(mdp.with_reward(Vector::zeros(3)).unwrap(), f).unwrap();
        assert_eq!(p.target.b, Vector::zeros(2));
        assert!(check_consistency(&p.target));
        assert_abs_diff_eq!(solve(&p.target).particular, Vector::zeros(2), epsilon = 0.0);
    }

    #[test]
    fn nonsingular_solve() {
        let s = solve(&sys(&[2.0, 0.0, 1.0, 1.0], &[2.0, 3.0]));
        assert_eq!(s.kernel_basis.ncols(), 0);
        assert!(s.consistent);
        assert_abs_diff_eq!(s.particular, Vector::from_vec(vec![1.0, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_solve_reports_residual() {
        let s = solve(&sys(&[1.0, 0.0, 0.0, 0.0], &[3.0, 1.0]));
        assert!(!s.consistent);
        assert_abs_diff_eq!(s.residual, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.particular, Vector::from_vec(vec![3.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn compare_examples() {
        let a = solve(&sys(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0]));
        assert_eq!(compare_solution_sets(&a, &a).unwrap(), SetRelation::Equal);
        let point = solve(&sys(&[1.0, 0.0, 0.0, 1.0], &[1.0, 5.0]));
        assert_eq!(compare_solution_sets(&point, &a).unwrap(), SetRelation::FirstSubset);
        assert_eq!(compare_solution_sets(&a, &point).unwrap(), SetRelation::SecondSubset);
        let other = solve(&sys(&[0.0, 0.0, 0.0, 1.0], &[0.0, 1.0]));
        assert_eq!(compare_solution_sets(&a, &other).unwrap(), SetRelation::Incomparable);
        let empty = solve(&sys(&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0]));
        assert_eq!(compare_solution_sets(&empty, &a).unwrap(), SetRelation::FirstSubset);
    }

    #[test]
    fn fixtures_are_nonsingular_and_rank_invariant() {
        for (mdp, f) in [fixtures::td_stable_fqi_divergent(), fixtures::fqi_convergent_td_divergent()] {
            let p = Problem::new(mdp, f).unwrap();
            assert!(p.nonsingular().unwrap());
            let ri = p.rank_invariance().unwrap();
            assert!(ri.holds);
            assert_eq!(ri.forms.len(), 6);
        }
    }

    #[test]
    fn duplicated_column_is_singular() {
        let (mdp, f) = fixtures::td_stable_fqi_divergent();
        let phi = f.phi();
        let dup = FeatureMap::new(hstack(phi, &phi.columns(0, 1).into_owned())).unwrap();
        let p = Problem::new(mdp, dup).unwrap();
        assert!(!p.nonsingular().unwrap());
        assert!(p.rank_invariance().unwrap().holds);
    }

    #[test]
    fn identity_covariance_makes_fqi_equal_target() {
        let m = MomentSet {
            sigma_cov: Mat::identity(2, 2),
            sigma_cr: Mat::from_row_slice(2, 2, &[0.3, 0.1, 0.2, 0.4]),
            theta_phi_r: Vector::from_vec(vec![1.0, -1.0]),
        };
        let t = target_system(&m, 0.9);
        let f = fqi_system(&m, 0.9).unwrap();
        assert_abs_diff_eq!(t.a, f.a, epsilon = 1e-15);
        assert_abs_diff_eq!(t.b, f.b, epsilon = 1e-15);
    }
}
