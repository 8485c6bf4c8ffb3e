//! Evaluation instances over flattened state-action pairs, feature maps, batch
//! datasets and the feature moments `Σcov = ΦᵀDΦ`, `Σcr = ΦᵀDPΦ`, `θφr = ΦᵀDR`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, from_rows, hstack, rank, to_rows, Mat, Vector};
use crate::tolerance::{NONNEG, ON_POLICY, REALIZABLE, STOCHASTIC};

/// How the sampling distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Known model; coverage (`mu > 0`) is required.
    #[default]
    Expected,
    /// Built from a batch dataset; zero-mass pairs and zero rows of `P` are allowed.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    p: Mat,
    r: Vector,
    gamma: f64,
    mu: Vector,
    sampling: Sampling,
    n_states: Option<usize>,
    n_actions: Option<usize>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::field("gamma", format!("{gamma} is not inside (0, 1)")));
    }
    Ok(())
}

impl MdpInstance {
    /// Expected-mode instance: `p` row-stochastic, `mu` a positive distribution.
    pub fn new(p: Mat, r: Vector, gamma: f64, mu: Vector) -> Result<Self> {
        Self::build(p, r, gamma, mu, Sampling::Expected)
    }

    /// Empirical-mode instance: rows of `p` sum to 1 or are zero, `mu` may have zeros.
    pub fn empirical(p: Mat, r: Vector, gamma: f64, mu: Vector) -> Result<Self> {
        Self::build(p, r, gamma, mu, Sampling::Empirical)
    }

    fn build(p: Mat, r: Vector, gamma: f64, mu: Vector, sampling: Sampling) -> Result<Self> {
        let h = matrix::ensure_square(&p)?;
        if h == 0 {
            return Err(Error::field("h", "need at least one state-action pair"));
        }
        matrix::ensure_finite(&p)?;
        if r.len() != h {
            return Err(Error::field("R", format!("length {} but h = {h}", r.len())));
        }
        if mu.len() != h {
            return Err(Error::field("mu", format!("length {} but h = {h}", mu.len())));
        }
        if let Some(i) = r.iter().position(|x| !x.is_finite()) {
            return Err(Error::field("R", format!("entry {i} is not finite")));
        }
        check_gamma(gamma)?;
        for i in 0..h {
            for j in 0..h {
                if !(p[(i, j)] >= -NONNEG) {
                    return Err(Error::field("P", format!("entry ({i}, {j}) is negative")));
                }
            }
            let sum = p.row(i).sum();
            let zero_row_ok = sampling == Sampling::Empirical && sum.abs() <= STOCHASTIC;
            if (sum - 1.0).abs() > STOCHASTIC && !zero_row_ok {
                return Err(Error::field("P", format!("row {i} sums to {sum}")));
            }
        }
        for (i, &m) in mu.iter().enumerate() {
            let ok = match sampling {
                Sampling::Expected => m > 0.0,
                Sampling::Empirical => m >= 0.0,
            };
            if !ok || !m.is_finite() {
                return Err(Error::field("mu", format!("entry {i} = {m} violates coverage")));
            }
        }
        if (mu.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::field("mu", format!("sums to {}", mu.sum())));
        }
        Ok(Self {
            p,
            r,
            gamma,
            mu,
            sampling,
            n_states: None,
            n_actions: None,
        })
    }

    /// Attaches `(|S|, |A|)` metadata; `h` must equal their product.
    pub fn with_shape(mut self, n_states: usize, n_actions: usize) -> Result<Self> {
        if n_states * n_actions != self.h() {
            return Err(Error::field(
                "n_states",
                format!("{n_states} x {n_actions} != h = {}", self.h()),
            ));
        }
        self.n_states = Some(n_states);
        self.n_actions = Some(n_actions);
        Ok(self)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }

    pub fn with_reward(&self, r: Vector) -> Result<Self> {
        if r.len() != self.h() {
            return Err(Error::field("R", format!("length {} but h = {}", r.len(), self.h())));
        }
        Ok(Self { r, ..self.clone() })
    }

    pub fn h(&self) -> usize {
        self.p.nrows()
    }
    pub fn p(&self) -> &Mat {
        &self.p
    }
    pub fn r(&self) -> &Vector {
        &self.r
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn mu(&self) -> &Vector {
        &self.mu
    }
    pub fn sampling(&self) -> Sampling {
        self.sampling
    }
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.n_states.zip(self.n_actions)
    }

    /// `D = diag(mu)`.
    pub fn d(&self) -> Mat {
        Mat::from_diagonal(&self.mu)
    }

    /// Pairs with zero sampling mass (only possible in empirical mode).
    pub fn zero_mass_pairs(&self) -> Vec<usize> {
        (0..self.h()).filter(|&i| self.mu[i] == 0.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: Mat,
    rank: usize,
}

impl FeatureMap {
    pub fn new(phi: Mat) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::field("Phi", "needs at least one row and one column"));
        }
        matrix::ensure_finite(&phi)?;
        let rank = rank(&phi);
        Ok(Self { phi, rank })
    }

    /// Tabular features `Φ = I_h`.
    pub fn tabular(h: usize) -> Result<Self> {
        Self::new(Mat::identity(h, h))
    }

    pub fn phi(&self) -> &Mat {
        &self.phi
    }
    pub fn h(&self) -> usize {
        self.phi.nrows()
    }
    pub fn d(&self) -> usize {
        self.phi.ncols()
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn full_column_rank(&self) -> bool {
        self.rank == self.d()
    }
    pub fn full_row_rank(&self) -> bool {
        self.rank == self.h()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub sigma_cov: Mat,
    pub sigma_cr: Mat,
    pub theta_phi_r: Vector,
}

impl MomentSet {
    pub fn d(&self) -> usize {
        self.sigma_cov.nrows()
    }

    /// `col(Σcr) ⊆ col(Σcov)`, which holds for any instance.
    pub fn cross_in_cov_range(&self) -> bool {
        rank(&hstack(&self.sigma_cov, &self.sigma_cr)) == rank(&self.sigma_cov)
    }
}

fn check_dims(mdp: &MdpInstance, features: &FeatureMap) -> Result<()> {
    if features.h() != mdp.h() {
        return Err(Error::Dimension(format!(
            "Phi has {} rows but the instance has h = {}",
            features.h(),
            mdp.h()
        )));
    }
    Ok(())
}

pub fn build_moments(mdp: &MdpInstance, features: &FeatureMap) -> Result<MomentSet> {
    check_dims(mdp, features)?;
    let phi = features.phi();
    // Scale rows by mu instead of forming D.
    let mut dphi = phi.clone();
    for (i, mut row) in dphi.row_iter_mut().enumerate() {
        row *= mdp.mu()[i];
    }
    let phi_t_d = dphi.transpose();
    let cov = &phi_t_d * phi;
    let sigma_cov = (&cov + cov.transpose()) * 0.5;
    let sigma_cr = &phi_t_d * (mdp.p() * phi);
    let theta_phi_r = &phi_t_d * mdp.r();
    Ok(MomentSet {
        sigma_cov,
        sigma_cr,
        theta_phi_r,
    })
}

pub fn is_on_policy(mdp: &MdpInstance) -> bool {
    let drift = mdp.p().tr_mul(mdp.mu()) - mdp.mu();
    drift.amax() < ON_POLICY
}

/// Stationary distribution by power iteration on the lazy chain `(P + I) / 2`,
/// which has the same stationary vectors and cannot oscillate on periodic chains.
pub fn stationary_distribution(p: &Mat) -> Result<Vector> {
    let h = matrix::ensure_square(p)?;
    let pt = p.transpose();
    let mut mu = Vector::from_element(h, 1.0 / h as f64);
    for _ in 0..100_000 {
        let next = &pt * &mu;
        let residual = (&next - &mu).amax();
        if residual < 1e-12 {
            return Ok(next.clone() / next.sum());
        }
        mu = (next + &mu) * 0.5;
        mu /= mu.sum();
    }
    Err(Error::NoConvergence(
        "stationary distribution power iteration hit 1e5 steps".into(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDynamics {
    /// `D(I - γP)`.
    pub matrix: Mat,
    pub nonsingular_m_matrix: bool,
    pub strictly_diagonally_dominant: bool,
}

pub fn system_dynamics(mdp: &MdpInstance) -> Result<SystemDynamics> {
    let h = mdp.h();
    let matrix = mdp.d() * (Mat::identity(h, h) - mdp.p() * mdp.gamma());
    let nonsingular_m_matrix = matrix::is_nonsingular_m_matrix(&matrix)?;
    let strictly_diagonally_dominant = (0..h).all(|i| {
        let off: f64 = (0..h).filter(|&j| j != i).map(|j| matrix[(i, j)].abs()).sum();
        matrix[(i, i)].abs() > off
    });
    Ok(SystemDynamics {
        matrix,
        nonsingular_m_matrix,
        strictly_diagonally_dominant,
    })
}

/// `Q = (I - γP)^{-1} R`.
pub fn true_q(mdp: &MdpInstance) -> Result<Vector> {
    let h = mdp.h();
    let m = Mat::identity(h, h) - mdp.p() * mdp.gamma();
    m.lu()
        .solve(mdp.r())
        .ok_or_else(|| Error::Diagnostic("I - γP is singular".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realizability {
    pub realizable: bool,
    /// Minimal-norm `θ = Φ†Q`.
    pub theta: Vector,
    pub residual: f64,
    /// Columns span `ker(Φ)`; `Θ_π = θ + span(kernel_basis)` when realizable.
    pub kernel_basis: Mat,
}

pub fn check_realizability(mdp: &MdpInstance, features: &FeatureMap) -> Result<Realizability> {
    check_dims(mdp, features)?;
    let q = true_q(mdp)?;
    let theta = matrix::pseudoinverse(features.phi()) * &q;
    let residual = (features.phi() * &theta - &q).norm();
    Ok(Realizability {
        realizable: residual < REALIZABLE,
        theta,
        residual,
        kernel_basis: matrix::null_space(features.phi()),
    })
}

/// One transition `(s, a, r, s', a')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub sp: usize,
    pub ap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchDataset {
    pub samples: Vec<Sample>,
    /// Pairs are indexed `s * n_actions + a`.
    pub n_actions: usize,
}

impl BatchDataset {
    pub fn new(samples: Vec<Sample>, n_actions: usize) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::field("n_actions", "must be positive"));
        }
        for (k, smp) in samples.iter().enumerate() {
            if smp.a >= n_actions || smp.ap >= n_actions {
                return Err(Error::field(
                    format!("samples[{k}]"),
                    format!("action index out of range (n_actions = {n_actions})"),
                ));
            }
            if !smp.r.is_finite() {
                return Err(Error::field(format!("samples[{k}].r"), "not finite"));
            }
        }
        Ok(Self { samples, n_actions })
    }

    pub fn from_json(text: &str, n_actions: usize) -> Result<Self> {
        Self::new(serde_json::from_str(text)?, n_actions)
    }

    fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Distinct pairs appearing as either initial or next pair, sorted.
    pub fn observed_pairs(&self) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for smp in &self.samples {
            set.insert(self.pair(smp.s, smp.a));
            set.insert(self.pair(smp.sp, smp.ap));
        }
        set.into_iter().collect()
    }
}

/// Empirical model restricted to the `m` pairs that appear in the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    pub moments: MomentSet,
    /// Sub-stochastic `P̂`, empirical `μ̂ = n(s,a)/n` and mean rewards over the observed pairs.
    pub mdp: MdpInstance,
    /// Rows of Φ for the observed pairs.
    pub features: FeatureMap,
    /// `pairs[i]` is the global pair index of local row `i`.
    pub pairs: Vec<usize>,
    /// Global indices of pairs that only ever appear as next pairs (`μ̂ = 0`, zero `P̂` row).
    pub zero_mass_pairs: Vec<usize>,
}

pub fn build_empirical(
    dataset: &BatchDataset,
    features: &FeatureMap,
    gamma: f64,
) -> Result<EmpiricalModel> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = dataset.observed_pairs();
    if let Some(&missing) = pairs.iter().find(|&&p| p >= features.h()) {
        return Err(Error::field(
            "Phi",
            format!("no feature row for observed pair {missing} (Phi has {} rows)", features.h()),
        ));
    }
    let local: BTreeMap<usize, usize> = pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let m = pairs.len();
    let n = dataset.samples.len() as f64;
    let mut counts = Mat::zeros(m, m);
    let mut visits = Vector::zeros(m);
    let mut reward_sum = Vector::zeros(m);
    for smp in &dataset.samples {
        let i = local[&dataset.pair(smp.s, smp.a)];
        let j = local[&dataset.pair(smp.sp, smp.ap)];
        counts[(i, j)] += 1.0;
        visits[i] += 1.0;
        reward_sum[i] += smp.r;
    }
    let mut p = Mat::zeros(m, m);
    let mut r = Vector::zeros(m);
    for i in 0..m {
        if visits[i] > 0.0 {
            p.row_mut(i).copy_from(&(counts.row(i) / visits[i]));
            r[i] = reward_sum[i] / visits[i];
        }
    }
    let mu = &visits / n;
    let mdp = MdpInstance::empirical(p, r, gamma, mu)?;
    let phi_rows = Mat::from_fn(m, features.d(), |i, j| features.phi()[(pairs[i], j)]);
    let local_features = FeatureMap::new(phi_rows)?;
    let moments = build_moments(&mdp, &local_features)?;
    let zero_mass_pairs = (0..m)
        .filter(|&i| visits[i] == 0.0)
        .map(|i| pairs[i])
        .collect();
    Ok(EmpiricalModel {
        moments,
        mdp,
        features: local_features,
        pairs,
        zero_mass_pairs,
    })
}

/// JSON instance schema shared by the CLI and reproducer files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub h: usize,
    pub gamma: f64,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(rename = "Phi")]
    pub phi: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_states: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_actions: Option<usize>,
    #[serde(default, skip_serializing_if = "is_expected")]
    pub sampling: Sampling,
}

fn is_expected(s: &Sampling) -> bool {
    *s == Sampling::Expected
}

fn named_matrix(field: &str, rows: &[Vec<f64>], h: usize) -> Result<Mat> {
    if rows.len() != h {
        return Err(Error::field(field, format!("{} rows but h = {h}", rows.len())));
    }
    from_rows(rows).map_err(|e| match e {
        Error::NonFinite { row, col } => Error::field(field, format!("entry ({row}, {col}) is not finite")),
        other => Error::field(field, other.to_string()),
    })
}

impl InstanceFile {
    pub fn from_parts(mdp: &MdpInstance, features: &FeatureMap) -> Self {
        Self {
            h: mdp.h(),
            gamma: mdp.gamma(),
            p: to_rows(mdp.p()),
            r: mdp.r().iter().copied().collect(),
            mu: mdp.mu().iter().copied().collect(),
            phi: to_rows(features.phi()),
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            sampling: mdp.sampling(),
        }
    }

    pub fn into_parts(&self) -> Result<(MdpInstance, FeatureMap)> {
        let h = self.h;
        let p = named_matrix("P", &self.p, h)?;
        if p.ncols() != h {
            return Err(Error::field("P", format!("{} columns but h = {h}", p.ncols())));
        }
        let phi = named_matrix("Phi", &self.phi, h)?;
        let mut mdp = MdpInstance::build(
            p,
            Vector::from_vec(self.r.clone()),
            self.gamma,
            Vector::from_vec(self.mu.clone()),
            self.sampling,
        )?;
        if let (Some(s), Some(a)) = (self.n_states, self.n_actions) {
            mdp = mdp.with_shape(s, a)?;
        }
        Ok((mdp, FeatureMap::new(phi)?))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Two small instances where TD and FQI disagree, with `γ = 0.8`.
pub mod fixtures {
    use super::*;

    fn build(phi: [[f64; 2]; 3], mu: [f64; 3], p: [[f64; 3]; 3]) -> (MdpInstance, FeatureMap) {
        let p = Mat::from_fn(3, 3, |i, j| p[i][j]);
        let phi = Mat::from_fn(3, 2, |i, j| phi[i][j]);
        // Any reward works; the convergence questions do not depend on it.
        let r = Vector::from_vec(vec![1.0, -0.5, 0.25]);
        let mdp = MdpInstance::new(p, r, 0.8, Vector::from_vec(mu.to_vec())).expect("valid fixture");
        (mdp, FeatureMap::new(phi).expect("valid fixture"))
    }

    /// TD is stable but FQI diverges.
    pub fn td_stable_fqi_divergent() -> (MdpInstance, FeatureMap) {
        build(
            [[0.1, 0.1], [0.8, 0.2], [0.8, 0.4]],
            [0.7, 0.1, 0.2],
            [[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.7, 0.2, 0.1]],
        )
    }

    /// FQI converges but TD diverges.
    pub fn fqi_convergent_td_divergent() -> (MdpInstance, FeatureMap) {
        build(
            [[0.1, 0.2], [0.6, 0.3], [0.7, 1.0]],
            [0.2, 0.7, 0.1],
            [[0.1, 0.3, 0.6], [0.1, 0.2, 0.7], [0.1, 0.1, 0.8]],
        )
    }
}
