//! Multi-user problem schema and per-component statistics.
//!
//! A [`Problem`] holds `N` independent component pairs `(X_i, Y_i)`, `K`
//! users with demand sets and weights, and a leakage budget `ε` in nats.
//!
//! # Slack index convention
//!
//! The per-user slack of the upper-bound transformation is written with a
//! summation over "`j` such that `Y_i ∈ C_j`" inside a term indexed by the
//! user, which does not type-check literally. The convention used here is the
//! per-component one: every component carries its own slack
//! `δ_i = min(s1_i, s2_i)` with
//!
//! * `s1_i = I(X_i;Y_i) + H(X_i|Y_i)` (functional representation), and
//! * `s2_i = I(X_i;Y_i) + ln(I(X_i;Y_i) + 1) + c` (strong functional
//!   representation, `c = 4` by default),
//!
//! and a user's slack is the sum over the components it demands. Weighted by
//! `μ_i = Σ_{j: i ∈ C_j} λ_j`, this reproduces the `Σ_i μ_i δ_i` term of the
//! upper bound exactly, and corresponds to picking the cheaper representation
//! independently per component.

use crate::probcore::{conditional_entropy, mutual_information, Axis, Joint2, ProbError, ZERO_FLOOR};
use thiserror::Error;

/// Default additive constant of the strong functional representation bound.
pub const DEFAULT_SFRL_CONSTANT: f64 = 4.0;

/// `H(X_i|Y_i)` at or below this counts as deterministic (`X_i = f(Y_i)`).
pub const DETERMINISTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("problem has no components")]
    NoComponents,
    #[error("problem has no users")]
    NoUsers,
    #[error("user {user} has an empty demand set")]
    EmptyDemands { user: usize },
    #[error("user {user} demands component {index}, but only {count} exist")]
    DemandOutOfRange { user: usize, index: usize, count: usize },
    #[error("user {user} has invalid weight {weight}")]
    BadWeight { user: usize, weight: f64 },
    #[error("leakage budget must be a finite non-negative number, got {0}")]
    BadEpsilon(f64),
    #[error("sfrl constant must be finite and non-negative, got {0}")]
    BadSfrlConstant(f64),
    #[error("component {name:?}: {source}")]
    InvalidJoint { name: String, source: ProbError },
    #[error("problem is in the trivial regime (ε = {eps} ≥ I(X;Y) = {total_mi}); use the trivial optimum")]
    TrivialRegime { eps: f64, total_mi: f64 },
    #[error("problem is not in the trivial regime (ε = {eps} < I(X;Y) = {total_mi})")]
    NotTrivial { eps: f64, total_mi: f64 },
}

/// One independent pair `(X_i, Y_i)`, rows indexing `X_i`.
///
/// Zero-probability rows and columns are pruned on construction; the indices
/// that survived are kept so labels and files can be mapped back.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    name: String,
    joint: Joint2,
    kept_x: Vec<usize>,
    kept_y: Vec<usize>,
    original_shape: (usize, usize),
    x_labels: Option<Vec<String>>,
    y_labels: Option<Vec<String>>,
}

impl Component {
    pub fn new(name: impl Into<String>, joint: Joint2) -> Self {
        let original_shape = (joint.rows(), joint.cols());
        let rm = joint.row_marginal();
        let cm = joint.col_marginal();
        let kept_x: Vec<usize> = (0..joint.rows()).filter(|&x| rm[x] > ZERO_FLOOR).collect();
        let kept_y: Vec<usize> = (0..joint.cols()).filter(|&y| cm[y] > ZERO_FLOOR).collect();
        let joint = if kept_x.len() == joint.rows() && kept_y.len() == joint.cols() {
            joint
        } else {
            let table: Vec<f64> = kept_x
                .iter()
                .flat_map(|&x| kept_y.iter().map(move |&y| (x, y)))
                .map(|(x, y)| joint.get(x, y))
                .collect();
            Joint2::new(kept_x.len(), kept_y.len(), table).expect("pruning preserves mass")
        };
        Component { name: name.into(), joint, kept_x, kept_y, original_shape, x_labels: None, y_labels: None }
    }

    /// Builds from a row-major matrix `P(x, y)`.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let name = name.into();
        let joint =
            Joint2::from_rows(rows).map_err(|source| ModelError::InvalidJoint { name: name.clone(), source })?;
        Ok(Component::new(name, joint))
    }

    /// Attaches symbol labels given for the unpruned alphabets.
    pub fn with_labels(mut self, x_labels: Option<Vec<String>>, y_labels: Option<Vec<String>>) -> Self {
        self.x_labels = x_labels.map(|l| self.kept_x.iter().filter_map(|&i| l.get(i).cloned()).collect());
        self.y_labels = y_labels.map(|l| self.kept_y.iter().filter_map(|&i| l.get(i).cloned()).collect());
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint(&self) -> &Joint2 {
        &self.joint
    }

    pub fn nx(&self) -> usize {
        self.joint.rows()
    }

    pub fn ny(&self) -> usize {
        self.joint.cols()
    }

    /// Original indices of the `X` symbols that were kept.
    pub fn kept_x(&self) -> &[usize] {
        &self.kept_x
    }

    pub fn kept_y(&self) -> &[usize] {
        &self.kept_y
    }

    /// Alphabet sizes before pruning.
    pub fn original_shape(&self) -> (usize, usize) {
        self.original_shape
    }

    pub fn was_pruned(&self) -> bool {
        self.original_shape != (self.nx(), self.ny())
    }

    pub fn x_labels(&self) -> Option<&[String]> {
        self.x_labels.as_deref()
    }

    pub fn y_labels(&self) -> Option<&[String]> {
        self.y_labels.as_deref()
    }

    pub fn px(&self) -> Vec<f64> {
        self.joint.row_marginal()
    }

    pub fn py(&self) -> Vec<f64> {
        self.joint.col_marginal()
    }

    /// `P(y | x)` rows.
    pub fn channel(&self) -> Vec<Vec<f64>> {
        self.joint.row_conditionals()
    }

    pub fn h_x(&self) -> f64 {
        self.joint.row_entropy()
    }

    pub fn h_y(&self) -> f64 {
        self.joint.col_entropy()
    }

    pub fn h_y_given_x(&self) -> f64 {
        conditional_entropy(&self.joint, Axis::Rows)
    }

    pub fn h_x_given_y(&self) -> f64 {
        conditional_entropy(&self.joint, Axis::Cols)
    }

    pub fn mi(&self) -> f64 {
        mutual_information(&self.joint)
    }
}

/// A user: the set of demanded components and a non-negative weight `λ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct User {
    demands: Vec<usize>,
    weight: f64,
}

impl User {
    /// Demands are sorted and de-duplicated.
    pub fn new(demands: impl IntoIterator<Item = usize>, weight: f64) -> Self {
        let mut demands: Vec<usize> = demands.into_iter().collect();
        demands.sort_unstable();
        demands.dedup();
        User { demands, weight }
    }

    pub fn demands(&self) -> &[usize] {
        &self.demands
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn demands_component(&self, i: usize) -> bool {
        self.demands.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    components: Vec<Component>,
    users: Vec<User>,
    epsilon: f64,
    sfrl_constant: f64,
}

impl Problem {
    pub fn new(components: Vec<Component>, users: Vec<User>, epsilon: f64) -> Result<Self, ModelError> {
        let p = Problem { components, users, epsilon, sfrl_constant: DEFAULT_SFRL_CONSTANT };
        p.check()?;
        Ok(p)
    }

    pub fn with_sfrl_constant(mut self, c: f64) -> Result<Self, ModelError> {
        if !c.is_finite() || c < 0.0 {
            return Err(ModelError::BadSfrlConstant(c));
        }
        self.sfrl_constant = c;
        Ok(self)
    }

    /// Same problem with a different budget.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ModelError> {
        let mut p = self.clone();
        p.epsilon = epsilon;
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.components.is_empty() {
            return Err(ModelError::NoComponents);
        }
        if self.users.is_empty() {
            return Err(ModelError::NoUsers);
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(ModelError::BadEpsilon(self.epsilon));
        }
        let count = self.components.len();
        for (user, u) in self.users.iter().enumerate() {
            if u.demands.is_empty() {
                return Err(ModelError::EmptyDemands { user });
            }
            if let Some(&index) = u.demands.iter().find(|&&i| i >= count) {
                return Err(ModelError::DemandOutOfRange { user, index, count });
            }
            if !u.weight.is_finite() || u.weight < 0.0 {
                return Err(ModelError::BadWeight { user, weight: u.weight });
            }
        }
        Ok(())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sfrl_constant(&self) -> f64 {
        self.sfrl_constant
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn k(&self) -> usize {
        self.users.len()
    }

    /// `μ_i`: total weight of the users demanding component `i`.
    pub fn mu(&self, i: usize) -> f64 {
        self.users.iter().filter(|u| u.demands_component(i)).fold(0.0, |acc, u| acc + u.weight)
    }

    /// `Σ_j λ_j H(C_j)`, using independence across components.
    pub fn full_disclosure_utility(&self) -> f64 {
        self.users.iter().map(|u| u.weight * u.demands.iter().map(|&i| self.components[i].h_y()).sum::<f64>()).sum()
    }
}

/// Derived statistics of one component, in nats.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComponentStats {
    pub h_x: f64,
    pub h_y: f64,
    pub h_y_given_x: f64,
    pub h_x_given_y: f64,
    pub i_xy: f64,
    pub mu: f64,
    /// Functional-representation slack `I + H(X|Y)`.
    pub s1: f64,
    /// Strong functional-representation slack `I + ln(I+1) + c`.
    pub s2: f64,
    pub delta: f64,
    /// `None` when `H(X_i) = 0`.
    pub gamma: Option<f64>,
}

impl ComponentStats {
    pub fn compute(c: &Component, mu: f64, sfrl_constant: f64) -> Self {
        let h_x = c.h_x();
        let h_y = c.h_y();
        let h_y_given_x = c.h_y_given_x();
        let h_x_given_y = c.h_x_given_y();
        let i_xy = c.mi();
        let sfrl = sfrl_term(i_xy, sfrl_constant);
        let s1 = i_xy + h_x_given_y;
        let s2 = i_xy + sfrl;
        let gamma = (h_x > ZERO_FLOOR).then(|| 1.0 - h_x_given_y / h_x + sfrl / h_x);
        ComponentStats { h_x, h_y, h_y_given_x, h_x_given_y, i_xy, mu, s1, s2, delta: s1.min(s2), gamma }
    }

    pub fn is_deterministic(&self) -> bool {
        self.h_x_given_y <= DETERMINISTIC_TOL
    }
}

/// `ln(I + 1) + c`.
pub fn sfrl_term(i_xy: f64, sfrl_constant: f64) -> f64 {
    (i_xy + 1.0).ln() + sfrl_constant
}

/// Validated problem statistics and regime flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub stats: Vec<ComponentStats>,
    /// `I(X;Y) = Σ_i I(X_i;Y_i)`.
    pub total_mi: f64,
    pub epsilon: f64,
    /// `ε ≥ I(X;Y)`: releasing `Y` itself is optimal.
    pub trivial: bool,
    /// Every component has `H(X_i|Y_i) = 0`.
    pub deterministic: bool,
}

impl Analysis {
    pub fn max_mu(&self) -> f64 {
        self.stats.iter().map(|s| s.mu).fold(0.0, f64::max)
    }

    pub fn require_nontrivial(&self) -> Result<(), ModelError> {
        if self.trivial {
            Err(ModelError::TrivialRegime { eps: self.epsilon, total_mi: self.total_mi })
        } else {
            Ok(())
        }
    }
}

/// Checks the problem and computes per-component statistics.
pub fn validate(p: &Problem) -> Result<Analysis, ModelError> {
    p.check()?;
    let stats: Vec<ComponentStats> =
        p.components.iter().enumerate().map(|(i, c)| ComponentStats::compute(c, p.mu(i), p.sfrl_constant)).collect();
    let total_mi: f64 = stats.iter().map(|s| s.i_xy).sum();
    let deterministic = stats.iter().all(ComponentStats::is_deterministic);
    Ok(Analysis { trivial: p.epsilon >= total_mi, deterministic, total_mi, epsilon: p.epsilon, stats })
}

/// `Σ_j λ_j H(C_j)`, the optimum when `ε ≥ I(X;Y)` (achieved by `U = Y`).
pub fn trivial_optimum(p: &Problem) -> Result<f64, ModelError> {
    let a = validate(p)?;
    if !a.trivial {
        return Err(ModelError::NotTrivial { eps: a.epsilon, total_mi: a.total_mi });
    }
    Ok(p.full_disclosure_utility())
}
