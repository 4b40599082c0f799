//! Closed-form bounds on the weighted multi-user trade-off
//! `h_ε(P_XY) = sup { Σ_j λ_j I(C_j;U) : I(X;U) ≤ ε }`.
//!
//! All functions take the [`Analysis`] produced by [`crate::model::validate`]
//! alongside the problem, and refuse to run in the trivial regime where the
//! optimum is known exactly (see [`crate::model::trivial_optimum`]).

use crate::model::{sfrl_term, Analysis, Component, ModelError, Problem};
use serde::Serialize;
use thiserror::Error;

/// Per-component budgets are kept this far below `I(X_i;Y_i)`.
pub const CAP_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("every component has H(X_i) = 0, so no budget can be placed (ε = {0})")]
    NoPrivateComponent(f64),
    #[error("perfect-privacy bounds need ε = 0, got {0}")]
    NotPerfectPrivacy(f64),
    #[error("component {index} has H(X|Y) = {h_x_given_y}; the exact value needs X_i = f(Y_i) everywhere")]
    NotDeterministic { index: usize, h_x_given_y: f64 },
}

/// Which lower-bound construction drives the budget split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Budget on `argmax μ_i`.
    Frl,
    /// Budget on `argmax μ_i γ_i` over components with `H(X_i) > 0`.
    Esfrl,
}

/// A split of the leakage budget across components.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Allocation {
    pub eps_per_component: Vec<f64>,
    /// Component that receives the budget, if any.
    pub target: Option<usize>,
    /// Budget that could not be placed because of the per-component cap.
    pub overflow: f64,
}

impl Allocation {
    pub fn zero(n: usize) -> Self {
        Allocation { eps_per_component: vec![0.0; n], target: None, overflow: 0.0 }
    }

    pub fn total(&self) -> f64 {
        self.eps_per_component.iter().sum()
    }
}

/// Lowest index attaining the maximum of `score` among `candidates`.
fn argmax_lowest(candidates: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    candidates.fold(None, |best, (i, v)| match best {
        Some((_, bv)) if v <= bv => best,
        _ => Some((i, v)),
    })
}

/// Puts the whole budget on the component with the largest coefficient.
///
/// The coefficient is `μ_i` for [`Variant::Frl`] and `μ_i γ_i` for
/// [`Variant::Esfrl`]. The share is capped at `I(X_i;Y_i) − 1e-12` so the
/// per-component constructions stay valid; whatever does not fit is reported
/// in [`Allocation::overflow`] rather than moved elsewhere.
pub fn allocate_epsilon(p: &Problem, a: &Analysis, variant: Variant) -> Result<Allocation, BoundsError> {
    a.require_nontrivial()?;
    let eps = p.epsilon();
    let target = match variant {
        Variant::Frl => argmax_lowest(a.stats.iter().map(|s| s.mu).enumerate()).map(|(i, _)| i),
        Variant::Esfrl => {
            let best = argmax_lowest(a.stats.iter().enumerate().filter_map(|(i, s)| s.gamma.map(|g| (i, s.mu * g))));
            match best {
                Some((i, _)) => Some(i),
                None if eps > 0.0 => return Err(BoundsError::NoPrivateComponent(eps)),
                None => None,
            }
        }
    };
    let mut alloc = Allocation::zero(p.n());
    alloc.target = target;
    if let Some(i) = target {
        let cap = (a.stats[i].i_xy - CAP_MARGIN).max(0.0);
        let placed = eps.min(cap);
        alloc.eps_per_component[i] = placed;
        alloc.overflow = eps - placed;
    }
    Ok(alloc)
}

/// `ε max_i μ_i + Σ_i μ_i (H(Y_i|X_i) + δ_i)`.
pub fn upper_bound(p: &Problem, a: &Analysis) -> Result<f64, BoundsError> {
    a.require_nontrivial()?;
    Ok(upper_formula(p.epsilon(), a))
}

fn upper_formula(eps: f64, a: &Analysis) -> f64 {
    eps * a.max_mu() + a.stats.iter().map(|s| s.mu * (s.h_y_given_x + s.delta)).sum::<f64>()
}

/// `L¹ = ε max_i μ_i + Σ_i μ_i (H(Y_i|X_i) − H(X_i|Y_i))`.
pub fn lower_bound_frl(p: &Problem, a: &Analysis) -> Result<f64, BoundsError> {
    a.require_nontrivial()?;
    Ok(lower_frl_formula(p.epsilon(), a))
}

fn lower_frl_formula(eps: f64, a: &Analysis) -> f64 {
    eps * a.max_mu() + a.stats.iter().map(|s| s.mu * (s.h_y_given_x - s.h_x_given_y)).sum::<f64>()
}

/// `L² = Σ_i μ_i (H(Y_i|X_i) − (ln(I_i + 1) + c)) + ε max_i μ_i γ_i`.
///
/// The maximum runs over components with `H(X_i) > 0`. The value can be
/// negative and is returned as is.
pub fn lower_bound_sfrl(p: &Problem, a: &Analysis) -> Result<f64, BoundsError> {
    a.require_nontrivial()?;
    Ok(lower_sfrl_formula(p.epsilon(), p.sfrl_constant(), a))
}

fn lower_sfrl_formula(eps: f64, c: f64, a: &Analysis) -> f64 {
    let base: f64 = a.stats.iter().map(|s| s.mu * (s.h_y_given_x - sfrl_term(s.i_xy, c))).sum();
    let best = a.stats.iter().filter_map(|s| s.gamma.map(|g| s.mu * g)).fold(0.0, f64::max);
    base + eps * best
}

/// `β_i = H(Y_i|X_i) − α_i H(X_i|Y_i) + ε_i − (1 − α_i)(ln(I_i + 1) + c)`, `α_i = ε_i / H(X_i)`.
pub fn beta_terms(p: &Problem, a: &Analysis, eps_per_component: &[f64]) -> Vec<f64> {
    let c = p.sfrl_constant();
    a.stats
        .iter()
        .zip(eps_per_component)
        .map(|(s, &e)| {
            let alpha = if s.h_x > 0.0 { e / s.h_x } else { 0.0 };
            s.h_y_given_x - alpha * s.h_x_given_y + e - (1.0 - alpha) * sfrl_term(s.i_xy, c)
        })
        .collect()
}

/// `Σ_i μ_i (δ_i + H(X_i|Y_i))`: distance between the upper bound and `L¹`.
pub fn gap_identity(_p: &Problem, a: &Analysis) -> Result<f64, BoundsError> {
    a.require_nontrivial()?;
    Ok(a.stats.iter().map(|s| s.mu * (s.delta + s.h_x_given_y)).sum())
}

/// `Σ_y ∫₀¹ F_y(t) ln F_y(t) dt` with `F_y(t) = P_X{P(y|X) ≥ t}`.
///
/// `F_y` is a step function whose jumps sit at the values `P(y|x)`, so the
/// integral is a finite sum over the sorted thresholds. The result is ≤ 0.
pub fn excess_integral(c: &Component) -> f64 {
    let px = c.px();
    let channel = c.channel();
    let mut total = 0.0;
    for y in 0..c.ny() {
        let mut thresholds: Vec<(f64, f64)> = channel.iter().zip(&px).map(|(row, &w)| (row[y], w)).collect();
        // descending thresholds; F accumulates the mass of x whose threshold is ≥ t
        thresholds.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut f = 0.0;
        for k in 0..thresholds.len() {
            f += thresholds[k].1;
            let lo = thresholds.get(k + 1).map_or(0.0, |t| t.0);
            let width = thresholds[k].0 - lo;
            if width > 0.0 && f > 0.0 {
                total += width * f.min(1.0) * f.min(1.0).ln();
            }
        }
    }
    total.min(0.0)
}

/// Per-component perfect-privacy terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfectPrivacyTerms {
    /// `H(Y_i|X_i)`.
    pub u1: f64,
    /// `H(Y_i|X_i) + excess_integral + I(X_i;Y_i)`.
    pub u2: f64,
    pub excess: f64,
}

/// Bounds at `ε = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfectPrivacy {
    pub lower_frl: f64,
    pub lower_sfrl: f64,
    pub lower: f64,
    /// `Σ_i μ_i (H(Y_i|X_i) + δ_i)`.
    pub upper_plain: f64,
    /// `Σ_i μ_i (min(U¹_i, U²_i) + δ_i)`.
    pub upper: f64,
    pub components: Vec<PerfectPrivacyTerms>,
}

pub fn perfect_privacy_terms(c: &Component) -> PerfectPrivacyTerms {
    let u1 = c.h_y_given_x();
    let excess = excess_integral(c);
    PerfectPrivacyTerms { u1, u2: u1 + excess + c.mi(), excess }
}

/// Perfect-privacy bounds, including the threshold-integral refinement of the upper bound.
pub fn perfect_privacy_bounds(p: &Problem, a: &Analysis) -> Result<PerfectPrivacy, BoundsError> {
    if p.epsilon() != 0.0 {
        return Err(BoundsError::NotPerfectPrivacy(p.epsilon()));
    }
    let components: Vec<PerfectPrivacyTerms> = p.components().iter().map(perfect_privacy_terms).collect();
    let lower_frl = lower_frl_formula(0.0, a);
    let lower_sfrl = lower_sfrl_formula(0.0, p.sfrl_constant(), a);
    let upper = a.stats.iter().zip(&components).map(|(s, t)| s.mu * (t.u1.min(t.u2) + s.delta)).sum();
    Ok(PerfectPrivacy {
        lower_frl,
        lower_sfrl,
        lower: lower_frl.max(lower_sfrl).max(0.0),
        upper_plain: upper_formula(0.0, a),
        upper,
        components,
    })
}

/// `ε max_i μ_i + Σ_i μ_i H(Y_i|X_i)`, the exact optimum when every `X_i = f_i(Y_i)`.
pub fn deterministic_exact(p: &Problem, a: &Analysis) -> Result<f64, BoundsError> {
    a.require_nontrivial()?;
    if let Some((index, s)) = a.stats.iter().enumerate().find(|(_, s)| !s.is_deterministic()) {
        return Err(BoundsError::NotDeterministic { index, h_x_given_y: s.h_x_given_y });
    }
    Ok(p.epsilon() * a.max_mu() + a.stats.iter().map(|s| s.mu * s.h_y_given_x).sum::<f64>())
}

/// Regime flags of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regime {
    pub trivial: bool,
    pub deterministic: bool,
    pub perfect_privacy: bool,
}

/// Everything the closed forms say about one problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub epsilon: f64,
    pub regime: Regime,
    pub upper: f64,
    pub lower_frl: f64,
    pub lower_sfrl: f64,
    /// `max(0, L¹, L²)`.
    pub lower: f64,
    pub gap: f64,
    pub frl_allocation: Allocation,
    pub esfrl_allocation: Option<Allocation>,
    /// `β_i` with the whole budget on the `μ_i γ_i` maximiser (uncapped).
    pub beta: Vec<f64>,
    pub perfect_privacy: Option<PerfectPrivacy>,
    pub deterministic_exact: Option<f64>,
}

impl BoundsReport {
    /// Variant whose lower bound is larger (ties go to [`Variant::Frl`]).
    pub fn dominant_variant(&self) -> Variant {
        if self.lower_sfrl > self.lower_frl && self.esfrl_allocation.is_some() {
            Variant::Esfrl
        } else {
            Variant::Frl
        }
    }

    /// Allocation of [`BoundsReport::dominant_variant`].
    pub fn dominant_allocation(&self) -> &Allocation {
        match (self.dominant_variant(), &self.esfrl_allocation) {
            (Variant::Esfrl, Some(a)) => a,
            _ => &self.frl_allocation,
        }
    }
}

/// Assembles every applicable bound for a non-trivial problem.
pub fn bounds_report(p: &Problem, a: &Analysis) -> Result<BoundsReport, BoundsError> {
    a.require_nontrivial()?;
    let upper = upper_bound(p, a)?;
    let lower_frl = lower_bound_frl(p, a)?;
    let lower_sfrl = lower_bound_sfrl(p, a)?;
    let frl_allocation = allocate_epsilon(p, a, Variant::Frl)?;
    let esfrl_allocation = allocate_epsilon(p, a, Variant::Esfrl).ok();
    let mut uncapped = vec![0.0; p.n()];
    if let Some(i) = esfrl_allocation.as_ref().and_then(|al| al.target) {
        uncapped[i] = p.epsilon();
    }
    let perfect_privacy = if p.epsilon() == 0.0 { Some(perfect_privacy_bounds(p, a)?) } else { None };
    let deterministic_exact = if a.deterministic { Some(deterministic_exact(p, a)?) } else { None };
    Ok(BoundsReport {
        epsilon: p.epsilon(),
        regime: Regime { trivial: false, deterministic: a.deterministic, perfect_privacy: p.epsilon() == 0.0 },
        upper,
        lower_frl,
        lower_sfrl,
        lower: lower_frl.max(lower_sfrl).max(0.0),
        gap: gap_identity(p, a)?,
        frl_allocation,
        esfrl_allocation,
        beta: beta_terms(p, a, &uncapped),
        perfect_privacy,
        deterministic_exact,
    })
}
