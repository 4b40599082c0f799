//! Disclosure mechanisms: the interval-refinement functional representation,
//! its randomized extension with exact leakage, multi-user composition, and
//! the decomposition transforms used by the upper bound.
//!
//! A [`Kernel`] is a conditional law `P(u | x, y)` stored densely with `u`
//! fastest. Component kernels condition on `(x_i, y_i)`; monolithic kernels
//! condition on the flattened full tuples `(x_1..x_N, y_1..y_N)`, component 0
//! most significant.

use crate::bounds::Allocation;
use crate::model::{validate, Component, ModelError, Problem};
use crate::probcore::{check_size, entropy_of, size_cap, JointN, ProbError, ZERO_FLOOR};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Interval endpoints closer than this are merged.
pub const ENDPOINT_MERGE: f64 = 1e-12;

/// Row-sum tolerance of a kernel slice.
pub const KERNEL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechanismError {
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("kernel slice ({x}, {y}) sums to {sum}")]
    BadSlice { x: usize, y: usize, sum: f64 },
    #[error("kernel entry ({x}, {y}, {u}) is {value}")]
    BadEntry { x: usize, y: usize, u: usize, value: f64 },
    #[error("kernel table has {got} entries, expected {expected}")]
    BadShape { expected: usize, got: usize },
    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),
    #[error("per-component budget {eps} outside [0, {max}) for component {name:?}")]
    EpsOutOfRange { name: String, eps: f64, max: f64 },
    #[error("allocation has {got} entries for {expected} components")]
    AllocationMismatch { expected: usize, got: usize },
}

/// Conditional law `P(u | x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    nx: usize,
    ny: usize,
    nu: usize,
    table: Vec<f64>,
}

impl Kernel {
    pub fn new(nx: usize, ny: usize, nu: usize, table: Vec<f64>) -> Result<Self, MechanismError> {
        let expected = nx * ny * nu;
        if table.len() != expected || nu == 0 {
            return Err(MechanismError::BadShape { expected, got: table.len() });
        }
        let k = Kernel { nx, ny, nu, table };
        for x in 0..nx {
            for y in 0..ny {
                let s = k.slice(x, y);
                if let Some((u, &value)) = s.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                    return Err(MechanismError::BadEntry { x, y, u, value });
                }
                let sum: f64 = s.iter().sum();
                if (sum - 1.0).abs() > KERNEL_TOL {
                    return Err(MechanismError::BadSlice { x, y, sum });
                }
            }
        }
        Ok(k)
    }

    /// `U = Y`.
    pub fn identity(nx: usize, ny: usize) -> Self {
        let mut table = vec![0.0; nx * ny * ny];
        for x in 0..nx {
            for y in 0..ny {
                table[(x * ny + y) * ny + y] = 1.0;
            }
        }
        Kernel { nx, ny, nu: ny, table }
    }

    /// `U` constant.
    pub fn constant(nx: usize, ny: usize) -> Self {
        Kernel { nx, ny, nu: 1, table: vec![1.0; nx * ny] }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    #[inline]
    pub fn slice(&self, x: usize, y: usize) -> &[f64] {
        let o = (x * self.ny + y) * self.nu;
        &self.table[o..o + self.nu]
    }

    /// `P(x, y, u)` given `P(x, y)` (row-major, `nx × ny`).
    pub fn joint_with(&self, pxy: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.table.len());
        for (s, &w) in self.table.chunks(self.nu).zip(pxy) {
            out.extend(s.iter().map(|k| w * k));
        }
        out
    }

    /// Mixture `(1 − t)·self + t·(point mass on symbol u)`.
    pub fn mix_toward_symbol(&self, u: usize, t: f64) -> Kernel {
        let mut table: Vec<f64> = self.table.iter().map(|v| (1.0 - t) * v).collect();
        for s in table.chunks_mut(self.nu) {
            s[u] += t;
        }
        Kernel { table, ..*self }
    }

    fn check_shape(&self, nx: usize, ny: usize) -> Result<(), MechanismError> {
        if self.nx != nx || self.ny != ny {
            return Err(MechanismError::AlphabetMismatch(format!(
                "kernel conditions on {}x{} pairs, problem has {}x{}",
                self.nx, self.ny, nx, ny
            )));
        }
        Ok(())
    }
}

/// Leakage, utility and determinism of one component kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentEval {
    /// `I(X_i;U_i)`.
    pub leakage: f64,
    /// `I(Y_i;U_i)`.
    pub utility: f64,
    /// `H(Y_i|X_i,U_i)`.
    pub h_y_given_xu: f64,
    /// `I(X_i;U_i|Y_i)`.
    pub leakage_given_y: f64,
    pub card_u: usize,
}

pub fn evaluate_component(c: &Component, k: &Kernel) -> Result<ComponentEval, MechanismError> {
    k.check_shape(c.nx(), c.ny())?;
    let j = JointN::new(vec![c.nx(), c.ny(), k.nu()], k.joint_with(c.joint().table()))?;
    Ok(ComponentEval {
        leakage: j.conditional_mi(&[0], &[2], &[])?,
        utility: j.conditional_mi(&[1], &[2], &[])?,
        h_y_given_xu: (j.entropy() - j.entropy_of_axes(&[0, 2])?).max(0.0),
        leakage_given_y: j.conditional_mi(&[0], &[2], &[1])?,
        card_u: k.nu(),
    })
}

/// Interval-refinement functional representation for an arbitrary channel.
///
/// Row `x` cuts `[0, 1)` into consecutive pieces of lengths `P(y|x)` in
/// `y` order. `U` indexes the cells of the common refinement over all rows
/// with mass, and `P(u | x, y) = |cell_u ∩ piece_{x,y}| / P(y|x)`. Rows with
/// no mass (all-zero channel rows) and pairs with `P(y|x) = 0` get the cell
/// lengths, which keeps `P(u | x)` equal to the cell law everywhere.
pub fn frl_kernel(channel: &[Vec<f64>]) -> Kernel {
    let nx = channel.len();
    let ny = channel.first().map_or(0, Vec::len);
    let live: Vec<bool> = channel.iter().map(|r| r.iter().sum::<f64>() > ZERO_FLOOR).collect();

    let mut cuts: Vec<f64> = Vec::new();
    for (row, _) in channel.iter().zip(&live).filter(|(_, &l)| l) {
        let mut acc = 0.0;
        for &p in &row[..ny.saturating_sub(1)] {
            acc += p;
            cuts.push(acc);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut bounds = vec![0.0];
    for c in cuts {
        if c > ENDPOINT_MERGE && c < 1.0 - ENDPOINT_MERGE && c - bounds[bounds.len() - 1] > ENDPOINT_MERGE {
            bounds.push(c);
        }
    }
    bounds.push(1.0);
    let cells: Vec<f64> = bounds.windows(2).map(|w| w[1] - w[0]).collect();
    let nu = cells.len();

    let mut table = vec![0.0; nx * ny * nu];
    for x in 0..nx {
        if !live[x] {
            for y in 0..ny {
                table[(x * ny + y) * nu..(x * ny + y + 1) * nu].copy_from_slice(&cells);
            }
            continue;
        }
        let row = &channel[x];
        // Assign each cell to the piece containing its midpoint.
        let mut edges = Vec::with_capacity(ny);
        let mut acc = 0.0;
        for &p in row {
            acc += p;
            edges.push(acc);
        }
        for (u, w) in bounds.windows(2).enumerate() {
            let mid = 0.5 * (w[0] + w[1]);
            let y = edges.iter().position(|&e| mid < e).unwrap_or(ny - 1);
            table[(x * ny + y) * nu + u] = cells[u];
        }
        for y in 0..ny {
            let s = &mut table[(x * ny + y) * nu..(x * ny + y + 1) * nu];
            let sum: f64 = s.iter().sum();
            if sum > 0.0 && row[y] > ZERO_FLOOR {
                s.iter_mut().for_each(|v| *v /= sum);
            } else {
                s.copy_from_slice(&cells);
            }
        }
    }
    Kernel { nx, ny, nu, table }
}

/// Functional representation of `Y_i` given `X_i`: `U ⟂ X`, `Y = g(X, U)`,
/// `|U| ≤ |X|(|Y| − 1) + 1`.
pub fn frl_construct(c: &Component) -> Kernel {
    frl_kernel(&c.channel())
}

/// Randomized functional representation with leakage exactly `eps`.
///
/// `U = (Ũ, W)` where `Ũ` is [`frl_construct`] and `W` equals `X` with
/// probability `α = eps / H(X)` and an extra constant symbol otherwise,
/// independently of everything else. Symbol `ũ·(|X| + 1) + w` encodes the
/// pair; `w = |X|` is the constant.
pub fn efrl_construct(c: &Component, eps: f64) -> Result<Kernel, MechanismError> {
    let max = c.mi();
    if !eps.is_finite() || eps < 0.0 || (eps > 0.0 && eps >= max) {
        return Err(MechanismError::EpsOutOfRange { name: c.name().to_string(), eps, max });
    }
    let alpha = if eps > 0.0 { eps / c.h_x() } else { 0.0 };
    let base = frl_construct(c);
    let (nx, ny, nt) = (c.nx(), c.ny(), base.nu());
    let nw = nx + 1;
    let nu = nt * nw;
    let mut table = vec![0.0; nx * ny * nu];
    for x in 0..nx {
        for y in 0..ny {
            let s = &mut table[(x * ny + y) * nu..(x * ny + y + 1) * nu];
            for (t, &k) in base.slice(x, y).iter().enumerate() {
                s[t * nw + x] += alpha * k;
                s[t * nw + nx] += (1.0 - alpha) * k;
            }
        }
    }
    Ok(Kernel { nx, ny, nu, table })
}

/// How a component kernel was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Construction {
    Frl,
    Efrl {
        eps: f64,
    },
    Identity,
    Constant,
    /// Anything else, e.g. a decomposition output.
    Other,
}

/// Product mechanism `U = (U_1, …, U_N)`, each `U_i` drawn from its own
/// kernel given `(X_i, Y_i)` and independently of the other components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedMechanism {
    pub kernels: Vec<Kernel>,
    pub allocation: Allocation,
    pub tags: Vec<Construction>,
}

impl ComposedMechanism {
    pub fn new(kernels: Vec<Kernel>, allocation: Allocation, tags: Vec<Construction>) -> Result<Self, MechanismError> {
        if kernels.len() != tags.len() || kernels.len() != allocation.eps_per_component.len() {
            return Err(MechanismError::AllocationMismatch {
                expected: kernels.len(),
                got: allocation.eps_per_component.len().min(tags.len()),
            });
        }
        Ok(ComposedMechanism { kernels, allocation, tags })
    }

    /// Every component releases `Y_i`.
    pub fn identity(p: &Problem) -> Self {
        let kernels = p.components().iter().map(|c| Kernel::identity(c.nx(), c.ny())).collect();
        ComposedMechanism { kernels, allocation: Allocation::zero(p.n()), tags: vec![Construction::Identity; p.n()] }
    }

    /// Every component releases nothing.
    pub fn constant(p: &Problem) -> Self {
        let kernels = p.components().iter().map(|c| Kernel::constant(c.nx(), c.ny())).collect();
        ComposedMechanism { kernels, allocation: Allocation::zero(p.n()), tags: vec![Construction::Constant; p.n()] }
    }

    pub fn card_u(&self) -> Vec<usize> {
        self.kernels.iter().map(Kernel::nu).collect()
    }
}

/// Builds the lower-bound mechanism for an allocation: components with a
/// positive share get [`efrl_construct`], the rest [`frl_construct`].
pub fn compose_multiuser(p: &Problem, alloc: &Allocation) -> Result<ComposedMechanism, MechanismError> {
    if alloc.eps_per_component.len() != p.n() {
        return Err(MechanismError::AllocationMismatch { expected: p.n(), got: alloc.eps_per_component.len() });
    }
    let mut kernels = Vec::with_capacity(p.n());
    let mut tags = Vec::with_capacity(p.n());
    for (c, &eps) in p.components().iter().zip(&alloc.eps_per_component) {
        if eps > 0.0 {
            kernels.push(efrl_construct(c, eps)?);
            tags.push(Construction::Efrl { eps });
        } else if eps == 0.0 {
            kernels.push(frl_construct(c));
            tags.push(Construction::Frl);
        } else {
            return Err(MechanismError::EpsOutOfRange { name: c.name().to_string(), eps, max: c.mi() });
        }
    }
    Ok(ComposedMechanism { kernels, allocation: alloc.clone(), tags })
}

/// Leakage, utilities and objective of a mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismReport {
    /// `I(X;U)`.
    pub leakage: f64,
    /// `I(C_j;U)` per user.
    pub user_utilities: Vec<f64>,
    /// `Σ_j λ_j I(C_j;U)`.
    pub objective: f64,
    /// `H(Y|X,U)`.
    pub h_y_given_xu: f64,
    /// Alphabet size per released part (one entry for monolithic kernels).
    pub card_u: Vec<usize>,
    /// Per-component evaluation (composed mechanisms only).
    pub components: Vec<ComponentEval>,
}

/// Either form of mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Composed(ComposedMechanism),
    Monolithic(Kernel),
}

pub fn evaluate(p: &Problem, m: &Mechanism) -> Result<MechanismReport, MechanismError> {
    match m {
        Mechanism::Composed(c) => evaluate_composed(p, c),
        Mechanism::Monolithic(k) => evaluate_monolithic(p, k),
    }
}

/// Evaluates per component and sums; exact because the parts are independent.
pub fn evaluate_composed(p: &Problem, m: &ComposedMechanism) -> Result<MechanismReport, MechanismError> {
    if m.kernels.len() != p.n() {
        return Err(MechanismError::AlphabetMismatch(format!(
            "mechanism has {} component kernels, problem has {} components",
            m.kernels.len(),
            p.n()
        )));
    }
    let comps: Vec<ComponentEval> =
        p.components().iter().zip(&m.kernels).map(|(c, k)| evaluate_component(c, k)).collect::<Result<_, _>>()?;
    let user_utilities: Vec<f64> =
        p.users().iter().map(|u| u.demands().iter().map(|&i| comps[i].utility).sum()).collect();
    let objective = p.users().iter().zip(&user_utilities).map(|(u, v)| u.weight() * v).sum();
    Ok(MechanismReport {
        leakage: comps.iter().map(|c| c.leakage).sum(),
        objective,
        user_utilities,
        h_y_given_xu: comps.iter().map(|c| c.h_y_given_xu).sum(),
        card_u: m.card_u(),
        components: comps,
    })
}

/// The product law of all components over flattened `(x, y)` tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductLaw {
    pub x_axes: Vec<usize>,
    pub y_axes: Vec<usize>,
    pub nx: usize,
    pub ny: usize,
    /// `P(x, y)`, row-major `nx × ny`.
    pub pxy: Vec<f64>,
}

impl ProductLaw {
    pub fn new(p: &Problem, cap: usize) -> Result<Self, MechanismError> {
        let x_axes: Vec<usize> = p.components().iter().map(Component::nx).collect();
        let y_axes: Vec<usize> = p.components().iter().map(Component::ny).collect();
        let nx = x_axes.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
        let ny = y_axes.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
        check_size(nx.saturating_mul(ny), cap)?;
        let mut pxy = vec![0.0; nx * ny];
        let mut xd = vec![0usize; p.n()];
        let mut yd = vec![0usize; p.n()];
        for x in 0..nx {
            digits(x, &x_axes, &mut xd);
            for y in 0..ny {
                digits(y, &y_axes, &mut yd);
                pxy[x * ny + y] = p.components().iter().enumerate().map(|(i, c)| c.joint().get(xd[i], yd[i])).product();
            }
        }
        Ok(ProductLaw { x_axes, y_axes, nx, ny, pxy })
    }

    pub fn n(&self) -> usize {
        self.x_axes.len()
    }

    /// Axes layout of the `(X_1..X_N, Y_1..Y_N, U)` tensor.
    pub fn tensor_axes(&self, nu: usize) -> Vec<usize> {
        self.x_axes.iter().chain(&self.y_axes).copied().chain([nu]).collect()
    }

    pub fn x_axis_ids(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    pub fn y_axis_id(&self, i: usize) -> usize {
        self.n() + i
    }

    pub fn u_axis_id(&self) -> usize {
        2 * self.n()
    }

    /// `P(x, y, u)` as a tensor over `(X_1..X_N, Y_1..Y_N, U)`.
    pub fn with_kernel(&self, k: &Kernel, cap: usize) -> Result<JointN, MechanismError> {
        k.check_shape(self.nx, self.ny)?;
        check_size(self.nx.saturating_mul(self.ny).saturating_mul(k.nu()), cap)?;
        Ok(JointN::new(self.tensor_axes(k.nu()), k.joint_with(&self.pxy))?)
    }
}

/// Mixed-radix digits of `v`, most significant first.
pub fn digits(mut v: usize, radix: &[usize], out: &mut [usize]) {
    for k in (0..radix.len()).rev() {
        out[k] = v % radix[k];
        v /= radix[k];
    }
}

/// Evaluates a kernel over the full joint by materializing `P(x, y, u)`.
pub fn evaluate_monolithic(p: &Problem, k: &Kernel) -> Result<MechanismReport, MechanismError> {
    let law = ProductLaw::new(p, size_cap())?;
    evaluate_on_law(p, &law, k)
}

pub(crate) fn evaluate_on_law(p: &Problem, law: &ProductLaw, k: &Kernel) -> Result<MechanismReport, MechanismError> {
    let j = law.with_kernel(k, size_cap())?;
    let xs = law.x_axis_ids();
    let u = [law.u_axis_id()];
    let user_utilities: Vec<f64> = p
        .users()
        .iter()
        .map(|usr| {
            let ys: Vec<usize> = usr.demands().iter().map(|&i| law.y_axis_id(i)).collect();
            j.conditional_mi(&ys, &u, &[])
        })
        .collect::<Result<_, _>>()?;
    let xu: Vec<usize> = xs.iter().copied().chain(u).collect();
    Ok(MechanismReport {
        leakage: j.conditional_mi(&xs, &u, &[])?,
        objective: p.users().iter().zip(&user_utilities).map(|(usr, v)| usr.weight() * v).sum(),
        user_utilities,
        h_y_given_xu: (j.entropy() - j.entropy_of_axes(&xu)?).max(0.0),
        card_u: vec![k.nu()],
        components: Vec::new(),
    })
}

/// Flattens a composed mechanism into one kernel over the full joint.
pub fn materialize(p: &Problem, m: &ComposedMechanism) -> Result<Kernel, MechanismError> {
    let law = ProductLaw::new(p, size_cap())?;
    if m.kernels.len() != p.n() {
        return Err(MechanismError::AlphabetMismatch("component count".into()));
    }
    for (k, c) in m.kernels.iter().zip(p.components()) {
        k.check_shape(c.nx(), c.ny())?;
    }
    let u_axes = m.card_u();
    let nu = u_axes.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
    check_size(law.nx.saturating_mul(law.ny).saturating_mul(nu), size_cap())?;
    let n = p.n();
    let mut table = vec![0.0; law.nx * law.ny * nu];
    let (mut xd, mut yd, mut ud) = (vec![0; n], vec![0; n], vec![0; n]);
    for x in 0..law.nx {
        digits(x, &law.x_axes, &mut xd);
        for y in 0..law.ny {
            digits(y, &law.y_axes, &mut yd);
            let base = (x * law.ny + y) * nu;
            for u in 0..nu {
                digits(u, &u_axes, &mut ud);
                table[base + u] = (0..n).map(|i| m.kernels[i].slice(xd[i], yd[i])[ud[i]]).product();
            }
        }
    }
    Ok(Kernel { nx: law.nx, ny: law.ny, nu, table })
}

/// Result of the leakage-preserving decomposition of a monolithic mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Kernel of `Ū_i` given `(x_i, y_i)`; it does not depend on `y_i`.
    /// Symbol `u·Π_{k<i}|X_k| + flat(x_1..x_{i-1})` encodes `(u, x_1..x_{i-1})`.
    pub kernels: Vec<Kernel>,
    pub checks: DecompositionChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionChecks {
    /// `I(X;U)`.
    pub leakage_u: f64,
    /// `I(X;Ū)` evaluated on the materialized joint.
    pub leakage_bar: f64,
    /// `I(Ū; Y, U | X)`.
    pub markov_residual: f64,
    /// `Σ_i H(Ū_i, Y_i, X_i) − H(Ū, Y, X)`.
    pub independence_residual: f64,
}

impl DecompositionChecks {
    pub fn passes(&self, tol: f64) -> bool {
        (self.leakage_u - self.leakage_bar).abs() <= tol
            && self.markov_residual <= tol
            && self.independence_residual <= tol
    }
}

/// Splits a monolithic mechanism into independent per-component parts
/// `Ū_i` on `U × X_1 × … × X_{i−1}` with `P(ū_i | x_i) = P(x_1..x_{i−1}, u | x_i)`,
/// then checks leakage preservation, the Markov chain `Ū − X − (Y, U)`, and
/// mutual independence of the triples `(Ū_i, Y_i, X_i)`.
pub fn decompose_transform(p: &Problem, m: &Kernel) -> Result<Decomposition, MechanismError> {
    let cap = size_cap();
    let law = ProductLaw::new(p, cap)?;
    let j = law.with_kernel(m, cap)?;
    let n = p.n();
    let nu = m.nu();
    let u_axis = law.u_axis_id();

    let mut bar_sizes = Vec::with_capacity(n);
    let mut bar_given_x: Vec<Vec<f64>> = Vec::with_capacity(n); // [x_i][ū] row-major
    for (i, comp) in p.components().iter().enumerate() {
        let prefix = &law.x_axes[..i];
        let prefix_size: usize = prefix.iter().product();
        let size = nu * prefix_size;
        // marginal over (U, X_1..X_{i-1}, X_i), flattened in exactly the ū-then-x_i order
        let axes: Vec<usize> = std::iter::once(u_axis).chain(0..=i).collect();
        let marg = j.marginal(&axes)?;
        let px = comp.px();
        let nxi = comp.nx();
        let mut cond = vec![0.0; nxi * size];
        for bar in 0..size {
            for x in 0..nxi {
                let v = marg.table()[bar * nxi + x];
                cond[x * size + bar] = if px[x] > 0.0 { v / px[x] } else { 0.0 };
            }
        }
        // zero-mass rows cannot occur after pruning, but keep slices normalized regardless
        for x in 0..nxi {
            let s = &mut cond[x * size..(x + 1) * size];
            let sum: f64 = s.iter().sum();
            if sum > 0.0 {
                s.iter_mut().for_each(|v| *v /= sum);
            } else {
                s[0] = 1.0;
            }
        }
        bar_sizes.push(size);
        bar_given_x.push(cond);
    }

    let total = j.table().len().saturating_mul(bar_sizes.iter().product());
    check_size(total, cap)?;
    let mut axes = j.axes().to_vec();
    axes.extend_from_slice(&bar_sizes);
    let bar_total: usize = bar_sizes.iter().product();
    let mut table = Vec::with_capacity(total);
    let mut idx = vec![0usize; 2 * n + 1];
    let mut bd = vec![0usize; n];
    for &v in j.table() {
        for b in 0..bar_total {
            digits(b, &bar_sizes, &mut bd);
            let w: f64 = (0..n).map(|i| bar_given_x[i][idx[i] * bar_sizes[i] + bd[i]]).product();
            table.push(v * w);
        }
        crate::probcore::increment(&mut idx, j.axes());
    }
    let z = JointN::new(axes, table)?;
    let xs: Vec<usize> = (0..n).collect();
    let ys: Vec<usize> = (n..2 * n).collect();
    let bars: Vec<usize> = (2 * n + 1..3 * n + 1).collect();
    let yu: Vec<usize> = ys.iter().copied().chain([u_axis]).collect();
    let mut triples_h = 0.0;
    for i in 0..n {
        triples_h += z.entropy_of_axes(&[bars[i], n + i, i])?;
    }
    let all: Vec<usize> = bars.iter().chain(&ys).chain(&xs).copied().collect();
    let checks = DecompositionChecks {
        leakage_u: z.conditional_mi(&xs, &[u_axis], &[])?,
        leakage_bar: z.conditional_mi(&xs, &bars, &[])?,
        markov_residual: z.conditional_mi(&bars, &yu, &xs)?,
        independence_residual: (triples_h - z.entropy_of_axes(&all)?).max(0.0),
    };

    let kernels = p
        .components()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let size = bar_sizes[i];
            let mut t = Vec::with_capacity(c.nx() * c.ny() * size);
            for x in 0..c.nx() {
                for _ in 0..c.ny() {
                    t.extend_from_slice(&bar_given_x[i][x * size..(x + 1) * size]);
                }
            }
            Kernel { nx: c.nx(), ny: c.ny(), nu: size, table: t }
        })
        .collect();
    Ok(Decomposition { kernels, checks })
}

/// Outcome of the per-component transform that bounds the upper bound's slack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerComponentChecks {
    /// `I(X;U)` of the input mechanism.
    pub leakage_u: f64,
    /// `I(X;U*)`.
    pub leakage_star: f64,
    /// `I(C_j;U)` per user.
    pub utility_u: Vec<f64>,
    /// `I(C_j;U*)` per user.
    pub utility_star: Vec<f64>,
    /// `Δ_j = Σ_{i ∈ C_j} (I(X_i;Y_i) + H(X_i|Y_i))`.
    pub slack: Vec<f64>,
    /// `max_i H(Y_i | X_i, U*_i)`.
    pub determinism_residual: f64,
}

impl PerComponentChecks {
    pub fn passes(&self, tol: f64) -> bool {
        (self.leakage_u - self.leakage_star).abs() <= tol
            && self.utility_u.iter().zip(&self.utility_star).zip(&self.slack).all(|((u, s), d)| *u <= s + d + tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerComponentTransform {
    /// `U*_i = (Ū_i, Ũ_i)` kernels; symbol `ū·|Ũ_i| + ũ`.
    pub mechanism: ComposedMechanism,
    pub checks: PerComponentChecks,
}

/// Builds `U*_i = (Ũ_i, Ū_i)` where `Ũ_i` is the functional representation of
/// `Y_i` given `(Ū_i, X_i)`, and checks leakage equality and the per-user
/// utility bound `I(C_j;U) ≤ I(C_j;U*) + Δ_j`.
pub fn per_component_transform(p: &Problem, m: &Kernel) -> Result<PerComponentTransform, MechanismError> {
    let dec = decompose_transform(p, m)?;
    let mut kernels = Vec::with_capacity(p.n());
    for (c, bar) in p.components().iter().zip(&dec.kernels) {
        let (nx, ny, nb) = (c.nx(), c.ny(), bar.nu());
        // augmented row r = ū·nx + x; P(y | ū, x) = P(y | x) because Ū depends on X alone
        let chan = c.channel();
        let px = c.px();
        let mut aug = Vec::with_capacity(nb * nx);
        for b in 0..nb {
            for x in 0..nx {
                let pb = bar.slice(x, 0)[b] * px[x];
                aug.push(if pb > ZERO_FLOOR { chan[x].clone() } else { vec![0.0; ny] });
            }
        }
        let tilde = frl_kernel(&aug);
        let nt = tilde.nu();
        let nu = nb * nt;
        let mut table = vec![0.0; nx * ny * nu];
        for x in 0..nx {
            for y in 0..ny {
                let s = &mut table[(x * ny + y) * nu..(x * ny + y + 1) * nu];
                for b in 0..nb {
                    let pb = bar.slice(x, y)[b];
                    if pb == 0.0 {
                        continue;
                    }
                    for (t, &k) in tilde.slice(b * nx + x, y).iter().enumerate() {
                        s[b * nt + t] = pb * k;
                    }
                }
            }
        }
        kernels.push(Kernel { nx, ny, nu, table });
    }
    let mechanism =
        ComposedMechanism { tags: vec![Construction::Other; p.n()], allocation: Allocation::zero(p.n()), kernels };
    let star = evaluate_composed(p, &mechanism)?;
    let orig = evaluate_monolithic(p, m)?;
    let a = validate(p)?;
    let slack = p.users().iter().map(|u| u.demands().iter().map(|&i| a.stats[i].s1).sum()).collect();
    let checks = PerComponentChecks {
        leakage_u: orig.leakage,
        leakage_star: star.leakage,
        utility_u: orig.user_utilities,
        utility_star: star.user_utilities,
        slack,
        determinism_residual: star.components.iter().map(|c| c.h_y_given_xu).fold(0.0, f64::max),
    };
    Ok(PerComponentTransform { mechanism, checks })
}

/// Entropy of the released symbol under a component kernel (for diagnostics).
pub fn output_entropy(c: &Component, k: &Kernel) -> f64 {
    let j = k.joint_with(c.joint().table());
    let mut pu = vec![0.0; k.nu()];
    for s in j.chunks(k.nu()) {
        for (a, v) in pu.iter_mut().zip(s) {
            *a += v;
        }
    }
    entropy_of(&pu)
}
