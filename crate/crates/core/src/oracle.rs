//! Seeded random-restart local search for good feasible mechanisms on small
//! instances. The result is always an achieved, feasible mechanism, so its
//! objective is a lower estimate of the optimum, never a certificate.
//!
//! The search state is a set of blocks, each a kernel `P(u | x, y)` with
//! incrementally maintained `P(x,u)`, `P(u)` and `P(c,u)` tables. The
//! monolithic space uses one block over the flattened full tuples; the
//! product space uses one block per component with the utility weight `μ_i`.
//! All moves follow straight lines in kernel space. Along a line the
//! objective and the leakage are both convex, so only segment endpoints
//! (clipped to the leakage budget by bisection) are ever evaluated.

use crate::bounds::{bounds_report, Allocation, BoundsError};
use crate::mechanisms::{
    compose_multiuser, digits, evaluate, evaluate_component, ComposedMechanism, Construction, Kernel, Mechanism,
    MechanismError, ProductLaw,
};
use crate::model::{validate, Problem};
use crate::probcore::{entropy_of, size_cap, xlogx};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Computed leakage up to `eps + FEASIBILITY_SLACK` counts as feasible.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// Budget overrun tolerated inside the search, kept below
/// [`FEASIBILITY_SLACK`] so recomputation drift never triggers a projection.
const SEARCH_SLACK: f64 = 1e-13;

/// Width of the leakage window targeted by [`leakage_project`].
pub const PROJECT_TOL: f64 = 1e-9;

/// Slack on the `mechanism ≤ oracle` leg of [`sandwich_check`].
pub const SANDWICH_SLACK: f64 = 1e-6;

/// Monolithic restarts are skipped above this many kernel entries.
pub const MONOLITHIC_BUDGET: usize = 40_000;

const BISECT_ITERS: usize = 48;
const STALL_SWEEPS: usize = 3;
const MAX_EXCHANGES: usize = 4000;
const MAX_SHIFTS: usize = 400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("invalid oracle configuration: {0}")]
    BadConfig(String),
}

/// Where the search looks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchSpace {
    /// Independent per-component kernels.
    Product,
    /// One kernel over the full joint.
    Monolithic,
    /// Alternate restarts between the two; monolithic restarts fall back to
    /// the product space when the kernel would exceed [`MONOLITHIC_BUDGET`].
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Cap on `|U|` (per component in the product space). `None` uses
    /// `|X|(|Y|−1)+2` for monolithic kernels and `|X_i||Y_i|+1` per component.
    pub card_u: Option<usize>,
    pub restarts: usize,
    /// Maximum sweeps per restart.
    pub iters: usize,
    pub seed: u64,
    /// A sweep gaining less than this counts as stalled.
    pub tolerance: f64,
    pub space: SearchSpace,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { card_u: None, restarts: 8, iters: 200, seed: 0, tolerance: 1e-12, space: SearchSpace::Product }
    }
}

impl OracleConfig {
    fn check(&self) -> Result<(), OracleError> {
        if self.card_u == Some(0) {
            return Err(OracleError::BadConfig("card_u must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(OracleError::BadConfig("restarts must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(OracleError::BadConfig("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_objective: f64,
    pub leakage_at_best: f64,
    pub best: Mechanism,
    pub best_restart: usize,
    /// Best objective of each restart, in restart order.
    pub trace: Vec<f64>,
}

impl OracleResult {
    /// The best mechanism as a kernel over the full joint.
    pub fn best_kernel(&self, p: &Problem) -> Result<Kernel, MechanismError> {
        match &self.best {
            Mechanism::Monolithic(k) => Ok(k.clone()),
            Mechanism::Composed(m) => crate::mechanisms::materialize(p, m),
        }
    }
}

#[inline]
fn phi(p: f64) -> f64 {
    xlogx(p)
}

struct Group {
    weight: f64,
    map: Vec<usize>,
    nc: usize,
    h_c: f64,
}

struct Block {
    nx: usize,
    ny: usize,
    nu: usize,
    pxy: Vec<f64>,
    px: Vec<f64>,
    h_x: f64,
    groups: Vec<Group>,
}

impl Block {
    fn columns(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nx)
            .flat_map(move |x| (0..self.ny).map(move |y| (x, y)))
            .filter(|&(x, y)| self.pxy[x * self.ny + y] > 0.0)
    }
}

#[derive(Clone)]
struct BlockState {
    k: Vec<f64>,
    pxu: Vec<f64>,
    pu: Vec<f64>,
    pcu: Vec<Vec<f64>>,
    sxu: Vec<f64>,
    sxu_tot: f64,
    su: f64,
    scu: Vec<Vec<f64>>,
    scu_tot: Vec<f64>,
}

impl BlockState {
    fn build(b: &Block, k: Vec<f64>) -> Self {
        let nu = b.nu;
        let mut pxu = vec![0.0; b.nx * nu];
        let mut pu = vec![0.0; nu];
        let mut pcu: Vec<Vec<f64>> = b.groups.iter().map(|g| vec![0.0; g.nc * nu]).collect();
        for x in 0..b.nx {
            for y in 0..b.ny {
                let w = b.pxy[x * b.ny + y];
                if w == 0.0 {
                    continue;
                }
                let s = &k[(x * b.ny + y) * nu..(x * b.ny + y + 1) * nu];
                for u in 0..nu {
                    let v = w * s[u];
                    pxu[x * nu + u] += v;
                    pu[u] += v;
                    for (g, t) in b.groups.iter().zip(pcu.iter_mut()) {
                        t[g.map[y] * nu + u] += v;
                    }
                }
            }
        }
        let row_sums = |t: &[f64]| t.chunks(nu).map(|r| r.iter().map(|&v| phi(v)).sum()).collect::<Vec<f64>>();
        let sxu = row_sums(&pxu);
        let scu: Vec<Vec<f64>> = pcu.iter().map(|t| row_sums(t)).collect();
        BlockState {
            sxu_tot: sxu.iter().sum(),
            su: pu.iter().map(|&v| phi(v)).sum(),
            scu_tot: scu.iter().map(|r| r.iter().sum()).collect(),
            k,
            pxu,
            pu,
            pcu,
            sxu,
            scu,
        }
    }

    fn leak(&self, b: &Block) -> f64 {
        b.h_x - self.su + self.sxu_tot
    }

    fn obj(&self, b: &Block) -> f64 {
        b.groups.iter().zip(&self.scu_tot).map(|(g, s)| g.weight * (g.h_c - self.su + s)).sum()
    }

    fn slice(&self, b: &Block, x: usize, y: usize) -> &[f64] {
        &self.k[(x * b.ny + y) * b.nu..(x * b.ny + y + 1) * b.nu]
    }
}

/// Accumulated table deltas of a tentative multi-slice change.
struct Delta {
    du: Vec<f64>,
    dx: Vec<f64>,
    xs: Vec<usize>,
    dc: Vec<Vec<f64>>,
    cs: Vec<Vec<usize>>,
    slices: Vec<(usize, usize, Vec<f64>)>,
}

impl Delta {
    fn new(b: &Block) -> Self {
        Delta {
            du: vec![0.0; b.nu],
            dx: vec![0.0; b.nx * b.nu],
            xs: Vec::new(),
            dc: b.groups.iter().map(|g| vec![0.0; g.nc * b.nu]).collect(),
            cs: vec![Vec::new(); b.groups.len()],
            slices: Vec::new(),
        }
    }

    fn clear(&mut self, nu: usize) {
        self.du.iter_mut().for_each(|v| *v = 0.0);
        for &x in &self.xs {
            self.dx[x * nu..(x + 1) * nu].iter_mut().for_each(|v| *v = 0.0);
        }
        self.xs.clear();
        for (d, cs) in self.dc.iter_mut().zip(self.cs.iter_mut()) {
            for &c in cs.iter() {
                d[c * nu..(c + 1) * nu].iter_mut().for_each(|v| *v = 0.0);
            }
            cs.clear();
        }
        self.slices.clear();
    }

    fn add(&mut self, b: &Block, st: &BlockState, x: usize, y: usize, new: Vec<f64>) {
        let nu = b.nu;
        let w = b.pxy[x * b.ny + y];
        let old = st.slice(b, x, y);
        if !self.xs.contains(&x) {
            self.xs.push(x);
        }
        for (gi, g) in b.groups.iter().enumerate() {
            let c = g.map[y];
            if !self.cs[gi].contains(&c) {
                self.cs[gi].push(c);
            }
        }
        for u in 0..nu {
            let d = w * (new[u] - old[u]);
            self.du[u] += d;
            self.dx[x * nu + u] += d;
            for (gi, g) in b.groups.iter().enumerate() {
                self.dc[gi][g.map[y] * nu + u] += d;
            }
        }
        self.slices.push((x, y, new));
    }

    /// `(objective, leakage)` of the block after the change.
    fn score(&self, b: &Block, st: &BlockState) -> (f64, f64) {
        let nu = b.nu;
        let su: f64 = st.pu.iter().zip(&self.du).map(|(p, d)| phi(p + d)).sum();
        let mut sxu_tot = st.sxu_tot;
        for &x in &self.xs {
            let r = &st.pxu[x * nu..(x + 1) * nu];
            let d = &self.dx[x * nu..(x + 1) * nu];
            sxu_tot += r.iter().zip(d).map(|(p, d)| phi(p + d)).sum::<f64>() - st.sxu[x];
        }
        let mut obj = 0.0;
        for (gi, g) in b.groups.iter().enumerate() {
            let mut s = st.scu_tot[gi];
            for &c in &self.cs[gi] {
                let r = &st.pcu[gi][c * nu..(c + 1) * nu];
                let d = &self.dc[gi][c * nu..(c + 1) * nu];
                s += r.iter().zip(d).map(|(p, d)| phi(p + d)).sum::<f64>() - st.scu[gi][c];
            }
            obj += g.weight * (g.h_c - su + s);
        }
        (obj, b.h_x - su + sxu_tot)
    }

    fn apply(&mut self, b: &Block, st: &mut BlockState) {
        let nu = b.nu;
        for (p, d) in st.pu.iter_mut().zip(&self.du) {
            *p = (*p + d).max(0.0);
        }
        st.su = st.pu.iter().map(|&v| phi(v)).sum();
        for &x in &self.xs {
            let r = &mut st.pxu[x * nu..(x + 1) * nu];
            for (p, d) in r.iter_mut().zip(&self.dx[x * nu..(x + 1) * nu]) {
                *p = (*p + d).max(0.0);
            }
            let s: f64 = r.iter().map(|&v| phi(v)).sum();
            st.sxu_tot += s - st.sxu[x];
            st.sxu[x] = s;
        }
        for gi in 0..b.groups.len() {
            for &c in &self.cs[gi] {
                let r = &mut st.pcu[gi][c * nu..(c + 1) * nu];
                for (p, d) in r.iter_mut().zip(&self.dc[gi][c * nu..(c + 1) * nu]) {
                    *p = (*p + d).max(0.0);
                }
                let s: f64 = r.iter().map(|&v| phi(v)).sum();
                st.scu_tot[gi] += s - st.scu[gi][c];
                st.scu[gi][c] = s;
            }
        }
        for (x, y, new) in self.slices.drain(..) {
            st.k[(x * b.ny + y) * nu..(x * b.ny + y + 1) * nu].copy_from_slice(&new);
        }
        self.clear(nu);
    }
}

fn exp_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[derive(Clone, Copy)]
enum Seed {
    ReleaseY,
    Coupling,
    RandomMap,
    Dense,
}

fn seed_kernel(b: &Block, kind: Seed, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (nx, ny, nu) = (b.nx, b.ny, b.nu);
    let mut k = vec![0.0; nx * ny * nu];
    match kind {
        Seed::ReleaseY => {
            for x in 0..nx {
                for y in 0..ny {
                    k[(x * ny + y) * nu + y % nu] = 1.0;
                }
            }
        }
        Seed::RandomMap => {
            for s in k.chunks_mut(nu) {
                s[rng.gen_range(0..nu)] = 1.0;
            }
        }
        Seed::Dense => {
            for s in k.chunks_mut(nu) {
                s.copy_from_slice(&exp_weights(rng, nu));
            }
        }
        Seed::Coupling => {
            // North-west corner coupling of P(y|x) with a random q, same y order for every x.
            let support = rng.gen_range(1..=nu);
            let mut q = vec![0.0; nu];
            for (u, w) in (0..support).zip(exp_weights(rng, support)) {
                q[u] = w;
            }
            q.shuffle(rng);
            let mut order: Vec<usize> = (0..ny).collect();
            order.shuffle(rng);
            let mut qcum = Vec::with_capacity(nu);
            let mut acc = 0.0;
            for &v in &q {
                qcum.push((acc, acc + v));
                acc += v;
            }
            for x in 0..nx {
                let row = &b.pxy[x * ny..(x + 1) * ny];
                let px = b.px[x];
                let mut lo = 0.0;
                for &y in &order {
                    let len = row[y] / px;
                    let s = &mut k[(x * ny + y) * nu..(x * ny + y + 1) * nu];
                    if len <= 0.0 {
                        s.copy_from_slice(&q);
                        continue;
                    }
                    let hi = lo + len;
                    for u in 0..nu {
                        let ov = (hi.min(qcum[u].1) - lo.max(qcum[u].0)).max(0.0);
                        s[u] = ov / len;
                    }
                    let sum: f64 = s.iter().sum();
                    if sum > 0.0 {
                        s.iter_mut().for_each(|v| *v /= sum);
                    } else {
                        s.copy_from_slice(&q);
                    }
                    lo = hi;
                }
            }
        }
    }
    k
}

struct Search<'a> {
    blocks: &'a [Block],
    states: Vec<BlockState>,
    deltas: Vec<Delta>,
    eps: f64,
    /// Per-block leakage caps used before the shared-budget phase.
    budgets: Option<Vec<f64>>,
    obj: f64,
    leak: f64,
    block_obj: Vec<f64>,
    block_leak: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(blocks: &'a [Block], kernels: Vec<Vec<f64>>, eps: f64, budgets: Option<Vec<f64>>) -> Self {
        let states: Vec<BlockState> = blocks.iter().zip(kernels).map(|(b, k)| BlockState::build(b, k)).collect();
        let deltas = blocks.iter().map(Delta::new).collect();
        let mut s =
            Search { blocks, states, deltas, eps, budgets, obj: 0.0, leak: 0.0, block_obj: vec![], block_leak: vec![] };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        for (st, b) in self.states.iter_mut().zip(self.blocks) {
            *st = BlockState::build(b, std::mem::take(&mut st.k));
        }
        self.block_obj = self.states.iter().zip(self.blocks).map(|(s, b)| s.obj(b)).collect();
        self.block_leak = self.states.iter().zip(self.blocks).map(|(s, b)| s.leak(b)).collect();
        self.obj = self.block_obj.iter().sum();
        self.leak = self.block_leak.iter().sum();
    }

    /// Leakage block `bi` may reach given the other blocks.
    fn room(&self, bi: usize) -> f64 {
        match &self.budgets {
            Some(b) => b[bi],
            None => self.eps - (self.leak - self.block_leak[bi]),
        }
    }

    fn over_budget(&self) -> bool {
        match &self.budgets {
            Some(b) => self.block_leak.iter().zip(b).any(|(l, b)| *l > b + FEASIBILITY_SLACK),
            None => self.leak > self.eps + FEASIBILITY_SLACK,
        }
    }

    /// Scores the change built by `build(t)` for `t` in `(0, 1]`, clipping
    /// `t` to the leakage budget. Returns `(t, gain, leak)` of the best feasible endpoint.
    fn line<F>(&mut self, bi: usize, mut build: F) -> Option<(f64, f64, f64)>
    where
        F: FnMut(f64, &mut Delta, &Block, &BlockState),
    {
        let room = self.room(bi) + SEARCH_SLACK;
        let b = &self.blocks[bi];
        let st = &self.states[bi];
        let d = &mut self.deltas[bi];
        build(1.0, d, b, st);
        let (o, l) = d.score(b, st);
        d.clear(b.nu);
        let gain = o - self.block_obj[bi];
        if l <= room {
            return (gain > 0.0).then_some((1.0, gain, l));
        }
        // convex gain with gain(0) = 0: no improvement anywhere on the segment
        if gain <= 0.0 {
            return None;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = None;
        for _ in 0..BISECT_ITERS {
            let t = 0.5 * (lo + hi);
            build(t, d, b, st);
            let (o, l) = d.score(b, st);
            d.clear(b.nu);
            if l <= room {
                lo = t;
                best = Some((t, o - self.block_obj[bi], l));
            } else {
                hi = t;
            }
        }
        best.filter(|&(_, g, _)| g > 0.0)
    }

    fn commit<F>(&mut self, bi: usize, t: f64, mut build: F)
    where
        F: FnMut(f64, &mut Delta, &Block, &BlockState),
    {
        let b = &self.blocks[bi];
        let st = &mut self.states[bi];
        let d = &mut self.deltas[bi];
        build(t, d, b, st);
        d.apply(b, st);
        let (o, l) = (st.obj(b), st.leak(b));
        self.obj += o - self.block_obj[bi];
        self.leak += l - self.block_leak[bi];
        self.block_obj[bi] = o;
        self.block_leak[bi] = l;
    }

    /// Moves one column toward a target slice.
    fn column_move(&mut self, bi: usize, x: usize, y: usize, target: &[f64]) -> Option<(f64, f64)> {
        let build = |t: f64, d: &mut Delta, b: &Block, st: &BlockState| {
            let s = st.slice(b, x, y);
            let new = s.iter().zip(target).map(|(a, c)| (1.0 - t) * a + t * c).collect();
            d.add(b, st, x, y, new);
        };
        let (t, gain, _) = self.line(bi, build)?;
        Some((t, gain))
    }

    fn sweep_columns(&mut self, rng: &mut ChaCha8Rng) {
        let mut cols: Vec<(usize, usize, usize)> =
            self.blocks.iter().enumerate().flat_map(|(bi, b)| b.columns().map(move |(x, y)| (bi, x, y))).collect();
        cols.shuffle(rng);
        for (bi, x, y) in cols {
            let nu = self.blocks[bi].nu;
            let mut best: Option<(f64, f64, Vec<f64>)> = None;
            let mut targets: Vec<Vec<f64>> = (0..nu)
                .filter(|&u| self.states[bi].slice(&self.blocks[bi], x, y)[u] < 1.0 - 1e-15)
                .map(|u| {
                    let mut e = vec![0.0; nu];
                    e[u] = 1.0;
                    e
                })
                .collect();
            if nu > 1 {
                targets.push(exp_weights(rng, nu));
            }
            for target in targets {
                if let Some((t, gain)) = self.column_move(bi, x, y, &target) {
                    if best.as_ref().is_none_or(|b| gain > b.1) {
                        best = Some((t, gain, target));
                    }
                }
            }
            if let Some((t, _, target)) = best {
                self.commit(bi, t, |t, d, b, st| {
                    let s = st.slice(b, x, y);
                    let new = s.iter().zip(&target).map(|(a, c)| (1.0 - t) * a + t * c).collect();
                    d.add(b, st, x, y, new);
                });
            }
        }
    }

    /// Leakage-neutral swaps between two columns of the same `x`.
    fn sweep_exchanges(&mut self, rng: &mut ChaCha8Rng) {
        for bi in 0..self.blocks.len() {
            let b = &self.blocks[bi];
            let (nx, ny, nu) = (b.nx, b.ny, b.nu);
            if ny < 2 || nu < 2 {
                continue;
            }
            let mut cands = Vec::new();
            let total = nx * ny * (ny - 1) / 2 * nu * (nu - 1);
            if total <= MAX_EXCHANGES {
                for x in 0..nx {
                    for y1 in 0..ny {
                        for y2 in y1 + 1..ny {
                            for u1 in 0..nu {
                                for u2 in 0..nu {
                                    if u1 != u2 {
                                        cands.push((x, y1, y2, u1, u2));
                                    }
                                }
                            }
                        }
                    }
                }
                cands.shuffle(rng);
            } else {
                for _ in 0..MAX_EXCHANGES {
                    let x = rng.gen_range(0..nx);
                    let y1 = rng.gen_range(0..ny);
                    let y2 = (y1 + rng.gen_range(1..ny)) % ny;
                    let u1 = rng.gen_range(0..nu);
                    let u2 = (u1 + rng.gen_range(1..nu)) % nu;
                    cands.push((x, y1, y2, u1, u2));
                }
            }
            for (x, y1, y2, u1, u2) in cands {
                let b = &self.blocks[bi];
                let (w1, w2) = (b.pxy[x * ny + y1], b.pxy[x * ny + y2]);
                if w1 == 0.0 || w2 == 0.0 {
                    continue;
                }
                let st = &self.states[bi];
                let m = (w1 * st.slice(b, x, y1)[u1]).min(w2 * st.slice(b, x, y2)[u2]);
                if m <= 1e-300 {
                    continue;
                }
                let build = |t: f64, d: &mut Delta, b: &Block, st: &BlockState| {
                    let mut s1 = st.slice(b, x, y1).to_vec();
                    let mut s2 = st.slice(b, x, y2).to_vec();
                    let (a1, a2) = (t * m / w1, t * m / w2);
                    s1[u1] = (s1[u1] - a1).max(0.0);
                    s1[u2] += a1;
                    s2[u2] = (s2[u2] - a2).max(0.0);
                    s2[u1] += a2;
                    d.add(b, st, x, y1, s1);
                    d.add(b, st, x, y2, s2);
                };
                if let Some((t, gain, _)) = self.line(bi, build) {
                    if gain > 0.0 {
                        self.commit(bi, t, build);
                    }
                }
            }
        }
    }

    /// Moves mass `a·P(x)` from `u1` to `u2` in one column of every `x`, which
    /// shifts `P(u|x)` identically for all `x`.
    fn sweep_shifts(&mut self, rng: &mut ChaCha8Rng) {
        for bi in 0..self.blocks.len() {
            let (nx, ny, nu) = (self.blocks[bi].nx, self.blocks[bi].ny, self.blocks[bi].nu);
            if nu < 2 {
                continue;
            }
            let tries = (nu * (nu - 1)).min(MAX_SHIFTS);
            for _ in 0..tries {
                let u1 = rng.gen_range(0..nu);
                let u2 = (u1 + rng.gen_range(1..nu)) % nu;
                let b = &self.blocks[bi];
                let st = &self.states[bi];
                let mut cols = Vec::with_capacity(nx);
                let mut a_max = f64::INFINITY;
                for x in 0..nx {
                    let ys: Vec<usize> = (0..ny).filter(|&y| b.pxy[x * ny + y] * st.slice(b, x, y)[u1] > 0.0).collect();
                    let Some(&y) = ys.choose(rng) else {
                        a_max = 0.0;
                        break;
                    };
                    a_max = a_max.min(b.pxy[x * ny + y] * st.slice(b, x, y)[u1] / b.px[x]);
                    cols.push(y);
                }
                if !(a_max > 1e-300) {
                    continue;
                }
                let build = |t: f64, d: &mut Delta, b: &Block, st: &BlockState| {
                    for (x, &y) in cols.iter().enumerate() {
                        let w = b.pxy[x * ny + y];
                        let m = t * a_max * b.px[x] / w;
                        let mut s = st.slice(b, x, y).to_vec();
                        s[u1] = (s[u1] - m).max(0.0);
                        s[u2] += m;
                        d.add(b, st, x, y, s);
                    }
                };
                if let Some((t, gain, _)) = self.line(bi, build) {
                    if gain > 0.0 {
                        self.commit(bi, t, build);
                    }
                }
            }
        }
    }

    /// Mixes toward the last symbol until feasible: one common `t` under the
    /// shared budget, one `t` per offending block under per-block caps.
    fn project(&mut self) {
        if !self.over_budget() {
            return;
        }
        let groups: Vec<(Vec<usize>, f64)> = match &self.budgets {
            Some(b) => (0..self.blocks.len())
                .filter(|&i| self.block_leak[i] > b[i] + FEASIBILITY_SLACK)
                .map(|i| (vec![i], b[i]))
                .collect(),
            None => vec![((0..self.blocks.len()).collect(), self.eps)],
        };
        for (ids, cap) in groups {
            let base: Vec<Vec<f64>> = ids.iter().map(|&i| self.states[i].k.clone()).collect();
            let mixed = |t: f64| -> Vec<Vec<f64>> {
                base.iter()
                    .zip(&ids)
                    .map(|(k, &i)| {
                        let nu = self.blocks[i].nu;
                        let mut k: Vec<f64> = k.iter().map(|v| (1.0 - t) * v).collect();
                        for s in k.chunks_mut(nu) {
                            s[nu - 1] += t;
                        }
                        k
                    })
                    .collect()
            };
            let leak_of = |ks: &[Vec<f64>]| -> f64 {
                ids.iter()
                    .zip(ks)
                    .map(|(&i, k)| BlockState::build(&self.blocks[i], k.clone()).leak(&self.blocks[i]))
                    .sum()
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..BISECT_ITERS + 16 {
                let t = 0.5 * (lo + hi);
                if leak_of(&mixed(t)) <= cap {
                    hi = t;
                } else {
                    lo = t;
                }
            }
            for (&i, k) in ids.iter().zip(mixed(hi)) {
                self.states[i].k = k;
            }
        }
        self.refresh();
    }

    fn run(&mut self, cfg: &OracleConfig, rng: &mut ChaCha8Rng) {
        self.project();
        if self.budgets.is_some() {
            self.ascend(cfg.iters / 2, cfg.tolerance, rng);
            self.budgets = None;
        }
        self.ascend(cfg.iters, cfg.tolerance, rng);
    }

    fn ascend(&mut self, iters: usize, tolerance: f64, rng: &mut ChaCha8Rng) {
        let mut stalls = 0;
        for _ in 0..iters {
            let before = self.obj;
            self.sweep_columns(rng);
            self.sweep_exchanges(rng);
            self.sweep_shifts(rng);
            self.refresh();
            self.project();
            if self.obj - before <= tolerance {
                stalls += 1;
                if stalls >= STALL_SWEEPS {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
    }
}

fn product_blocks(p: &Problem, card: Option<usize>) -> Vec<Block> {
    p.components()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (nx, ny) = (c.nx(), c.ny());
            let nu = card.unwrap_or(nx * ny + 1).max(1);
            let py = c.py();
            Block {
                nx,
                ny,
                nu,
                pxy: c.joint().table().to_vec(),
                px: c.px(),
                h_x: c.h_x(),
                groups: vec![Group { weight: p.mu(i), map: (0..ny).collect(), nc: ny, h_c: entropy_of(&py) }],
            }
        })
        .collect()
}

fn monolithic_block(p: &Problem, law: &ProductLaw, card: Option<usize>) -> Block {
    let nu = card.unwrap_or(law.nx * (law.ny - 1) + 2).max(1);
    let mut px = vec![0.0; law.nx];
    for x in 0..law.nx {
        px[x] = law.pxy[x * law.ny..(x + 1) * law.ny].iter().sum();
    }
    let n = p.n();
    let mut yd = vec![0usize; n];
    let groups = p
        .users()
        .iter()
        .map(|usr| {
            let radix: Vec<usize> = usr.demands().iter().map(|&i| law.y_axes[i]).collect();
            let nc: usize = radix.iter().product();
            let map: Vec<usize> = (0..law.ny)
                .map(|y| {
                    digits(y, &law.y_axes, &mut yd);
                    usr.demands().iter().fold(0, |acc, &i| acc * law.y_axes[i] + yd[i])
                })
                .collect();
            let mut pc = vec![0.0; nc];
            for x in 0..law.nx {
                for y in 0..law.ny {
                    pc[map[y]] += law.pxy[x * law.ny + y];
                }
            }
            Group { weight: usr.weight(), map, nc, h_c: entropy_of(&pc) }
        })
        .collect();
    Block { nx: law.nx, ny: law.ny, nu, pxy: law.pxy.clone(), h_x: entropy_of(&px), px, groups }
}

struct RestartOutcome {
    objective: f64,
    leakage: f64,
    mechanism: Mechanism,
}

fn finish(p: &Problem, m: Mechanism) -> Result<RestartOutcome, MechanismError> {
    let r = evaluate(p, &m)?;
    if r.leakage <= p.epsilon() + FEASIBILITY_SLACK {
        return Ok(RestartOutcome { objective: r.objective, leakage: r.leakage, mechanism: m });
    }
    let m = match m {
        Mechanism::Monolithic(k) => Mechanism::Monolithic(leakage_project(&k, p, p.epsilon())?),
        Mechanism::Composed(c) => Mechanism::Composed(project_composed(p, &c, p.epsilon())?),
    };
    let r = evaluate(p, &m)?;
    Ok(RestartOutcome { objective: r.objective, leakage: r.leakage, mechanism: m })
}

/// Runs the seeded search and returns the best feasible mechanism found.
pub fn search(p: &Problem, cfg: &OracleConfig) -> Result<OracleResult, OracleError> {
    cfg.check()?;
    let product = product_blocks(p, cfg.card_u);
    let mono = match cfg.space {
        SearchSpace::Product => None,
        SearchSpace::Monolithic | SearchSpace::Both => {
            let law = ProductLaw::new(p, size_cap())?;
            let b = monolithic_block(p, &law, cfg.card_u);
            let entries = b.nx * b.ny * b.nu;
            if cfg.space == SearchSpace::Monolithic {
                crate::probcore::check_size(entries, size_cap()).map_err(MechanismError::from)?;
                Some(vec![b])
            } else {
                (entries <= MONOLITHIC_BUDGET).then(|| vec![b])
            }
        }
    };
    let seeds = [Seed::ReleaseY, Seed::Coupling, Seed::RandomMap, Seed::Dense];

    let outcomes: Vec<Result<RestartOutcome, MechanismError>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let (blocks, kind) = match (cfg.space, &mono) {
                (SearchSpace::Monolithic, Some(m)) => (m.as_slice(), seeds[r % 4]),
                (SearchSpace::Both, Some(m)) if r % 2 == 1 => (m.as_slice(), seeds[(r / 2) % 4]),
                (SearchSpace::Both, _) => (product.as_slice(), seeds[(r / 2) % 4]),
                _ => (product.as_slice(), seeds[r % 4]),
            };
            let kernels = blocks.iter().map(|b| seed_kernel(b, kind, &mut rng)).collect();
            // odd restarts first pin the whole budget on one block, cycling through blocks
            let budgets = (blocks.len() > 1 && r % 2 == 1).then(|| {
                let mut b = vec![0.0; blocks.len()];
                b[(r / 2) % blocks.len()] = p.epsilon();
                b
            });
            let mut s = Search::new(blocks, kernels, p.epsilon(), budgets);
            s.run(cfg, &mut rng);
            let monolithic =
                cfg.space != SearchSpace::Product && mono.as_ref().is_some_and(|m| std::ptr::eq(m.as_slice(), blocks));
            let kernels: Vec<Kernel> = blocks
                .iter()
                .zip(&s.states)
                .map(|(b, st)| Kernel::new(b.nx, b.ny, b.nu, st.k.clone()))
                .collect::<Result<_, _>>()?;
            let m = if monolithic {
                Mechanism::Monolithic(kernels.into_iter().next().expect("one block"))
            } else {
                let alloc = Allocation {
                    eps_per_component: s.block_leak.iter().map(|l| l.max(0.0)).collect(),
                    target: None,
                    overflow: 0.0,
                };
                Mechanism::Composed(ComposedMechanism {
                    tags: vec![Construction::Other; p.n()],
                    allocation: alloc,
                    kernels,
                })
            };
            finish(p, m)
        })
        .collect();

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut trace = Vec::with_capacity(cfg.restarts);
    for (r, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        trace.push(o.objective);
        if best.as_ref().is_none_or(|(_, b)| o.objective > b.objective) {
            best = Some((r, o));
        }
    }
    let (best_restart, o) = best.expect("restarts >= 1");
    Ok(OracleResult { best_objective: o.objective, leakage_at_best: o.leakage, best: o.mechanism, best_restart, trace })
}

fn kernel_leakage(law: &ProductLaw, k: &Kernel, u0: usize, t: f64) -> f64 {
    let nu = k.nu();
    let mut pxu = vec![0.0; law.nx * nu];
    let mut px = vec![0.0; law.nx];
    for x in 0..law.nx {
        for y in 0..law.ny {
            let w = law.pxy[x * law.ny + y];
            px[x] += w;
            for (u, &v) in k.slice(x, y).iter().enumerate() {
                pxu[x * nu + u] += w * (1.0 - t) * v;
            }
        }
        pxu[x * nu + u0] += t * px[x];
    }
    let mut pu = vec![0.0; nu];
    for r in pxu.chunks(nu) {
        for (a, v) in pu.iter_mut().zip(r) {
            *a += v;
        }
    }
    (entropy_of(&px) + entropy_of(&pu) - entropy_of(&pxu)).max(0.0)
}

/// Mixes a monolithic kernel toward a constant output until `I(X;U) ≤ eps`.
///
/// A feasible kernel comes back unchanged. Otherwise the result is
/// `(1−t)·m + t·δ_{u0}` with `u0` the last symbol and `t` found by bisection
/// so that the leakage lands in `[eps − 1e-9, eps]`.
pub fn leakage_project(m: &Kernel, p: &Problem, eps: f64) -> Result<Kernel, MechanismError> {
    let law = ProductLaw::new(p, size_cap())?;
    if m.nx() != law.nx || m.ny() != law.ny {
        return Err(MechanismError::AlphabetMismatch(format!(
            "kernel conditions on {}x{} tuples, problem has {}x{}",
            m.nx(),
            m.ny(),
            law.nx,
            law.ny
        )));
    }
    let u0 = m.nu() - 1;
    if kernel_leakage(&law, m, u0, 0.0) <= eps {
        return Ok(m.clone());
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        if kernel_leakage(&law, m, u0, hi) >= eps - PROJECT_TOL {
            break;
        }
        let t = 0.5 * (lo + hi);
        if kernel_leakage(&law, m, u0, t) <= eps {
            hi = t;
        } else {
            lo = t;
        }
    }
    Ok(m.mix_toward_symbol(u0, hi))
}

/// [`leakage_project`] for a composed mechanism, with one common `t`.
pub fn project_composed(p: &Problem, m: &ComposedMechanism, eps: f64) -> Result<ComposedMechanism, MechanismError> {
    let leak = |t: f64| -> Result<f64, MechanismError> {
        let mut s = 0.0;
        for (c, k) in p.components().iter().zip(&m.kernels) {
            s += evaluate_component(c, &k.mix_toward_symbol(k.nu() - 1, t))?.leakage;
        }
        Ok(s)
    };
    if leak(0.0)? <= eps {
        return Ok(m.clone());
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        if leak(hi)? >= eps - PROJECT_TOL {
            break;
        }
        let t = 0.5 * (lo + hi);
        if leak(t)? <= eps {
            hi = t;
        } else {
            lo = t;
        }
    }
    let mut out = m.clone();
    for k in &mut out.kernels {
        *k = k.mix_toward_symbol(k.nu() - 1, hi);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub lower: f64,
    pub mechanism_objective: f64,
    pub oracle_best: f64,
    pub upper: f64,
    pub lower_holds: bool,
    pub middle_holds: bool,
    pub upper_holds: bool,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.lower_holds && self.middle_holds && self.upper_holds
    }
}

/// Places the composed mechanism and the oracle between the analytic bounds.
///
/// The mechanism uses the allocation of whichever lower bound is larger.
pub fn sandwich_check(p: &Problem, cfg: &OracleConfig) -> Result<SandwichReport, OracleError> {
    let best = search(p, cfg)?.best_objective;
    sandwich(p, best)
}

/// [`sandwich_check`] against an oracle value found elsewhere.
pub fn sandwich(p: &Problem, best: f64) -> Result<SandwichReport, OracleError> {
    let a = validate(p).map_err(MechanismError::from)?;
    let rep = bounds_report(p, &a)?;
    let mech = compose_multiuser(p, rep.dominant_allocation())?;
    let mech_obj = crate::mechanisms::evaluate_composed(p, &mech)?.objective;
    Ok(SandwichReport {
        lower: rep.lower,
        mechanism_objective: mech_obj,
        oracle_best: best,
        upper: rep.upper,
        lower_holds: rep.lower - 1e-9 <= mech_obj,
        middle_holds: mech_obj <= best + SANDWICH_SLACK,
        upper_holds: best <= rep.upper + 1e-9 && mech_obj <= rep.upper + 1e-9,
    })
}
