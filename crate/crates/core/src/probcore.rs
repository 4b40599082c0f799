//! Exact discrete-probability primitives.
//!
//! Everything here works in nats. Probabilities below [`ZERO_FLOOR`] are
//! treated as exact zeros, and `0 ln 0 = 0` throughout.

use thiserror::Error;

/// Entries at or below this value are treated as zero mass.
pub const ZERO_FLOOR: f64 = 1e-15;

/// Mass deviations up to this are renormalized away; larger ones are rejected.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Default cap on the number of entries in a dense tensor.
pub const DEFAULT_SIZE_CAP: usize = 10_000_000;

/// Environment variable that overrides [`DEFAULT_SIZE_CAP`].
pub const SIZE_CAP_ENV: &str = "PRIVBOUND_SIZE_CAP";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("empty distribution")]
    Empty,
    #[error("entry {index} is not a finite non-negative number ({value})")]
    BadEntry { index: usize, value: f64 },
    #[error("total mass {0} deviates from 1 by more than {MASS_TOLERANCE}")]
    NotNormalized(f64),
    #[error("table has {got} entries, shape requires {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("{0} labels supplied for {1} symbols")]
    LabelMismatch(usize, usize),
    #[error("axis groups must be non-empty, disjoint and in range")]
    BadAxes,
    #[error("tensor of {size} entries exceeds the size cap of {cap}")]
    SizeCap { size: usize, cap: usize },
}

/// The tensor size cap in effect: `PRIVBOUND_SIZE_CAP` if set and valid, else the default.
pub fn size_cap() -> usize {
    std::env::var(SIZE_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(DEFAULT_SIZE_CAP)
}

/// Fails with [`ProbError::SizeCap`] if `size` exceeds `cap`.
pub fn check_size(size: usize, cap: usize) -> Result<(), ProbError> {
    if size > cap {
        Err(ProbError::SizeCap { size, cap })
    } else {
        Ok(())
    }
}

/// `p ln p`, with the floor applied.
#[inline]
pub fn xlogx(p: f64) -> f64 {
    if p <= ZERO_FLOOR {
        0.0
    } else {
        p * p.ln()
    }
}

/// Shannon entropy of a mass vector (need not be validated).
pub fn entropy_of(probs: &[f64]) -> f64 {
    let h = -probs.iter().map(|&p| xlogx(p)).sum::<f64>();
    h.max(0.0)
}

fn validate_mass(table: &mut [f64]) -> Result<(), ProbError> {
    if table.is_empty() {
        return Err(ProbError::Empty);
    }
    for (index, &value) in table.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ProbError::BadEntry { index, value });
        }
    }
    let total: f64 = table.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(ProbError::NotNormalized(total));
    }
    for v in table.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Dist {
    probs: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl Dist {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbError> {
        let mut probs = probs;
        validate_mass(&mut probs)?;
        Ok(Dist { probs, labels: None })
    }

    pub fn uniform(n: usize) -> Result<Self, ProbError> {
        Dist::new(vec![1.0 / n as f64; n])
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, ProbError> {
        if labels.len() != self.probs.len() {
            return Err(ProbError::LabelMismatch(labels.len(), self.probs.len()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

/// `-Σ p ln p` in nats.
pub fn entropy(d: &Dist) -> f64 {
    entropy_of(&d.probs)
}

/// Selects the conditioning variable of a [`Joint2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// The first variable (row index).
    Rows,
    /// The second variable (column index).
    Cols,
}

/// Joint law of two variables as a dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint2 {
    rows: usize,
    cols: usize,
    table: Vec<f64>,
}

impl Joint2 {
    pub fn new(rows: usize, cols: usize, table: Vec<f64>) -> Result<Self, ProbError> {
        if table.len() != rows * cols {
            return Err(ProbError::ShapeMismatch { expected: rows * cols, got: table.len() });
        }
        let mut table = table;
        validate_mass(&mut table)?;
        Ok(Joint2 { rows, cols, table })
    }

    /// Builds from nested rows; rows must be rectangular.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProbError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut table = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ProbError::ShapeMismatch { expected: rows.len() * cols, got: rows.len() * r.len() });
            }
            table.extend_from_slice(r);
        }
        Joint2::new(rows.len(), cols, table)
    }

    /// Joint law of (A, B) with A ~ `marginal` and B | A = a ~ `channel[a]`.
    pub fn from_channel(marginal: &[f64], channel: &[Vec<f64>]) -> Result<Self, ProbError> {
        let cols = channel.first().map_or(0, Vec::len);
        let mut table = Vec::with_capacity(marginal.len() * cols);
        for (pa, row) in marginal.iter().zip(channel) {
            if row.len() != cols {
                return Err(ProbError::ShapeMismatch { expected: cols, got: row.len() });
            }
            table.extend(row.iter().map(|q| pa * q));
        }
        Joint2::new(marginal.len(), cols, table)
    }

    /// Product law `a ⊗ b`.
    pub fn outer(a: &Dist, b: &Dist) -> Self {
        let table = a.probs.iter().flat_map(|&p| b.probs.iter().map(move |&q| p * q)).collect();
        Joint2 { rows: a.len(), cols: b.len(), table }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.table[a * self.cols + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.table[a * self.cols..(a + 1) * self.cols]
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.table.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.table.chunks(self.cols) {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        m
    }

    pub fn transpose(&self) -> Joint2 {
        let mut table = vec![0.0; self.table.len()];
        for a in 0..self.rows {
            for b in 0..self.cols {
                table[b * self.rows + a] = self.get(a, b);
            }
        }
        Joint2 { rows: self.cols, cols: self.rows, table }
    }

    /// `P(b | a)` for every row `a`; rows with zero mass come back all-zero.
    pub fn row_conditionals(&self) -> Vec<Vec<f64>> {
        self.table
            .chunks(self.cols)
            .map(|r| {
                let s: f64 = r.iter().sum();
                if s <= ZERO_FLOOR {
                    vec![0.0; r.len()]
                } else {
                    r.iter().map(|v| v / s).collect()
                }
            })
            .collect()
    }

    pub fn joint_entropy(&self) -> f64 {
        entropy_of(&self.table)
    }

    pub fn row_entropy(&self) -> f64 {
        entropy_of(&self.row_marginal())
    }

    pub fn col_entropy(&self) -> f64 {
        entropy_of(&self.col_marginal())
    }
}

/// `H(A | B)` where `given` names B.
pub fn conditional_entropy(j: &Joint2, given: Axis) -> f64 {
    let h_given = match given {
        Axis::Rows => j.row_entropy(),
        Axis::Cols => j.col_entropy(),
    };
    (j.joint_entropy() - h_given).max(0.0)
}

/// `I(A; B)`, clamped at zero.
pub fn mutual_information(j: &Joint2) -> f64 {
    (j.row_entropy() + j.col_entropy() - j.joint_entropy()).max(0.0)
}

/// Dense joint law over any number of finite axes, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct JointN {
    axes: Vec<usize>,
    table: Vec<f64>,
}

impl JointN {
    pub fn new(axes: Vec<usize>, table: Vec<f64>) -> Result<Self, ProbError> {
        let size: usize = axes.iter().product();
        if axes.is_empty() || table.len() != size {
            return Err(ProbError::ShapeMismatch { expected: size, got: table.len() });
        }
        let mut table = table;
        validate_mass(&mut table)?;
        Ok(JointN { axes, table })
    }

    pub fn from_joint2(j: &Joint2) -> Self {
        JointN { axes: vec![j.rows, j.cols], table: j.table.clone() }
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn entropy(&self) -> f64 {
        entropy_of(&self.table)
    }

    /// Marginal over `keep`, in the order given.
    pub fn marginal(&self, keep: &[usize]) -> Result<JointN, ProbError> {
        if keep.is_empty() || keep.iter().any(|&a| a >= self.axes.len()) || has_duplicates(keep) {
            return Err(ProbError::BadAxes);
        }
        let out_axes: Vec<usize> = keep.iter().map(|&a| self.axes[a]).collect();
        let mut out = vec![0.0; out_axes.iter().product()];
        let mut idx = vec![0usize; self.axes.len()];
        for &v in &self.table {
            if v != 0.0 {
                let mut o = 0;
                for &a in keep {
                    o = o * self.axes[a] + idx[a];
                }
                out[o] += v;
            }
            increment(&mut idx, &self.axes);
        }
        Ok(JointN { axes: out_axes, table: out })
    }

    /// Entropy of the marginal over `axes` (the empty set has entropy 0).
    pub fn entropy_of_axes(&self, axes: &[usize]) -> Result<f64, ProbError> {
        if axes.is_empty() {
            return Ok(0.0);
        }
        Ok(self.marginal(axes)?.entropy())
    }

    /// `I(A; B | C)` over disjoint axis groups; `C` may be empty.
    pub fn conditional_mi(&self, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64, ProbError> {
        if a.is_empty() || b.is_empty() {
            return Err(ProbError::BadAxes);
        }
        let all: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
        if has_duplicates(&all) {
            return Err(ProbError::BadAxes);
        }
        let ac: Vec<usize> = a.iter().chain(c).copied().collect();
        let bc: Vec<usize> = b.iter().chain(c).copied().collect();
        let v = self.entropy_of_axes(&ac)? + self.entropy_of_axes(&bc)?
            - self.entropy_of_axes(&all)?
            - self.entropy_of_axes(c)?;
        Ok(v.max(0.0))
    }
}

fn has_duplicates(axes: &[usize]) -> bool {
    let mut s = axes.to_vec();
    s.sort_unstable();
    s.windows(2).any(|w| w[0] == w[1])
}

/// Advances a row-major multi-index; wraps to all-zero after the last entry.
pub(crate) fn increment(idx: &mut [usize], axes: &[usize]) {
    for k in (0..axes.len()).rev() {
        idx[k] += 1;
        if idx[k] < axes[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// `I(A; B)` between two disjoint, non-empty axis groups of `j`.
pub fn mi_between(j: &JointN, group_a: &[usize], group_b: &[usize]) -> Result<f64, ProbError> {
    j.conditional_mi(group_a, group_b, &[])
}

/// Tensor product of independent parts; axes are concatenated in order.
pub fn product_join(parts: &[JointN], cap: usize) -> Result<JointN, ProbError> {
    let first = parts.first().ok_or(ProbError::Empty)?;
    let size = parts.iter().try_fold(1usize, |acc, p| acc.checked_mul(p.table.len())).unwrap_or(usize::MAX);
    check_size(size, cap)?;
    let mut acc = first.clone();
    for p in &parts[1..] {
        let table = acc.table.iter().flat_map(|&a| p.table.iter().map(move |&b| a * b)).collect();
        acc.axes.extend_from_slice(&p.axes);
        acc.table = table;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn bsc(theta: f64) -> Joint2 {
        Joint2::from_rows(&[vec![0.5 * (1.0 - theta), 0.5 * theta], vec![0.5 * theta, 0.5 * (1.0 - theta)]]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((Dist::new(vec![0.5, 0.5]).unwrap().entropy() - LN_2).abs() < 1e-15);
        assert_eq!(Dist::new(vec![1.0]).unwrap().entropy(), 0.0);
        assert!((Dist::new(vec![0.25, 0.75]).unwrap().entropy() - 0.562_335_144_618_808_35).abs() < 1e-12);
    }

    #[test]
    fn conditional_entropy_examples() {
        let diag = Joint2::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!(conditional_entropy(&diag, Axis::Rows).abs() < 1e-15);
        assert!(conditional_entropy(&diag, Axis::Cols).abs() < 1e-15);
        let u = Dist::uniform(2).unwrap();
        let prod = Joint2::outer(&u, &u);
        assert!((conditional_entropy(&prod, Axis::Rows) - LN_2).abs() < 1e-15);
        // h(0.1) in nats
        assert!((conditional_entropy(&bsc(0.1), Axis::Rows) - 0.325_082_973_391_448_24).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_examples() {
        let a = Dist::new(vec![0.2, 0.3, 0.5]).unwrap();
        let b = Dist::new(vec![0.6, 0.4]).unwrap();
        assert!(mutual_information(&Joint2::outer(&a, &b)) < 1e-15);
        let copy = Joint2::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!((mutual_information(&copy) - LN_2).abs() < 1e-15);
        assert!((mutual_information(&bsc(0.1)) - 0.368_064_207_168_497_07).abs() < 1e-12);
    }

    #[test]
    fn validation_renormalizes_small_drift_and_rejects_large() {
        let d = Dist::new(vec![0.5, 0.5 + 5e-7]).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(Dist::new(vec![0.5, 0.6]), Err(ProbError::NotNormalized(_))));
        assert!(matches!(Dist::new(vec![1.5, -0.5]), Err(ProbError::BadEntry { .. })));
        assert!(matches!(Dist::new(vec![f64::NAN, 1.0]), Err(ProbError::BadEntry { .. })));
        assert!(matches!(Dist::new(vec![]), Err(ProbError::Empty)));
        assert!(Joint2::from_rows(&[vec![0.5, 0.25], vec![0.25]]).is_err());
    }

    #[test]
    fn mi_between_examples() {
        // (A,B) ⊗ C
        let ab = JointN::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let c = JointN::new(vec![3], vec![0.2, 0.3, 0.5]).unwrap();
        let t = product_join(&[ab, c], DEFAULT_SIZE_CAP).unwrap();
        assert!(mi_between(&t, &[0, 1], &[2]).unwrap() < 1e-15);
        // U = X = Y uniform binary
        let copy = JointN::new(vec![2, 2, 2], vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        assert!((mi_between(&copy, &[0], &[2]).unwrap() - LN_2).abs() < 1e-15);
        assert!(mi_between(&copy, &[0], &[0]).is_err());
        assert!(mi_between(&copy, &[], &[1]).is_err());
        assert!(mi_between(&copy, &[0], &[3]).is_err());
    }

    #[test]
    fn mi_between_matches_flattened_joint2() {
        let raw = [0.03, 0.11, 0.07, 0.19, 0.13, 0.05, 0.29, 0.13];
        let t = JointN::new(vec![2, 2, 2], raw.to_vec()).unwrap();
        // flatten (A,B) into rows, C as columns
        let j = Joint2::new(4, 2, raw.to_vec()).unwrap();
        let direct = mutual_information(&j);
        assert!((mi_between(&t, &[0, 1], &[2]).unwrap() - direct).abs() < 1e-14);
        // (A) vs (B,C)
        let j2 = Joint2::new(2, 4, raw.to_vec()).unwrap();
        assert!((mi_between(&t, &[0], &[1, 2]).unwrap() - mutual_information(&j2)).abs() < 1e-14);
    }

    #[test]
    fn product_join_examples() {
        let u = JointN::new(vec![2], vec![0.5, 0.5]).unwrap();
        assert_eq!(product_join(std::slice::from_ref(&u), DEFAULT_SIZE_CAP).unwrap(), u);
        let p = product_join(&[u.clone(), u.clone()], DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(p.axes(), &[2, 2]);
        assert!(p.table().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(matches!(product_join(&[u.clone(), u], 3), Err(ProbError::SizeCap { size: 4, cap: 3 })));
    }

    #[test]
    fn marginal_orders_axes_as_requested() {
        let t = JointN::new(vec![2, 3], vec![0.1, 0.2, 0.0, 0.3, 0.1, 0.3]).unwrap();
        let m = t.marginal(&[1, 0]).unwrap();
        assert_eq!(m.axes(), &[3, 2]);
        let expect = [0.1, 0.3, 0.2, 0.1, 0.0, 0.3];
        for (a, b) in m.table().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
