//! Matrix-free resampling, Gram products and the critical split operators.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{morton_encode, LevelGeometry, NO_NODE};
use crate::kernels::{kernel_weight, GramTensor, Order};
use crate::spectral::{neumann, LinearOperator};

/// Per-node attribute rows, row-major with `channels` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureTensor {
    pub fn zeros(rows: usize, channels: usize) -> Self {
        Self { channels, data: vec![0.0; rows * channels] }
    }

    pub fn from_vec(data: Vec<f64>, channels: usize) -> Self {
        assert!(channels > 0 && data.len().is_multiple_of(channels));
        Self { channels, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &FeatureTensor) {
        debug_assert_eq!(self.data.len(), x.data.len());
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// Multiplies row `i` by `s[i]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        let c = self.channels;
        for (row, &f) in self.data.chunks_exact_mut(c).zip(s) {
            for v in row {
                *v *= f;
            }
        }
    }

    pub fn dot(&self, other: &FeatureTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn gather(&self, rows: &[u32]) -> FeatureTensor {
        let mut out = Vec::with_capacity(rows.len() * self.channels);
        for &r in rows {
            out.extend_from_slice(self.row(r as usize));
        }
        FeatureTensor { channels: self.channels, data: out }
    }
}

/// The two-scale matrix `A_l` between a level and its children, optionally
/// rescaled to `S_l^{-1} A_l S_{l+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampler {
    coarse_len: usize,
    fine_len: usize,
    down_starts: Vec<u32>,
    down_idx: Vec<u32>,
    down_w: Vec<f64>,
    up_starts: Vec<u32>,
    up_idx: Vec<u32>,
    up_w: Vec<f64>,
}

impl Resampler {
    pub fn new(coarse: &LevelGeometry, fine: &LevelGeometry, order: Order) -> Self {
        Self::scaled(coarse, fine, order, None)
    }

    /// `scales = Some((s_coarse, s_fine))` gives entries `a(d) * s_fine[j] / s_coarse[i]`.
    pub fn scaled(
        coarse: &LevelGeometry,
        fine: &LevelGeometry,
        order: Order,
        scales: Option<(&[f64], &[f64])>,
    ) -> Self {
        let weight = |i: usize, j: usize, d: [i32; 3]| {
            let a = kernel_weight(order, d);
            match scales {
                Some((sc, sf)) => a * sf[j] / sc[i],
                None => a,
            }
        };
        let mut down_starts = vec![0u32];
        let mut down_idx = Vec::new();
        let mut down_w = Vec::new();
        for i in 0..coarse.len() {
            for lk in coarse.children.of(i) {
                down_idx.push(lk.node);
                down_w.push(weight(i, lk.node as usize, lk.offset_i32()));
            }
            down_starts.push(down_idx.len() as u32);
        }
        let mut up_starts = vec![0u32];
        let mut up_idx = Vec::new();
        let mut up_w = Vec::new();
        for j in 0..fine.len() {
            for lk in fine.parents.of(j) {
                up_idx.push(lk.node);
                up_w.push(weight(lk.node as usize, j, lk.offset_i32()));
            }
            up_starts.push(up_idx.len() as u32);
        }
        Self {
            coarse_len: coarse.len(),
            fine_len: fine.len(),
            down_starts,
            down_idx,
            down_w,
            up_starts,
            up_idx,
            up_w,
        }
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse_len
    }

    pub fn fine_len(&self) -> usize {
        self.fine_len
    }

    /// Children of parent `i` with weights `A(i, j)`.
    pub fn children(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.down_starts[i] as usize..self.down_starts[i + 1] as usize;
        self.down_idx[r.clone()].iter().map(|&j| j as usize).zip(self.down_w[r].iter().copied())
    }

    /// Parents of child `j` with weights `A(i, j)`.
    pub fn parents(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.up_starts[j] as usize..self.up_starts[j + 1] as usize;
        self.up_idx[r.clone()].iter().map(|&i| i as usize).zip(self.up_w[r].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.children(i).find(|&(c, _)| c == j).map_or(0.0, |(_, w)| w)
    }

    /// `A x`: fine rows to coarse rows.
    pub fn downsample(&self, x: &FeatureTensor) -> FeatureTensor {
        assert_eq!(x.len(), self.fine_len);
        let c = x.channels;
        let mut out = FeatureTensor::zeros(self.coarse_len, c);
        for i in 0..self.coarse_len {
            let acc = &mut out.data[i * c..(i + 1) * c];
            for (j, w) in self.children(i) {
                for (a, v) in acc.iter_mut().zip(x.row(j)) {
                    *a += w * v;
                }
            }
        }
        out
    }

    /// `A^T x`: coarse rows to fine rows.
    pub fn upsample(&self, x: &FeatureTensor) -> FeatureTensor {
        assert_eq!(x.len(), self.coarse_len);
        let c = x.channels;
        let mut out = FeatureTensor::zeros(self.fine_len, c);
        for j in 0..self.fine_len {
            let acc = &mut out.data[j * c..(j + 1) * c];
            for (i, w) in self.parents(j) {
                for (a, v) in acc.iter_mut().zip(x.row(i)) {
                    *a += w * v;
                }
            }
        }
        out
    }
}

/// `G x` using the 27-point stencil.
pub fn apply_gram(g: &GramTensor, geom: &LevelGeometry, x: &FeatureTensor) -> FeatureTensor {
    assert_eq!(x.len(), g.len());
    let c = x.channels;
    let mut out = FeatureTensor::zeros(g.len(), c);
    for (i, row) in g.entries.iter().enumerate() {
        let acc = &mut out.data[i * c..(i + 1) * c];
        for (s, &w) in row.iter().enumerate() {
            let j = geom.neighbors[i][s];
            if w == 0.0 || j == NO_NODE {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(x.row(j as usize)) {
                *a += w * v;
            }
        }
    }
    out
}

/// A level Gram stencil viewed as a linear operator.
pub struct GramOperator<'a> {
    pub gram: &'a GramTensor,
    pub geom: &'a LevelGeometry,
}

impl LinearOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        self.gram.len()
    }

    fn apply(&self, x: &FeatureTensor) -> FeatureTensor {
        apply_gram(self.gram, self.geom, x)
    }

    fn gershgorin(&self) -> Option<f64> {
        Some(
            self.gram
                .entries
                .iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        )
    }
}

/// Assignment of one child per parent (`a`) with the remaining children (`b`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ASplit {
    /// Selected child of each parent.
    pub a_child: Vec<u32>,
    /// Parent that selected each child, or [`NO_NODE`].
    pub owner: Vec<u32>,
    /// Unselected children in Morton order.
    pub b_children: Vec<u32>,
    /// Position of each child in `b_children`, or [`NO_NODE`].
    pub b_index: Vec<u32>,
}

impl ASplit {
    pub fn b_len(&self) -> usize {
        self.b_children.len()
    }
}

/// Greedy split: parents in Morton order take the unclaimed child with the
/// smallest `|d|_1`, ties broken by Morton order of `d + 1`.
pub fn build_split(coarse: &LevelGeometry, fine: &LevelGeometry) -> Result<ASplit> {
    let mut owner = vec![NO_NODE; fine.len()];
    let mut a_child = Vec::with_capacity(coarse.len());
    for i in 0..coarse.len() {
        let best = coarse
            .children
            .of(i)
            .iter()
            .filter(|lk| owner[lk.node as usize] == NO_NODE)
            .min_by_key(|lk| {
                let d = lk.offset_i32();
                let l1: u32 = d.iter().map(|c| c.unsigned_abs()).sum();
                let key = morton_encode([(d[0] + 1) as u32, (d[1] + 1) as u32, (d[2] + 1) as u32]);
                (l1, key)
            });
        match best {
            Some(lk) => {
                owner[lk.node as usize] = i as u32;
                a_child.push(lk.node);
            }
            None => return Err(Error::SplitFailed { level: coarse.level, parent: i }),
        }
    }
    let mut b_children = Vec::with_capacity(fine.len().saturating_sub(coarse.len()));
    let mut b_index = vec![NO_NODE; fine.len()];
    for j in 0..fine.len() {
        if owner[j] == NO_NODE {
            b_index[j] = b_children.len() as u32;
            b_children.push(j as u32);
        }
    }
    Ok(ASplit { a_child, owner, b_children, b_index })
}

/// Diagonal of `A^a`, i.e. `A(i, a_child[i])`.
pub fn split_diagonal(r: &Resampler, s: &ASplit) -> Vec<f64> {
    s.a_child.iter().enumerate().map(|(i, &c)| r.weight(i, c as usize)).collect()
}

/// `A^a x`, parent rows to parent rows.
pub fn apply_aa(r: &Resampler, s: &ASplit, x: &FeatureTensor) -> FeatureTensor {
    let c = x.channels;
    let mut out = FeatureTensor::zeros(r.coarse_len(), c);
    for i in 0..r.coarse_len() {
        for (j, w) in r.children(i) {
            let o = s.owner[j];
            if o == NO_NODE {
                continue;
            }
            for k in 0..c {
                out.data[i * c + k] += w * x.data[o as usize * c + k];
            }
        }
    }
    out
}

/// `(A^a)^T u`.
pub fn apply_aa_t(r: &Resampler, s: &ASplit, u: &FeatureTensor) -> FeatureTensor {
    let c = u.channels;
    let mut out = FeatureTensor::zeros(r.coarse_len(), c);
    for (ip, &child) in s.a_child.iter().enumerate() {
        for (i, w) in r.parents(child as usize) {
            for k in 0..c {
                out.data[ip * c + k] += w * u.data[i * c + k];
            }
        }
    }
    out
}

/// `A^b g`, b rows to parent rows.
pub fn apply_ab(r: &Resampler, s: &ASplit, g: &FeatureTensor) -> FeatureTensor {
    let c = g.channels;
    let mut out = FeatureTensor::zeros(r.coarse_len(), c);
    for i in 0..r.coarse_len() {
        for (j, w) in r.children(i) {
            let b = s.b_index[j];
            if b == NO_NODE {
                continue;
            }
            for k in 0..c {
                out.data[i * c + k] += w * g.data[b as usize * c + k];
            }
        }
    }
    out
}

/// `(A^b)^T u`, parent rows to b rows.
pub fn apply_ab_t(r: &Resampler, s: &ASplit, u: &FeatureTensor) -> FeatureTensor {
    let c = u.channels;
    let mut out = FeatureTensor::zeros(s.b_len(), c);
    for (k, &j) in s.b_children.iter().enumerate() {
        for (i, w) in r.parents(j as usize) {
            for ch in 0..c {
                out.data[k * c + ch] += w * u.data[i * c + ch];
            }
        }
    }
    out
}

/// Solver settings for `A^a` systems (Jacobi-preconditioned Neumann series).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSolve {
    pub terms: u32,
    /// Required ratio of the last series term to the sum.
    pub tolerance: f64,
}

impl Default for SplitSolve {
    fn default() -> Self {
        Self { terms: 64, tolerance: 1e-12 }
    }
}

struct JacobiAa<'a> {
    r: &'a Resampler,
    s: &'a ASplit,
    inv_diag: &'a [f64],
    transpose: bool,
}

impl LinearOperator for JacobiAa<'_> {
    fn dim(&self) -> usize {
        self.r.coarse_len()
    }

    fn apply(&self, x: &FeatureTensor) -> FeatureTensor {
        if self.transpose {
            let mut y = x.clone();
            y.scale_rows(self.inv_diag);
            apply_aa_t(self.r, self.s, &y)
        } else {
            let mut y = apply_aa(self.r, self.s, x);
            y.scale_rows(self.inv_diag);
            y
        }
    }
}

fn inverse_diagonal(r: &Resampler, s: &ASplit) -> Result<Vec<f64>> {
    split_diagonal(r, s)
        .into_iter()
        .map(|d| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(Error::Divergence("zero diagonal in split".into()))
            }
        })
        .collect()
}

/// `(A^a)^{-1} x`.
pub fn solve_aa(r: &Resampler, s: &ASplit, x: &FeatureTensor, cfg: SplitSolve) -> Result<FeatureTensor> {
    let inv = inverse_diagonal(r, s)?;
    let mut v = x.clone();
    v.scale_rows(&inv);
    let op = JacobiAa { r, s, inv_diag: &inv, transpose: false };
    neumann(&op, &v, cfg.terms, cfg.tolerance)
}

/// `(A^a)^{-T} x`, the exact transpose of [`solve_aa`] at equal settings.
pub fn solve_aa_t(r: &Resampler, s: &ASplit, x: &FeatureTensor, cfg: SplitSolve) -> Result<FeatureTensor> {
    let inv = inverse_diagonal(r, s)?;
    let op = JacobiAa { r, s, inv_diag: &inv, transpose: true };
    let mut w = neumann(&op, x, cfg.terms, cfg.tolerance)?;
    w.scale_rows(&inv);
    Ok(w)
}

/// `Z~ x = x^b - (A^b)^T (A^a)^{-T} x^a` for a fine-level signal `x`.
pub fn apply_ztilde(r: &Resampler, s: &ASplit, x: &FeatureTensor, cfg: SplitSolve) -> Result<FeatureTensor> {
    let xa = x.gather(&s.a_child);
    let u = solve_aa_t(r, s, &xa, cfg)?;
    let mut out = x.gather(&s.b_children);
    out.axpy(-1.0, &apply_ab_t(r, s, &u));
    Ok(out)
}

/// `Z~^T g`, b rows to fine rows.
pub fn apply_ztilde_t(r: &Resampler, s: &ASplit, g: &FeatureTensor, cfg: SplitSolve) -> Result<FeatureTensor> {
    let w = solve_aa(r, s, &apply_ab(r, s, g), cfg)?;
    let c = g.channels;
    let mut out = FeatureTensor::zeros(r.fine_len(), c);
    for (i, &j) in s.a_child.iter().enumerate() {
        for k in 0..c {
            out.data[j as usize * c + k] = -w.data[i * c + k];
        }
    }
    for (k, &j) in s.b_children.iter().enumerate() {
        out.row_mut(j as usize).copy_from_slice(g.row(k));
    }
    Ok(out)
}
