//! Refinement kernels and the recursive Gram stencils.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{slot, Hierarchy, LevelGeometry, CENTER_SLOT, NO_NODE};

/// B-spline order: `P1` is piecewise constant, `P2` is trilinear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    P1,
    P2,
}

impl Order {
    pub fn as_u8(self) -> u8 {
        match self {
            Order::P1 => 1,
            Order::P2 => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Order::P1),
            2 => Some(Order::P2),
            _ => None,
        }
    }
}

/// Two-scale coefficient `a(d)` for offset `d = child - 2 * parent`.
pub fn kernel_weight(order: Order, d: [i32; 3]) -> f64 {
    match order {
        Order::P1 => {
            if d.iter().all(|&c| c == 0 || c == 1) {
                1.0
            } else {
                0.0
            }
        }
        Order::P2 => {
            if d.iter().all(|&c| (-1..=1).contains(&c)) {
                let l1 = d.iter().map(|c| c.unsigned_abs()).sum::<u32>();
                1.0 / f64::from(1u32 << l1)
            } else {
                0.0
            }
        }
    }
}

/// Symmetric 27-point stencil of a level Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramTensor {
    pub level: u32,
    /// `entries[i][slot(n_j - n_i)] = G(i, j)`.
    pub entries: Vec<[f64; 27]>,
}

impl GramTensor {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e[CENTER_SLOT]).collect()
    }

    /// `S G S` for a diagonal `S`.
    pub fn rescaled(&self, geom: &LevelGeometry, s: &[f64]) -> GramTensor {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut out = [0.0; 27];
                for (k, &g) in row.iter().enumerate() {
                    let j = geom.neighbors[i][k];
                    if g != 0.0 && j != NO_NODE {
                        out[k] = s[i] * g * s[j as usize];
                    }
                }
                out
            })
            .collect();
        GramTensor { level: self.level, entries }
    }
}

/// Identity Gram at the voxel level.
pub fn gram_init(level: u32, n: usize) -> GramTensor {
    let mut row = [0.0; 27];
    row[CENTER_SLOT] = 1.0;
    GramTensor { level, entries: vec![row; n] }
}

/// `G_l = A_l G_{l+1} A_l^T`, accumulated parent by parent in Morton order.
pub fn gram_downsample(
    fine_gram: &GramTensor,
    coarse: &LevelGeometry,
    fine: &LevelGeometry,
    order: Order,
) -> GramTensor {
    let mut entries = vec![[0.0; 27]; coarse.len()];
    for (i, out) in entries.iter_mut().enumerate() {
        let ni = coarse.nodes[i];
        for ch in coarse.children.of(i) {
            let j = ch.node as usize;
            let w = kernel_weight(order, ch.offset_i32());
            for (s, &g) in fine_gram.entries[j].iter().enumerate() {
                let jj = fine.neighbors[j][s];
                if g == 0.0 || jj == NO_NODE {
                    continue;
                }
                for pl in fine.parents.of(jj as usize) {
                    let nk = coarse.nodes[pl.node as usize];
                    let delta = [
                        nk[0] as i32 - ni[0] as i32,
                        nk[1] as i32 - ni[1] as i32,
                        nk[2] as i32 - ni[2] as i32,
                    ];
                    assert!(
                        delta.iter().all(|c| (-1..=1).contains(c)),
                        "coarse Gram left the 27-neighbourhood"
                    );
                    out[slot(delta)] += w * g * kernel_weight(order, pl.offset_i32());
                }
            }
        }
    }
    // Mirror-average so the stored stencil is exactly symmetric.
    for i in 0..entries.len() {
        for s in 0..27 {
            let j = coarse.neighbors[i][s];
            if j == NO_NODE || (j as usize) <= i {
                continue;
            }
            let j = j as usize;
            let m = 26 - s;
            let avg = 0.5 * (entries[i][s] + entries[j][m]);
            entries[i][s] = avg;
            entries[j][m] = avg;
        }
    }
    GramTensor { level: coarse.level, entries }
}

/// Gram stencils for all levels, `result[l]` at level `l`.
pub fn gram_pyramid(h: &Hierarchy) -> Vec<GramTensor> {
    let depth = h.depth as usize;
    let mut out = Vec::with_capacity(depth + 1);
    out.push(gram_init(h.depth, h.finest().len()));
    for l in (0..depth).rev() {
        let g = gram_downsample(out.last().unwrap(), &h.levels[l], &h.levels[l + 1], h.order);
        out.push(g);
    }
    out.reverse();
    out
}
