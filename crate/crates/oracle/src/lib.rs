//! Dense reference computations for small clouds.
//!
//! Everything here is rebuilt from the basis functions themselves: basis
//! matrices come from evaluating box / hat splines at the voxels, not from the
//! refinement recursion used by `raht-core`.

pub mod butterfly;

use nalgebra::{DMatrix, DVector};
use raht_core::geometry::{Hierarchy, NO_NODE};
use raht_core::kernels::Order;
use raht_core::sparse_ops::ASplit;

pub const MAX_POINTS: usize = 500;
pub const MAX_DEPTH: u32 = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("instance too large for dense reference ({points} points, depth {depth})")]
    TooLarge { points: usize, depth: u32 },
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("function undefined on a negative or zero eigenvalue")]
    Domain,
}

pub type Result<T> = std::result::Result<T, OracleError>;

pub fn check_size(h: &Hierarchy) -> Result<()> {
    let points = h.finest().len();
    if points > MAX_POINTS || h.depth > MAX_DEPTH {
        return Err(OracleError::TooLarge { points, depth: h.depth });
    }
    Ok(())
}

fn spline(order: Order, t: f64) -> f64 {
    match order {
        Order::P1 => {
            if (0.0..1.0).contains(&t) {
                1.0
            } else {
                0.0
            }
        }
        Order::P2 => (1.0 - t.abs()).max(0.0),
    }
}

/// Value at voxel `x` of the level-`level` basis function at node `n`.
pub fn basis_value(order: Order, depth: u32, level: u32, n: [u32; 3], x: [u32; 3]) -> f64 {
    let s = f64::from(1u32 << (depth - level));
    (0..3).map(|a| spline(order, f64::from(x[a]) / s - f64::from(n[a]))).product()
}

/// `Phi_l`: rows are voxels, columns are level-`level` nodes.
pub fn basis_matrix(h: &Hierarchy, level: u32) -> Result<DMatrix<f64>> {
    check_size(h)?;
    let pts = &h.finest().nodes;
    let nodes = &h.level(level).nodes;
    Ok(DMatrix::from_fn(pts.len(), nodes.len(), |i, j| {
        basis_value(h.order, h.depth, level, nodes[j], pts[i])
    }))
}

fn kernel(order: Order, d: [i64; 3]) -> f64 {
    match order {
        Order::P1 => {
            if d.iter().all(|&c| c == 0 || c == 1) {
                1.0
            } else {
                0.0
            }
        }
        Order::P2 => d.iter().map(|&c| if c == 0 { 1.0 } else if c.abs() == 1 { 0.5 } else { 0.0 }).product(),
    }
}

/// Two-scale matrix `A_l` (`N_l x N_{l+1}`) from the kernel formula.
pub fn two_scale_matrix(h: &Hierarchy, level: u32) -> Result<DMatrix<f64>> {
    check_size(h)?;
    let coarse = &h.level(level).nodes;
    let fine = &h.level(level + 1).nodes;
    Ok(DMatrix::from_fn(coarse.len(), fine.len(), |i, j| {
        let d = [0, 1, 2].map(|a| i64::from(fine[j][a]) - 2 * i64::from(coarse[i][a]));
        kernel(h.order, d)
    }))
}

/// Minimum-norm least-squares coefficients and fitted values.
pub fn project_exact(phi: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = phi.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    let coeffs = svd.solve(y, tol).expect("SVD with vectors");
    let fitted = phi * &coeffs;
    (coeffs, fitted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseFunction {
    Inverse,
    InverseSqrt,
    Sqrt,
    /// Pseudo-inverse: eigenvalues below `1e-12 * max` map to zero.
    PseudoInverse,
    PseudoInverseSqrt,
}

/// `h(X)` by symmetric eigendecomposition.
pub fn matfun_exact(x: &DMatrix<f64>, h: DenseFunction) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let scale = x.amax().max(1e-300);
    if (x - x.transpose()).amax() > 1e-12 * scale {
        return Err(OracleError::NotSymmetric);
    }
    let eig = x.clone().symmetric_eigen();
    let top = eig.eigenvalues.max();
    let cut = 1e-12 * top.abs().max(1e-300);
    let mut vals = DVector::zeros(n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        vals[k] = match h {
            DenseFunction::Inverse | DenseFunction::InverseSqrt if l <= 0.0 => {
                return Err(OracleError::Domain)
            }
            DenseFunction::Sqrt if l < -cut => return Err(OracleError::Domain),
            DenseFunction::Inverse => 1.0 / l,
            DenseFunction::InverseSqrt => 1.0 / l.sqrt(),
            DenseFunction::Sqrt => l.max(0.0).sqrt(),
            DenseFunction::PseudoInverse => {
                if l > cut {
                    1.0 / l
                } else {
                    0.0
                }
            }
            DenseFunction::PseudoInverseSqrt => {
                if l > cut {
                    1.0 / l.sqrt()
                } else {
                    0.0
                }
            }
        };
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&vals) * v.transpose())
}

/// `Z~ = [-(A^b)^T (A^a)^{-T}, I]`, with columns in fine-node order.
pub fn ztilde_exact(a: &DMatrix<f64>, split: &ASplit) -> Result<DMatrix<f64>> {
    let np = a.nrows();
    let nf = a.ncols();
    let aa = DMatrix::from_fn(np, np, |i, k| a[(i, split.a_child[k] as usize)]);
    let ab = DMatrix::from_fn(np, split.b_len(), |i, k| a[(i, split.b_children[k] as usize)]);
    let aa_inv = aa.try_inverse().ok_or(OracleError::Singular)?;
    if !aa_inv.iter().all(|v| v.is_finite()) {
        return Err(OracleError::Singular);
    }
    let left = -(ab.transpose() * aa_inv.transpose());
    let mut z = DMatrix::zeros(split.b_len(), nf);
    for k in 0..np {
        z.set_column(split.a_child[k] as usize, &left.column(k));
    }
    for (k, &j) in split.b_children.iter().enumerate() {
        z[(k, j as usize)] = 1.0;
    }
    Ok(z)
}

/// `Psi = Phi_{l+1} G^{-1} Z~^T`.
pub fn psi_exact(phi_fine: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = phi_fine.transpose() * phi_fine;
    let ginv = matfun_exact(&g, DenseFunction::Inverse)?;
    Ok(phi_fine * ginv * z.transpose())
}

/// Splits column `channel` of row-major attributes into a dense column.
pub fn column(data: &[f64], channels: usize, channel: usize) -> DMatrix<f64> {
    let rows = data.len() / channels;
    DMatrix::from_fn(rows, 1, |i, _| data[i * channels + channel])
}

/// Row-major attributes as a dense matrix.
pub fn attributes(data: &[f64], channels: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(data.len() / channels, channels, data)
}

/// Neighbour table consistency: every stencil entry points at the node it claims.
pub fn neighbours_consistent(h: &Hierarchy) -> bool {
    h.levels.iter().all(|lv| {
        lv.neighbors.iter().enumerate().all(|(i, row)| {
            row.iter().enumerate().all(|(s, &j)| {
                let d = raht_core::geometry::slot_offset(s);
                let want = [0, 1, 2].map(|a| i64::from(lv.nodes[i][a]) + i64::from(d[a]));
                let found = lv.nodes.iter().position(|n| [0, 1, 2].map(|a| i64::from(n[a])) == want);
                match found {
                    Some(k) => j as usize == k,
                    None => j == NO_NODE,
                }
            })
        })
    })
}
