//! Built-in checks against the dense reference.

use std::f64::consts::SQRT_2;

use anyhow::Result;
use nalgebra::DMatrix;
use raht_core::{build_hierarchy, FeatureTensor, Order, PointCloud, ResidualMode, TransformConfig, TransformPlan};
use raht_oracle::butterfly::raht_butterfly;
use raht_oracle::{basis_matrix, project_exact, psi_exact, two_scale_matrix, ztilde_exact};

use crate::synth;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn orders() -> [Order; 2] {
    [Order::P1, Order::P2]
}

pub fn modes() -> [ResidualMode; 2] {
    [ResidualMode::Critical, ResidualMode::Overcomplete]
}

/// Reconstruction error and relative energy gap of a lossless round trip.
pub fn round_trip(cloud: &PointCloud, cfg: &TransformConfig) -> Result<(f64, f64, Vec<ResidualMode>)> {
    let h = build_hierarchy(cloud, cfg.order)?;
    let plan = TransformPlan::new(&h, cfg)?;
    let y = FeatureTensor::from_vec(cloud.attributes.clone(), cloud.channels);
    let c = plan.analyze(&y)?;
    let back = plan.synthesize(&c)?;
    let e = y.dot(&y);
    let gap = if e > 0.0 { (c.energy() - e).abs() / e } else { c.energy() };
    Ok((max_abs_diff(&back.data, &y.data), gap, c.modes))
}

/// Series order per level that brings the slowest non-null mode of the
/// scaled level Gram below `1e-10 / sqrt(kappa)`, taken from the dense spectrum.
pub fn resolving_orders(h: &raht_core::Hierarchy) -> Result<Vec<u32>> {
    (0..=h.depth)
        .map(|l| {
            let phi = basis_matrix(h, l)?;
            let g = phi.transpose() * &phi;
            let d: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)].sqrt().recip()).collect();
            let gs = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| d[i] * g[(i, j)] * d[j]);
            let ev = gs.symmetric_eigen().eigenvalues;
            let top = ev.max();
            let low = ev.iter().copied().filter(|&v| v > 1e-9 * top).fold(f64::INFINITY, f64::min);
            let ratio = (top / low).max(1.0);
            Ok((ratio * (1e10f64.ln() + 0.5 * ratio.ln())).ceil().min(f64::from(u32::MAX)) as u32)
        })
        .collect()
}

/// Largest relative gap, over levels and channels, between the cascade
/// projection and the least-squares fit.
pub fn projection_error(cloud: &PointCloud, order: Order) -> Result<f64> {
    let h = build_hierarchy(cloud, order)?;
    projection_error_with(&h, cloud, resolving_orders(&h)?)
}

/// As [`projection_error`] with explicit per-level series orders.
pub fn projection_error_with(h: &raht_core::Hierarchy, cloud: &PointCloud, orders: Vec<u32>) -> Result<f64> {
    let mut cfg = TransformConfig::new(h.order, ResidualMode::Overcomplete);
    cfg.gram_orders = Some(orders);
    let plan = TransformPlan::new(h, &cfg)?;
    let y = FeatureTensor::from_vec(cloud.attributes.clone(), cloud.channels);
    let proj = plan.projections(&y)?;
    let yd = DMatrix::from_row_slice(y.len(), y.channels, &y.data);
    let mut worst: f64 = 0.0;
    for l in 0..=h.depth {
        let phi = basis_matrix(h, l)?;
        let (_, fitted) = project_exact(&phi, &yd);
        let f = &proj[l as usize];
        let got = &phi * DMatrix::from_row_slice(f.len(), f.channels, &f.data);
        for c in 0..y.channels {
            let want = fitted.column(c);
            let rel = (got.column(c) - want).norm() / want.norm().max(1e-300);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Largest `|Z~ A^T|` and `|Phi^T Psi|` entries over the levels of an RAHT(1) hierarchy.
pub fn orthogonality(cloud: &PointCloud) -> Result<(f64, f64)> {
    let h = build_hierarchy(cloud, Order::P1)?;
    let (mut za, mut pp): (f64, f64) = (0.0, 0.0);
    for l in 0..h.depth {
        let split = raht_core::sparse_ops::build_split(h.level(l), h.level(l + 1))?;
        let a = two_scale_matrix(&h, l)?;
        let z = ztilde_exact(&a, &split)?;
        za = za.max((&z * a.transpose()).amax());
        let psi = psi_exact(&basis_matrix(&h, l + 1)?, &z)?;
        pp = pp.max((basis_matrix(&h, l)?.transpose() * psi).amax());
    }
    Ok((za, pp))
}

/// Compares RAHT(1) critical coefficients with the butterfly reference: the
/// low-pass value, and per parent cell the Gram of the detail rows (which is
/// invariant to the orthonormal basis chosen inside the cell). Returns the
/// largest discrepancy relative to `|y|` (low-pass) and `|y|^2` (Grams).
/// `psi_k` must resolve the detail Gram for the coefficients to be
/// orthonormal ones.
pub fn butterfly_gap(cloud: &PointCloud, psi_k: u32) -> Result<f64> {
    let h = build_hierarchy(cloud, Order::P1)?;
    let mut cfg = TransformConfig::new(Order::P1, ResidualMode::Critical);
    cfg.psi.order = psi_k;
    let plan = TransformPlan::new(&h, &cfg)?;
    let ch = cloud.channels;
    let y = FeatureTensor::from_vec(cloud.attributes.clone(), ch);
    let c = plan.analyze(&y)?;
    if c.modes.iter().any(|&m| m != ResidualMode::Critical) {
        anyhow::bail!("RAHT(1) fell back to overcomplete");
    }
    let bf = raht_butterfly(&cloud.positions, &cloud.attributes, ch, cloud.depth);
    let e = y.dot(&y).max(f64::MIN_POSITIVE);
    let mut gap = max_abs_diff(&c.lowpass.data, &bf.dc) / e.sqrt();
    for block in &bf.blocks {
        let l = block.level as usize;
        let parent = h.levels[l].find(block.parent).expect("parent cell exists");
        let split = raht_core::sparse_ops::build_split(&h.levels[l], &h.levels[l + 1])?;
        let rows: Vec<usize> = h.levels[l]
            .children
            .of(parent)
            .iter()
            .map(|k| split.b_index[k.node as usize])
            .filter(|&b| b != raht_core::geometry::NO_NODE)
            .map(|b| b as usize)
            .collect();
        if rows.len() != block.highs.len() {
            anyhow::bail!("detail count differs at level {l}");
        }
        for a in 0..ch {
            for b in 0..ch {
                let ours: f64 = rows.iter().map(|&r| c.highpass[l].row(r)[a] * c.highpass[l].row(r)[b]).sum();
                let theirs: f64 = block.highs.iter().map(|v| v[a] * v[b]).sum();
                gap = gap.max((ours - theirs).abs() / e);
            }
        }
    }
    Ok(gap)
}

pub const BUTTERFLY_PSI_K: u32 = 4096;

pub fn single_point() -> PointCloud {
    PointCloud::from_voxels(3, vec![[5, 2, 7]], vec![42.0], 1).expect("valid voxel")
}

pub fn two_point_pair() -> PointCloud {
    PointCloud::from_voxels(1, vec![[0, 0, 0], [1, 0, 0]], vec![1.0, 3.0], 1).expect("valid voxels")
}

pub fn sphere_200() -> PointCloud {
    synth::sphere(200, 5, 11)
}

pub fn run() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: String, r: Result<(bool, String)>| {
        let (ok, detail) = r.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        out.push(Check::new(name, ok, detail));
    };

    let single = single_point();
    for order in orders() {
        for mode in modes() {
            let cfg = TransformConfig::new(order, mode).with_series_order(64);
            push(
                format!("single point p={} {mode:?}: reconstruction and energy", order.as_u8()),
                round_trip(&single, &cfg).map(|(err, gap, _)| {
                    (err <= 1e-9 && (mode == ResidualMode::Overcomplete || gap <= 1e-9), format!("err {err:.2e}, energy gap {gap:.2e}"))
                }),
            );
        }
    }

    let pair = two_point_pair();
    push("two points p=1 critical: butterfly values".into(), (|| {
        let h = build_hierarchy(&pair, Order::P1)?;
        let c = raht_core::analyze(
            &FeatureTensor::from_vec(pair.attributes.clone(), 1),
            &h,
            &TransformConfig::new(Order::P1, ResidualMode::Critical),
        )?;
        let lo = c.lowpass.data[0];
        let hi = c.highpass[0].data[0];
        let e = (lo - 4.0 / SQRT_2).abs().max((hi.abs() - 2.0 / SQRT_2).abs());
        Ok((e <= 1e-12, format!("low {lo:.12}, high {hi:.12}")))
    })());
    push("two points p=1: butterfly reference".into(), butterfly_gap(&pair, 64).map(|g| (g <= 1e-8, format!("gap {g:.2e}"))));

    let sphere = sphere_200();
    for order in orders() {
        push(
            format!("200-point sphere p={}: projection vs least squares", order.as_u8()),
            projection_error(&sphere, order).map(|e| (e <= 1e-6, format!("relative error {e:.2e}"))),
        );
        for mode in modes() {
            let cfg = TransformConfig::new(order, mode).with_series_order(64);
            push(
                format!("200-point sphere p={} {mode:?}: reconstruction", order.as_u8()),
                round_trip(&sphere, &cfg).map(|(err, _, _)| (err <= 1e-6, format!("err {err:.2e}"))),
            );
        }
    }
    push(
        "200-point sphere p=1: orthogonality".into(),
        orthogonality(&sphere).map(|(za, pp)| (za <= 1e-10 && pp <= 1e-10, format!("|Z~A^T| {za:.2e}, |Phi^T Psi| {pp:.2e}"))),
    );
    push("200-point sphere p=1: butterfly reference".into(), butterfly_gap(&sphere, BUTTERFLY_PSI_K).map(|g| (g <= 1e-8, format!("gap {g:.2e}"))));
    out
}
