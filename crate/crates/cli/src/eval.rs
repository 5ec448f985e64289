//! Encode/decode pipelines, rate-distortion sweeps and energy-compaction curves.

use std::io::Write;

use anyhow::Result;
use rayon::prelude::*;
use raht_core::codec::{self, color, ColorSpace, EncoderConfig};
use raht_core::transform::{retained_count, truncate_to_level};
use raht_core::{build_hierarchy, FeatureTensor, Hierarchy, Order, PointCloud, ResidualMode, TransformConfig, TransformPlan};

use crate::metrics;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecOptions {
    pub order: Order,
    pub mode: ResidualMode,
    pub step: f64,
    /// Series order for Gram functions.
    pub taylor_k: u32,
    /// Series order for the detail-basis Gram.
    pub psi_k: u32,
    pub scaling: bool,
    /// Per-level fallback to the overcomplete residual when the critical one
    /// is unavailable or inaccurate.
    pub fallback: bool,
}

impl Default for CodecOptions {
    fn default() -> Self {
        let t = TransformConfig::new(Order::P2, ResidualMode::Critical);
        Self {
            order: Order::P2,
            mode: ResidualMode::Critical,
            step: 8.0,
            taylor_k: t.gram.order,
            psi_k: t.psi.order,
            scaling: true,
            fallback: true,
        }
    }
}

impl CodecOptions {
    pub fn transform(&self) -> TransformConfig {
        let mut t = TransformConfig::new(self.order, self.mode);
        t.gram.order = self.taylor_k;
        t.psi.order = self.psi_k;
        t.scaling = self.scaling;
        if !self.fallback {
            t.critical_tolerance = None;
        }
        t
    }

    /// RGB clouds are coded as YUV; anything else as given.
    pub fn encoder(&self, channels: usize) -> EncoderConfig {
        EncoderConfig {
            transform: self.transform(),
            steps: vec![self.step; channels],
            color: if channels == 3 { ColorSpace::Yuv709 } else { ColorSpace::Raw },
        }
    }
}

pub fn order_name(o: Order) -> u8 {
    o.as_u8()
}

pub fn mode_name(m: ResidualMode) -> &'static str {
    match m {
        ResidualMode::Critical => "critical",
        ResidualMode::Overcomplete => "overcomplete",
    }
}

/// Attributes in the coded colour space.
pub fn coded_space(cloud: &PointCloud, color: ColorSpace) -> PointCloud {
    let mut c = cloud.clone();
    if color == ColorSpace::Yuv709 {
        color::rgb_to_yuv_rows(&mut c.attributes);
    }
    c
}

#[derive(Debug, Clone)]
pub struct EncodeReport {
    pub bytes: Vec<u8>,
    pub header_bytes: usize,
    pub points: usize,
    pub modes: Vec<ResidualMode>,
    /// Levels requested critical that were coded overcomplete.
    pub fallback_levels: Vec<usize>,
}

impl EncodeReport {
    pub fn payload_bits(&self) -> usize {
        8 * (self.bytes.len() - self.header_bytes)
    }

    /// Payload bits per input voxel; the header is excluded.
    pub fn bpp(&self) -> f64 {
        self.payload_bits() as f64 / self.points as f64
    }
}

pub fn encode_cloud(cloud: &PointCloud, h: &Hierarchy, opts: &CodecOptions) -> Result<EncodeReport> {
    let cfg = opts.encoder(cloud.channels);
    let coded = coded_space(cloud, cfg.color);
    let enc = codec::encode(&coded, h, &cfg)?;
    let fallback_levels = enc
        .coeffs
        .modes
        .iter()
        .enumerate()
        .filter(|(l, &m)| m != cfg.transform.requested_mode(*l))
        .map(|(l, _)| l)
        .collect();
    Ok(EncodeReport {
        bytes: enc.bytes,
        header_bytes: enc.header_bytes,
        points: cloud.len(),
        modes: enc.coeffs.modes,
        fallback_levels,
    })
}

/// Decoded attributes, in the coded space and converted back to the input space.
pub fn decode_cloud(bytes: &[u8], geometry: &PointCloud, h: Option<&Hierarchy>) -> Result<(FeatureTensor, Vec<f64>)> {
    let dec = codec::decode(bytes, geometry, h)?;
    let mut out = dec.attributes.data.clone();
    if dec.header.color == ColorSpace::Yuv709 {
        color::yuv_to_rgb_rows(&mut out);
    }
    Ok((dec.attributes, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdRow {
    pub order: u8,
    pub mode: &'static str,
    pub step: f64,
    pub bpp: f64,
    /// Per channel, in the coded colour space.
    pub psnr: Vec<f64>,
    pub psnr_yuv: f64,
}

/// Encodes, decodes the bytes and measures distortion in the coded space.
pub fn rd_point(cloud: &PointCloud, h: &Hierarchy, opts: &CodecOptions) -> Result<RdRow> {
    let rep = encode_cloud(cloud, h, opts)?;
    let (coded_out, _) = decode_cloud(&rep.bytes, cloud, Some(h))?;
    let color = opts.encoder(cloud.channels).color;
    let reference = coded_space(cloud, color);
    let mse = metrics::mse(&reference.attributes, &coded_out.data, cloud.channels);
    let psnr: Vec<f64> = mse.iter().map(|&m| metrics::psnr(m)).collect();
    let psnr_yuv = if cloud.channels == 3 {
        metrics::psnr_yuv(&mse)
    } else {
        metrics::psnr(mse.iter().sum::<f64>() / mse.len() as f64)
    };
    Ok(RdRow {
        order: order_name(opts.order),
        mode: mode_name(opts.mode),
        step: opts.step,
        bpp: rep.bpp(),
        psnr,
        psnr_yuv,
    })
}

/// One row per (order, mode, step), in that nesting order; points run in parallel.
pub fn rd_sweep(
    cloud: &PointCloud,
    orders: &[Order],
    modes: &[ResidualMode],
    steps: &[f64],
    base: &CodecOptions,
) -> Result<Vec<RdRow>> {
    let hierarchies = orders
        .iter()
        .map(|&o| build_hierarchy(cloud, o))
        .collect::<raht_core::Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (oi, &order) in orders.iter().enumerate() {
        for &mode in modes {
            for &step in steps {
                jobs.push((oi, CodecOptions { order, mode, step, ..base.clone() }));
            }
        }
    }
    jobs.par_iter().map(|(oi, o)| rd_point(cloud, &hierarchies[*oi], o)).collect()
}

pub const RD_COLUMNS: [&str; 8] = ["order", "mode", "step", "bpp", "psnr_y", "psnr_u", "psnr_v", "psnr_yuv"];

pub fn write_rd_csv<W: Write>(out: W, rows: &[RdRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RD_COLUMNS)?;
    for r in rows {
        let p = |c: usize| r.psnr.get(c).map(|v| format!("{v:.4}")).unwrap_or_default();
        w.write_record([
            r.order.to_string(),
            r.mode.to_string(),
            format!("{}", r.step),
            format!("{:.6}", r.bpp),
            p(0),
            p(1),
            p(2),
            format!("{:.4}", r.psnr_yuv),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionRow {
    pub order: u8,
    pub mode: &'static str,
    pub level: u32,
    pub coefficients: usize,
    /// Per-attribute MSE of the truncated reconstruction, in dB.
    pub mse_db: f64,
}

/// Reconstruction error after keeping the low-pass and details below each
/// level, without quantization. Counts are per channel.
pub fn compaction(cloud: &PointCloud, h: &Hierarchy, opts: &CodecOptions) -> Result<Vec<CompactionRow>> {
    let cfg = opts.transform();
    let plan = TransformPlan::new(h, &cfg)?;
    let y = FeatureTensor::from_vec(cloud.attributes.clone(), cloud.channels);
    let coeffs = plan.analyze(&y)?;
    let mut rows = Vec::new();
    for level in 0..=h.depth {
        let rec = plan.synthesize(&truncate_to_level(&coeffs, level))?;
        let mse = metrics::mse(&y.data, &rec.data, cloud.channels);
        let mean = mse.iter().sum::<f64>() / mse.len() as f64;
        rows.push(CompactionRow {
            order: order_name(opts.order),
            mode: mode_name(opts.mode),
            level,
            coefficients: retained_count(&coeffs, level),
            mse_db: metrics::mse_db(mean),
        });
    }
    Ok(rows)
}

pub const COMPACTION_COLUMNS: [&str; 5] = ["order", "mode", "level", "coefficients", "mse_db"];

pub fn write_compaction_csv<W: Write>(out: W, rows: &[CompactionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPACTION_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.order.to_string(),
            r.mode.to_string(),
            r.level.to_string(),
            r.coefficients.to_string(),
            format!("{:.4}", r.mse_db),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `curve`'s dB value at `count`, linear in log-count between its rows.
pub fn interpolate_db(curve: &[CompactionRow], count: usize) -> Option<f64> {
    let x = (count as f64).ln();
    curve.windows(2).find_map(|w| {
        let (x0, x1) = ((w[0].coefficients as f64).ln(), (w[1].coefficients as f64).ln());
        if x0 <= x && x <= x1 {
            if x1 == x0 {
                return Some(w[0].mse_db.min(w[1].mse_db));
            }
            let t = (x - x0) / (x1 - x0);
            Some(w[0].mse_db + t * (w[1].mse_db - w[0].mse_db))
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn tiny_step_reconstructs_within_half() {
        let cloud = synth::sphere(100, 5, 3);
        for order in [Order::P1, Order::P2] {
            let h = build_hierarchy(&cloud, order).unwrap();
            let opts = CodecOptions { order, step: 1e-3, taylor_k: 64, ..CodecOptions::default() };
            let rep = encode_cloud(&cloud, &h, &opts).unwrap();
            let (_, rgb) = decode_cloud(&rep.bytes, &cloud, None).unwrap();
            let err = rgb.iter().zip(&cloud.attributes).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5, "order {order:?} err {err}");
        }
    }

    #[test]
    fn psnr_falls_as_step_grows() {
        let cloud = synth::sphere(400, 6, 5);
        let base = CodecOptions { taylor_k: 64, ..CodecOptions::default() };
        let rows = rd_sweep(&cloud, &[Order::P1, Order::P2], &[ResidualMode::Critical], &[1.0, 4.0, 16.0, 64.0], &base).unwrap();
        assert_eq!(rows.len(), 8);
        for w in rows.chunks(4) {
            for p in w.windows(2) {
                assert!(p[1].psnr_yuv <= p[0].psnr_yuv + 1e-9, "{p:?}");
                assert!(p[1].bpp <= p[0].bpp);
            }
        }
    }

    #[test]
    fn compaction_rows_are_monotone() {
        let cloud = synth::sphere(300, 5, 9);
        for order in [Order::P1, Order::P2] {
            let h = build_hierarchy(&cloud, order).unwrap();
            let opts = CodecOptions { order, taylor_k: 128, ..CodecOptions::default() };
            let rows = compaction(&cloud, &h, &opts).unwrap();
            assert_eq!(rows.len(), 6);
            assert!(rows.last().unwrap().mse_db < -60.0);
            for w in rows.windows(2) {
                assert!(w[1].coefficients >= w[0].coefficients);
                assert!(w[1].mse_db <= w[0].mse_db + 1e-6, "{order:?} {w:?}");
            }
        }
    }

    #[test]
    fn interpolation() {
        let row = |c, d| CompactionRow { order: 1, mode: "critical", level: 0, coefficients: c, mse_db: d };
        let curve = [row(1, 10.0), row(100, 0.0)];
        assert!((interpolate_db(&curve, 10).unwrap() - 5.0).abs() < 1e-12);
        assert!(interpolate_db(&curve, 1000).is_none());
    }
}
