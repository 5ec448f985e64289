//! Quantization, entropy coding and the container format.
//!
//! Layout (little-endian): the header from [`Header::write`], then for every
//! plane (low-pass, then details from coarse to fine) and every channel a
//! `u32` byte length followed by the RLGR-coded quantization indices.

pub mod bits;
pub mod color;
pub mod quant;
pub mod rlgr;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{build_hierarchy, Hierarchy, PointCloud};
use crate::kernels::Order;
use crate::sparse_ops::{FeatureTensor, SplitSolve};
use crate::spectral::{ApproxConfig, BoundMethod};
use crate::transform::{CoeffSet, CoefficientSink, Plane, ResidualMode, TransformConfig, TransformPlan};

pub const MAGIC: [u8; 4] = *b"RAHT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    /// Attributes coded as given.
    Raw,
    /// RGB input coded as BT.709 YUV.
    Yuv709,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub order: Order,
    pub depth: u32,
    pub channels: usize,
    pub color: ColorSpace,
    pub scaling: bool,
    pub point_count: u32,
    pub modes: Vec<ResidualMode>,
    pub gram: ApproxConfig,
    pub psi: ApproxConfig,
    pub split: SplitSolve,
    pub steps: Vec<f64>,
    pub digest: [u8; 32],
}

fn put_approx(out: &mut Vec<u8>, a: &ApproxConfig) {
    out.extend_from_slice(&a.order.to_le_bytes());
    out.extend_from_slice(&a.step_scale.to_le_bytes());
    out.push(match a.bound {
        BoundMethod::Auto => 0,
        BoundMethod::PowerIteration => 1,
    });
    out.extend_from_slice(&a.power_iterations.to_le_bytes());
    out.extend_from_slice(&a.tolerance.unwrap_or(f64::NAN).to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Bitstream("truncated stream".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn approx(&mut self) -> Result<ApproxConfig> {
        let order = self.u32()?;
        let step_scale = self.f64()?;
        let bound = match self.u8()? {
            0 => BoundMethod::Auto,
            1 => BoundMethod::PowerIteration,
            b => return Err(Error::Bitstream(format!("unknown bound method {b}"))),
        };
        let power_iterations = self.u32()?;
        let tol = self.f64()?;
        Ok(ApproxConfig {
            order,
            step_scale,
            bound,
            power_iterations,
            tolerance: (!tol.is_nan()).then_some(tol),
        })
    }
}

impl Header {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.order.as_u8());
        out.push(self.depth as u8);
        out.push(self.channels as u8);
        out.push(match self.color {
            ColorSpace::Raw => 0,
            ColorSpace::Yuv709 => 1,
        });
        out.push(self.scaling as u8);
        out.extend_from_slice(&self.point_count.to_le_bytes());
        for m in &self.modes {
            out.push(match m {
                ResidualMode::Critical => 0,
                ResidualMode::Overcomplete => 1,
            });
        }
        put_approx(out, &self.gram);
        put_approx(out, &self.psi);
        out.extend_from_slice(&self.split.terms.to_le_bytes());
        out.extend_from_slice(&self.split.tolerance.to_le_bytes());
        for s in &self.steps {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&self.digest);
    }

    /// Parses a header, returning it with the number of bytes consumed.
    pub fn read(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Bitstream("bad magic".into()));
        }
        let version = c.u8()?;
        if version != VERSION {
            return Err(Error::Bitstream(format!("unsupported version {version}")));
        }
        let order = Order::from_u8(c.u8()?).ok_or_else(|| Error::Bitstream("bad order".into()))?;
        let depth = u32::from(c.u8()?);
        if depth == 0 || depth > crate::geometry::MAX_DEPTH {
            return Err(Error::Bitstream(format!("bad depth {depth}")));
        }
        let channels = usize::from(c.u8()?);
        if channels == 0 {
            return Err(Error::Bitstream("zero channels".into()));
        }
        let color = match c.u8()? {
            0 => ColorSpace::Raw,
            1 if channels == 3 => ColorSpace::Yuv709,
            v => return Err(Error::Bitstream(format!("bad colour tag {v}"))),
        };
        let scaling = match c.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Bitstream(format!("bad scaling flag {v}"))),
        };
        let point_count = c.u32()?;
        let modes = (0..depth)
            .map(|_| match c.u8()? {
                0 => Ok(ResidualMode::Critical),
                1 => Ok(ResidualMode::Overcomplete),
                v => Err(Error::Bitstream(format!("bad mode {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let gram = c.approx()?;
        let psi = c.approx()?;
        let split = SplitSolve { terms: c.u32()?, tolerance: c.f64()? };
        let steps = (0..channels).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Bitstream("invalid quantization step".into()));
        }
        let digest: [u8; 32] = c.take(32)?.try_into().unwrap();
        let h = Header {
            order,
            depth,
            channels,
            color,
            scaling,
            point_count,
            modes,
            gram,
            psi,
            split,
            steps,
            digest,
        };
        Ok((h, c.pos))
    }

    pub fn transform_config(&self) -> TransformConfig {
        TransformConfig {
            order: self.order,
            mode: ResidualMode::Overcomplete,
            level_modes: Some(self.modes.clone()),
            gram: self.gram,
            gram_orders: None,
            psi: self.psi,
            split: self.split,
            scaling: self.scaling,
            critical_tolerance: None,
            refine_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub transform: TransformConfig,
    /// One quantization step per channel.
    pub steps: Vec<f64>,
    pub color: ColorSpace,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub header_bytes: usize,
    /// Dequantized coefficients as the decoder will see them.
    pub coeffs: CoeffSet,
    /// Decoder output, computed in the encoder loop.
    pub reconstruction: FeatureTensor,
}

struct QuantSink<'a> {
    steps: &'a [f64],
    /// Per plane, per channel indices.
    planes: Vec<Vec<Vec<i64>>>,
}

impl CoefficientSink for QuantSink<'_> {
    fn code(&mut self, _: Plane, coeffs: &mut FeatureTensor) -> Result<()> {
        let ch = coeffs.channels;
        let mut plane = alloc::vec![Vec::with_capacity(coeffs.len()); ch];
        for row in coeffs.data.chunks_exact_mut(ch) {
            for (c, v) in row.iter_mut().enumerate() {
                let q = quant::quantize(*v, self.steps[c]);
                plane[c].push(q);
                *v = quant::dequantize(q, self.steps[c]);
            }
        }
        self.planes.push(plane);
        Ok(())
    }
}

fn check_pair(cloud: &PointCloud, h: &Hierarchy) -> Result<()> {
    if h.depth != cloud.depth || h.finest().nodes != cloud.positions {
        return Err(Error::InvalidInput("hierarchy does not match the cloud".into()));
    }
    Ok(())
}

/// Encodes `cloud.attributes` (already in the coded colour space).
pub fn encode(cloud: &PointCloud, h: &Hierarchy, cfg: &EncoderConfig) -> Result<Encoded> {
    check_pair(cloud, h)?;
    if cfg.steps.len() != cloud.channels {
        return Err(Error::InvalidInput("one quantization step per channel required".into()));
    }
    if cfg.steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidInput("quantization steps must be positive".into()));
    }
    if cloud.channels > 255 {
        return Err(Error::InvalidInput("at most 255 channels".into()));
    }
    if cfg.transform.gram_orders.is_some() {
        return Err(Error::InvalidInput("per-level series orders cannot be signalled".into()));
    }
    if cfg.color == ColorSpace::Yuv709 && cloud.channels != 3 {
        return Err(Error::InvalidInput("YUV coding needs three channels".into()));
    }
    let plan = TransformPlan::new(h, &cfg.transform)?;
    let y = FeatureTensor::from_vec(cloud.attributes.clone(), cloud.channels);
    let mut sink = QuantSink { steps: &cfg.steps, planes: Vec::new() };
    let (coeffs, reconstruction) = plan.analyze_closed(&y, &mut sink)?;
    let header = Header {
        order: cfg.transform.order,
        depth: h.depth,
        channels: cloud.channels,
        color: cfg.color,
        scaling: cfg.transform.scaling,
        point_count: cloud.len() as u32,
        modes: coeffs.modes.clone(),
        gram: cfg.transform.gram,
        psi: cfg.transform.psi,
        split: cfg.transform.split,
        steps: cfg.steps.clone(),
        digest: cloud.digest(),
    };
    let mut bytes = Vec::new();
    header.write(&mut bytes);
    let header_bytes = bytes.len();
    for plane in &sink.planes {
        for chan in plane {
            let coded = rlgr::encode(chan);
            bytes.extend_from_slice(&(coded.len() as u32).to_le_bytes());
            bytes.extend_from_slice(&coded);
        }
    }
    Ok(Encoded { bytes, header_bytes, coeffs, reconstruction })
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub header: Header,
    pub coeffs: CoeffSet,
    /// Attributes in the coded colour space, Morton order.
    pub attributes: FeatureTensor,
}

/// Decodes against a voxelized geometry; `hierarchy` may be passed to reuse one.
pub fn decode(bytes: &[u8], geometry: &PointCloud, hierarchy: Option<&Hierarchy>) -> Result<Decoded> {
    let (header, mut pos) = Header::read(bytes)?;
    if geometry.depth != header.depth || geometry.len() != header.point_count as usize {
        return Err(Error::GeometryMismatch);
    }
    if geometry.digest() != header.digest {
        return Err(Error::GeometryMismatch);
    }
    let built;
    let h = match hierarchy {
        Some(h) => {
            check_pair(geometry, h)?;
            if h.order != header.order {
                return Err(Error::InvalidInput("hierarchy order differs from stream".into()));
            }
            h
        }
        None => {
            built = build_hierarchy(geometry, header.order)?;
            &built
        }
    };
    let plan = TransformPlan::new(h, &header.transform_config())?;
    let ch = header.channels;
    let mut read_plane = |rows: usize| -> Result<FeatureTensor> {
        let mut t = FeatureTensor::zeros(rows, ch);
        for c in 0..ch {
            let mut cur = Cursor { bytes, pos };
            let len = cur.u32()? as usize;
            let chunk = cur.take(len)?;
            pos = cur.pos;
            let q = rlgr::decode(chunk, rows)?;
            for (r, v) in q.into_iter().enumerate() {
                t.data[r * ch + c] = quant::dequantize(v, header.steps[c]);
            }
        }
        Ok(t)
    };
    let lowpass = read_plane(h.levels[0].len())?;
    let mut highpass = Vec::with_capacity(header.depth as usize);
    for (l, &m) in header.modes.iter().enumerate() {
        highpass.push(read_plane(plan.highpass_len(l, m)?)?);
    }
    if pos != bytes.len() {
        return Err(Error::Bitstream("trailing bytes after payload".into()));
    }
    let coeffs = CoeffSet {
        lowpass,
        highpass,
        modes: header.modes.clone(),
        scalers: header.scaling.then(|| (0..=header.depth as usize).map(|l| plan.norms(l).to_vec()).collect()),
    };
    let attributes = plan.synthesize(&coeffs)?;
    Ok(Decoded { header, coeffs, attributes })
}
