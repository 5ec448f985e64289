//! Multilevel analysis and synthesis.
//!
//! Analysis runs the decoder in the loop: every residual is taken against the
//! reconstruction the decoder will actually hold, so series truncation and
//! quantization errors never accumulate across levels.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Error, Result};
use crate::geometry::Hierarchy;
use crate::kernels::{gram_pyramid, GramTensor, Order};
use crate::sparse_ops::{
    apply_gram, apply_ztilde, apply_ztilde_t, build_split, ASplit, FeatureTensor, GramOperator,
    Resampler, SplitSolve,
};
use crate::spectral::{
    apply_series_bounded, eigen_bound, power_iteration, ApproxConfig, LinearOperator,
    MatrixFunction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualMode {
    Critical,
    Overcomplete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformConfig {
    pub order: Order,
    pub mode: ResidualMode,
    /// Per-level override of `mode`, one entry per detail level.
    pub level_modes: Option<Vec<ResidualMode>>,
    /// Series for `G^{-1}` and `G^{+-1/2}`.
    pub gram: ApproxConfig,
    /// Per-level override of `gram.order`, one entry per level `0..=depth`.
    /// Not carried in bitstreams.
    pub gram_orders: Option<Vec<u32>>,
    /// Series for `(Psi^T Psi)^{-1/2}`.
    pub psi: ApproxConfig,
    pub split: SplitSolve,
    /// Diagonal rescaling of both bases to unit norm.
    pub scaling: bool,
    /// A critical level whose function-space loss exceeds this fraction of
    /// the input norm is coded overcomplete instead. `None` never falls back.
    pub critical_tolerance: Option<f64>,
    /// Encoder-side correction passes on a critical level before the
    /// tolerance test gives up on it. Decoding is unaffected.
    pub refine_steps: u32,
}

impl TransformConfig {
    pub fn new(order: Order, mode: ResidualMode) -> Self {
        Self {
            order,
            mode,
            level_modes: None,
            gram: ApproxConfig::default(),
            gram_orders: None,
            psi: ApproxConfig::with_order(64),
            split: SplitSolve::default(),
            scaling: true,
            critical_tolerance: Some(1e-10),
            refine_steps: 32,
        }
    }

    /// Same `K` for every series role.
    pub fn with_series_order(mut self, k: u32) -> Self {
        self.gram.order = k;
        self.psi.order = k;
        self
    }

    pub fn requested_mode(&self, level: usize) -> ResidualMode {
        match &self.level_modes {
            Some(m) => m[level],
            None => self.mode,
        }
    }
}

/// Transform coefficients. `highpass[l]` refines level `l` to `l + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSet {
    pub lowpass: FeatureTensor,
    pub highpass: Vec<FeatureTensor>,
    pub modes: Vec<ResidualMode>,
    /// Per-level basis norms when scaling is on.
    pub scalers: Option<Vec<Vec<f64>>>,
}

impl CoeffSet {
    pub fn channels(&self) -> usize {
        self.lowpass.channels
    }

    pub fn count(&self) -> usize {
        self.lowpass.len() + self.highpass.iter().map(FeatureTensor::len).sum::<usize>()
    }

    pub fn energy(&self) -> f64 {
        self.lowpass.dot(&self.lowpass) + self.highpass.iter().map(|h| h.dot(h)).sum::<f64>()
    }
}

/// Keeps the low-pass and the details below `level`, zeroing the rest.
pub fn truncate_to_level(coeffs: &CoeffSet, level: u32) -> CoeffSet {
    let mut out = coeffs.clone();
    for h in out.highpass.iter_mut().skip(level as usize) {
        h.data.iter_mut().for_each(|v| *v = 0.0);
    }
    out
}

/// Number of coefficients kept by [`truncate_to_level`].
pub fn retained_count(coeffs: &CoeffSet, level: u32) -> usize {
    coeffs.lowpass.len() + coeffs.highpass.iter().take(level as usize).map(FeatureTensor::len).sum::<usize>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Lowpass,
    Highpass(u32),
}

/// Hook that may replace coefficients (e.g. by their quantized values)
/// before the in-loop decoder sees them.
pub trait CoefficientSink {
    fn code(&mut self, plane: Plane, coeffs: &mut FeatureTensor) -> Result<()>;
}

pub struct Lossless;

impl CoefficientSink for Lossless {
    fn code(&mut self, _: Plane, _: &mut FeatureTensor) -> Result<()> {
        Ok(())
    }
}

struct CriticalStep {
    split: ASplit,
    /// `D_Psi^{-1/2}`, or ones without scaling.
    psi_scale: Vec<f64>,
    bound: f64,
}

/// Geometry-only state shared by analysis and synthesis.
pub struct TransformPlan<'h> {
    h: &'h Hierarchy,
    cfg: TransformConfig,
    norms: Vec<Vec<f64>>,
    grams: Vec<GramTensor>,
    gram_bounds: Vec<f64>,
    resamplers: Vec<Resampler>,
    critical: Vec<Option<CriticalStep>>,
    /// Why a requested critical step could not be built.
    critical_errors: Vec<Option<Error>>,
}

/// `D_Psi^{-1/2} Z~ G^{-1} Z~^T D_Psi^{-1/2}`, evaluated matrix-free.
struct PsiGram<'a, 'h> {
    plan: &'a TransformPlan<'h>,
    level: usize,
    split: &'a ASplit,
    scale: &'a [f64],
    error: RefCell<Option<Error>>,
}

impl PsiGram<'_, '_> {
    fn try_apply(&self, g: &FeatureTensor) -> Result<FeatureTensor> {
        let p = self.plan;
        let l = self.level;
        let mut x = g.clone();
        x.scale_rows(self.scale);
        let up = apply_ztilde_t(&p.resamplers[l], self.split, &x, p.cfg.split)?;
        let inv = p.gram_fn(l + 1, &up, MatrixFunction::Inverse)?;
        let mut out = apply_ztilde(&p.resamplers[l], self.split, &inv, p.cfg.split)?;
        out.scale_rows(self.scale);
        Ok(out)
    }

    fn take_error(&self) -> Result<()> {
        match self.error.borrow_mut().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl LinearOperator for PsiGram<'_, '_> {
    fn dim(&self) -> usize {
        self.split.b_len()
    }

    fn apply(&self, g: &FeatureTensor) -> FeatureTensor {
        match self.try_apply(g) {
            Ok(v) => v,
            Err(e) => {
                self.error.borrow_mut().get_or_insert(e);
                FeatureTensor::zeros(g.len(), g.channels)
            }
        }
    }
}

impl<'h> TransformPlan<'h> {
    pub fn new(h: &'h Hierarchy, cfg: &TransformConfig) -> Result<Self> {
        if h.order != cfg.order {
            return Err(Error::InvalidInput("hierarchy built for a different order".into()));
        }
        let depth = h.depth as usize;
        if let Some(m) = &cfg.level_modes {
            if m.len() != depth {
                return Err(Error::InvalidInput("level_modes length must equal depth".into()));
            }
        }
        if cfg.gram_orders.as_ref().is_some_and(|k| k.len() != depth + 1) {
            return Err(Error::InvalidInput("gram_orders needs one entry per level".into()));
        }
        let raw = gram_pyramid(h);
        let norms: Vec<Vec<f64>> = raw
            .iter()
            .map(|g| {
                if cfg.scaling {
                    g.diagonal().into_iter().map(libm::sqrt).collect()
                } else {
                    vec![1.0; g.len()]
                }
            })
            .collect();
        let grams: Vec<GramTensor> = if cfg.scaling {
            raw.iter()
                .enumerate()
                .map(|(l, g)| {
                    let inv: Vec<f64> = norms[l].iter().map(|s| 1.0 / s).collect();
                    g.rescaled(&h.levels[l], &inv)
                })
                .collect()
        } else {
            raw
        };
        let gram_bounds = grams
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let op = GramOperator { gram: g, geom: &h.levels[l] };
                eigen_bound(&op, cfg.gram.bound, cfg.gram.power_iterations)
            })
            .collect();
        let resamplers = (0..depth)
            .map(|l| {
                Resampler::scaled(
                    &h.levels[l],
                    &h.levels[l + 1],
                    h.order,
                    Some((&norms[l], &norms[l + 1])),
                )
            })
            .collect();
        let mut plan = Self {
            h,
            cfg: cfg.clone(),
            norms,
            grams,
            gram_bounds,
            resamplers,
            critical: Vec::new(),
            critical_errors: Vec::new(),
        };
        for l in 0..depth {
            if cfg.requested_mode(l) == ResidualMode::Critical {
                match plan.build_critical(l) {
                    Ok(step) => {
                        plan.critical.push(Some(step));
                        plan.critical_errors.push(None);
                    }
                    Err(e) => {
                        plan.critical.push(None);
                        plan.critical_errors.push(Some(e));
                    }
                }
            } else {
                plan.critical.push(None);
                plan.critical_errors.push(None);
            }
        }
        Ok(plan)
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        self.h
    }

    pub fn config(&self) -> &TransformConfig {
        &self.cfg
    }

    /// Gram stencil of level `l` in the (possibly rescaled) basis.
    pub fn gram(&self, l: usize) -> &GramTensor {
        &self.grams[l]
    }

    pub fn norms(&self, l: usize) -> &[f64] {
        &self.norms[l]
    }

    pub fn resampler(&self, l: usize) -> &Resampler {
        &self.resamplers[l]
    }

    /// Reason the critical step at `l` is unavailable, if it was requested.
    pub fn critical_error(&self, l: usize) -> Option<&Error> {
        self.critical_errors[l].as_ref()
    }

    pub fn critical_available(&self, l: usize) -> bool {
        self.critical[l].is_some()
    }

    /// Rows of the detail plane at level `l` in `mode`.
    pub fn highpass_len(&self, l: usize, mode: ResidualMode) -> Result<usize> {
        match mode {
            ResidualMode::Overcomplete => Ok(self.h.levels[l + 1].len()),
            ResidualMode::Critical => match &self.critical[l] {
                Some(s) => Ok(s.split.b_len()),
                None => Err(self.critical_errors[l]
                    .clone()
                    .unwrap_or(Error::InvalidInput("critical step not planned".into()))),
            },
        }
    }

    fn build_critical(&self, l: usize) -> Result<CriticalStep> {
        let split = build_split(&self.h.levels[l], &self.h.levels[l + 1])?;
        let r = &self.resamplers[l];
        let g = &self.grams[l + 1];
        let diag = g.diagonal();
        let psi_scale = if self.cfg.scaling {
            split
                .b_children
                .iter()
                .map(|&j| {
                    let j = j as usize;
                    let mut d = 1.0 / diag[j];
                    for (i, w) in r.parents(j) {
                        let c = split.a_child[i] as usize;
                        let q = w / r.weight(i, c);
                        d += q * q / diag[c];
                    }
                    1.0 / libm::sqrt(d)
                })
                .collect()
        } else {
            vec![1.0; split.b_len()]
        };
        let mut step = CriticalStep { split, psi_scale, bound: 0.0 };
        let op = self.psi_operator(l, &step);
        let bound = power_iteration(&op, self.cfg.psi.power_iterations);
        op.take_error()?;
        step.bound = bound;
        Ok(step)
    }

    fn psi_operator<'a>(&'a self, l: usize, step: &'a CriticalStep) -> PsiGram<'a, 'h> {
        PsiGram { plan: self, level: l, split: &step.split, scale: &step.psi_scale, error: RefCell::new(None) }
    }

    /// `h(G'_l) v` by series.
    pub fn gram_fn(&self, l: usize, v: &FeatureTensor, h: MatrixFunction) -> Result<FeatureTensor> {
        let op = GramOperator { gram: &self.grams[l], geom: &self.h.levels[l] };
        let cfg = match &self.cfg.gram_orders {
            Some(k) => ApproxConfig { order: k[l], ..self.cfg.gram },
            None => self.cfg.gram,
        };
        apply_series_bounded(&op, v, h, &cfg, self.gram_bounds[l])
    }

    fn psi_fn(&self, l: usize, v: &FeatureTensor) -> Result<FeatureTensor> {
        let step = self.critical[l].as_ref().ok_or_else(|| {
            Error::InvalidInput("critical step unavailable at this level".to_string())
        })?;
        let op = self.psi_operator(l, step);
        let out = apply_series_bounded(&op, v, MatrixFunction::InverseSqrt, &self.cfg.psi, step.bound)?;
        op.take_error()?;
        Ok(out)
    }

    fn critical_forward(&self, l: usize, delta: &FeatureTensor) -> Result<FeatureTensor> {
        let step = self.critical[l].as_ref().ok_or(Error::InvalidInput("no critical step".into()))?;
        let mut gt = apply_ztilde(&self.resamplers[l], &step.split, delta, self.cfg.split)?;
        gt.scale_rows(&step.psi_scale);
        self.psi_fn(l, &gt)
    }

    fn decode_residual(&self, l: usize, mode: ResidualMode, g: &FeatureTensor) -> Result<FeatureTensor> {
        match mode {
            ResidualMode::Overcomplete => self.gram_fn(l + 1, g, MatrixFunction::InverseSqrt),
            ResidualMode::Critical => {
                let step =
                    self.critical[l].as_ref().ok_or(Error::InvalidInput("no critical step".into()))?;
                let mut x = self.psi_fn(l, g)?;
                x.scale_rows(&step.psi_scale);
                let z = apply_ztilde_t(&self.resamplers[l], &step.split, &x, self.cfg.split)?;
                self.gram_fn(l + 1, &z, MatrixFunction::Inverse)
            }
        }
    }

    /// Critical coefficients whose decoded residual is within `limit` of
    /// `delta` in the level-(l+1) function norm. Each pass codes what the
    /// decoder still misses; the truncated series make every pass a
    /// contraction on the detail space.
    fn refine_critical(&self, l: usize, delta: &FeatureTensor, limit: f64) -> Result<FeatureTensor> {
        let mut g = self.critical_forward(l, delta)?;
        let mut previous = f64::INFINITY;
        for pass in 0..=self.cfg.refine_steps {
            let back = self.decode_residual(l, ResidualMode::Critical, &g)?;
            let mut e = delta.clone();
            e.axpy(-1.0, &back);
            let ge = apply_gram(&self.grams[l + 1], &self.h.levels[l + 1], &e);
            let loss = libm::sqrt(e.dot(&ge).max(0.0));
            if loss <= limit {
                return Ok(g);
            }
            // Give up once the observed rate cannot reach the limit in time.
            let rate = loss / previous;
            let left = f64::from(self.cfg.refine_steps - pass);
            if pass == self.cfg.refine_steps || rate >= 1.0 || loss * libm::pow(rate, left) > limit {
                break;
            }
            previous = loss;
            g.axpy(1.0, &self.critical_forward(l, &e)?);
        }
        Err(Error::Divergence("critical residual above tolerance".to_string()))
    }

    fn check_input(&self, y: &FeatureTensor) -> Result<()> {
        if y.len() != self.h.finest().len() {
            return Err(Error::InvalidInput("attribute rows do not match the finest level".into()));
        }
        if !y.is_finite() {
            return Err(Error::InvalidInput("non-finite attribute".into()));
        }
        Ok(())
    }

    /// Low-pass cascade `F_l = G_l^{-1} A_l F~_{l+1}` in the unscaled basis, `result[l]` per level.
    pub fn projections(&self, y: &FeatureTensor) -> Result<Vec<FeatureTensor>> {
        self.check_input(y)?;
        let depth = self.h.depth as usize;
        let mut out = vec![y.clone()];
        let mut inner = y.clone();
        for l in (0..depth).rev() {
            inner = self.resamplers[l].downsample(&inner);
            let mut f = self.gram_fn(l, &inner, MatrixFunction::Inverse)?;
            let inv: Vec<f64> = self.norms[l].iter().map(|s| 1.0 / s).collect();
            f.scale_rows(&inv);
            out.push(f);
        }
        out.reverse();
        Ok(out)
    }

    pub fn analyze(&self, y: &FeatureTensor) -> Result<CoeffSet> {
        self.analyze_with(y, &mut Lossless)
    }

    /// Closed-loop analysis; `sink` sees every plane before the in-loop decoder.
    pub fn analyze_with(&self, y: &FeatureTensor, sink: &mut dyn CoefficientSink) -> Result<CoeffSet> {
        self.analyze_closed(y, sink).map(|(c, _)| c)
    }

    /// As [`Self::analyze_with`], also returning the in-loop reconstruction.
    pub fn analyze_closed(
        &self,
        y: &FeatureTensor,
        sink: &mut dyn CoefficientSink,
    ) -> Result<(CoeffSet, FeatureTensor)> {
        self.check_input(y)?;
        let depth = self.h.depth as usize;
        // F~'_l = S_l^{-1} Phi_l^T y, built by downsampling.
        let mut inner = vec![y.clone()];
        for l in (0..depth).rev() {
            let next = self.resamplers[l].downsample(inner.last().unwrap());
            inner.push(next);
        }
        inner.reverse();

        let mut lowpass = self.gram_fn(0, &inner[0], MatrixFunction::InverseSqrt)?;
        sink.code(Plane::Lowpass, &mut lowpass)?;
        let mut recon = self.gram_fn(0, &lowpass, MatrixFunction::InverseSqrt)?;

        let reference = y.norm();
        let mut highpass = Vec::with_capacity(depth);
        let mut modes = Vec::with_capacity(depth);
        for l in 0..depth {
            // Inner products of the residual function with the level-(l+1)
            // basis. Working from these keeps coefficients out of the Gram
            // null space, which the series would otherwise leak into.
            let pred = self.resamplers[l].upsample(&recon);
            let last = l + 1 == depth;
            let mut rhs = inner[l + 1].clone();
            if last {
                rhs.axpy(-1.0, &pred);
            } else {
                rhs.axpy(-1.0, &apply_gram(&self.grams[l + 1], &self.h.levels[l + 1], &pred));
            }

            let mut chosen = None;
            if self.cfg.requested_mode(l) == ResidualMode::Critical && self.critical[l].is_some() {
                let delta = if last {
                    rhs.clone()
                } else {
                    self.gram_fn(l + 1, &rhs, MatrixFunction::Inverse)?
                };
                match self.cfg.critical_tolerance {
                    None => chosen = Some((ResidualMode::Critical, self.critical_forward(l, &delta)?)),
                    Some(tol) => {
                        if let Ok(g) = self.refine_critical(l, &delta, tol * reference) {
                            chosen = Some((ResidualMode::Critical, g));
                        }
                    }
                }
            }
            let (mode, mut g) = match chosen {
                Some(c) => c,
                None => (
                    ResidualMode::Overcomplete,
                    self.gram_fn(l + 1, &rhs, MatrixFunction::InverseSqrt)?,
                ),
            };
            sink.code(Plane::Highpass(l as u32), &mut g)?;
            let back = self.decode_residual(l, mode, &g)?;
            recon = pred;
            recon.axpy(1.0, &back);
            highpass.push(g);
            modes.push(mode);
        }
        let coeffs = CoeffSet {
            lowpass,
            highpass,
            modes,
            scalers: self.cfg.scaling.then(|| self.norms.clone()),
        };
        Ok((coeffs, recon))
    }

    pub fn synthesize(&self, coeffs: &CoeffSet) -> Result<FeatureTensor> {
        let depth = self.h.depth as usize;
        if coeffs.highpass.len() != depth || coeffs.modes.len() != depth {
            return Err(Error::InvalidInput("coefficient set depth mismatch".into()));
        }
        if coeffs.lowpass.len() != self.h.levels[0].len() {
            return Err(Error::InvalidInput("low-pass size mismatch".into()));
        }
        let mut recon = self.gram_fn(0, &coeffs.lowpass, MatrixFunction::InverseSqrt)?;
        for l in 0..depth {
            let mode = coeffs.modes[l];
            let want = self.highpass_len(l, mode)?;
            if coeffs.highpass[l].len() != want {
                return Err(Error::InvalidInput("high-pass size mismatch".into()));
            }
            let back = self.decode_residual(l, mode, &coeffs.highpass[l])?;
            let mut next = self.resamplers[l].upsample(&recon);
            next.axpy(1.0, &back);
            recon = next;
        }
        Ok(recon)
    }
}

pub fn analyze(y: &FeatureTensor, h: &Hierarchy, cfg: &TransformConfig) -> Result<CoeffSet> {
    TransformPlan::new(h, cfg)?.analyze(y)
}

/// Rebuilds finest-level attributes. `cfg.level_modes` should match `coeffs.modes`.
pub fn synthesize(coeffs: &CoeffSet, h: &Hierarchy, cfg: &TransformConfig) -> Result<FeatureTensor> {
    let mut cfg = cfg.clone();
    cfg.level_modes = Some(coeffs.modes.clone());
    TransformPlan::new(h, &cfg)?.synthesize(coeffs)
}
