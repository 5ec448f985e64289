//! Distortion measures.

pub const PEAK: f64 = 255.0;

/// Floor reported for zero-error rows, in dB.
pub const DB_FLOOR: f64 = -100.0;

/// Mean squared error per channel over row-major data.
pub fn mse(a: &[f64], b: &[f64], channels: usize) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    let rows = (a.len() / channels).max(1) as f64;
    let mut out = vec![0.0; channels];
    for (ra, rb) in a.chunks_exact(channels).zip(b.chunks_exact(channels)) {
        for c in 0..channels {
            let d = ra[c] - rb[c];
            out[c] += d * d;
        }
    }
    out.iter_mut().for_each(|v| *v /= rows);
    out
}

pub fn psnr(mse: f64) -> f64 {
    10.0 * (PEAK * PEAK / mse).log10()
}

/// `10 log10(mse)`, clamped below at [`DB_FLOOR`].
pub fn mse_db(mse: f64) -> f64 {
    if mse > 0.0 {
        (10.0 * mse.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Combined YUV PSNR from the 6:1:1 weighted MSE.
pub fn psnr_yuv(mse: &[f64]) -> f64 {
    psnr((6.0 * mse[0] + mse[1] + mse[2]) / 8.0)
}
