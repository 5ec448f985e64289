//! Full-range BT.709 RGB <-> YUV with chroma centred at 128.

const KR: f64 = 0.2126;
const KB: f64 = 0.0722;
const KG: f64 = 1.0 - KR - KB;
const CB: f64 = 2.0 * (1.0 - KB);
const CR: f64 = 2.0 * (1.0 - KR);

pub fn rgb_to_yuv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let y = KR * r + KG * g + KB * b;
    [y, (b - y) / CB + 128.0, (r - y) / CR + 128.0]
}

pub fn yuv_to_rgb(yuv: [f64; 3]) -> [f64; 3] {
    let [y, u, v] = yuv;
    let r = y + CR * (v - 128.0);
    let b = y + CB * (u - 128.0);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

/// Converts interleaved 3-channel rows in place.
pub fn rgb_to_yuv_rows(data: &mut [f64]) {
    for px in data.chunks_exact_mut(3) {
        let out = rgb_to_yuv([px[0], px[1], px[2]]);
        px.copy_from_slice(&out);
    }
}

pub fn yuv_to_rgb_rows(data: &mut [f64]) {
    for px in data.chunks_exact_mut(3) {
        let out = yuv_to_rgb([px[0], px[1], px[2]]);
        px.copy_from_slice(&out);
    }
}
