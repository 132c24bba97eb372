use crate::imagecore::{pad_reflect_edges, ImageTensor};
use crate::transforms::{dwt2, idwt2, HH, HL, LH};

/// `sign(v) * max(|v| - tau, 0)`.
pub fn soft_threshold(v: f32, tau: f32) -> f32 {
    v.signum() * (v.abs() - tau).max(0.0)
}

/// VisuShrink threshold `sigma * sqrt(2 ln n)` for `n` pixels per channel.
pub fn universal_threshold(sigma: f32, pixels: usize) -> f32 {
    if pixels < 2 {
        return 0.0;
    }
    sigma * (2.0 * (pixels as f32).ln()).sqrt()
}

/// Single-level Haar soft-threshold denoiser. Odd sizes are reflect-padded by
/// one row/column for the transform and cropped back. LL is never touched.
pub fn baseline_wavelet_threshold(y: &ImageTensor, sigma: f32) -> ImageTensor {
    let (_, h, w) = y.shape();
    let tau = universal_threshold(sigma, h * w);
    if tau == 0.0 || h < 2 || w < 2 {
        return y.clone().clamped();
    }
    let padded = pad_reflect_edges(y, 0, h % 2, 0, w % 2).expect("one-pixel pad fits any side >= 2");
    let mut bands = dwt2(&padded).expect("even after padding");
    for band in [LH, HL, HH] {
        for c in 0..bands.channels_in() {
            for v in bands.band_mut(c, band) {
                *v = soft_threshold(*v, tau);
            }
        }
    }
    let rec = idwt2(&bands);
    rec.crop(0, 0, h, w).expect("crop within padded image").clamped()
}
