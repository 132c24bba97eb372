//! Procedural images for desk-scale experiments and tests.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imagecore::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Linear ramps, one direction per image.
    Gradient,
    /// Smooth sinusoidal shading with a few soft-edged disks.
    Scenes,
    /// Dark pen strokes on a faint paper texture (RGB). Pair with a
    /// stamp-overlay `NoiseSpec` for the seal-on-handwriting setting.
    SynthSignature,
}

impl SyntheticKind {
    pub fn prefix(self) -> &'static str {
        match self {
            SyntheticKind::Gradient => "gradient",
            SyntheticKind::Scenes => "scene",
            SyntheticKind::SynthSignature => "signature",
        }
    }
}

/// Smooth RGB ramp from the top-left to the bottom-right corner.
pub fn smooth_gradient(channels: usize, height: usize, width: usize) -> ImageTensor {
    ImageTensor::from_fn(channels, height, width, |c, y, x| {
        let t = (x + y) as f32 / (height + width).max(2) as f32;
        0.15 + 0.65 * t + 0.05 * c as f32
    })
}

fn ramp(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor {
    let angle = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let lo: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.4));
    let hi: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.6..0.95));
    let n = size as f32;
    ImageTensor::from_fn(3, size, size, |c, y, x| {
        let t = ((x as f32 / n - 0.5) * dx + (y as f32 / n - 0.5) * dy) * std::f32::consts::FRAC_1_SQRT_2 + 0.5;
        lo[c] + (hi[c] - lo[c]) * t.clamp(0.0, 1.0)
    })
}

fn scene(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor {
    let fx = rng.random_range(1.5..5.0f32);
    let fy = rng.random_range(1.0..4.0f32);
    let phase: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let disks: Vec<(f32, f32, f32, f32)> = (0..rng.random_range(1..4))
        .map(|_| {
            (
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.08..0.22),
                rng.random_range(-0.25..0.25),
            )
        })
        .collect();
    let n = size as f32;
    ImageTensor::from_fn(3, size, size, |c, y, x| {
        let (u, v) = (x as f32 / n, y as f32 / n);
        let mut val = 0.5 + 0.28 * (u * fx * PI + phase[c]).sin() * (v * fy * PI).cos();
        for &(cx, cy, r, amp) in &disks {
            let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
            // soft edge about two pixels wide
            val += amp * (((r - d) * n / 2.0).clamp(-1.0, 1.0) * 0.5 + 0.5);
        }
        val.clamp(0.0, 1.0)
    })
}

fn signature(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor {
    let n = size as f32;
    let paper = [rng.random_range(0.9..0.97), rng.random_range(0.88..0.95), rng.random_range(0.8..0.9)];
    let ink = [rng.random_range(0.05..0.15), rng.random_range(0.05..0.15), rng.random_range(0.15..0.35)];
    let grain: Vec<f32> = (0..size * size).map(|_| rng.random_range(-0.02..0.02)).collect();

    // pen trajectory: a sum of a slow drift and a few loops
    let loops = rng.random_range(3..7) as f32;
    let amp_y = rng.random_range(0.12..0.22);
    let amp_x = rng.random_range(0.03..0.08);
    let tilt = rng.random_range(-0.3..0.3f32);
    let samples = size * 24;
    let points: Vec<(f32, f32)> = (0..samples)
        .map(|i| {
            let t = i as f32 / samples as f32;
            let x = 0.12 + 0.76 * t + amp_x * (2.0 * PI * loops * t).cos();
            let y = 0.5 + tilt * (t - 0.5) + amp_y * (2.0 * PI * loops * t).sin() * (PI * t).sin();
            (x * n, y * n)
        })
        .collect();
    let half_width = (0.012 * n).max(0.8);

    let mut coverage = vec![0.0f32; size * size];
    for &(px, py) in &points {
        let r = half_width + 1.0;
        let (x0, x1) = ((px - r).floor().max(0.0) as usize, ((px + r).ceil() as usize).min(size - 1));
        let (y0, y1) = ((py - r).floor().max(0.0) as usize, ((py + r).ceil() as usize).min(size - 1));
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let d = ((xx as f32 + 0.5 - px).powi(2) + (yy as f32 + 0.5 - py).powi(2)).sqrt();
                let a = (half_width + 0.5 - d).clamp(0.0, 1.0);
                let cell = &mut coverage[yy * size + xx];
                *cell = cell.max(a);
            }
        }
    }
    ImageTensor::from_fn(3, size, size, |c, y, x| {
        let i = y * size + x;
        let a = coverage[i];
        ((1.0 - a) * (paper[c] + grain[i]) + a * ink[c]).clamp(0.0, 1.0)
    })
}

/// `count` square RGB images named `<prefix>_<NN>`, fully determined by `seed`.
pub fn generate(kind: SyntheticKind, count: usize, size: usize, seed: u64) -> Vec<(String, ImageTensor)> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            let img = match kind {
                SyntheticKind::Gradient => ramp(&mut rng, size),
                SyntheticKind::Scenes => scene(&mut rng, size),
                SyntheticKind::SynthSignature => signature(&mut rng, size),
            };
            (format!("{}_{i:02}", kind.prefix()), img)
        })
        .collect()
}
