//! Orthonormal 2D Haar DWT/IDWT, PCA over 2x2 patches, and the fused
//! `alpha * DWT(x) + beta * PCA(x)` downsampling that stands in for pooling.
//!
//! All transforms work on non-overlapping 2x2 blocks, so a `(C, H, W)` input
//! always maps to a `(4C, H/2, W/2)` output. The raw-slice kernels are shared
//! with the autodiff nodes in [`crate::neuralnet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;

/// Index of each Haar subband inside a group of four output channels.
pub const LL: usize = 0;
pub const LH: usize = 1;
pub const HL: usize = 2;
pub const HH: usize = 3;

/// Single-level DWT output; channel `4c + band` holds `band` of input channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandStack {
    channels_in: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl SubbandStack {
    /// Interprets a `(4C, h, w)` tensor as subbands.
    pub fn from_tensor(t: ImageTensor) -> Result<Self> {
        let (c4, h, w) = t.shape();
        if c4 % 4 != 0 {
            return Err(Error::DimMismatch(format!("{c4} channels is not a multiple of 4")));
        }
        Ok(Self { channels_in: c4 / 4, height: h, width: w, data: t.into_data() })
    }

    pub fn to_tensor(&self) -> ImageTensor {
        ImageTensor::new(4 * self.channels_in, self.height, self.width, self.data.clone())
            .expect("subband stack holds a consistent finite tensor")
    }

    pub fn channels_in(&self) -> usize {
        self.channels_in
    }

    /// Spatial size of each subband (half the source size).
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn band(&self, channel: usize, band: usize) -> &[f32] {
        let plane = self.height * self.width;
        let k = 4 * channel + band;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn band_mut(&mut self, channel: usize, band: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        let k = 4 * channel + band;
        &mut self.data[k * plane..(k + 1) * plane]
    }
}

pub(crate) fn check_even(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) || h == 0 || w == 0 {
        return Err(Error::OddDimension { height: h, width: w });
    }
    Ok(())
}

/// Forward Haar on a `(c, h, w)` buffer into a `(4c, h/2, w/2)` buffer.
pub(crate) fn haar_forward(src: &[f32], c: usize, h: usize, w: usize, dst: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    let plane = oh * ow;
    for ch in 0..c {
        let s = &src[ch * h * w..(ch + 1) * h * w];
        let base = 4 * ch * plane;
        for i in 0..oh {
            for j in 0..ow {
                let p00 = s[2 * i * w + 2 * j];
                let p01 = s[2 * i * w + 2 * j + 1];
                let p10 = s[(2 * i + 1) * w + 2 * j];
                let p11 = s[(2 * i + 1) * w + 2 * j + 1];
                let o = i * ow + j;
                dst[base + LL * plane + o] = 0.5 * (p00 + p01 + p10 + p11);
                dst[base + LH * plane + o] = 0.5 * (p00 + p01 - p10 - p11);
                dst[base + HL * plane + o] = 0.5 * (p00 - p01 + p10 - p11);
                dst[base + HH * plane + o] = 0.5 * (p00 - p01 - p10 + p11);
            }
        }
    }
}

/// Inverse Haar; `h`, `w` are the full-resolution output dims.
pub(crate) fn haar_inverse(src: &[f32], c: usize, h: usize, w: usize, dst: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    let plane = oh * ow;
    for ch in 0..c {
        let base = 4 * ch * plane;
        let d = &mut dst[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let o = i * ow + j;
                let ll = src[base + LL * plane + o];
                let lh = src[base + LH * plane + o];
                let hl = src[base + HL * plane + o];
                let hh = src[base + HH * plane + o];
                d[2 * i * w + 2 * j] = 0.5 * (ll + lh + hl + hh);
                d[2 * i * w + 2 * j + 1] = 0.5 * (ll + lh - hl - hh);
                d[(2 * i + 1) * w + 2 * j] = 0.5 * (ll - lh + hl - hh);
                d[(2 * i + 1) * w + 2 * j + 1] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
}

/// Single-level orthonormal 2D Haar transform.
pub fn dwt2(x: &ImageTensor) -> Result<SubbandStack> {
    let (c, h, w) = x.shape();
    check_even(h, w)?;
    let mut data = vec![0.0; c * h * w];
    haar_forward(x.data(), c, h, w, &mut data);
    Ok(SubbandStack { channels_in: c, height: h / 2, width: w / 2, data })
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(s: &SubbandStack) -> ImageTensor {
    let (c, h, w) = (s.channels_in, 2 * s.height, 2 * s.width);
    let mut data = vec![0.0; c * h * w];
    haar_inverse(&s.data, c, h, w, &mut data);
    ImageTensor::new(c, h, w, data).expect("inverse of a finite stack is finite")
}

/// Mean + orthonormal principal directions of a set of `dim`-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub dim: usize,
    pub rank: usize,
    pub mean: Vec<f32>,
    /// `rank` rows of length `dim`, row-major.
    pub basis: Vec<f32>,
    /// Non-increasing, all >= 0.
    pub singular_values: Vec<f64>,
}

impl PcaBasis {
    /// Identity rows and zero mean: projection reduces to space-to-depth.
    pub fn identity(dim: usize) -> Self {
        let mut basis = vec![0.0; dim * dim];
        for i in 0..dim {
            basis[i * dim + i] = 1.0;
        }
        Self { dim, rank: dim, mean: vec![0.0; dim], basis, singular_values: vec![0.0; dim] }
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.basis[k * self.dim..(k + 1) * self.dim]
    }

    /// Largest absolute deviation of `basis * basis^T` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.rank {
            for b in 0..self.rank {
                let dot: f64 =
                    self.row(a).iter().zip(self.row(b)).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// `a` is `n x n` row-major and is destroyed. Returns eigenvalues and the
/// eigenvectors as the columns of a row-major `n x n` matrix.
fn jacobi_eigen(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Fits a rank-`rank` PCA to `vectors`, an `n x dim` row-major matrix.
///
/// The right singular vectors of the centered matrix are taken from the
/// eigenvectors of its Gram matrix (singular values are the square roots of
/// the eigenvalues). Each basis row is signed so that its largest-magnitude
/// entry is non-negative, the lowest index winning ties.
pub fn fit_pca(vectors: &[f32], dim: usize, rank: usize) -> Result<PcaBasis> {
    if dim == 0 || !vectors.len().is_multiple_of(dim) {
        return Err(Error::DimMismatch(format!("{} values do not form rows of {dim}", vectors.len())));
    }
    let n = vectors.len() / dim;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if rank == 0 || rank > dim {
        return Err(Error::DimMismatch(format!("rank {rank} outside 1..={dim}")));
    }
    let mut mean = vec![0.0f64; dim];
    for row in vectors.chunks_exact(dim) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut gram = vec![0.0f64; dim * dim];
    let mut raw_energy = 0.0f64;
    let mut centered = vec![0.0f64; dim];
    for row in vectors.chunks_exact(dim) {
        for k in 0..dim {
            centered[k] = f64::from(row[k]) - mean[k];
            raw_energy += f64::from(row[k]) * f64::from(row[k]);
        }
        for a in 0..dim {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..dim {
                gram[a * dim + b] += ca * centered[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[a * dim + b] = gram[b * dim + a];
        }
    }
    let trace: f64 = (0..dim).map(|i| gram[i * dim + i]).sum();
    let mean_f32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();

    // zero-variance input: fall back to identity rows
    if trace <= 1e-24 * (1.0 + raw_energy) {
        let id = PcaBasis::identity(dim);
        return Ok(PcaBasis {
            rank,
            mean: mean_f32,
            basis: id.basis[..rank * dim].to_vec(),
            singular_values: vec![0.0; rank],
            ..id
        });
    }

    let (eigvals, eigvecs) = jacobi_eigen(&mut gram, dim);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eigvals[j].total_cmp(&eigvals[i]).then(i.cmp(&j)));

    let mut basis = Vec::with_capacity(rank * dim);
    let mut singular_values = Vec::with_capacity(rank);
    for &col in order.iter().take(rank) {
        let mut row: Vec<f64> = (0..dim).map(|k| eigvecs[k * dim + col]).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
        let mut lead = 0;
        for k in 1..dim {
            if row[k].abs() > row[lead].abs() {
                lead = k;
            }
        }
        if row[lead] < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        basis.extend(row.iter().map(|&x| x as f32));
        singular_values.push(eigvals[col].max(0.0).sqrt());
    }
    Ok(PcaBasis { dim, rank, mean: mean_f32, basis, singular_values })
}

/// Flattens every 2x2xC block into a `4C` vector (channel-major, then
/// p00, p01, p10, p11), one row per block in raster order.
pub fn patch_vectors(x: &ImageTensor) -> Result<Vec<f32>> {
    let (c, h, w) = x.shape();
    check_even(h, w)?;
    Ok(patch_vectors_raw(x.data(), c, h, w))
}

pub(crate) fn patch_vectors_raw(src: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let d = 4 * c;
    let mut out = vec![0.0; oh * ow * d];
    for ch in 0..c {
        let s = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let r = (i * ow + j) * d + 4 * ch;
                out[r] = s[2 * i * w + 2 * j];
                out[r + 1] = s[2 * i * w + 2 * j + 1];
                out[r + 2] = s[(2 * i + 1) * w + 2 * j];
                out[r + 3] = s[(2 * i + 1) * w + 2 * j + 1];
            }
        }
    }
    out
}

/// Full-rank basis fitted to the 2x2 blocks of `x` itself.
pub fn fit_patch_basis(x: &ImageTensor) -> Result<PcaBasis> {
    let d = 4 * x.channels();
    fit_pca(&patch_vectors(x)?, d, d)
}

pub(crate) fn fit_patch_basis_raw(src: &[f32], c: usize, h: usize, w: usize) -> PcaBasis {
    let d = 4 * c;
    fit_pca(&patch_vectors_raw(src, c, h, w), d, d).expect("patch matrix is non-empty with rank = dim")
}

fn check_basis(c: usize, basis: &PcaBasis) -> Result<()> {
    if basis.dim != 4 * c {
        return Err(Error::DimMismatch(format!("basis dim {} but input needs {}", basis.dim, 4 * c)));
    }
    if basis.mean.len() != basis.dim || basis.basis.len() != basis.rank * basis.dim {
        return Err(Error::DimMismatch("basis arrays inconsistent with dim/rank".into()));
    }
    Ok(())
}

/// Projects each centered block vector; coefficient `k` lands in channel `k`.
pub(crate) fn pca_project_raw(src: &[f32], c: usize, h: usize, w: usize, basis: &PcaBasis, dst: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    let plane = oh * ow;
    let d = basis.dim;
    let vecs = patch_vectors_raw(src, c, h, w);
    dst[..d * plane].iter_mut().for_each(|v| *v = 0.0);
    let mut centered = vec![0.0f32; d];
    for (loc, v) in vecs.chunks_exact(d).enumerate() {
        for k in 0..d {
            centered[k] = v[k] - basis.mean[k];
        }
        for r in 0..basis.rank {
            let coeff: f32 = basis.row(r).iter().zip(&centered).map(|(b, x)| b * x).sum();
            dst[r * plane + loc] = coeff;
        }
    }
}

/// Applies `basis^T` per location: maps coefficient-space values back to
/// block vectors, without re-adding the mean. This is the adjoint of the
/// linear part of [`pca_project_raw`].
pub(crate) fn pca_adjoint_raw(coeffs: &[f32], c: usize, h: usize, w: usize, basis: &PcaBasis, dst: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    let plane = oh * ow;
    let d = basis.dim;
    let mut vec = vec![0.0f32; d];
    for i in 0..oh {
        for j in 0..ow {
            let loc = i * ow + j;
            vec.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..basis.rank {
                let a = coeffs[r * plane + loc];
                if a == 0.0 {
                    continue;
                }
                for (v, b) in vec.iter_mut().zip(basis.row(r)) {
                    *v += a * b;
                }
            }
            for ch in 0..c {
                let o = &mut dst[ch * h * w..(ch + 1) * h * w];
                o[2 * i * w + 2 * j] = vec[4 * ch];
                o[2 * i * w + 2 * j + 1] = vec[4 * ch + 1];
                o[(2 * i + 1) * w + 2 * j] = vec[4 * ch + 2];
                o[(2 * i + 1) * w + 2 * j + 1] = vec[4 * ch + 3];
            }
        }
    }
}

/// `(C, H, W)` -> `(4C, H/2, W/2)` PCA coefficients.
pub fn pca_project(x: &ImageTensor, basis: &PcaBasis) -> Result<ImageTensor> {
    let (c, h, w) = x.shape();
    check_even(h, w)?;
    check_basis(c, basis)?;
    let mut out = vec![0.0; c * h * w];
    pca_project_raw(x.data(), c, h, w, basis, &mut out);
    ImageTensor::new(4 * c, h / 2, w / 2, out)
}

/// Inverse of [`pca_project`] for a full-rank basis: `basis^T * coeffs + mean`.
pub fn pca_reconstruct(coeffs: &ImageTensor, basis: &PcaBasis) -> Result<ImageTensor> {
    let (c4, oh, ow) = coeffs.shape();
    if c4 != basis.dim || c4 % 4 != 0 {
        return Err(Error::DimMismatch(format!("{c4} coefficient channels vs basis dim {}", basis.dim)));
    }
    let c = c4 / 4;
    check_basis(c, basis)?;
    let (h, w) = (2 * oh, 2 * ow);
    let mut out = vec![0.0; c * h * w];
    pca_adjoint_raw(coeffs.data(), c, h, w, basis, &mut out);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let o = &mut out[ch * h * w..(ch + 1) * h * w];
                o[2 * i * w + 2 * j] += basis.mean[4 * ch];
                o[2 * i * w + 2 * j + 1] += basis.mean[4 * ch + 1];
                o[(2 * i + 1) * w + 2 * j] += basis.mean[4 * ch + 2];
                o[(2 * i + 1) * w + 2 * j + 1] += basis.mean[4 * ch + 3];
            }
        }
    }
    ImageTensor::new(c, h, w, out)
}

/// Weights of the two downsampling branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f32,
    pub beta: f32,
}

impl FusionConfig {
    pub const fn new(alpha: f32, beta: f32) -> Self {
        Self { alpha, beta }
    }

    /// The three weightings compared in the reference results table.
    pub const PRESETS: [FusionConfig; 3] =
        [FusionConfig::new(1.0, 1.0), FusionConfig::new(0.7, 0.3), FusionConfig::new(0.3, 0.7)];

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::ConfigInvalid(format!("fusion weights {self:?} must be finite")));
        }
        Ok(())
    }

    /// `"1/1"`, `"0.7/0.3"`, ...
    pub fn label(&self) -> String {
        format!("{}/{}", self.alpha, self.beta)
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

/// Where the PCA branch gets its basis.
#[derive(Debug, Clone, Copy)]
pub enum BasisChoice<'a> {
    /// Fit a full-rank basis to the blocks of the very input being projected.
    PerInput,
    Fixed(&'a PcaBasis),
}

/// `alpha * dwt2(x) + beta * pca_project(x, B)`. A branch whose weight is
/// exactly zero is not evaluated.
pub fn fused_downsample(x: &ImageTensor, cfg: FusionConfig, choice: BasisChoice<'_>) -> Result<ImageTensor> {
    let (c, h, w) = x.shape();
    check_even(h, w)?;
    cfg.validate()?;
    let mut out = vec![0.0f32; c * h * w];
    if cfg.alpha != 0.0 {
        haar_forward(x.data(), c, h, w, &mut out);
        if cfg.alpha != 1.0 {
            out.iter_mut().for_each(|v| *v *= cfg.alpha);
        }
    }
    if cfg.beta != 0.0 {
        let fitted;
        let basis = match choice {
            BasisChoice::PerInput => {
                fitted = fit_patch_basis_raw(x.data(), c, h, w);
                &fitted
            }
            BasisChoice::Fixed(b) => {
                check_basis(c, b)?;
                b
            }
        };
        let mut proj = vec![0.0f32; c * h * w];
        pca_project_raw(x.data(), c, h, w, basis, &mut proj);
        for (o, p) in out.iter_mut().zip(proj) {
            *o += cfg.beta * p;
        }
    }
    ImageTensor::new(4 * c, h / 2, w / 2, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn haar_single_block() {
        // [[1,2],[3,4]] times the 4x4 orthonormal Haar matrix rows
        // (1,1,1,1)/2, (1,1,-1,-1)/2, (1,-1,1,-1)/2, (1,-1,-1,1)/2
        let x = ImageTensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = dwt2(&x).unwrap();
        assert_eq!(s.band(0, LL), &[5.0]);
        assert_eq!(s.band(0, LH), &[-2.0]);
        assert_eq!(s.band(0, HL), &[-1.0]);
        assert_eq!(s.band(0, HH), &[0.0]);
        let energy_in = 1.0 + 4.0 + 9.0 + 16.0;
        let energy_out: f32 = s.data().iter().map(|v| v * v).sum();
        assert_eq!(energy_in, energy_out);
        assert_eq!(idwt2(&s).data(), x.data());
    }

    #[test]
    fn haar_constant_and_shapes() {
        let x = ImageTensor::filled(3, 64, 64, 0.3);
        let s = dwt2(&x).unwrap();
        assert_eq!(s.to_tensor().shape(), (12, 32, 32));
        for c in 0..3 {
            assert!(s.band(c, LL).iter().all(|&v| (v - 0.6).abs() < 1e-6));
            for b in [LH, HL, HH] {
                assert!(s.band(c, b).iter().all(|&v| v == 0.0));
            }
        }
        assert!(matches!(dwt2(&ImageTensor::zeros(1, 3, 4)), Err(Error::OddDimension { .. })));
    }

    #[test]
    fn zero_subbands_invert_to_zero() {
        let s = SubbandStack::from_tensor(ImageTensor::zeros(8, 4, 4)).unwrap();
        assert!(idwt2(&s).data().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn perfect_reconstruction_and_energy(seed in any::<u64>(), c in 1usize..4, h in 1usize..9, w in 1usize..9) {
            let x = random_image(c, 2 * h, 2 * w, seed);
            let s = dwt2(&x).unwrap();
            let back = idwt2(&s);
            prop_assert!(max_abs_diff(back.data(), x.data()) <= 1e-6);
            let e_in: f64 = x.data().iter().map(|&v| f64::from(v).powi(2)).sum();
            let e_out: f64 = s.data().iter().map(|&v| f64::from(v).powi(2)).sum();
            prop_assert!((e_in - e_out).abs() / e_in <= 1e-5);
            // inverse in the other direction
            let s2 = SubbandStack::from_tensor(random_image(4 * c, h, w, seed ^ 1)).unwrap();
            let again = dwt2(&idwt2(&s2)).unwrap();
            prop_assert!(max_abs_diff(again.data(), s2.data()) <= 1e-6);
        }
    }

    #[test]
    fn hand_svd_on_axis_points() {
        let pts = [1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0, 0.0];
        let b = fit_pca(&pts, 2, 1).unwrap();
        assert_eq!(b.mean, vec![0.0, 0.0]);
        assert_eq!(b.row(0), &[1.0, 0.0]);
        assert!((b.singular_values[0] - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_points_have_zero_spectrum() {
        let pts: Vec<f32> = std::iter::repeat_n([0.1f32, 0.7, 0.3], 5).flatten().collect();
        let b = fit_pca(&pts, 3, 3).unwrap();
        assert!(b.singular_values.iter().all(|&s| s.abs() < 1e-6));
        assert!(max_abs_diff(&b.mean, &[0.1, 0.7, 0.3]) < 1e-7);
        assert!(b.orthonormality_error() < 1e-5);
    }

    #[test]
    fn fit_pca_errors() {
        assert!(matches!(fit_pca(&[], 4, 2), Err(Error::EmptyInput)));
        assert!(matches!(fit_pca(&[1.0, 2.0, 3.0], 2, 1), Err(Error::DimMismatch(_))));
        assert!(matches!(fit_pca(&[1.0, 2.0], 2, 3), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn full_rank_basis_is_orthonormal_and_sorted() {
        let x = random_image(3, 16, 16, 4);
        let b = fit_patch_basis(&x).unwrap();
        assert_eq!((b.dim, b.rank), (12, 12));
        assert!(b.orthonormality_error() <= 1e-5);
        assert!(b.singular_values.windows(2).all(|p| p[0] >= p[1]));
        for r in 0..b.rank {
            let row = b.row(r);
            let lead = row.iter().enumerate().fold(0, |best, (i, v)| if v.abs() > row[best].abs() { i } else { best });
            assert!(row[lead] >= 0.0);
        }
    }

    #[test]
    fn singular_values_match_gram_oracle() {
        // independent check: s_k^2 = ||Xc b_k||^2 and sum s^2 = total centered energy
        let x = random_image(2, 8, 8, 11);
        let vecs = patch_vectors(&x).unwrap();
        let b = fit_patch_basis(&x).unwrap();
        let d = b.dim;
        let n = vecs.len() / d;
        let mean: Vec<f64> = (0..d).map(|k| (0..n).map(|i| f64::from(vecs[i * d + k])).sum::<f64>() / n as f64).collect();
        let total: f64 = (0..n).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| (f64::from(vecs[i * d + k]) - mean[k]).powi(2)).sum();
        let spectral: f64 = b.singular_values.iter().map(|s| s * s).sum();
        assert!((total - spectral).abs() <= 1e-6 * total);
        for r in 0..d {
            let e: f64 = (0..n)
                .map(|i| (0..d).map(|k| (f64::from(vecs[i * d + k]) - mean[k]) * f64::from(b.row(r)[k])).sum::<f64>().powi(2))
                .sum();
            assert!((e - b.singular_values[r].powi(2)).abs() <= 1e-4 * total, "component {r}");
        }
    }

    #[test]
    fn identity_basis_is_space_to_depth() {
        let x = random_image(2, 4, 6, 2);
        let out = pca_project(&x, &PcaBasis::identity(8)).unwrap();
        assert_eq!(out.shape(), (8, 2, 3));
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..3 {
                    assert_eq!(out.get(4 * c, i, j), x.get(c, 2 * i, 2 * j));
                    assert_eq!(out.get(4 * c + 1, i, j), x.get(c, 2 * i, 2 * j + 1));
                    assert_eq!(out.get(4 * c + 2, i, j), x.get(c, 2 * i + 1, 2 * j));
                    assert_eq!(out.get(4 * c + 3, i, j), x.get(c, 2 * i + 1, 2 * j + 1));
                }
            }
        }
    }

    #[test]
    fn project_reconstruct_round_trip() {
        let x = random_image(3, 64, 64, 8);
        let b = fit_patch_basis(&x).unwrap();
        let coeffs = pca_project(&x, &b).unwrap();
        assert_eq!(coeffs.shape(), (12, 32, 32));
        let back = pca_reconstruct(&coeffs, &b).unwrap();
        assert!(max_abs_diff(back.data(), x.data()) <= 1e-5);
        assert!(matches!(pca_project(&random_image(2, 4, 4, 0), &b), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn zero_coefficients_reconstruct_mean() {
        let x = random_image(1, 4, 4, 3);
        let b = fit_patch_basis(&x).unwrap();
        let r = pca_reconstruct(&ImageTensor::zeros(4, 2, 2), &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(r.get(0, 2 * i, 2 * j), b.mean[0]);
                assert_eq!(r.get(0, 2 * i + 1, 2 * j + 1), b.mean[3]);
            }
        }
    }

    #[test]
    fn rank_one_error_equals_discarded_energy() {
        let x = random_image(1, 16, 16, 21);
        let vecs = patch_vectors(&x).unwrap();
        let full = fit_pca(&vecs, 4, 4).unwrap();
        let r1 = fit_pca(&vecs, 4, 1).unwrap();
        let mut coeffs = pca_project(&x, &r1).unwrap();
        assert!(coeffs.data()[64..].iter().all(|&v| v == 0.0), "unused channels are zero");
        // pca_reconstruct wants dim == channels; rank-1 rows padded with zeros
        let mut padded = r1.clone();
        padded.rank = 4;
        padded.basis.resize(16, 0.0);
        padded.singular_values.resize(4, 0.0);
        let recon = pca_reconstruct(&coeffs, &padded).unwrap();
        let err: f64 = recon.data().iter().zip(x.data()).map(|(a, b)| f64::from(a - b).powi(2)).sum();
        let discarded: f64 = full.singular_values[1..].iter().map(|s| s * s).sum();
        let total: f64 = full.singular_values.iter().map(|s| s * s).sum();
        assert!(err >= 0.0 && err <= total);
        assert!((err - discarded).abs() <= 1e-4 * total, "{err} vs {discarded}");
        coeffs.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    #[test]
    fn fused_degenerate_weights() {
        let x = random_image(2, 8, 8, 5);
        let dwt = dwt2(&x).unwrap().to_tensor();
        let only_dwt = fused_downsample(&x, FusionConfig::new(1.0, 0.0), BasisChoice::PerInput).unwrap();
        assert_eq!(only_dwt, dwt);
        let none = fused_downsample(&x, FusionConfig::new(0.0, 0.0), BasisChoice::PerInput).unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            fused_downsample(&random_image(1, 5, 4, 0), FusionConfig::default(), BasisChoice::PerInput),
            Err(Error::OddDimension { .. })
        ));
    }

    #[test]
    fn fused_is_linear_in_weights() {
        let x = random_image(3, 8, 8, 6);
        let b = fit_patch_basis(&x).unwrap();
        let fixed = BasisChoice::Fixed(&b);
        let d = fused_downsample(&x, FusionConfig::new(1.0, 0.0), fixed).unwrap();
        let p = fused_downsample(&x, FusionConfig::new(0.0, 1.0), fixed).unwrap();
        for cfg in FusionConfig::PRESETS {
            let f = fused_downsample(&x, cfg, fixed).unwrap();
            let lin: Vec<f32> = d.data().iter().zip(p.data()).map(|(a, b)| cfg.alpha * a + cfg.beta * b).collect();
            assert!(max_abs_diff(f.data(), &lin) <= 1e-6);
        }
        // per-input policy fits the same basis
        let per = fused_downsample(&x, FusionConfig::default(), BasisChoice::PerInput).unwrap();
        assert_eq!(per, fused_downsample(&x, FusionConfig::default(), fixed).unwrap());
    }
}
