use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavunet::imagecore::{add_noise, extract_patches, load_image, pad_reflect, patch_grid_count, save_image};
use wavunet::metrics::{mse, psnr, ssim};
use wavunet::neuralnet::{init_parameters, Tape};
use wavunet::pipeline::{baseline_wavelet_threshold, cache_key};
use wavunet::training::{lr_at, residual_loss};
use wavunet::transforms::{dwt2, fit_pca, idwt2, SubbandStack, LL};
use wavunet::{FusionConfig, ImageTensor, MetricsConfig, Model, ModelConfig, NoiseSpec, TrainConfig};

fn random_image(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0))
}

fn randoms(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reflect_padding_keeps_interior(seed in any::<u64>(), h in 2usize..10, w in 2usize..10, p in 0usize..4) {
        prop_assume!(p < h.min(w));
        let img = random_image(2, h, w, seed);
        let padded = pad_reflect(&img, p).unwrap();
        prop_assert_eq!(padded.crop(p, p, h, w).unwrap(), img);
    }

    #[test]
    fn noise_is_a_pure_function(seed in any::<u64>(), sigma in 0.0f32..0.5) {
        let img = random_image(3, 8, 8, 1);
        let spec = NoiseSpec::gaussian(sigma, seed);
        prop_assert_eq!(add_noise(&img, &spec), add_noise(&img, &spec));
    }

    #[test]
    fn png_round_trip_within_one_level(seed in any::<u64>(), c in prop::sample::select(vec![1usize, 3])) {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(c, 5, 7, seed);
        let path = dir.path().join("x.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        let worst = back.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        prop_assert!(worst <= 1.0 / 255.0 + 1e-6);
    }

    #[test]
    fn patch_count_matches_grid(h in 4usize..20, w in 4usize..20, size in 1usize..5, stride in 1usize..4) {
        let img = ImageTensor::filled(1, h, w, 0.5);
        let n = extract_patches(&img, size, stride, 0).unwrap().len();
        prop_assert_eq!(n, patch_grid_count(h, size, stride) * patch_grid_count(w, size, stride));
    }

    #[test]
    fn pca_fit_is_orthonormal(seed in any::<u64>(), dim in 1usize..9, n in 2usize..30) {
        let b = fit_pca(&randoms(n * dim, seed), dim, dim).unwrap();
        prop_assert!(b.orthonormality_error() <= 1e-5);
    }

    #[test]
    fn dwt_backward_is_idwt_of_upstream(seed in any::<u64>(), c in 1usize..4, h in 1usize..5, w in 1usize..5) {
        let (h, w) = (2 * h, 2 * w);
        let mut t = Tape::new();
        let x = t.leaf(&[c, h, w], randoms(c * h * w, seed), true).unwrap();
        let s = t.dwt(x).unwrap();
        let up = randoms(c * h * w, seed ^ 7);
        t.backward(s, &up).unwrap();
        let stack = SubbandStack::from_tensor(ImageTensor::new(4 * c, h / 2, w / 2, up).unwrap()).unwrap();
        let expect = idwt2(&stack);
        let worst = t.grad(x).iter().zip(expect.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        prop_assert!(worst <= 1e-6);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients(seed in any::<u64>()) {
        let mut t = Tape::new();
        let x = t.leaf(&[2, 4, 4], randoms(32, seed), true).unwrap();
        let k = t.leaf(&[2, 2, 3, 3], randoms(36, seed ^ 1), true).unwrap();
        let b = t.leaf(&[2], randoms(2, seed ^ 2), true).unwrap();
        let conv = t.conv2d(x, k, b).unwrap();
        let act = t.relu(conv).unwrap();
        let sum = t.add(act, x).unwrap();
        let scaled = t.scale(sum, 0.3).unwrap();
        let down = t.dwt(scaled).unwrap();
        let basis = Rc::new(fit_pca(&randoms(4 * 8, seed ^ 3), 8, 8).unwrap());
        let proj = t.pca(scaled, basis).unwrap();
        let fused = t.add(down, proj).unwrap();
        let up = t.idwt(fused).unwrap();
        let out = t.concat_channels(up, x).unwrap();
        t.backward(out, &vec![0.0; 4 * 4 * 4]).unwrap();
        for v in [x, k, b] {
            prop_assert!(t.grad(v).iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn model_preserves_shape(seed in any::<u64>(), h in 4usize..13, w in 4usize..13) {
        let mut model = Model::build(ModelConfig { base_channels: 2, depth: 2, seed, ..Default::default() }).unwrap();
        init_parameters(model.params_mut(), seed);
        let y = random_image(3, h, w, seed);
        let d = model.denoise(&y).unwrap();
        prop_assert_eq!(d.shape(), y.shape());
        prop_assert_eq!(d, model.denoise(&y).unwrap());
    }

    #[test]
    fn lr_schedule_is_bounded(total in 1usize..500, frac in 0.01f64..0.9) {
        let cfg = TrainConfig { lr_init: 1e-3, lr_min: 1e-6, warmup_fraction: frac, ..Default::default() };
        for step in 0..total {
            let lr = lr_at(step, total, &cfg);
            prop_assert!((cfg.lr_min..=cfg.lr_init).contains(&lr), "step {} lr {}", step, lr);
        }
    }

    #[test]
    fn residual_loss_vanishes_only_at_the_target(seed in any::<u64>(), bump in 1e-3f32..0.5) {
        let x = random_image(1, 4, 4, seed);
        let y = add_noise(&x, &NoiseSpec::gaussian(0.1, seed));
        let target = ImageTensor::new(1, 4, 4, y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect()).unwrap();
        prop_assert_eq!(residual_loss(std::slice::from_ref(&target), std::slice::from_ref(&y), std::slice::from_ref(&x)).unwrap(), 0.0);
        let mut off = target;
        off.data_mut()[0] += bump;
        prop_assert!(residual_loss(&[off], &[y], &[x]).unwrap() > 0.0);
    }

    #[test]
    fn psnr_falls_as_error_grows(seed in any::<u64>()) {
        let base = random_image(1, 16, 16, seed);
        let x = ImageTensor::from_fn(1, 16, 16, |_, r, c| 0.25 + 0.5 * base.get(0, r, c));
        let cfg = MetricsConfig::default();
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let y = ImageTensor::from_fn(1, 16, 16, |_, r, c| x.get(0, r, c) + 0.02 * k as f32);
            let p = psnr(&x, &y, &cfg).unwrap().finite().unwrap();
            prop_assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_ignores_channel_order(seed in any::<u64>()) {
        let x = random_image(3, 16, 16, seed);
        let y = add_noise(&x, &NoiseSpec::gaussian(0.1, seed));
        let perm = [2usize, 0, 1];
        let px = ImageTensor::from_fn(3, 16, 16, |c, r, k| x.get(perm[c], r, k));
        let py = ImageTensor::from_fn(3, 16, 16, |c, r, k| y.get(perm[c], r, k));
        let cfg = MetricsConfig::default();
        let (a, b) = (ssim(&x, &y, &cfg).unwrap(), ssim(&px, &py, &cfg).unwrap());
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert_eq!(mse(&x, &y).unwrap() == 0.0, x == y);
    }

    #[test]
    fn baseline_never_touches_ll(seed in any::<u64>(), sigma in 0.0f32..0.3) {
        // mid-range values so the final clamp cannot act
        let x = ImageTensor::from_fn(3, 8, 8, |c, r, k| 0.45 + 0.1 * ((seed as usize + c + r * 3 + k * 5) % 7) as f32 / 7.0);
        let d = baseline_wavelet_threshold(&x, sigma);
        let (a, b) = (dwt2(&x).unwrap(), dwt2(&d).unwrap());
        for c in 0..3 {
            let worst = a.band(c, LL).iter().zip(b.band(c, LL)).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max);
            prop_assert!(worst <= 1e-5);
        }
    }

    #[test]
    fn cache_key_tracks_training_fields(field in 0usize..8) {
        let (t, m, n) = (TrainConfig::default(), ModelConfig::default(), NoiseSpec::gaussian(0.1, 0));
        let base = cache_key(&t, &m, &n, "data");
        prop_assert_eq!(&base, &cache_key(&t.clone(), &m.clone(), &n.clone(), "data"));
        let mut t2 = t.clone();
        t2.checkpoint_every = 9;
        prop_assert_eq!(&base, &cache_key(&t2, &m, &n, "data"));
        let changed = match field {
            0 => cache_key(&TrainConfig { lr_init: 2e-4, ..t.clone() }, &m, &n, "data"),
            1 => cache_key(&TrainConfig { seed: 1, ..t.clone() }, &m, &n, "data"),
            2 => cache_key(&TrainConfig { epochs: 3, ..t.clone() }, &m, &n, "data"),
            3 => cache_key(&t, &ModelConfig { fusion: FusionConfig::new(0.7, 0.3), ..m.clone() }, &n, "data"),
            4 => cache_key(&t, &ModelConfig { base_channels: 4, ..m.clone() }, &n, "data"),
            5 => cache_key(&t, &m, &NoiseSpec::gaussian(0.2, 0), "data"),
            6 => cache_key(&t, &m, &n.with_seed(4), "data"),
            _ => cache_key(&t, &m, &n, "other"),
        };
        prop_assert_ne!(base, changed);
    }
}
