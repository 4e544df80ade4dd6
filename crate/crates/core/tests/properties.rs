use std::path::Path;

use nalgebra::Vector3;
use partfield_core::body::{Camera, RigidTransform};
use partfield_core::features::{pairwise_diversity, FeatureExtractor};
use partfield_core::finetune::{masked_smooth, next_latent, LatentKind, NoiseSchedulePolicy};
use partfield_core::generator::{composite, LatentNoise};
use partfield_core::image::Image;
use partfield_core::pipeline::{Container, RunConfig, World};
use partfield_core::prior::{cfg_noise, DiffusionSchedule, ToyPrior, Vocabulary};
use partfield_core::rng::{normal_vec, stream_rng, uniform_vec};
use proptest::prelude::*;

fn image(seed: u64, c: usize, h: usize, w: usize) -> Image {
    Image::from_vec(c, h, w, uniform_vec(&mut stream_rng(seed, 77, 0), c * h * w, 0.0, 1.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compositing_conserves_mass(
        samples in prop::collection::vec((0.0f64..50.0, 1e-4f64..0.2), 1..64)
    ) {
        let (sigma, delta): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let (w, t) = composite(&sigma, &delta);
        prop_assert!(w.iter().all(|&x| x >= -1e-15));
        prop_assert!((w.iter().sum::<f64>() + t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_ignores_order(seed in 0u64..1000, n in 2usize..6, shift in 1usize..5) {
        let fx = FeatureExtractor::new(3, 0);
        let views: Vec<Image> = (0..n as u64).map(|i| image(seed * 10 + i, 3, 16, 8)).collect();
        let mut rotated = views.clone();
        rotated.rotate_left(shift % n);
        let (a, b) = (pairwise_diversity(&views, &fx).unwrap(), pairwise_diversity(&rotated, &fx).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn identical_views_have_zero_diversity(seed in 0u64..1000, n in 2usize..5) {
        let fx = FeatureExtractor::new(3, 1);
        let views = vec![image(seed, 3, 16, 8); n];
        prop_assert_eq!(pairwise_diversity(&views, &fx).unwrap(), 0.0);
    }

    #[test]
    fn container_round_trips(
        sections in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 0..40), 0..5),
        note in "[a-z]{0,12}"
    ) {
        let mut c = Container::new("probe", serde_json::json!({ "note": note }));
        for (i, s) in sections.iter().enumerate() {
            c.push(&format!("s{i}"), s.clone());
        }
        let bytes = c.to_bytes();
        let (back, header) = Container::from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(header.kind.as_str(), "probe");
        prop_assert_eq!(back.to_bytes(), bytes);
        for (i, s) in sections.iter().enumerate() {
            prop_assert_eq!(back.section(&format!("s{i}")).unwrap(), s.as_slice());
        }
    }

    #[test]
    fn corrupted_container_is_rejected(len in 1usize..30, pos in 0usize..1000, flip in 1u8..=255) {
        let mut c = Container::new("probe", serde_json::Value::Null);
        c.push("x", (0..len).map(|i| i as f64).collect());
        let mut bytes = c.to_bytes();
        let at = pos % bytes.len();
        bytes[at] ^= flip;
        prop_assert!(Container::from_bytes(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn rigid_transforms_invert(
        axis in prop::array::uniform3(-1.0f64..1.0), angle in -3.0f64..3.0,
        pivot in prop::array::uniform3(-2.0f64..2.0), p in prop::array::uniform3(-2.0f64..2.0)
    ) {
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let t = RigidTransform::about_pivot(&axis, angle, &Vector3::from(pivot));
        let p = Vector3::from(p);
        prop_assert!(t.is_rigid(1e-9));
        prop_assert!((t.inverse_apply(&t.apply(&p)) - p).norm() < 1e-12);
        prop_assert!((t.apply(&Vector3::from(pivot)) - Vector3::from(pivot)).norm() < 1e-12);
        let twice = t.compose(&t);
        prop_assert!((twice.apply(&p) - t.apply(&t.apply(&p))).norm() < 1e-12);
    }

    #[test]
    fn rays_project_to_their_pixel(
        az in -3.0f64..3.0, el in -0.5f64..0.5, dist in 2.0f64..5.0,
        row in 0usize..64, col in 0usize..32, t in 0.5f64..4.0
    ) {
        let cam = Camera::new(az, el, dist, 0.6, [0.0, 0.1, 0.0]).unwrap();
        let p = cam.position() + t * cam.ray_dir(row, col, 64, 32);
        let (x, y, _) = cam.project(&p, 64, 32).unwrap();
        prop_assert!((x - (col as f64 + 0.5)).abs() < 1e-9);
        prop_assert!((y - (row as f64 + 0.5)).abs() < 1e-9);
    }

    #[test]
    fn schedule_extremes_are_exact(seed in 0u64..10_000) {
        let fixed = LatentNoise::sample(&mut stream_rng(seed, 78, 0), 8);
        let never = NoiseSchedulePolicy::new(0.0, fixed.clone()).unwrap();
        let always = NoiseSchedulePolicy::new(1.0, fixed.clone()).unwrap();
        let (z, k) = next_latent(&never, &mut stream_rng(seed, 79, 0));
        prop_assert_eq!(k, LatentKind::Fixed);
        prop_assert_eq!(z, fixed);
        prop_assert_eq!(next_latent(&always, &mut stream_rng(seed, 79, 1)).1, LatentKind::Fresh);
    }

    #[test]
    fn smoothing_keeps_constant_depth(value in 0.5f64..5.0, sigma in 0.5f64..3.0, seed in 0u64..100) {
        let mut mask = image(seed, 1, 12, 10).map(|v| if v > 0.4 { 1.0 } else { 0.0 });
        mask.set(0, 5, 5, 1.0);
        let depth = Image::filled(1, 12, 10, value);
        let out = masked_smooth(&depth, &mask, sigma);
        for i in 0..out.data.len() {
            if mask.data[i] > 0.5 {
                prop_assert!((out.data[i] - value).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_backward_is_adjoint(seed in 0u64..1000) {
        let x = image(seed, 3, 8, 6);
        let g = Image::from_vec(3, 4, 3, normal_vec(&mut stream_rng(seed, 80, 0), 36)).unwrap();
        let lhs: f64 = x.downsample2().data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let back = Image::downsample2_backward(&g, 8, 6);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn config_toml_round_trips(seed in any::<u64>(), p in 0.0f64..=1.0, iterations in 1u64..100_000, prompt in "[a-z ,]{1,30}") {
        let cfg = RunConfig { seed, p, iterations, prompt, ..RunConfig::default() };
        prop_assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn guidance_is_affine_in_scale(seed in 0u64..1000, s in -10.0f64..150.0, t in 1usize..200) {
        let prior = ToyPrior::init(Vocabulary::new(&World::default().regions), DiffusionSchedule::default(), 8, seed);
        let y = prior.embed("yellow upper, gray lower").unwrap();
        let x = Image::from_vec(3, 32, 16, normal_vec(&mut stream_rng(seed, 81, 0), 1536)).unwrap();
        let e0 = cfg_noise(&prior, &x, t, &y, 0.0).unwrap();
        let e1 = cfg_noise(&prior, &x, t, &y, 1.0).unwrap();
        let es = cfg_noise(&prior, &x, t, &y, s).unwrap();
        for k in 0..es.data.len() {
            prop_assert!((es.data[k] - ((1.0 - s) * e0.data[k] + s * e1.data[k])).abs() < 1e-9);
        }
    }
}
