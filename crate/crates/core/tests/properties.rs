use hazediff_core::hadtp::{enhance_condition, predict_offset};
use hazediff_core::hazesynth::{apply_asm, invert_asm, make_toy_dataset};
use hazediff_core::metrics::{psnr, ssim};
use hazediff_core::patches::{aggregate_noise, make_uniform_weights, plan_patches};
use hazediff_core::pist::{intermediate_state, pist_weight, NoiseSchedule};
use hazediff_core::sampler::dehaze;
use hazediff_core::sampler::model_io::{decode_model, encode_model};
use hazediff_core::transmission::{dark_channel, estimate_transmission};
use hazediff_core::{
    DcpParams, FieldImage, HadtpParams, HazeScene, OracleDenoiser, PistParams, PixelImage,
    SamplerConfig, TinyConfig, TinyDenoiser, TransmissionMap,
};
use proptest::prelude::*;

fn pixels(h: usize, w: usize, c: usize) -> impl Strategy<Value = PixelImage> {
    prop::collection::vec(0.0..=1.0f64, h * w * c)
        .prop_map(move |v| PixelImage::new(h, w, c, v).unwrap())
}

fn tmap(h: usize, w: usize) -> impl Strategy<Value = TransmissionMap> {
    prop::collection::vec(0.1..=1.0f64, h * w)
        .prop_map(move |v| TransmissionMap::new(h, w, v, 0.1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patches_cover_every_pixel(
        patch in 2usize..24,
        stride_frac in 0.05f64..0.95,
        extra_h in 0usize..40,
        extra_w in 0usize..40,
    ) {
        let stride = ((patch as f64 * stride_frac) as usize).clamp(1, patch - 1);
        let grid = plan_patches(patch + extra_h, patch + extra_w, patch, stride).unwrap();
        prop_assert!(grid.cover_counts().iter().all(|&c| c >= 1));
        for s in make_uniform_weights(&grid).pixel_sums(&grid) {
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        prop_assert!(grid.origins.iter().all(|&(r, c)| r + patch <= grid.height && c + patch <= grid.width));
    }

    #[test]
    fn aggregation_preserves_constants(value in -3.0f64..3.0, side in 20usize..48) {
        let grid = plan_patches(side, side, 16, 6).unwrap();
        let est: Vec<_> = grid.origins.iter().map(|&o| (o, FieldImage::filled(16, 16, 2, value))).collect();
        let out = aggregate_noise(&est, &grid, &make_uniform_weights(&grid)).unwrap();
        prop_assert!(out.data().iter().all(|v| (v - value).abs() < 1e-12));
    }

    #[test]
    fn pist_weight_is_a_monotone_fraction(
        t in 0usize..=1000,
        tau_lo in 0.0f64..=1.0,
        tau_gap in 0.0f64..=1.0,
        a in 0.0f64..0.02,
    ) {
        let params = PistParams { a, steps: 1000 };
        let tau_hi = (tau_lo + tau_gap).min(1.0);
        let w = pist_weight(t, tau_lo, &params);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!(pist_weight(t, tau_hi, &params) <= w);
        if t < 1000 {
            prop_assert!(pist_weight(t + 1, tau_lo, &params) <= w);
        }
    }

    #[test]
    fn intermediate_state_stays_between_endpoints(
        clear in pixels(6, 6, 3),
        hazy in pixels(6, 6, 3),
        tm in tmap(6, 6),
        t in 0usize..=1000,
    ) {
        let u = intermediate_state(clear.as_field(), &hazy, &tm, t, &PistParams::default()).unwrap();
        for ((&u, &j), &i) in u.data().iter().zip(clear.data()).zip(hazy.data()) {
            prop_assert!(u >= j.min(i) - 1e-15 && u <= j.max(i) + 1e-15);
        }
    }

    #[test]
    fn condition_is_a_convex_blend(
        hazy in pixels(5, 5, 3),
        tm in tmap(5, 5),
        j in prop::collection::vec(-2.0f64..2.0, 75),
    ) {
        let j = FieldImage::new(5, 5, 3, j).unwrap();
        let c = enhance_condition(&j, &hazy, &tm).unwrap();
        for ((&c, &j), &i) in c.as_field().data().iter().zip(j.data()).zip(hazy.data()) {
            prop_assert!(c >= j.min(i) - 1e-12 && c <= j.max(i) + 1e-12);
        }
    }

    #[test]
    fn offsets_keep_steps_in_range(
        t in 1usize..=200,
        patch_mean in 0.1f64..=1.0,
        global in 0.1f64..=1.0,
        kappa in 0.0f64..10.0,
    ) {
        let patch = TransmissionMap::uniform(3, 3, patch_mean).unwrap();
        let dt = predict_offset(&patch, global, t, 200, &HadtpParams { kappa, enabled: true });
        prop_assert!((1..=200).contains(&(t as i64 + dt)));
        if patch_mean < global - 1e-9 {
            prop_assert!(dt >= 0);
        } else if patch_mean > global + 1e-9 {
            prop_assert!(dt <= 0);
        }
    }

    #[test]
    fn haze_model_inverts(clear in pixels(6, 6, 3), tm in tmap(6, 6), airlight in 0.5f64..1.0) {
        let scene = HazeScene::new(clear.clone(), tm.clone(), airlight).unwrap();
        let back = invert_asm(&apply_asm(&scene), &tm, airlight).unwrap();
        for (a, b) in back.data().iter().zip(clear.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dark_channel_bounds_every_channel(img in pixels(9, 9, 3), half in 0usize..4) {
        let dark = dark_channel(&img, 2 * half + 1).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let lowest = (0..3).map(|c| img.get(y, x, c)).fold(f64::INFINITY, f64::min);
                prop_assert!(dark.get(y, x, 0) <= lowest);
            }
        }
    }

    #[test]
    fn transmission_respects_its_floor(img in pixels(16, 16, 3)) {
        let params = DcpParams::default();
        let est = estimate_transmission(&img, &params).unwrap();
        prop_assert!(est.map.values().iter().all(|&v| v >= params.t0 && v <= 1.0));
        prop_assert!(est.airlight > 0.0 && est.airlight <= 1.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in pixels(12, 13, 3), b in pixels(12, 13, 3)) {
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_is_symmetric(a in pixels(4, 4, 1), b in pixels(4, 4, 1)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dehaze_stays_finite_and_in_range(
        seed in 0u64..1000,
        deterministic in any::<bool>(),
        hadtp in any::<bool>(),
    ) {
        let scene = &make_toy_dataset(1, 24, seed).unwrap()[0];
        let config = SamplerConfig {
            patch: 16,
            stride: 8,
            pist: PistParams { steps: 30, ..Default::default() },
            hadtp: HadtpParams { enabled: hadtp, ..Default::default() },
            deterministic,
            seed,
            ..Default::default()
        };
        let oracle = OracleDenoiser::new(&scene.clear, &scene.tmap, config.pist).unwrap();
        let out = dehaze(&scene.hazy(), &scene.tmap, &oracle, &config).unwrap();
        prop_assert!(out.image.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        prop_assert_eq!(out.trace.steps.len(), 30);
        for step in &out.trace.steps {
            for rec in &step.patches {
                prop_assert!(rec.t_hat <= 30);
            }
        }
    }
}

#[test]
fn tiny_denoiser_output_is_finite_on_noisy_input() {
    let scene = &make_toy_dataset(1, 32, 5).unwrap()[0];
    let model = TinyDenoiser::new(TinyConfig::default(), 3).unwrap();
    let config = SamplerConfig {
        patch: 16,
        stride: 8,
        sampling_steps: Some(6),
        seed: 2,
        ..Default::default()
    };
    let out = dehaze(&scene.hazy(), &scene.tmap, &model, &config).unwrap();
    assert!(out.image.data().iter().all(|v| v.is_finite()));
    assert_eq!(out.trace.steps.len(), 6);
}

#[test]
fn model_bytes_round_trip() {
    let model = TinyDenoiser::new(TinyConfig { base: 8, ..Default::default() }, 4).unwrap();
    let bytes = encode_model(&model);
    let back = decode_model(&bytes).unwrap();
    assert_eq!(encode_model(&back), bytes);
    assert_eq!(back.config(), model.config());
}

#[test]
fn schedule_products_match_recomputation() {
    let s = NoiseSchedule::default();
    let mut gamma = 1.0;
    for t in 1..=s.steps() {
        gamma *= 1.0 - s.beta(t);
        assert!((s.gamma(t) - gamma).abs() < 1e-12, "t = {t}");
    }
}
