mod common;

use common::metric_oracles::{psnr_oracle, ssim_oracle};
use dehazemamba_core::data::dataset::MANIFEST;
use dehazemamba_core::data::haze::coverage_bin;
use dehazemamba_core::data::{
    composite, dataset_report, gen_mask, generate, haze_stats, load_dataset, pnm, psnr, ssim, write_dataset,
    DataConfig, DensityClass,
};
use dehazemamba_core::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pnm::quantize(&Tensor::rand_uniform(&[c, h, w], 0.0, 1.0, &mut rng))
}

#[test]
fn psnr_of_uniform_sixteen_difference() {
    let a = Tensor::<f32>::full(&[3, 8, 8], 100.0 / 255.0);
    let b = Tensor::<f32>::full(&[3, 8, 8], 116.0 / 255.0);
    let exact = 10.0 * (65025.0f64 / 256.0).log10();
    assert!((psnr(&a, &b).unwrap() - exact).abs() < 1e-4);
    assert!((psnr(&a, &b).unwrap() - 24.0487).abs() < 1e-3);
    assert_eq!(psnr(&a, &a).unwrap(), 99.0);
}

#[test]
fn metrics_match_oracles_on_random_pairs() {
    for k in 0..10 {
        let a = image(3, 24, 20, 2 * k);
        let b = image(3, 24, 20, 2 * k + 1).zip_map(&a, |x, y| 0.5 * x + 0.5 * y).unwrap();
        assert!((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs() < 1e-4);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-5);
    }
}

#[test]
fn ssim_reference_cases() {
    let a = image(3, 16, 16, 30);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let small = image(3, 10, 16, 31);
    assert!(matches!(ssim(&small, &small), Err(Error::Config(_))));
    // constant images: only the luminance term is active
    let (p, q) = (80.0f64, 120.0f64);
    let ca = Tensor::<f32>::full(&[3, 12, 12], (p / 255.0) as f32);
    let cb = Tensor::<f32>::full(&[3, 12, 12], (q / 255.0) as f32);
    let c1 = (0.01f64 * 255.0).powi(2);
    let want = (2.0 * p * q + c1) / (p * p + q * q + c1);
    assert!((ssim(&ca, &cb).unwrap() - want).abs() < 1e-4);
}

#[test]
fn crafted_haze_regions_classify_by_density() {
    for (level, class) in [
        (100u8, DensityClass::Thin),
        (150, DensityClass::Moderate),
        (200, DensityClass::Dense),
    ] {
        let (h, w) = (8, 8);
        let mut hazy = vec![pnm::from_u8(20); 3 * h * w];
        let mut mask = vec![0.0f32; h * w];
        for i in 0..h * w / 2 {
            mask[i] = 0.8;
            for c in 0..3 {
                hazy[c * h * w + i] = pnm::from_u8(level);
            }
        }
        let stats = haze_stats(
            &Tensor::new(&[3, h, w], hazy).unwrap(),
            &Tensor::new(&[1, h, w], mask).unwrap(),
        )
        .unwrap();
        assert!((stats.density_value.unwrap() - level as f64).abs() < 1e-3);
        assert_eq!(stats.density_class, Some(class));
        assert_eq!(stats.coverage, 0.5);
    }
    assert_eq!(DensityClass::classify(105.0), DensityClass::Thin);
    assert_eq!(DensityClass::classify(105.0001), DensityClass::Moderate);
    assert_eq!(DensityClass::classify(175.0), DensityClass::Moderate);
    assert_eq!(DensityClass::classify(175.0001), DensityClass::Dense);
}

#[test]
fn masks_hit_coverage_and_are_deterministic() {
    for (k, cov) in [0.1, 0.25, 0.5, 0.75, 0.9, 1.0].into_iter().enumerate() {
        for class in DensityClass::ALL {
            let m = gen_mask(32, 32, k as u64, cov, class).unwrap();
            let covered = m.data().iter().filter(|&&a| a > 0.05).count() as f64 / 1024.0;
            assert!((covered - cov).abs() <= 0.05, "{cov} {class}: {covered}");
            assert_eq!(m, gen_mask(32, 32, k as u64, cov, class).unwrap());
        }
    }
    let full = gen_mask(16, 16, 3, 1.0, DensityClass::Dense).unwrap();
    assert!(full.data().iter().all(|&a| a >= 0.7));
    let none = gen_mask(16, 16, 3, 0.0, DensityClass::Thin).unwrap();
    assert!(none.data().iter().all(|&a| a == 0.0));
    assert!(matches!(
        gen_mask(16, 16, 3, 0.0, DensityClass::Dense),
        Err(Error::Config(_))
    ));
}

#[test]
fn composite_blends_affinely() {
    let clear = image(3, 2, 2, 40);
    let haze = image(3, 2, 2, 41);
    let mask = Tensor::new(&[1, 2, 2], vec![0.0, 0.5, 1.0, 0.0]).unwrap();
    let hazy = composite(&clear, &mask, &haze).unwrap();
    for c in 0..3 {
        let i = |p: usize| c * 4 + p;
        assert_eq!(hazy.data()[i(0)], clear.data()[i(0)]);
        assert_eq!(hazy.data()[i(1)], 0.5 * clear.data()[i(1)] + 0.5 * haze.data()[i(1)]);
        assert_eq!(hazy.data()[i(2)], haze.data()[i(2)]);
    }
}

#[test]
fn coverage_report_tables() {
    let single = haze_stats(
        &image(3, 10, 10, 42),
        &Tensor::new(&[1, 10, 10], (0..100).map(|i| if i < 35 { 0.5 } else { 0.0 }).collect()).unwrap(),
    )
    .unwrap();
    let rep = dataset_report(&[single]);
    assert_eq!(rep.coverage_bins[3], 1);
    assert!(rep.to_tsv().contains("30-40%\t1\t100.00\n"));

    let empty = dataset_report(&[]).to_tsv();
    assert_eq!(empty.lines().filter(|l| l.contains('%')).count(), 0);
    assert_eq!(empty.lines().filter(|l| l.contains("\tcount\t")).count(), 3);
}

#[test]
fn uniform_coverage_targets_fill_bins_evenly() {
    let pairs = generate(&DataConfig {
        count: 100,
        seed: 11,
        coverage_min: 0.0,
        coverage_max: 1.0,
        ..Default::default()
    })
    .unwrap();
    let stats: Vec<_> = pairs.iter().map(|p| p.stats().unwrap()).collect();
    let rep = dataset_report(&stats);
    for (i, &c) in rep.coverage_bins.iter().enumerate() {
        assert!(c <= 20, "bin {i} holds {c}%");
    }
    assert_eq!(coverage_bin(1.0), 9);
}

#[test]
fn generated_pairs_hit_their_density_targets() {
    let cfg = DataConfig {
        count: 24,
        seed: 12,
        ..Default::default()
    };
    let pairs = generate(&cfg).unwrap();
    let hits = pairs
        .iter()
        .enumerate()
        .filter(|(i, p)| p.stats().unwrap().density_class == Some(cfg.targets(*i).2))
        .count();
    assert!(hits >= 20, "{hits}/24 pairs in their requested class");
}

#[test]
fn pnm_files_round_trip_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    for (c, name) in [(3, "a.ppm"), (1, "b.pgm")] {
        let img = image(c, 5, 7, 50 + c as u64);
        let path = dir.path().join(name);
        pnm::write(&path, &img).unwrap();
        assert_eq!(pnm::read(&path).unwrap(), img);
    }
    let max = pnm::decode(b"P5\n1 1\n255\n\xff").unwrap();
    assert_eq!(max.data(), &[1.0]);
    assert!(matches!(pnm::decode(b"P3\n1 1\n255\n0"), Err(Error::Parse(_))));
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig {
        count: 8,
        seed: 13,
        ..Default::default()
    };
    let pairs = generate(&cfg).unwrap();
    assert_eq!(pairs.len(), 8);
    write_dataset(dir.path(), &pairs).unwrap();
    for i in 0..8 {
        for kind in ["clear.ppm", "hazy.ppm", "sar.pgm", "mask.pgm"] {
            assert!(dir.path().join(format!("pairs/{i}_{kind}")).is_file());
        }
    }
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, pairs);
    for p in &loaded {
        p.validate().unwrap();
    }

    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), &generate(&cfg).unwrap()).unwrap();
    let manifest = |d: &std::path::Path| std::fs::read_to_string(d.join(MANIFEST)).unwrap();
    assert_eq!(manifest(dir.path()), manifest(again.path()));

    let empty = tempfile::tempdir().unwrap();
    write_dataset(empty.path(), &[]).unwrap();
    assert_eq!(manifest(empty.path()).lines().count(), 1);
    assert!(load_dataset(empty.path()).unwrap().is_empty());
    let missing = empty.path().join("nowhere");
    assert!(matches!(load_dataset(&missing), Err(Error::Data(_))));
}

proptest! {
    #[test]
    fn metrics_are_symmetric(seed in 0u64..500) {
        let (a, b) = (image(3, 12, 13, seed), image(3, 12, 13, seed + 500));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn composite_preserves_haze_free_pixels(seed in 0u64..500, cov in 0.0f64..1.0) {
        let clear = image(3, 16, 16, seed);
        let mask = gen_mask(16, 16, seed, cov, DensityClass::Moderate).unwrap();
        let hazy = composite(&clear, &mask, &image(3, 16, 16, seed + 1)).unwrap();
        for (i, (c, h)) in clear.data().iter().zip(hazy.data()).enumerate() {
            if mask.data()[i % 256] == 0.0 {
                prop_assert_eq!(c, h);
            }
        }
    }
}
