use dehazemamba_core::data::{generate, DataConfig, ImagePair};
use dehazemamba_core::network::{DehazeMamba, ModelConfig, ParamStore};
use dehazemamba_core::train::checkpoint::{self, MAGIC};
use dehazemamba_core::train::{
    cosine_lr, frequency_loss, spatial_loss, total_loss, AdamW, AdamWConfig, StepLog, TrainConfig, Trainer,
};
use dehazemamba_core::{Error, Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(shape, 0.0, 1.0, &mut rng)
}

fn loss_value(pred: &Tensor<f64>, target: &Tensor<f64>, which: &str) -> f64 {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(target.clone()));
    let l = match which {
        "spatial" => spatial_loss(&mut g, p, t).unwrap(),
        _ => frequency_loss(&mut g, p, t).unwrap(),
    };
    g.value(l).item()
}

#[test]
fn spatial_loss_matches_scalar_loop() {
    let (p, t) = (rand_t(&[2, 3, 8, 8], 1), rand_t(&[2, 3, 8, 8], 2));
    let want = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.numel() as f64;
    assert!((loss_value(&p, &t, "spatial") - want).abs() < 1e-6);
    assert_eq!(loss_value(&p, &p, "spatial"), 0.0);
}

#[test]
fn frequency_loss_matches_naive_dft_pipeline() {
    let (h, w) = (4, 8);
    let (p, t) = (rand_t(&[1, 2, h, w], 3), rand_t(&[1, 2, h, w], 4));
    let mut total = 0.0;
    for plane in 0..2 {
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let k = plane * h * w + y * w + x;
                        let d = p.data()[k] - t.data()[k];
                        let ang = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        re += d * ang.cos();
                        im += d * ang.sin();
                    }
                }
                total += re.abs() + im.abs();
            }
        }
    }
    let want = total / (2 * 2 * h * w) as f64;
    assert!((loss_value(&p, &t, "freq") - want).abs() < 1e-4);
    assert_eq!(loss_value(&p, &p, "freq"), 0.0);
}

#[test]
fn cosine_schedule_reference_points() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lambda, 0.1);
    assert_eq!(cfg.lr(0), 2e-4);
    assert!((cfg.lr(cfg.steps) - 1e-6).abs() < 1e-18);
    assert!((cfg.lr(cfg.steps / 2) - 1.005e-4).abs() < 1e-12);
}

#[test]
fn adamw_first_step_and_decay() {
    let mut store = ParamStore::default();
    store.insert("p", Tensor::<f32>::scalar(0.5)).unwrap();
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(cfg);
    opt.step(&mut store, &[Tensor::scalar(1.0)], 1e-3).unwrap();
    assert!((store.by_name("p").unwrap().item() as f64 - (0.5 - 1e-3)).abs() < 1e-6);

    let mut opt = AdamW::new(cfg);
    let before = store.clone();
    opt.step(&mut store, &[Tensor::scalar(0.0)], 1e-3).unwrap();
    assert_eq!(store, before);

    let mut opt = AdamW::new(AdamWConfig::default());
    let p0 = store.by_name("p").unwrap().item() as f64;
    opt.step(&mut store, &[Tensor::scalar(0.0)], 0.5).unwrap();
    let want = p0 * (1.0 - 0.5 * 0.01);
    assert!((store.by_name("p").unwrap().item() as f64 - want).abs() < 1e-7);
}

fn dataset(count: usize, size: usize, seed: u64) -> Vec<ImagePair> {
    generate(&DataConfig {
        count,
        seed,
        height: size,
        width: size,
        ..Default::default()
    })
    .unwrap()
}

fn small_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        batch: 2,
        steps,
        crop: 16,
        seed: 5,
        ..Default::default()
    }
}

fn trainer(cfg: TrainConfig) -> Trainer {
    let (model, store) = DehazeMamba::new(&ModelConfig::micro(), cfg.seed).unwrap();
    Trainer::new(model, store, cfg).unwrap()
}

fn run(t: &mut Trainer, data: &[ImagePair], until: Option<u64>) -> Vec<StepLog> {
    t.run(data, until, |_, _| Ok(())).unwrap()
}

#[test]
fn same_seed_traces_are_identical_across_worker_counts() {
    let data = dataset(3, 16, 7);
    let mut a = trainer(small_cfg(4));
    let mut b = trainer(TrainConfig {
        workers: 2,
        ..small_cfg(4)
    });
    let (ta, tb) = (run(&mut a, &data, None), run(&mut b, &data, None));
    assert_eq!(ta.len(), 4);
    assert_eq!(ta, tb);
    assert_eq!(a.store, b.store);
    assert!(ta[0].loss > 0.0 && ta.iter().all(|l| l.loss.is_finite()));
}

#[test]
fn resume_from_checkpoint_reproduces_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/ckpt.dhmb");
    let data = dataset(3, 16, 8);
    let mut full = trainer(small_cfg(5));
    let trace = run(&mut full, &data, None);

    let mut first = trainer(small_cfg(5));
    let mut resumed = run(&mut first, &data, Some(2));
    first.save(&path).unwrap();
    let mut second = trainer(small_cfg(5));
    second.load(&path).unwrap();
    assert_eq!(second.step(), 2);
    assert_eq!(second.store, first.store);
    resumed.extend(run(&mut second, &data, None));
    assert_eq!(resumed, trace);
    assert_eq!(second.store, full.store);
}

#[test]
fn checkpoint_layout_and_bitwise_round_trip() {
    let records = vec![
        ("a".to_string(), Tensor::<f32>::new(&[2], vec![1.5, -0.0]).unwrap()),
        ("bb".to_string(), Tensor::<f32>::new(&[1, 1], vec![f32::MIN_POSITIVE]).unwrap()),
    ];
    let bytes = checkpoint::encode(&records);
    assert_eq!(&bytes[..5], MAGIC);
    assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 1);
    assert_eq!(bytes[21], b'a');
    assert_eq!(u64::from_le_bytes(bytes[22..30].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[30..38].try_into().unwrap()), 2);
    assert_eq!(f32::from_le_bytes(bytes[38..42].try_into().unwrap()), 1.5);
    let back = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back.len(), 2);
    for ((n1, t1), (n2, t2)) in records.iter().zip(&back) {
        assert_eq!(n1, n2);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1), bits(t2));
    }
    let (_, store) = DehazeMamba::new(&ModelConfig::micro(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let t = trainer(small_cfg(1));
    let path = dir.path().join("m.dhmb");
    t.save(&path).unwrap();
    let mut loaded = store.clone();
    dehazemamba_core::train::load_params(&path, &mut loaded).unwrap();
    assert_eq!(loaded, t.store);
}

#[test]
fn empty_dataset_is_a_startup_error() {
    let mut t = trainer(small_cfg(2));
    assert!(matches!(t.run(&[], None, |_, _| Ok(())), Err(Error::Data(_))));
}

#[test]
fn non_finite_parameters_abort_with_their_name() {
    let data = dataset(2, 16, 9);
    let mut t = trainer(small_cfg(2));
    let name = "enc1.hpdm.proj.w";
    t.store.by_name_mut(name).unwrap().data_mut()[0] = f32::NAN;
    match t.run(&data, None, |_, _| Ok(())) {
        Err(Error::Numeric(msg)) => assert!(msg.contains(name), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn total_loss_of_identical_pair_is_zero(seed in 0u64..1000, lambda in 0.0f64..2.0) {
        let x = rand_t(&[1, 3, 4, 4], seed);
        let mut g = Graph::new();
        let (a, b) = (g.constant(x.clone()), g.constant(x));
        let terms = total_loss(&mut g, a, b, lambda).unwrap();
        prop_assert_eq!(g.value(terms.total).item(), 0.0);
    }

    #[test]
    fn schedule_is_monotone_with_exact_endpoints(total in 1u64..5000, hi in 1e-5f64..1e-2, ratio in 0.0f64..0.99) {
        let lo = hi * ratio;
        prop_assert_eq!(cosine_lr(0, total, hi, lo), hi);
        prop_assert_eq!(cosine_lr(total, total, hi, lo), lo);
        let mut prev = f64::INFINITY;
        for t in 0..=total.min(400) {
            let lr = cosine_lr(t * total / total.min(400), total, hi, lo);
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adamw_ignores_registration_order(seed in 0u64..1000, lr in 1e-5f64..1e-1) {
        let names = ["x", "y", "z"];
        let values: Vec<Tensor<f32>> = (0..3).map(|i| rand_t(&[2, i + 1], seed * 3 + i as u64).cast()).collect();
        let grads: Vec<Tensor<f32>> = (0..3).map(|i| rand_t(&[2, i + 1], seed * 3 + 100 + i as u64).cast()).collect();
        let mut results = Vec::new();
        for order in [[0, 1, 2], [2, 0, 1]] {
            let mut store = ParamStore::default();
            for &i in &order {
                store.insert(names[i], values[i].clone()).unwrap();
            }
            let g: Vec<_> = order.iter().map(|&i| grads[i].clone()).collect();
            let mut opt = AdamW::new(AdamWConfig::default());
            opt.step(&mut store, &g, lr).unwrap();
            opt.step(&mut store, &g, lr).unwrap();
            results.push(names.map(|n| store.by_name(n).unwrap().clone()));
        }
        prop_assert_eq!(&results[0], &results[1]);
    }
}
