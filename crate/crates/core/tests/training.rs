mod common;

use memsplit::archspace::{ArchFamily, MlpShape};
use memsplit::datagen::{self, DatasetDescriptor, Generator, Samples};
use memsplit::tinytrain::{self, Hyperparams, Mode, TrainedMember};
use proptest::prelude::*;

#[test]
fn analytic_gradients_match_central_differences() {
    let report = common::gradient_check(120, 11);
    assert!(report.checked > 1000, "{report:?}");
    assert!(report.worst_rel_err < common::FD_REL_TOL, "{report:?}");
}

fn blobs(desc: &str) -> datagen::DatasetSplit {
    datagen::generate(&desc.parse::<DatasetDescriptor>().unwrap()).unwrap()
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let data = blobs("gaussian-blobs:classes=3,dim=4,train=90,val=0,test=30");
    let member = TrainedMember::from_sizes(&[4, 5, 6, 3], 3);
    let hp = Hyperparams {
        lr: 0.0,
        epochs: 3,
        batch_size: 16,
        ..Hyperparams::default()
    };
    let trained = tinytrain::train(member.clone(), &data.train, &data.val, &hp).unwrap();
    assert_eq!(trained.layers, member.layers);
    assert_eq!(trained.trace.len(), 3);
}

#[test]
fn separable_blobs_are_learned() {
    let desc = DatasetDescriptor {
        generator: Generator::GaussianBlobs,
        classes: 2,
        dim: 2,
        noise: 0.05,
        clusters: 1,
        train: 400,
        val: 0,
        test: 200,
        seed: 5,
    };
    let data = datagen::generate(&desc).unwrap();
    let family = ArchFamily::mlp(&MlpShape {
        input_dim: 2,
        classes: 2,
        ..MlpShape::default()
    })
    .unwrap();
    let member = tinytrain::init_network(&family, 4, 9).unwrap();
    let hp = Hyperparams {
        epochs: 30,
        batch_size: 32,
        ..Hyperparams::default()
    };
    let trained = tinytrain::train(member, &data.train, &data.val, &hp).unwrap();
    let probs = trained.forward(&data.train.x, Mode::Eval).unwrap();
    let acc = tinytrain::accuracy(&probs, &data.train.y, 2);
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn weight_decay_gradient_is_exactly_wd_theta_and_shrinks() {
    let member = TrainedMember::from_sizes(&[3, 4, 2], 21);
    let x = vec![0.3, -0.2, 0.9, 1.1, 0.4, -0.7];
    let y = vec![0, 1];
    let plain = Hyperparams::default();
    let decayed = Hyperparams {
        weight_decay: 0.05,
        ..Hyperparams::default()
    };
    let (_, g0) = member.loss_and_grad(&x, &y, &plain, Mode::Eval).unwrap();
    let (_, g1) = member.loss_and_grad(&x, &y, &decayed, Mode::Eval).unwrap();
    let theta: Vec<f64> = member.params().copied().collect();
    let diff: Vec<f64> = g1
        .iter()
        .zip(&g0)
        .flat_map(|(a, b)| a.params().zip(b.params()).map(|(p, q)| p - q).collect::<Vec<_>>())
        .collect();
    for (d, t) in diff.iter().zip(&theta) {
        assert!((d - 0.05 * t).abs() < 1e-12);
    }
    // A step along the decay term alone.
    let before = member.squared_norm();
    let mut stepped = member.clone();
    for (p, d) in stepped.params_mut().zip(&diff) {
        *p -= 0.1 * d;
    }
    assert!(stepped.squared_norm() < before);

    // End to end, decay leaves smaller weights than no decay.
    let data = blobs("gaussian-blobs:classes=2,dim=3,train=64,val=0,test=8");
    let hp = |wd| Hyperparams {
        weight_decay: wd,
        epochs: 5,
        batch_size: 16,
        ..Hyperparams::default()
    };
    let a = tinytrain::train(member.clone(), &data.train, &data.val, &hp(0.0)).unwrap();
    let b = tinytrain::train(member, &data.train, &data.val, &hp(0.5)).unwrap();
    assert!(b.squared_norm() < a.squared_norm());
}

#[test]
fn learning_rate_is_non_increasing_and_hits_the_floor() {
    let hp = Hyperparams::default();
    let lrs: Vec<f64> = (0..hp.epochs).map(|e| hp.schedule.lr_at(hp.lr, e, hp.epochs)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(lrs[0], hp.lr);
    assert_eq!(hp.schedule.boundaries(60), (30, 54));
    assert!((lrs[54] - hp.lr / 100.0).abs() < 1e-15);
    assert!((lrs[59] - hp.lr / 100.0).abs() < 1e-15);
    assert_eq!(lrs[29], hp.lr);
}

#[test]
fn training_is_deterministic_under_parallel_scheduling() {
    use rayon::prelude::*;
    let data = blobs("gaussian-blobs:classes=3,dim=4,train=120,val=30,test=30");
    let hp = Hyperparams {
        epochs: 4,
        batch_size: 32,
        dropout: 0.2,
        seed: 77,
        ..Hyperparams::default()
    };
    let runs: Vec<TrainedMember> = (0..4)
        .into_par_iter()
        .map(|_| tinytrain::train(TrainedMember::from_sizes(&[4, 6, 12, 3], 5), &data.train, &data.val, &hp).unwrap())
        .collect();
    assert!(runs.windows(2).all(|w| w[0].layers == w[1].layers));
}

#[test]
fn divergence_reports_the_epoch() {
    let data = blobs("gaussian-blobs:classes=2,dim=4,train=64,val=0,test=8");
    let hp = Hyperparams {
        lr: 1e9,
        epochs: 5,
        batch_size: 8,
        ..Hyperparams::default()
    };
    match tinytrain::train(TrainedMember::from_sizes(&[4, 8, 16, 2], 1), &data.train, &data.val, &hp) {
        Err(memsplit::Error::Diverged { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {:?}", other.map(|m| m.trace)),
    }
}

#[test]
fn member_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs("gaussian-blobs:classes=2,dim=3,train=32,val=8,test=8");
    let hp = Hyperparams {
        epochs: 2,
        batch_size: 8,
        ..Hyperparams::default()
    };
    let family = ArchFamily::mlp(&MlpShape {
        input_dim: 3,
        classes: 2,
        ..MlpShape::default()
    })
    .unwrap();
    let m = tinytrain::train(tinytrain::init_network(&family, 3, 4).unwrap(), &data.train, &data.val, &hp).unwrap();
    m.save(dir.path(), "m0").unwrap();
    let back = TrainedMember::load(dir.path(), "m0").unwrap();
    assert_eq!(back, m);
}

/// Bayes accuracy of two equiprobable isotropic Gaussians in the plane,
/// by midpoint quadrature of `max_c p(c) p(x | c)`.
fn bayes_accuracy_2d(centers: &[f64], sigma: f64) -> f64 {
    let (lo_x, hi_x) = (centers[0].min(centers[2]) - 8.0 * sigma, centers[0].max(centers[2]) + 8.0 * sigma);
    let (lo_y, hi_y) = (centers[1].min(centers[3]) - 8.0 * sigma, centers[1].max(centers[3]) + 8.0 * sigma);
    let n = 1200;
    let (dx, dy) = ((hi_x - lo_x) / n as f64, (hi_y - lo_y) / n as f64);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let density = |x: f64, y: f64, c: usize| {
        let (mx, my) = (centers[2 * c], centers[2 * c + 1]);
        norm * (-((x - mx).powi(2) + (y - my).powi(2)) / (2.0 * sigma * sigma)).exp()
    };
    let mut total = 0.0;
    for i in 0..n {
        let x = lo_x + (i as f64 + 0.5) * dx;
        for j in 0..n {
            let y = lo_y + (j as f64 + 0.5) * dy;
            total += 0.5 * density(x, y, 0).max(density(x, y, 1));
        }
    }
    total * dx * dy
}

#[test]
fn bayes_accuracy_bounds_a_trained_model() {
    let desc = DatasetDescriptor {
        generator: Generator::GaussianBlobs,
        classes: 2,
        dim: 2,
        noise: 0.9,
        clusters: 1,
        train: 2000,
        val: 0,
        test: 4000,
        seed: 3,
    };
    let centers = desc.centers();
    let bayes = bayes_accuracy_2d(&centers, desc.noise);
    // Closed form for two equal spherical Gaussians: Phi(d / (2 sigma)).
    let d = ((centers[0] - centers[2]).powi(2) + (centers[1] - centers[3]).powi(2)).sqrt();
    let closed = statrs::function::erf::erfc(-(d / (2.0 * desc.noise)) / std::f64::consts::SQRT_2) / 2.0;
    assert!((bayes - closed).abs() < 1e-6, "{bayes} vs {closed}");

    let data = datagen::generate(&desc).unwrap();
    let family = ArchFamily::mlp(&MlpShape {
        input_dim: 2,
        classes: 2,
        ..MlpShape::default()
    })
    .unwrap();
    let hp = Hyperparams {
        epochs: 20,
        ..Hyperparams::default()
    };
    let m = tinytrain::train(tinytrain::init_network(&family, 16, 1).unwrap(), &data.train, &data.val, &hp).unwrap();
    let acc = tinytrain::accuracy(&m.forward(&data.test.x, Mode::Eval).unwrap(), &data.test.y, 2);
    let slack = 3.0 * (bayes * (1.0 - bayes) / data.test.len() as f64).sqrt();
    assert!(acc <= bayes + slack, "accuracy {acc} exceeds Bayes {bayes} + {slack}");
    assert!(acc >= bayes - 0.05, "accuracy {acc} far below Bayes {bayes}");
}

fn arb_samples() -> impl Strategy<Value = (Vec<usize>, Samples)> {
    (1usize..5, 2usize..5, 1usize..20).prop_flat_map(|(dim, classes, rows)| {
        (
            prop::collection::vec(1usize..6, 1..3),
            prop::collection::vec(-3.0f64..3.0, rows * dim),
            prop::collection::vec(0..classes, rows),
        )
            .prop_map(move |(hidden, x, y)| {
                let mut sizes = vec![dim];
                sizes.extend(hidden);
                sizes.push(classes);
                (sizes, Samples { dim, classes, x, y })
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_rows_are_distributions((sizes, s) in arb_samples(), seed in any::<u64>()) {
        let m = TrainedMember::from_sizes(&sizes, seed);
        let p = m.forward(&s.x, Mode::Eval).unwrap();
        for row in p.chunks(s.classes) {
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let (loss, _) = m.loss_and_grad(&s.x, &s.y, &Hyperparams::default(), Mode::Eval).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }
}
