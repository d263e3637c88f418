//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers. Run with
//! `cargo test -p manip-harness --test acceptance`.
//!
//! The experiment-level criteria share two multi-seed runs (class-imbalance
//! blobs and the low-data token task) through lazy fixtures, so the suite
//! stays inside its runtime budgets.

use manip_core::augment::{
    augment_discrete_relaxed, harden, sample_gumbel, AugmentParams, ContinuousAugment,
    GumbelConfig, TokenAugment,
};
use manip_core::data::{gen_blobs, subsample_low_data, Splits};
use manip_core::model::{argmax_lowest, ClassifierParams, ModelKind};
use manip_core::reward::{DataReward, Normalization, WeightTable};
use manip_core::tensor::{ParamVector, Tensor};
use manip_core::trainer::{
    augmented_theta_step, baseline_mle_step, baseline_proportion_weights, make_aug_plan,
    meta_grad_augmentation, meta_grad_weighting, ren_weights, train_joint,
    weight_class_coefficient_means, MetaMode, TrainerConfig,
};
use manip_harness::config::{Method, RunConfig};
use manip_harness::experiment::{run_experiment, RunOutput};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

// --- shared experiment fixtures ---------------------------------------------

struct ImbalanceFixture {
    runs: Vec<(usize, RunOutput)>, // (minority count, output)
    configs: Vec<RunConfig>,
    elapsed: Duration,
}

fn imbalance_config(minority: usize, with_ren: bool) -> RunConfig {
    let methods = if with_ren {
        r#"["base", "weight", "ren"]"#
    } else {
        r#"["base", "weight"]"#
    };
    let text = format!(
        r#"
        seed_count = 15
        methods = {methods}
        [data]
        source = "blobs"
        [protocol]
        kind = "imbalanced"
        minority = {minority}
        [model]
        kind = "logistic"
        [trainer]
        theta_lr = 0.1
        phi_lr = 20000.0
        batch_size = 16
        epochs = 10
        "#
    );
    RunConfig::from_toml_str(&text, &format!("imbalance_{minority}")).unwrap()
}

fn imbalance() -> &'static ImbalanceFixture {
    static FIXTURE: OnceLock<ImbalanceFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let mut runs = Vec::new();
        let mut configs = Vec::new();
        for minority in [20usize, 50, 100] {
            let config = imbalance_config(minority, minority == 20);
            let dir = tempfile::tempdir().unwrap();
            let output = run_experiment(&config, dir.path()).unwrap();
            runs.push((minority, output));
            configs.push(config);
        }
        ImbalanceFixture {
            runs,
            configs,
            elapsed: start.elapsed(),
        }
    })
}

fn token_config() -> RunConfig {
    let text = r#"
        seed_count = 15
        methods = ["base", "augment", "augment_frozen"]
        [data]
        source = "tokens"
        pool_per_class = 600
        vocab = 16
        seq_len = 8
        [protocol]
        kind = "low_data"
        train_per_class = 40
        val_per_class = 2
        test_per_class = 500
        [model]
        kind = "mlp"
        hidden = 16
        [trainer]
        theta_lr = 1.0
        batch_size = 4
        epochs = 10
        [augment]
        variant = "token"
        substitutions = 2
        samples_per_original = 3
        phi_lr = 5000.0
    "#;
    RunConfig::from_toml_str(text, "low_data_tokens").unwrap()
}

fn token_run() -> &'static (RunOutput, Duration) {
    static FIXTURE: OnceLock<(RunOutput, Duration)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let output = run_experiment(&token_config(), dir.path()).unwrap();
        (output, start.elapsed())
    })
}

fn mean_of(run: &RunOutput, method: Method) -> f64 {
    run.method_summary(method)
        .unwrap()
        .mean_test_accuracy
        .expect("method has successful seeds")
}

// --- criterion 1 -------------------------------------------------------------

#[test]
fn criterion_01_gradient_oracle() {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let start = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let kind = if i % 2 == 0 {
            ModelKind::Logistic
        } else {
            ModelKind::Mlp { hidden: 8 }
        };
        let (dim, classes, n) = (3, 3, 6);
        let model = ClassifierParams::init(kind, dim, classes, rng.gen()).unwrap();
        let v = model.to_vector();
        let values: Vec<f64> = (0..v.dim()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let model = model
            .with_vector(&ParamVector::from_values(values, v.shapes().to_vec()).unwrap())
            .unwrap();
        let x_values: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::matrix(n, dim, x_values).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();

        let (_, grad) = model.grad_mean_nll(&x, &labels).unwrap();
        let v = model.to_vector();
        let h = 1e-6;
        for j in 0..v.dim() {
            let mut plus = v.values().to_vec();
            plus[j] += h;
            let mut minus = v.values().to_vec();
            minus[j] -= h;
            let lp = model
                .with_vector(&ParamVector::from_values(plus, v.shapes().to_vec()).unwrap())
                .unwrap()
                .mean_nll(&x, &labels)
                .unwrap();
            let lm = model
                .with_vector(&ParamVector::from_values(minus, v.shapes().to_vec()).unwrap())
                .unwrap()
                .mean_nll(&x, &labels)
                .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = rel_err(grad.values()[j], fd);
            worst = worst.max(rel);
            assert!(
                rel <= 1e-5,
                "instance {i} coordinate {j}: reverse-mode {} vs finite difference {fd} (rel {rel})",
                grad.values()[j]
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "criterion 1 (gradient oracle): PASS — 20 instances, worst relative error {worst:.2e}, {elapsed:?}"
    );
}

// --- criterion 2 -------------------------------------------------------------

#[test]
fn criterion_02_weighting_meta_gradient_oracle() {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let start = Instant::now();
    let d = gen_blobs(301, &[80, 80], &[vec![0.0, 0.0], vec![4.0, 0.0]], 1.0).unwrap();
    let splits = subsample_low_data(&d, 301, 30, 8, 20).unwrap();
    let model = ClassifierParams::init(ModelKind::Mlp { hidden: 16 }, 2, 2, 303).unwrap();
    let ids: Vec<u64> = splits.train.ids()[..8].to_vec();
    let x = splits.train.feature_matrix(&ids).unwrap();
    let y = splits.train.labels_for(&ids).unwrap();
    let (vx, vy) = splits.validation.full_matrix().unwrap();
    let lookahead = 0.2;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(305);
    let phis: Vec<(u64, f64)> = ids.iter().map(|&id| (id, rng.gen_range(-0.5..0.5))).collect();
    let table = WeightTable::from_entries(phis.clone(), Normalization::Softmax, false).unwrap();
    let meta = meta_grad_weighting(&model, &x, &y, &ids, &table, &vx, &vy, lookahead).unwrap();

    let zero_sum = meta.iter().sum::<f64>().abs();
    assert!(zero_sum <= 1e-10, "zero-sum violation: {zero_sum}");

    let grads = model.per_example_grads(&x, &y).unwrap();
    let val_after = |phi: &[(u64, f64)]| -> f64 {
        let t = WeightTable::from_entries(phi.iter().copied(), Normalization::Softmax, false)
            .unwrap();
        let c = t.batch_coefficients(&ids).unwrap();
        let mut step = grads[0].zeros_like();
        for (ci, g) in c.iter().zip(&grads) {
            step = step.axpy(*ci, g);
        }
        model
            .with_vector(&model.to_vector().axpy(-lookahead, &step))
            .unwrap()
            .mean_nll(&vx, &vy)
            .unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..ids.len() {
        let mut plus = phis.clone();
        plus[j].1 += h;
        let mut minus = phis.clone();
        minus[j].1 -= h;
        let fd = (val_after(&plus) - val_after(&minus)) / (2.0 * h);
        let rel = rel_err(meta[j], -fd);
        worst = worst.max(rel);
        assert!(rel <= 1e-5, "phi_{j}: meta {} vs -fd {} (rel {rel})", meta[j], -fd);
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "criterion 2 (weighting meta-gradient oracle): PASS — worst rel {worst:.2e}, zero-sum {zero_sum:.2e}, {elapsed:?}"
    );
}

// --- criterion 3 -------------------------------------------------------------

fn augmentation_problem() -> (
    Splits,
    ClassifierParams,
    AugmentParams,
    manip_core::trainer::AugPlan,
    Vec<u64>,
    Tensor,
    Vec<usize>,
) {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let d = gen_blobs(311, &[60, 60], &[vec![0.0, 0.0], vec![4.0, 0.0]], 1.0).unwrap();
    let splits = subsample_low_data(&d, 311, 20, 6, 10).unwrap();
    let model = ClassifierParams::init(ModelKind::Mlp { hidden: 4 }, 2, 2, 313).unwrap();
    let base = ContinuousAugment::init(2, 2, 4, 10.0, 0.1, 315).unwrap();
    let aug = AugmentParams::Continuous(base);
    let v = aug.to_vector();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(317);
    let values: Vec<f64> = (0..v.dim()).map(|_| rng.gen_range(-0.4..0.4)).collect();
    let aug = aug
        .with_vector(&ParamVector::from_values(values, v.shapes().to_vec()).unwrap())
        .unwrap();
    let gumbel = GumbelConfig {
        samples_per_original: 2,
        ..GumbelConfig::default()
    };
    let ids: Vec<u64> = splits.train.ids()[..4].to_vec();
    let plan = make_aug_plan(&aug, &gumbel, &splits.train, &ids, 0, 0, 319).unwrap();
    let (vx, vy) = splits.validation.full_matrix().unwrap();
    (splits, model, aug, plan, ids, vx, vy)
}

#[test]
fn criterion_03_augmentation_meta_gradient_oracle() {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let start = Instant::now();
    let (splits, model, aug, plan, ids, vx, vy) = augmentation_problem();
    let lookahead = 0.2;

    let meta_for = |mode: MetaMode| -> ParamVector {
        let retain = mode == MetaMode::Analytic;
        let (_, mut tape) =
            augmented_theta_step(&model, &splits.train, &ids, &aug, &plan, lookahead, retain)
                .unwrap();
        meta_grad_augmentation(
            &model,
            &splits.train,
            &ids,
            &aug,
            &plan,
            &vx,
            &vy,
            mode,
            lookahead,
            1e-2,
            &mut tape,
        )
        .unwrap()
    };
    let analytic = meta_for(MetaMode::Analytic);
    let hvp = meta_for(MetaMode::HvpFd);
    let cosine = analytic.dot(&hvp) / (analytic.norm() * hvp.norm());
    assert!(cosine >= 0.999, "mode agreement cosine {cosine}");

    // finite differences of the validation loss after the lookahead
    let val_after = |a: &AugmentParams| -> f64 {
        let (looked, _) =
            augmented_theta_step(&model, &splits.train, &ids, a, &plan, lookahead, false).unwrap();
        looked.mean_nll(&vx, &vy).unwrap()
    };
    let v = aug.to_vector();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(321);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let coord = rng.gen_range(0..v.dim());
        let mut plus = v.values().to_vec();
        plus[coord] += h;
        let mut minus = v.values().to_vec();
        minus[coord] -= h;
        let ap = aug
            .with_vector(&ParamVector::from_values(plus, v.shapes().to_vec()).unwrap())
            .unwrap();
        let am = aug
            .with_vector(&ParamVector::from_values(minus, v.shapes().to_vec()).unwrap())
            .unwrap();
        let fd = (val_after(&ap) - val_after(&am)) / (2.0 * h);
        let rel = rel_err(analytic.values()[coord], -fd);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-2,
            "coordinate {coord}: meta {} vs -fd {} (rel {rel})",
            analytic.values()[coord],
            -fd
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "criterion 3 (augmentation meta-gradient oracle): PASS — cosine {cosine:.6}, worst FD rel {worst:.2e}, {elapsed:?}"
    );
}

// --- criterion 4 -------------------------------------------------------------

#[test]
fn criterion_04_reduction_identity() {
    let d = gen_blobs(331, &[60, 60], &[vec![0.0, 0.0], vec![4.0, 0.0]], 1.0).unwrap();
    let splits = subsample_low_data(&d, 331, 20, 4, 10).unwrap();
    let config = TrainerConfig {
        epochs: 3,
        batch_size: 8,
        seed: 333,
        phi_lr: 0.0, // frozen manipulation for the uniform-weight run
        ..TrainerConfig::default()
    };

    // independent plain-MLE oracle loop
    let mut model =
        ClassifierParams::init(ModelKind::Logistic, 2, 2, config.seed).unwrap();
    let mut oracle_losses = Vec::new();
    for epoch in 0..config.epochs {
        let batches =
            manip_core::data::minibatches(&splits.train, config.batch_size, config.seed, epoch as u64);
        let mut acc = 0.0;
        for ids in &batches {
            let x = splits.train.feature_matrix(ids).unwrap();
            let y = splits.train.labels_for(ids).unwrap();
            acc += model.mean_nll(&x, &y).unwrap();
            model = baseline_mle_step(&model, &x, &y, config.theta_lr).unwrap();
        }
        oracle_losses.push(acc / batches.len() as f64);
    }

    let delta_run = train_joint(&config, ModelKind::Logistic, &splits, DataReward::Delta).unwrap();
    let weight_run = train_joint(
        &config,
        ModelKind::Logistic,
        &splits,
        DataReward::Weight(WeightTable::zeros(
            splits.train.ids().iter().copied(),
            Normalization::Softmax,
        )),
    )
    .unwrap();

    let mut worst: f64 = 0.0;
    for (e, &oracle) in oracle_losses.iter().enumerate() {
        let d_delta = (delta_run.reports[e].train_loss - oracle).abs();
        let d_weight = (weight_run.reports[e].train_loss - oracle).abs();
        worst = worst.max(d_delta).max(d_weight);
        assert!(d_delta <= 1e-12, "epoch {e}: delta-reward loss off by {d_delta}");
        assert!(d_weight <= 1e-12, "epoch {e}: uniform-weight loss off by {d_weight}");
        let dv = (delta_run.reports[e].val_accuracy - weight_run.reports[e].val_accuracy).abs();
        assert!(dv <= 1e-12, "epoch {e}: validation accuracy differs by {dv}");
    }
    println!(
        "criterion 4 (reduction identity): PASS — max loss deviation {worst:.2e} over 3 epochs"
    );
}

// --- criteria 5 and 6 ---------------------------------------------------------

#[test]
fn criterion_05_imbalance_direction() {
    let fixture = imbalance();
    let mut improvements = Vec::new();
    for (minority, run) in &fixture.runs {
        let base = mean_of(run, Method::Base);
        let weight = mean_of(run, Method::Weight);
        improvements.push((*minority, (weight - base) * 100.0));
    }
    let at = |m: usize| improvements.iter().find(|(k, _)| *k == m).unwrap().1;
    assert!(
        at(20) >= 5.0,
        "improvement at 20:1000 is {:.2} points, need >= 5",
        at(20)
    );
    assert!(
        at(20) >= at(100),
        "improvement should grow with imbalance: {:.2} at 20:1000 vs {:.2} at 100:1000",
        at(20),
        at(100)
    );
    assert!(
        fixture.elapsed < Duration::from_secs(300),
        "took {:?}",
        fixture.elapsed
    );
    println!(
        "criterion 5 (imbalance direction): PASS — improvements {:.2} / {:.2} / {:.2} points at 20/50/100 : 1000, {:?}",
        at(20),
        at(50),
        at(100),
        fixture.elapsed
    );
}

#[test]
fn criterion_06_minority_upweighting() {
    let fixture = imbalance();
    let (_, run20) = &fixture.runs[0];
    let config = &fixture.configs[0];
    let mut wins = 0;
    let mut total = 0;
    for (seed, outcome) in run20.method_outcomes(Method::Weight) {
        let table = outcome.weight_table.as_ref().expect("weight method keeps its table");
        let splits = config.build_splits(seed).unwrap();
        let means = weight_class_coefficient_means(table, &splits.train, 16, seed).unwrap();
        total += 1;
        if means[0] > means[1] {
            wins += 1;
        }
    }
    assert!(
        wins >= 12 && total == 15,
        "minority upweighted in only {wins}/{total} seeds"
    );
    println!(
        "criterion 6 (minority upweighting): PASS — minority coefficient above majority in {wins}/{total} seeds"
    );
}

/// Companion trend check: maintained weights stay within one point of the
/// per-step re-estimation baseline on 20:1000.
#[test]
fn maintained_weights_track_reestimation_baseline() {
    let fixture = imbalance();
    let (_, run20) = &fixture.runs[0];
    let weight = mean_of(run20, Method::Weight);
    let ren = mean_of(run20, Method::Ren);
    assert!(
        weight >= ren - 0.01,
        "weight {:.4} fell more than a point behind re-estimation {:.4}",
        weight,
        ren
    );
    println!(
        "trend (maintained vs re-estimated weights): PASS — {:.2} vs {:.2}",
        weight * 100.0,
        ren * 100.0
    );
}

// --- criterion 7 -------------------------------------------------------------

#[test]
fn criterion_07_low_data_augmentation_direction() {
    let (run, elapsed) = token_run();
    let base = mean_of(run, Method::Base);
    let augment = mean_of(run, Method::Augment);
    let frozen = mean_of(run, Method::AugmentFrozen);
    assert!(
        (augment - base) * 100.0 >= 2.0,
        "learned augmentation gained only {:.2} points over no augmentation",
        (augment - base) * 100.0
    );
    assert!(
        augment >= frozen - 0.005,
        "learned augmentation {:.4} fell more than half a point behind frozen {:.4}",
        augment,
        frozen
    );
    assert!(*elapsed < Duration::from_secs(600), "took {elapsed:?}");
    println!(
        "criterion 7 (low-data augmentation direction): PASS — base {:.2}, frozen {:.2}, learned {:.2}, {:?}",
        base * 100.0,
        frozen * 100.0,
        augment * 100.0,
        elapsed
    );
}

// --- criterion 8 -------------------------------------------------------------

#[test]
fn criterion_08_gumbel_softmax_properties() {
    use manip_core::rng;
    let aug = TokenAugment::init(2, 16).unwrap();
    // randomized logits so the argmax check is nontrivial
    let aug = match AugmentParams::Token(aug)
        .with_vector(&{
            use rand::Rng;
            let v = AugmentParams::Token(TokenAugment::init(2, 16).unwrap()).to_vector();
            let mut rng = rng::rng_for(341, 1);
            ParamVector::from_values(
                (0..v.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                v.shapes().to_vec(),
            )
            .unwrap()
        })
        .unwrap()
    {
        AugmentParams::Token(t) => t,
        _ => unreachable!(),
    };
    let tokens: Vec<u32> = vec![3, 9, 1, 14, 7, 0];
    let positions = [1usize, 4];
    let mut grng = rng::rng_for(343, 2);
    let noise = sample_gumbel(&mut grng, positions.len(), 16);

    // rows sum to one
    let relaxed = augment_discrete_relaxed(&aug, &tokens, 1, &positions, &noise, 1.0).unwrap();
    for i in 0..tokens.len() {
        let s: f64 = relaxed.row(i).iter().sum();
        assert!((s - 1.0).abs() <= 1e-9, "row {i} sums to {s}");
    }

    // sharpness grows monotonically as the temperature falls
    let mut last = 0.0;
    let mut sharpness = Vec::new();
    for tau in [1.0, 0.5, 0.1, 0.01] {
        let out = augment_discrete_relaxed(&aug, &tokens, 1, &positions, &noise, tau).unwrap();
        let mean_max: f64 = positions
            .iter()
            .map(|&p| out.row(p).iter().cloned().fold(f64::MIN, f64::max))
            .sum::<f64>()
            / positions.len() as f64;
        assert!(mean_max >= last, "sharpness fell to {mean_max} at tau {tau}");
        sharpness.push(mean_max);
        last = mean_max;
    }

    // the zero-temperature limit hardens to the argmax of the perturbed logits
    let out = augment_discrete_relaxed(&aug, &tokens, 1, &positions, &noise, 1e-6).unwrap();
    let hard = harden(&out);
    for (j, &p) in positions.iter().enumerate() {
        let mut perturbed = aug.logit_row(1, tokens[p]).to_vec();
        for (x, g) in perturbed.iter_mut().zip(noise.row(j)) {
            *x += g;
        }
        assert_eq!(
            hard[p] as usize,
            argmax_lowest(&perturbed),
            "position {p} did not harden to the perturbed argmax"
        );
    }
    println!(
        "criterion 8 (gumbel-softmax properties): PASS — sharpness along tau {:?}",
        sharpness.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()
    );
}

// --- criterion 9 -------------------------------------------------------------

#[test]
fn criterion_09_baseline_correctness() {
    // proportion weighting on balanced classes degenerates to uniform
    let d = gen_blobs(351, &[40, 40], &[vec![0.0, 0.0], vec![4.0, 0.0]], 1.0).unwrap();
    let table = baseline_proportion_weights(&d);
    let ids: Vec<u64> = d.ids()[..16].to_vec();
    let coeffs = table.batch_coefficients(&ids).unwrap();
    for &c in &coeffs {
        assert!(
            (c - 1.0 / 16.0).abs() <= 1e-15,
            "balanced proportion coefficient {c} not uniform"
        );
    }
    // re-estimation with no helpful example falls back to uniform
    let w = ren_weights(&[-0.3, -1.0, 0.0, -2.5]);
    assert_eq!(w, vec![0.25; 4]);
    println!("criterion 9 (baseline correctness): PASS — uniform coefficients in both degenerate cases");
}

// --- criterion 10 --------------------------------------------------------------

#[test]
fn criterion_10_reproducibility() {
    let text = r#"
        seeds = [3, 5]
        methods = ["base", "weight", "proportion"]
        [data]
        source = "blobs"
        pool_per_class = 400
        [protocol]
        kind = "imbalanced"
        minority = 20
        majority = 200
        val_per_class = 10
        test_per_class = 100
        [model]
        kind = "logistic"
        [trainer]
        epochs = 3
        phi_lr = 100.0
    "#;
    let config = RunConfig::from_toml_str(text, "repro").unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_experiment(&config, d1.path()).unwrap();
    run_experiment(&config, d2.path()).unwrap();
    for file in ["metrics.jsonl", "summary.json"] {
        let a = std::fs::read(d1.path().join(file)).unwrap();
        let b = std::fs::read(d2.path().join(file)).unwrap();
        assert!(!a.is_empty(), "{file} is empty");
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    // the weight artifacts are part of the deterministic surface too
    let wa = std::fs::read(d1.path().join("weights_weight_3.tsv")).unwrap();
    let wb = std::fs::read(d2.path().join("weights_weight_3.tsv")).unwrap();
    assert_eq!(wa, wb);
    println!("criterion 10 (reproducibility): PASS — metrics, summary and weight dumps byte-identical");
}
