//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines; failures panic with the offending values.
//!
//! The two training-based fixtures (a three-class mimic dataset for the
//! heatmap-quality ordering and a binary mimic dataset for inhibition)
//! are built once and shared across criteria.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use milab::autodiff::{grad_check, Tensor};
use milab::credit::{
    extract_contributions, shapley_enumerate, shapley_fixed_context, ShapleyMode,
};
use milab::eval::{evaluate, EvalOptions, EvalReport};
use milab::metrics::{auroc_binary, patch_pr_curve};
use milab::model::{Composition, MilConfig, MilModel, Pooling};
use milab::synth::{generate, GenConfig, Split};
use milab::train::{split_accuracy, train, TrainConfig};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pass(criterion: u32, name: &str) {
    println!("ACCEPTANCE C{criterion:02} {name}: PASS");
}

fn model_config(
    input_dim: usize,
    num_classes: usize,
    pooling: Pooling,
    composition: Composition,
) -> MilConfig {
    MilConfig {
        input_dim,
        feature_dim: 32,
        attention_hidden: 16,
        predictor_hidden: 32,
        num_classes,
        pooling,
        composition,
        self_attention_heads: 1,
    }
}

fn random_bag(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

const ALL_POOLINGS: [Pooling; 3] = [Pooling::Mean, Pooling::Attention, Pooling::SelfAttention];

// ---- criterion 1: additivity identity --------------------------------------

#[test]
fn c01_additivity_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let pooling = ALL_POOLINGS[(i % 3) as usize];
        let d = 2 + (i as usize % 7);
        let c = 2 + (i as usize % 4);
        let n = 1 + (i as usize * 63) / 99;
        let config = MilConfig {
            input_dim: d,
            feature_dim: 8,
            attention_hidden: 5,
            predictor_hidden: 6,
            num_classes: c,
            pooling,
            composition: Composition::Additive,
            self_attention_heads: 2,
        };
        let model = MilModel::init(config, 1000 + i).unwrap();
        let bag = random_bag(n, d, &mut rng);
        let out = model.forward(&bag).unwrap();
        let contrib = out.contributions.as_ref().unwrap();
        for cls in 0..c {
            let sum: f64 = (0..n).map(|j| contrib.at(j, cls)).sum();
            worst = worst.max((sum - out.logits.data()[cls]).abs());
        }
    }
    assert!(worst <= 1e-9, "additivity identity violated: {worst}");
    pass(1, &format!("additivity identity, max gap {worst:.2e}"));
}

// ---- criterion 2: Shapley equivalence ---------------------------------------

#[test]
fn c02_shapley_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_disc = 0.0f64;
    let mut worst_eff = 0.0f64;

    for (k, &n) in [2usize, 5, 8, 10].iter().enumerate() {
        let pooling = ALL_POOLINGS[k % 3];
        let config = MilConfig {
            input_dim: 4,
            feature_dim: 6,
            attention_hidden: 4,
            predictor_hidden: 5,
            num_classes: 3,
            pooling,
            composition: Composition::Additive,
            self_attention_heads: 1,
        };
        let model = MilModel::init(config, 2000 + k as u64).unwrap();
        let bag = random_bag(n, 4, &mut rng);
        let background = random_bag(16, 4, &mut rng);
        let report =
            shapley_enumerate(&model, &bag, &background, ShapleyMode::FixedContext).unwrap();
        worst_disc = worst_disc.max(report.max_discrepancy.unwrap());
        worst_eff = worst_eff.max(report.efficiency_gap);

        // efficiency in recomputed mode as well
        let rec = shapley_enumerate(&model, &bag, &background, ShapleyMode::Recomputed).unwrap();
        worst_eff = worst_eff.max(rec.efficiency_gap);
    }
    assert!(worst_disc <= 1e-8, "closed-form discrepancy {worst_disc}");
    assert!(worst_eff <= 1e-8, "efficiency gap {worst_eff}");

    // symmetry: identical instances with identical background
    let config = MilConfig {
        input_dim: 4,
        feature_dim: 6,
        attention_hidden: 4,
        predictor_hidden: 5,
        num_classes: 3,
        pooling: Pooling::Attention,
        composition: Composition::Additive,
        self_attention_heads: 1,
    };
    let model = MilModel::init(config, 2099).unwrap();
    let mut rows = vec![vec![0.7, -0.4, 1.1, 0.2]; 2];
    rows.push(vec![-0.9, 0.5, 0.0, 1.3]);
    rows.push(vec![0.1, 0.1, -0.6, -0.2]);
    let bag = Tensor::from_rows(&rows).unwrap();
    let background = Tensor::from_rows(&vec![vec![0.2, -0.1, 0.4, 0.0]; 6]).unwrap();
    for mode in [ShapleyMode::FixedContext, ShapleyMode::Recomputed] {
        let report = shapley_enumerate(&model, &bag, &background, mode).unwrap();
        for cls in 0..3 {
            let gap = (report.phi[cls][0] - report.phi[cls][1]).abs();
            assert!(gap <= 1e-8, "symmetry violated in {mode:?}: {gap}");
        }
    }

    // dummy: an instance scoring exactly the background mean gets φ = 0
    let bag2 = random_bag(5, 4, &mut rng);
    let contribs = extract_contributions(&model, &bag2).unwrap();
    let own = contribs.instance_scores()[3].clone();
    let report = shapley_fixed_context(&contribs, &[own]).unwrap();
    for cls in 0..3 {
        assert!(report.phi[cls][3].abs() <= 1e-8, "dummy axiom violated");
    }

    pass(
        2,
        &format!("Shapley equivalence, worst discrepancy {worst_disc:.2e}, efficiency {worst_eff:.2e}"),
    );
}

// ---- criterion 3: gradient correctness ---------------------------------------

/// Central differences straddle ReLU kinks, so the probe point must be
/// smooth: every ReLU pre-activation has to sit well away from zero.
/// Returns the smallest |pre-activation| across both ReLU layers.
fn min_relu_gap(model: &MilModel, bag: &Tensor) -> f64 {
    use milab::autodiff::Tape;
    let mut gap = f64::INFINITY;
    let mut tape = Tape::new();
    let x = tape.input(bag.clone());
    let w = tape.input(model.featurizer[0].weight.clone());
    let b = tape.input(model.featurizer[0].bias.clone());
    let xm = tape.matmul(x, w).unwrap();
    let pre1 = tape.add_bias(xm, b).unwrap();
    for &v in tape.value(pre1).data() {
        gap = gap.min(v.abs());
    }

    // predictor pre-activation: α-scaled (mixed) features through layer 1
    let mut feats = model.featurize(bag).unwrap();
    if model.config.pooling == Pooling::SelfAttention {
        feats = model.self_attention_mix(&feats).unwrap();
    }
    let alpha = model.forward(bag).unwrap().attention;
    let (attended, pooled) = model.pool(&feats, &alpha).unwrap();
    let head_input = match model.config.composition {
        Composition::Additive => attended,
        Composition::Joint => Tensor::new(vec![1, pooled.numel()], pooled.data().to_vec()).unwrap(),
    };
    let mut tape = Tape::new();
    let h = tape.input(head_input);
    let w = tape.input(model.predictor[0].weight.clone());
    let b = tape.input(model.predictor[0].bias.clone());
    let hm = tape.matmul(h, w).unwrap();
    let pre2 = tape.add_bias(hm, b).unwrap();
    for &v in tape.value(pre2).data() {
        gap = gap.min(v.abs());
    }
    gap
}

#[test]
fn c03_gradient_correctness() {
    let mut worst = 0.0f64;
    for pooling in ALL_POOLINGS {
        for composition in [Composition::Joint, Composition::Additive] {
            let config = MilConfig {
                input_dim: 5,
                feature_dim: 6,
                attention_hidden: 4,
                predictor_hidden: 7,
                num_classes: 3,
                pooling,
                composition,
                self_attention_heads: 2,
            };
            let model = MilModel::init(config, 3000).unwrap();

            // scan for a probe bag where the loss is smooth
            let mut chosen = None;
            for bag_seed in 303..353u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(bag_seed);
                let bag = random_bag(6, 5, &mut rng);
                if min_relu_gap(&model, &bag) > 1e-3 {
                    chosen = Some(bag);
                    break;
                }
            }
            let bag = chosen.expect("no smooth probe bag found in 50 candidates");

            let tensors: Vec<Tensor> =
                model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
            let report = grad_check(
                |tape, vars| {
                    let fwd = model.forward_with_vars(tape, vars, &bag, None)?;
                    tape.cross_entropy(fwd.logits, 1)
                },
                &tensors,
                1e-5,
            )
            .unwrap();
            assert!(
                report.max_rel_error <= 1e-4,
                "{pooling:?}/{composition:?}: rel error {}",
                report.max_rel_error
            );
            worst = worst.max(report.max_rel_error);
        }
    }
    pass(3, &format!("gradients vs finite differences, worst rel error {worst:.2e}"));
}

// ---- criterion 4: permutation invariance ---------------------------------------

#[test]
fn c04_permutation_invariance() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for pooling in ALL_POOLINGS {
        for composition in [Composition::Joint, Composition::Additive] {
            let config = MilConfig {
                input_dim: 5,
                feature_dim: 8,
                attention_hidden: 4,
                predictor_hidden: 6,
                num_classes: 3,
                pooling,
                composition,
                self_attention_heads: 1,
            };
            let model = MilModel::init(config, 4000).unwrap();
            let n = 16;
            let bag = random_bag(n, 5, &mut rng);
            let base = model.forward(&bag).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            for _ in 0..50 {
                perm.shuffle(&mut rng);
                let permuted = Tensor::from_rows(
                    &perm.iter().map(|&i| bag.row(i).to_vec()).collect::<Vec<_>>(),
                )
                .unwrap();
                let out = model.forward(&permuted).unwrap();
                worst = worst.max(base.logits.max_abs_diff(&out.logits));
                if let (Some(c0), Some(c1)) = (&base.contributions, &out.contributions) {
                    for (j, &i) in perm.iter().enumerate() {
                        for cls in 0..3 {
                            worst = worst.max((c1.at(j, cls) - c0.at(i, cls)).abs());
                        }
                    }
                }
            }
        }
    }
    assert!(worst <= 1e-9, "permutation drift {worst}");
    pass(4, &format!("permutation invariance, max drift {worst:.2e}"));
}

// ---- criteria 5: desk-scale benchmark ---------------------------------------

struct Benchmark {
    additive_acc: f64,
    joint_acc: f64,
}

static BENCHMARK: OnceLock<Benchmark> = OnceLock::new();

fn benchmark() -> &'static Benchmark {
    BENCHMARK.get_or_init(|| {
        let gen = GenConfig::default();
        let dataset = generate(&gen).unwrap();
        let tc = TrainConfig::default();
        let mut accs = Vec::new();
        for composition in [Composition::Additive, Composition::Joint] {
            let config = model_config(gen.instance_dim, gen.num_classes, Pooling::Attention, composition);
            let mut model = MilModel::init(config, 7).unwrap();
            train(&mut model, &dataset, &tc).unwrap();
            accs.push(split_accuracy(&model, &dataset, Split::Test, tc.bag_size, 8, 123).unwrap());
        }
        Benchmark {
            additive_acc: accs[0],
            joint_acc: accs[1],
        }
    })
}

#[test]
fn c05_desk_scale_benchmark() {
    let b = benchmark();
    assert!(
        b.additive_acc >= 0.95,
        "additive test accuracy {} < 0.95",
        b.additive_acc
    );
    assert!(b.joint_acc >= 0.95, "joint test accuracy {} < 0.95", b.joint_acc);
    let gap = (b.additive_acc - b.joint_acc).abs();
    assert!(gap <= 0.03, "|additive − joint| accuracy gap {gap} > 0.03");
    pass(
        5,
        &format!(
            "benchmark: additive {:.4}, joint {:.4}, gap {:.4}",
            b.additive_acc, b.joint_acc, gap
        ),
    );
}

// ---- criteria 6 + 7: heatmap quality and linearity ---------------------------

struct MimicFixture {
    workdir: PathBuf,
    report: EvalReport,
}

static MIMIC3: OnceLock<MimicFixture> = OnceLock::new();

/// Three-class dataset with sparse signal and salient mimics, additive
/// attention model trained long enough for the inhibitory structure to
/// develop; evaluation artifacts also emitted through the CLI path.
fn mimic3_fixture() -> &'static MimicFixture {
    MIMIC3.get_or_init(|| {
        let gen = GenConfig {
            signal_fraction: 0.05,
            mimic_fraction: 0.1,
            ..GenConfig::default()
        };
        let dataset = generate(&gen).unwrap();
        let config = model_config(
            gen.instance_dim,
            gen.num_classes,
            Pooling::Attention,
            Composition::Additive,
        );
        let mut model = MilModel::init(config, 7).unwrap();
        let tc = TrainConfig {
            epochs: 120,
            patience: 120,
            val_bags: 8,
            ..TrainConfig::default()
        };
        train(&mut model, &dataset, &tc).unwrap();
        let report = evaluate(&model, &dataset, Split::Test, &EvalOptions::default()).unwrap();

        // CLI-path artifacts for the linearity criterion
        let workdir = tempfile::tempdir().unwrap().keep();
        fs::create_dir_all(workdir.join("data")).unwrap();
        fs::create_dir_all(workdir.join("run")).unwrap();
        milab::dataset_io::save(&dataset, &workdir.join("data")).unwrap();
        milab::checkpoint::save(&model, &workdir.join("run/checkpoint.milab")).unwrap();
        fs::write(
            workdir.join("eval.json"),
            r#"{"dataset_dir": "data", "checkpoint": "run/checkpoint.milab", "split": "test"}"#,
        )
        .unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_milab"))
            .args(["eval", "--config", "eval.json", "--out", "run"])
            .current_dir(&workdir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        MimicFixture { workdir, report }
    })
}

#[test]
fn c06_heatmap_quality_ordering() {
    let fx = mimic3_fixture();
    let additive = fx.report.pr_additive.as_ref().unwrap();
    let attention = fx.report.pr_attention.as_ref().unwrap();
    assert!(
        additive.auprc >= attention.auprc - 0.02,
        "additive AUPRC {} below attention {} − 0.02",
        additive.auprc,
        attention.auprc
    );
    pass(
        6,
        &format!(
            "heatmap AUPRC additive {:.4} vs attention {:.4} (best F1 {:.4} vs {:.4})",
            additive.auprc, attention.auprc, additive.best_f1, attention.best_f1
        ),
    );
}

#[test]
fn c07_linearity_tables() {
    let fx = mimic3_fixture();
    let lin = fs::read_to_string(fx.workdir.join("run/linearity_additive.csv")).unwrap();
    let mut rows = 0usize;
    let mut worst = 0.0f64;
    for line in lin.lines().skip(2) {
        let cols: Vec<&str> = line.split(',').collect();
        let x: f64 = cols[3].parse().unwrap();
        let logit: f64 = cols[4].parse().unwrap();
        worst = worst.max((x - logit).abs());
        rows += 1;
    }
    assert!(rows > 0, "empty additive linearity table");
    assert!(worst <= 1e-9, "additive linearity deviation {worst}");
    // the attention table is emitted for inspection, no relation asserted
    let att = fs::read_to_string(fx.workdir.join("run/linearity_attention.csv")).unwrap();
    assert!(att.lines().count() > 2, "attention linearity table missing");
    pass(
        7,
        &format!("linearity: {rows} additive rows on the identity line, max dev {worst:.2e}"),
    );
}

// ---- criterion 8: metric oracles ---------------------------------------------

fn auroc_bruteforce(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &p in &pos {
        for &n in &neg {
            total += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(total / (pos.len() * neg.len()) as f64)
}

fn auprc_bruteforce(scores: &[f64], truth: &[bool]) -> (f64, f64) {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = truth.iter().filter(|&&t| t).count();
    let (mut auprc, mut best_f1, mut prev_recall) = (0.0, 0.0f64, 0.0);
    for &t in &thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&s, &y) in scores.iter().zip(truth) {
            if s >= t {
                if y {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        if precision + recall > 0.0 {
            best_f1 = best_f1.max(2.0 * precision * recall / (precision + recall));
        }
    }
    (auprc, best_f1)
}

#[test]
fn c08_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..1000 {
        let n = rng.gen_range(2..=100);
        let quantize = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s = rng.gen_range(0.0f64..1.0);
                if quantize {
                    (s * 10.0).round() / 10.0
                } else {
                    s
                }
            })
            .collect();
        let mut truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.35)).collect();
        truth[0] = true;
        if n > 1 {
            truth[1] = false;
        }

        let fast = auroc_binary(&scores, &truth).unwrap();
        let slow = auroc_bruteforce(&scores, &truth).unwrap();
        assert!((fast - slow).abs() <= 1e-12, "case {case}: AUROC {fast} vs {slow}");

        let curve = patch_pr_curve(&scores, &truth).unwrap();
        let (auprc, best_f1) = auprc_bruteforce(&scores, &truth);
        assert!((curve.auprc - auprc).abs() <= 1e-12, "case {case}: AUPRC");
        assert!((curve.best_f1 - best_f1).abs() <= 1e-12, "case {case}: best F1");
    }
    pass(8, "AUROC and AUPRC match brute-force oracles on 1000 cases");
}

// ---- criterion 9: mimic inhibition ---------------------------------------------

static MIMIC2: OnceLock<EvalReport> = OnceLock::new();

/// Binary mimic-bearing dataset, mirroring the metastasis-detection
/// setting where benign look-alikes provide negative evidence.
fn mimic2_report() -> &'static EvalReport {
    MIMIC2.get_or_init(|| {
        let gen = GenConfig {
            num_classes: 2,
            mimic_fraction: 0.1,
            ..GenConfig::default()
        };
        let dataset = generate(&gen).unwrap();
        let config = model_config(
            gen.instance_dim,
            gen.num_classes,
            Pooling::Attention,
            Composition::Additive,
        );
        let mut model = MilModel::init(config, 7).unwrap();
        let tc = TrainConfig {
            epochs: 120,
            patience: 120,
            val_bags: 8,
            ..TrainConfig::default()
        };
        train(&mut model, &dataset, &tc).unwrap();
        evaluate(&model, &dataset, Split::Test, &EvalOptions::default()).unwrap()
    })
}

#[test]
fn c09_mimic_inhibition() {
    let report = mimic2_report();
    let stats = report.mimic_inhibition.as_ref().expect("mimic stats present");
    assert!(stats.slides_with_mimics > 0);
    assert!(
        stats.negative_fraction >= 0.80,
        "mimic mean contribution negative in only {:.1}% of slides",
        100.0 * stats.negative_fraction
    );
    // structural contrast: attention weights cannot express inhibition
    let attention = report.pr_attention.as_ref().unwrap();
    assert!(attention.points.iter().all(|p| p.threshold >= 0.0));
    pass(
        9,
        &format!(
            "mimic inhibition negative in {:.1}% of {} mimic-bearing slides",
            100.0 * stats.negative_fraction,
            stats.slides_with_mimics
        ),
    );
}

// ---- criterion 10: end-to-end determinism ----------------------------------------

fn run_pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    fs::create_dir_all(root.join("data")).unwrap();
    fs::create_dir_all(root.join("run")).unwrap();
    fs::write(
        root.join("gen.json"),
        r#"{"num_slides": 60, "instances_per_slide": 25, "bag_size": 12, "bags_per_slide": 2,
            "instance_dim": 8, "num_classes": 3, "signal_fraction": 0.2, "mimic_fraction": 0.08,
            "class_separation": 4.0, "noise_sigma": 1.0, "seed": 33}"#,
    )
    .unwrap();
    fs::write(
        root.join("train.json"),
        r#"{"dataset_dir": "data",
            "model": {"input_dim": 8, "feature_dim": 16, "attention_hidden": 8,
                      "predictor_hidden": 16, "num_classes": 3,
                      "pooling": "attention", "composition": "additive"},
            "train": {"epochs": 5, "bag_size": 12, "batch_size": 8, "bags_per_slide": 3, "seed": 9}}"#,
    )
    .unwrap();
    fs::write(
        root.join("eval.json"),
        r#"{"dataset_dir": "data", "checkpoint": "run/checkpoint.milab", "split": "test"}"#,
    )
    .unwrap();
    fs::write(
        root.join("explain.json"),
        r#"{"dataset_dir": "data", "checkpoint": "run/checkpoint.milab", "slide_id": 5}"#,
    )
    .unwrap();
    for (cmd, config, out) in [
        ("gen", "gen.json", "data"),
        ("train", "train.json", "run"),
        ("eval", "eval.json", "run"),
        ("explain", "explain.json", "run"),
    ] {
        let output = Command::new(env!("CARGO_BIN_EXE_milab"))
            .args([cmd, "--config", config, "--out", out])
            .current_dir(root)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let mut files = Vec::new();
    for dir in ["data", "run"] {
        let mut entries: Vec<_> = fs::read_dir(root.join(dir))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            let name = format!("{dir}/{}", path.file_name().unwrap().to_string_lossy());
            files.push((name, fs::read(&path).unwrap()));
        }
    }
    files
}

#[test]
fn c10_end_to_end_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files_a = run_pipeline(a.path());
    let files_b = run_pipeline(b.path());
    assert_eq!(files_a.len(), files_b.len());
    assert!(files_a.len() >= 10, "expected full artifact set, got {}", files_a.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in files_a.iter().zip(&files_b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between identical runs");
    }
    pass(
        10,
        &format!("two full pipeline runs byte-identical across {} artifacts", files_a.len()),
    );
}
