//! Slide- and patch-level evaluation: accuracy and macro AUROC from
//! majority votes, heatmap-quality PR curves for the additive-contribution
//! and attention extractors, linearity tables, and mimic inhibition.

use serde::{Deserialize, Serialize};

use crate::credit::contribution_map_from_nc;
use crate::error::{Error, Result};
use crate::metrics::{auroc_macro, patch_pr_curve, MacroAuroc, PrCurve};
use crate::model::{Composition, MilModel, Pooling};
use crate::synth::{partition_bags, random_partition, Bag, InstanceLabel, SlideDataset, Split};
use crate::train::infer_slide;

fn default_num_bags() -> usize {
    8
}
fn default_seed() -> u64 {
    42
}
fn default_score_passes() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Bag size for majority-vote inference; defaults to the generator's.
    #[serde(default)]
    pub bag_size: Option<usize>,
    #[serde(default = "default_num_bags")]
    pub num_bags: usize,
    /// Independent bag partitions a patch score is averaged over.
    #[serde(default = "default_score_passes")]
    pub score_passes: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// One (x, logit) pair of a linearity table.
#[derive(Debug, Clone, Serialize)]
pub struct LinearityRow {
    pub slide_id: u32,
    pub bag_index: usize,
    pub class: usize,
    /// Additive table: sum of contributions. Attention table: median of
    /// the top-10% attention weights in the bag.
    pub x: f64,
    pub logit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MimicStats {
    pub slides_with_mimics: usize,
    /// Fraction of mimic-bearing slides whose mean raw contribution toward
    /// the mimicked class is negative.
    pub negative_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub num_slides: usize,
    pub accuracy: f64,
    pub auroc: MacroAuroc,
    /// Positive patches (own-class signal) across the evaluated split.
    pub patch_positives: usize,
    /// PR of sigmoid-bounded predicted-class contributions; additive only.
    pub pr_additive: Option<PrCurve>,
    /// PR of per-slide min-max normalized attention weights.
    pub pr_attention: Option<PrCurve>,
    /// Per-class PR over class-c bounded contributions vs class-c signal.
    pub per_class_pr: Vec<Option<PrCurve>>,
    pub linearity_additive: Vec<LinearityRow>,
    pub linearity_attention: Vec<LinearityRow>,
    pub mimic_inhibition: Option<MimicStats>,
}

/// Median of the top `fraction` of values (at least one).
pub fn median_top_fraction(values: &[f64], fraction: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((values.len() as f64 * fraction).floor() as usize).max(1);
    let top = &sorted[..k];
    if k % 2 == 1 {
        top[k / 2]
    } else {
        0.5 * (top[k / 2 - 1] + top[k / 2])
    }
}

/// Linearity tables over a set of bags: per bag and class, the additive
/// table pairs Σ contributions with the logit (identical by construction),
/// the attention table pairs the median top-10% attention weight with the
/// logit. Emitted for plotting; no relation is asserted here.
pub fn linearity_report(
    model: &MilModel,
    bags: &[Bag],
) -> Result<(Vec<LinearityRow>, Vec<LinearityRow>)> {
    let mut additive = Vec::new();
    let mut attention = Vec::new();
    for (bag_index, bag) in bags.iter().enumerate() {
        let out = model.forward(&bag.instances)?;
        if let Some(per_instance) = &out.contributions {
            for class in 0..model.config.num_classes {
                let sum: f64 = (0..per_instance.shape()[0])
                    .map(|i| per_instance.at(i, class))
                    .sum();
                additive.push(LinearityRow {
                    slide_id: bag.slide_id,
                    bag_index,
                    class,
                    x: sum,
                    logit: out.logits.data()[class],
                });
            }
        }
        if model.config.pooling != Pooling::Mean {
            let med = median_top_fraction(&out.attention, 0.10);
            for class in 0..model.config.num_classes {
                attention.push(LinearityRow {
                    slide_id: bag.slide_id,
                    bag_index,
                    class,
                    x: med,
                    logit: out.logits.data()[class],
                });
            }
        }
    }
    Ok((additive, attention))
}

/// Evaluate a model over one dataset split.
pub fn evaluate(
    model: &MilModel,
    dataset: &SlideDataset,
    split: Split,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if model.config.input_dim != dataset.config.instance_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match dataset instance_dim {}",
            model.config.input_dim, dataset.config.instance_dim
        )));
    }
    if model.config.num_classes != dataset.config.num_classes {
        return Err(Error::Config(format!(
            "model num_classes {} does not match dataset num_classes {}",
            model.config.num_classes, dataset.config.num_classes
        )));
    }
    let ids = dataset.split_ids(split);
    if ids.is_empty() {
        return Err(Error::Config(format!("split {split:?} is empty")));
    }
    let bag_size = opts.bag_size.unwrap_or(dataset.config.bag_size);
    let c = model.config.num_classes;
    let additive = model.config.composition == Composition::Additive;
    let has_attention = model.config.pooling != Pooling::Mean;

    // Slide-level majority votes.
    let mut labels = Vec::with_capacity(ids.len());
    let mut predicted = Vec::with_capacity(ids.len());
    let mut vote_scores = Vec::with_capacity(ids.len());
    for &id in ids {
        let slide = dataset.slide(id)?;
        let inf = infer_slide(model, slide, bag_size, opts.num_bags, opts.seed)?;
        labels.push(slide.label);
        predicted.push(inf.label);
        vote_scores.push(inf.class_scores);
    }
    let correct = labels
        .iter()
        .zip(&predicted)
        .filter(|(a, b)| a == b)
        .count();
    let accuracy = correct as f64 / ids.len() as f64;
    let auroc = auroc_macro(&vote_scores, &labels, c)?;

    // Patch-level scores over the canonical partition bags.
    let mut additive_scores: Vec<f64> = Vec::new();
    let mut attention_scores: Vec<f64> = Vec::new();
    let mut truth: Vec<bool> = Vec::new();
    let mut class_scores: Vec<Vec<f64>> = vec![Vec::new(); c];
    let mut class_truth: Vec<Vec<bool>> = vec![Vec::new(); c];
    let mut linearity_additive = Vec::new();
    let mut linearity_attention = Vec::new();
    let mut mimic_slides = 0usize;
    let mut mimic_negative = 0usize;

    let passes = opts.score_passes.max(1);
    for (k, &id) in ids.iter().enumerate() {
        let slide = dataset.slide(id)?;
        let n = slide.num_instances();

        // Linearity tables come from the canonical partition.
        let canonical = partition_bags(slide)?;
        let (lin_add, lin_att) = linearity_report(model, &canonical)?;
        linearity_additive.extend(lin_add);
        linearity_attention.extend(lin_att);

        // Patch scores: average attention and raw contributions over
        // several independent bag partitions, indexed by instance id.
        let parts = n.div_ceil(bag_size);
        let mut alpha_sum = vec![0.0f64; n];
        let mut contrib_sum = vec![vec![0.0f64; n]; c];
        for pass in 0..passes {
            let pass_seed = opts
                .seed
                .wrapping_add((pass as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for bag in random_partition(slide, parts, pass_seed)? {
                let out = model.forward(&bag.instances)?;
                let map = match &out.contributions {
                    Some(per_instance) => Some(contribution_map_from_nc(per_instance, c)?),
                    None => None,
                };
                for (local, &global) in bag.instance_ids.iter().enumerate() {
                    alpha_sum[global as usize] += out.attention[local];
                    if let Some(map) = &map {
                        for cls in 0..c {
                            contrib_sum[cls][global as usize] += map.values.at(cls, local);
                        }
                    }
                }
            }
        }
        let scale = 1.0 / passes as f64;
        let alpha_avg: Vec<f64> = alpha_sum.iter().map(|v| v * scale).collect();

        let mut mimic_sum = 0.0f64;
        let mut mimic_count = 0usize;
        if additive {
            let pred = predicted[k];
            for i in 0..n {
                let raw_pred = contrib_sum[pred][i] * scale;
                additive_scores.push(crate::autodiff::stable_sigmoid(raw_pred));
                for cls in 0..c {
                    class_scores[cls].push(crate::autodiff::stable_sigmoid(contrib_sum[cls][i] * scale));
                }
                if let InstanceLabel::Mimic(m) = slide.instance_labels[i] {
                    mimic_sum += contrib_sum[m][i] * scale;
                    mimic_count += 1;
                }
            }
        }
        if has_attention {
            let min = alpha_avg.iter().copied().fold(f64::INFINITY, f64::min);
            let max = alpha_avg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &a in &alpha_avg {
                attention_scores.push(if max > min { (a - min) / (max - min) } else { 0.5 });
            }
        }
        for label in &slide.instance_labels {
            truth.push(*label == InstanceLabel::Signal(slide.label));
            for cls in 0..c {
                class_truth[cls].push(*label == InstanceLabel::Signal(cls));
            }
        }

        if mimic_count > 0 {
            mimic_slides += 1;
            if mimic_sum / (mimic_count as f64) < 0.0 {
                mimic_negative += 1;
            }
        }
    }

    let patch_positives = truth.iter().filter(|&&t| t).count();
    let pr_additive = if additive {
        Some(patch_pr_curve(&additive_scores, &truth)?)
    } else {
        None
    };
    let pr_attention = if has_attention {
        Some(patch_pr_curve(&attention_scores, &truth)?)
    } else {
        None
    };
    let per_class_pr = if additive {
        (0..c)
            .map(|cls| patch_pr_curve(&class_scores[cls], &class_truth[cls]).ok())
            .collect()
    } else {
        vec![None; c]
    };
    let mimic_inhibition = if mimic_slides > 0 {
        Some(MimicStats {
            slides_with_mimics: mimic_slides,
            negative_fraction: mimic_negative as f64 / mimic_slides as f64,
        })
    } else {
        None
    };

    Ok(EvalReport {
        split,
        num_slides: ids.len(),
        accuracy,
        auroc,
        patch_positives,
        pr_additive,
        pr_attention,
        per_class_pr,
        linearity_additive,
        linearity_attention,
        mimic_inhibition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MilConfig;
    use crate::synth::{generate, GenConfig};

    fn dataset() -> SlideDataset {
        generate(&GenConfig {
            num_slides: 18,
            instances_per_slide: 16,
            bag_size: 8,
            bags_per_slide: 2,
            instance_dim: 6,
            num_classes: 3,
            signal_fraction: 0.25,
            mimic_fraction: 0.0,
            mimic_slide_fraction: 1.0,
            mixed_fraction: 0.0,
            class_separation: 5.0,
            noise_sigma: 0.5,
            split_fractions: [0.34, 0.33, 0.33],
            seed: 23,
        })
        .unwrap()
    }

    fn model(pooling: Pooling, composition: Composition) -> MilModel {
        MilModel::init(
            MilConfig {
                input_dim: 6,
                feature_dim: 8,
                attention_hidden: 4,
                predictor_hidden: 8,
                num_classes: 3,
                pooling,
                composition,
                self_attention_heads: 1,
            },
            31,
        )
        .unwrap()
    }

    #[test]
    fn median_top_fraction_examples() {
        // N=10 → the top-10% set is the single largest value
        let v: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(median_top_fraction(&v, 0.10), 10.0);
        // N=3 → still at least one value
        assert_eq!(median_top_fraction(&[3.0, 1.0, 2.0], 0.10), 3.0);
        // even top set → mean of the middle two
        let v2: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_eq!(median_top_fraction(&v2, 0.10), 19.5);
    }

    #[test]
    fn additive_linearity_is_exact() {
        let ds = dataset();
        let m = model(Pooling::Attention, Composition::Additive);
        let report = evaluate(&m, &ds, Split::Test, &EvalOptions::default()).unwrap();
        assert!(!report.linearity_additive.is_empty());
        for row in &report.linearity_additive {
            assert!((row.x - row.logit).abs() <= 1e-9, "bag {:?}", row.bag_index);
        }
        assert!(!report.linearity_attention.is_empty());
        assert!(report.pr_additive.is_some());
        assert!(report.pr_attention.is_some());
    }

    #[test]
    fn joint_model_reports_attention_only() {
        let ds = dataset();
        let m = model(Pooling::Attention, Composition::Joint);
        let report = evaluate(&m, &ds, Split::Test, &EvalOptions::default()).unwrap();
        assert!(report.pr_additive.is_none());
        assert!(report.linearity_additive.is_empty());
        assert!(report.pr_attention.is_some());
        assert!(report.mimic_inhibition.is_none());
    }

    #[test]
    fn mean_pooling_additive_reports_contributions_only() {
        let ds = dataset();
        let m = model(Pooling::Mean, Composition::Additive);
        let report = evaluate(&m, &ds, Split::Test, &EvalOptions::default()).unwrap();
        assert!(report.pr_additive.is_some());
        assert!(report.pr_attention.is_none());
        assert!(report.linearity_attention.is_empty());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let ds = dataset();
        let m = MilModel::init(
            MilConfig {
                input_dim: 5,
                feature_dim: 8,
                attention_hidden: 4,
                predictor_hidden: 8,
                num_classes: 3,
                pooling: Pooling::Attention,
                composition: Composition::Additive,
                self_attention_heads: 1,
            },
            1,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&m, &ds, Split::Test, &EvalOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn untrained_accuracy_is_near_chance() {
        let ds = dataset();
        let m = model(Pooling::Attention, Composition::Additive);
        let report = evaluate(&m, &ds, Split::Test, &EvalOptions::default()).unwrap();
        assert!((report.accuracy - 1.0 / 3.0).abs() <= 0.35, "{}", report.accuracy);
    }

    #[test]
    fn mimic_stats_present_when_mimics_exist() {
        let cfg = GenConfig {
            num_slides: 12,
            instances_per_slide: 16,
            bag_size: 8,
            bags_per_slide: 2,
            instance_dim: 8,
            num_classes: 3,
            signal_fraction: 0.25,
            mimic_fraction: 0.15,
            mimic_slide_fraction: 1.0,
            mixed_fraction: 0.0,
            class_separation: 5.0,
            noise_sigma: 0.5,
            split_fractions: [0.34, 0.33, 0.33],
            seed: 29,
        };
        cfg.validate().unwrap();
        let ds = generate(&cfg).unwrap();
        let m = MilModel::init(
            MilConfig {
                input_dim: 8,
                feature_dim: 8,
                attention_hidden: 4,
                predictor_hidden: 8,
                num_classes: 3,
                pooling: Pooling::Attention,
                composition: Composition::Additive,
                self_attention_heads: 1,
            },
            3,
        )
        .unwrap();
        let report = evaluate(&m, &ds, Split::Test, &EvalOptions::default()).unwrap();
        let stats = report.mimic_inhibition.unwrap();
        assert!(stats.slides_with_mimics > 0);
        assert!((0.0..=1.0).contains(&stats.negative_fraction));
    }
}
