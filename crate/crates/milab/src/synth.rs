//! Synthetic slide and bag generator with planted instance-level ground
//! truth, so patch-level heatmap metrics stay computable.
//!
//! Instances are Gaussian feature vectors: background at the origin,
//! class-c signal at a mean of norm `class_separation` on axis c, and
//! mimics near a signal mean but offset along a disjoint axis — mimics
//! appear only in slides NOT labeled with the mimicked class, providing
//! negative evidence. Signal occupies a small fraction of each slide and
//! is clustered on the coordinate raster, so heatmaps have localized foci.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Ground-truth role of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceLabel {
    Background,
    /// Planted signal for the given class.
    Signal(usize),
    /// Look-alike of the given class's signal, present only in slides of
    /// other labels.
    Mimic(usize),
}

impl InstanceLabel {
    pub fn as_string(&self) -> String {
        match self {
            InstanceLabel::Background => "background".to_string(),
            InstanceLabel::Signal(c) => format!("signal_{c}"),
            InstanceLabel::Mimic(c) => format!("mimic_{c}"),
        }
    }

    pub fn parse(s: &str) -> Option<InstanceLabel> {
        if s == "background" {
            return Some(InstanceLabel::Background);
        }
        if let Some(c) = s.strip_prefix("signal_") {
            return c.parse().ok().map(InstanceLabel::Signal);
        }
        if let Some(c) = s.strip_prefix("mimic_") {
            return c.parse().ok().map(InstanceLabel::Mimic);
        }
        None
    }
}

fn default_num_slides() -> usize {
    600
}
fn default_instances_per_slide() -> usize {
    64
}
fn default_bag_size() -> usize {
    32
}
fn default_bags_per_slide() -> usize {
    2
}
fn default_instance_dim() -> usize {
    16
}
fn default_num_classes() -> usize {
    3
}
fn default_signal_fraction() -> f64 {
    0.1
}
fn default_zero() -> f64 {
    0.0
}
fn default_mimic_slide_fraction() -> f64 {
    1.0
}
fn default_class_separation() -> f64 {
    4.0
}
fn default_noise_sigma() -> f64 {
    1.0
}
fn default_split_fractions() -> [f64; 3] {
    [0.6, 0.15, 0.25]
}
fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_num_slides")]
    pub num_slides: usize,
    #[serde(default = "default_instances_per_slide")]
    pub instances_per_slide: usize,
    /// Default bag size for sampling; the canonical partition ignores it.
    #[serde(default = "default_bag_size")]
    pub bag_size: usize,
    /// Parts in the canonical per-slide bag partition (the `bag_hint`
    /// column of the dataset file).
    #[serde(default = "default_bags_per_slide")]
    pub bags_per_slide: usize,
    #[serde(default = "default_instance_dim")]
    pub instance_dim: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    /// Fraction of each slide's instances planted as signal.
    #[serde(default = "default_signal_fraction")]
    pub signal_fraction: f64,
    /// Fraction planted as inhibitory look-alikes in non-matching slides.
    #[serde(default = "default_zero")]
    pub mimic_fraction: f64,
    /// Fraction of slides that carry mimics at all; the rest stay clean so
    /// the planted signal remains the primary evidence.
    #[serde(default = "default_mimic_slide_fraction")]
    pub mimic_slide_fraction: f64,
    /// Fraction of slides carrying signal of a second class (the slide
    /// label stays the majority signal class).
    #[serde(default = "default_zero")]
    pub mixed_fraction: f64,
    #[serde(default = "default_class_separation")]
    pub class_separation: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_slides < 1 || self.instances_per_slide < 1 {
            return Err(Error::Config("num_slides and instances_per_slide must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        for (name, f) in [
            ("signal_fraction", self.signal_fraction),
            ("mimic_fraction", self.mimic_fraction),
            ("mimic_slide_fraction", self.mimic_slide_fraction),
            ("mixed_fraction", self.mixed_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {f}")));
            }
        }
        if self.signal_fraction * (self.instances_per_slide as f64) < 1.0 {
            return Err(Error::Config(format!(
                "signal_fraction {} times instances_per_slide {} is below one instance",
                self.signal_fraction, self.instances_per_slide
            )));
        }
        if self.instance_dim < self.num_classes {
            return Err(Error::Config(format!(
                "instance_dim {} must be >= num_classes {} to place class means",
                self.instance_dim, self.num_classes
            )));
        }
        if self.mimic_fraction > 0.0 && self.instance_dim < 2 * self.num_classes {
            return Err(Error::Config(format!(
                "mimic generation needs instance_dim >= 2*num_classes, got {} < {}",
                self.instance_dim,
                2 * self.num_classes
            )));
        }
        if self.noise_sigma <= 0.0 {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if self.class_separation < 0.0 {
            return Err(Error::Config("class_separation must be non-negative".into()));
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split_fractions must be non-negative and sum to 1, got {:?}",
                self.split_fractions
            )));
        }
        if self.bag_size < 1 || self.bag_size > self.instances_per_slide {
            return Err(Error::Config(format!(
                "bag_size {} must lie in [1, instances_per_slide={}]",
                self.bag_size, self.instances_per_slide
            )));
        }
        if self.bags_per_slide < 1 {
            return Err(Error::Config("bags_per_slide must be >= 1".into()));
        }
        Ok(())
    }

    /// Signal mean for class c: `class_separation` along axis c.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mu = vec![0.0; self.instance_dim];
        mu[class] = self.class_separation;
        mu
    }

    /// Mimic mean: at least the signal's amplitude along the mimicked
    /// class axis (so look-alikes genuinely threaten that class's logit),
    /// plus a marker on a disjoint axis that keeps them separable.
    pub fn mimic_mean(&self, class: usize) -> Vec<f64> {
        let mut mu = vec![0.0; self.instance_dim];
        mu[class] = self.class_separation;
        mu[self.num_classes + class] = 0.75 * self.class_separation;
        mu
    }
}

#[derive(Debug, Clone)]
pub struct Slide {
    pub slide_id: u32,
    pub label: usize,
    /// Instance pool, one row per instance.
    pub instances: Tensor,
    pub instance_labels: Vec<InstanceLabel>,
    /// Raster cell per instance, unique within the slide.
    pub grid_coords: Vec<(u32, u32)>,
    /// Canonical partition index per instance (the file's bag_hint).
    pub bag_hint: Vec<u32>,
}

impl Slide {
    pub fn num_instances(&self) -> usize {
        self.instance_labels.len()
    }

    /// Indices of instances carrying this slide's own signal.
    pub fn own_signal_indices(&self) -> Vec<usize> {
        self.instance_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == InstanceLabel::Signal(self.label))
            .map(|(i, _)| i)
            .collect()
    }
}

/// A sampled bag: a subset of one slide's instances.
#[derive(Debug, Clone)]
pub struct Bag {
    pub slide_id: u32,
    pub label: usize,
    pub instance_ids: Vec<u32>,
    pub instances: Tensor,
    pub instance_labels: Vec<InstanceLabel>,
    pub grid_coords: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct SlideDataset {
    pub config: GenConfig,
    pub slides: Vec<Slide>,
    pub splits: Splits,
}

impl SlideDataset {
    pub fn slide(&self, slide_id: u32) -> Result<&Slide> {
        self.slides
            .iter()
            .find(|s| s.slide_id == slide_id)
            .ok_or(Error::UnknownSlide(slide_id))
    }

    pub fn split_ids(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn total_instances(&self) -> usize {
        self.slides.iter().map(|s| s.num_instances()).sum()
    }
}

/// Generate a full dataset; pure function of the config (seed included).
pub fn generate(config: &GenConfig) -> Result<SlideDataset> {
    config.validate()?;
    let mut slides = Vec::with_capacity(config.num_slides);
    for slide_id in 0..config.num_slides {
        slides.push(generate_slide(config, slide_id as u32)?);
    }
    let splits = make_splits(config, &slides);
    Ok(SlideDataset {
        config: config.clone(),
        slides,
        splits,
    })
}

fn slide_rng(seed: u64, slide_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + slide_id as u64);
    rng
}

fn is_mixed(config: &GenConfig, slide_id: u32) -> bool {
    // Spread mixed slides evenly over the id range.
    ((slide_id as f64) + 0.5) / (config.num_slides as f64) < config.mixed_fraction
}

/// Deterministic pick of a class other than `label`, varying by slide.
fn other_class(label: usize, slide_id: u32, num_classes: usize, salt: u32) -> usize {
    let k = ((slide_id + salt) as usize) % (num_classes - 1);
    (label + 1 + k) % num_classes
}

fn generate_slide(config: &GenConfig, slide_id: u32) -> Result<Slide> {
    let label = slide_id as usize % config.num_classes;
    let mut rng = slide_rng(config.seed, slide_id);
    let n = config.instances_per_slide;

    let n_signal = ((config.signal_fraction * n as f64).round() as usize).max(1);
    let mixed = is_mixed(config, slide_id) && n_signal >= 3;
    let n_secondary = if mixed {
        ((n_signal as f64 * 0.4).floor() as usize).max(1)
    } else {
        0
    };
    let n_primary = n_signal - n_secondary;
    if n_primary < config.bags_per_slide {
        return Err(Error::Generation(format!(
            "slide {slide_id}: {n_primary} signal instances cannot seed {} partition bags",
            config.bags_per_slide
        )));
    }
    let mimic_slide = ((slide_id as f64) + 0.5) / (config.num_slides as f64)
        < config.mimic_slide_fraction;
    let n_mimic = if config.mimic_fraction > 0.0 && mimic_slide {
        (config.mimic_fraction * n as f64).round() as usize
    } else {
        0
    };
    if n_primary + n_secondary + n_mimic > n {
        return Err(Error::Generation(format!(
            "slide {slide_id}: planted instances exceed instances_per_slide"
        )));
    }

    let secondary_class = other_class(label, slide_id, config.num_classes, 0);
    let mimic_class = other_class(label, slide_id, config.num_classes, 1);

    // Coordinate raster with clustered foci per planted group.
    let side = (n as f64).sqrt().ceil() as u32;
    let mut remaining: Vec<(u32, u32)> = (0..n as u32).map(|i| (i / side, i % side)).collect();
    let take_cluster = |remaining: &mut Vec<(u32, u32)>, count: usize, rng: &mut ChaCha8Rng| {
        if count == 0 {
            return Vec::new();
        }
        let focus = remaining[rng.gen_range(0..remaining.len())];
        remaining.sort_by_key(|&(r, c)| {
            let dr = r as i64 - focus.0 as i64;
            let dc = c as i64 - focus.1 as i64;
            (dr * dr + dc * dc, r, c)
        });
        remaining.drain(..count).collect::<Vec<_>>()
    };
    let primary_cells = take_cluster(&mut remaining, n_primary, &mut rng);
    let secondary_cells = take_cluster(&mut remaining, n_secondary, &mut rng);
    let mimic_cells = take_cluster(&mut remaining, n_mimic, &mut rng);

    let draw = |mean: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        mean.iter()
            .map(|&m| m + config.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mu_primary = config.class_mean(label);
    let mu_secondary = config.class_mean(secondary_class);
    let mu_mimic = config.mimic_mean(mimic_class);
    let mu_background = vec![0.0; config.instance_dim];

    let mut entries: Vec<(InstanceLabel, Vec<f64>, (u32, u32))> = Vec::with_capacity(n);
    for cell in primary_cells {
        entries.push((InstanceLabel::Signal(label), draw(&mu_primary, &mut rng), cell));
    }
    for cell in secondary_cells {
        entries.push((
            InstanceLabel::Signal(secondary_class),
            draw(&mu_secondary, &mut rng),
            cell,
        ));
    }
    for cell in mimic_cells {
        entries.push((InstanceLabel::Mimic(mimic_class), draw(&mu_mimic, &mut rng), cell));
    }
    for cell in remaining {
        entries.push((InstanceLabel::Background, draw(&mu_background, &mut rng), cell));
    }
    entries.shuffle(&mut rng);

    let instance_labels: Vec<InstanceLabel> = entries.iter().map(|e| e.0).collect();
    let grid_coords: Vec<(u32, u32)> = entries.iter().map(|e| e.2).collect();
    let rows: Vec<Vec<f64>> = entries.into_iter().map(|e| e.1).collect();
    let instances = Tensor::from_rows(&rows)?;
    let bag_hint = assign_partition(config, label, &instance_labels, &mut rng);

    Ok(Slide {
        slide_id,
        label,
        instances,
        instance_labels,
        grid_coords,
        bag_hint,
    })
}

/// Canonical partition: own-signal instances round-robin across parts so
/// every part honors the MIL assumption, everything else fills evenly.
fn assign_partition(
    config: &GenConfig,
    label: usize,
    labels: &[InstanceLabel],
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let parts = config.bags_per_slide as u32;
    let mut hint = vec![0u32; labels.len()];
    let mut signal: Vec<usize> = Vec::new();
    let mut rest: Vec<usize> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if *l == InstanceLabel::Signal(label) {
            signal.push(i);
        } else {
            rest.push(i);
        }
    }
    signal.shuffle(rng);
    rest.shuffle(rng);
    let mut next = 0u32;
    for idx in signal.into_iter().chain(rest) {
        hint[idx] = next;
        next = (next + 1) % parts;
    }
    hint
}

fn make_splits(config: &GenConfig, slides: &[Slide]) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let [f_train, f_val, _] = config.split_fractions;
    for class in 0..config.num_classes {
        let mut ids: Vec<u32> = slides
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.slide_id)
            .collect();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = (f_train * n as f64).round() as usize;
        let n_val = (((f_train + f_val) * n as f64).round() as usize).saturating_sub(n_train);
        splits.train.extend(&ids[..n_train.min(n)]);
        splits.val.extend(&ids[n_train.min(n)..(n_train + n_val).min(n)]);
        splits.test.extend(&ids[(n_train + n_val).min(n)..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}

fn bag_from_indices(slide: &Slide, mut indices: Vec<usize>) -> Result<Bag> {
    indices.sort_unstable();
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| slide.instances.row(i).to_vec()).collect();
    Ok(Bag {
        slide_id: slide.slide_id,
        label: slide.label,
        instance_ids: indices.iter().map(|&i| i as u32).collect(),
        instances: Tensor::from_rows(&rows)?,
        instance_labels: indices.iter().map(|&i| slide.instance_labels[i]).collect(),
        grid_coords: indices.iter().map(|&i| slide.grid_coords[i]).collect(),
    })
}

/// Sample bags without replacement within each bag. Bags are re-drawn (and
/// finally patched) until they contain at least one own-signal instance,
/// keeping every sampled bag label-consistent.
pub fn sample_bags(slide: &Slide, bag_size: usize, num_bags: usize, seed: u64) -> Result<Vec<Bag>> {
    let n = slide.num_instances();
    if bag_size == 0 || bag_size > n {
        return Err(Error::Generation(format!(
            "bag_size {bag_size} out of range for slide with {n} instances"
        )));
    }
    let signal = slide.own_signal_indices();
    if signal.is_empty() {
        return Err(Error::Generation(format!(
            "slide {} has no signal instances of its own label; cannot sample label-consistent bags",
            slide.slide_id
        )));
    }
    let mut rng = slide_rng(seed, slide.slide_id);
    let mut bags = Vec::with_capacity(num_bags);
    for _ in 0..num_bags {
        let mut chosen: Vec<usize> = Vec::new();
        let mut ok = false;
        for _ in 0..100 {
            chosen = rand::seq::index::sample(&mut rng, n, bag_size).into_vec();
            if chosen.iter().any(|i| signal.contains(i)) {
                ok = true;
                break;
            }
        }
        if !ok {
            // Force the MIL assumption: swap one slot for a signal instance.
            let extra = signal[rng.gen_range(0..signal.len())];
            if !chosen.contains(&extra) {
                let slot = rng.gen_range(0..chosen.len());
                chosen[slot] = extra;
            }
        }
        bags.push(bag_from_indices(slide, chosen)?);
    }
    Ok(bags)
}

/// A fresh random partition of the slide into `num_parts` bags of
/// near-equal size, covering every instance exactly once. Used to score
/// instances in several independent bag contexts.
pub fn random_partition(slide: &Slide, num_parts: usize, seed: u64) -> Result<Vec<Bag>> {
    let n = slide.num_instances();
    let parts = num_parts.clamp(1, n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = slide_rng(seed, slide.slide_id);
    indices.shuffle(&mut rng);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (k, i) in indices.into_iter().enumerate() {
        groups[k % parts].push(i);
    }
    groups.into_iter().map(|g| bag_from_indices(slide, g)).collect()
}

/// The canonical bags encoded by the slide's `bag_hint` column. Together
/// they cover every instance exactly once.
pub fn partition_bags(slide: &Slide) -> Result<Vec<Bag>> {
    let parts = slide.bag_hint.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); parts as usize];
    for (i, &h) in slide.bag_hint.iter().enumerate() {
        groups[h as usize].push(i);
    }
    groups.into_iter().map(|g| bag_from_indices(slide, g)).collect()
}
