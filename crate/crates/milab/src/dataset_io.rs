//! Dataset persistence.
//!
//! Two files per dataset directory:
//!
//! - `dataset.csv` — one header line
//!   `# milab-dataset v1 slides=<S> instances=<I> d=<D> c=<C> seed=<seed>`,
//!   a column-name line, then one row per instance:
//!   `slide_id,bag_hint,instance_id,row,col,instance_label,f_0,…,f_{D−1}`.
//!   Column order is normative. Floats use Rust's shortest round-trip
//!   formatting, so a load reproduces every value bit-exactly.
//! - `manifest.json` — generator config, its hash, slide labels, and the
//!   train/val/test split lists.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fileio::{config_hash, write_atomic_set};
use crate::synth::{GenConfig, InstanceLabel, Slide, SlideDataset, Splits};

pub const DATASET_FILE: &str = "dataset.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const FORMAT_TAG: &str = "milab-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    config: GenConfig,
    config_hash: String,
    /// slide_id → class label, ordered by id.
    slide_labels: BTreeMap<u32, usize>,
    splits: Splits,
}

pub fn save(dataset: &SlideDataset, dir: &Path) -> Result<()> {
    let csv = encode_csv(dataset);
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        version: VERSION,
        config: dataset.config.clone(),
        config_hash: config_hash(&dataset.config)?,
        slide_labels: dataset.slides.iter().map(|s| (s.slide_id, s.label)).collect(),
        splits: dataset.splits.clone(),
    };
    let manifest_json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic_set(&[
        (dir.join(DATASET_FILE), csv.into_bytes()),
        (dir.join(MANIFEST_FILE), manifest_json),
    ])
}

fn encode_csv(dataset: &SlideDataset) -> String {
    let d = dataset.config.instance_dim;
    let mut out = String::new();
    out.push_str(&format!(
        "# {FORMAT_TAG} v{VERSION} slides={} instances={} d={} c={} seed={}\n",
        dataset.slides.len(),
        dataset.total_instances(),
        d,
        dataset.config.num_classes,
        dataset.config.seed
    ));
    out.push_str("slide_id,bag_hint,instance_id,row,col,instance_label");
    for j in 0..d {
        out.push_str(&format!(",f_{j}"));
    }
    out.push('\n');
    for slide in &dataset.slides {
        for i in 0..slide.num_instances() {
            let (r, c) = slide.grid_coords[i];
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                slide.slide_id,
                slide.bag_hint[i],
                i,
                r,
                c,
                slide.instance_labels[i].as_string()
            ));
            for v in slide.instances.row(i) {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn load(dir: &Path) -> Result<SlideDataset> {
    let manifest_bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format != FORMAT_TAG || manifest.version != VERSION {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "manifest format/version mismatch: {} v{}",
                manifest.format, manifest.version
            ),
        });
    }
    manifest.config.validate()?;

    let csv = fs::read_to_string(dir.join(DATASET_FILE))?;
    let slides = parse_csv(&csv, &manifest)?;

    for ids in [&manifest.splits.train, &manifest.splits.val, &manifest.splits.test] {
        for id in ids {
            if !manifest.slide_labels.contains_key(id) {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("split references unknown slide {id}"),
                });
            }
        }
    }

    Ok(SlideDataset {
        config: manifest.config,
        slides,
        splits: manifest.splits,
    })
}

fn parse_csv(csv: &str, manifest: &Manifest) -> Result<Vec<Slide>> {
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let mut lines = csv.lines().enumerate();

    // header line
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty dataset file".into()))?;
    let mut declared: BTreeMap<&str, &str> = BTreeMap::new();
    let mut header_parts = header.split_whitespace();
    let magic = header_parts.next();
    let tag = header_parts.next();
    if magic != Some("#") || tag != Some(FORMAT_TAG) {
        return Err(parse_err(1, format!("bad header line: {header}")));
    }
    let ver = header_parts
        .next()
        .ok_or_else(|| parse_err(1, "missing version".into()))?;
    if ver != format!("v{VERSION}") {
        return Err(parse_err(1, format!("unsupported dataset version {ver}")));
    }
    for kv in header_parts {
        if let Some((k, v)) = kv.split_once('=') {
            declared.insert(k, v);
        }
    }
    let get_count = |key: &str| -> Result<usize> {
        declared
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(1, format!("header missing {key}=<int>")))
    };
    let num_slides = get_count("slides")?;
    let num_instances = get_count("instances")?;
    let d = get_count("d")?;
    if d != manifest.config.instance_dim {
        return Err(parse_err(
            1,
            format!("header d={} disagrees with manifest config d={}", d, manifest.config.instance_dim),
        ));
    }

    // column-name line
    let (_, columns) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing column header".into()))?;
    let mut expected_columns = "slide_id,bag_hint,instance_id,row,col,instance_label".to_string();
    for j in 0..d {
        expected_columns.push_str(&format!(",f_{j}"));
    }
    if columns != expected_columns {
        return Err(parse_err(2, format!("unexpected column header: {columns}")));
    }

    struct PartialSlide {
        slide_id: u32,
        rows: Vec<Vec<f64>>,
        labels: Vec<InstanceLabel>,
        coords: Vec<(u32, u32)>,
        hints: Vec<u32>,
    }
    let mut finished: Vec<Slide> = Vec::new();
    let mut current: Option<PartialSlide> = None;
    let mut seen_ids: Vec<u32> = Vec::new();
    let mut total_rows = 0usize;

    let finish = |p: PartialSlide, finished: &mut Vec<Slide>| -> Result<()> {
        let label = *manifest.slide_labels.get(&p.slide_id).ok_or(Error::Parse {
            line: 0,
            msg: format!("slide {} missing from manifest labels", p.slide_id),
        })?;
        finished.push(Slide {
            slide_id: p.slide_id,
            label,
            instances: Tensor::from_rows(&p.rows)?,
            instance_labels: p.labels,
            grid_coords: p.coords,
            bag_hint: p.hints,
        });
        Ok(())
    };

    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 + d {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", 6 + d, fields.len()),
            ));
        }
        let int = |s: &str, what: &str| -> Result<u32> {
            s.parse()
                .map_err(|_| parse_err(line_no, format!("bad {what}: {s}")))
        };
        let slide_id = int(fields[0], "slide_id")?;
        let bag_hint = int(fields[1], "bag_hint")?;
        let instance_id = int(fields[2], "instance_id")? as usize;
        let row = int(fields[3], "row")?;
        let col = int(fields[4], "col")?;
        let label = InstanceLabel::parse(fields[5])
            .ok_or_else(|| parse_err(line_no, format!("bad instance_label: {}", fields[5])))?;
        let mut values = Vec::with_capacity(d);
        for f in &fields[6..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad feature value: {f}")))?,
            );
        }

        let start_new = match &current {
            None => true,
            Some(p) => p.slide_id != slide_id,
        };
        if start_new {
            if let Some(p) = current.take() {
                finish(p, &mut finished)?;
            }
            if seen_ids.contains(&slide_id) {
                return Err(parse_err(
                    line_no,
                    format!("slide {slide_id} rows are not contiguous"),
                ));
            }
            seen_ids.push(slide_id);
            current = Some(PartialSlide {
                slide_id,
                rows: Vec::new(),
                labels: Vec::new(),
                coords: Vec::new(),
                hints: Vec::new(),
            });
        }
        let p = current.as_mut().expect("set above");
        if instance_id != p.rows.len() {
            return Err(parse_err(
                line_no,
                format!("instance_id {} out of order (expected {})", instance_id, p.rows.len()),
            ));
        }
        p.rows.push(values);
        p.labels.push(label);
        p.coords.push((row, col));
        p.hints.push(bag_hint);
        total_rows += 1;
    }
    if let Some(p) = current.take() {
        finish(p, &mut finished)?;
    }

    if finished.len() != num_slides || total_rows != num_instances {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "header declared {num_slides} slides / {num_instances} instances, found {} / {}",
                finished.len(),
                total_rows
            ),
        });
    }
    Ok(finished)
}
