//! Classification datasets: CSV and IDX ingestion, synthetic generation,
//! and the equal-size random split across workers.

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FilePosition, Result};
use crate::rng::SimRng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major `n × f` features with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, num_features: usize, num_classes: usize) -> Result<Self> {
        if num_features == 0 || labels.is_empty() {
            return Err(Error::invalid("dataset needs at least one row and one feature"));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::invalid(format!(
                "feature buffer has {} values, expected {} rows × {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    /// Gaussian class clusters: each class gets a mean drawn from
    /// `N(0, separation²)` per feature, and samples add unit noise.
    pub fn synthetic(n: usize, num_features: usize, num_classes: usize, separation: f64, rng: &mut SimRng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        let means: Vec<f64> = (0..num_classes * num_features)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                separation * z
            })
            .collect();
        let mut features = Vec::with_capacity(n * num_features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % num_classes;
            labels.push(class);
            let mean = &means[class * num_features..(class + 1) * num_features];
            features.extend(mean.iter().map(|m| {
                let noise: f64 = StandardNormal.sample(rng);
                m + noise
            }));
        }
        Dataset::new(features, labels, num_features, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Dataset::new(
            self.features[..n * self.num_features].to_vec(),
            self.labels[..n].to_vec(),
            self.num_features,
            self.num_classes,
        )
    }
}

/// Where to read a dataset from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum DatasetSource {
    /// UTF-8, comma separated, one header row, label in the last column.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
    /// Big-endian IDX image and label files (MNIST layout).
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
}

impl DatasetSource {
    /// Files this source reads.
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Csv { path, .. } => vec![path],
            DatasetSource::Idx { images, labels, .. } => vec![images, labels],
        }
    }
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Csv { path, num_classes } => load_csv(path, *num_classes),
        DatasetSource::Idx {
            images,
            labels,
            num_classes,
        } => load_idx(images, labels, *num_classes),
    }
}

/// Reads a CSV file with a header row and the integer label last.
///
/// Without `num_classes`, the class count is one past the largest label.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let fmt_err = |line: u64, message: String| Error::Format {
        path: path.to_path_buf(),
        position: FilePosition::Line(line),
        message,
    };

    let header_len = reader
        .headers()
        .map_err(|e| fmt_err(1, e.to_string()))?
        .len();
    if header_len < 2 {
        return Err(fmt_err(1, "need at least one feature column and a label column".into()));
    }
    let num_features = header_len - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fmt_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for field in record.iter().take(num_features) {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| fmt_err(line, format!("feature `{field}` is not a number")))?;
            if !x.is_finite() {
                return Err(fmt_err(line, format!("feature `{field}` is not finite")));
            }
            features.push(x);
        }
        let raw = record[num_features].trim();
        let label: usize = raw
            .parse()
            .map_err(|_| fmt_err(line, format!("label `{raw}` out of range (must be a non-negative integer)")))?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(fmt_err(line, format!("label {label} out of range for {c} classes")));
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(fmt_err(1, "no data rows".into()));
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    Dataset::new(features, labels, num_features, classes)
}

/// Reads an IDX image file (magic 0x00000803) and label file (magic
/// 0x00000801). Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let err = |path: &Path, offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        position: FilePosition::Offset(offset as u64),
        message,
    };
    let read_u32 = |bytes: &[u8], path: &Path, offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| err(path, bytes.len(), "unexpected end of file".into()))
    };

    let magic = read_u32(&img, images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(err(images, 0, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = read_u32(&img, images, 4)? as usize;
    let rows = read_u32(&img, images, 8)? as usize;
    let cols = read_u32(&img, images, 12)? as usize;
    let pixels = rows * cols;
    if pixels == 0 {
        return Err(err(images, 8, "image dimensions must be non-zero".into()));
    }
    let body = &img[16..];
    if body.len() < n * pixels {
        return Err(err(images, img.len(), format!("truncated: expected {} pixel bytes", n * pixels)));
    }

    let magic = read_u32(&lab, labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(err(labels, 0, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_labels = read_u32(&lab, labels, 4)? as usize;
    if n_labels != n {
        return Err(err(labels, 4, format!("{n_labels} labels for {n} images")));
    }
    if lab.len() < 8 + n {
        return Err(err(labels, lab.len(), format!("truncated: expected {n} label bytes")));
    }
    let label_bytes = &lab[8..8 + n];
    if let Some(c) = num_classes {
        if let Some(pos) = label_bytes.iter().position(|&l| l as usize >= c) {
            return Err(err(labels, 8 + pos, format!("label {} out of range for {c} classes", label_bytes[pos])));
        }
    }
    let features = body[..n * pixels].iter().map(|&p| p as f64 / 255.0).collect();
    let label_vec: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let classes = num_classes.unwrap_or_else(|| label_vec.iter().max().map_or(1, |m| m + 1));
    Dataset::new(features, label_vec, pixels, classes)
}

/// A random split of row indices into contiguous per-worker ranges of a
/// shuffled order. The first `n mod N` shards get one extra row.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    order: Vec<usize>,
    ranges: Vec<Range<usize>>,
}

impl Partition {
    pub fn num_shards(&self) -> usize {
        self.ranges.len()
    }

    pub fn shard(&self, q: usize) -> &[usize] {
        &self.order[self.ranges[q].clone()]
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
}

pub fn partition(n: usize, workers: usize, rng: &mut SimRng) -> Result<Partition> {
    if workers == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    if n < workers {
        return Err(Error::invalid(format!("{n} rows cannot be split across {workers} workers")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / workers;
    let extra = n % workers;
    let mut ranges = Vec::with_capacity(workers);
    let mut start = 0;
    for q in 0..workers {
        let len = base + usize::from(q < extra);
        ranges.push(start..start + len);
        start += len;
    }
    Ok(Partition { order, ranges })
}
