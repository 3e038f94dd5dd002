//! Synthetic dataset generation plus small binary on-disk formats for
//! datasets and final weights.
//!
//! Dataset file layout (little-endian):
//!   magic "ZOWD" (4 bytes) | u32 version | u32 samples | u32 feature dim |
//!   u32 classes | samples * dim f32 features (row-major) | samples u32 labels
//!
//! Weights file layout (little-endian):
//!   magic "ZOWW" (4 bytes) | u32 version | u64 length | length f64 values

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix, ParamVector};
use crate::rng::SeedStream;

const DATASET_MAGIC: [u8; 4] = *b"ZOWD";
const WEIGHTS_MAGIC: [u8; 4] = *b"ZOWW";
const FORMAT_VERSION: u32 = 1;

/// Labelled dataset held as one feature matrix plus integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone())
    }
}

/// Train plus held-out evaluation split.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Gaussian class-cluster generator standing in for the image benchmarks at
/// desk scale.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Minimum pairwise distance between class means.
    pub class_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("dataset needs at least 2 classes".into()));
        }
        if self.samples_per_class == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "samples_per_class and input_dim must be >= 1".into(),
            ));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.class_separation) || !positive(self.noise_std) {
            return Err(Error::Config(
                "class_separation and noise_std must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Draws class means at pairwise distance >= class_separation, then samples
/// Gaussian clusters around them. Returns a 90/10 train/eval split,
/// stratified by class so both sides carry every label. Deterministic from
/// the spec seed.
pub fn generate_synthetic(spec: &SyntheticDatasetSpec) -> Result<SplitDataset> {
    spec.validate()?;
    let mut stream = SeedStream::new(spec.seed);
    let c = spec.num_classes;
    let dim = spec.input_dim;

    // Raw means, then rescale all of them so the minimum pairwise distance
    // meets the requested separation exactly when it would otherwise fall
    // short.
    let mut means: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..dim).map(|_| stream.next_normal()).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..c {
        for j in i + 1..c {
            let dist: f64 = means[i]
                .iter()
                .zip(&means[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(dist);
        }
    }
    if min_dist < spec.class_separation {
        let scale = spec.class_separation / min_dist;
        for mean in &mut means {
            for v in mean {
                *v *= scale;
            }
        }
    }

    let eval_per_class = (spec.samples_per_class as f64 * 0.1).round().max(1.0) as usize;
    let eval_per_class = eval_per_class.min(spec.samples_per_class.saturating_sub(1)).max(1);

    let mut train_rows: Vec<(Vec<f64>, u32)> = Vec::new();
    let mut eval_rows: Vec<(Vec<f64>, u32)> = Vec::new();
    for (class, mean) in means.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let row: Vec<f64> = mean
                .iter()
                .map(|&m| m + spec.noise_std * stream.next_normal())
                .collect();
            if s < eval_per_class {
                eval_rows.push((row, class as u32));
            } else {
                train_rows.push((row, class as u32));
            }
        }
    }
    stream.shuffle(&mut train_rows);
    stream.shuffle(&mut eval_rows);

    Ok(SplitDataset {
        train: rows_to_dataset(train_rows, dim, c)?,
        eval: rows_to_dataset(eval_rows, dim, c)?,
    })
}

fn rows_to_dataset(rows: Vec<(Vec<f64>, u32)>, dim: usize, classes: usize) -> Result<Dataset> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (row, label) in rows {
        data.extend_from_slice(&row);
        labels.push(label);
    }
    Ok(Dataset {
        features: Matrix::from_vec(n, dim, data)?,
        labels,
        num_classes: classes,
    })
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DATASET_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    w.write_all(&(dataset.input_dim() as u32).to_le_bytes())?;
    w.write_all(&(dataset.num_classes as u32).to_le_bytes())?;
    for &v in dataset.features.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    for &l in &dataset.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != DATASET_MAGIC {
        return Err(Error::Config(format!(
            "{}: not a dataset file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Config(format!("unsupported dataset version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let classes = read_u32(&mut r)? as usize;
    if n == 0 || dim == 0 || classes < 2 {
        return Err(Error::Config("dataset header fields out of range".into()));
    }

    let mut data = Vec::with_capacity(n * dim);
    let mut buf = [0u8; 4];
    for _ in 0..n * dim {
        r.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        let l = u32::from_le_bytes(buf);
        if l as usize >= classes {
            return Err(Error::Config(format!("label {l} out of range")));
        }
        labels.push(l);
    }
    Ok(Dataset {
        features: Matrix::from_vec(n, dim, data)?,
        labels,
        num_classes: classes,
    })
}

pub fn save_weights(path: &Path, w: &ParamVector) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&WEIGHTS_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(w.len() as u64).to_le_bytes())?;
    for &v in w.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ParamVector> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::Config(format!(
            "{}: not a weights file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Config(format!("unsupported weights version {version}")));
    }
    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf)?;
    let len = u64::from_le_bytes(len_buf) as usize;
    let mut values = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(ParamVector::from_vec(values))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
