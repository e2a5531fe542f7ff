//! Seeded Gaussian-mixture datasets and CSV IO.
//!
//! Gaussian draws use Box-Muller on a ChaCha8 stream, so a seed produces the
//! same dataset on every platform with an IEEE-754 `ln`/`cos`/`sin`.
//!
//! CSV layout: header `y,x0,x1,...`, one sample per row, reals written with
//! 17 significant digits so a save/load round trip is lossless.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub class_means: Vec<Vec<f64>>,
    pub class_std: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per_class must be at least 1"));
        }
        if !(self.class_std > 0.0 && self.class_std.is_finite()) {
            return Err(Error::invalid(format!(
                "class_std must be positive, got {}",
                self.class_std
            )));
        }
        if self.class_means.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "{} class means given for {} classes",
                self.class_means.len(),
                self.num_classes
            )));
        }
        for (c, m) in self.class_means.iter().enumerate() {
            if m.len() != self.dim {
                return Err(Error::invalid(format!(
                    "mean of class {c} has length {}, expected {}",
                    m.len(),
                    self.dim
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("mean of class {c} is not finite")));
            }
        }
        Ok(())
    }
}

/// A labelled sample set over `num_classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    dim: usize,
    meta: Option<DatasetSpec>,
}

impl Dataset {
    /// Checks that every sample has `dim` finite features and a label below
    /// `num_classes`.
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        let dim = samples.first().map_or(0, |s| s.features.len());
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::invalid(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "sample {i} has non-finite features"
                )));
            }
            if s.label >= num_classes {
                return Err(Error::invalid(format!(
                    "sample {i} has label {} but there are {num_classes} classes",
                    s.label
                )));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            dim,
            meta: None,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meta(&self) -> Option<&DatasetSpec> {
        self.meta.as_ref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// The samples of class `c`, in dataset order.
    pub fn class_subset(&self, c: usize) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.label == c)
    }

    /// Splits every class at `fraction` of its samples, preserving order:
    /// the first part of each class goes to the first dataset.
    pub fn stratified_split(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "split fraction must be in [0, 1], got {fraction}"
            )));
        }
        let counts = self.class_counts();
        let cut: Vec<usize> = counts
            .iter()
            .map(|&n| (n as f64 * fraction).round() as usize)
            .collect();
        let mut seen = vec![0; self.num_classes];
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for s in &self.samples {
            if seen[s.label] < cut[s.label] {
                first.push(s.clone());
            } else {
                second.push(s.clone());
            }
            seen[s.label] += 1;
        }
        Ok((
            Dataset::new(first, self.num_classes)?,
            Dataset::new(second, self.num_classes)?,
        ))
    }
}

struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    fn new(seed: u64) -> Self {
        GaussianStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Standard normal draw via Box-Muller; each pair of uniforms yields two
    /// values.
    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite.
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Draws `per_class` samples from `Normal(mean_c, class_std² I)` for every
/// class, class by class.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut gauss = GaussianStream::new(spec.seed);
    let mut samples = Vec::with_capacity(spec.num_classes * spec.per_class);
    for (c, mean) in spec.class_means.iter().enumerate() {
        for _ in 0..spec.per_class {
            let features = mean
                .iter()
                .map(|&m| m + spec.class_std * gauss.next())
                .collect();
            samples.push(Sample::new(features, c));
        }
    }
    let mut data = Dataset::new(samples, spec.num_classes)?;
    data.meta = Some(spec.clone());
    Ok(data)
}

/// Spec of the four-class interference preset.
///
/// Classes 0 and 1 sit `(1 - overlap) * 4` apart (unit standard deviation),
/// so at `overlap = 1` they are identically distributed. Classes 2 and 3 sit
/// 10 apart from each other and at least 8 from either of the first pair.
pub fn interference_preset_spec(overlap: f64, seed: u64) -> Result<DatasetSpec> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::invalid(format!(
            "overlap must be in [0, 1], got {overlap}"
        )));
    }
    let half = (1.0 - overlap) * 2.0;
    Ok(DatasetSpec {
        num_classes: 4,
        dim: 2,
        per_class: 500,
        class_means: vec![
            vec![-half, -3.0],
            vec![half, -3.0],
            vec![-5.0, 5.0],
            vec![5.0, 5.0],
        ],
        class_std: 1.0,
        seed,
    })
}

pub fn interference_preset(overlap: f64, seed: u64) -> Result<Dataset> {
    generate(&interference_preset_spec(overlap, seed)?)
}

/// Reads a `y,x0,x1,...` file. Labels must lie below `num_classes`.
pub fn load_csv(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("y") || headers.len() < 2 {
        return Err(parse_err(1, "header must be `y,x0,x1,...`".into()));
    }
    let dim = headers.len() - 1;

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("label `{}` is not an integer", &record[0])))?;
        if label >= num_classes {
            return Err(parse_err(
                line,
                format!("label {label} out of range for {num_classes} classes"),
            ));
        }
        let features = record
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("`{f}` is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample::new(features, label));
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!(
            "{}: dataset is empty",
            path.display()
        )));
    }
    Dataset::new(samples, num_classes)
}

/// Largest label in a `y,...` file plus one (at least 2).
pub fn infer_num_classes(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut max = 0usize;
    for record in reader.records() {
        let record = record?;
        if let Some(label) = record.get(0).and_then(|f| f.trim().parse::<usize>().ok()) {
            max = max.max(label);
        }
    }
    Ok((max + 1).max(2))
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(data, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_csv(data: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "y")?;
    for j in 0..data.dim {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for s in &data.samples {
        write!(out, "{}", s.label)?;
        for v in &s.features {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
