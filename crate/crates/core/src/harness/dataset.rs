//! Labelled datasets: file ingestion and seeded synthetic generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sample::Sample;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    /// Validates unique ids, a common dimension and finite labels.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Parse {
            line: 0,
            message: "no samples".into(),
        })?;
        let dim = first.x.len();
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.x.len(),
                });
            }
            if !seen.insert(s.id) {
                return Err(Error::DuplicateSample(s.id));
            }
            if !s.y.is_finite() {
                return Err(Error::InvalidParameter(format!("label of sample {} is not finite", s.id)));
            }
        }
        Ok(Dataset { samples, dim })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    /// `label,x1,x2,...` per line
    DenseCsv,
    /// `label idx:val idx:val ...` with 1-based indices
    SparseText,
}

pub fn ingest(path: &Path, format: InputFormat, dim: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse(&text, format, dim)
}

/// Parses dataset text. Sample ids are assigned in line order from 0.
pub fn parse(text: &str, format: InputFormat, dim: Option<usize>) -> Result<Dataset> {
    let samples = match format {
        InputFormat::DenseCsv => parse_dense(text, dim)?,
        InputFormat::SparseText => parse_sparse(text, dim)?,
    };
    Dataset::new(samples)
}

fn parse_number(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value {field:?}"),
        });
    }
    Ok(v)
}

fn parse_dense(text: &str, dim: Option<usize>) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let mut fields = record.iter();
        let y = parse_number(fields.next().unwrap_or(""), line)?;
        let x = fields.map(|f| parse_number(f, line)).collect::<Result<Vec<_>>>()?;
        let expected = dim.or_else(|| samples.first().map(|s: &Sample| s.x.len())).unwrap_or(x.len());
        if x.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} features, found {}", x.len()),
            });
        }
        samples.push(Sample::new(samples.len() as u64, x, y));
    }
    Ok(samples)
}

fn parse_sparse(text: &str, dim: Option<usize>) -> Result<Vec<Sample>> {
    let mut rows = Vec::new();
    let mut seen = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut tokens = raw.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        let y = parse_number(label, line)?;
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected idx:val, found {tok:?}"),
            })?;
            let idx: usize = idx.parse().ok().filter(|&i| i >= 1).ok_or_else(|| Error::Parse {
                line,
                message: format!("feature index must be a positive integer, found {idx:?}"),
            })?;
            seen = seen.max(idx);
            entries.push((idx - 1, parse_number(val, line)?));
        }
        rows.push((y, entries));
    }
    let dim = match dim {
        Some(d) if d < seen => return Err(Error::DimensionOverride { given: d, seen }),
        Some(d) => d,
        None => seen,
    };
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(id, (y, entries))| {
            let mut x = vec![0.0; dim];
            for (j, v) in entries {
                x[j] = v;
            }
            Sample::new(id as u64, x, y)
        })
        .collect())
}

/// Two Gaussian classes labelled ±1 with isotropic noise `noise_sigma` and
/// means `±2·noise_sigma·(1, …, 1)/√M`, i.e. `4·noise_sigma` apart.
pub fn synthesize(n: usize, m: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("synthetic data needs n ≥ 1 and M ≥ 1".into()));
    }
    let noise = Normal::new(0.0, noise_sigma)
        .ok()
        .filter(|_| noise_sigma > 0.0)
        .ok_or_else(|| Error::InvalidParameter(format!("noise sigma must be positive, got {noise_sigma}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = 2.0 * noise_sigma / (m as f64).sqrt();
    let samples = (0..n)
        .map(|i| {
            let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let x = (0..m).map(|_| y * offset + noise.sample(&mut rng)).collect();
            Sample::new(i as u64, x, y)
        })
        .collect();
    Dataset::new(samples)
}

/// Synthetic shapes for the two regimes: many low-dimensional samples
/// (intrinsic space pays off) and few high-dimensional ones (empirical).
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Tall,
    Wide,
}

impl Preset {
    /// `(n, M)`
    pub fn shape(self) -> (usize, usize) {
        match self {
            Preset::Tall => (2000, 5),
            Preset::Wide => (200, 2000),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_line() {
        let d = parse("1, 0.5, -2\n", InputFormat::DenseCsv, None).unwrap();
        assert_eq!(d.samples()[0].y, 1.0);
        assert_eq!(d.samples()[0].x, vec![0.5, -2.0]);
    }

    #[test]
    fn dense_errors_carry_line_numbers() {
        let err = parse("1,2,3\n-1,2,x\n", InputFormat::DenseCsv, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("1,2,3\n-1,2\n", InputFormat::DenseCsv, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn sparse_line() {
        let d = parse("-1 3:2.5\n", InputFormat::SparseText, Some(4)).unwrap();
        assert_eq!(d.samples()[0].y, -1.0);
        assert_eq!(d.samples()[0].x, vec![0.0, 0.0, 2.5, 0.0]);
        let d = parse("1 1:1\n-1 5:2\n", InputFormat::SparseText, None).unwrap();
        assert_eq!(d.dim(), 5);
    }

    #[test]
    fn sparse_errors() {
        assert!(matches!(
            parse("1 3:1\n", InputFormat::SparseText, Some(2)),
            Err(Error::DimensionOverride { given: 2, seen: 3 })
        ));
        assert!(matches!(
            parse("1 0:1\n", InputFormat::SparseText, None),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("1 2:1\n1 2=1\n", InputFormat::SparseText, None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_input_has_no_samples() {
        for format in [InputFormat::DenseCsv, InputFormat::SparseText] {
            let err = parse("", format, None).unwrap_err();
            assert!(err.to_string().contains("no samples"), "{err}");
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthesize(100, 5, 1.0, 7).unwrap();
        assert_eq!(a, synthesize(100, 5, 1.0, 7).unwrap());
        assert_ne!(a, synthesize(100, 5, 1.0, 8).unwrap());
        assert_eq!(a.len(), 100);
        assert!(a.samples().iter().all(|s| s.x.len() == 5 && s.y.abs() == 1.0));
    }

    #[test]
    fn synthetic_rejects_bad_parameters() {
        assert!(synthesize(0, 5, 1.0, 0).is_err());
        assert!(synthesize(5, 5, 0.0, 0).is_err());
    }
}
