//! Labelled feature datasets: seeded Gaussian class clusters and a plain
//! whitespace-separated text format.
//!
//! Text format: a header line `n d labels`, then `n` lines each holding `d`
//! decimals followed by an integer class label in `0..labels`.

use crate::error::{Result, RgpError};
use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One column per sample.
    features: DMatrix<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.ncols() != labels.len() {
            return Err(RgpError::ShapeMismatch {
                context: "dataset labels",
                expected: (features.ncols(), 1),
                found: (labels.len(), 1),
            });
        }
        if classes < 2 {
            return Err(RgpError::InvalidConfig(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(RgpError::InvalidConfig(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self { features, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        self.features.column(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Parses the text format.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (line_no, header) = lines.next().ok_or(RgpError::Parse { line: 1, message: "missing header".into() })?;
        let header = header?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(RgpError::Parse { line: line_no, message: format!("header needs `n d labels`, got {header:?}") });
        }
        let parse_usize = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|e| RgpError::Parse { line: line_no, message: format!("{what}: {e}") })
        };
        let n = parse_usize(fields[0], "n")?;
        let d = parse_usize(fields[1], "d")?;
        let classes = parse_usize(fields[2], "labels")?;
        let mut values = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for (line_no, line) in lines {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != d + 1 {
                return Err(RgpError::Parse {
                    line: line_no,
                    message: format!("expected {} fields, found {}", d + 1, fields.len()),
                });
            }
            for f in &fields[..d] {
                let v: f64 = f.parse().map_err(|e| RgpError::Parse { line: line_no, message: format!("{f:?}: {e}") })?;
                values.push(v);
            }
            let y: usize = fields[d]
                .parse()
                .map_err(|e| RgpError::Parse { line: line_no, message: format!("label {:?}: {e}", fields[d]) })?;
            labels.push(y);
        }
        if labels.len() != n {
            return Err(RgpError::Parse { line: 1, message: format!("header declares {n} samples, found {}", labels.len()) });
        }
        Self::new(DMatrix::from_vec(d, n, values), labels, classes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }
}

/// `n` samples in `d` dimensions; class `c` is centred at
/// `separation/√2 · e_c`, so any two class means are `separation` apart.
/// Features have unit variance per coordinate.
pub fn synthetic_clusters(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes > d {
        return Err(RgpError::InvalidConfig(format!("{classes} classes need at least {classes} dimensions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut features = DMatrix::zeros(d, n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = rng.random_range(0..classes);
        let mut x = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        x[y] += offset;
        features.set_column(i, &x);
        labels.push(y);
    }
    Dataset::new(features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_text_format() {
        let text = "3 2 2\n0.5 -1 0\n1e-3 2.25 1\n\n-4 0 1\n";
        let ds = Dataset::from_reader(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels(), &[0, 1, 1]);
        assert_eq!(ds.sample(1)[0], 1e-3);
        assert_eq!(ds.sample(2)[0], -4.0);
    }

    #[test]
    fn reports_bad_lines() {
        let err = Dataset::from_reader("2 2 2\n1 2 0\n1 x 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, RgpError::Parse { line: 3, .. }), "{err}");
        let err = Dataset::from_reader("2 2 2\n1 2 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, RgpError::Parse { .. }));
        let err = Dataset::from_reader("1 1 2\n1 5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, RgpError::InvalidConfig(_)));
    }

    #[test]
    fn clusters_are_centred_where_claimed() {
        let ds = synthetic_clusters(20_000, 4, 2, 3.0, 1).unwrap();
        let mut sums = [[0.0; 4]; 2];
        let mut counts = [0usize; 2];
        for i in 0..ds.len() {
            let y = ds.label(i);
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(ds.sample(i).iter()) {
                *s += v;
            }
        }
        let offset = 3.0 / 2f64.sqrt();
        for c in 0..2 {
            for k in 0..4 {
                let mean = sums[c][k] / counts[c] as f64;
                let expected = if k == c { offset } else { 0.0 };
                assert!((mean - expected).abs() < 0.05, "class {c} coord {k}: {mean}");
            }
        }
        assert!(counts[0].abs_diff(counts[1]) < 600);
    }

    #[test]
    fn clusters_are_seeded() {
        assert_eq!(synthetic_clusters(50, 3, 3, 2.0, 9).unwrap(), synthetic_clusters(50, 3, 3, 2.0, 9).unwrap());
        assert_ne!(synthetic_clusters(50, 3, 3, 2.0, 9).unwrap(), synthetic_clusters(50, 3, 3, 2.0, 10).unwrap());
    }
}
