use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

static DIGITS_CSV: &str = include_str!("../../data/digits.csv");

/// Feature rows with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|r| r.len() != first.len()) {
                return Err(Error::Dimension("ragged feature rows".into()));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Range(format!("label {l} not below class count {class_count}")));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Headerless CSV, label in the last column. Features are divided by
    /// `feature_scale`.
    pub fn from_csv_reader<R: BufRead>(reader: R, feature_scale: f64) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(Error::Format(format!("line {}: need features and a label", i + 1)));
            }
            let (feat, label) = fields.split_at(fields.len() - 1);
            let label: usize = label[0]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad label {:?}", i + 1, label[0])))?;
            let row = feat
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map(|v| v / feature_scale)
                        .map_err(|_| Error::Format(format!("line {}: bad feature {f:?}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            features.push(row);
            labels.push(label);
        }
        let class_count = labels.iter().max().map_or(0, |&m| m + 1);
        Dataset::new(features, labels, class_count)
    }

    pub fn from_csv(path: impl AsRef<Path>, feature_scale: f64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(f), feature_scale)
    }

    /// The bundled 8×8 handwritten digits (1797 samples, pixels scaled to [0, 1]).
    pub fn digits() -> Self {
        Self::from_csv_reader(DIGITS_CSV.as_bytes(), 16.0).expect("bundled dataset parses")
    }

    /// Average-pools square images by `factor` in each direction
    /// (8×8 → 4×4 for factor 2). A fixed plaintext feature extractor.
    pub fn pooled(&self, factor: usize) -> Result<Self> {
        let d = self.input_dim();
        let side = (d as f64).sqrt() as usize;
        if side * side != d || factor == 0 || side % factor != 0 {
            return Err(Error::Dimension(format!(
                "cannot pool {d} features by {factor}"
            )));
        }
        let out = side / factor;
        let norm = (factor * factor) as f64;
        let features = self
            .features
            .iter()
            .map(|row| {
                let mut v = vec![0.0; out * out];
                for r in 0..side {
                    for c in 0..side {
                        v[(r / factor) * out + c / factor] += row[r * side + c];
                    }
                }
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        Dataset::new(features, self.labels.clone(), self.class_count)
    }

    /// Deterministic shuffled split; the first part gets `fraction` of rows.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let pick = |ids: &[usize]| Dataset {
            features: ids.iter().map(|&i| self.features[i].clone()).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        };
        (pick(&idx[..cut]), pick(&idx[cut..]))
    }

    pub fn take(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Dataset {
            features: self.features[..count].to_vec(),
            labels: self.labels[..count].to_vec(),
            class_count: self.class_count,
        }
    }

    /// Two well-separated Gaussian blobs in `dim` dimensions.
    pub fn two_blobs(samples: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(samples);
        let mut labels = Vec::with_capacity(samples);
        for i in 0..samples {
            let label = i % 2;
            let center = if label == 0 { -0.5 } else { 0.5 };
            features.push(
                (0..dim)
                    .map(|_| center + rng.gen_range(-0.25..0.25))
                    .collect(),
            );
            labels.push(label);
        }
        Dataset {
            features,
            labels,
            class_count: 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_shape() {
        let d = Dataset::digits();
        assert_eq!(d.len(), 1797);
        assert_eq!(d.input_dim(), 64);
        assert_eq!(d.class_count, 10);
        assert!(d.features.iter().flatten().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn pooling_averages_blocks() {
        let row: Vec<f64> = (0..16).map(f64::from).collect();
        let d = Dataset::new(vec![row], vec![0], 1).unwrap();
        let p = d.pooled(2).unwrap();
        assert_eq!(p.features[0], vec![2.5, 4.5, 10.5, 12.5]);
        assert!(d.pooled(3).is_err());
    }

    #[test]
    fn split_is_deterministic_and_complete() {
        let d = Dataset::digits();
        let (a, b) = d.split(0.8, 7);
        let (a2, _) = d.split(0.8, 7);
        assert_eq!(a, a2);
        assert_eq!(a.len() + b.len(), d.len());
        assert_eq!(a.len(), 1438);
    }

    #[test]
    fn csv_errors() {
        assert!(Dataset::from_csv_reader("1,2,x\n".as_bytes(), 1.0).is_err());
        assert!(Dataset::from_csv_reader("1,2,3\n1,2\n".as_bytes(), 1.0).is_err());
        let d = Dataset::from_csv_reader("1,2,1\n\n3,4,0\n".as_bytes(), 2.0).unwrap();
        assert_eq!(d.features, vec![vec![0.5, 1.0], vec![1.5, 2.0]]);
        assert_eq!(d.class_count, 2);
    }
}
