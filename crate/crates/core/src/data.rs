//! Binary classification data: synthetic generation, CSV ingestion and the
//! label-sorted heterogeneous split across agents.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::seed::{rng_for, Domain};

/// Feature matrix (one sample per row) and ±1 labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabeledDataset<S> {
    features: Matrix<S>,
    labels: Vec<S>,
}

impl<S: Scalar> LabeledDataset<S> {
    pub fn new(features: Matrix<S>, labels: Vec<S>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if let Some(i) = labels.iter().position(|&v| v != S::one() && v != -S::one()) {
            return Err(Error::Invalid(format!("label of sample {i} is not ±1")));
        }
        if !features.is_finite() {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<S> {
        &self.features
    }

    pub fn labels(&self) -> &[S] {
        &self.labels
    }

    pub fn sample(&self, j: usize) -> (&[S], S) {
        (self.features.row(j), self.labels[j])
    }

    /// Rows `indices` as a new feature matrix and label vector.
    pub fn select(&self, indices: &[usize]) -> (Matrix<S>, Vec<S>) {
        let p = self.dim();
        let feats = Matrix::from_fn(indices.len(), p, |r, c| self.features[(indices[r], c)]);
        let labels = indices.iter().map(|&j| self.labels[j]).collect();
        (feats, labels)
    }

    /// Fraction of samples with `sign(xᵀu) == v`.
    pub fn accuracy(&self, x: &[S]) -> f64 {
        let hits = (0..self.len())
            .filter(|&j| {
                let (u, v) = self.sample(j);
                crate::scalar::dot(u, x) * v > S::zero()
            })
            .count();
        hits as f64 / self.len() as f64
    }
}

/// Two unit-covariance Gaussian clusters centred at `±separation·e₁`, each
/// sample's label chosen by a fair coin.
pub fn synth_classification<S: Scalar>(n_samples: usize, p: usize, separation: f64, seed: u64) -> Result<LabeledDataset<S>> {
    if n_samples < 2 || p < 1 {
        return Err(Error::Invalid(format!("need n_samples ≥ 2 and p ≥ 1, got {n_samples} and {p}")));
    }
    let mut rng = rng_for(seed, Domain::Data, &[]);
    let mut feats = Matrix::zeros(n_samples, p);
    let mut labels = Vec::with_capacity(n_samples);
    for j in 0..n_samples {
        let label = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for c in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            let centre = if c == 0 { label * separation } else { 0.0 };
            feats[(j, c)] = S::lit(centre + z);
        }
        labels.push(S::lit(label));
    }
    LabeledDataset::new(feats, labels)
}

/// Reads `label,feat1,...,featp` rows. Labels `0/1` are remapped to `-1/+1`.
pub fn load_csv<S: Scalar>(path: &Path) -> Result<LabeledDataset<S>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, path)
}

pub fn parse_csv<S: Scalar>(text: &str, origin: &Path) -> Result<LabeledDataset<S>> {
    let perr = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (no, line) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let raw_label: f64 = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|e| perr(line_no, format!("label: {e}")))?;
        let label = match raw_label {
            v if v == 1.0 => 1.0,
            v if v == -1.0 || v == 0.0 => -1.0,
            v => return Err(perr(line_no, format!("label {v} is not one of -1, 0, 1"))),
        };
        let feats = fields
            .enumerate()
            .map(|(k, f)| {
                f.parse::<f64>()
                    .map_err(|e| perr(line_no, format!("feature {}: {e}", k + 1)))
                    .and_then(|v| if v.is_finite() { Ok(S::lit(v)) } else { Err(perr(line_no, format!("feature {} is not finite", k + 1))) })
            })
            .collect::<Result<Vec<S>>>()?;
        match dim {
            None if feats.is_empty() => return Err(perr(line_no, "row has no features".into())),
            None => dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(perr(line_no, format!("row has {} features, earlier rows have {d}", feats.len())))
            }
            Some(_) => {}
        }
        rows.push(feats);
        labels.push(S::lit(label));
    }
    if rows.is_empty() {
        return Err(perr(0, "no data rows".into()));
    }
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels)
}

/// Assignment of samples to `(agent, mini-batch)` slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    /// Owning agent of every sample.
    pub assignment: Vec<usize>,
    /// `batches[i][l]` lists the sample indices of agent `i`'s mini-batch `l`.
    pub batches: Vec<Vec<Vec<usize>>>,
    pub m: usize,
}

impl Partition {
    pub fn agents(&self) -> usize {
        self.batches.len()
    }

    pub fn agent_samples(&self, i: usize) -> Vec<usize> {
        self.batches[i].iter().flatten().copied().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Splits `0..len` into `parts` contiguous ranges whose sizes differ by at most one.
pub(crate) fn balanced_ranges(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Stable sort by label, contiguous block per agent, contiguous mini-batches
/// within each agent.
pub fn heterogeneous_partition<S: Scalar>(ds: &LabeledDataset<S>, n: usize, m: usize) -> Result<Partition> {
    if n == 0 || m == 0 {
        return Err(Error::Invalid("agents and mini-batches must be positive".into()));
    }
    if ds.len() < n * m {
        return Err(Error::TooFewSamples { need: n * m, have: ds.len() });
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.labels[a].partial_cmp(&ds.labels[b]).expect("finite labels"));
    let mut assignment = vec![0; ds.len()];
    let batches = balanced_ranges(order.len(), n)
        .into_iter()
        .enumerate()
        .map(|(agent, block)| {
            let members = &order[block];
            for &j in members {
                assignment[j] = agent;
            }
            balanced_ranges(members.len(), m).into_iter().map(|r| members[r].to_vec()).collect()
        })
        .collect();
    Ok(Partition { assignment, batches, m })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(labels: &[f64]) -> LabeledDataset<f64> {
        let feats = Matrix::from_fn(labels.len(), 1, |i, _| i as f64);
        LabeledDataset::new(feats, labels.to_vec()).unwrap()
    }

    #[test]
    fn sorted_split_two_agents() {
        let d = ds(&[1.0, -1.0, 1.0, -1.0]);
        let p = heterogeneous_partition(&d, 2, 1).unwrap();
        assert_eq!(p.agent_samples(0), vec![1, 3]);
        assert_eq!(p.agent_samples(1), vec![0, 2]);
        assert_eq!(p.assignment, vec![1, 0, 1, 0]);
    }

    #[test]
    fn single_agent_holds_everything() {
        let d = ds(&[1.0, -1.0, 1.0, -1.0, 1.0]);
        for m in 1..=5 {
            let p = heterogeneous_partition(&d, 1, m).unwrap();
            assert_eq!(p.agent_samples(0).len(), 5);
            assert_eq!(p.batches[0].len(), m);
        }
    }

    #[test]
    fn sixty_forty_over_four_agents() {
        let mut labels = vec![-1.0; 60];
        labels.extend(vec![1.0; 40]);
        let p = heterogeneous_partition(&ds(&labels), 4, 5).unwrap();
        let label_of = |j: usize| labels[j];
        let count_pos = |i: usize| p.agent_samples(i).iter().filter(|&&j| label_of(j) > 0.0).count();
        assert_eq!((0..4).map(|i| p.agent_samples(i).len()).collect::<Vec<_>>(), vec![25; 4]);
        assert_eq!(count_pos(0), 0);
        assert_eq!(count_pos(1), 0);
        assert_eq!(count_pos(2), 15);
        assert_eq!(count_pos(3), 25);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(heterogeneous_partition(&ds(&[1.0, -1.0]), 2, 2), Err(Error::TooFewSamples { need: 4, have: 2 })));
    }

    #[test]
    fn csv_single_row() {
        let d: LabeledDataset<f64> = parse_csv("1,0.5,0.25\n", Path::new("x.csv")).unwrap();
        assert_eq!((d.len(), d.dim()), (1, 2));
        assert_eq!(d.features().row(0), &[0.5, 0.25]);
    }

    #[test]
    fn csv_zero_label_remapped() {
        let d: LabeledDataset<f64> = parse_csv("0,1.0\n1,2.0\n", Path::new("x.csv")).unwrap();
        assert_eq!(d.labels(), &[-1.0, 1.0]);
    }

    #[test]
    fn csv_dimension_error_names_line() {
        let err = parse_csv::<f64>("1,1,2\n-1,3,4\n1,1,2,3\n", Path::new("d.csv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("d.csv:3:") && msg.contains("3 features"), "{msg}");
    }

    #[test]
    fn csv_bad_label() {
        assert!(parse_csv::<f64>("2,1\n", Path::new("d.csv")).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let a: LabeledDataset<f64> = synth_classification(50, 3, 1.0, 4).unwrap();
        let b: LabeledDataset<f64> = synth_classification(50, 3, 1.0, 4).unwrap();
        assert_eq!(a, b);
        let c: LabeledDataset<f64> = synth_classification(50, 3, 1.0, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_zero_separation_has_no_label_signal() {
        // class-conditional means of the first feature agree within sampling error
        let d: LabeledDataset<f64> = synth_classification(20_000, 2, 0.0, 1).unwrap();
        let (mut sp, mut np, mut sn, mut nn) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..d.len() {
            let (u, v) = d.sample(j);
            if v > 0.0 {
                sp += u[0];
                np += 1.0;
            } else {
                sn += u[0];
                nn += 1.0;
            }
        }
        assert!((sp / np - sn / nn).abs() < 0.05);
    }

    #[test]
    fn balanced_ranges_sizes() {
        let r = balanced_ranges(10, 4);
        assert_eq!(r, vec![0..3, 3..6, 6..8, 8..10]);
    }
}
