//! Labeled datasets, exponential long-tail downsampling, a synthetic Gaussian
//! benchmark and a CSV loader.
//!
//! Class indices are ordered by ascending training count, so class `0` is the
//! rarest and class `L-1` the most frequent.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    features: Matrix,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut class_counts = vec![0usize; classes];
        for &y in &labels {
            *class_counts
                .get_mut(y)
                .ok_or_else(|| Error::arg(format!("label {y} out of range for {classes} classes")))? += 1;
        }
        Ok(LabeledDataset {
            name: name.into(),
            features,
            labels,
            class_counts,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_sorted_by_count(&self) -> bool {
        self.class_counts.windows(2).all(|w| w[0] <= w[1])
    }

    /// Keeps the rows in `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::arg(format!("row {bad} out of range")));
        }
        LabeledDataset::new(
            self.name.clone(),
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes(),
        )
    }

    /// Applies `map[old] = new` to every label.
    pub fn relabel(&self, map: &[usize]) -> Result<Self> {
        if map.len() != self.num_classes() {
            return Err(Error::shape("relabel map must cover every class"));
        }
        let mut seen = vec![false; map.len()];
        for &m in map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::arg("relabel map is not a permutation"));
            }
        }
        LabeledDataset::new(
            self.name.clone(),
            self.features.clone(),
            self.labels.iter().map(|&y| map[y]).collect(),
            self.num_classes(),
        )
    }

    /// Permutation sorting classes by ascending count, ties kept in index
    /// order. Returns `map[old] = new`.
    pub fn count_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.num_classes()).collect();
        order.sort_by_key(|&j| (self.class_counts[j], j));
        let mut map = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            map[old] = new;
        }
        map
    }
}

/// Per-class sizes `round(λ^{L-1-j} n0)` with `λ = ratio^{-1/(L-1)}`.
pub fn exponential_profile(n0: usize, classes: usize, ratio: f64) -> Result<Vec<usize>> {
    if classes == 0 || n0 == 0 {
        return Err(Error::arg("need at least one class and one sample per class"));
    }
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::arg(format!("imbalance ratio must be at least 1, got {ratio}")));
    }
    if classes == 1 {
        return Ok(vec![n0]);
    }
    let lambda = ratio.powf(-1.0 / (classes - 1) as f64);
    let counts: Vec<usize> = (0..classes)
        .map(|j| (lambda.powi((classes - 1 - j) as i32) * n0 as f64).round() as usize)
        .collect();
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::arg(format!(
            "ratio {ratio} with {n0} samples per class leaves class {j} empty"
        )));
    }
    Ok(counts)
}

/// Subsamples each class of a balanced-or-larger dataset to an exponential
/// profile anchored at the smallest class size.
pub fn downsample_exponential(data: &LabeledDataset, ratio: f64, rng: &mut RngState) -> Result<LabeledDataset> {
    let n0 = data.class_counts().iter().copied().min().unwrap_or(0);
    let target = exponential_profile(n0, data.num_classes(), ratio)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut keep = Vec::with_capacity(target.iter().sum());
    for (rows, &t) in by_class.iter_mut().zip(&target) {
        rng.shuffle(rows);
        let mut chosen = rows[..t].to_vec();
        chosen.sort_unstable();
        keep.extend(chosen);
    }
    keep.sort_unstable();
    data.subset(&keep)
}

/// Gaussian class-conditional benchmark: class means are random directions of
/// norm `separation` and features add isotropic noise of scale `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    /// Size of the largest class before downsampling.
    pub head_size: usize,
    pub val_per_class: usize,
    pub separation: f64,
    pub sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            dim: 16,
            head_size: 1210,
            val_per_class: 200,
            separation: 3.0,
            sigma: 1.0,
        }
    }
}

/// Long-tailed training set plus a balanced validation set from the same
/// class-conditional distributions.
pub fn synth_gaussian_longtail(cfg: &SynthConfig, ratio: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if cfg.dim == 0 || cfg.val_per_class == 0 {
        return Err(Error::arg("dimension and validation size must be positive"));
    }
    if !(cfg.sigma > 0.0) || !(cfg.separation >= 0.0) {
        return Err(Error::arg("sigma must be positive and separation non-negative"));
    }
    let counts = exponential_profile(cfg.head_size, cfg.classes, ratio)?;
    let root = RngState::new(seed);
    let mut mean_rng = root.substream(10);
    let means: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.dim).map(|_| mean_rng.normal()).collect();
            let norm = crate::numerics::l2_norm(&v).max(f64::MIN_POSITIVE);
            v.iter().map(|x| x * cfg.separation / norm).collect()
        })
        .collect();
    let sample = |sizes: &[usize], rng: &mut RngState, name: &str| {
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(total * cfg.dim);
        let mut labels = Vec::with_capacity(total);
        for (j, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                data.extend(means[j].iter().map(|m| m + cfg.sigma * rng.normal()));
                labels.push(j);
            }
        }
        LabeledDataset::new(name, Matrix::from_vec(total, cfg.dim, data)?, labels, cfg.classes)
    };
    let train = sample(&counts, &mut root.substream(11), "synthetic-train")?;
    let val = sample(&vec![cfg.val_per_class; cfg.classes], &mut root.substream(12), "synthetic-val")?;
    Ok((train, val))
}

/// Reads `feature_1,...,feature_d,label` rows. Labels are arbitrary tokens;
/// they are mapped to indices in ascending order of frequency (ties by first
/// appearance). Returns the dataset and `original[new_index]`.
pub fn load_csv(path: &Path, has_header: bool) -> Result<(LabeledDataset, Vec<String>)> {
    let rows = read_rows(path, has_header)?;
    let mut first_seen: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, (_, _, tok)) in rows.iter().enumerate() {
        first_seen.entry(tok.as_str()).or_insert((i, 0)).1 += 1;
    }
    let mut tokens: Vec<(&str, usize, usize)> = first_seen.iter().map(|(t, &(f, c))| (*t, f, c)).collect();
    tokens.sort_by_key(|&(_, first, count)| (count, first));
    let names: Vec<String> = tokens.iter().map(|t| t.0.to_string()).collect();
    let ds = assemble(path, rows, &names)?;
    Ok((ds, names))
}

/// Like [`load_csv`] but with a fixed label order, e.g. the one returned when
/// loading the training split.
pub fn load_csv_with_labels(path: &Path, has_header: bool, names: &[String]) -> Result<LabeledDataset> {
    let rows = read_rows(path, has_header)?;
    assemble(path, rows, names)
}

type Row = (usize, Vec<f64>, String);

fn read_rows(path: &Path, has_header: bool) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    let mut width = None;
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "expected at least one feature and a label".into(),
            });
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", width.unwrap_or(0), rec.len()),
            });
        }
        let mut feats = Vec::with_capacity(rec.len() - 1);
        for (c, field) in rec.iter().take(rec.len() - 1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {}: '{field}' is not a number", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {}: non-finite value", c + 1),
                });
            }
            feats.push(v);
        }
        let label = rec.get(rec.len() - 1).unwrap_or_default().to_string();
        if label.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty label".into(),
            });
        }
        rows.push((line, feats, label));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

fn assemble(path: &Path, rows: Vec<Row>, names: &[String]) -> Result<LabeledDataset> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let d = rows[0].1.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    let mut labels = Vec::with_capacity(rows.len());
    for (line, feats, tok) in &rows {
        let y = *index.get(tok.as_str()).ok_or_else(|| Error::Parse {
            line: *line,
            message: format!("unknown label '{tok}'"),
        })?;
        data.extend_from_slice(feats);
        labels.push(y);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, Matrix::from_vec(rows.len(), d, data)?, labels, names.len())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn profile_hand_values() {
        assert_eq!(exponential_profile(100, 3, 100.0).unwrap(), vec![1, 10, 100]);
        assert_eq!(exponential_profile(50, 4, 1.0).unwrap(), vec![50; 4]);
        let p = exponential_profile(1210, 10, 100.0).unwrap();
        assert_eq!(p[9], 1210);
        assert_eq!(p[0], 12);
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
        assert!(exponential_profile(10, 5, 1000.0).is_err());
        assert!(exponential_profile(10, 5, 0.5).is_err());
    }

    #[test]
    fn downsample_matches_profile() {
        let cfg = SynthConfig {
            classes: 4,
            dim: 2,
            head_size: 50,
            val_per_class: 50,
            ..SynthConfig::default()
        };
        let (_, balanced) = synth_gaussian_longtail(&cfg, 1.0, 1).unwrap();
        let mut rng = RngState::new(2);
        let lt = downsample_exponential(&balanced, 10.0, &mut rng).unwrap();
        assert_eq!(lt.class_counts(), exponential_profile(50, 4, 10.0).unwrap().as_slice());
        assert!(lt.is_sorted_by_count());
    }

    #[test]
    fn synth_is_deterministic_and_long_tailed() {
        let cfg = SynthConfig::default();
        let (a, va) = synth_gaussian_longtail(&cfg, 100.0, 5).unwrap();
        let (b, _) = synth_gaussian_longtail(&cfg, 100.0, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.is_sorted_by_count());
        assert_eq!(a.class_counts()[0], 12);
        assert_eq!(va.class_counts(), &[200; 10]);
        let (c, _) = synth_gaussian_longtail(&cfg, 100.0, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn relabel_by_count() {
        let x = Matrix::zeros(6, 1);
        let ds = LabeledDataset::new("t", x, vec![0, 0, 0, 1, 2, 2], 3).unwrap();
        let map = ds.count_order();
        assert_eq!(map, vec![2, 0, 1]);
        let r = ds.relabel(&map).unwrap();
        assert_eq!(r.class_counts(), &[1, 2, 3]);
        assert!(ds.relabel(&[0, 0, 1]).is_err());
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_reindexes_by_frequency() {
        let f = write_tmp("x1,x2,y\n0.1,0.2,cat\n1,2,dog\n3,4,dog\n5,6,bird\n7,8,dog\n9,10,bird\n");
        let (ds, names) = load_csv(f.path(), true).unwrap();
        assert_eq!(names, vec!["cat", "bird", "dog"]);
        assert_eq!(ds.class_counts(), &[1, 2, 3]);
        assert_eq!(ds.labels()[0], 0);
        assert_eq!(ds.features().row(1), &[1.0, 2.0]);
        let v = write_tmp("0,0,dog\n1,1,cat\n");
        let val = load_csv_with_labels(v.path(), false, &names).unwrap();
        assert_eq!(val.labels(), &[2, 0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let f = write_tmp("a,b,y\n1,2,x\n1,oops,y\n");
        match load_csv(f.path(), true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("1,2,x\n1,2,3,y\n");
        match load_csv(f.path(), false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("1,2,x\n");
        let (_, names) = load_csv(f.path(), false).unwrap();
        let g = write_tmp("1,2,z\n");
        assert!(load_csv_with_labels(g.path(), false, &names).is_err());
        assert!(load_csv(Path::new("/nonexistent/file.csv"), false).is_err());
    }
}
