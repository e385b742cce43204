//! Ingestion and handling of gridded functional datasets.
//!
//! Input format: TSV or CSV, one curve per line, first field an integer
//! class label, the remaining J fields curve values on a common grid.
//! Missing values are written as NaN or an empty field. Multivariate
//! curves come as D parallel files with identical labels per line.
//!
//! Missing cells are stored with the sentinel value 0 and a false mask
//! entry. The sentinel is enforced on construction; losses and the
//! encoder rely on it and never read masked values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{mix_key, stream, SplitMix64};

/// One multivariate curve on a J-point grid with D channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalSample {
    values: Matrix,
    mask: Vec<bool>,
    label: Option<usize>,
}

impl FunctionalSample {
    /// Builds a sample, zeroing every masked entry so the sentinel
    /// convention holds no matter what the caller passed in.
    pub fn new(mut values: Matrix, mask: Vec<bool>, label: Option<usize>) -> Result<Self> {
        if mask.len() != values.rows() * values.cols() {
            return Err(Error::DimMismatch(format!(
                "mask length {} does not match {}x{} value grid",
                mask.len(),
                values.rows(),
                values.cols()
            )));
        }
        for (v, &m) in values.data_mut().iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(FunctionalSample {
            values,
            mask,
            label,
        })
    }

    pub fn fully_observed(values: Matrix, label: Option<usize>) -> Self {
        let mask = vec![true; values.rows() * values.cols()];
        FunctionalSample {
            values,
            mask,
            label,
        }
    }

    pub fn grid_len(&self) -> usize {
        self.values.rows()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn value(&self, j: usize, d: usize) -> f64 {
        self.values.get(j, d)
    }

    pub fn observed(&self, j: usize, d: usize) -> bool {
        self.mask[j * self.values.cols() + d]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn observed_count_channel(&self, d: usize) -> usize {
        (0..self.grid_len())
            .filter(|&j| self.observed(j, d))
            .count()
    }

    /// Test hook that writes a raw cell without re-applying the sentinel.
    #[cfg(test)]
    pub(crate) fn set_raw(&mut self, j: usize, d: usize, v: f64) {
        self.values.set(j, d, v);
    }

    pub(crate) fn with_parts(values: Matrix, mask: Vec<bool>, label: Option<usize>) -> Self {
        debug_assert_eq!(mask.len(), values.rows() * values.cols());
        FunctionalSample {
            values,
            mask,
            label,
        }
    }
}

/// A collection of samples sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: Vec<f64>,
    pub samples: Vec<FunctionalSample>,
    pub num_classes: usize,
    pub num_channels: usize,
    /// Original file labels indexed by class id, kept for export.
    pub class_labels: Vec<i64>,
}

impl Dataset {
    pub fn new(
        grid: Vec<f64>,
        samples: Vec<FunctionalSample>,
        num_classes: usize,
        num_channels: usize,
    ) -> Result<Self> {
        let class_labels = (0..num_classes as i64).collect();
        let ds = Dataset {
            grid,
            samples,
            num_classes,
            num_channels,
            class_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let j = self.grid.len();
        for w in self.grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig(
                    "grid must be strictly increasing".into(),
                ));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.grid_len() != j || s.channels() != self.num_channels {
                return Err(Error::DimMismatch(format!(
                    "sample {} is {}x{}, dataset is {}x{}",
                    i,
                    s.grid_len(),
                    s.channels(),
                    j,
                    self.num_channels
                )));
            }
            if let Some(label) = s.label() {
                if label >= self.num_classes {
                    return Err(Error::InvalidConfig(format!(
                        "sample {} has label {} but dataset has {} classes",
                        i, label, self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.label()).collect()
    }

    pub fn fully_observed(&self) -> bool {
        self.samples.iter().all(|s| s.mask().iter().all(|&m| m))
    }
}

/// Deterministic stratified train/test split request.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0,1), got {train_fraction}"
            )));
        }
        Ok(SplitSpec {
            train_fraction,
            seed,
        })
    }
}

/// Per-channel standardization constants from a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

fn detect_delimiter(line: &str) -> char {
    if line.contains('\t') {
        '\t'
    } else {
        ','
    }
}

fn parse_label(field: &str, line_no: usize) -> Result<i64> {
    let trimmed = field.trim();
    if let Ok(v) = trimmed.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(f) = trimmed.parse::<f64>() {
        if f.fract().abs() < 1e-9 && f.is_finite() {
            return Ok(f.round() as i64);
        }
    }
    Err(Error::Parse {
        line: line_no,
        message: format!("label '{trimmed}' is not an integer"),
    })
}

fn parse_value(field: &str, line_no: usize) -> Result<Option<f64>> {
    let trimmed = field.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    trimmed.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line: line_no,
        message: format!("bad value '{trimmed}'"),
    })
}

struct RawChannel {
    labels: Vec<i64>,
    rows: Vec<Vec<Option<f64>>>,
}

fn load_channel(path: &Path) -> Result<RawChannel> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let delim = detect_delimiter(line);
        let mut fields = line.split(delim);
        let label_field = fields.next().ok_or(Error::Parse {
            line: line_no,
            message: "empty row".into(),
        })?;
        labels.push(parse_label(label_field, line_no)?);
        let values: Vec<Option<f64>> = fields
            .map(|f| parse_value(f, line_no))
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "row has no values".into(),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("ragged row: expected {w} values, got {}", values.len()),
                });
            }
            _ => {}
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} is empty", path.display()),
        });
    }
    Ok(RawChannel { labels, rows })
}

/// Loads a dataset from one file per channel.
///
/// Labels are remapped to 0..Q-1 in sorted order of the distinct raw
/// labels; NaN or empty fields become masked cells with the 0 sentinel;
/// the grid defaults to t_j = j - 1 unless `grid` overrides it.
pub fn load_ucr(paths: &[impl AsRef<Path>], grid: Option<Vec<f64>>) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::InvalidConfig("no input files".into()));
    }
    let channels: Vec<RawChannel> = paths
        .iter()
        .map(|p| load_channel(p.as_ref()))
        .collect::<Result<_>>()?;
    let n = channels[0].rows.len();
    let j = channels[0].rows[0].len();
    for ch in &channels[1..] {
        if ch.rows.len() != n {
            return Err(Error::DimMismatch(format!(
                "channel files disagree on sample count: {} vs {}",
                n,
                ch.rows.len()
            )));
        }
        if ch.rows[0].len() != j {
            return Err(Error::DimMismatch(format!(
                "channel files disagree on grid length: {} vs {}",
                j,
                ch.rows[0].len()
            )));
        }
        for (row, (a, b)) in channels[0].labels.iter().zip(&ch.labels).enumerate() {
            if a != b {
                return Err(Error::LabelMismatch { line: row + 1 });
            }
        }
    }

    let mut distinct: Vec<i64> = channels[0].labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let class_of = |raw: i64| distinct.binary_search(&raw).expect("label in distinct set");

    let d = channels.len();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut values = Matrix::zeros(j, d);
        let mut mask = vec![false; j * d];
        for (ch_idx, ch) in channels.iter().enumerate() {
            for (t, cell) in ch.rows[i].iter().enumerate() {
                if let Some(v) = cell {
                    values.set(t, ch_idx, *v);
                    mask[t * d + ch_idx] = true;
                }
            }
        }
        let label = class_of(channels[0].labels[i]);
        samples.push(FunctionalSample::with_parts(values, mask, Some(label)));
    }

    let grid = match grid {
        Some(g) => {
            if g.len() != j {
                return Err(Error::DimMismatch(format!(
                    "grid file has {} points, data has {}",
                    g.len(),
                    j
                )));
            }
            g
        }
        None => (0..j).map(|t| t as f64).collect(),
    };

    let mut ds = Dataset::new(grid, samples, distinct.len(), d)?;
    ds.class_labels = distinct;
    Ok(ds)
}

/// Reads a grid override file: one float per line or whitespace separated.
pub fn load_grid(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut grid = Vec::new();
    for (idx, token) in text.split_whitespace().enumerate() {
        grid.push(token.parse::<f64>().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad grid value '{token}'"),
        })?);
    }
    Ok(grid)
}

/// Writes the dataset back in the input format, one file per channel,
/// plus a JSON sidecar with the shape summary. Missing cells are written
/// as NaN. Floats use shortest round-trip formatting, so a load/export
/// cycle is byte-stable.
pub fn export(ds: &Dataset, paths: &[impl AsRef<Path>], sidecar: impl AsRef<Path>) -> Result<()> {
    if paths.len() != ds.num_channels {
        return Err(Error::DimMismatch(format!(
            "{} output paths for {} channels",
            paths.len(),
            ds.num_channels
        )));
    }
    for (d, path) in paths.iter().enumerate() {
        let mut out = String::new();
        for s in &ds.samples {
            let raw = s
                .label()
                .map(|c| ds.class_labels.get(c).copied().unwrap_or(c as i64))
                .unwrap_or(-1);
            write!(out, "{raw}").expect("write to string");
            for j in 0..ds.grid_len() {
                if s.observed(j, d) {
                    write!(out, "\t{}", s.value(j, d)).expect("write to string");
                } else {
                    out.push_str("\tNaN");
                }
            }
            out.push('\n');
        }
        fs::write(path.as_ref(), out)?;
    }

    #[derive(Serialize)]
    struct Sidecar<'a> {
        #[serde(rename = "J")]
        j: usize,
        #[serde(rename = "D")]
        d: usize,
        #[serde(rename = "Q")]
        q: usize,
        #[serde(rename = "N")]
        n: usize,
        grid: &'a [f64],
    }
    let sc = Sidecar {
        j: ds.grid_len(),
        d: ds.num_channels,
        q: ds.num_classes,
        n: ds.len(),
        grid: &ds.grid,
    };
    fs::write(sidecar.as_ref(), serde_json::to_string_pretty(&sc)?)?;
    Ok(())
}

/// Stratified split. Every class with n_q >= 2 samples contributes at
/// least floor(train_fraction * n_q) (minimum 1) to the training set, and
/// the per-class counts are topped up by largest fractional remainder so
/// the overall training size is floor(train_fraction * N) where feasible.
/// A single-sample class goes entirely to train with a warning.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if ds.len() < 2 {
        return Err(Error::Degenerate(format!(
            "cannot split {} samples",
            ds.len()
        )));
    }
    // Group sample indices by label (unlabeled samples form their own stratum).
    let mut strata: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        match strata.iter_mut().find(|(l, _)| *l == s.label()) {
            Some((_, v)) => v.push(i),
            None => strata.push((s.label(), vec![i])),
        }
    }
    strata.sort_by_key(|(l, _)| l.map(|x| x as i64).unwrap_or(-1));

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut multi: Vec<(Option<usize>, &Vec<usize>)> = Vec::new();
    for (label, members) in &strata {
        if members.len() == 1 {
            log::warn!(
                "class {:?} has a single sample; assigning it to the training set",
                label
            );
            train_idx.push(members[0]);
        } else {
            multi.push((*label, members));
        }
    }

    let total: usize = multi.iter().map(|(_, m)| m.len()).sum();
    let mut counts: Vec<usize> = Vec::with_capacity(multi.len());
    let mut remainders: Vec<f64> = Vec::with_capacity(multi.len());
    for (_, members) in &multi {
        let exact = spec.train_fraction * members.len() as f64;
        counts.push((exact.floor() as usize).max(1));
        remainders.push(exact - exact.floor());
    }
    let caps: Vec<usize> = multi.iter().map(|(_, m)| m.len() - 1).collect();
    let base_sum: usize = counts.iter().sum();
    let goal =
        ((spec.train_fraction * total as f64).floor() as usize).clamp(base_sum, caps.iter().sum());
    let mut order: Vec<usize> = (0..multi.len()).collect();
    // Stable sort keeps class order on remainder ties.
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).expect("finite"));
    let mut extra = goal - base_sum;
    while extra > 0 {
        let mut progressed = false;
        for &idx in &order {
            if extra == 0 {
                break;
            }
            if counts[idx] < caps[idx] {
                counts[idx] += 1;
                extra -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    for (stratum, (label, members)) in multi.iter().enumerate() {
        let stratum_key = label.map(|x| x as u64 + 1).unwrap_or(0);
        let mut rng = SplitMix64::new(mix_key(&[spec.seed, stream::SPLIT, stratum_key]));
        let mut shuffled = (*members).clone();
        rng.shuffle(&mut shuffled);
        train_idx.extend_from_slice(&shuffled[..counts[stratum]]);
        test_idx.extend_from_slice(&shuffled[counts[stratum]..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let subset = |idx: &[usize]| -> Dataset {
        let mut d = Dataset {
            grid: ds.grid.clone(),
            samples: idx.iter().map(|&i| ds.samples[i].clone()).collect(),
            num_classes: ds.num_classes,
            num_channels: ds.num_channels,
            class_labels: ds.class_labels.clone(),
        };
        d.grid.shrink_to_fit();
        d
    };
    Ok((subset(&train_idx), subset(&test_idx)))
}

/// Keeps a uniform random subset of round(keep_fraction * J) observed
/// points per sample and channel; everything else becomes missing.
pub fn downsample(ds: &Dataset, keep_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "keep_fraction must be in (0,1], got {keep_fraction}"
        )));
    }
    let j = ds.grid_len();
    let target = (keep_fraction * j as f64).round() as usize;
    if target < 2 {
        return Err(Error::Degenerate(format!(
            "keep_fraction {keep_fraction} leaves {target} of {j} points; curves degenerate"
        )));
    }
    if keep_fraction == 1.0 {
        return Ok(ds.clone());
    }
    let d = ds.num_channels;
    let mut samples = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let mut values = Matrix::zeros(j, d);
        let mut mask = vec![false; j * d];
        for ch in 0..d {
            let observed: Vec<usize> = (0..j).filter(|&t| s.observed(t, ch)).collect();
            let keep = target.min(observed.len());
            let mut rng =
                SplitMix64::new(mix_key(&[seed, stream::DOWNSAMPLE, i as u64, ch as u64]));
            let chosen = rng.sample_indices(observed.len(), keep);
            for pos in chosen {
                let t = observed[pos];
                values.set(t, ch, s.value(t, ch));
                mask[t * d + ch] = true;
            }
        }
        samples.push(FunctionalSample::with_parts(values, mask, s.label()));
    }
    Ok(Dataset {
        grid: ds.grid.clone(),
        samples,
        num_classes: ds.num_classes,
        num_channels: ds.num_channels,
        class_labels: ds.class_labels.clone(),
    })
}

/// Per-channel standardization fitted on observed training entries and
/// applied to both sets. A standard deviation below 1e-12 is replaced by 1.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, ChannelStats)> {
    if train.is_empty() {
        return Err(Error::Degenerate(
            "cannot standardize an empty training set".into(),
        ));
    }
    let d = train.num_channels;
    let mut means = vec![0.0; d];
    let mut sds = vec![1.0; d];
    for ch in 0..d {
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in &train.samples {
            for j in 0..train.grid_len() {
                if s.observed(j, ch) {
                    sum += s.value(j, ch);
                    count += 1;
                }
            }
        }
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        let mut ss = 0.0;
        for s in &train.samples {
            for j in 0..train.grid_len() {
                if s.observed(j, ch) {
                    let dlt = s.value(j, ch) - mean;
                    ss += dlt * dlt;
                }
            }
        }
        let sd = if count > 1 {
            (ss / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        means[ch] = mean;
        sds[ch] = if sd < 1e-12 { 1.0 } else { sd };
    }
    let stats = ChannelStats { means, sds };
    Ok((
        apply_standardization(train, &stats),
        apply_standardization(test, &stats),
        stats,
    ))
}

/// Applies stored standardization constants to a dataset.
pub fn apply_standardization(ds: &Dataset, stats: &ChannelStats) -> Dataset {
    let d = ds.num_channels;
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut values = Matrix::zeros(ds.grid_len(), d);
            for j in 0..ds.grid_len() {
                for ch in 0..d {
                    if s.observed(j, ch) {
                        values.set(j, ch, (s.value(j, ch) - stats.means[ch]) / stats.sds[ch]);
                    }
                }
            }
            FunctionalSample::with_parts(values, s.mask().to_vec(), s.label())
        })
        .collect();
    Dataset {
        grid: ds.grid.clone(),
        samples,
        num_classes: ds.num_classes,
        num_channels: ds.num_channels,
        class_labels: ds.class_labels.clone(),
    }
}

/// Inverts standardization on a reconstructed value.
pub fn destandardize_value(v: f64, channel: usize, stats: &ChannelStats) -> f64 {
    v * stats.sds[channel] + stats.means[channel]
}
