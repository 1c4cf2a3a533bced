//! Tabular datasets: CSV ingestion, standardization, seeded splits and the
//! out-of-distribution generator.
//!
//! Features and targets are stored standardized (zero mean, unit sample std per
//! column). The original per-column mean and std are kept in [`Standardization`]
//! so rows can be mapped back to original units and re-emitted as CSV.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Columns with a std below this are treated as constant.
pub const MIN_STD: f64 = 1e-12;

/// Per-column location/scale of the original (unstandardized) data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Standardization {
    /// Column mean and sample std (n − 1 divisor; 0 for a single row).
    pub fn fit(raw_features: ArrayView2<f64>, raw_targets: ArrayView2<f64>) -> Self {
        let (feature_mean, feature_std) = column_moments(raw_features);
        let (target_mean, target_std) = column_moments(raw_targets);
        Standardization {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        }
    }

    /// The divisor used for a column: its std, or 1 for constant columns.
    pub fn scale(std: f64) -> f64 {
        if std < MIN_STD {
            1.0
        } else {
            std
        }
    }

    fn apply(values: &mut Array2<f64>, mean: &[f64], std: &[f64]) {
        for mut row in values.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) / Self::scale(std[j]);
            }
        }
    }

    fn invert(values: &mut Array2<f64>, mean: &[f64], std: &[f64]) {
        for mut row in values.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * Self::scale(std[j]) + mean[j];
            }
        }
    }
}

fn column_moments(values: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = values.nrows();
    let mut means = Vec::with_capacity(values.ncols());
    let mut stds = Vec::with_capacity(values.ncols());
    for col in values.columns() {
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        means.push(mean);
        stds.push(std);
    }
    (means, stds)
}

/// Original CSV header and which of its columns are targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub header: Vec<String>,
    pub target_columns: Vec<usize>,
}

impl ColumnLayout {
    fn synthetic(features: usize, targets: usize) -> Self {
        let mut header: Vec<String> = (0..features).map(|j| format!("x{j}")).collect();
        header.extend((0..targets).map(|t| format!("y{t}")));
        ColumnLayout {
            header,
            target_columns: (features..features + targets).collect(),
        }
    }

    fn feature_columns(&self) -> Vec<usize> {
        (0..self.header.len())
            .filter(|c| !self.target_columns.contains(c))
            .collect()
    }
}

/// Which CSV columns hold the regression targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelector {
    /// The last column.
    #[default]
    Last,
    /// 0-based column indices.
    Indices(Vec<usize>),
    /// Header names.
    Names(Vec<String>),
}

impl TargetSelector {
    /// Parse a command-line selector: a comma-separated list of 0-based
    /// indices or header names.
    pub fn parse(text: &str) -> Self {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        match parts.iter().map(|p| p.parse::<usize>()).collect() {
            Ok(indices) => TargetSelector::Indices(indices),
            Err(_) => TargetSelector::Names(parts.iter().map(|p| p.to_string()).collect()),
        }
    }

    fn resolve(&self, header: &[String]) -> Result<Vec<usize>> {
        let cols = match self {
            TargetSelector::Last => vec![header.len() - 1],
            TargetSelector::Indices(idx) => {
                if let Some(bad) = idx.iter().find(|&&i| i >= header.len()) {
                    return Err(Error::Dataset(format!(
                        "target column {bad} out of range ({} columns)",
                        header.len()
                    )));
                }
                idx.clone()
            }
            TargetSelector::Names(names) => names
                .iter()
                .map(|n| {
                    header.iter().position(|h| h == n).ok_or_else(|| {
                        Error::Dataset(format!("target column {n:?} not in header"))
                    })
                })
                .collect::<Result<_>>()?,
        };
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() || sorted.len() != cols.len() {
            return Err(Error::Dataset("target selector must name distinct columns".into()));
        }
        if sorted.len() == header.len() {
            return Err(Error::Dataset("no feature columns left after target selection".into()));
        }
        Ok(sorted)
    }
}

/// A standardized tabular dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Array2<f64>,
    targets: Array2<f64>,
    stats: Standardization,
    layout: ColumnLayout,
    /// Source row index of each row, for provenance and disjointness audits.
    rows: Vec<usize>,
}

impl Dataset {
    /// Standardize raw values with statistics fitted on them.
    pub fn from_raw(
        name: impl Into<String>,
        raw_features: Array2<f64>,
        raw_targets: Array2<f64>,
    ) -> Result<Self> {
        let stats = Standardization::fit(raw_features.view(), raw_targets.view());
        let layout = ColumnLayout::synthetic(raw_features.ncols(), raw_targets.ncols());
        Self::from_raw_with(name, raw_features, raw_targets, stats, layout)
    }

    /// Standardize raw values with externally supplied statistics.
    pub fn from_raw_with(
        name: impl Into<String>,
        mut raw_features: Array2<f64>,
        mut raw_targets: Array2<f64>,
        stats: Standardization,
        layout: ColumnLayout,
    ) -> Result<Self> {
        let n = raw_features.nrows();
        if n == 0 || raw_features.ncols() == 0 || raw_targets.ncols() == 0 {
            return Err(Error::Dataset(format!(
                "need N, D, T >= 1 (got N={n}, D={}, T={})",
                raw_features.ncols(),
                raw_targets.ncols()
            )));
        }
        if raw_targets.nrows() != n {
            return Err(Error::shape(format!("{n} target rows"), raw_targets.nrows()));
        }
        if stats.feature_mean.len() != raw_features.ncols()
            || stats.feature_std.len() != raw_features.ncols()
            || stats.target_mean.len() != raw_targets.ncols()
            || stats.target_std.len() != raw_targets.ncols()
        {
            return Err(Error::shape(
                format!("{} features / {} targets", raw_features.ncols(), raw_targets.ncols()),
                format!(
                    "statistics for {} features / {} targets",
                    stats.feature_mean.len(),
                    stats.target_mean.len()
                ),
            ));
        }
        if raw_features.iter().chain(raw_targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values"));
        }
        Standardization::apply(&mut raw_features, &stats.feature_mean, &stats.feature_std);
        Standardization::apply(&mut raw_targets, &stats.target_mean, &stats.target_std);
        Ok(Dataset {
            name: name.into(),
            features: raw_features,
            targets: raw_targets,
            stats,
            layout,
            rows: (0..n).collect(),
        })
    }

    /// Build directly from already-standardized matrices (statistics are identity).
    pub fn from_standardized(
        name: impl Into<String>,
        features: Array2<f64>,
        targets: Array2<f64>,
    ) -> Result<Self> {
        let stats = Standardization {
            feature_mean: vec![0.0; features.ncols()],
            feature_std: vec![1.0; features.ncols()],
            target_mean: vec![0.0; targets.ncols()],
            target_std: vec![1.0; targets.ncols()],
        };
        let layout = ColumnLayout::synthetic(features.ncols(), targets.ncols());
        Self::from_raw_with(name, features, targets, stats, layout)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    pub fn stats(&self) -> &Standardization {
        &self.stats
    }

    pub fn layout(&self) -> &ColumnLayout {
        &self.layout
    }

    pub fn feature_mean(&self) -> &[f64] {
        &self.stats.feature_mean
    }

    pub fn feature_std(&self) -> &[f64] {
        &self.stats.feature_std
    }

    pub fn source_rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn raw_features(&self) -> Array2<f64> {
        let mut out = self.features.clone();
        Standardization::invert(&mut out, &self.stats.feature_mean, &self.stats.feature_std);
        out
    }

    pub fn raw_targets(&self) -> Array2<f64> {
        let mut out = self.targets.clone();
        Standardization::invert(&mut out, &self.stats.target_mean, &self.stats.target_std);
        out
    }

    /// Rows at `idx`, in that order. Statistics and layout are shared.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
            stats: self.stats.clone(),
            layout: self.layout.clone(),
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Copy of this dataset with features replaced (same shape).
    pub(crate) fn with_features(&self, features: Array2<f64>) -> Dataset {
        debug_assert_eq!(features.dim(), self.features.dim());
        Dataset {
            features,
            ..self.clone()
        }
    }

    /// Write in original units with the original header ordering.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.layout.header)?;
        let raw_x = self.raw_features();
        let raw_y = self.raw_targets();
        let feature_cols = self.layout.feature_columns();
        let mut record = vec![String::new(); self.layout.header.len()];
        for i in 0..self.len() {
            for (j, &c) in feature_cols.iter().enumerate() {
                record[c] = raw_x[[i, j]].to_string();
            }
            for (t, &c) in self.layout.target_columns.iter().enumerate() {
                record[c] = raw_y[[i, t]].to_string();
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Load a comma-separated file with a header row and standardize it.
pub fn load_csv(path: impl AsRef<Path>, targets: &TargetSelector) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, dataset_name(path), targets, None)
}

/// Load a CSV and standardize it with previously fitted statistics
/// (e.g. the training set's), so new rows land in the model's input space.
pub fn load_csv_with(
    path: impl AsRef<Path>,
    targets: &TargetSelector,
    stats: &Standardization,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, dataset_name(path), targets, Some(stats))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

pub fn parse_csv<R: Read>(
    reader: R,
    name: impl Into<String>,
    targets: &TargetSelector,
    stats: Option<&Standardization>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Dataset("missing header row".into()));
    }
    let target_columns = targets.resolve(&header)?;
    let layout = ColumnLayout {
        header,
        target_columns,
    };
    let feature_cols = layout.feature_columns();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut n = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != layout.header.len() {
            return Err(Error::Dataset(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                layout.header.len()
            )));
        }
        let parse = |c: usize| -> Result<f64> {
            let cell = record[c].trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: c + 1,
                    name: layout.header[c].clone(),
                    value: cell.to_string(),
                }),
            }
        };
        for &c in &feature_cols {
            xs.push(parse(c)?);
        }
        for &c in &layout.target_columns {
            ys.push(parse(c)?);
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::Dataset(format!("need at least 2 data rows, found {n}")));
    }
    let raw_x = Array2::from_shape_vec((n, feature_cols.len()), xs)
        .map_err(|e| Error::Dataset(e.to_string()))?;
    let raw_y = Array2::from_shape_vec((n, layout.target_columns.len()), ys)
        .map_err(|e| Error::Dataset(e.to_string()))?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => Standardization::fit(raw_x.view(), raw_y.view()),
    };
    Dataset::from_raw_with(name, raw_x, raw_y, stats, layout)
}

/// Fractions of the full dataset assigned to each partition; the remainder is unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub sweep_frac: f64,
    pub calib_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    /// 20% test; the remaining 80% training pool gives 10% of itself each to
    /// the hyperparameter-sweep and calibration splits.
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.64,
            test_frac: 0.2,
            sweep_frac: 0.08,
            calib_frac: 0.08,
            seed: 0,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let in_open = |f: f64| f > 0.0 && f < 1.0;
        let in_half_open = |f: f64| (0.0..1.0).contains(&f);
        if !in_open(self.train_frac) || !in_open(self.test_frac) {
            return Err(Error::Split("train_frac and test_frac must lie in (0, 1)".into()));
        }
        if !in_half_open(self.sweep_frac) || !in_half_open(self.calib_frac) {
            return Err(Error::Split("sweep_frac and calib_frac must lie in [0, 1)".into()));
        }
        let total = self.fractions().iter().sum::<f64>();
        if total > 1.0 + 1e-12 {
            return Err(Error::Split(format!("fractions sum to {total} > 1")));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 4] {
        [self.train_frac, self.test_frac, self.sweep_frac, self.calib_frac]
    }
}

/// Partition sizes for `n` rows: floor each share, then hand the rows lost to
/// flooring (up to floor of the total share) to the partitions with the largest
/// fractional remainders, earlier partitions first on ties.
pub fn partition_sizes(n: usize, fractions: &[f64]) -> Vec<usize> {
    const SLACK: f64 = 1e-9;
    let total_share: f64 = fractions.iter().sum();
    let target = ((total_share * n as f64) + SLACK).floor().min(n as f64) as usize;
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| (e + SLACK).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).filter(|&k| fractions[k] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(target.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    sizes
}

/// The four partitions produced by [`split`].
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    /// `None` when `sweep_frac` is zero.
    pub sweep: Option<Dataset>,
    /// `None` when `calib_frac` is zero.
    pub calib: Option<Dataset>,
}

/// Seeded disjoint partition of `ds` into train / test / sweep / calib.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let fractions = spec.fractions();
    let sizes = partition_sizes(ds.len(), &fractions);
    for (k, (&size, &frac)) in sizes.iter().zip(&fractions).enumerate() {
        if frac > 0.0 && size == 0 {
            let name = ["train", "test", "sweep", "calib"][k];
            return Err(Error::Split(format!(
                "{name} partition would be empty ({} rows, fraction {frac})",
                ds.len()
            )));
        }
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut rng::rng(spec.seed));

    let mut start = 0;
    let mut parts = sizes.iter().map(|&size| {
        let idx = &perm[start..start + size];
        start += size;
        (size > 0).then(|| ds.select(idx))
    });
    let mut next = || parts.next().flatten();
    let train = next().expect("train partition is non-empty");
    let test = next().expect("test partition is non-empty");
    let sweep = next();
    let calib = next();
    Ok(Splits {
        train,
        test,
        sweep,
        calib,
    })
}

/// Parameters of the synthetic out-of-distribution shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OodSpec {
    /// Mean of the added noise, in units of the feature std.
    pub shift_factor: f64,
    /// Std of the added noise, in units of the feature std.
    pub noise_std_factor: f64,
    pub seed: u64,
    /// Flip the shift direction per sample with probability 1/2.
    pub random_sign: bool,
}

impl Default for OodSpec {
    fn default() -> Self {
        OodSpec {
            shift_factor: 4.0,
            noise_std_factor: 0.5,
            seed: 0,
            random_sign: false,
        }
    }
}

/// Push every row out of distribution by adding Normal(shift·σ, noise·σ) per
/// feature. Features are standardized, so σ is 1 except for constant columns,
/// which are left untouched. Targets are copied.
pub fn generate_ood(ds: &Dataset, spec: &OodSpec) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::Dataset("cannot generate OoD data from an empty dataset".into()));
    }
    if !spec.shift_factor.is_finite() || !spec.noise_std_factor.is_finite() {
        return Err(Error::NonFinite("OoD spec"));
    }
    let noise = Normal::new(spec.shift_factor, spec.noise_std_factor)
        .map_err(|e| Error::Invalid(format!("noise_std_factor: {e}")))?;
    let mut rng = rng::rng(spec.seed);
    let constant: Vec<bool> = ds.feature_std().iter().map(|&s| s < MIN_STD).collect();
    let mut features = ds.features().clone();
    for mut row in features.rows_mut() {
        let sign = if spec.random_sign && rng.random_bool(0.5) {
            -1.0
        } else {
            1.0
        };
        for (j, v) in row.iter_mut().enumerate() {
            let n = noise.sample(&mut rng);
            if !constant[j] {
                *v += sign * n;
            }
        }
    }
    Ok(ds.with_features(features).with_name(format!("{}-ood", ds.name())))
}

/// Seeded synthetic regression tasks used for end-to-end checks.
pub mod synthetic {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    pub enum SyntheticKind {
        /// y = Σ w_j x_j + noise, weights drawn from N(0, 1).
        Linear,
        /// y = Σ sin(x_j) + noise.
        Sinusoidal,
        /// y = Σ x_j² + noise.
        Quadratic,
    }

    impl SyntheticKind {
        pub fn name(self) -> &'static str {
            match self {
                SyntheticKind::Linear => "linear",
                SyntheticKind::Sinusoidal => "sinusoidal",
                SyntheticKind::Quadratic => "quadratic",
            }
        }

        pub const ALL: [SyntheticKind; 3] = [
            SyntheticKind::Linear,
            SyntheticKind::Sinusoidal,
            SyntheticKind::Quadratic,
        ];
    }

    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct SyntheticSpec {
        pub kind: SyntheticKind,
        #[serde(default = "default_rows")]
        pub rows: usize,
        #[serde(default = "default_features")]
        pub features: usize,
        #[serde(default = "default_noise")]
        pub noise: f64,
        #[serde(default)]
        pub seed: u64,
    }

    fn default_rows() -> usize {
        2000
    }
    fn default_features() -> usize {
        8
    }
    fn default_noise() -> f64 {
        0.1
    }

    impl SyntheticSpec {
        pub fn new(kind: SyntheticKind, seed: u64) -> Self {
            SyntheticSpec {
                kind,
                rows: default_rows(),
                features: default_features(),
                noise: default_noise(),
                seed,
            }
        }
    }

    /// Inputs are i.i.d. N(0, 1).
    pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
        if spec.rows < 2 || spec.features == 0 {
            return Err(Error::Dataset("synthetic data needs rows >= 2 and features >= 1".into()));
        }
        let mut rng = rng::rng(spec.seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let weights: Vec<f64> = (0..spec.features).map(|_| std_normal.sample(&mut rng)).collect();
        let x = Array2::from_shape_simple_fn((spec.rows, spec.features), || {
            std_normal.sample(&mut rng)
        });
        let y: Array1<f64> = x
            .rows()
            .into_iter()
            .map(|row| {
                let clean: f64 = match spec.kind {
                    SyntheticKind::Linear => row.iter().zip(&weights).map(|(a, w)| a * w).sum(),
                    SyntheticKind::Sinusoidal => row.iter().map(|a| a.sin()).sum(),
                    SyntheticKind::Quadratic => row.iter().map(|a| a * a).sum(),
                };
                clean + spec.noise * std_normal.sample(&mut rng)
            })
            .collect();
        let n = y.len();
        Dataset::from_raw(spec.kind.name(), x, y.into_shape_with_order((n, 1)).expect("column"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn csv_ds(text: &str) -> Result<Dataset> {
        parse_csv(text.as_bytes(), "t", &TargetSelector::Last, None)
    }

    #[test]
    fn constant_column_standardizes_to_zero() {
        let ds = csv_ds("a,b,y\n1,5,0\n2,5,1\n3,5,2\n").unwrap();
        assert!(ds.features().column(1).iter().all(|&v| v == 0.0));
        assert_eq!(ds.feature_std()[1], 0.0);
    }

    #[test]
    fn parse_error_names_row() {
        let text = "a,y\n1,1\n2,2\n3,3\n4,4\nabc,5\n";
        match csv_ds(text) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 5);
                assert_eq!(column, 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_error_cases() {
        assert!(matches!(csv_ds("a,y\n1,2\n"), Err(Error::Dataset(_))));
        let sel = TargetSelector::Indices(vec![5]);
        assert!(parse_csv("a,y\n1,2\n3,4\n".as_bytes(), "t", &sel, None).is_err());
        assert!(load_csv("/definitely/not/here.csv", &TargetSelector::Last).is_err());
        assert!(matches!(csv_ds("a,y\n1,inf\n2,3\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn target_selector_parsing() {
        assert_eq!(TargetSelector::parse("3"), TargetSelector::Indices(vec![3]));
        assert_eq!(TargetSelector::parse("0, 2"), TargetSelector::Indices(vec![0, 2]));
        assert_eq!(
            TargetSelector::parse("price"),
            TargetSelector::Names(vec!["price".into()])
        );
        let ds = parse_csv(
            "y,a,b\n1,2,3\n4,5,7\n".as_bytes(),
            "t",
            &TargetSelector::parse("y"),
            None,
        )
        .unwrap();
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.layout().target_columns, vec![0]);
    }

    #[test]
    fn csv_reemits_original_header_and_values() {
        let text = "y,a,b\n1.5,2,3\n4,5,7.25\n-1,0,1\n";
        let ds = parse_csv(text.as_bytes(), "t", &TargetSelector::parse("y"), None).unwrap();
        let mut out = Vec::new();
        ds.write_csv_to(&mut out).unwrap();
        let back = parse_csv(out.as_slice(), "t", &TargetSelector::parse("y"), None).unwrap();
        assert_eq!(back.layout(), ds.layout());
        for (a, b) in back.raw_features().iter().zip(ds.raw_features().iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn sizes_floor_then_distribute() {
        assert_eq!(partition_sizes(1000, &[0.7, 0.1, 0.1, 0.1]), vec![700, 100, 100, 100]);
        assert_eq!(partition_sizes(10, &[0.8, 0.2, 0.0, 0.0]), vec![8, 2, 0, 0]);
        // 3 rows split in thirds: every row assigned.
        let s = partition_sizes(3, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(s, vec![1, 1, 1, 0]);
        // 0.29 * 100 is 28.999999999999996 in binary; slack keeps it at 29.
        assert_eq!(partition_sizes(100, &[0.29, 0.71, 0.0, 0.0]), vec![29, 71, 0, 0]);
    }

    #[test]
    fn split_is_deterministic_and_validated() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64);
        let y = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let ds = Dataset::from_raw("d", x, y).unwrap();
        let spec = SplitSpec {
            train_frac: 0.8,
            test_frac: 0.2,
            sweep_frac: 0.0,
            calib_frac: 0.0,
            seed: 7,
        };
        let a = split(&ds, &spec).unwrap();
        let b = split(&ds, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 8);
        assert_eq!(a.test.len(), 2);
        assert!(a.sweep.is_none() && a.calib.is_none());

        let bad = SplitSpec {
            train_frac: 0.9,
            test_frac: 0.2,
            ..spec
        };
        assert!(matches!(split(&ds, &bad), Err(Error::Split(_))));

        let tiny = SplitSpec {
            train_frac: 0.5,
            test_frac: 0.4,
            sweep_frac: 0.05,
            calib_frac: 0.0,
            seed: 0,
        };
        assert!(matches!(split(&ds, &tiny), Err(Error::Split(_))));
    }

    #[test]
    fn degenerate_noise_shifts_by_exactly_four() {
        let ds = Dataset::from_raw("d", array![[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]], array![[0.0], [1.0], [2.0]])
            .unwrap();
        let spec = OodSpec {
            noise_std_factor: 0.0,
            ..OodSpec::default()
        };
        let ood = generate_ood(&ds, &spec).unwrap();
        for i in 0..3 {
            assert_eq!(ood.features()[[i, 0]], ds.features()[[i, 0]] + 4.0);
            // constant column untouched
            assert_eq!(ood.features()[[i, 1]], ds.features()[[i, 1]]);
        }
        assert_eq!(ood.targets(), ds.targets());
    }

    #[test]
    fn random_sign_flips_some_rows() {
        let ds = synthetic::generate(&synthetic::SyntheticSpec::new(synthetic::SyntheticKind::Linear, 1))
            .unwrap();
        let spec = OodSpec {
            random_sign: true,
            noise_std_factor: 0.0,
            ..OodSpec::default()
        };
        let ood = generate_ood(&ds, &spec).unwrap();
        let diffs: Vec<f64> = (0..ds.len())
            .map(|i| ood.features()[[i, 0]] - ds.features()[[i, 0]])
            .collect();
        assert!(diffs.iter().any(|&d| d > 3.9));
        assert!(diffs.iter().any(|&d| d < -3.9));
    }

    #[test]
    fn synthetic_shapes() {
        for kind in synthetic::SyntheticKind::ALL {
            let ds = synthetic::generate(&synthetic::SyntheticSpec::new(kind, 3)).unwrap();
            assert_eq!((ds.len(), ds.feature_dim(), ds.target_dim()), (2000, 8, 1));
            assert_eq!(ds.name(), kind.name());
        }
    }
}
