//! Multi-source datasets: loading, standardization and the shrinkage vector.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, SbrError};
use crate::matrix::Matrix;

/// Per-column location and scale recorded when a block is standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ColumnStats {
    pub fn identity(p: usize) -> Self {
        ColumnStats {
            mean: vec![0.0; p],
            sd: vec![1.0; p],
        }
    }

    /// Applies the recorded transform to a matrix with matching columns.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(SbrError::mismatch("column stats width", self.mean.len(), x.cols()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
        Ok(out)
    }

    fn compose(&self, inner: &ColumnStats) -> ColumnStats {
        // x -> (x - m1)/s1 -> ((x - m1)/s1 - m2)/s2
        let mean = self
            .mean
            .iter()
            .zip(&self.sd)
            .zip(&inner.mean)
            .map(|((m1, s1), m2)| m1 + m2 * s1)
            .collect();
        let sd = self.sd.iter().zip(&inner.sd).map(|(s1, s2)| s1 * s2).collect();
        ColumnStats { mean, sd }
    }
}

/// One named covariate block `X_k` of shape `n × p_k`.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub x: Matrix,
    pub column_names: Option<Vec<String>>,
    pub standardized: bool,
    pub stats: ColumnStats,
}

impl Source {
    pub fn new(name: impl Into<String>, x: Matrix) -> Self {
        let p = x.cols();
        Source {
            name: name.into(),
            x,
            column_names: None,
            standardized: false,
            stats: ColumnStats::identity(p),
        }
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }
}

/// Response vector plus `K` covariate blocks sharing the same `n` rows.
#[derive(Debug, Clone)]
pub struct MultiSourceDataset {
    y: Vec<f64>,
    sources: Vec<Source>,
    y_standardized: bool,
    y_mean: f64,
    y_sd: f64,
}

impl MultiSourceDataset {
    pub fn new(y: Vec<f64>, sources: Vec<Source>) -> Result<Self> {
        if sources.is_empty() {
            return Err(SbrError::Domain("dataset needs at least one source".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(SbrError::NonFinite {
                what: "response".into(),
                row: i,
                col: 0,
            });
        }
        let n = y.len();
        for s in &sources {
            if s.x.rows() != n {
                return Err(SbrError::mismatch(format!("rows of source '{}'", s.name), n, s.x.rows()));
            }
            if s.x.cols() == 0 {
                return Err(SbrError::Domain(format!("source '{}' has no columns", s.name)));
            }
        }
        Ok(MultiSourceDataset {
            y,
            sources,
            y_standardized: false,
            y_mean: 0.0,
            y_sd: 1.0,
        })
    }

    /// Convenience constructor from unnamed blocks (`source1`, `source2`, ...).
    pub fn from_blocks(y: Vec<f64>, blocks: Vec<Matrix>) -> Result<Self> {
        let sources = blocks
            .into_iter()
            .enumerate()
            .map(|(k, x)| Source::new(format!("source{}", k + 1), x))
            .collect();
        MultiSourceDataset::new(y, sources)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.sources.len()
    }

    pub fn p(&self) -> usize {
        self.sources.iter().map(Source::p).sum()
    }

    pub fn source_dims(&self) -> Vec<usize> {
        self.sources.iter().map(Source::p).collect()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn source(&self, k: usize) -> &Source {
        &self.sources[k]
    }

    pub fn blocks(&self) -> Vec<&Matrix> {
        self.sources.iter().map(|s| &s.x).collect()
    }

    pub fn is_standardized(&self) -> bool {
        self.y_standardized && self.sources.iter().all(|s| s.standardized)
    }

    pub fn y_stats(&self) -> (f64, f64) {
        (self.y_mean, self.y_sd)
    }

    /// Global `n × p` design (all sources side by side). Only for small problems.
    pub fn design(&self) -> Matrix {
        Matrix::hstack(&self.blocks()).expect("rows validated at construction")
    }

    /// Removes zero-variance columns from every source, returning the removed
    /// `(source, column)` pairs.
    pub fn drop_constant_columns(self) -> Result<(Self, Vec<(usize, usize)>)> {
        let mut removed = Vec::new();
        let mut sources = Vec::with_capacity(self.sources.len());
        for (k, s) in self.sources.into_iter().enumerate() {
            let (mean, sd) = column_moments(&s.x);
            let keep: Vec<usize> = (0..s.p())
                .filter(|&j| !is_zero_sd(sd[j], mean[j]))
                .collect();
            removed.extend((0..s.p()).filter(|j| !keep.contains(j)).map(|j| (k, j)));
            if keep.is_empty() {
                return Err(SbrError::ZeroVariance {
                    source_name: s.name.clone(),
                    columns: (0..s.p()).collect(),
                });
            }
            let x = Matrix::from_fn(s.x.rows(), keep.len(), |i, j| s.x.get(i, keep[j]));
            let column_names = s
                .column_names
                .map(|names| keep.iter().map(|&j| names[j].clone()).collect());
            let stats = ColumnStats {
                mean: keep.iter().map(|&j| s.stats.mean[j]).collect(),
                sd: keep.iter().map(|&j| s.stats.sd[j]).collect(),
            };
            sources.push(Source {
                name: s.name,
                x,
                column_names,
                standardized: s.standardized,
                stats,
            });
        }
        let mut ds = MultiSourceDataset::new(self.y, sources)?;
        ds.y_standardized = self.y_standardized;
        ds.y_mean = self.y_mean;
        ds.y_sd = self.y_sd;
        Ok((ds, removed))
    }

    /// Centers and scales every column (sd with the `n − 1` denominator) and
    /// the response. Statistics are composed so that repeated calls keep the
    /// mapping from the original scale.
    pub fn standardize(&self) -> Result<Self> {
        let n = self.n();
        if n < 2 {
            return Err(SbrError::Domain("standardization needs n >= 2".into()));
        }
        let mut sources = Vec::with_capacity(self.k());
        for s in &self.sources {
            let (mean, sd) = column_moments(&s.x);
            let bad: Vec<usize> = (0..s.p())
                .filter(|&j| is_zero_sd(sd[j], mean[j]))
                .collect();
            if !bad.is_empty() {
                return Err(SbrError::ZeroVariance {
                    source_name: s.name.clone(),
                    columns: bad,
                });
            }
            let step = ColumnStats { mean, sd };
            let x = step.apply(&s.x)?;
            sources.push(Source {
                name: s.name.clone(),
                x,
                column_names: s.column_names.clone(),
                standardized: true,
                stats: s.stats.compose(&step),
            });
        }
        let (ym, ysd) = vector_moments(&self.y);
        if is_zero_sd(ysd, ym) {
            return Err(SbrError::ZeroVariance {
                source_name: "response".into(),
                columns: vec![0],
            });
        }
        let y = self.y.iter().map(|v| (v - ym) / ysd).collect();
        Ok(MultiSourceDataset {
            y,
            sources,
            y_standardized: true,
            y_mean: self.y_mean + ym * self.y_sd,
            y_sd: self.y_sd * ysd,
        })
    }

    /// Writes the dataset as a directory of SBRM files plus a `sources` index.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| SbrError::io(dir, e))?;
        let mut index = String::new();
        for s in &self.sources {
            let file = format!("{}.sbrm", s.name);
            s.x.save_sbrm(&dir.join(&file))?;
            index.push_str(&format!("{} {}\n", s.name, file));
        }
        let yp = dir.join("y.sbrm");
        Matrix::from_vec(self.n(), 1, self.y.clone())?.save_sbrm(&yp)?;
        let ip = dir.join("sources");
        fs::write(&ip, index).map_err(|e| SbrError::io(ip, e))
    }

    /// Reads a directory written by [`save_dir`](Self::save_dir).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let ip = dir.join("sources");
        let index = fs::read_to_string(&ip).map_err(|e| SbrError::io(&ip, e))?;
        let mut paths = Vec::new();
        for line in index.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let (Some(name), Some(file)) = (parts.next(), parts.next()) else {
                return Err(SbrError::Parse {
                    path: ip.clone(),
                    msg: format!("malformed index line '{line}'"),
                });
            };
            paths.push((name.to_string(), dir.join(file)));
        }
        load_dataset(&paths, &dir.join("y.sbrm"))
    }
}

fn is_zero_sd(sd: f64, mean: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

pub(crate) fn vector_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Per-column mean and sample standard deviation (n − 1 denominator).
pub fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = x.shape();
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = vec![0.0; p];
    for i in 0..n {
        for ((s, v), m) in ss.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd = ss.iter().map(|s| (s / (n as f64 - 1.0)).sqrt()).collect();
    (mean, sd)
}

/// Reads a CSV or SBRM matrix depending on the file extension.
pub fn read_matrix_file(path: &Path) -> Result<(Matrix, Option<Vec<String>>)> {
    if path.extension().is_some_and(|e| e == "sbrm" || e == "gram") {
        Ok((Matrix::load_sbrm(path)?, None))
    } else {
        read_csv_matrix(path)
    }
}

/// Parses a comma-separated numeric matrix with an optional header row.
pub fn read_csv_matrix(path: &Path) -> Result<(Matrix, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| SbrError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    let mut header = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut cols = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SbrError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if line == 0 && record.iter().any(|f| f64::from_str(f).is_err()) {
            header = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            cols = Some(record.len());
            continue;
        }
        let width = *cols.get_or_insert(record.len());
        if record.len() != width {
            return Err(SbrError::Parse {
                path: path.to_path_buf(),
                msg: format!("row {rows} has {} fields, expected {width}", record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v = f64::from_str(field).map_err(|_| SbrError::Parse {
                path: path.to_path_buf(),
                msg: format!("non-numeric value '{field}' at row {rows}, col {col}"),
            })?;
            if !v.is_finite() {
                return Err(SbrError::NonFinite {
                    what: path.display().to_string(),
                    row: rows,
                    col,
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let m = Matrix::from_vec(rows, cols.unwrap_or(0), values)?;
    Ok((m, header))
}

/// Loads per-source matrices and a single-column response.
pub fn load_dataset(sources: &[(String, PathBuf)], response: &Path) -> Result<MultiSourceDataset> {
    let (ym, _) = read_matrix_file(response)?;
    if ym.cols() != 1 {
        return Err(SbrError::mismatch("response columns", 1, ym.cols()));
    }
    let y = ym.into_vec();
    let mut blocks = Vec::with_capacity(sources.len());
    for (name, path) in sources {
        let (x, header) = read_matrix_file(path)?;
        if x.rows() != y.len() {
            return Err(SbrError::mismatch(format!("rows of source '{name}'"), y.len(), x.rows()));
        }
        let mut s = Source::new(name.clone(), x);
        s.column_names = header;
        blocks.push(s);
    }
    MultiSourceDataset::new(y, blocks)
}

/// How a shrinkage vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Cv,
    Ml,
    Map,
    User,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Cv => "cv",
            Estimator::Ml => "ml",
            Estimator::Map => "map",
            Estimator::User => "user",
        })
    }
}

impl FromStr for Estimator {
    type Err = SbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cv" => Ok(Estimator::Cv),
            "ml" => Ok(Estimator::Ml),
            "map" | "pm" => Ok(Estimator::Map),
            "user" => Ok(Estimator::User),
            other => Err(SbrError::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Source-specific shrinkage levels `λ_1..λ_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageVector {
    lambda: Vec<f64>,
    estimator: Estimator,
}

impl ShrinkageVector {
    pub fn new(lambda: Vec<f64>, estimator: Estimator) -> Result<Self> {
        if lambda.is_empty() {
            return Err(SbrError::Domain("empty shrinkage vector".into()));
        }
        if let Some(k) = lambda.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(SbrError::Domain(format!(
                "lambda[{k}] = {} must be finite and > 0",
                lambda[k]
            )));
        }
        Ok(ShrinkageVector { lambda, estimator })
    }

    pub fn user(lambda: Vec<f64>) -> Result<Self> {
        ShrinkageVector::new(lambda, Estimator::User)
    }

    pub fn from_log(log_lambda: &[f64], estimator: Estimator) -> Result<Self> {
        ShrinkageVector::new(log_lambda.iter().map(|l| l.exp()).collect(), estimator)
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn get(&self, k: usize) -> f64 {
        self.lambda[k]
    }

    /// Expands to one entry per coefficient given the source widths.
    pub fn per_coefficient(&self, dims: &[usize]) -> Vec<f64> {
        dims.iter()
            .zip(&self.lambda)
            .flat_map(|(&p, &l)| std::iter::repeat_n(l, p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn col(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn standardize_simple_column() {
        let ds = MultiSourceDataset::from_blocks(vec![1.0, 2.0, 4.0], vec![col(&[1.0, 2.0, 3.0])])
            .unwrap();
        let st = ds.standardize().unwrap();
        assert_eq!(st.source(0).x.as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(st.source(0).stats.mean, vec![2.0]);
        assert_eq!(st.source(0).stats.sd, vec![1.0]);
        assert!(st.is_standardized());
    }

    #[test]
    fn standardize_is_idempotent() {
        let x = Matrix::from_fn(7, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.3 * j as f64);
        let ds = MultiSourceDataset::from_blocks((0..7).map(|i| i as f64).collect(), vec![x]).unwrap();
        let once = ds.standardize().unwrap();
        let twice = once.standardize().unwrap();
        assert!(once.source(0).x.max_abs_diff(&twice.source(0).x) < 1e-12);
        let s1 = &once.source(0).stats;
        let s2 = &twice.source(0).stats;
        for j in 0..3 {
            assert!((s1.mean[j] - s2.mean[j]).abs() < 1e-12);
            assert!((s1.sd[j] - s2.sd[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = Matrix::from_rows(&[vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]]).unwrap();
        let ds = MultiSourceDataset::from_blocks(vec![1.0, 2.0, 3.0], vec![x]).unwrap();
        match ds.standardize().unwrap_err() {
            SbrError::ZeroVariance { columns, .. } => assert_eq!(columns, vec![0]),
            e => panic!("unexpected {e}"),
        }
        let (dropped, removed) = ds.drop_constant_columns().unwrap();
        assert_eq!(removed, vec![(0, 0)]);
        assert_eq!(dropped.p(), 1);
    }

    #[test]
    fn row_mismatch_names_source() {
        let err = MultiSourceDataset::new(
            vec![0.0; 10],
            vec![Source::new("rna", Matrix::zeros(9, 2))],
        )
        .unwrap_err();
        assert!(err.to_string().contains("rna"), "{err}");
    }

    #[test]
    fn csv_loading_with_header_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let y = dir.path().join("y.csv");
        let mut f = fs::File::create(&a).unwrap();
        writeln!(f, "g1,g2").unwrap();
        for i in 0..10 {
            writeln!(f, "{},{}", i, i * i).unwrap();
        }
        let mut f = fs::File::create(&b).unwrap();
        for i in 0..10 {
            writeln!(f, "{}", 2 * i).unwrap();
        }
        let mut f = fs::File::create(&y).unwrap();
        for i in 0..10 {
            writeln!(f, "{}", i as f64 * 0.5).unwrap();
        }
        let ds = load_dataset(&[("a".into(), a.clone()), ("b".into(), b.clone())], &y).unwrap();
        assert_eq!((ds.n(), ds.k(), ds.p()), (10, 2, 3));
        assert_eq!(ds.source(0).column_names.as_deref(), Some(&["g1".to_string(), "g2".to_string()][..]));

        let short = dir.path().join("short.csv");
        fs::write(&short, (0..9).map(|i| format!("{i}\n")).collect::<String>()).unwrap();
        let err = load_dataset(&[("short".into(), short)], &y).unwrap_err();
        assert!(matches!(err, SbrError::DimensionMismatch { .. }));
        assert!(err.to_string().contains("short"));

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "1,2\n3,NaN\n").unwrap();
        match read_csv_matrix(&bad).unwrap_err() {
            SbrError::NonFinite { row, col, .. } => assert_eq!((row, col), (1, 1)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn shrinkage_vector_validates() {
        assert!(ShrinkageVector::user(vec![1.0, 0.0]).is_err());
        assert!(ShrinkageVector::user(vec![-1.0]).is_err());
        let l = ShrinkageVector::user(vec![2.0, 3.0]).unwrap();
        assert_eq!(l.per_coefficient(&[1, 2]), vec![2.0, 3.0, 3.0]);
    }
}
