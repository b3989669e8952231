//! Data matrices, CSV I/O, standardization, and synthetic benchmarks.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A dense numeric matrix with row and column labels.
///
/// Rows are observations, columns are features. Every constructor checks
/// that the matrix has at least two rows and one column, that all entries
/// are finite, and that label lengths match the shape.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub values: Array2<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl DataMatrix {
    pub fn new(
        values: Array2<f64>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 rows, got {n}"
            )));
        }
        if p < 1 {
            return Err(Error::Dimension("need at least 1 column".into()));
        }
        if row_labels.len() != n {
            return Err(Error::Length(format!(
                "{} row labels for {n} rows",
                row_labels.len()
            )));
        }
        if col_labels.len() != p {
            return Err(Error::Length(format!(
                "{} column labels for {p} columns",
                col_labels.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite entry in data matrix".into()));
        }
        Ok(Self {
            values,
            row_labels,
            col_labels,
        })
    }

    /// Builds a matrix with generated `row_i` / `col_j` labels.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, p) = values.dim();
        Self::new(values, default_labels("row", n), default_labels("col", p))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }
}

fn default_labels(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}_{i}")).collect()
}

/// A hard assignment of `n` items to `k` clusters labelled `0..k`.
///
/// Cluster ids are contiguous: every label in `0..k` occurs at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::Dimension("empty partition".into()));
        }
        let k = assignment.iter().max().unwrap() + 1;
        let mut seen = vec![false; k];
        for &a in &assignment {
            seen[a] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Index(
                "cluster ids must be contiguous from 0".into(),
            ));
        }
        Ok(Self { assignment, k })
    }

    /// Relabels clusters by order of first appearance, giving a canonical
    /// representative of the same partition.
    pub fn canonicalize(&self) -> Partition {
        let mut map = vec![usize::MAX; self.k];
        let mut next = 0;
        let mut assignment = Vec::with_capacity(self.assignment.len());
        for &a in &self.assignment {
            if map[a] == usize::MAX {
                map[a] = next;
                next += 1;
            }
            assignment.push(map[a]);
        }
        Partition {
            assignment,
            k: next,
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Loads a CSV file into a [`DataMatrix`].
///
/// `has_header` treats the first record as column labels; `has_rownames`
/// treats the first field of every record as the row label. Ragged rows
/// and non-numeric cells are parse errors, and fewer than two data rows
/// is a dimension error.
pub fn load_csv(path: &Path, has_header: bool, has_rownames: bool) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let mut records = Vec::new();
    for record in reader.records() {
        let record = record?;
        records.push(record.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    }
    if records.is_empty() {
        return Err(Error::Dimension("empty CSV file".into()));
    }

    let mut col_labels = None;
    if has_header {
        let mut header = records.remove(0);
        if has_rownames && !header.is_empty() {
            header.remove(0);
        }
        col_labels = Some(header);
    }

    let mut row_labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, mut record) in records.into_iter().enumerate() {
        let label = if has_rownames {
            if record.is_empty() {
                return Err(Error::Parse(format!("row {idx} is empty")));
            }
            record.remove(0)
        } else {
            format!("row_{idx}")
        };
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse(format!(
                    "ragged CSV: row {idx} has {} fields, expected {w}",
                    record.len()
                )))
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!("non-numeric cell {cell:?} at row {idx}, column {j}"))
            })?;
            row.push(v);
        }
        row_labels.push(label);
        rows.push(row);
    }

    let n = rows.len();
    let p = width.unwrap_or(0);
    if n < 2 {
        return Err(Error::Dimension(format!("need at least 2 data rows, got {n}")));
    }
    if p < 1 {
        return Err(Error::Dimension("need at least 1 data column".into()));
    }
    if let Some(labels) = &col_labels {
        if labels.len() != p {
            return Err(Error::Parse(format!(
                "header has {} labels for {p} columns",
                labels.len()
            )));
        }
    }

    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((n, p), flat)
        .map_err(|e| Error::Shape(e.to_string()))?;
    DataMatrix::new(
        values,
        row_labels,
        col_labels.unwrap_or_else(|| default_labels("col", p)),
    )
}

/// Writes a matrix as CSV with a header row and row-name column.
///
/// Floats are printed with 17 significant digits so a reload reproduces
/// the exact bit pattern.
pub fn save_csv(data: &DataMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![String::new()];
    header.extend(data.col_labels.iter().cloned());
    writer.write_record(&header)?;
    for (i, row) in data.values.rows().into_iter().enumerate() {
        let mut record = vec![data.row_labels[i].clone()];
        record.extend(row.iter().map(|v| format_float(*v)));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Formats a float with 17 significant digits (round-trip safe).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Centers each column and scales it by its sample standard deviation.
///
/// Columns with exactly zero variance are centered only; a warning is
/// logged for each. Applying `standardize` twice is a no-op up to
/// floating-point round-off.
pub fn standardize(data: &DataMatrix) -> DataMatrix {
    let n = data.n() as f64;
    let mut values = data.values.clone();
    for (j, mut col) in values.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / (n - 1.0);
        if var == 0.0 {
            log::warn!(
                "column {} ({}) has zero variance; centered but not scaled",
                j,
                data.col_labels[j]
            );
        } else {
            let sd = var.sqrt();
            col.mapv_inplace(|v| v / sd);
        }
    }
    DataMatrix {
        values,
        row_labels: data.row_labels.clone(),
        col_labels: data.col_labels.clone(),
    }
}

/// Draws two orthonormal `p`-vectors spanning a random plane.
fn random_plane(rng: &mut ChaCha8Rng, p: usize) -> (Array1<f64>, Array1<f64>) {
    loop {
        let a: Array1<f64> = Array1::from_iter((0..p).map(|_| StandardNormal.sample(rng)));
        let b: Array1<f64> = Array1::from_iter((0..p).map(|_| StandardNormal.sample(rng)));
        let na = a.dot(&a).sqrt();
        if na < 1e-12 {
            continue;
        }
        let b1 = &a / na;
        let b2 = &b - &(&b1 * b1.dot(&b));
        let nb = b2.dot(&b2).sqrt();
        if nb < 1e-12 {
            continue;
        }
        return (b1, &b2 / nb);
    }
}

/// Gaussian mixture benchmark: `k` centroids spaced `sep` apart along a
/// line inside a random plane of the feature space, `n_per` observations
/// per centroid with isotropic unit-variance noise.
///
/// Returns the data together with the ground-truth partition. The same
/// seed reproduces the same bits.
pub fn gen_gaussian_mixture(
    k: usize,
    n_per: usize,
    p: usize,
    sep: f64,
    seed: u64,
) -> Result<(DataMatrix, Partition)> {
    let (data, partition, _) = gen_gaussian_mixture_detailed(k, n_per, p, sep, seed)?;
    Ok((data, partition))
}

/// As [`gen_gaussian_mixture`], additionally returning the noise-free
/// `k x p` centroid matrix for geometry checks.
pub fn gen_gaussian_mixture_detailed(
    k: usize,
    n_per: usize,
    p: usize,
    sep: f64,
    seed: u64,
) -> Result<(DataMatrix, Partition, Array2<f64>)> {
    if k < 2 {
        return Err(Error::Range(format!("need at least 2 components, got {k}")));
    }
    if n_per < 1 {
        return Err(Error::Range("need at least 1 observation per component".into()));
    }
    if p < 2 {
        return Err(Error::Dimension(format!(
            "ambient dimension must be at least 2, got {p}"
        )));
    }
    if !(sep > 0.0) {
        return Err(Error::Range(format!("sep must be positive, got {sep}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (axis, _other) = random_plane(&mut rng, p);

    let mut centroids = Array2::zeros((k, p));
    for g in 0..k {
        let offset = (g as f64 - (k as f64 - 1.0) / 2.0) * sep;
        centroids.row_mut(g).assign(&(&axis * offset));
    }

    let n = k * n_per;
    let mut values = Array2::zeros((n, p));
    let mut assignment = Vec::with_capacity(n);
    for g in 0..k {
        for i in 0..n_per {
            let row = g * n_per + i;
            for j in 0..p {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values[(row, j)] = centroids[(g, j)] + noise;
            }
            assignment.push(g);
        }
    }

    Ok((
        DataMatrix::from_values(values)?,
        Partition::new(assignment)?,
        centroids,
    ))
}

/// Radius of each half-moon arc.
pub const MOON_RADIUS: f64 = 1.0;
/// Planar offset of the second arc relative to the first.
pub const MOON_OFFSET: (f64, f64) = (1.0, 0.5);

/// Two interlocking half-circle arcs embedded in a random plane of the
/// feature space, `n_per` points per arc.
///
/// The first arc is the upper half of a unit circle at the origin; the
/// second is the lower half of a unit circle shifted by [`MOON_OFFSET`].
/// Gaussian noise with standard deviation `noise_sd` is added in the
/// orthogonal complement of the signal plane, so for `p = 2` (or
/// `noise_sd = 0`) the points lie exactly on the arcs.
pub fn gen_half_moons(
    n_per: usize,
    p: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<(DataMatrix, Partition)> {
    if n_per < 2 {
        return Err(Error::Range(format!(
            "need at least 2 points per arc, got {n_per}"
        )));
    }
    if p < 2 {
        return Err(Error::Dimension(format!(
            "ambient dimension must be at least 2, got {p}"
        )));
    }
    if noise_sd < 0.0 {
        return Err(Error::Range(format!(
            "noise_sd must be non-negative, got {noise_sd}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b1, b2) = random_plane(&mut rng, p);

    let n = 2 * n_per;
    let mut values = Array2::zeros((n, p));
    let mut assignment = Vec::with_capacity(n);
    for arc in 0..2 {
        for i in 0..n_per {
            let theta = std::f64::consts::PI * i as f64 / (n_per - 1) as f64;
            let (u, v) = if arc == 0 {
                (MOON_RADIUS * theta.cos(), MOON_RADIUS * theta.sin())
            } else {
                (
                    MOON_OFFSET.0 - MOON_RADIUS * theta.cos(),
                    MOON_OFFSET.1 - MOON_RADIUS * theta.sin(),
                )
            };
            let signal = &b1 * u + &b2 * v;

            // Noise lives in the orthogonal complement of span(b1, b2).
            let z: Array1<f64> =
                Array1::from_iter((0..p).map(|_| StandardNormal.sample(&mut rng)));
            let z = &z * noise_sd;
            let noise = &z - &(&b1 * b1.dot(&z)) - &(&b2 * b2.dot(&z));

            let row = arc * n_per + i;
            values
                .row_mut(row)
                .assign(&(&signal + &noise));
            assignment.push(arc);
        }
    }

    Ok((DataMatrix::from_values(values)?, Partition::new(assignment)?))
}

/// Checkerboard benchmark for bi-clustering: `row_groups x col_groups`
/// blocks of size `rows_per x cols_per`, each block constant at a seeded
/// level of magnitude `contrast`, plus isotropic Gaussian noise.
///
/// Returns the data with the ground-truth row and column partitions.
pub fn gen_checkerboard(
    row_groups: usize,
    col_groups: usize,
    rows_per: usize,
    cols_per: usize,
    contrast: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(DataMatrix, Partition, Partition)> {
    if row_groups < 2 || col_groups < 2 {
        return Err(Error::Range("need at least 2 groups on each axis".into()));
    }
    if rows_per < 1 || cols_per < 1 {
        return Err(Error::Range("need at least 1 row/column per group".into()));
    }
    if !(contrast > 0.0) {
        return Err(Error::Range(format!(
            "contrast must be positive, got {contrast}"
        )));
    }
    if noise_sd < 0.0 {
        return Err(Error::Range(format!(
            "noise_sd must be non-negative, got {noise_sd}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Array2::zeros((row_groups, col_groups));
    for g in 0..row_groups {
        for h in 0..col_groups {
            let z: f64 = StandardNormal.sample(&mut rng);
            means[(g, h)] = contrast * z;
        }
    }

    let n = row_groups * rows_per;
    let p = col_groups * cols_per;
    let mut values = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            let noise: f64 = StandardNormal.sample(&mut rng);
            values[(i, j)] = means[(i / rows_per, j / cols_per)] + noise_sd * noise;
        }
    }

    let rows = Partition::new((0..n).map(|i| i / rows_per).collect())?;
    let cols = Partition::new((0..p).map(|j| j / cols_per).collect())?;
    Ok((DataMatrix::from_values(values)?, rows, cols))
}
