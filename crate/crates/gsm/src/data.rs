//! Dataset loading, generation, preprocessing and persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::init::Embedding;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Dense row-major matrix of input features with optional integer labels.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
    pub labels: Option<Vec<i64>>,
}

impl DataMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_rows * n_cols);
        DataMatrix {
            n_rows,
            n_cols,
            values,
            labels: None,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// A loaded or generated dataset plus side information.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub data: DataMatrix,
    pub name: String,
    /// Per-row operating condition (turbofan-style data only).
    pub condition_ids: Option<Vec<i64>>,
    /// Finer-grained ground truth than `data.labels`, when the source
    /// provides one (the cluster generator records cluster-half ids here).
    pub sublabels: Option<Vec<i64>>,
}

impl DatasetBundle {
    pub fn new(data: DataMatrix, name: impl Into<String>) -> Self {
        DatasetBundle {
            data,
            name: name.into(),
            condition_ids: None,
            sublabels: None,
        }
    }
}

/// Load a comma-separated file of decimal reals.
///
/// `label_column`, if given, is extracted into `labels` and removed from the
/// feature matrix. Row order is preserved.
pub fn load_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    label_column: Option<usize>,
) -> Result<DatasetBundle, Error> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0usize;

    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line_no == 0 && has_header {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let row = n_rows;
        let cells: Vec<&str> = line.split(',').collect();
        let expected = *n_cols.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(Error::RaggedRow {
                row,
                expected,
                found: cells.len(),
            });
        }
        for (col, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            if label_column == Some(col) {
                let lab: i64 = cell.parse().map_err(|_| Error::BadCell {
                    row,
                    col,
                    value: cell.to_string(),
                })?;
                labels.push(lab);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::BadCell {
                    row,
                    col,
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::BadCell {
                        row,
                        col,
                        value: cell.to_string(),
                    });
                }
                values.push(v);
            }
        }
        n_rows += 1;
    }

    if n_rows == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }

    let feature_cols = n_cols.unwrap() - usize::from(label_column.is_some());
    let mut data = DataMatrix::new(n_rows, feature_cols, values);
    if label_column.is_some() {
        data.labels = Some(labels);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    Ok(DatasetBundle::new(data, name))
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(flate2::read::GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

fn read_idx_payload(
    path: &Path,
    expected_magic: u32,
) -> Result<(Vec<u32>, Vec<u8>), Error> {
    let mut reader = BufReader::new(open_maybe_gz(path)?);
    let magic = reader
        .read_u32::<BigEndian>()
        .map_err(|e| Error::io(path, e))?;
    if magic != expected_magic {
        return Err(Error::BadMagic {
            found: magic,
            expected: expected_magic,
        });
    }
    let n_dims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(
            reader
                .read_u32::<BigEndian>()
                .map_err(|e| Error::io(path, e))?,
        );
    }
    let expected: usize = dims.iter().map(|&d| d as usize).product();
    let mut payload = Vec::with_capacity(expected);
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    payload.truncate(expected);
    Ok((dims, payload))
}

/// Load an IDX image file (MNIST convention), flattening each image
/// row-major into one row of the matrix. Pixel bytes become reals in
/// [0,255]. Gzip-compressed files are accepted when the name ends ".gz".
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<DatasetBundle, Error> {
    let images_path = images_path.as_ref();
    let (dims, pixels) = read_idx_payload(images_path, IDX_IMAGES_MAGIC)?;
    let n_images = dims[0] as usize;
    let row_len: usize = dims[1..].iter().map(|&d| d as usize).product();

    let values: Vec<f64> = pixels.iter().map(|&b| f64::from(b)).collect();
    let mut data = DataMatrix::new(n_images, row_len, values);

    if let Some(labels_path) = labels_path {
        let (ldims, bytes) = read_idx_payload(labels_path, IDX_LABELS_MAGIC)?;
        let n_labels = ldims[0] as usize;
        if n_labels != n_images {
            return Err(Error::CountMismatch {
                images: n_images,
                labels: n_labels,
            });
        }
        data.labels = Some(bytes.iter().map(|&b| i64::from(b)).collect());
    }

    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    Ok(DatasetBundle::new(data, name))
}

/// Generate well-separated Gaussian clusters for pipeline testing.
///
/// Cluster `c` (1-based) is centered at `mean_scale * e_c`; its first half
/// is shifted by `+offset_scale * e_{n_clusters+c}` and its second half by
/// the opposite offset, all with identity covariance. `labels` carries the
/// cluster index; `sublabels` carries the (cluster, half) id. The ChaCha8
/// stream makes regeneration bit-identical across platforms for a given
/// seed.
pub fn generate_gaussian_clusters(
    n_clusters: usize,
    points_per_cluster: usize,
    dim: usize,
    mean_scale: f64,
    offset_scale: f64,
    seed: u64,
) -> Result<DatasetBundle, Error> {
    if dim < 2 * n_clusters {
        return Err(Error::Config(format!(
            "dim {dim} too small: need at least {} for {n_clusters} clusters",
            2 * n_clusters
        )));
    }
    if points_per_cluster % 2 != 0 {
        return Err(Error::Config(format!(
            "points_per_cluster must be even, got {points_per_cluster}"
        )));
    }

    let n = n_clusters * points_per_cluster;
    let half = points_per_cluster / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut sublabels = Vec::with_capacity(n);

    for c in 0..n_clusters {
        for p in 0..points_per_cluster {
            let sign = if p < half { 1.0 } else { -1.0 };
            for j in 0..dim {
                let mut mean = 0.0;
                if j == c {
                    mean += mean_scale;
                }
                if j == n_clusters + c {
                    mean += sign * offset_scale;
                }
                let z: f64 = rng.sample(StandardNormal);
                values.push(mean + z);
            }
            labels.push((c + 1) as i64);
            sublabels.push((2 * c + usize::from(p >= half) + 1) as i64);
        }
    }

    let mut data = DataMatrix::new(n, dim, values);
    data.labels = Some(labels);
    let mut bundle = DatasetBundle::new(data, "sim");
    bundle.sublabels = Some(sublabels);
    Ok(bundle)
}

/// Subtract, per column, the mean over all rows sharing the same condition
/// id. Per-condition column means of the output are zero.
pub fn center_by_condition(
    data: &DataMatrix,
    condition_ids: &[i64],
) -> Result<DataMatrix, Error> {
    if condition_ids.len() != data.n_rows {
        return Err(Error::LengthMismatch {
            what: "condition_ids",
            found: condition_ids.len(),
            expected: data.n_rows,
        });
    }

    use std::collections::HashMap;
    let mut sums: HashMap<i64, (Vec<f64>, usize)> = HashMap::new();
    for (i, &c) in condition_ids.iter().enumerate() {
        let entry = sums.entry(c).or_insert_with(|| (vec![0.0; data.n_cols], 0));
        for (s, &v) in entry.0.iter_mut().zip(data.row(i)) {
            *s += v;
        }
        entry.1 += 1;
    }
    let means: HashMap<i64, Vec<f64>> = sums
        .into_iter()
        .map(|(c, (sum, count))| {
            (c, sum.into_iter().map(|s| s / count as f64).collect())
        })
        .collect();

    let mut out = data.clone();
    for (i, &c) in condition_ids.iter().enumerate() {
        let mean = &means[&c];
        let row = &mut out.values[i * data.n_cols..(i + 1) * data.n_cols];
        for (v, m) in row.iter_mut().zip(mean) {
            *v -= m;
        }
    }
    Ok(out)
}

/// Write an embedding as CSV, one row per point, coordinates then the
/// optional label. Uses the shortest representation that round-trips f64
/// exactly, so a reload through `load_csv` is lossless.
pub fn write_embedding_csv(
    emb: &Embedding,
    labels: Option<&[i64]>,
    path: impl AsRef<Path>,
) -> Result<(), Error> {
    let path = path.as_ref();
    if let Some(labels) = labels {
        if labels.len() != emb.n_points {
            return Err(Error::LengthMismatch {
                what: "labels",
                found: labels.len(),
                expected: emb.n_points,
            });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..emb.n_points {
        let mut line = String::new();
        for (j, v) in emb.point(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v}"));
        }
        if let Some(labels) = labels {
            line.push_str(&format!(",{}", labels[i]));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
