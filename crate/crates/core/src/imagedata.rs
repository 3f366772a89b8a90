//! Image dataset ingestion: IDX binaries (optionally gzipped) and generic CSV
//! matrices, plus seeded subsetting and train/test splits.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::Dataset;
use crate::coremath::Matrix;
use crate::error::{Error, IdxProblem, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

fn read_maybe_gzipped(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn idx_error(path: &Path, problem: IdxProblem) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        problem,
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses the big-endian header and returns it with the unsigned-byte payload.
fn parse_idx(path: &Path, bytes: Vec<u8>, magic: u32, ndims: usize) -> Result<(IdxHeader, Vec<u8>)> {
    let found = be_u32(&bytes, 0).ok_or_else(|| {
        idx_error(
            path,
            IdxProblem::Truncated {
                expected: 4,
                found: bytes.len(),
            },
        )
    })?;
    if found != magic {
        return Err(idx_error(path, IdxProblem::BadMagic { expected: magic, found }));
    }
    let header_len = 4 + 4 * ndims;
    let dims: Vec<u32> = (0..ndims)
        .map(|i| be_u32(&bytes, 4 + 4 * i))
        .collect::<Option<_>>()
        .ok_or_else(|| {
            idx_error(
                path,
                IdxProblem::Truncated {
                    expected: header_len,
                    found: bytes.len(),
                },
            )
        })?;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| idx_error(path, IdxProblem::DimensionOverflow(dims.clone())))?;
    let available = bytes.len() - header_len;
    if available < payload {
        return Err(idx_error(
            path,
            IdxProblem::Truncated {
                expected: payload,
                found: available,
            },
        ));
    }
    let data = bytes[header_len..header_len + payload].to_vec();
    Ok((IdxHeader { magic, dims }, data))
}

/// Images flattened row-major, one per matrix row, scaled by 1/255.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let (header, data) = parse_idx(path, read_maybe_gzipped(path)?, IMAGE_MAGIC, 3)?;
    let count = header.dims[0] as usize;
    let pixels = header.dims[1] as usize * header.dims[2] as usize;
    let values = data.into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(Matrix::from_shape_vec((count, pixels), values).expect("payload length checked"))
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let (_, data) = parse_idx(path, read_maybe_gzipped(path)?, LABEL_MAGIC, 1)?;
    Ok(data.into_iter().map(usize::from).collect())
}

/// Loads paired image and label files into a labeled dataset.
pub fn load_idx_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let x = load_idx_images(images)?;
    let y = load_idx_labels(labels)?;
    if y.len() != x.nrows() {
        return Err(Error::Data(format!("{} images but {} labels", x.nrows(), y.len())));
    }
    Dataset::labeled(x, y, None)
}

pub fn write_idx_images(path: impl AsRef<Path>, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::shape("IDX payload", count * rows * cols, pixels.len()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for d in [count, rows, cols] {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Reads a rectangular numeric CSV. A first row that does not parse as
/// numbers is treated as a header. With `has_label_column` the last column
/// becomes integer labels. Features outside [0,1] are clamped with a warning.
pub fn load_csv_matrix(path: impl AsRef<Path>, has_label_column: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0;
    let mut clamped = 0usize;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Csv {
            row,
            reason: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let parsed = match parsed {
            Ok(p) => p,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Csv {
                    row,
                    reason: format!("non-numeric cell: {e}"),
                })
            }
        };
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Csv {
                    row,
                    reason: format!("expected {w} columns, found {}", parsed.len()),
                })
            }
            _ => {}
        }
        let (features, label) = if has_label_column {
            let (l, f) = parsed.split_last().ok_or_else(|| Error::Csv {
                row,
                reason: "empty row".into(),
            })?;
            if *l < 0.0 || l.fract() != 0.0 {
                return Err(Error::Csv {
                    row,
                    reason: format!("label {l} is not a nonnegative integer"),
                });
            }
            (f.to_vec(), Some(*l as usize))
        } else {
            (parsed, None)
        };
        for v in features {
            if !v.is_finite() {
                return Err(Error::Csv {
                    row,
                    reason: format!("non-finite value {v}"),
                });
            }
            let c = v.clamp(0.0, 1.0);
            if c != v {
                clamped += 1;
            }
            values.push(c);
        }
        labels.extend(label);
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Csv {
        row: 0,
        reason: "file contains no data rows".into(),
    })?;
    let cols = if has_label_column { width - 1 } else { width };
    if cols == 0 {
        return Err(Error::Csv {
            row: 1,
            reason: "no feature columns".into(),
        });
    }
    if clamped > 0 {
        warn!("clamped {clamped} feature values into [0,1]");
    }
    let x = Matrix::from_shape_vec((rows, cols), values).expect("rectangular rows");
    if has_label_column {
        Dataset::labeled(x, labels, None)
    } else {
        Dataset::unlabeled(x)
    }
}

pub fn write_csv_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (r, row) in data.x.rows().into_iter().enumerate() {
        let mut line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        if let Some(labels) = &data.labels {
            line.push(labels[r].to_string());
        }
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn shuffled_indices(m: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded shuffle then partition; the train side gets round(fraction·m) rows.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} must lie in (0,1)"
        )));
    }
    let idx = shuffled_indices(data.len(), seed);
    let cut = (train_fraction * data.len() as f64).round() as usize;
    Ok((data.select(&idx[..cut]), data.select(&idx[cut..])))
}

/// Seeded random subset of `count` rows (all rows if fewer exist).
pub fn subset(data: &Dataset, count: usize, seed: u64) -> Dataset {
    let idx = shuffled_indices(data.len(), seed);
    data.select(&idx[..count.min(idx.len())])
}
