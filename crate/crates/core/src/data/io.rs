//! External dataset loading: CSV feature tables and IDX image/label pairs.

use super::{Dataset, Features};
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalFormat {
    /// UTF-8, comma-separated, header row required; every data row holds the
    /// feature columns as floats and the integer class label in the last
    /// column.
    Csv,
    /// The classic big-endian IDX digit-image format. The path names the
    /// image file (magic 0x00000803); the matching label file (magic
    /// 0x00000801) is located by substituting `images` -> `labels` and
    /// `idx3` -> `idx1` in the file name. Pixels are scaled to [0, 1].
    Idx,
}

pub fn load_external(path: &Path, format: ExternalFormat) -> Result<Dataset> {
    match format {
        ExternalFormat::Csv => load_csv(path),
        ExternalFormat::Idx => load_idx(path),
    }
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
    let header_len = reader
        .headers()
        .map_err(|e| Error::Parse {
            location: format!("{}:1", path.display()),
            message: e.to_string(),
        })?
        .len();
    if header_len < 2 {
        return Err(Error::Parse {
            location: format!("{}:1", path.display()),
            message: format!("need at least one feature column and a label column, got {header_len}"),
        });
    }
    let dim = header_len - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let location = format!("{}:{}", path.display(), line);
        let record = record.map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        if record.len() != header_len {
            return Err(Error::Parse {
                location,
                message: format!("expected {header_len} columns, got {}", record.len()),
            });
        }
        for j in 0..dim {
            let v: f64 = record[j].trim().parse().map_err(|_| Error::Parse {
                location: location.clone(),
                message: format!("column {}: not a float: {:?}", j + 1, &record[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    location,
                    message: format!("column {}: non-finite value", j + 1),
                });
            }
            values.push(v);
        }
        let label: usize = record[dim].trim().parse().map_err(|_| Error::Parse {
            location: location.clone(),
            message: format!("label column: not a non-negative integer: {:?}", &record[dim]),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            location: path.display().to_string(),
            message: "no data rows".into(),
        });
    }
    let classes = labels.iter().max().unwrap() + 1;
    let n = labels.len();
    Dataset::new(
        Features::Real { dim, values },
        labels,
        (0..n as u64).collect(),
        classes.max(2),
    )
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse {
            location: format!("{}:byte {}", path.display(), offset),
            message: format!("truncated while reading {what}: need {end} bytes, have {}", bytes.len()),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

fn label_path_for(images: &Path) -> Result<std::path::PathBuf> {
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Parse {
            location: images.display().to_string(),
            message: "image path has no usable file name".into(),
        })?;
    if !name.contains("images") {
        return Err(Error::Parse {
            location: images.display().to_string(),
            message: "cannot infer the label file: image file name does not contain 'images'".into(),
        });
    }
    let label_name = name.replace("images", "labels").replace("idx3", "idx1");
    Ok(images.with_file_name(label_name))
}

fn load_idx(images_path: &Path) -> Result<Dataset> {
    let bytes = fs::read(images_path)?;
    let magic = be_u32(&bytes, 0, "magic number", images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            location: format!("{}:byte 0", images_path.display()),
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(&bytes, 4, "image count", images_path)? as usize;
    let rows = be_u32(&bytes, 8, "row count", images_path)? as usize;
    let cols = be_u32(&bytes, 12, "column count", images_path)? as usize;
    let dim = rows * cols;
    let expected = 16 + n * dim;
    if bytes.len() != expected {
        return Err(Error::Parse {
            location: format!("{}:byte {}", images_path.display(), bytes.len().min(expected)),
            message: format!("payload size mismatch: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    let values: Vec<f64> = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();

    let labels_path = label_path_for(images_path)?;
    let lbytes = fs::read(&labels_path)?;
    let lmagic = be_u32(&lbytes, 0, "magic number", &labels_path)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            location: format!("{}:byte 0", labels_path.display()),
            message: format!("bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let ln = be_u32(&lbytes, 4, "label count", &labels_path)? as usize;
    if ln != n {
        return Err(Error::Parse {
            location: labels_path.display().to_string(),
            message: format!("{n} images but {ln} labels"),
        });
    }
    let lexpected = 8 + n;
    if lbytes.len() != lexpected {
        return Err(Error::Parse {
            location: format!("{}:byte {}", labels_path.display(), lbytes.len().min(lexpected)),
            message: format!("payload size mismatch: expected {lexpected} bytes, got {}", lbytes.len()),
        });
    }
    let labels: Vec<usize> = lbytes[8..].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(
        Features::Real { dim, values },
        labels,
        (0..n as u64).collect(),
        classes.max(2),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_pair(dir: &Path, n: usize, rows: usize, cols: usize, truncate: usize) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&(rows as u32).to_be_bytes());
        img.extend_from_slice(&(cols as u32).to_be_bytes());
        for i in 0..n * rows * cols {
            img.push((i % 256) as u8);
        }
        img.truncate(img.len() - truncate);
        fs::write(dir.join("t10k-images-idx3-ubyte"), img).unwrap();

        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            lab.push((i % 2) as u8);
        }
        fs::write(dir.join("t10k-labels-idx1-ubyte"), lab).unwrap();
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.csv");
        let mut f = fs::File::create(&p).unwrap();
        writeln!(f, "x0,x1,label").unwrap();
        writeln!(f, "0.5,1.5,0").unwrap();
        writeln!(f, "-1.0,2.0,1").unwrap();
        writeln!(f, "3.25,0.0,1").unwrap();
        drop(f);
        let d = load_external(&p, ExternalFormat::Csv).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.model_dim(), 2);
        assert_eq!(d.labels(), &[0, 1, 1]);
        assert_eq!(d.raw_row(2).unwrap(), &[3.25, 0.0]);
    }

    #[test]
    fn csv_bad_arity_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "x0,x1,label\n0.5,1.5,0\n1.0,2\n").unwrap();
        let err = load_external(&p, ExternalFormat::Csv).unwrap_err();
        assert!(err.to_string().contains(":3"), "{err}");
    }

    #[test]
    fn idx_pair_loads_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        write_idx_pair(dir.path(), 4, 28, 28, 0);
        let d = load_external(&dir.path().join("t10k-images-idx3-ubyte"), ExternalFormat::Idx).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.model_dim(), 784);
        assert!(d.raw_row(0).unwrap().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(d.labels(), &[0, 1, 0, 1]);
    }

    #[test]
    fn idx_truncated_payload_reports_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_idx_pair(dir.path(), 4, 28, 28, 10);
        let err =
            load_external(&dir.path().join("t10k-images-idx3-ubyte"), ExternalFormat::Idx).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 3152 bytes"), "{msg}");
        assert!(msg.contains("3142"), "{msg}");
    }

    #[test]
    fn idx_bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("weird-images-idx3-ubyte");
        fs::write(&p, 42u32.to_be_bytes()).unwrap();
        let err = load_external(&p, ExternalFormat::Idx).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
