//! Ingestion of small external datasets (IDX and CSV).
//!
//! External examples have a single patch (`M = 1`) holding the flattened
//! input, and no ground-truth feature names or label distributions. Splits
//! are assigned by `index mod 10`: residues 0..=7 train, 8 holdout,
//! 9 temperature holdout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MixedFeatureDataset, Split, SplitRange};
use crate::error::{Error, Result};

pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExternalSource {
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
}

fn parse_err(name: &str, location: String, detail: impl Into<String>) -> Error {
    Error::Parse {
        source_name: name.to_string(),
        location,
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, name: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            parse_err(
                name,
                format!("byte offset {offset}"),
                format!("header truncated: file has {} bytes", bytes.len()),
            )
        })
}

/// Parses an IDX label file (`0x00000801`, count, then one byte per label).
pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, name)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(parse_err(
            name,
            "byte offset 0".into(),
            format!("bad magic number {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, name)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(parse_err(
            name,
            format!("byte offset {}", bytes.len()),
            format!("expected {count} label bytes, found {}", payload.len()),
        ));
    }
    Ok(payload[..count].iter().map(|&b| b as usize).collect())
}

/// Parses an IDX image file (`0x00000803`, count, rows, cols, pixels),
/// returning the count, the flattened width, and pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<(usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0, name)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(parse_err(
            name,
            "byte offset 0".into(),
            format!("bad magic number {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, name)? as usize;
    let rows = be_u32(bytes, 8, name)? as usize;
    let cols = be_u32(bytes, 12, name)? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(parse_err(
            name,
            format!("byte offset {}", bytes.len()),
            format!(
                "truncated image payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let pixels = payload[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((count, rows * cols, pixels))
}

/// Parses `label,f1,f2,...` rows. A first line whose label field is not an
/// integer is treated as a header.
pub fn parse_csv(text: &str, name: &str) -> Result<(Vec<usize>, usize, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row_idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let label_field = record.get(0).unwrap_or("");
        let label = match label_field.parse::<usize>() {
            Ok(l) => l,
            Err(_) if row_idx == 0 => continue,
            Err(_) => {
                return Err(parse_err(
                    name,
                    format!("line {line}"),
                    format!("label `{label_field}` is not a class index"),
                ))
            }
        };
        let feats = record.len() - 1;
        match width {
            None => width = Some(feats),
            Some(w) if w != feats => {
                return Err(parse_err(
                    name,
                    format!("line {line}"),
                    format!("row has {feats} features, expected {w}"),
                ))
            }
            _ => {}
        }
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(name, format!("line {line}"), format!("`{field}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(name, format!("line {line}"), "non-finite feature value"));
            }
            values.push(v);
        }
        labels.push(label);
    }
    Ok((labels, width.unwrap_or(0), values))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an external dataset. `classes` defaults to `max label + 1`.
pub fn load_external(source: &ExternalSource, classes: Option<usize>) -> Result<MixedFeatureDataset> {
    let (labels, width, values) = match source {
        ExternalSource::Idx { images, labels } => {
            let label_vec = parse_idx_labels(&read(labels)?, &labels.display().to_string())?;
            let (count, width, pixels) = parse_idx_images(&read(images)?, &images.display().to_string())?;
            if count != label_vec.len() {
                return Err(Error::invalid(format!(
                    "{count} images but {} labels",
                    label_vec.len()
                )));
            }
            (label_vec, width, pixels)
        }
        ExternalSource::Csv { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text, &path.display().to_string())?
        }
    };
    assemble(labels, width, values, classes)
}

pub(crate) fn assemble(
    labels: Vec<usize>,
    width: usize,
    values: Vec<f64>,
    classes: Option<usize>,
) -> Result<MixedFeatureDataset> {
    let k = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |&m| m + 1));
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    // stable reorder so each split occupies a contiguous range
    let mut order: Vec<(Split, usize)> = (0..labels.len())
        .map(|i| {
            let split = match i % 10 {
                8 => Split::Holdout,
                9 => Split::TemperatureHoldout,
                _ => Split::Train,
            };
            (split, i)
        })
        .collect();
    let rank = |s: Split| match s {
        Split::Train => 0,
        Split::Holdout => 1,
        Split::TemperatureHoldout => 2,
        Split::Test => 3,
    };
    order.sort_by_key(|&(s, i)| (rank(s), i));

    let mut inputs = Vec::with_capacity(values.len());
    let mut ordered_labels = Vec::with_capacity(labels.len());
    let mut splits: Vec<SplitRange> = Vec::new();
    for (pos, &(split, i)) in order.iter().enumerate() {
        inputs.extend_from_slice(&values[i * width..(i + 1) * width]);
        ordered_labels.push(labels[i]);
        match splits.last_mut() {
            Some(r) if r.split == split => r.end = pos + 1,
            _ => splits.push(SplitRange {
                split,
                start: pos,
                end: pos + 1,
            }),
        }
    }
    if splits.is_empty() {
        splits.push(SplitRange {
            split: Split::Train,
            start: 0,
            end: 0,
        });
    }
    MixedFeatureDataset::from_parts(1, width, k, inputs, ordered_labels, None, None, None, None, splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABEL_MAGIC.to_be_bytes().to_vec();
        v.extend((labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = IDX_IMAGE_MAGIC.to_be_bytes().to_vec();
        for x in [count, rows, cols] {
            v.extend(x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn reads_idx_labels() {
        assert_eq!(parse_idx_labels(&idx_labels(&[3, 1, 4]), "l").unwrap(), vec![3, 1, 4]);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = idx_labels(&[1]);
        bytes[3] = 0x03;
        let err = parse_idx_labels(&bytes, "labels.idx").unwrap_err().to_string();
        assert!(err.contains("byte offset 0") && err.contains("magic"), "{err}");
    }

    #[test]
    fn truncated_images_name_byte_counts() {
        let bytes = idx_images(2, 2, 2, &[0; 5]);
        let err = parse_idx_images(&bytes, "img").unwrap_err().to_string();
        assert!(err.contains("expected 8 bytes, found 5"), "{err}");
    }

    #[test]
    fn reads_idx_images() {
        let (n, w, px) = parse_idx_images(&idx_images(1, 1, 2, &[0, 255]), "img").unwrap();
        assert_eq!((n, w), (1, 2));
        assert_eq!(px, vec![0.0, 1.0]);
    }

    #[test]
    fn csv_row_maps_directly() {
        let (labels, width, values) = parse_csv("2,0.1,0.5\n", "x.csv").unwrap();
        assert_eq!(labels, vec![2]);
        assert_eq!(width, 2);
        assert_eq!(values, vec![0.1, 0.5]);
        let d = assemble(labels, width, values, Some(3)).unwrap();
        assert_eq!(d.classes, 3);
        assert_eq!(d.input(0), &[0.1, 0.5]);
        assert!(!d.has_ground_truth());
    }

    #[test]
    fn csv_header_and_length_mismatch() {
        let (labels, _, _) = parse_csv("label,a,b\n0,1,2\n1,3,4\n", "x").unwrap();
        assert_eq!(labels, vec![0, 1]);
        let err = parse_csv("0,1,2\n1,3\n", "x.csv").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn modular_split_assignment() {
        let n = 25;
        let labels = vec![0; n];
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = assemble(labels, 1, values, None).unwrap();
        let train = d.range_of(Split::Train).unwrap();
        let hold = d.range_of(Split::Holdout).unwrap();
        let temp = d.range_of(Split::TemperatureHoldout).unwrap();
        assert_eq!(train.len(), 21);
        assert_eq!(hold.len(), 2);
        assert_eq!(temp.len(), 2);
        assert_eq!(d.input(hold.start), &[8.0]);
        assert_eq!(d.input(temp.start + 1), &[19.0]);
    }
}
