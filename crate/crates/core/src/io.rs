//! On-disk formats.
//!
//! FMX (feature matrix) layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FMX1"
//! 4       4     n_rows (u32)
//! 8       4     n_cols (u32)
//! 12      8*n   row-major IEEE-754 binary64 payload, n = n_rows * n_cols
//! ```
//!
//! LBL (labels) layout:
//!
//! ```text
//! 0       4     magic "LBL1"
//! 4       4     n (u32)
//! 8       4     n_classes (u32)
//! 12      4*n   labels (u32), each < n_classes
//! ```
//!
//! Fitted models are stored as a versioned JSON document in which every
//! number is written with 17 significant digits.
//!
//! Writers do not lock their path; concurrent writers to one file are the
//! caller's problem.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, LabelVector, WhitenTransform};
use crate::mcr::{ClassEmbeddings, FittedEnsembleModel};
use crate::optimizer::{EnsembleWeights, Objective};

pub const FMX_MAGIC: &[u8; 4] = b"FMX1";
pub const LBL_MAGIC: &[u8; 4] = b"LBL1";
pub const HEADER_LEN: usize = 12;
/// Largest payload entry count an FMX file may declare.
pub const MAX_ENTRIES: u64 = 1 << 31;
pub const MODEL_FORMAT_VERSION: u64 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Validates magic and header, returning the two header fields.
fn parse_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<(u32, u32)> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    Ok((u32_at(bytes, 4), u32_at(bytes, 8)))
}

fn check_payload(bytes: &[u8], expected: u64, path: &Path) -> Result<()> {
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingData {
            path: path.to_path_buf(),
            trailing: found - expected,
        });
    }
    Ok(())
}

pub fn encode_fmx(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let (rows, cols) = (m.n_samples() as u64, m.dim() as u64);
    if rows > u32::MAX as u64 || cols > u32::MAX as u64 || rows * cols > MAX_ENTRIES {
        return Err(Error::OversizeMatrix { rows, cols });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (rows * cols) as usize);
    out.extend_from_slice(FMX_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for row in m.data().row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes FMX bytes; `path` only labels errors.
pub fn decode_fmx(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    let (rows, cols) = parse_header(bytes, FMX_MAGIC, path)?;
    let (rows, cols) = (rows as u64, cols as u64);
    if rows * cols > MAX_ENTRIES {
        return Err(Error::OversizeMatrix { rows, cols });
    }
    check_payload(bytes, HEADER_LEN as u64 + 8 * rows * cols, path)?;
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    FeatureMatrix::from_row_slice(rows as usize, cols as usize, &values)
}

pub fn write_fmx(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    write_file(path.as_ref(), &encode_fmx(m)?)
}

pub fn read_fmx(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    decode_fmx(&read_file(path)?, path)
}

pub fn encode_lbl(labels: &LabelVector) -> Result<Vec<u8>> {
    if labels.len() > u32::MAX as usize || labels.n_classes() > u32::MAX as usize {
        return Err(Error::InvalidLabels(
            "label file fields must fit in u32".into(),
        ));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * labels.len());
    out.extend_from_slice(LBL_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(labels.n_classes() as u32).to_le_bytes());
    for &l in labels.labels() {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_lbl(bytes: &[u8], path: &Path) -> Result<LabelVector> {
    let (n, n_classes) = parse_header(bytes, LBL_MAGIC, path)?;
    check_payload(bytes, HEADER_LEN as u64 + 4 * n as u64, path)?;
    let labels: Vec<usize> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    LabelVector::new(labels, n_classes as usize)
}

pub fn write_lbl(path: impl AsRef<Path>, labels: &LabelVector) -> Result<()> {
    write_file(path.as_ref(), &encode_lbl(labels)?)
}

pub fn read_lbl(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    decode_lbl(&read_file(path)?, path)
}

/// Comma-separated numeric rows without a header.
pub fn read_csv_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let data = read_file(path)?;
    parse_csv_features(&data, path)
}

pub fn parse_csv_features(data: &[u8], path: &Path) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(data);
    let mut values = Vec::new();
    let mut width = None;
    let mut n_rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::InvalidFeatures(format!("{}: {e}", path.display())))?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                path: path.to_path_buf(),
                row,
                expected,
                found: record.len(),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                path: path.to_path_buf(),
                row,
                col,
                cell: cell.to_string(),
            })?;
            values.push(v);
        }
        n_rows += 1;
    }
    FeatureMatrix::from_row_slice(n_rows, width.unwrap_or(0), &values)
}

/// Reads `.csv` files as CSV and everything else as FMX.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_csv_features(path),
        _ => read_fmx(path),
    }
}

/// A float that serializes with 17 significant digits.
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

fn nums(v: impl IntoIterator<Item = f64>) -> Vec<Num> {
    v.into_iter().map(Num).collect()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<Num>> {
    m.row_iter().map(|r| nums(r.iter().copied())).collect()
}

#[derive(Serialize)]
struct WhitenerOut {
    ridge: Num,
    mean: Vec<Num>,
    transform: Vec<Vec<Num>>,
}

#[derive(Serialize)]
struct ModelOut {
    format_version: u64,
    n_sources: usize,
    feature_dim: usize,
    n_classes: usize,
    objective_used: &'static str,
    h_score_final: Num,
    alpha: Vec<Num>,
    priors: Vec<Num>,
    embeddings: Vec<Vec<Num>>,
    whiteners: Vec<WhitenerOut>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WhitenerIn {
    ridge: f64,
    mean: Vec<f64>,
    transform: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelIn {
    format_version: u64,
    n_sources: usize,
    feature_dim: usize,
    n_classes: usize,
    objective_used: String,
    h_score_final: f64,
    alpha: Vec<f64>,
    priors: Vec<f64>,
    embeddings: Vec<Vec<f64>>,
    whiteners: Vec<WhitenerIn>,
}

pub fn model_to_string(model: &FittedEnsembleModel) -> Result<String> {
    let doc = ModelOut {
        format_version: MODEL_FORMAT_VERSION,
        n_sources: model.n_sources(),
        feature_dim: model.feature_dim(),
        n_classes: model.n_classes(),
        objective_used: model.objective_used.as_str(),
        h_score_final: Num(model.h_score_final),
        alpha: nums(model.alpha.as_slice().iter().copied()),
        priors: nums(model.embeddings.priors().iter().copied()),
        embeddings: rows_of(model.embeddings.matrix()),
        whiteners: model
            .whiteners
            .iter()
            .map(|w| WhitenerOut {
                ridge: Num(w.ridge()),
                mean: nums(w.mean().iter().copied()),
                transform: rows_of(w.transform()),
            })
            .collect(),
    };
    let mut text =
        serde_json::to_string_pretty(&doc).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn malformed(e: impl std::fmt::Display) -> Error {
    Error::MalformedDocument(e.to_string())
}

fn matrix_from_rows(
    rows: &[Vec<f64>],
    n_rows: usize,
    n_cols: usize,
    what: &str,
) -> Result<DMatrix<f64>> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::MalformedDocument(format!(
            "{what} must be {n_rows}x{n_cols}"
        )));
    }
    Ok(DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

pub fn model_from_str(text: &str) -> Result<FittedEnsembleModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(malformed)?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::MalformedDocument("missing integer format_version".into()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::SchemaVersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let doc: ModelIn = serde_json::from_value(value).map_err(malformed)?;
    debug_assert_eq!(doc.format_version, MODEL_FORMAT_VERSION);
    let (m, d, k) = (doc.n_sources, doc.feature_dim, doc.n_classes);
    if doc.alpha.len() != m || doc.whiteners.len() != m || doc.priors.len() != k {
        return Err(Error::MalformedDocument(format!(
            "declared {m} sources and {k} classes but found {} weights, {} whiteners, {} priors",
            doc.alpha.len(),
            doc.whiteners.len(),
            doc.priors.len()
        )));
    }
    let alpha = EnsembleWeights::new(doc.alpha).map_err(malformed)?;
    let embeddings = ClassEmbeddings::new(
        matrix_from_rows(&doc.embeddings, k, d, "embeddings")?,
        DVector::from_vec(doc.priors),
    )
    .map_err(malformed)?;
    let whiteners = doc
        .whiteners
        .into_iter()
        .enumerate()
        .map(|(j, w)| {
            if w.mean.len() != d {
                return Err(Error::MalformedDocument(format!(
                    "whitener {j} mean must have length {d}"
                )));
            }
            let t = matrix_from_rows(&w.transform, d, d, "whitener transform")?;
            WhitenTransform::new(DVector::from_vec(w.mean), t, w.ridge).map_err(malformed)
        })
        .collect::<Result<Vec<_>>>()?;
    let objective: Objective = doc.objective_used.parse().map_err(malformed)?;
    FittedEnsembleModel::new(alpha, whiteners, embeddings, objective, doc.h_score_final)
        .map_err(malformed)
}

pub fn save_model(path: impl AsRef<Path>, model: &FittedEnsembleModel) -> Result<()> {
    write_file(path.as_ref(), model_to_string(model)?.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedEnsembleModel> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    model_from_str(&text)
}

/// Placeholder path used when decoding in-memory buffers.
pub fn memory_path() -> PathBuf {
    PathBuf::from("<memory>")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem() -> PathBuf {
        memory_path()
    }

    #[test]
    fn fmx_single_entry_layout() {
        let m = FeatureMatrix::from_row_slice(1, 1, &[1.0]).unwrap();
        let bytes = encode_fmx(&m).unwrap();
        let mut expected = b"FMX1".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]);
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), 20);
    }

    #[test]
    fn fmx_errors() {
        assert!(matches!(
            decode_fmx(&[], &mem()),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            decode_fmx(b"FMX2aaaaaaaa", &mem()),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            decode_fmx(b"FMX1\x02\0\0", &mem()),
            Err(Error::TruncatedFile { .. })
        ));

        let mut bytes = b"FMX1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            decode_fmx(&bytes, &mem()),
            Err(Error::TruncatedFile {
                expected: 44,
                found: 36,
                ..
            })
        ));
        bytes.extend_from_slice(&[0; 16]);
        assert!(matches!(
            decode_fmx(&bytes, &mem()),
            Err(Error::TrailingData { trailing: 8, .. })
        ));

        let mut huge = b"FMX1".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_fmx(&huge, &mem()),
            Err(Error::OversizeMatrix { .. })
        ));
    }

    #[test]
    fn lbl_layout_and_errors() {
        let lv = LabelVector::new(vec![0, 1], 2).unwrap();
        let bytes = encode_lbl(&lv).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"LBL1");
        assert_eq!(decode_lbl(&bytes, &mem()).unwrap(), lv);

        let mut bad = b"LBL1".to_vec();
        bad.extend_from_slice(&1u32.to_le_bytes());
        bad.extend_from_slice(&2u32.to_le_bytes());
        bad.extend_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            decode_lbl(&bad, &mem()),
            Err(Error::LabelOutOfRange { label: 5, .. })
        ));
        assert!(matches!(
            decode_lbl(&bad[..14], &mem()),
            Err(Error::TruncatedFile { .. })
        ));
        assert!(matches!(
            decode_lbl(b"", &mem()),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn csv_cases() {
        let m = parse_csv_features(b"1,2\n3,4", &mem()).unwrap();
        assert_eq!((m.n_samples(), m.dim()), (2, 2));
        assert_eq!(m.to_row_major(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            parse_csv_features(b"1,2\n3", &mem()),
            Err(Error::RaggedRows { row: 1, .. })
        ));
        assert!(matches!(
            parse_csv_features(b"1,a", &mem()),
            Err(Error::NonNumericCell { col: 1, .. })
        ));
    }

    #[test]
    fn numbers_use_seventeen_digits() {
        let mut s = Vec::new();
        Num(0.1)
            .serialize(&mut serde_json::Serializer::new(&mut s))
            .unwrap();
        assert_eq!(String::from_utf8(s).unwrap(), "1.0000000000000001e-1");
    }
}
