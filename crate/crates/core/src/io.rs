//! File formats.
//!
//! Matrices use a minimal little-endian binary layout:
//!
//! | offset | size          | content                              |
//! |--------|---------------|--------------------------------------|
//! | 0      | 4             | magic `RNM1`                         |
//! | 4      | 4             | rows, `u32` little-endian            |
//! | 8      | 4             | cols, `u32` little-endian            |
//! | 12     | rows*cols*8   | `f64` little-endian, row-major       |
//!
//! Anything after the payload is an error. Manifests, reports and other
//! structured documents are JSON.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    MatchedComponent, Member, ReproducibilityReport, RunCollection, Sign, ValidationError,
};

pub const MAGIC: &[u8; 4] = b"RNM1";
pub const HEADER_LEN: usize = 12;
pub const REPORT_FORMAT: &str = "raicarn-report-v1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: Vec<u8> },
    #[error("{path}: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("mask has {mask} entries but maps have {maps} locations")]
    MaskLengthMismatch { mask: usize, maps: usize },
    #[error("{path}: {detail}")]
    Document { path: PathBuf, detail: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes a matrix to the binary layout; non-finite entries are refused.
pub fn encode_matrix(m: &Array2<f64>) -> Result<Vec<u8>, FormatError> {
    let (rows, cols) = m.dim();
    if let Some(((row, col), _)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(FormatError::NonFinite { row, col });
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Array2<f64>, FormatError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                path: path.to_path_buf(),
                found: bytes[..4].to_vec(),
            });
        }
        return Err(FormatError::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("file is {} bytes, shorter than the header", bytes.len()),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            path: path.to_path_buf(),
            found: bytes[..4].to_vec(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| FormatError::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("declared shape {rows}x{cols} overflows"),
        })?;
    if payload.len() != expected {
        return Err(FormatError::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "declared {rows}x{cols} needs {expected} payload bytes, found {}",
                payload.len()
            ),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_matrix(&bytes, path)
}

pub fn write_matrix(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let bytes = encode_matrix(m)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FormatError::Document {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| FormatError::Document {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Lists one matrix file per run (each `n_c x n`), plus an optional mask.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub runs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, PathBuf), FormatError> {
        let path = path.as_ref();
        let manifest: Self = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        write_json(self, path)
    }
}

/// Keeps the columns whose mask flag is 1.
pub fn apply_mask(m: &Array2<f64>, mask: &[bool]) -> Result<Array2<f64>, FormatError> {
    if mask.len() != m.ncols() {
        return Err(FormatError::MaskLengthMismatch {
            mask: mask.len(),
            maps: m.ncols(),
        });
    }
    let keep: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    Ok(m.select(ndarray::Axis(1), &keep))
}

fn read_mask(path: &Path) -> Result<Vec<bool>, FormatError> {
    let m = read_matrix(path)?;
    if m.nrows() != 1 {
        return Err(FormatError::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("mask must have one row, found {}", m.nrows()),
        });
    }
    m.iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => Err(FormatError::Document {
                path: path.to_path_buf(),
                detail: format!("mask entries must be 0 or 1, found {other}"),
            }),
        })
        .collect()
}

/// Loads every run listed in `manifest`, applies the mask, and validates.
pub fn load_runs(manifest: &RunManifest, base: &Path) -> Result<RunCollection, FormatError> {
    let mask = manifest
        .mask
        .as_ref()
        .map(|p| read_mask(&base.join(p)))
        .transpose()?;
    let runs = manifest
        .runs
        .iter()
        .map(|p| {
            let m = read_matrix(base.join(p))?;
            match &mask {
                Some(mask) => apply_mask(&m, mask),
                None => Ok(m),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunCollection::from_matrices(runs)?)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunCollection, FormatError> {
    let (manifest, base) = RunManifest::read(path)?;
    load_runs(&manifest, &base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberEntry {
    /// One-based run number.
    pub run: usize,
    /// One-based component number within the run.
    pub component: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentEntry {
    pub rank: usize,
    pub reproducibility: f64,
    pub p_value: f64,
    pub significant: bool,
    /// One-based run whose member seeded the match.
    pub anchor_run: usize,
    pub members: Vec<MemberEntry>,
    pub similarity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub format: String,
    pub runs: usize,
    pub components_per_run: usize,
    pub replicates: usize,
    pub p_crit: f64,
    pub significant_count: usize,
    pub null_sample_file: PathBuf,
    pub components: Vec<ComponentEntry>,
}

/// Companion null-sample path for a report path: `report.json` ->
/// `report.null.rnm`.
pub fn null_sample_path(report_path: &Path) -> PathBuf {
    report_path.with_extension("null.rnm")
}

pub fn report_document(report: &ReproducibilityReport, null_file: PathBuf) -> ReportDocument {
    let components: Vec<ComponentEntry> = report
        .matched()
        .iter()
        .enumerate()
        .map(|(idx, mc)| ComponentEntry {
            rank: idx + 1,
            reproducibility: mc.reproducibility(),
            p_value: report.p_values()[idx],
            significant: report.significant()[idx],
            anchor_run: mc.anchor_run() + 1,
            members: mc
                .members()
                .iter()
                .map(|m| MemberEntry {
                    run: m.run + 1,
                    component: m.component + 1,
                    sign: m.sign.as_i8(),
                })
                .collect(),
            similarity: mc.similarity().rows().into_iter().map(|r| r.to_vec()).collect(),
        })
        .collect();
    let first = report.matched().first();
    ReportDocument {
        format: REPORT_FORMAT.to_string(),
        runs: first.map_or(0, |mc| mc.members().len()),
        components_per_run: report.matched().len(),
        replicates: report.replicates(),
        p_crit: report.p_crit(),
        significant_count: report.significant().iter().filter(|&&s| s).count(),
        null_sample_file: null_file,
        components,
    }
}

/// Writes the JSON report at `path` and the pooled null sample as a
/// `1 x (R n_c)` matrix next to it.
pub fn write_report(report: &ReproducibilityReport, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let null_path = null_sample_path(path);
    let null_name = PathBuf::from(null_path.file_name().expect("report path has a file name"));
    let null = Array2::from_shape_vec((1, report.null_sample().len()), report.null_sample().to_vec())
        .expect("row vector");
    write_matrix(&null, &null_path)?;
    write_json(&report_document(report, null_name), path)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReproducibilityReport, FormatError> {
    let path = path.as_ref();
    let doc: ReportDocument = read_json(path)?;
    let bad = |detail: String| FormatError::Document {
        path: path.to_path_buf(),
        detail,
    };
    if doc.format != REPORT_FORMAT {
        return Err(bad(format!("unsupported report format {:?}", doc.format)));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let null = read_matrix(base.join(&doc.null_sample_file))?;
    let mut matched = Vec::with_capacity(doc.components.len());
    let mut p_values = Vec::with_capacity(doc.components.len());
    let mut significant = Vec::with_capacity(doc.components.len());
    for entry in &doc.components {
        let members = entry
            .members
            .iter()
            .map(|m| {
                if m.run == 0 || m.component == 0 || !(m.sign == 1 || m.sign == -1) {
                    return Err(bad(format!("invalid member entry {m:?}")));
                }
                Ok(Member {
                    run: m.run - 1,
                    component: m.component - 1,
                    sign: if m.sign < 0 { Sign::Negative } else { Sign::Positive },
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let k = entry.similarity.len();
        if entry.similarity.iter().any(|r| r.len() != k) {
            return Err(bad("similarity matrix is not square".into()));
        }
        let sim = Array2::from_shape_vec((k, k), entry.similarity.concat()).expect("square");
        let anchor = entry
            .anchor_run
            .checked_sub(1)
            .ok_or_else(|| bad("anchor_run is one-based".into()))?;
        matched.push(MatchedComponent::new(members, anchor, sim, entry.reproducibility)?);
        p_values.push(entry.p_value);
        significant.push(entry.significant);
    }
    Ok(ReproducibilityReport::new(
        matched,
        null.iter().copied().collect(),
        p_values,
        doc.p_crit,
        significant,
    )?)
}
