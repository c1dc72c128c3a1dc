//! On-disk dataset layout.
//!
//! A dataset directory holds a JSON manifest plus matrix and table files:
//!
//! ```json
//! {
//!   "rows": 40, "features": 3, "voxels": 12,
//!   "kind": { "type": "static" },
//!   "spacing": [3.125, 3.125, 6.0],
//!   "design": "design.csv",
//!   "responses": "responses.bin",
//!   "coordinates": "coords.csv",
//!   "rois": "rois.csv"
//! }
//! ```
//!
//! Matrices are either headered CSV (one row per line) or the binary format:
//! the 8-byte magic `BRGMAT01`, u64 rows, u64 cols (little endian), then
//! `rows*cols` little-endian f64 in row-major order. The reader sniffs the
//! magic, so extensions are informational only.
//!
//! For `dynamic` datasets, `design` holds the base feature time series
//! (`rows × base_features`); the loader builds the lagged design and drops
//! the first `lag` response rows.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{build_lag_design, Dataset, DatasetKind, RoiPartition, VoxelGeometry};
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"BRGMAT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub rows: usize,
    pub features: usize,
    pub voxels: usize,
    pub kind: DatasetKind,
    pub spacing: [f64; 3],
    pub design: PathBuf,
    pub responses: PathBuf,
    pub coordinates: PathBuf,
    pub rois: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Load a dataset from a directory containing `manifest.json`, or from the
/// manifest path itself.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("manifest {}: {e}", manifest_path.display())))?;
    dataset_from_manifest(&manifest, &root)
}

pub fn dataset_from_manifest(manifest: &Manifest, root: &Path) -> Result<Dataset> {
    let design = read_matrix(root.join(&manifest.design))?;
    let responses = read_matrix(root.join(&manifest.responses))?;
    if design.nrows() != manifest.rows {
        return Err(Error::Format(format!(
            "field `rows`: manifest says {} but design has {} rows",
            manifest.rows,
            design.nrows()
        )));
    }
    if design.ncols() != manifest.features {
        return Err(Error::Format(format!(
            "field `features`: manifest says {} but design has {} columns",
            manifest.features,
            design.ncols()
        )));
    }
    if responses.ncols() != manifest.voxels {
        return Err(Error::Format(format!(
            "field `voxels`: manifest says {} but responses have {} columns",
            manifest.voxels,
            responses.ncols()
        )));
    }
    let coords = read_coordinates(root.join(&manifest.coordinates), manifest.voxels)?;
    let geometry = VoxelGeometry::new(coords, manifest.spacing)
        .map_err(|e| Error::Format(format!("field `spacing`/`coordinates`: {e}")))?;
    let rois = read_rois(root.join(&manifest.rois), manifest.voxels)?;

    let (design, responses) = match manifest.kind {
        DatasetKind::Static => (design, responses),
        DatasetKind::Dynamic { base_features, lag } => {
            if base_features != manifest.features {
                return Err(Error::Format(format!(
                    "field `kind.base_features`: {base_features} differs from `features` {}",
                    manifest.features
                )));
            }
            let lagged = build_lag_design(&design, lag, Some(&responses))?;
            (lagged.design, lagged.responses.expect("responses supplied"))
        }
    };
    Dataset::new(design, responses, geometry, rois, manifest.kind)
}

/// Write a static dataset directory (binary matrices, CSV tables).
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if dataset.kind().is_dynamic() {
        return Err(Error::Format(
            "saving lagged datasets is not supported; save the base series as static".into(),
        ));
    }
    let manifest = Manifest {
        rows: dataset.rows(),
        features: dataset.features(),
        voxels: dataset.voxels(),
        kind: dataset.kind(),
        spacing: dataset.geometry().spacing(),
        design: "design.csv".into(),
        responses: "responses.bin".into(),
        coordinates: "coords.csv".into(),
        rois: "rois.csv".into(),
    };
    let header: Vec<String> = (0..dataset.features()).map(|j| format!("x{j}")).collect();
    write_matrix_csv(dir.join(&manifest.design), &header, dataset.design())?;
    write_matrix_bin(dir.join(&manifest.responses), dataset.responses())?;

    let mut coords = String::from("voxel,x,y,z\n");
    for (v, c) in dataset.geometry().coords().iter().enumerate() {
        coords.push_str(&format!("{v},{},{},{}\n", c[0], c[1], c[2]));
    }
    write_file(dir.join(&manifest.coordinates), coords.as_bytes())?;

    let mut rois = String::from("voxel,area\n");
    for v in 0..dataset.voxels() {
        rois.push_str(&format!("{v},{}\n", dataset.rois().label_of(v)));
    }
    write_file(dir.join(&manifest.rois), rois.as_bytes())?;

    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 8 && &bytes[..8] == MATRIX_MAGIC {
        decode_matrix_bin(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    } else {
        parse_matrix_csv(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

pub fn encode_matrix_bin(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix_bin(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err("missing binary matrix header".into());
    }
    let mut word = [0u8; 8];
    let mut cursor = &bytes[8..];
    cursor.read_exact(&mut word).map_err(|e| e.to_string())?;
    let rows = u64::from_le_bytes(word) as usize;
    cursor.read_exact(&mut word).map_err(|e| e.to_string())?;
    let cols = u64::from_le_bytes(word) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or("matrix dimensions overflow")?;
    if cursor.len() != expected {
        return Err(format!(
            "payload has {} bytes, header implies {expected}",
            cursor.len()
        ));
    }
    let values: Vec<f64> = cursor
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix_bin(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_matrix_bin(m)).map_err(|e| Error::io(path, e))
}

pub fn encode_matrix_csv<S: AsRef<str>>(header: &[S], m: &DMatrix<f64>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(|h| h.as_ref()))
        .expect("in-memory write");
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string()))
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_matrix_csv<S: AsRef<str>>(path: impl AsRef<Path>, header: &[S], m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix_csv(header, m)).map_err(|e| Error::io(path, e))
}

fn parse_matrix_csv(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let cols = reader.headers().map_err(|e| e.to_string())?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != cols {
            return Err(format!("row {} has {} fields, expected {cols}", line + 1, record.len()));
        }
        for field in record.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format!("row {}: `{field}`: {e}", line + 1))?,
            );
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn read_table(path: &Path, expected_header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != expected_header {
        return Err(Error::Format(format!(
            "{}: expected columns {expected_header:?}, found {names:?}",
            path.display()
        )));
    }
    reader
        .records()
        .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

fn parse_voxel(field: &str, count: usize, path: &Path) -> Result<usize> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|e| Error::Format(format!("{}: voxel `{field}`: {e}", path.display())))?;
    if v >= count {
        return Err(Error::Format(format!(
            "{}: voxel {v} exceeds voxel count {count}",
            path.display()
        )));
    }
    Ok(v)
}

pub fn read_coordinates(path: impl AsRef<Path>, voxels: usize) -> Result<Vec<[i64; 3]>> {
    let path = path.as_ref();
    let mut coords: Vec<Option<[i64; 3]>> = vec![None; voxels];
    for rec in read_table(path, &["voxel", "x", "y", "z"])? {
        let v = parse_voxel(&rec[0], voxels, path)?;
        let mut c = [0i64; 3];
        for k in 0..3 {
            c[k] = rec[k + 1]
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("{}: coordinate `{}`: {e}", path.display(), &rec[k + 1])))?;
        }
        coords[v] = Some(c);
    }
    coords
        .into_iter()
        .enumerate()
        .map(|(v, c)| c.ok_or_else(|| Error::Format(format!("{}: voxel {v} has no coordinates", path.display()))))
        .collect()
}

pub fn read_rois(path: impl AsRef<Path>, voxels: usize) -> Result<RoiPartition> {
    let path = path.as_ref();
    let mut labels: Vec<Option<String>> = vec![None; voxels];
    for rec in read_table(path, &["voxel", "area"])? {
        let v = parse_voxel(&rec[0], voxels, path)?;
        if labels[v].replace(rec[1].trim().to_string()).is_some() {
            return Err(Error::Format(format!("{}: voxel {v} listed twice", path.display())));
        }
    }
    let labels: Vec<String> = labels
        .into_iter()
        .enumerate()
        .map(|(v, l)| l.ok_or_else(|| Error::Format(format!("{}: voxel {v} has no area", path.display()))))
        .collect::<Result<_>>()?;
    RoiPartition::from_labels(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_header_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = encode_matrix_bin(&m);
        assert_eq!(&bytes[..8], b"BRGMAT01");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        // row-major: second value is (0, 1)
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 2.0);
        assert_eq!(decode_matrix_bin(&bytes).unwrap(), m);
    }

    #[test]
    fn truncated_binary_rejected() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let bytes = encode_matrix_bin(&m);
        assert!(decode_matrix_bin(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn csv_matrix_parses() {
        let m = parse_matrix_csv(b"a,b\n1,2\n3.5,-4\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.5, -4.0]));
        assert!(parse_matrix_csv(b"a,b\n1,x\n").is_err());
    }
}
