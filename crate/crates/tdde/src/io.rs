//! File formats: headed CSV matrices, path-dataset directories, model files
//! and the JSON sidecars written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tdde_core::{DensityModel, Matrix, PathDataset};

use crate::error::{CliError, Result};

pub const MODEL_FORMAT: &str = "tdde-model";
pub const MODEL_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// Column holding the 0/1 label in a labeled CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("label".into())
    }
}

/// `x_1, ..., x_n`.
pub fn coord_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x_{i}")).collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

struct RawTable {
    header: Option<Vec<String>>,
    /// (line number, cells)
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    // A first row with any non-numeric cell is a header.
    let header = match rows.first() {
        Some((_, cells)) if cells.iter().any(|c| c.parse::<f64>().is_err()) => Some(rows.remove(0).1),
        _ => None,
    };
    Ok(RawTable { header, rows })
}

fn parse_cell(path: &Path, line: u64, col: usize, cell: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("column {}: `{cell}` is not a finite number", col + 1),
        }),
    }
}

fn check_width(path: &Path, table: &RawTable) -> Result<usize> {
    let width = table
        .header
        .as_ref()
        .map(Vec::len)
        .or_else(|| table.rows.first().map(|r| r.1.len()))
        .ok_or_else(|| CliError::format(path, "no data rows"))?;
    for (line, cells) in &table.rows {
        if cells.len() != width {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line: *line,
                message: format!("expected {width} fields, found {}", cells.len()),
            });
        }
    }
    if table.rows.is_empty() {
        return Err(CliError::format(path, "no data rows"));
    }
    Ok(width)
}

/// Numeric CSV with an optional header row.
pub fn load_csv(path: &Path) -> Result<Matrix> {
    let table = read_table(path)?;
    let width = check_width(path, &table)?;
    let mut values = Vec::with_capacity(table.rows.len() * width);
    for (line, cells) in &table.rows {
        for (c, cell) in cells.iter().enumerate() {
            values.push(parse_cell(path, *line, c, cell)?);
        }
    }
    Ok(Matrix::new(table.rows.len(), width, values)?)
}

/// Sample points from a CSV, ignoring `chain` and `draw` bookkeeping columns.
pub fn load_samples(path: &Path) -> Result<Matrix> {
    let table = read_table(path)?;
    let width = check_width(path, &table)?;
    let keep: Vec<usize> = match &table.header {
        Some(h) => (0..width).filter(|&c| h[c] != "chain" && h[c] != "draw").collect(),
        None => (0..width).collect(),
    };
    if keep.is_empty() {
        return Err(CliError::format(path, "no coordinate columns"));
    }
    let mut values = Vec::with_capacity(table.rows.len() * keep.len());
    for (line, cells) in &table.rows {
        for &c in &keep {
            values.push(parse_cell(path, *line, c, &cells[c])?);
        }
    }
    Ok(Matrix::new(table.rows.len(), keep.len(), values)?)
}

/// Divides every row by its Euclidean norm.
pub fn normalize_rows(m: &mut Matrix) -> std::result::Result<(), usize> {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(i);
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(())
}

/// Feature matrix and labels (`true` for label 1) from a CSV with a 0/1
/// column. With `normalize` every feature row is scaled to unit norm.
pub fn load_labeled_csv(path: &Path, label: &LabelColumn, normalize: bool) -> Result<(Matrix, Vec<bool>)> {
    let table = read_table(path)?;
    let width = check_width(path, &table)?;
    let col = match label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(CliError::format(path, format!("label column {i} out of range for {width} columns")));
        }
        LabelColumn::Name(name) => table
            .header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| CliError::format(path, format!("no column named `{name}`")))?,
    };
    if width < 2 {
        return Err(CliError::format(path, "need at least one feature column besides the label"));
    }
    let mut values = Vec::with_capacity(table.rows.len() * (width - 1));
    let mut labels = Vec::with_capacity(table.rows.len());
    for (line, cells) in &table.rows {
        for (c, cell) in cells.iter().enumerate() {
            if c == col {
                labels.push(match cell.as_str() {
                    "1" | "1.0" => true,
                    "0" | "0.0" => false,
                    _ => {
                        return Err(CliError::Parse {
                            path: path.to_path_buf(),
                            line: *line,
                            message: format!("label `{cell}` is not 0 or 1"),
                        })
                    }
                });
            } else {
                values.push(parse_cell(path, *line, c, cell)?);
            }
        }
    }
    let mut m = Matrix::new(labels.len(), width - 1, values)?;
    if normalize {
        normalize_rows(&mut m).map_err(|i| CliError::format(path, format!("row {} has zero norm", i + 1)))?;
    }
    Ok((m, labels))
}

/// CSV text with a header row. Values use the shortest round-trip form.
pub fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn matrix_csv(m: &Matrix) -> Vec<u8> {
    csv_string(&coord_header(m.cols()), m.iter_rows().map(<[f64]>::to_vec))
}

/// `sha256("blob <len>\0" ++ content)`, the way git names objects.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("sha256:{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file: String,
    pub content_hash: String,
    pub bytes: usize,
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Where outputs go and what the sidecars record about them.
#[derive(Debug, Clone)]
pub struct OutputContext {
    pub dir: PathBuf,
    pub command: String,
    pub config: serde_json::Value,
}

impl OutputContext {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `bytes` to `dir/name` plus its sidecar; returns the file path.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_bytes(&path, bytes)?;
        let meta = Sidecar {
            file: name.to_owned(),
            content_hash: content_hash(bytes),
            bytes: bytes.len(),
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: self.config.clone(),
        };
        let json = serde_json::to_vec_pretty(&meta).expect("sidecar serializes");
        write_bytes(&sidecar_path(&path), &json)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathManifest {
    pub version: u32,
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    pub dim: usize,
    pub paired: bool,
    pub files: Vec<String>,
}

/// One CSV per knot plus `manifest.json`, all under `sub` in the output dir.
pub fn write_path_dataset(out: &OutputContext, sub: &str, ds: &PathDataset) -> Result<PathBuf> {
    let mut files = Vec::with_capacity(ds.times().len());
    for (k, m) in ds.samples().iter().enumerate() {
        let name = format!("t_{k:03}.csv");
        out.write(&format!("{sub}/{name}"), &matrix_csv(m))?;
        files.push(name);
    }
    let manifest = PathManifest {
        version: MANIFEST_VERSION,
        times: ds.times().to_vec(),
        counts: ds.samples().iter().map(Matrix::rows).collect(),
        dim: ds.dim(),
        paired: ds.paired(),
        files,
    };
    out.write_json(&format!("{sub}/manifest.json"), &manifest)
}

pub fn load_path_dataset(dir: &Path) -> Result<PathDataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: PathManifest = serde_json::from_str(&read_to_string(&manifest_path)?)
        .map_err(|e| CliError::format(&manifest_path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CliError::format(&manifest_path, format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.files.len() != manifest.times.len() || manifest.counts.len() != manifest.times.len() {
        return Err(CliError::format(&manifest_path, "times, counts and files differ in length"));
    }
    let mut samples = Vec::with_capacity(manifest.files.len());
    for (k, name) in manifest.files.iter().enumerate() {
        let path = dir.join(name);
        let m = load_csv(&path)?;
        if m.rows() != manifest.counts[k] || m.cols() != manifest.dim {
            return Err(CliError::format(
                &path,
                format!(
                    "{}x{} samples, manifest says {}x{}",
                    m.rows(),
                    m.cols(),
                    manifest.counts[k],
                    manifest.dim
                ),
            ));
        }
        samples.push(m);
    }
    Ok(PathDataset::new(manifest.times, samples, manifest.paired)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub density: DensityModel,
}

impl ModelFile {
    pub fn new(density: DensityModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            density,
        }
    }
}

pub fn load_model(path: &Path) -> Result<DensityModel> {
    let text = read_to_string(path)?;
    // Check the header before trusting the body.
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
    if header.format != MODEL_FORMAT {
        return Err(CliError::format(path, format!("not a model file (format `{}`)", header.format)));
    }
    if header.version != MODEL_VERSION {
        return Err(CliError::format(path, format!("unsupported model version {}", header.version)));
    }
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(file.density)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn plain_and_headed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_csv(&temp_file(&dir, "a.csv", "1,2\n3,4")).unwrap();
        assert_eq!(m, Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let m = load_csv(&temp_file(&dir, "b.csv", "x_1, x_2\n1.5, -2e-3\n")).unwrap();
        assert_eq!(m.row(0), &[1.5, -2e-3]);
    }

    #[test]
    fn ragged_and_bad_cells_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_csv(&temp_file(&dir, "a.csv", "a,b\n1,2\n3\n")).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        let err = load_csv(&temp_file(&dir, "b.csv", "1,2\n3,x\n")).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        assert!(load_csv(&temp_file(&dir, "c.csv", "a,b\n")).is_err());
    }

    #[test]
    fn labeled_csv_with_normalisation() {
        let dir = tempfile::tempdir().unwrap();
        let p = temp_file(&dir, "l.csv", "f1,label,f2\n3,0,4\n1,1,0\n-2,0,2\n");
        let (m, y) = load_labeled_csv(&p, &LabelColumn::default(), true).unwrap();
        assert_eq!(y, vec![false, true, false]);
        assert_eq!((m.rows(), m.cols()), (3, 2));
        for r in m.iter_rows() {
            assert!((r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        }
        let (raw, _) = load_labeled_csv(&p, &LabelColumn::Index(1), false).unwrap();
        assert_eq!(raw.row(0), &[3.0, 4.0]);
        let bad = temp_file(&dir, "m.csv", "f,label\n1,2\n");
        assert!(matches!(load_labeled_csv(&bad, &LabelColumn::default(), false), Err(CliError::Parse { line: 2, .. })));
    }

    #[test]
    fn git_style_hash() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "sha256:2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn path_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputContext {
            dir: dir.path().to_path_buf(),
            command: "test".into(),
            config: serde_json::Value::Null,
        };
        let a = Matrix::from_rows(&[[0.1, 0.2], [0.3, 1.0 / 3.0]]).unwrap();
        let b = Matrix::from_rows(&[[1e-300, -5.0], [7.0, 8.25]]).unwrap();
        let ds = PathDataset::new(vec![0.0, 0.05], vec![a, b], true).unwrap();
        write_path_dataset(&out, "paths", &ds).unwrap();
        assert_eq!(load_path_dataset(&dir.path().join("paths")).unwrap(), ds);
        assert!(sidecar_path(&dir.path().join("paths/t_001.csv")).exists());
    }
}
