use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{GenomicProfile, InstanceBag, Modality};
use crate::error::{Error, Result};

const MAGIC_F32: &[u8; 4] = b"FBAG";
/// Same layout as FBAG with 64-bit elements; used for checkpoints.
const MAGIC_F64: &[u8; 4] = b"DBAG";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagFormat {
    Csv,
    Binary,
}

impl BagFormat {
    /// `.csv` selects CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => BagFormat::Csv,
            _ => BagFormat::Binary,
        }
    }
}

pub fn load_bag(path: &Path, format: BagFormat, modality: Modality) -> Result<InstanceBag> {
    let features = match format {
        BagFormat::Csv => read_csv_matrix(path)?,
        BagFormat::Binary => load_matrix(path)?,
    };
    let case_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    InstanceBag::new(features, modality, case_id)
}

pub fn save_bag(bag: &InstanceBag, path: &Path, format: BagFormat) -> Result<()> {
    match format {
        BagFormat::Csv => write_csv_matrix(bag.features(), path),
        BagFormat::Binary => {
            let bytes = encode(bag.features(), MAGIC_F32, |v, out| {
                out.extend_from_slice(&(v as f32).to_le_bytes())
            })?;
            write_file(path, &bytes)
        }
    }
}

/// Writes a matrix in the 64-bit variant of the binary layout (bit-exact).
pub fn save_matrix_f64(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let bytes = encode(matrix, MAGIC_F64, |v, out| out.extend_from_slice(&v.to_le_bytes()))?;
    write_file(path, &bytes)
}

/// Reads either binary variant into an `f64` matrix without finiteness checks.
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn encode(matrix: &Array2<f64>, magic: &[u8; 4], push: impl Fn(f64, &mut Vec<u8>)) -> Result<Vec<u8>> {
    let (rows, cols) = matrix.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Shape(format!("{rows} rows overflow u32")))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Shape(format!("{cols} cols overflow u32")))?;
    let width = if magic == MAGIC_F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * width);
    out.extend_from_slice(magic);
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    for &v in matrix.iter() {
        push(v, &mut out);
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    let width = match &bytes[..4] {
        m if m == MAGIC_F32 => 4,
        m if m == MAGIC_F64 => 8,
        m => return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(m)))),
    };
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "header declares {rows}x{cols} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let values: Vec<f64> = if width == 4 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Nine significant digits.
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.8e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}

fn read_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let cols = reader.headers().map_err(|e| csv_err(path, e))?.len();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != cols {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields, expected {cols}",
                path.display(),
                line + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("{}: row {}: cannot parse {field:?}", path.display(), line + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
}

fn write_csv_matrix(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..matrix.ncols()).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in matrix.rows() {
        let fields: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Long format: `category,attribute,value`, categories in first-seen order.
pub fn load_profile(path: &Path) -> Result<GenomicProfile> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut categories: Vec<(String, Vec<f64>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != 3 {
            return Err(Error::Format(format!(
                "{}: row {} must have 3 fields",
                path.display(),
                line + 1
            )));
        }
        let name = &record[0];
        let index: usize = record[1].trim().parse().map_err(|_| {
            Error::Format(format!("{}: row {}: bad attribute index", path.display(), line + 1))
        })?;
        let value: f64 = record[2].trim().parse().map_err(|_| {
            Error::Format(format!("{}: row {}: bad value", path.display(), line + 1))
        })?;
        let slot = match categories.iter().position(|(n, _)| n == name) {
            Some(i) => i,
            None => {
                categories.push((name.to_string(), Vec::new()));
                categories.len() - 1
            }
        };
        let attrs = &mut categories[slot].1;
        if index != attrs.len() {
            return Err(Error::Format(format!(
                "{}: row {}: attribute index {index} out of order for {name:?}",
                path.display(),
                line + 1
            )));
        }
        attrs.push(value);
    }
    GenomicProfile::new(categories)
}

pub fn save_profile(profile: &GenomicProfile, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "category,attribute,value").unwrap();
    for (name, attrs) in profile.categories() {
        for (i, &v) in attrs.iter().enumerate() {
            writeln!(buf, "{name},{i},{}", fmt_num(v)).unwrap();
        }
    }
    write_file(path, &buf)
}
