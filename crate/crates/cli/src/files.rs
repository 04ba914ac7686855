//! Binary model and data files, plus CSV interop for data.
//!
//! Model file (little endian throughout):
//!
//! ```text
//! "SDR1" | u32 version = 1 | u8 kind (0 semidefinite, 1 polyhedral)
//!        | u32 d | u32 q (or p) | u32 r (or s) | f64 payload
//! ```
//!
//! The semidefinite payload lists the d components `L_1, …, L_d` in order,
//! each as a q×q matrix in row-major order. The polyhedral payload is the
//! d×p dictionary in row-major order.
//!
//! Data file: `"SDD1" | u32 version = 1 | u32 d | u32 n | f64 payload`, the
//! d×n matrix in column-major order (one data point after another).
//!
//! Data CSV: a header `y0,…,y{d-1}` followed by one row per data point.

use std::fs;
use std::path::Path;

use sdreg_core::learning::Regularizer;
use sdreg_core::{LinearMap, Matrix};

use crate::error::{CliError, CliResult};

pub const MODEL_MAGIC: &[u8; 4] = b"SDR1";
pub const DATA_MAGIC: &[u8; 4] = b"SDD1";
pub const FORMAT_VERSION: u32 = 1;

const KIND_SEMIDEFINITE: u8 = 0;
const KIND_POLYHEDRAL: u8 = 1;
const MODEL_HEADER: usize = 4 + 4 + 1 + 4 + 4 + 4;
const DATA_HEADER: usize = 4 + 4 + 4 + 4;

fn header_u32(value: usize, what: &str) -> Result<u32, String> {
    u32::try_from(value).map_err(|_| format!("{what} = {value} does not fit the u32 header field"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format!("truncated header: need {end} bytes, have {}", self.bytes.len()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    /// The remaining bytes as exactly `count` f64 values.
    fn payload(&mut self, count: usize) -> Result<Vec<f64>, String> {
        let rest = &self.bytes[self.pos..];
        let expected = count.checked_mul(8).ok_or("payload size overflows")?;
        if rest.len() != expected {
            return Err(format!(
                "payload has {} bytes but the header dimensions require {expected}",
                rest.len()
            ));
        }
        let values: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(format!("payload entry {k} is not finite"));
        }
        Ok(values)
    }

    fn magic_and_version(&mut self, magic: &[u8; 4]) -> Result<(), String> {
        let got = self.take(4)?;
        if got != magic {
            return Err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            ));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported version {version}, expected {FORMAT_VERSION}"));
        }
        Ok(())
    }
}

pub fn encode_model(model: &Regularizer) -> Result<Vec<u8>, String> {
    let (kind, d, size, level) = match model {
        Regularizer::Semidefinite { map, rank } => (KIND_SEMIDEFINITE, map.d(), map.q(), *rank),
        Regularizer::Polyhedral { dictionary, sparsity } => {
            (KIND_POLYHEDRAL, dictionary.nrows(), dictionary.ncols(), *sparsity)
        }
    };
    let count = match model {
        Regularizer::Semidefinite { .. } => d * size * size,
        Regularizer::Polyhedral { .. } => d * size,
    };
    let mut out = Vec::with_capacity(MODEL_HEADER + 8 * count);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&header_u32(d, "d")?.to_le_bytes());
    out.extend_from_slice(&header_u32(size, "q (or p)")?.to_le_bytes());
    out.extend_from_slice(&header_u32(level, "r (or s)")?.to_le_bytes());
    match model {
        Regularizer::Semidefinite { map, .. } => {
            let q = map.q();
            let stacked = map.stacked();
            for i in 0..d {
                for a in 0..q {
                    for b in 0..q {
                        out.extend_from_slice(&stacked[(a + b * q, i)].to_le_bytes());
                    }
                }
            }
        }
        Regularizer::Polyhedral { dictionary, .. } => {
            for row in dictionary.row_iter() {
                for v in row.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<Regularizer, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.magic_and_version(MODEL_MAGIC)?;
    let kind = cur.u8()?;
    let d = cur.u32()? as usize;
    let size = cur.u32()? as usize;
    let level = cur.u32()? as usize;
    if d == 0 || size == 0 {
        return Err(format!("dimensions must be positive, got d = {d}, size = {size}"));
    }
    if level == 0 || level > size {
        return Err(format!("rank/sparsity {level} outside 1..={size}"));
    }
    match kind {
        KIND_SEMIDEFINITE => {
            let q = size;
            let count = d.checked_mul(q * q).ok_or("payload size overflows")?;
            let values = cur.payload(count)?;
            let stacked = Matrix::from_fn(q * q, d, |row, i| {
                let (a, b) = (row % q, row / q);
                values[i * q * q + a * q + b]
            });
            let map = LinearMap::from_stacked(q, stacked).map_err(|e| e.to_string())?;
            Ok(Regularizer::Semidefinite { map, rank: level })
        }
        KIND_POLYHEDRAL => {
            let p = size;
            let count = d.checked_mul(p).ok_or("payload size overflows")?;
            let values = cur.payload(count)?;
            let dictionary = Matrix::from_row_slice(d, p, &values);
            Ok(Regularizer::Polyhedral {
                dictionary,
                sparsity: level,
            })
        }
        other => Err(format!("unknown model kind {other}")),
    }
}

pub fn encode_data(y: &Matrix) -> Result<Vec<u8>, String> {
    let (d, n) = y.shape();
    let mut out = Vec::with_capacity(DATA_HEADER + 8 * d * n);
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&header_u32(d, "d")?.to_le_bytes());
    out.extend_from_slice(&header_u32(n, "n")?.to_le_bytes());
    // nalgebra storage is column-major already.
    for v in y.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_data(bytes: &[u8]) -> Result<Matrix, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.magic_and_version(DATA_MAGIC)?;
    let d = cur.u32()? as usize;
    let n = cur.u32()? as usize;
    if d == 0 {
        return Err("dimension d must be positive".into());
    }
    let count = d.checked_mul(n).ok_or("payload size overflows")?;
    let values = cur.payload(count)?;
    Ok(Matrix::from_column_slice(d, n, &values))
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_model(path: &Path, model: &Regularizer) -> CliResult<()> {
    let bytes = encode_model(model).map_err(|m| CliError::format(path, m))?;
    write_bytes(path, &bytes)
}

pub fn read_model(path: &Path) -> CliResult<Regularizer> {
    decode_model(&read_bytes(path)?).map_err(|m| CliError::format(path, m))
}

/// Read a semidefinite model file, returning the map and its rank.
pub fn read_map(path: &Path) -> CliResult<(LinearMap, usize)> {
    match read_model(path)? {
        Regularizer::Semidefinite { map, rank } => Ok((map, rank)),
        Regularizer::Polyhedral { .. } => Err(CliError::format(path, "expected a semidefinite model, found polyhedral")),
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Write data as a binary data file, or as CSV when the path ends in `.csv`.
pub fn write_data(path: &Path, y: &Matrix) -> CliResult<()> {
    if is_csv(path) {
        return write_data_csv(path, y);
    }
    let bytes = encode_data(y).map_err(|m| CliError::format(path, m))?;
    write_bytes(path, &bytes)
}

/// Read data from a binary data file, or from CSV when the path ends in `.csv`.
pub fn read_data(path: &Path) -> CliResult<Matrix> {
    if is_csv(path) {
        return read_data_csv(path);
    }
    decode_data(&read_bytes(path)?).map_err(|m| CliError::format(path, m))
}

pub fn write_data_csv(path: &Path, y: &Matrix) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = (0..y.nrows()).map(|i| format!("y{i}")).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for col in y.column_iter() {
        w.write_record(col.iter().map(|v| v.to_string())).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_data_csv(path: &Path) -> CliResult<Matrix> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let d = r.headers().map_err(|e| csv_error(path, e))?.len();
    if d == 0 {
        return Err(CliError::format(path, "empty header row"));
    }
    let mut values = Vec::new();
    for (j, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        for (i, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::format(path, format!("row {}, column {i}: cannot parse {field:?}", j + 1)))?;
            if !v.is_finite() {
                return Err(CliError::format(path, format!("row {}, column {i}: non-finite value", j + 1)));
            }
            values.push(v);
        }
    }
    Ok(Matrix::from_column_slice(d, values.len() / d, &values))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        CliError::format(path, e.to_string())
    }
}

/// Serialize rows to a CSV file with a header row.
pub fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> LinearMap {
        let stacked = Matrix::from_fn(9, 4, |i, j| (i * 4 + j) as f64 * 0.25 - 3.0);
        LinearMap::from_stacked(3, stacked).unwrap()
    }

    #[test]
    fn semidefinite_payload_is_row_major_per_component() {
        let map = sample_map();
        let bytes = encode_model(&Regularizer::Semidefinite { map: map.clone(), rank: 2 }).unwrap();
        assert_eq!(&bytes[..4], b"SDR1");
        assert_eq!(bytes[8], 0);
        assert_eq!(bytes.len(), MODEL_HEADER + 8 * 4 * 9);
        // Second payload value is entry (0, 1) of the first component.
        let second = f64::from_le_bytes(bytes[MODEL_HEADER + 8..MODEL_HEADER + 16].try_into().unwrap());
        assert_eq!(second, map.component(0)[(0, 1)]);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, Regularizer::Semidefinite { map, rank: 2 });
    }

    #[test]
    fn polyhedral_round_trip() {
        let dict = Matrix::from_fn(3, 5, |i, j| (i as f64) - 0.5 * j as f64);
        let model = Regularizer::Polyhedral {
            dictionary: dict.clone(),
            sparsity: 2,
        };
        let bytes = encode_model(&model).unwrap();
        assert_eq!(bytes[8], 1);
        let first_row_second = f64::from_le_bytes(bytes[MODEL_HEADER + 8..MODEL_HEADER + 16].try_into().unwrap());
        assert_eq!(first_row_second, dict[(0, 1)]);
        assert_eq!(decode_model(&bytes).unwrap(), model);
    }

    #[test]
    fn rejects_bad_headers_and_lengths() {
        let good = encode_model(&Regularizer::Semidefinite {
            map: sample_map(),
            rank: 1,
        })
        .unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_model(&bad_magic).unwrap_err().contains("magic"));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(decode_model(&bad_version).unwrap_err().contains("version"));
        let short = &good[..good.len() - 8];
        assert!(decode_model(short).unwrap_err().contains("payload"));
        let mut long = good.clone();
        long.push(0);
        assert!(decode_model(&long).unwrap_err().contains("payload"));
        assert!(decode_model(&good[..6]).unwrap_err().contains("truncated"));
        let mut bad_kind = good.clone();
        bad_kind[8] = 7;
        assert!(decode_model(&bad_kind).unwrap_err().contains("kind"));
        let mut bad_rank = good;
        bad_rank[17..21].copy_from_slice(&9u32.to_le_bytes());
        assert!(decode_model(&bad_rank).unwrap_err().contains("rank"));
    }

    #[test]
    fn data_round_trip_and_layout() {
        let y = Matrix::from_fn(3, 4, |i, j| (10 * j + i) as f64);
        let bytes = encode_data(&y).unwrap();
        assert_eq!(&bytes[..4], b"SDD1");
        let second = f64::from_le_bytes(bytes[DATA_HEADER + 8..DATA_HEADER + 16].try_into().unwrap());
        assert_eq!(second, 1.0);
        assert_eq!(decode_data(&bytes).unwrap(), y);
        let mut nan = bytes.clone();
        nan[DATA_HEADER..DATA_HEADER + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_data(&nan).unwrap_err().contains("finite"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        let y = Matrix::from_fn(3, 5, |i, j| ((i + 1) as f64 / (j + 3) as f64).sin() * 1e-7);
        write_data(&path, &y).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("y0,y1,y2\n"));
        assert_eq!(read_data(&path).unwrap(), y);
    }

    #[test]
    fn csv_reports_bad_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "y0,y1\n1,2\n3,abc\n").unwrap();
        let err = read_data(&path).unwrap_err();
        assert!(err.to_string().contains("row 2, column 1"), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}
