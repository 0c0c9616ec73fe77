//! On-disk formats.
//!
//! Matrices and vectors use a small binary container:
//!
//! | bytes | content                               |
//! |-------|---------------------------------------|
//! | 0..8  | magic `LPMAT001`                      |
//! | 8..16 | rows, little-endian `u64`             |
//! | 16..24| cols, little-endian `u64`             |
//! | 24..  | `rows * cols` little-endian `f64`, row-major |
//!
//! Vectors are stored as a single column. Traces are CSV with the header
//! [`TRACE_HEADER`] followed by an optional `sign_hash` column.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::diagnostics::IterationRecord;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"LPMAT001";

/// Required trace columns, in order.
pub const TRACE_HEADER: [&str; 9] =
    ["k", "F_eps", "psi", "step_norm", "rel_step", "support_size", "eps_norm1", "mse", "stationarity"];
pub const SIGN_HASH_COLUMN: &str = "sign_hash";

pub fn write_matrix<W: Write>(mut w: W, a: &Array2<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(a.len() * 8);
    for v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|e| Error::Format(format!("truncated matrix header: {e}")))?;
    if &head[..8] != MATRIX_MAGIC {
        return Err(Error::Format("bad magic bytes, not a matrix file".into()));
    }
    let rows = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes")) as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("dimensions {rows}x{cols} overflow")))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != len {
        return Err(Error::Format(format!(
            "expected {len} payload bytes for a {rows}x{cols} matrix, found {}",
            body.len()
        )));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_vector<W: Write>(w: W, v: &Array1<f64>) -> Result<()> {
    let col = v.view().insert_axis(ndarray::Axis(1));
    write_matrix(w, &col.to_owned())
}

pub fn read_vector<R: Read>(r: R) -> Result<Array1<f64>> {
    let m = read_matrix(r)?;
    if m.ncols() != 1 {
        return Err(Error::Format(format!("expected a single column, found {} columns", m.ncols())));
    }
    Ok(m.column(0).to_owned())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Plain CSV export of a matrix, one row per line.
pub fn write_matrix_csv<W: Write>(w: W, a: &Array2<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in a.rows() {
        out.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(w: W, records: &[IterationRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER.iter().chain(std::iter::once(&SIGN_HASH_COLUMN))).map_err(csv_err)?;
    for r in records {
        out.write_record([
            r.k.to_string(),
            fmt_f64(r.f_eps),
            fmt_f64(r.psi),
            fmt_f64(r.step_norm),
            fmt_f64(r.rel_step),
            r.support_size.to_string(),
            fmt_f64(r.eps_norm1),
            opt(r.mse),
            opt(r.stationarity),
            r.sign_hash.map(|h| h.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a trace CSV; errors carry the 1-based line number of the bad row.
pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<IterationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| Error::Format(format!("line 1: {e}")))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_hash = match names.as_slice() {
        n if n == TRACE_HEADER => false,
        n if n.len() == 10 && n[..9] == TRACE_HEADER && n[9] == SIGN_HASH_COLUMN => true,
        _ => {
            return Err(Error::Format(format!(
                "line 1: expected header `{}` (optionally followed by `{SIGN_HASH_COLUMN}`), found `{}`",
                TRACE_HEADER.join(","),
                names.join(",")
            )))
        }
    };

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Format(format!("row {line}: {e}")))?;
        let field = |j: usize| row.get(j).unwrap_or("").trim();
        let bad = |j: usize, what: &str| {
            Error::Format(format!("row {line}: column `{}` {what}: `{}`", headers.get(j).unwrap_or("?"), field(j)))
        };
        let real = |j: usize| -> Result<f64> {
            let v: f64 = field(j).parse().map_err(|_| bad(j, "is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(j, "is not finite"))
            }
        };
        let opt_real = |j: usize| -> Result<Option<f64>> {
            if field(j).is_empty() {
                Ok(None)
            } else {
                real(j).map(Some)
            }
        };
        let int = |j: usize| -> Result<usize> { field(j).parse().map_err(|_| bad(j, "is not an integer")) };
        let record = IterationRecord {
            k: int(0)?,
            f_eps: real(1)?,
            psi: real(2)?,
            step_norm: real(3)?,
            rel_step: real(4)?,
            support_size: int(5)?,
            eps_norm1: real(6)?,
            mse: opt_real(7)?,
            stationarity: opt_real(8)?,
            sign_hash: if has_hash && !field(9).is_empty() {
                Some(field(9).parse().map_err(|_| bad(9, "is not an unsigned integer"))?)
            } else {
                None
            },
        };
        if let Some(prev) = records.last().map(|r: &IterationRecord| r.k) {
            if record.k <= prev {
                return Err(Error::Format(format!("row {line}: iteration {} does not increase", record.k)));
            }
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::tests::record;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn matrix_header_layout() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(&buf[..8], b"LPMAT001");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 2.0);
        assert_eq!(buf.len(), 24 + 6 * 8);
    }

    #[test]
    fn matrix_read_errors() {
        assert!(matches!(read_matrix(&b"NOTAMATRIX0000000000000000"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &array![[1.0, 2.0]]).unwrap();
        buf.pop();
        assert!(matches!(read_matrix(&buf[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &array![[1.0, 2.0]]).unwrap();
        assert!(read_vector(&buf[..]).is_err());
    }

    #[test]
    fn trace_round_trip_and_optional_cells() {
        let mut recs: Vec<_> = (0..3).map(|k| record(k, 1.0 / (k as f64 + 3.0), 1e-170, k, 77)).collect();
        recs[1].mse = Some(0.125);
        recs[2].stationarity = Some(3.3e-9);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,F_eps,psi,step_norm,rel_step,support_size,eps_norm1,mse,stationarity,sign_hash\n"));
        assert!(text.lines().nth(1).unwrap().contains(",,"));
        assert_eq!(read_trace_csv(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn trace_without_sign_column() {
        let text = "k,F_eps,psi,step_norm,rel_step,support_size,eps_norm1,mse,stationarity\n0,1,1,0,0,2,1,,\n";
        let recs = read_trace_csv(text.as_bytes()).unwrap();
        assert_eq!(recs[0].sign_hash, None);
        assert_eq!(recs[0].support_size, 2);
    }

    #[test]
    fn malformed_trace_reports_row() {
        let text = "k,F_eps,psi,step_norm,rel_step,support_size,eps_norm1,mse,stationarity\n0,1,1,0,0,2,1,,\n1,1,oops,0,0,2,1,,\n";
        let err = read_trace_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("psi"), "{err}");
        let err = read_trace_csv("a,b\n1,2\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 1"));
    }

    proptest! {
        #[test]
        fn floats_and_matrices_round_trip(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..24)) {
            for v in &vals {
                prop_assert_eq!(fmt_f64(*v).parse::<f64>().unwrap().to_bits(), v.to_bits());
            }
            let cols = vals.len();
            let a = Array2::from_shape_vec((1, cols), vals).unwrap();
            let mut buf = Vec::new();
            write_matrix(&mut buf, &a).unwrap();
            prop_assert_eq!(read_matrix(&buf[..]).unwrap(), a);
        }
    }
}
