//! CSV files for matrices and result tables. Each file opens with a
//! `# digest=<hex>` line naming the configuration that produced it.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

const DIGEST_PREFIX: &str = "# digest=";

fn parse_err(path: Option<&Path>, e: impl std::fmt::Display) -> Error {
    match path {
        Some(p) => Error::Parse(format!("{}: {e}", p.display())),
        None => Error::Parse(e.to_string()),
    }
}

/// Rows of `m`, one line each, floats in shortest round-trip form.
pub fn write_matrix(mut w: impl Write, digest: &str, m: &Array2<f64>) -> Result<()> {
    writeln!(w, "{DIGEST_PREFIX}{digest}")?;
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.rows() {
        out.write_record(row.iter().map(|v| v.to_string())).map_err(|e| parse_err(None, e))?;
    }
    out.flush()?;
    Ok(())
}

/// Returns the digest line's value, if present, and the matrix.
pub fn read_matrix(text: &str) -> Result<(Option<String>, Array2<f64>)> {
    let digest = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(DIGEST_PREFIX))
        .map(|d| d.trim().to_string());
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(None, e))?;
        if *n_cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse(format!("row {} has {} columns, expected {}", n_rows + 1, rec.len(), n_cols.unwrap())));
        }
        for field in rec.iter() {
            data.push(field.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: '{field}': {e}", n_rows + 1)))?);
        }
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| Error::Parse("matrix file has no rows".into()))?;
    Ok((digest, Array2::from_shape_vec((n_rows, n_cols), data).expect("shape counted")))
}

pub fn save_matrix(path: &Path, digest: &str, m: &Array2<f64>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_matrix(std::io::BufWriter::new(f), digest, m)
}

pub fn load_matrix(path: &Path) -> Result<(Option<String>, Array2<f64>)> {
    let text = std::fs::read_to_string(path)?;
    read_matrix(&text).map_err(|e| match e {
        Error::Parse(msg) => parse_err(Some(path), msg),
        e => e,
    })
}

/// Header row from the field names of `S`, then one line per row.
pub fn write_table<S: Serialize>(mut w: impl Write, digest: &str, rows: &[S]) -> Result<()> {
    writeln!(w, "{DIGEST_PREFIX}{digest}")?;
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| parse_err(None, e))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_table<S: Serialize>(path: &Path, digest: &str, rows: &[S]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_table(std::io::BufWriter::new(f), digest, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = array![[0.1, 1.0 / 3.0, 1e-300], [2.5e9, 0.0, -7.0]];
        let mut buf = Vec::new();
        write_matrix(&mut buf, "ab12", &m).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# digest=ab12\n"));
        let (d, back) = read_matrix(&text).unwrap();
        assert_eq!(d.as_deref(), Some("ab12"));
        assert_eq!(back, m);
    }

    #[test]
    fn ragged_or_bad_rows_fail() {
        assert!(read_matrix("1,2\n3\n").is_err());
        assert!(read_matrix("1,x\n").is_err());
        assert!(read_matrix("# digest=0\n").is_err());
        let (d, m) = read_matrix("1, 2\n3, 4\n").unwrap();
        assert!(d.is_none());
        assert_eq!(m, array![[1.0, 2.0], [3.0, 4.0]]);
    }
}
