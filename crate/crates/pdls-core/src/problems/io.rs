//! On-disk formats for instances and results: full-precision matrix
//! CSV, ASCII PGM images, and a flat `key=value` manifest.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::trace::full_precision;

/// Header line `rows,cols`, a line with the two sizes, then one CSV
/// line per row at full precision.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(w, "rows,cols")?;
    writeln!(w, "{},{}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let cells: Vec<String> = (0..m.ncols()).map(|j| full_precision(m[(i, j)])).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(r: R) -> io::Result<DMatrix<f64>> {
    let bad = |what: String| io::Error::new(io::ErrorKind::InvalidData, what);
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == "rows,cols" => {}
        _ => return Err(bad("missing rows,cols header".into())),
    }
    let dims = lines.next().ok_or_else(|| bad("missing size line".into()))??;
    let parts: Vec<&str> = dims.trim_end().split(',').collect();
    if parts.len() != 2 {
        return Err(bad("size line needs two comma-separated values".into()));
    }
    let rows: usize = parts[0].parse().map_err(|e| bad(format!("bad row count: {e}")))?;
    let cols: usize = parts[1].parse().map_err(|e| bad(format!("bad col count: {e}")))?;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line = lines.next().ok_or_else(|| bad(format!("missing row {i}")))??;
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != cols {
            return Err(bad(format!("row {i}: expected {cols} values, got {}", cells.len())));
        }
        for (j, c) in cells.iter().enumerate() {
            m[(i, j)] = c.parse().map_err(|e| bad(format!("row {i} col {j}: {e}")))?;
        }
    }
    Ok(m)
}

/// Plain-text PGM (`P2`) of a row-major square image, linearly scaled
/// so the largest value maps to 255. An all-zero image stays zero.
pub fn write_pgm<W: Write>(mut w: W, img: &DVector<f64>, side: usize) -> io::Result<()> {
    assert_eq!(img.len(), side * side, "image is not side x side");
    let peak = img.iter().cloned().fold(0.0f64, f64::max);
    writeln!(w, "P2")?;
    writeln!(w, "{side} {side}")?;
    writeln!(w, "255")?;
    for r in 0..side {
        let line: Vec<String> = (0..side)
            .map(|c| {
                let v = img[r * side + c].max(0.0);
                let g = if peak > 0.0 { (v / peak * 255.0).round() as u32 } else { 0 };
                g.min(255).to_string()
            })
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// One `key=value` pair per line; keys must not contain `=`.
pub fn write_manifest<W: Write>(mut w: W, pairs: &[(String, String)]) -> io::Result<()> {
    for (k, v) in pairs {
        assert!(!k.contains('='), "manifest key contains '='");
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> io::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim_end();
        if t.is_empty() {
            continue;
        }
        match t.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("manifest line without '=': {t}"),
                ))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn matrix_csv_roundtrip_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 5e-300, 2.0, 1e300, -0.0]);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(m.shape(), back.shape());
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_csv_rejects_ragged_rows() {
        let text = "rows,cols\n2,2\n1.0,2.0\n3.0\n";
        assert!(read_matrix_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn pgm_scales_to_255() {
        let img = dvector![0.0, 1.0, 2.0, 4.0];
        let mut buf = Vec::new();
        write_pgm(&mut buf, &img, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "P2\n2 2\n255\n0 64\n128 255\n");
    }

    #[test]
    fn pgm_of_zeros_is_zero() {
        let img = DVector::zeros(4);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &img, 2).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("0 0\n0 0\n"));
    }

    #[test]
    fn manifest_roundtrip() {
        let pairs = vec![
            ("solver".to_string(), "alg2_sum".to_string()),
            ("seed".to_string(), "7".to_string()),
        ];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &pairs).unwrap();
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), pairs);
        assert!(read_manifest("no separator\n".as_bytes()).is_err());
    }
}
