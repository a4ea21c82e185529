//! Portable field files.
//!
//! Format "FLD1": an ASCII header of two lines followed by raw values.
//!
//! ```text
//! FLD1 <ndim> <n1> <n2> [<n3>]\n
//! <x-min> <x-max> <y-min> <y-max> [<t-min> <t-max>]\n
//! ```
//!
//! The payload is `n1*n2*n3` IEEE-754 little-endian 64-bit values in the
//! fixed t-major/y/x storage order. `n1 n2 n3` are the x, y, t node counts.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Axis, GridSpec, ScalarField};

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

pub fn write_field(field: &ScalarField, path: &Path) -> Result<()> {
    let g = &field.grid;
    let mut out = Vec::with_capacity(64 + 8 * field.values.len());
    match g.t {
        Some(t) => {
            write!(out, "FLD1 3 {} {} {}\n", g.nx(), g.ny(), t.n)?;
            write!(
                out,
                "{} {} {} {} {} {}\n",
                g.x.min, g.x.max, g.y.min, g.y.max, t.min, t.max
            )?;
        }
        None => {
            write!(out, "FLD1 2 {} {}\n", g.nx(), g.ny())?;
            write!(out, "{} {} {} {}\n", g.x.min, g.x.max, g.y.min, g.y.max)?;
        }
    }
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path)?;
    read_field_bytes(&bytes)
}

pub fn read_field_bytes(bytes: &[u8]) -> Result<ScalarField> {
    let nl1 = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(bytes.len(), "missing header line"))?;
    let line1 = std::str::from_utf8(&bytes[..nl1]).map_err(|_| parse_err(0, "header is not ASCII"))?;
    let mut toks = line1.split_whitespace();
    if toks.next() != Some("FLD1") {
        return Err(parse_err(0, "missing FLD1 magic"));
    }
    let ndim: usize = toks
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(5, "bad ndim"))?;
    if ndim != 2 && ndim != 3 {
        return Err(parse_err(5, format!("unsupported ndim {ndim}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut().take(ndim) {
        *d = toks
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(nl1, "missing dimension"))?;
    }
    if toks.next().is_some() {
        return Err(parse_err(nl1, "trailing tokens in dimension line"));
    }

    let rest = &bytes[nl1 + 1..];
    let nl2 = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(bytes.len(), "missing axis line"))?;
    let line2 = std::str::from_utf8(&rest[..nl2])
        .map_err(|_| parse_err(nl1 + 1, "axis line is not ASCII"))?;
    let mut ranges = Vec::new();
    for tok in line2.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(nl1 + 1, format!("bad axis number '{tok}'")))?;
        ranges.push(v);
    }
    if ranges.len() != 2 * ndim {
        return Err(parse_err(
            nl1 + 1,
            format!("expected {} axis numbers, got {}", 2 * ndim, ranges.len()),
        ));
    }

    let grid = if ndim == 3 {
        GridSpec::space_time(
            Axis::new(ranges[0], ranges[1], dims[0])?,
            Axis::new(ranges[2], ranges[3], dims[1])?,
            Axis::new(ranges[4], ranges[5], dims[2])?,
        )
    } else {
        GridSpec::spatial(
            Axis::new(ranges[0], ranges[1], dims[0])?,
            Axis::new(ranges[2], ranges[3], dims[1])?,
        )
    };

    let data_start = nl1 + 1 + nl2 + 1;
    let payload = &bytes[data_start..];
    let count = grid.n_values();
    if payload.len() != 8 * count {
        return Err(parse_err(
            data_start + payload.len().min(8 * count),
            format!("payload holds {} bytes, header implies {}", payload.len(), 8 * count),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let mut b = [0u8; 8];
        b.copy_from_slice(&payload[8 * k..8 * k + 8]);
        let v = f64::from_le_bytes(b);
        if !v.is_finite() {
            return Err(parse_err(data_start + 8 * k, format!("non-finite value {v}")));
        }
        values.push(v);
    }
    ScalarField::new(grid, values)
}

/// Write one CSV matrix per time slice as `<stem>_t<k>.csv`.
/// Rows run over y ascending, columns over x ascending.
pub fn export_csv(field: &ScalarField, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for it in 0..field.grid.nt() {
        let path = dir.join(format!("{stem}_t{it}.csv"));
        let mut body = String::new();
        for iy in 0..field.grid.ny() {
            for ix in 0..field.grid.nx() {
                if ix > 0 {
                    body.push(',');
                }
                body.push_str(&format!("{}", field.at(ix, iy, it)));
            }
            body.push('\n');
        }
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Read a CSV matrix written by [`export_csv`]; rows over y, columns over x.
pub fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split(',') {
            row.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(k, format!("bad csv number '{tok}'")))?,
            );
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, GridSpec, ScalarField};

    fn demo_field() -> ScalarField {
        let g = GridSpec::space_time(
            Axis::new(1.0, 2.0, 4).unwrap(),
            Axis::new(-0.5, 0.5, 3).unwrap(),
            Axis::new(0.0, 1.0, 5).unwrap(),
        );
        ScalarField::from_fn(g, |x, y, t| x * 7.1 - y * 0.3 + t.exp())
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let f = demo_field();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fld");
        write_field(&f, &path).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(f.grid, back.grid);
        assert_eq!(f.values, back.values);
    }

    #[test]
    fn truncated_payload_is_a_parse_error() {
        let f = demo_field();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fld");
        write_field(&f, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        match read_field_bytes(&bytes) {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_a_parse_error() {
        // header says 2x2x2 but 7 values follow
        let mut bytes = b"FLD1 3 2 2 2\n0 1 0 1 0 1\n".to_vec();
        for k in 0..7 {
            bytes.extend_from_slice(&(k as f64).to_le_bytes());
        }
        match read_field_bytes(&bytes) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("64")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_names_offset() {
        let mut bytes = b"FLD1 2 2 2\n0 1 0 1\n".to_vec();
        let data_start = bytes.len();
        for v in [1.0, f64::NAN, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        match read_field_bytes(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, data_start + 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(read_field_bytes(b"FLDX 2 2 2\n0 1 0 1\n").is_err());
    }

    #[test]
    fn csv_export_layout() {
        let g = GridSpec::spatial(Axis::new(0.0, 1.0, 2).unwrap(), Axis::new(0.0, 1.0, 2).unwrap());
        let f = ScalarField::new(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = export_csv(&f, dir.path(), "m").unwrap();
        assert_eq!(paths.len(), 1);
        let body = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(body, "1,2\n3,4\n");
        let back = read_csv_matrix(&paths[0]).unwrap();
        assert_eq!(back, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
