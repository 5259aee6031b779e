//! Matrix Market coordinate files (`real`/`integer`, `general`/`symmetric`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::CsrMatrix;
use crate::error::{Error, Result};

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse(&text).map_err(|(line, msg)| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

pub fn write_matrix_market(a: &CsrMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_string(a))?;
    Ok(())
}

/// Serializes with 17 significant digits, which round-trips every `f64`.
pub(crate) fn to_string(a: &CsrMatrix) -> String {
    let mut out = String::with_capacity(32 * a.nnz() + 64);
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.nnz());
    for (i, j, v) in a.triplets() {
        let _ = writeln!(out, "{} {} {:.16e}", i + 1, j + 1, v);
    }
    out
}

type ParseResult<T> = std::result::Result<T, (usize, String)>;

pub(crate) fn parse(text: &str) -> ParseResult<CsrMatrix> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (hline, header) = lines.next().ok_or((1, "empty file".to_string()))?;
    let fields: Vec<String> = header
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err((hline, format!("malformed header: {header:?}")));
    }
    if fields[2] != "coordinate" {
        return Err((hline, format!("unsupported format {:?}", fields[2])));
    }
    if fields[3] != "real" && fields[3] != "integer" && fields[3] != "double" {
        return Err((hline, format!("unsupported field {:?}", fields[3])));
    }
    let symmetric = match fields[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err((hline, format!("unsupported symmetry {other:?}"))),
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = body.next().ok_or((hline, "missing size line".to_string()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| (sline, format!("bad size line: {e}")))?;
    if dims.len() != 3 {
        return Err((sline, "size line needs rows, cols, entries".into()));
    }
    let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
    if nrows != ncols {
        return Err((sline, format!("matrix is {nrows}x{ncols}, expected square")));
    }

    let mut trip = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    let mut seen = std::collections::HashSet::with_capacity(trip.capacity());
    let mut count = 0usize;
    for (lno, line) in body {
        count += 1;
        if count > nnz {
            return Err((lno, format!("more than the declared {nnz} entries")));
        }
        let mut it = line.split_whitespace();
        let mut index = |what: &str, bound: usize| -> ParseResult<usize> {
            let t = it.next().ok_or((lno, format!("missing {what} index")))?;
            let v: usize = t
                .parse()
                .map_err(|_| (lno, format!("bad {what} index {t:?}")))?;
            if v == 0 || v > bound {
                return Err((lno, format!("{what} index {v} out of range 1..={bound}")));
            }
            Ok(v - 1)
        };
        let i = index("row", nrows)?;
        let j = index("column", ncols)?;
        let t = it.next().ok_or((lno, "missing value".to_string()))?;
        let v: f64 = t.parse().map_err(|_| (lno, format!("bad value {t:?}")))?;
        if !seen.insert((i, j)) {
            return Err((lno, format!("duplicate entry ({}, {})", i + 1, j + 1)));
        }
        trip.push((i, j, v));
        if symmetric && i != j {
            if !seen.insert((j, i)) {
                return Err((lno, format!("duplicate entry ({}, {})", j + 1, i + 1)));
            }
            trip.push((j, i, v));
        }
    }
    if count != nnz {
        return Err((sline, format!("declared {nnz} entries, found {count}")));
    }
    CsrMatrix::from_triplets(nrows, ncols, &trip).map_err(|e| (sline, e.to_string()))
}
