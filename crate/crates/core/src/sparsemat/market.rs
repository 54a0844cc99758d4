//! Matrix Market coordinate files (`real`, `general` or `symmetric`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::CsrMatrix;
use crate::error::{Error, Result};

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix_market(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn read_matrix_market(reader: impl BufRead) -> Result<CsrMatrix> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (line_no, header) = match lines.next() {
        Some((no, l)) => (no, l.map_err(|e| Error::io("<input>", e))?),
        None => return Err(parse_err(1, "empty file")),
    };
    let symmetric = parse_header(line_no, &header)?;

    let mut size: Option<(usize, usize)> = None;
    let mut triplets = Vec::new();
    for (no, line) in lines {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let Some((n, _)) = size else {
            if fields.len() != 3 {
                return Err(parse_err(no, "size line must be `rows cols nnz`"));
            }
            let rows = parse_usize(no, fields[0])?;
            let cols = parse_usize(no, fields[1])?;
            let nnz = parse_usize(no, fields[2])?;
            if rows != cols {
                return Err(parse_err(
                    no,
                    format!("matrix is not square ({rows}x{cols})"),
                ));
            }
            size = Some((rows, nnz));
            triplets.reserve(if symmetric { 2 * nnz } else { nnz });
            continue;
        };
        if fields.len() != 3 {
            return Err(parse_err(no, "entry must be `row col value`"));
        }
        let (i, j) = (parse_usize(no, fields[0])?, parse_usize(no, fields[1])?);
        if i == 0 || j == 0 || i > n || j > n {
            return Err(parse_err(no, format!("index ({i}, {j}) outside 1..={n}")));
        }
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(no, format!("invalid real value `{}`", fields[2])))?;
        triplets.push((i - 1, j - 1, value));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, value));
        }
    }

    let Some((n, nnz)) = size else {
        return Err(parse_err(line_no, "missing size line"));
    };
    let listed = if symmetric {
        triplets.iter().filter(|(r, c, _)| r >= c).count()
    } else {
        triplets.len()
    };
    if listed != nnz {
        return Err(parse_err(
            0,
            format!("header announces {nnz} entries, file lists {listed}"),
        ));
    }
    let a = CsrMatrix::from_triplets(n, triplets)?;
    if symmetric && !a.is_structurally_symmetric() {
        return Err(Error::InvalidMatrix(
            "symmetric file did not expand to a symmetric matrix".into(),
        ));
    }
    Ok(a)
}

/// Returns whether the file is tagged symmetric.
fn parse_header(line: usize, header: &str) -> Result<bool> {
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if tokens.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(parse_err(line, "header must start with %%MatrixMarket"));
    }
    if tokens.len() != 5 {
        return Err(parse_err(
            line,
            "header must be `%%MatrixMarket matrix coordinate <field> <symmetry>`",
        ));
    }
    if tokens[1] != "matrix" {
        return Err(parse_err(
            line,
            format!("unsupported object `{}`", tokens[1]),
        ));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(
            line,
            format!("unsupported format `{}`", tokens[2]),
        ));
    }
    if tokens[3] != "real" && tokens[3] != "double" {
        return Err(parse_err(
            line,
            format!("unsupported field `{}`", tokens[3]),
        ));
    }
    match tokens[4].as_str() {
        "general" => Ok(false),
        "symmetric" => Ok(true),
        other => Err(parse_err(line, format!("unsupported symmetry `{other}`"))),
    }
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(line, format!("invalid integer `{s}`")))
}

/// Writes `a` in coordinate format; symmetric matrices are stored as their
/// lower triangle. Values use the shortest round-trip representation.
pub fn write_matrix_market(a: &CsrMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(a, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_to(a: &CsrMatrix, w: &mut impl Write) -> std::io::Result<()> {
    let symmetric = a.is_symmetric();
    let entries: Vec<(usize, usize, f64)> = (0..a.n())
        .flat_map(|r| a.row(r).map(move |(c, v)| (r, c, v)))
        .filter(|&(r, c, _)| !symmetric || r >= c)
        .collect();
    let kind = if symmetric { "symmetric" } else { "general" };
    writeln!(w, "%%MatrixMarket matrix coordinate real {kind}")?;
    writeln!(w, "{} {} {}", a.n(), a.n(), entries.len())?;
    for (r, c, v) in entries {
        writeln!(w, "{} {} {:e}", r + 1, c + 1, v)?;
    }
    Ok(())
}
