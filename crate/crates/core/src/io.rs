//! Readers for weights matrices (Matrix Market coordinate files, 0-based edge lists)
//! and design matrices (headerless CSV, one observation per row).

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

/// Parses a `%%MatrixMarket matrix coordinate` file (real, integer or pattern entries).
pub fn read_matrix_market<R: BufRead>(reader: R) -> Result<DMatrix<f64>> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = header?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, "missing %%MatrixMarket matrix header"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(1, format!("unsupported format '{}'", tokens[2])));
    }
    let pattern = match tokens[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" => true,
        other => return Err(parse_err(1, format!("unsupported field '{other}'"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => return Err(parse_err(1, format!("unsupported symmetry '{other}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut matrix = DMatrix::zeros(0, 0);
    let mut seen = 0usize;
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(lineno, "size line must be 'rows cols nnz'"));
                }
                let parse = |s: &str| s.parse::<usize>().map_err(|e| parse_err(lineno, e.to_string()));
                let dims = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                matrix = DMatrix::zeros(dims.0, dims.1);
                size = Some(dims);
            }
            Some((rows, cols, _)) => {
                let want = if pattern { 2 } else { 3 };
                if fields.len() < want {
                    return Err(parse_err(lineno, format!("expected {want} fields")));
                }
                let i: usize = fields[0].parse().map_err(|_| parse_err(lineno, "bad row index"))?;
                let j: usize = fields[1].parse().map_err(|_| parse_err(lineno, "bad column index"))?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(lineno, format!("index ({i}, {j}) out of range")));
                }
                let v: f64 = if pattern {
                    1.0
                } else {
                    fields[2].parse().map_err(|_| parse_err(lineno, "bad value"))?
                };
                matrix[(i - 1, j - 1)] = v;
                if i != j {
                    match symmetry {
                        Symmetry::Symmetric => matrix[(j - 1, i - 1)] = v,
                        Symmetry::SkewSymmetric => matrix[(j - 1, i - 1)] = -v,
                        Symmetry::General => {}
                    }
                }
                seen += 1;
            }
        }
    }
    match size {
        None => Err(parse_err(1, "missing size line")),
        Some((_, _, nnz)) if nnz != seen => {
            Err(parse_err(0, format!("header announces {nnz} entries, found {seen}")))
        }
        Some(_) => Ok(matrix),
    }
}

/// Parses `i j weight` triples (0-based). `n` defaults to one past the largest index.
pub fn read_edge_list<R: BufRead>(reader: R, n: Option<usize>) -> Result<DMatrix<f64>> {
    let mut triples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = trimmed.split_whitespace().collect();
        if f.len() != 3 {
            return Err(parse_err(idx + 1, "expected 'i j weight'"));
        }
        let i: usize = f[0].parse().map_err(|_| parse_err(idx + 1, "bad index"))?;
        let j: usize = f[1].parse().map_err(|_| parse_err(idx + 1, "bad index"))?;
        let w: f64 = f[2].parse().map_err(|_| parse_err(idx + 1, "bad weight"))?;
        triples.push((i, j, w));
    }
    let inferred = triples.iter().map(|t| t.0.max(t.1) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(inferred);
    if inferred > n {
        return Err(parse_err(0, format!("index {} exceeds dimension {n}", inferred - 1)));
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, j, w) in triples {
        m[(i, j)] = w;
    }
    Ok(m)
}

/// Headerless CSV, rows are observations and columns regressors.
pub fn read_design_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| parse_err(idx + 1, format!("not a number: '{s}'"))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(idx + 1, "ragged row"));
            }
        }
        rows.push(row);
    }
    let k = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
}

/// Loads a weights matrix; `.mtx` files are read as Matrix Market, anything else as an edge list.
/// Writes the nonzero entries of `m` in Matrix Market coordinate real general format.
pub fn write_matrix_market<W: Write>(mut out: W, m: &DMatrix<f64>, comments: &[String]) -> std::io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    for c in comments {
        writeln!(out, "% {c}")?;
    }
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    writeln!(out, "{} {} {nnz}", m.nrows(), m.ncols())?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                writeln!(out, "{} {} {}", i + 1, j + 1, m[(i, j)])?;
            }
        }
    }
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<DMatrix<f64>> {
    let reader = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        read_matrix_market(reader)
    } else {
        read_edge_list(reader, None)
    }
}

pub fn load_design(path: &Path) -> Result<DMatrix<f64>> {
    read_design_csv(File::open(path)?)
}
