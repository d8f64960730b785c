//! Matrix Market and CSV ingestion into dense matrices, plus writers for
//! fixtures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use eigsal::numkernel::{DenseMatrix, NumError};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

fn parse_err(line: usize, msg: impl Into<String>) -> MatrixIoError {
    MatrixIoError::Parse { line, msg: msg.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MatrixFormat {
    /// Pick by extension: `.csv` is CSV, anything else Matrix Market.
    Auto,
    Mm,
    Csv,
}

impl MatrixFormat {
    fn resolve(self, path: &Path) -> MatrixFormat {
        match self {
            MatrixFormat::Auto => {
                let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
                if csv {
                    MatrixFormat::Csv
                } else {
                    MatrixFormat::Mm
                }
            }
            f => f,
        }
    }
}

pub fn parse_matrix(path: &Path, format: MatrixFormat) -> Result<DenseMatrix, MatrixIoError> {
    let text = fs::read_to_string(path).map_err(|source| MatrixIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format.resolve(path) {
        MatrixFormat::Csv => parse_csv(&text),
        _ => parse_matrix_market(&text),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Complex,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
    Hermitian,
}

impl Symmetry {
    /// Value stored at the mirrored position `(j, i)` for an entry at
    /// `(i, j)` below the diagonal.
    fn mirror(self, z: Complex64) -> Option<Complex64> {
        match self {
            Symmetry::General => None,
            Symmetry::Symmetric => Some(z),
            Symmetry::SkewSymmetric => Some(-z),
            Symmetry::Hermitian => Some(z.conj()),
        }
    }
}

struct Header {
    coordinate: bool,
    field: Field,
    symmetry: Symmetry,
}

fn parse_header(line: &str) -> Result<Header, MatrixIoError> {
    let words: Vec<String> = line.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(parse_err(1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    let coordinate = match words[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(parse_err(1, format!("unknown format '{other}'"))),
    };
    let field = match words[3].as_str() {
        "real" | "integer" | "double" => Field::Real,
        "complex" => Field::Complex,
        other => return Err(parse_err(1, format!("unsupported field '{other}'"))),
    };
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        "hermitian" => Symmetry::Hermitian,
        other => return Err(parse_err(1, format!("unknown symmetry '{other}'"))),
    };
    if symmetry == Symmetry::Hermitian && field != Field::Complex {
        return Err(parse_err(1, "hermitian symmetry needs a complex field"));
    }
    Ok(Header { coordinate, field, symmetry })
}

fn number(tok: &str, line: usize) -> Result<f64, MatrixIoError> {
    tok.parse::<f64>().map_err(|_| parse_err(line, format!("not a number: '{tok}'")))
}

fn index(tok: &str, line: usize, bound: usize) -> Result<usize, MatrixIoError> {
    let i: usize = tok.parse().map_err(|_| parse_err(line, format!("not an index: '{tok}'")))?;
    if i == 0 || i > bound {
        return Err(parse_err(line, format!("index {i} outside 1..={bound}")));
    }
    Ok(i - 1)
}

fn value(toks: &[&str], field: Field, line: usize) -> Result<Complex64, MatrixIoError> {
    let want = if field == Field::Complex { 2 } else { 1 };
    if toks.len() != want {
        return Err(parse_err(line, format!("expected {want} value token(s), found {}", toks.len())));
    }
    let re = number(toks[0], line)?;
    let im = if want == 2 { number(toks[1], line)? } else { 0.0 };
    Ok(Complex64::new(re, im))
}

pub fn parse_matrix_market(text: &str) -> Result<DenseMatrix, MatrixIoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = parse_header(first)?;
    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });

    let (size_line, size) = body.next().ok_or_else(|| parse_err(2, "missing size line"))?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    let want = if header.coordinate { 3 } else { 2 };
    if dims.len() != want {
        return Err(parse_err(size_line, format!("size line needs {want} integers")));
    }
    let dim = |k: usize| -> Result<usize, MatrixIoError> {
        dims[k].parse().map_err(|_| parse_err(size_line, format!("not an integer: '{}'", dims[k])))
    };
    let (rows, cols) = (dim(0)?, dim(1)?);
    if rows == 0 || cols == 0 {
        return Err(parse_err(size_line, "matrix dimensions must be positive"));
    }
    if header.symmetry != Symmetry::General && rows != cols {
        return Err(parse_err(size_line, "symmetric storage needs a square matrix"));
    }
    let mut entries = vec![Complex64::new(0.0, 0.0); rows * cols];
    let mut put = |i: usize, j: usize, z: Complex64| {
        entries[i * cols + j] = z;
        if i != j {
            if let Some(m) = header.symmetry.mirror(z) {
                entries[j * cols + i] = m;
            }
        }
    };

    if header.coordinate {
        let nnz = dim(2)?;
        let mut seen = 0;
        for (line, l) in body {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() < 2 {
                return Err(parse_err(line, "expected 'row col value'"));
            }
            seen += 1;
            if seen > nnz {
                return Err(parse_err(line, format!("more than the declared {nnz} entries")));
            }
            let i = index(toks[0], line, rows)?;
            let j = index(toks[1], line, cols)?;
            if header.symmetry != Symmetry::General && j > i {
                return Err(parse_err(line, "symmetric storage lists the lower triangle only"));
            }
            put(i, j, value(&toks[2..], header.field, line)?);
        }
        if seen != nnz {
            return Err(MatrixIoError::Shape(format!("declared {nnz} entries, found {seen}")));
        }
    } else {
        // Column-major, lower triangle only for symmetric storage.
        let slots: Vec<(usize, usize)> = (0..cols)
            .flat_map(|j| {
                let start = match header.symmetry {
                    Symmetry::General => 0,
                    Symmetry::SkewSymmetric => j + 1,
                    _ => j,
                };
                (start..rows).map(move |i| (i, j))
            })
            .collect();
        let mut next = slots.iter();
        let mut last_line = size_line;
        for (line, l) in body {
            last_line = line;
            let toks: Vec<&str> = l.split_whitespace().collect();
            let &(i, j) = next
                .next()
                .ok_or_else(|| parse_err(line, format!("more than the expected {} values", slots.len())))?;
            put(i, j, value(&toks, header.field, line)?);
        }
        if next.next().is_some() {
            return Err(parse_err(last_line, format!("expected {} values, file ends early", slots.len())));
        }
    }
    Ok(DenseMatrix::new(rows, cols, entries)?)
}

pub fn parse_csv(text: &str) -> Result<DenseMatrix, MatrixIoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, l) in text.lines().enumerate() {
        let line = k + 1;
        let t = l.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t.split(',').map(|tok| number(tok.trim(), line)).collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(line, format!("row has {} columns, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MatrixIoError::Shape("no rows".into()));
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(DenseMatrix::from_real_rows(&refs)?)
}

/// CSV of reals; fails on complex entries. Shortest round-trip float
/// formatting makes parsing back bit-exact.
pub fn write_csv(m: &DenseMatrix) -> Result<String, MatrixIoError> {
    if !m.is_real() {
        return Err(MatrixIoError::Shape("CSV holds real matrices only".into()));
    }
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|j| format!("{}", m.get(i, j).re)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Matrix Market array format, real when every entry is real.
pub fn write_matrix_market(m: &DenseMatrix) -> String {
    let real = m.is_real();
    let mut out = format!("%%MatrixMarket matrix array {} general\n", if real { "real" } else { "complex" });
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            let z = m.get(i, j);
            let _ = if real { writeln!(out, "{}", z.re) } else { writeln!(out, "{} {}", z.re, z.im) };
        }
    }
    out
}

pub fn write_matrix(path: &Path, m: &DenseMatrix, format: MatrixFormat) -> Result<(), MatrixIoError> {
    let text = match format.resolve(path) {
        MatrixFormat::Csv => write_csv(m)?,
        _ => write_matrix_market(m),
    };
    fs::write(path, text).map_err(|source| MatrixIoError::Io {
        path: path.display().to_string(),
        source,
    })
}
