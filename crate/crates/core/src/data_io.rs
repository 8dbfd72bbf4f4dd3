//! Reader and writer for the sparse multi-label text format used by the
//! extreme classification repository.
//!
//! ```text
//! num_points num_features num_labels
//! l0,l1,... f0:v0 f1:v1 ...
//! ```
//!
//! A line that starts with a space has no labels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::SparseRowMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseDataset {
    /// n×d features.
    pub x: SparseRowMatrix,
    /// n×l binary labels.
    pub y: SparseRowMatrix,
    pub name: String,
}

impl SparseDataset {
    pub fn new(x: SparseRowMatrix, y: SparseRowMatrix, name: impl Into<String>) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::invalid(format!(
                "features have {} rows but labels have {}",
                x.rows(),
                y.rows()
            )));
        }
        if y.values().iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("label matrix must be binary"));
        }
        Ok(Self {
            x,
            y,
            name: name.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn l(&self) -> usize {
        self.y.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            name: self.name.clone(),
        }
    }

    /// Label indices of point `i`, ascending.
    pub fn labels(&self, i: usize) -> &[usize] {
        self.y.row(i).indices
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Indices in the file start at 1.
    pub one_based: bool,
    /// Scale every feature row to unit Euclidean norm.
    pub l2_normalize: bool,
}

pub fn load_xmc_file(path: impl AsRef<Path>) -> Result<SparseDataset> {
    load_xmc_file_with(path, LoadOptions::default())
}

pub fn load_xmc_file_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<SparseDataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_xmc(BufReader::new(file), &name, path, opts)
}

struct RowBuilder {
    bound: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl RowBuilder {
    fn new(bound: usize) -> Self {
        Self {
            bound,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sorts the pending row, keeps the last value of duplicated indices and
    /// drops explicit zeros, optionally scaling the row to unit norm. Returns
    /// the number of duplicates.
    fn finish_row(&mut self, mut entries: Vec<(usize, f64)>, normalize: bool) -> usize {
        let start = self.indices.len();
        // Stable sort keeps file order among equal indices.
        entries.sort_by_key(|e| e.0);
        let mut duplicates = 0;
        let mut k = 0;
        while k < entries.len() {
            let mut last = k;
            while last + 1 < entries.len() && entries[last + 1].0 == entries[k].0 {
                last += 1;
            }
            duplicates += last - k;
            let (j, v) = entries[last];
            if v != 0.0 {
                self.indices.push(j);
                self.values.push(v);
            }
            k = last + 1;
        }
        if normalize {
            let norm = self.values[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                self.values[start..].iter_mut().for_each(|v| *v /= norm);
            }
        }
        self.indptr.push(self.indices.len());
        duplicates
    }

    fn build(self) -> SparseRowMatrix {
        SparseRowMatrix::new(
            self.indptr.len() - 1,
            self.bound,
            self.indptr,
            self.indices,
            self.values,
        )
        .expect("rows are sorted, deduplicated and in bounds")
    }
}

pub fn read_xmc<R: BufRead>(reader: R, name: &str, path: &Path, opts: LoadOptions) -> Result<SparseDataset> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| perr(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| perr(1, format!("header must be three integers: {e}")))?;
    let &[n, d, l] = dims.as_slice() else {
        return Err(perr(
            1,
            format!("header must be three integers, got {:?}", header.trim()),
        ));
    };
    let offset = usize::from(opts.one_based);
    let index = |token: &str, bound: usize, what: &str, line: usize| -> Result<usize> {
        let raw: usize = token
            .parse()
            .map_err(|_| perr(line, format!("bad {what} index {token:?}")))?;
        let idx = raw
            .checked_sub(offset)
            .ok_or_else(|| perr(line, format!("{what} index {raw} below one-based origin")))?;
        if idx >= bound {
            return Err(perr(line, format!("{what} index {raw} out of range (bound {bound})")));
        }
        Ok(idx)
    };

    let mut features = RowBuilder::new(d);
    let mut labels = RowBuilder::new(l);
    let mut count = 0;
    for (k, text) in lines.enumerate() {
        let line_no = k + 2;
        let text = text?;
        let text = text.trim_end_matches(['\r', '\n']);
        if count == n {
            if text.trim().is_empty() {
                continue;
            }
            return Err(perr(line_no, format!("more than the declared {n} points")));
        }
        let (label_field, feature_field) = if text.starts_with(char::is_whitespace) {
            ("", text)
        } else {
            match text.split_once(char::is_whitespace) {
                Some((first, rest)) if !first.contains(':') => (first, rest),
                Some(_) => ("", text),
                None if text.contains(':') => ("", text),
                None => (text, ""),
            }
        };
        let mut row_labels = Vec::new();
        for token in label_field.split(',').filter(|t| !t.is_empty()) {
            row_labels.push((index(token, l, "label", line_no)?, 1.0));
        }
        let mut row_features = Vec::new();
        for token in feature_field.split_whitespace() {
            let (j, v) = token
                .split_once(':')
                .ok_or_else(|| perr(line_no, format!("expected index:value, got {token:?}")))?;
            let j = index(j, d, "feature", line_no)?;
            let v: f64 = v
                .parse()
                .map_err(|_| perr(line_no, format!("bad feature value {v:?}")))?;
            if !v.is_finite() {
                return Err(perr(line_no, format!("non-finite feature value {v}")));
            }
            row_features.push((j, v));
        }
        let dup = features.finish_row(row_features, opts.l2_normalize) + labels.finish_row(row_labels, false);
        if dup > 0 {
            warn!(
                "{}:{line_no}: {dup} duplicate index(es), keeping the last value",
                path.display()
            );
        }
        count += 1;
    }
    if count != n {
        return Err(perr(0, format!("header declares {n} points, found {count}")));
    }
    SparseDataset::new(features.build(), labels.build(), name)
}

/// Writes `ds` in the same text format, zero-based. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_xmc<W: Write>(ds: &SparseDataset, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{} {} {}", ds.n(), ds.d(), ds.l())?;
    for i in 0..ds.n() {
        let labels: Vec<String> = ds.labels(i).iter().map(|j| j.to_string()).collect();
        write!(out, "{}", labels.join(","))?;
        for (j, v) in ds.x.row(i).iter() {
            write!(out, " {j}:{v:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_xmc_file(ds: &SparseDataset, path: impl AsRef<Path>) -> Result<()> {
    write_xmc(ds, File::create(path)?)
}

/// Reads a split file: one line per point, one whitespace-separated one-based
/// row index per split. Returns the zero-based rows of split `column`.
pub fn load_split(path: impl AsRef<Path>, column: usize) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let token = line.split_whitespace().nth(column).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg: format!("no split column {column}"),
        })?;
        let raw: usize = token.parse().ok().filter(|&v| v > 0).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg: format!("bad row index {token:?}"),
        })?;
        rows.push(raw - 1);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SparseDataset> {
        read_xmc(text.as_bytes(), "t", Path::new("t.txt"), LoadOptions::default())
    }

    #[test]
    fn parses_small_file() {
        let ds = parse("2 3 2\n0,1 0:1.0 2:0.5\n1 1:2.0\n").unwrap();
        assert_eq!((ds.n(), ds.d(), ds.l()), (2, 3, 2));
        assert_eq!(ds.labels(0), &[0, 1]);
        assert_eq!(ds.x.row(0).indices, &[0, 2]);
        assert_eq!(ds.x.row(0).values, &[1.0, 0.5]);
        assert_eq!(ds.labels(1), &[1]);
        assert_eq!(ds.x.row(1).values, &[2.0]);
    }

    #[test]
    fn leading_space_means_no_labels() {
        let ds = parse("1 1 3\n 0:1.0\n").unwrap();
        assert!(ds.labels(0).is_empty());
        assert_eq!(ds.x.row(0).values, &[1.0]);
    }

    #[test]
    fn duplicates_keep_last() {
        let ds = parse("1 3 1\n0 2:1.0 0:3.0 2:4.0\n").unwrap();
        assert_eq!(ds.x.row(0).indices, &[0, 2]);
        assert_eq!(ds.x.row(0).values, &[3.0, 4.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("2 3\n", 1),
            ("1 3 2\n0 3:1.0\n", 2),
            ("2 3 2\n0 0:1.0\n5 0:1.0\n", 3),
            ("1 3 2\n0 0:inf\n", 2),
            ("1 3 2\n0 0=1.0\n", 2),
        ] {
            match parse(text) {
                Err(Error::Parse { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn point_count_must_match_header() {
        assert!(parse("3 2 2\n0 0:1.0\n").is_err());
    }

    #[test]
    fn one_based_shift() {
        let opts = LoadOptions {
            one_based: true,
            ..Default::default()
        };
        let ds = read_xmc("1 2 2\n2 1:1.0 2:3.0\n".as_bytes(), "t", Path::new("t"), opts).unwrap();
        assert_eq!(ds.labels(0), &[1]);
        assert_eq!(ds.x.row(0).indices, &[0, 1]);
        assert!(read_xmc("1 2 2\n0 1:1.0\n".as_bytes(), "t", Path::new("t"), opts).is_err());
    }

    #[test]
    fn l2_normalization() {
        let opts = LoadOptions {
            l2_normalize: true,
            ..Default::default()
        };
        let ds = read_xmc("1 2 1\n0 0:3.0 1:4.0\n".as_bytes(), "t", Path::new("t"), opts).unwrap();
        assert_eq!(ds.x.row(0).values, &[0.6, 0.8]);
    }

    #[test]
    fn write_then_read_is_identity() {
        let ds = parse("4 4 3\n0,2 0:1.0 3:0.1\n 1:-2.5e-7\n1 \n\n").unwrap();
        assert_eq!(ds.x.row(3).nnz() + ds.labels(3).len(), 0);
        let mut buf = Vec::new();
        write_xmc(&ds, &mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
