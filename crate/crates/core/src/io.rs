//! Text formats for tensors and models.
//!
//! Tensors use the coordinate format: one entry per line, `N` 1-based indices
//! followed by the value, whitespace separated. Lines starting with `#` are
//! comments; a `# dims I J K` comment fixes the shape, otherwise each mode
//! is as large as its largest index.
//!
//! Models are written as
//!
//! ```text
//! # kruskal <rank>
//! # dims I J K
//! lambda l_1 ... l_R
//! factor 0
//! <I rows of R values>
//! factor 1
//! ...
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{FactorMatrix, SparseTensor};

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Reads a coordinate file.
pub fn parse_coordinate_file(path: impl AsRef<Path>) -> Result<SparseTensor> {
    parse_coordinates(File::open(path)?)
}

pub fn parse_coordinates<R: Read>(reader: R) -> Result<SparseTensor> {
    let mut header_dims: Option<Vec<usize>> = None;
    let mut ndims: Option<usize> = None;
    let mut coords = Vec::new();
    let mut values = Vec::new();

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            if words.next() == Some("dims") {
                if ndims.is_some() {
                    return Err(parse_error(line_no, "dims header after the first entry"));
                }
                let dims = words
                    .map(|w| w.parse::<usize>().map_err(|_| parse_error(line_no, format!("bad mode size {w:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                if dims.is_empty() {
                    return Err(parse_error(line_no, "dims header without sizes"));
                }
                ndims = Some(dims.len());
                header_dims = Some(dims);
            }
            continue;
        }

        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let n = *ndims.get_or_insert(fields.len().saturating_sub(1));
        if n == 0 || fields.len() != n + 1 {
            return Err(parse_error(line_no, format!("expected {} fields, found {}", n.max(1) + 1, fields.len())));
        }
        for (mode, field) in fields[..n].iter().enumerate() {
            let index: usize = field
                .parse()
                .map_err(|_| parse_error(line_no, format!("bad index {field:?}")))?;
            if index == 0 {
                return Err(parse_error(line_no, "indices are 1-based"));
            }
            if let Some(dims) = &header_dims {
                if index > dims[mode] {
                    return Err(parse_error(
                        line_no,
                        format!("index {index} exceeds mode {mode} size {}", dims[mode]),
                    ));
                }
            }
            coords.push(index - 1);
        }
        let value: f64 = fields[n]
            .parse()
            .map_err(|_| parse_error(line_no, format!("bad value {:?}", fields[n])))?;
        if !value.is_finite() {
            return Err(parse_error(line_no, format!("non-finite value {value}")));
        }
        values.push(value);
    }

    let Some(n) = ndims else {
        return Err(Error::DegenerateInput("no entries and no dims header".into()));
    };
    if values.is_empty() && header_dims.is_none() {
        return Err(Error::DegenerateInput("no entries".into()));
    }
    let dims = header_dims.unwrap_or_else(|| {
        let mut dims = vec![0usize; n];
        for c in coords.chunks_exact(n) {
            for (d, &i) in dims.iter_mut().zip(c) {
                *d = (*d).max(i + 1);
            }
        }
        dims
    });
    SparseTensor::new(dims, coords, values)
}

/// Writes `x` with a dims header; values are written in shortest round-trip form.
pub fn write_coordinate_file(path: impl AsRef<Path>, x: &SparseTensor) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_coordinates(&mut out, x)?;
    out.flush()?;
    Ok(())
}

pub fn write_coordinates<W: Write>(out: &mut W, x: &SparseTensor) -> Result<()> {
    write!(out, "# dims")?;
    for d in x.dims() {
        write!(out, " {d}")?;
    }
    writeln!(out)?;
    for (c, v) in x.iter() {
        for i in c {
            write!(out, "{} ", i + 1)?;
        }
        writeln!(out, "{v:?}")?;
    }
    Ok(())
}

pub fn write_model_file(path: impl AsRef<Path>, m: &KruskalModel) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(&mut out, m)?;
    out.flush()?;
    Ok(())
}

pub fn write_model<W: Write>(out: &mut W, m: &KruskalModel) -> Result<()> {
    writeln!(out, "# kruskal {}", m.rank())?;
    write!(out, "# dims")?;
    for d in m.dims() {
        write!(out, " {d}")?;
    }
    writeln!(out)?;
    write!(out, "lambda")?;
    for l in m.lambda.iter() {
        write!(out, " {l:?}")?;
    }
    writeln!(out)?;
    for (mode, f) in m.factors.iter().enumerate() {
        writeln!(out, "factor {mode}")?;
        for row in f.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", cells.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<KruskalModel> {
    read_model(File::open(path)?)
}

pub fn read_model<R: Read>(reader: R) -> Result<KruskalModel> {
    let mut lambda: Option<Vec<f64>> = None;
    let mut factors: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut last_line = 0;

    let floats = |line_no: usize, words: &[&str]| -> Result<Vec<f64>> {
        words
            .iter()
            .map(|w| w.parse::<f64>().map_err(|_| parse_error(line_no, format!("bad number {w:?}"))))
            .collect()
    };

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let words: Vec<&str> = trimmed.split_whitespace().collect();
        match words[0] {
            "lambda" => {
                if lambda.is_some() {
                    return Err(parse_error(line_no, "second lambda line"));
                }
                lambda = Some(floats(line_no, &words[1..])?);
            }
            "factor" => {
                let expected = factors.len().to_string();
                if words.len() != 2 || words[1] != expected {
                    return Err(parse_error(line_no, format!("expected \"factor {expected}\"")));
                }
                factors.push(Vec::new());
            }
            _ => {
                let row = floats(line_no, &words)?;
                let (Some(l), Some(f)) = (&lambda, factors.last_mut()) else {
                    return Err(parse_error(line_no, "values before lambda and factor headers"));
                };
                if row.len() != l.len() {
                    return Err(parse_error(line_no, format!("expected {} values, found {}", l.len(), row.len())));
                }
                f.push(row);
            }
        }
    }

    let lambda = lambda.ok_or_else(|| parse_error(last_line, "missing lambda line"))?;
    if factors.is_empty() {
        return Err(parse_error(last_line, "no factors"));
    }
    let rank = lambda.len();
    let factors = factors
        .into_iter()
        .map(|rows| FactorMatrix::from_row_iterator(rows.len(), rank, rows.into_iter().flatten()))
        .collect();
    KruskalModel::new(factors, DVector::from_vec(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    fn parse(text: &str) -> Result<SparseTensor> {
        parse_coordinates(text.as_bytes())
    }

    #[test]
    fn single_entry() {
        let x = parse("1 1 1 5.0\n").unwrap();
        assert_eq!(x.dims(), &[1, 1, 1]);
        assert_eq!(x.get(&[0, 0, 0]), 5.0);
        assert_eq!(x.nnz(), 1);
    }

    #[test]
    fn duplicates_summed_and_comments_skipped() {
        let x = parse("# a comment\n1 1 1 2.0\n\n# another\n1 1 1 3.0\n2 3 1 -1e-3\n").unwrap();
        assert_eq!(x.dims(), &[2, 3, 1]);
        assert_eq!(x.get(&[0, 0, 0]), 5.0);
        assert_eq!(x.get(&[1, 2, 0]), -1e-3);
    }

    #[test]
    fn dims_header() {
        let x = parse("# dims 4 5 6\n1 2 3 1.5\n").unwrap();
        assert_eq!(x.dims(), &[4, 5, 6]);
        assert!(matches!(parse("# dims 2 2 2\n3 1 1 1.0\n"), Err(Error::Parse { line: 2, .. })));
        assert_eq!(parse("# dims 3 3\n").unwrap(), SparseTensor::zeros(vec![3, 3]));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            ("1 1 1 1.0\n1 1 2.0\n", 2),
            ("1 1 1 1.0\n# c\n1 x 1 2.0\n", 3),
            ("0 1 1 1.0\n", 1),
            ("1 1 1 abc\n", 1),
            ("1 1 1 NaN\n", 1),
            ("5.0\n", 1),
        ];
        for (text, line) in cases {
            match parse(text) {
                Err(Error::Parse { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn empty_input_is_degenerate() {
        assert!(matches!(parse(""), Err(Error::DegenerateInput(_))));
        assert!(matches!(parse("# only comments\n"), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn coordinate_round_trip() {
        for seed in 0..4 {
            let x = generate(&[7, 6, 5], 2, 0.4, 0.3, seed).unwrap().tensor;
            let mut buf = Vec::new();
            write_coordinates(&mut buf, &x).unwrap();
            assert_eq!(parse_coordinates(buf.as_slice()).unwrap(), x);
        }
    }

    #[test]
    fn model_round_trip() {
        let m = generate(&[4, 3, 5], 3, 1.0, 0.0, 9).unwrap().model;
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(read_model(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn model_errors() {
        assert!(read_model("factor 0\n1 2\n".as_bytes()).is_err());
        assert!(matches!(
            read_model("lambda 1 2\nfactor 0\n1 2 3\n".as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(read_model("lambda 1\nfactor 1\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
