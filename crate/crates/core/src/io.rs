//! Text formats: numeric CSV tables (rows are observations, optional header
//! row), single-column vectors, partition lines and Shapley effect tables.
//!
//! Numbers are written with the shortest representation that round-trips,
//! so rewriting a file read from disk reproduces it byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::partition::Partition;
use crate::shapley::ShapleyVector;
use crate::{Error, Result};

/// A numeric table with its optional column names.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

/// Parses a numeric CSV. The first record is taken as a header when any of
/// its fields is not a number. Blank lines are skipped.
pub fn parse_table<R: Read>(input: R) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut header = None;
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        if rows == 0 && header.is_none() && parsed.iter().any(Option::is_none) {
            header = Some(record.iter().map(str::to_owned).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => width = Some(record.len()),
        }
        for (col, (field, v)) in record.iter().zip(parsed).enumerate() {
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("field {} is not a finite number: {field:?}", col + 1),
                    })
                }
            }
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    if rows == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no numeric rows".into(),
        });
    }
    Ok(Table {
        header,
        data: DMatrix::from_row_slice(rows, cols, &values),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn read_table(path: &Path) -> Result<Table> {
    open(path).and_then(parse_table).map_err(|e| e.in_file(path))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    Ok(read_table(path)?.data)
}

/// Reads a vector stored as one column or as one row.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    match m.shape() {
        (_, 1) => Ok(m.column(0).into_owned()),
        (1, _) => Ok(m.row(0).transpose()),
        (r, c) => Err(Error::InvalidInput(format!("expected a vector, found a {r}×{c} table")).in_file(path)),
    }
}

pub fn write_table<W: Write>(out: W, data: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(h) = header {
        if h.len() != data.ncols() {
            return Err(Error::DimensionMismatch {
                expected: data.ncols(),
                found: h.len(),
            });
        }
        w.write_record(h)?;
    }
    for row in data.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector<W: Write>(out: W, v: &DVector<f64>, name: &str) -> Result<()> {
    write_table(out, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()), Some(&[name.to_owned()]))
}

/// Reads the first non-blank line of a partition file. The dimension is
/// checked against `p` when given.
pub fn read_partition(path: &Path, p: Option<usize>) -> Result<Partition> {
    let inner = || -> Result<Partition> {
        let mut text = String::new();
        for line in open(path)?.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                text = line;
                break;
            }
        }
        let part: Partition = text.trim().parse()?;
        if let Some(p) = p {
            if part.p() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: part.p(),
                });
            }
        }
        Ok(part)
    };
    inner().map_err(|e| e.in_file(path))
}

pub fn write_partition<W: Write>(mut out: W, b: &Partition) -> Result<()> {
    writeln!(out, "{b}")?;
    Ok(())
}

/// Writes `index,group_id,eta` rows with 1-based index and group numbers.
pub fn write_eta<W: Write>(out: W, eta: &ShapleyVector, b: &Partition) -> Result<()> {
    if b.p() != eta.len() {
        return Err(Error::DimensionMismatch {
            expected: eta.len(),
            found: b.p(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "group_id", "eta"])?;
    for (i, e) in eta.eta().iter().enumerate() {
        w.write_record(&[(i + 1).to_string(), (b.group_of(i) + 1).to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`, attaching the path to
/// any error.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let run = || -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_detection_and_errors() {
        let t = parse_table("a,b\n1,2\n3,4.5\n".as_bytes()).unwrap();
        assert_eq!(t.header, Some(vec!["a".into(), "b".into()]));
        assert_eq!(t.data, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]));
        let t = parse_table(" 1 , 2\n\n3,4\n".as_bytes()).unwrap();
        assert_eq!(t.header, None);
        assert_eq!(t.data.shape(), (2, 2));
        let err = parse_table("1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_table("1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_table("1,nan\n".as_bytes()).is_err());
        assert!(parse_table("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_matrix(Path::new("/nonexistent/data.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/data.csv"));
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-300, 3.0, 1.0 / 3.0, 7.0, -0.0]);
        let path = dir.path().join("m.csv");
        write_file(&path, |w| write_table(w, &m, None)).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        let first = std::fs::read(&path).unwrap();
        let reread = read_matrix(&path).unwrap();
        write_file(&path, |w| write_table(w, &reread, None)).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);

        let v = DVector::from_vec(vec![1.0, 2.0]);
        let vp = dir.path().join("v.csv");
        write_file(&vp, |w| write_vector(w, &v, "beta")).unwrap();
        assert_eq!(read_vector(&vp).unwrap(), v);
        std::fs::write(&vp, "1,2,3\n").unwrap();
        assert_eq!(read_vector(&vp).unwrap().len(), 3);
        assert!(read_vector(&path).is_err());

        let b: Partition = "1,3;2".parse().unwrap();
        let bp = dir.path().join("b.txt");
        write_file(&bp, |w| write_partition(w, &b)).unwrap();
        assert_eq!(std::fs::read_to_string(&bp).unwrap(), "1,3;2\n");
        assert_eq!(read_partition(&bp, Some(3)).unwrap(), b);
        assert!(read_partition(&bp, Some(4)).is_err());
    }

    #[test]
    fn eta_table() {
        let eta = ShapleyVector::new(DVector::from_vec(vec![0.25, 0.5, 0.25])).unwrap();
        let b: Partition = "1,3;2".parse().unwrap();
        let mut out = Vec::new();
        write_eta(&mut out, &eta, &b).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "index,group_id,eta\n1,1,0.25\n2,2,0.5\n3,1,0.25\n");
    }

    proptest! {
        #[test]
        fn table_round_trip(rows in 1usize..6, cols in 1usize..5, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, "io-test", 0);
            let m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1e6..1e6) * 10f64.powi(rng.random_range(-20..20)));
            let header: Vec<String> = (0..cols).map(|j| format!("x{}", j + 1)).collect();
            let mut out = Vec::new();
            write_table(&mut out, &m, Some(&header)).unwrap();
            let t = parse_table(out.as_slice()).unwrap();
            prop_assert_eq!(t.header, Some(header));
            prop_assert_eq!(t.data, m);
        }
    }
}
