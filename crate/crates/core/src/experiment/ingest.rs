//! CSV dataset ingestion.
//!
//! Regression files have the header `x1,...,xd,y`; location files have `z1,...,zd`.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::model::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    Regression { dim: usize },
    Location { dim: usize },
}

impl CsvLayout {
    pub fn dim(&self) -> usize {
        match *self {
            CsvLayout::Regression { dim } | CsvLayout::Location { dim } => dim,
        }
    }

    pub fn family(&self) -> LossFamily {
        match *self {
            CsvLayout::Regression { dim } => LossFamily::OlsRegression { dim },
            CsvLayout::Location { dim } => LossFamily::SquaredLocation { dim },
        }
    }
}

fn layout_of(header: &csv::StringRecord) -> Result<CsvLayout> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let numbered = |prefix: &str, cols: &[&str]| cols.iter().enumerate().all(|(i, c)| *c == format!("{prefix}{}", i + 1));
    let bad = || Error::Parse { line: 1, message: format!("unrecognised header `{}`", names.join(",")) };
    match names.split_last() {
        Some((&"y", xs)) if !xs.is_empty() && numbered("x", xs) => Ok(CsvLayout::Regression { dim: xs.len() }),
        Some(_) if numbered("z", &names) => Ok(CsvLayout::Location { dim: names.len() }),
        _ => Err(bad()),
    }
}

pub fn parse_samples_csv(reader: impl Read) -> Result<(Vec<Sample>, CsvLayout)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let layout = layout_of(rdr.headers()?)?;
    let width = match layout {
        CsvLayout::Regression { dim } => dim + 1,
        CsvLayout::Location { dim } => dim,
    };
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        if record.len() != width {
            return Err(Error::Parse { line, message: format!("expected {width} fields, got {}", record.len()) });
        }
        let values = record
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { line, message: format!("`{f}` is not a finite number") }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(match layout {
            CsvLayout::Regression { dim } => Sample::regression(values[..dim].to_vec(), values[dim]),
            CsvLayout::Location { .. } => Sample::location(values),
        });
    }
    Ok((rows, layout))
}

pub fn read_samples_csv(path: &Path) -> Result<(Vec<Sample>, CsvLayout)> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_samples_csv(std::io::BufReader::new(file))
}
