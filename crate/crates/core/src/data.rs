//! Minimal column-oriented CSV tables. Cells holding "." or nothing are missing.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub raw: Vec<String>,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    nrows: usize,
}

fn parse_cell(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() || t == "." || t.eq_ignore_ascii_case("na") {
        return None;
    }
    t.parse::<f64>().ok()
}

impl Table {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (j, col) in raw.iter_mut().enumerate() {
                col.push(rec.get(j).unwrap_or("").to_string());
            }
        }
        let cols = headers.into_iter().zip(raw).collect();
        Self::from_raw_columns(cols)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        Self::from_reader(s.as_bytes())
    }

    pub fn from_raw_columns(cols: Vec<(String, Vec<String>)>) -> Result<Self> {
        let nrows = cols.first().map(|c| c.1.len()).unwrap_or(0);
        let mut t = Table {
            nrows,
            ..Default::default()
        };
        for (name, raw) in cols {
            if raw.len() != nrows {
                return Err(Error::Data(format!("column '{name}' has ragged length")));
            }
            if t.index.contains_key(&name) {
                return Err(Error::Data(format!("duplicate column '{name}'")));
            }
            let values = raw.iter().map(|s| parse_cell(s)).collect();
            t.index.insert(name.clone(), t.columns.len());
            t.columns.push(Column { name, raw, values });
        }
        Ok(t)
    }

    /// Builds a numeric table; `None` cells are written as ".".
    pub fn from_numeric(cols: Vec<(String, Vec<Option<f64>>)>) -> Result<Self> {
        let raw = cols
            .into_iter()
            .map(|(n, v)| {
                let r = v
                    .iter()
                    .map(|x| match x {
                        Some(x) => format_num(*x),
                        None => ".".to_string(),
                    })
                    .collect();
                (n, r)
            })
            .collect();
        Self::from_raw_columns(raw)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.index
            .get(name)
            .map(|&j| &self.columns[j])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn values(&self, name: &str) -> Result<&[Option<f64>]> {
        Ok(&self.column(name)?.values)
    }

    pub fn raw(&self, name: &str) -> Result<&[String]> {
        Ok(&self.column(name)?.raw)
    }

    /// Keeps the rows whose index satisfies `keep`, preserving order.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Table {
        let idx: Vec<usize> = (0..self.nrows).filter(|&i| keep(i)).collect();
        self.select_rows(&idx)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Table {
        let columns: Vec<Column> = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                raw: idx.iter().map(|&i| c.raw[i].clone()).collect(),
                values: idx.iter().map(|&i| c.values[i]).collect(),
            })
            .collect();
        Table {
            columns,
            index: self.index.clone(),
            nrows: idx.len(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.nrows {
            wtr.write_record(self.columns.iter().map(|c| c.raw[i].as_str()))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Shortest round-tripping decimal form, with integers printed without a fraction.
pub fn format_num(x: f64) -> String {
    if x.is_finite() && x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}
