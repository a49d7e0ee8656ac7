//! CSV tables with a versioned schema line.
//!
//! The first line of every file is `#schema=<name>/<version>`; the second is
//! the column header. Floats are written with Rust's shortest round-trip
//! formatting, so identical values always produce identical bytes.

use std::fmt::Display;
use std::path::Path;

use vaerobust::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: String,
    pub version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Formats a value for a table cell.
pub fn cell(v: impl Display) -> String {
    v.to_string()
}

impl Table {
    pub fn new(schema: &str, version: u32, columns: &[&str]) -> Self {
        Self {
            schema: schema.to_string(),
            version,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Contract(format!(
                "{} row has {} cells, expected {}",
                self.schema,
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| Error::Contract(e.to_string()))?;
        Ok(format!("#schema={}/{}\n{body}", self.schema, self.version))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let tag = first
            .trim_end()
            .strip_prefix("#schema=")
            .ok_or_else(|| format_err(0, "missing #schema= line"))?;
        let (schema, version) = tag
            .rsplit_once('/')
            .ok_or_else(|| format_err(0, "schema tag needs a /version suffix"))?;
        let version: u32 = version
            .parse()
            .map_err(|_| format_err(0, format!("bad schema version {version:?}")))?;
        let mut r = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
        let columns: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(csv_err)?;
        Ok(Self {
            schema: schema.to_string(),
            version,
            columns,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Index of `name`, or a format error naming the missing column.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("{} table is missing column {name:?}", self.schema)))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<f64>()
                    .map_err(|_| Error::Config(format!("column {name:?}: {:?} is not a number", r[i])))
            })
            .collect()
    }

    pub fn str_column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn expect_schema(&self, schema: &str, version: u32) -> Result<()> {
        if self.schema != schema || self.version != version {
            return Err(Error::Config(format!(
                "expected schema {schema}/{version}, found {}/{}",
                self.schema, self.version
            )));
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    format_err(offset, e.to_string())
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut t = Table::new("demo", 2, &["a", "b"]);
        t.push(vec![cell(0.1), cell("x,y")]).unwrap();
        t.push(vec![cell(1e-300), cell(f64::INFINITY)]).unwrap();
        let s = t.to_csv_string().unwrap();
        assert!(s.starts_with("#schema=demo/2\na,b\n"));
        let back = Table::parse(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.f64_column("a").unwrap(), vec![0.1, 1e-300]);
        assert!(back.f64_column("b").is_err());
        let missing = back.column("c").unwrap_err().to_string();
        assert!(missing.contains("\"c\""), "{missing}");
    }

    #[test]
    fn rejects_bad_headers_and_rows() {
        assert!(Table::parse("a,b\n1,2\n").is_err());
        assert!(Table::parse("#schema=demo\na\n").is_err());
        let mut t = Table::new("demo", 1, &["a"]);
        assert!(t.push(vec![]).is_err());
        assert!(Table::parse("#schema=demo/1\na\n1\n").unwrap().expect_schema("other", 1).is_err());
    }
}
