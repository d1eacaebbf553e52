//! Column-oriented view of a CSV file with a header row. Cells are kept as
//! text and parsed when a column is requested, so unused columns may hold
//! anything.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct DataTable {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    // file line of each row, for messages
    lines: Vec<u64>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

impl DataTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let csv_err = |e: csv::Error| CliError::validation(format!("{}: {e}", path.display()));
        let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(CliError::validation(format!("{}: missing header row", path.display())));
        }
        for (k, h) in headers.iter().enumerate() {
            if headers[..k].contains(h) {
                return Err(CliError::validation(format!("{}: duplicate column '{h}'", path.display())));
            }
        }
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            lines.push(rec.position().map_or(0, |p| p.line()));
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(DataTable {
            path: path.to_path_buf(),
            headers,
            rows,
            lines,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::validation(format!(
                "{}: no column '{name}' (columns: {})",
                self.path.display(),
                self.headers.join(", ")
            ))
        })
    }

    /// Numeric column with `None` for empty or `NA` cells.
    pub fn optional_column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self.column_index(name)?;
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(row, line)| {
                let cell = row[c].as_str();
                if is_missing(cell) {
                    return Ok(None);
                }
                cell.parse::<f64>().map(Some).map_err(|_| {
                    CliError::validation(format!(
                        "{} line {line}, column '{name}': cannot read '{cell}' as a number",
                        self.path.display()
                    ))
                })
            })
            .collect()
    }

    /// Numeric column that may not have missing cells.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let vals = self.optional_column(name)?;
        vals.iter()
            .zip(&self.lines)
            .map(|(v, line)| {
                v.ok_or_else(|| {
                    CliError::validation(format!(
                        "{} line {line}, column '{name}': missing value not allowed here",
                        self.path.display()
                    ))
                })
            })
            .collect()
    }

    /// Positive integer labels, returned zero-based.
    pub fn label_column(&self, name: &str) -> Result<Vec<usize>> {
        let vals = self.column(name)?;
        vals.iter()
            .zip(&self.lines)
            .map(|(&v, line)| {
                if v >= 1.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
                    Ok(v as usize - 1)
                } else {
                    Err(CliError::validation(format!(
                        "{} line {line}, column '{name}': group labels must be integers from 1, got {v}",
                        self.path.display()
                    )))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> DataTable {
        DataTable::from_reader(text.as_bytes(), Path::new("t.csv")).unwrap()
    }

    #[test]
    fn missing_cells() {
        let t = table("y,x\n1,2\nNA,3\n,4\n");
        assert_eq!(t.optional_column("y").unwrap(), vec![Some(1.0), None, None]);
        assert_eq!(t.column("x").unwrap(), vec![2.0, 3.0, 4.0]);
        let err = t.column("y").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("'y'"), "{err}");
    }

    #[test]
    fn bad_cells_and_columns() {
        let t = table("y,name\n1,a\n2.5e1,b\n");
        assert_eq!(t.column("y").unwrap(), vec![1.0, 25.0]);
        assert!(t.column("name").unwrap_err().to_string().contains("cannot read 'a'"));
        assert!(t.column("z").unwrap_err().to_string().contains("no column 'z'"));
        assert!(table("g\n1\n2.5\n").label_column("g").is_err());
        assert!(table("g\n0\n").label_column("g").is_err());
        assert_eq!(table("g\n1\n3\n").label_column("g").unwrap(), vec![0, 2]);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(DataTable::from_reader("a,b\n1\n".as_bytes(), Path::new("r.csv")).is_err());
        assert!(DataTable::from_reader("a,a\n1,2\n".as_bytes(), Path::new("r.csv")).is_err());
    }
}
