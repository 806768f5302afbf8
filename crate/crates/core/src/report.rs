//! CSV artifact emission. One dialect: comma separator, `.` decimal,
//! LF line endings, UTF-8, header row, numbers at 12 significant digits.

use std::io::Write;
use std::path::Path;

use crate::Result;

/// 12 significant digits in scientific notation. Deterministic: two equal
/// f64 values always print identically.
pub fn format_value(v: f64) -> String {
    format!("{:.11e}", v)
}

/// In-memory CSV table; call [`Table::write_to`] to emit the artifact.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>, I: IntoIterator<Item = S>>(header: I) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row<S: Into<String>, I: IntoIterator<Item = S>>(&mut self, cells: I) {
        let row: Vec<String> = cells.into_iter().map(Into::into).collect();
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn push_values<I: IntoIterator<Item = f64>>(&mut self, values: I) {
        let row: Vec<String> = values.into_iter().map(format_value).collect();
        assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}
