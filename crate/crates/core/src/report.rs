//! Plain-text experiment reports: `key = value` headers followed by CSV tables.

use std::fmt::Write as _;

/// An ordered report: scalar entries, then named CSV tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
    tables: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    /// Floats are written with `{:e}` so they round-trip exactly.
    pub fn float(&mut self, key: &str, value: f64) -> &mut Self {
        self.entry(key, format!("{value:e}"))
    }

    pub fn table(&mut self, name: &str, header: &str, rows: Vec<String>) -> &mut Self {
        self.tables.push(Table {
            name: name.to_string(),
            header: header.to_string(),
            rows,
        });
        self
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Scalar section only.
    pub fn render_entries(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = self.render_entries();
        for t in &self.tables {
            let _ = writeln!(s, "\n[{}]", t.name);
            let _ = writeln!(s, "{}", t.header);
            for r in &t.rows {
                let _ = writeln!(s, "{r}");
            }
        }
        s
    }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 64);
        s.push_str(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

/// Joins floats with commas using round-trip formatting.
pub fn csv_floats(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v:e}");
    }
    s
}
