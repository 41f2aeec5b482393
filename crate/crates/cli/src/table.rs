//! Plain comma-separated tables. Every value written by the runner is a
//! number or a bare token, so no quoting is needed.

use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            header: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    /// Appends the same value to every row under a new column.
    pub fn tag(&mut self, column: &str, value: &str) {
        self.header.push(column.to_string());
        for r in &mut self.rows {
            r.push(value.to_string());
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines.next()?.split(',').map(str::to_string).collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        rows.iter()
            .all(|r| r.len() == header.len())
            .then_some(Self { header, rows })
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("malformed table {}", path.display()),
            )
        })
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_csv())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name)?.into_iter().map(|v| v.parse().ok()).collect()
    }

    /// Copy without the wall-clock columns (names ending in `_ms`).
    pub fn without_timing(&self) -> Self {
        let keep: Vec<usize> = (0..self.header.len())
            .filter(|&i| !self.header[i].ends_with("_ms"))
            .collect();
        Self {
            header: keep.iter().map(|&i| self.header[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
                .collect(),
        }
    }
}

/// Fixed-precision float formatting for table cells.
pub fn f(v: f64) -> String {
    format!("{v:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_timing_strip() {
        let mut t = Table::new(&["resolution", "decrypt_ms", "points"]);
        t.push(vec!["100".into(), f(1.5), "8".into()]);
        t.push(vec!["50".into(), f(0.7), "4".into()]);
        t.tag("seed", "7");
        let back = Table::parse(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column_f64("decrypt_ms").unwrap(), vec![1.5, 0.7]);
        let s = back.without_timing();
        assert_eq!(s.header, vec!["resolution", "points", "seed"]);
        assert_eq!(s.rows[1], vec!["50", "4", "7"]);
        assert!(Table::parse("a,b\n1\n").is_none());
    }
}
