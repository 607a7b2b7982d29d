//! Deterministic CSV table writing. Every row carries the run id so table
//! cells trace back to the run that produced them; floats use fixed-width
//! formatting so identical runs give identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

pub fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn fmt_p(v: f64) -> String {
    format!("{v:.6e}")
}

pub struct CsvTable {
    pub name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str]) -> CsvTable {
        let mut full_header = vec!["run_id".to_string()];
        full_header.extend(header.iter().map(|s| s.to_string()));
        CsvTable {
            name: name.to_string(),
            header: full_header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, run_id: &str, cells: Vec<String>) {
        assert_eq!(
            cells.len() + 1,
            self.header.len(),
            "row width mismatch in table {}",
            self.name
        );
        let mut row = vec![run_id.to_string()];
        row.extend(cells);
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(file, "{}", self.header.join(","))?;
        for row in &self.rows {
            writeln!(file, "{}", row.join(","))?;
        }
        file.flush()?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = CsvTable::new("demo", &["a", "b"]);
        t.push("run1", vec![fmt_f(0.5), fmt_p(1.0e-12)]);
        let p1 = t.write_to(dir.path()).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        let p2_dir = tempfile::tempdir().unwrap();
        let p2 = t.write_to(p2_dir.path()).unwrap();
        assert_eq!(bytes1, std::fs::read(&p2).unwrap());
        assert_eq!(
            String::from_utf8(bytes1).unwrap(),
            "run_id,a,b\nrun1,0.500000,1.000000e-12\n"
        );
    }
}
