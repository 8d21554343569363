//! CSV and JSON artifact writers. Every number is checked to be finite.

use std::path::{Path, PathBuf};

use collapse_core::ensemble::{BornReport, EnsembleResult};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{file}: non-finite value in column `{column}`")]
    NonFinite { file: String, column: String },
}

/// Shortest round-trip decimal form; exponent notation for tiny and huge
/// magnitudes.
pub fn number(x: f64) -> String {
    format!("{x:?}")
}

/// A CSV table written in one go, so a failed finiteness check leaves no
/// partial file.
pub struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    /// Column of the first non-finite number.
    non_finite: Option<usize>,
}

impl Table {
    pub fn new<S: Into<String>>(name: &str, header: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.to_string(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            non_finite: None,
        }
    }

    /// Starts a row; cells are appended with [`Row::num`] and [`Row::text`].
    pub fn row(&mut self) -> Row<'_> {
        self.rows.push(Vec::with_capacity(self.header.len()));
        Row { table: self }
    }

    pub fn write(&self, dir: &Path) -> Result<String, OutputError> {
        if let Some(c) = self.non_finite {
            return Err(OutputError::NonFinite {
                file: self.name.clone(),
                column: self.header.get(c).cloned().unwrap_or_default(),
            });
        }
        let path = dir.join(&self.name);
        let csv_err = |source| OutputError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| OutputError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(self.name.clone())
    }
}

pub struct Row<'a> {
    table: &'a mut Table,
}

impl Row<'_> {
    pub fn num(self, x: f64) -> Self {
        if !x.is_finite() && self.table.non_finite.is_none() {
            self.table.non_finite = self.table.rows.last().map(Vec::len);
        }
        self.text(number(x))
    }

    pub fn int(self, x: impl ToString) -> Self {
        self.text(x.to_string())
    }

    pub fn text(self, s: impl Into<String>) -> Self {
        self.table.rows.last_mut().expect("row started").push(s.into());
        self
    }
}

pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<String, OutputError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| OutputError::Io { path, source })?;
    Ok(name.to_string())
}

/// `t, mean_X, se_X, …` for every ensemble column.
pub fn moments_table(result: &EnsembleResult) -> Table {
    let mut header = vec!["t".to_string()];
    for c in &result.columns {
        header.push(format!("mean_{c}"));
        header.push(format!("se_{c}"));
    }
    let mut table = Table::new("moments.csv", header);
    for (g, &t) in result.times.iter().enumerate() {
        let mut row = table.row().num(t);
        for c in 0..result.columns.len() {
            row = row.num(result.mean(c, g)).num(result.se(c, g));
        }
    }
    table
}

/// One row per trajectory. `class` is empty for unclassified trajectories;
/// failed trajectories carry their error and no final variance.
pub fn terminals_table(result: &EnsembleResult) -> Table {
    let mut table = Table::new(
        "terminals.csv",
        ["traj_id", "seed", "class", "nearest", "final_V", "steps", "error"],
    );
    for t in &result.terminals {
        let row = table
            .row()
            .int(t.index)
            .int(t.seed)
            .text(t.class.map_or_else(String::new, |c| c.to_string()))
            .int(t.nearest);
        let row = if t.error.is_some() {
            row.text("")
        } else {
            row.num(t.final_variance)
        };
        row.int(t.steps).text(t.error.clone().unwrap_or_default());
    }
    table
}

pub fn born_table(report: &BornReport) -> Table {
    let mut table = Table::new("born.csv", ["group", "p", "p_hat", "se", "z"]);
    for r in &report.rows {
        let row = table.row().int(r.group).num(r.p).num(r.p_hat).num(r.se);
        // A zero-SE group that misses its target has an unbounded z.
        if r.z.is_finite() {
            row.num(r.z);
        } else {
            row.text("");
        }
    }
    table
}

/// `t, purity_slot_0, …` from the ensemble-mean purity columns.
pub fn purity_table(result: &EnsembleResult) -> Table {
    let cols: Vec<usize> = result.extra_names.iter().filter_map(|n| result.column(n)).collect();
    let mut table = Table::new(
        "purity.csv",
        std::iter::once("t".to_string()).chain(result.extra_names.iter().cloned()),
    );
    for (g, &t) in result.times.iter().enumerate() {
        let mut row = table.row().num(t);
        for &c in &cols {
            row = row.num(result.mean(c, g));
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, -2.5, 1e-20, 6.02e23, 0.1 + 0.2, f64::MIN_POSITIVE] {
            assert_eq!(number(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn non_finite_cells_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("x.csv", ["a", "b"]);
        t.row().num(1.0).num(f64::NAN);
        assert!(matches!(t.write(dir.path()), Err(OutputError::NonFinite { .. })));
        assert!(!dir.path().join("x.csv").exists());
        let mut t = Table::new("y.csv", ["a"]);
        t.row().num(f64::NEG_INFINITY);
        assert!(t.write(dir.path()).is_err());
    }
}
