//! Report schema and per-curve plot data.

use std::path::Path;

use crate::error::{Error, Result};

/// Columns of `report.csv`, one row per checkpoint.
pub const REPORT_HEADER: [&str; 17] = [
    "t",
    "cost_rescaled",
    "cost_h",
    "bound",
    "decay_bound",
    "ratio",
    "expected_ratio",
    "tol",
    "margin",
    "decay_margin",
    "gap_rescaled",
    "gap_h",
    "boundary_mass",
    "coarsening_radius",
    "scheme_error",
    "frame_diff",
    "pass",
];

/// Curves extracted by [`plotdata_from_report`]: file stem and columns.
const CURVES: &[(&str, &[&str])] = &[
    ("cost", &["cost_rescaled", "cost_h"]),
    ("bound", &["bound", "decay_bound"]),
    ("ratio", &["ratio", "expected_ratio"]),
    ("margin", &["margin", "decay_margin"]),
];

/// Splits a `report.csv` into `<curve>.csv` files of `t` against each curve.
/// Curves whose columns are all empty are skipped. Returns the files written.
pub fn plotdata_from_report(report: &Path, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut rd = csv::Reader::from_path(report)?;
    let header = rd.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("{}: missing column `{name}`", report.display())))
    };
    let t_col = col("t")?;
    let records: Vec<csv::StringRecord> = rd.records().collect::<std::result::Result<_, _>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (stem, cols) in CURVES {
        let idx: Vec<usize> = cols.iter().map(|c| col(c)).collect::<Result<_>>()?;
        if records
            .iter()
            .all(|r| idx.iter().all(|&i| r.get(i).unwrap_or("").is_empty()))
        {
            continue;
        }
        let path = out_dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut head = vec!["t"];
        head.extend_from_slice(cols);
        w.write_record(&head)?;
        for r in &records {
            let mut row = vec![r.get(t_col).unwrap_or("")];
            row.extend(idx.iter().map(|&i| r.get(i).unwrap_or("")));
            w.write_record(&row)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_curves_and_skips_empty_ones() {
        let dir = std::env::temp_dir().join(format!("fpcontract-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let report = dir.join("report.csv");
        let mut text = REPORT_HEADER.join(",");
        text.push('\n');
        text.push_str("0,1,1,1,,,,0,0,,0,0,0,0,0,0,true\n");
        text.push_str("1,0.5,0.5,1,,,,0,0.5,,0,0,0,0,0,0,true\n");
        std::fs::write(&report, text).unwrap();
        let files = plotdata_from_report(&report, &dir.join("plot")).unwrap();
        let stems: Vec<_> = files
            .iter()
            .map(|p| p.file_stem().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(stems, vec!["cost", "bound", "margin"]);
        let cost = std::fs::read_to_string(dir.join("plot/cost.csv")).unwrap();
        assert_eq!(cost, "t,cost_rescaled,cost_h\n0,1,1\n1,0.5,0.5\n");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
