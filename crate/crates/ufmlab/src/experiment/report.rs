//! `report`: aggregate the CSVs in an output directory into one summary
//! table on stdout.

use super::ExperimentError;
use std::fmt::Write as _;
use std::path::Path;

pub fn cmd_report(dir: &Path) -> Result<String, ExperimentError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(ExperimentError::Refused {
            reason: format!("no CSV files under {}", dir.display()),
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<34} {:>7}  summary", "file", "rows");
    for name in &names {
        let text = std::fs::read_to_string(dir.join(name))?;
        let mut rows = 0usize;
        let mut header = "";
        let mut first_data: Option<&str> = None;
        let mut last_data: Option<&str> = None;
        let mut outliers = 0usize;
        let mut fails = 0usize;
        for line in text.lines() {
            if line.starts_with('#') {
                continue;
            }
            if header.is_empty() {
                header = line;
                continue;
            }
            rows += 1;
            if first_data.is_none() {
                first_data = Some(line);
            }
            last_data = Some(line);
            if header.ends_with("outlier_flag") && line.ends_with(",1") {
                outliers += 1;
            }
            if header.starts_with("check,") && line.contains(",fail,0,") {
                fails += 1;
            }
        }
        let summary = if header.ends_with("outlier_flag") {
            format!(
                "outliers={outliers} top={}",
                first_data
                    .and_then(|l| l.split(',').rev().nth(1).map(str::to_string))
                    .unwrap_or_default()
            )
        } else if header.starts_with("check,") {
            format!("required_failures={fails}")
        } else if header.starts_with("epoch,") {
            format!("final={}", last_data.unwrap_or_default())
        } else {
            String::new()
        };
        let _ = writeln!(out, "{name:<34} {rows:>7}  {summary}");
    }
    Ok(out)
}
