//! Gnuplot-ready columns from harness CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::MetricTable;

use super::{ExperimentConfig, TaskOutcome};

/// Whitespace-separated columns; empty cells become `NaN`, sweep CSVs keep only the mean rows.
pub fn to_columns(table: &MetricTable) -> String {
    let kind = table.column("kind");
    let mut out = String::new();
    for (k, v) in &table.meta {
        let _ = writeln!(out, "# {k}={v}");
    }
    let cols: Vec<usize> = (0..table.columns.len()).filter(|i| Some(*i) != kind).collect();
    let _ = writeln!(out, "# {}", cols.iter().map(|i| table.columns[*i].as_str()).collect::<Vec<_>>().join(" "));
    for r in &table.rows {
        if let Some(k) = kind {
            if r[k] != "mean" {
                continue;
            }
        }
        let cells: Vec<&str> = cols.iter().map(|i| if r[*i].is_empty() { "NaN" } else { r[*i].as_str() }).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

fn script(table: &MetricTable, dat: &str) -> String {
    if table.column("kind").is_some() {
        format!(
            "set logscale xy\nset xlabel '{}'\nset ylabel 'mean D_T'\nplot '{dat}' using 1:3:4 with yerrorbars title 'mean D_T'\n",
            table.get_meta("level").unwrap_or("level")
        )
    } else {
        let x = &table.columns[0];
        let series: Vec<String> = (1..table.columns.len())
            .filter(|i| !matches!(table.columns[*i].as_str(), "n1" | "n2" | "m1" | "m2" | "eps" | "seed"))
            .map(|i| format!("'{dat}' using 1:{} with lines title '{}'", i + 1, table.columns[i]))
            .collect();
        format!("set xlabel '{x}'\nplot {}\n", series.join(", "))
    }
}

pub fn plot(cfg: &ExperimentConfig) -> Result<TaskOutcome> {
    let input = cfg.input.as_deref().ok_or_else(|| Error::Config("plot needs `input`".into()))?;
    let table = MetricTable::from_csv(&std::fs::read_to_string(input)?)?;
    if table.columns.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no column header".into(),
        });
    }
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let dir = cfg.output_dir.as_deref().unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")));
    std::fs::create_dir_all(dir)?;
    let dat = format!("{stem}.dat");
    std::fs::write(dir.join(&dat), to_columns(&table))?;
    std::fs::write(dir.join(format!("{stem}.gp")), script(&table, &dat))?;
    Ok(TaskOutcome {
        lines: vec![format!("wrote {}", dir.join(&dat).display())],
        failures: vec![],
    })
}
