//! Splits a trace into the series plotted per panel: constrained quantities, barrier
//! values with the switching thresholds, and inputs with the supervisor mode.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::Sidecar;

struct Table {
    index: HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let index = r.headers()?.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec.iter().map(|f| f.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>()
                .with_context(|| format!("non-numeric field at line {}", rows.len() + 2))?;
            rows.push(row);
        }
        Ok(Self { index, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        match self.index.get(name) {
            Some(&i) => Ok(i),
            None => bail!("trace has no `{name}` column"),
        }
    }

    /// Columns named `{prefix}1`, `{prefix}2`, ... in order.
    fn family(&self, prefix: &str) -> Vec<usize> {
        (1..).map_while(|i| self.index.get(&format!("{prefix}{i}")).copied()).collect()
    }
}

fn write(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(trace: &Path, out_dir: &Path) -> Result<()> {
    let side_path = trace.with_extension("json");
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(&side_path).with_context(|| format!("reading {}", side_path.display()))?)
        .with_context(|| format!("parsing {}", side_path.display()))?;
    let tab = Table::read(trace)?;
    let t = tab.col("t")?;
    let xp = tab.family("xp");
    let u = tab.family("u");
    if side.f.iter().any(|r| r.len() != xp.len()) {
        bail!("sidecar constraints have {} columns, trace has {} plant states", side.f.first().map_or(0, Vec::len), xp.len());
    }
    std::fs::create_dir_all(out_dir)?;

    let mut header = vec!["t".to_string()];
    header.extend((1..=side.f.len()).map(|i| format!("s{i}")));
    write(
        &out_dir.join("constraints.csv"),
        &header,
        tab.rows.iter().map(|r| {
            let mut o = vec![r[t]];
            o.extend(side.f.iter().map(|f| f.iter().zip(&xp).map(|(a, &j)| a * r[j]).sum::<f64>()));
            o
        }),
    )?;

    let cols: Vec<usize> = ["B_true", "B_bar", "r_cl", "r_p", "r_e"].iter().map(|c| tab.col(c)).collect::<Result<_>>()?;
    let header: Vec<String> = ["t", "B_true", "B_bar", "r_cl", "r_p", "r_e", "eps_lower", "eps_upper"].map(String::from).to_vec();
    write(
        &out_dir.join("barrier.csv"),
        &header,
        tab.rows.iter().map(|r| {
            let mut o = vec![r[t]];
            o.extend(cols.iter().map(|&c| r[c]));
            o.extend([side.eps_lower, side.eps_upper]);
            o
        }),
    )?;

    let mode = tab.col("mode")?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=u.len()).map(|i| format!("u{i}")));
    header.extend((1..=u.len()).map(|i| format!("u_bar{i}")));
    header.push("mode".into());
    write(
        &out_dir.join("inputs.csv"),
        &header,
        tab.rows.iter().map(|r| {
            let mut o = vec![r[t]];
            o.extend(u.iter().map(|&c| r[c]));
            o.extend(&side.u_bar);
            o.push(r[mode]);
            o
        }),
    )?;
    println!("wrote constraints.csv, barrier.csv, inputs.csv to {}", out_dir.display());
    Ok(())
}
