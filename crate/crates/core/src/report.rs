//! Aggregation of finished runs into summary tables: per-(method,
//! wrapper, protocol) means with population standard deviations, a plain
//! text rendering, and CSV forms for the summary, grid, ablation, and
//! baseline outputs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::experiment::{AblationTable, BaselineOutcome, GridPoint, RunRecord};
use crate::methods::MethodKind;

/// One summary cell: the mean and population standard deviation of a
/// metric over every seed of a (method, wrapper) group.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: MethodKind,
    pub momentum: bool,
    pub protocol: EvalProtocol,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

// Mean and population standard deviation (divide by n, not n - 1).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn method_order(m: MethodKind) -> u8 {
    match m {
        MethodKind::Sgd => 0,
        MethodKind::Oewc => 1,
        MethodKind::Derpp => 2,
    }
}

fn protocol_name(p: EvalProtocol) -> &'static str {
    match p {
        EvalProtocol::ClassIl => "class_il",
        EvalProtocol::TaskIl => "task_il",
    }
}

fn protocol_from_name(s: &str) -> Result<EvalProtocol> {
    match s {
        "class_il" => Ok(EvalProtocol::ClassIl),
        "task_il" => Ok(EvalProtocol::TaskIl),
        other => Err(Error::config(format!("unknown protocol '{other}'"))),
    }
}

/// Group records by (method, wrapper) and emit two rows per group, one
/// per evaluation protocol, ordered method-major with the unwrapped
/// variant first.
pub fn summarize(records: &[RunRecord]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(u8, bool), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((method_order(r.config.method), r.config.momentum.enabled))
            .or_default()
            .push(r);
    }
    let mut rows = Vec::with_capacity(groups.len() * 2);
    for ((_, momentum), group) in groups {
        let method = group[0].config.method;
        let finals_c: Vec<f64> = group.iter().map(|r| r.final_class_il).collect();
        let finals_t: Vec<f64> = group.iter().map(|r| r.final_task_il).collect();
        for (protocol, xs) in
            [(EvalProtocol::ClassIl, finals_c), (EvalProtocol::TaskIl, finals_t)]
        {
            let (mean, std) = mean_std(&xs);
            rows.push(ReportRow { method, momentum, protocol, mean, std, n_seeds: xs.len() });
        }
    }
    rows
}

// Pad each column of a text table to its widest cell.
fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            line.push_str(cell);
            if i + 1 < row.len() {
                line.push_str(&" ".repeat(widths[i] - cell.len() + 2));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// The human-readable summary: one line per (method, wrapper) group with
/// both protocol cells rendered as "mean +/- std" at two decimals.
pub fn render_text(rows: &[ReportRow]) -> String {
    let mut lines: Vec<Vec<String>> = vec![vec![
        "method".into(),
        "wrapper".into(),
        "class_il".into(),
        "task_il".into(),
        "seeds".into(),
    ]];
    let mut groups: BTreeMap<(u8, bool), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((method_order(r.method), r.momentum)).or_default().push(r);
    }
    for ((_, momentum), group) in groups {
        let cell = |p: EvalProtocol| -> String {
            group
                .iter()
                .find(|r| r.protocol == p)
                .map(|r| format!("{:.2} +/- {:.2}", r.mean, r.std))
                .unwrap_or_else(|| "-".into())
        };
        lines.push(vec![
            group[0].method.to_string(),
            if momentum { "mcl" } else { "base" }.into(),
            cell(EvalProtocol::ClassIl),
            cell(EvalProtocol::TaskIl),
            group[0].n_seeds.to_string(),
        ]);
    }
    align(&lines)
}

/// Summary rows as CSV at full float precision, so reloading them loses
/// nothing.
pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,momentum,protocol,mean,std,n_seeds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.momentum,
            protocol_name(r.protocol),
            r.mean,
            r.std,
            r.n_seeds
        ));
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("method,momentum,protocol,mean,std,n_seeds") => {}
        other => {
            return Err(Error::ingest(format!(
                "bad summary header {other:?}; was this file written by the report stage?"
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::ingest(format!("summary line {} has {} fields", i + 2, parts.len())));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::ingest(format!("bad {what} '{s}' on line {}", i + 2)))
        };
        rows.push(ReportRow {
            method: parts[0].parse()?,
            momentum: match parts[1] {
                "true" => true,
                "false" => false,
                other => return Err(Error::ingest(format!("bad momentum flag '{other}'"))),
            },
            protocol: protocol_from_name(parts[2])?,
            mean: parse_f(parts[3], "mean")?,
            std: parse_f(parts[4], "std")?,
            n_seeds: parts[5]
                .parse()
                .map_err(|_| Error::ingest(format!("bad n_seeds '{}'", parts[5])))?,
        });
    }
    Ok(rows)
}

/// Grid candidates as CSV; failed points keep their error text.
pub fn grid_to_csv(points: &[GridPoint]) -> String {
    let mut out = String::from("lr,tau,val_class_il,error\n");
    for p in points {
        let tau = p.tau.map(|t| t.to_string()).unwrap_or_default();
        let score = p.val_class_il.map(|s| s.to_string()).unwrap_or_default();
        let error = p.error.as_deref().unwrap_or("").replace(',', ";");
        out.push_str(&format!("{},{},{},{}\n", p.lr, tau, score, error));
    }
    out
}

/// Ablation rows as CSV, one line per (value, seed) cell.
pub fn ablation_to_csv(table: &AblationTable) -> String {
    let mut out = String::from("knob,value,seed,class_il,task_il\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            table.knob, r.value, r.seed, r.final_class_il, r.final_task_il
        ));
    }
    out
}

/// Baseline rows as CSV with the selected joint learning rate inline.
pub fn baselines_to_csv(out: &BaselineOutcome) -> String {
    let mut text = String::from("seed,zero_shot_class_il,joint_lr,joint_class_il\n");
    for r in &out.rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.seed, r.zero_shot_class_il, out.joint_lr, r.joint_class_il
        ));
    }
    text
}
