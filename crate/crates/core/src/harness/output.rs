use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{compute_deviations, AggregateRow, ExperimentOutput, TraceRow};
use crate::detection::write_alarm_csv;
use crate::error::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "steps.csv";
pub const BASELINE_TRACE_FILE: &str = "baseline_steps.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const ALARMS_FILE: &str = "alarms.csv";
pub const CHECKPOINTS_FILE: &str = "checkpoints.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn trace_header(state_dim: usize) -> String {
    let mut cols = vec!["t".to_string(), "node".to_string()];
    cols.extend((0..state_dim).map(|i| format!("x_hat_{i}")));
    cols.extend(["theta_norm", "stat", "alarm", "lambda"].map(String::from));
    cols.join(",")
}

/// `t,node,x_hat_0..,theta_norm,stat,alarm,lambda`; header only for an empty trace.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow], state_dim: usize) -> Result<()> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{}", trace_header(state_dim))?;
        for r in rows {
            write!(w, "{},{}", r.t, r.node)?;
            for x in &r.x_hat {
                write!(w, ",{x}")?;
            }
            writeln!(w, ",{},{},{},{}", r.theta_norm, r.stat, r.alarm as u8, r.lambda)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    let state_dim = cols.len().saturating_sub(6);
    if cols.len() < 6 || header.trim() != trace_header(state_dim) {
        return Err(parse_err(1, format!("unexpected header `{}`", header.trim())));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(lineno, format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let num = |j: usize| -> Result<f64> {
            fields[j]
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("column {}: {e}", cols[j])))
        };
        let int = |j: usize| -> Result<u64> {
            fields[j]
                .parse::<u64>()
                .map_err(|e| parse_err(lineno, format!("column {}: {e}", cols[j])))
        };
        rows.push(TraceRow {
            t: int(0)?,
            node: int(1)? as usize,
            x_hat: (0..state_dim).map(|d| num(2 + d)).collect::<Result<_>>()?,
            theta_norm: num(2 + state_dim)?,
            stat: num(3 + state_dim)?,
            alarm: int(4 + state_dim)? != 0,
            lambda: num(5 + state_dim)?,
        });
    }
    Ok(rows)
}

fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "t_end,dev_target_fdi,dev_target_no_attack,dev_origin_fdi,dev_origin_no_attack")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.t_end, r.dev_target_fdi, r.dev_target_no_attack, r.dev_origin_fdi, r.dev_origin_no_attack
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes the summary, both step traces, the aggregated deviations, the
/// alarm trace and any parameter checkpoints into `dir`.
pub fn emit_outputs(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(SUMMARY_FILE), &output.report)?;
    write_trace_csv(&dir.join(TRACE_FILE), &output.trace, output.state_dim)?;
    write_trace_csv(&dir.join(BASELINE_TRACE_FILE), &output.baseline_trace, output.state_dim)?;
    write_aggregate_csv(&dir.join(AGGREGATE_FILE), &output.aggregate)?;
    write_alarm_csv(&dir.join(ALARMS_FILE), &output.alarms)?;
    if !output.checkpoints.is_empty() {
        write_json(&dir.join(CHECKPOINTS_FILE), &output.checkpoints)?;
    }
    Ok(())
}

/// Metrics recomputed from a step trace on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub rows: usize,
    pub slots: usize,
    pub nodes: usize,
    pub deviation_from_target: f64,
    pub deviation_from_origin: f64,
    pub detection_probability: f64,
}

pub fn replay(path: &Path, x_star: &[f64]) -> Result<ReplayReport> {
    let rows = read_trace_csv(path)?;
    if rows.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let x_star = DVector::from_vec(x_star.to_vec());
    if rows[0].x_hat.len() != x_star.len() {
        return Err(Error::dim("replay x_star", rows[0].x_hat.len(), x_star.len()));
    }
    let mut slots: Vec<(u64, Vec<DVector<f64>>, bool)> = Vec::new();
    for r in &rows {
        if slots.last().is_none_or(|s| s.0 != r.t) {
            slots.push((r.t, Vec::new(), false));
        }
        let slot = slots.last_mut().expect("pushed above");
        slot.1.push(DVector::from_vec(r.x_hat.clone()));
        slot.2 |= r.alarm;
    }
    let nodes = slots[0].1.len();
    let alarms = slots.iter().filter(|s| s.2).count();
    let trajectory: Vec<Vec<DVector<f64>>> = slots.iter().map(|s| s.1.clone()).collect();
    let (dt, d0) = compute_deviations(&trajectory, &x_star);
    Ok(ReplayReport {
        rows: rows.len(),
        slots: slots.len(),
        nodes,
        deviation_from_target: dt,
        deviation_from_origin: d0,
        detection_probability: alarms as f64 / slots.len() as f64,
    })
}

/// One summary file per sweep cell plus an index, as produced by [`super::run_sweep`].
#[derive(Debug, Serialize)]
pub(crate) struct SweepIndex<'a> {
    pub cells: &'a [super::SweepCell],
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: u64, node: usize, x: f64, alarm: bool) -> TraceRow {
        TraceRow {
            t,
            node,
            x_hat: vec![x],
            theta_norm: (x - 5.0).abs(),
            stat: 1.5,
            alarm,
            lambda: 7.0,
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_trace_csv(&p, &[], 2).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "t,node,x_hat_0,x_hat_1,theta_norm,stat,alarm,lambda\n");
        assert!(read_trace_csv(&p).unwrap().is_empty());
        assert!(matches!(replay(&p, &[0.0, 0.0]), Err(Error::EmptyTrace)));
    }

    #[test]
    fn trace_round_trip_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![row(1, 0, 3.0, false), row(1, 1, 5.0, true), row(2, 0, 4.0, false), row(2, 1, 5.5, false)];
        write_trace_csv(&p, &rows, 1).unwrap();
        assert_eq!(read_trace_csv(&p).unwrap(), rows);
        let r = replay(&p, &[5.0]).unwrap();
        assert_eq!((r.rows, r.slots, r.nodes), (4, 2, 2));
        assert!((r.deviation_from_target - (4.0 + 0.0 + 1.0 + 0.25) / 2.0).abs() < 1e-12);
        assert!((r.deviation_from_origin - (9.0 + 25.0 + 16.0 + 30.25) / 2.0).abs() < 1e-12);
        assert_eq!(r.detection_probability, 0.5);
    }

    #[test]
    fn malformed_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "t,node,x_hat_0,theta_norm,stat,alarm,lambda\n1,0,abc,0,0,0,0\n").unwrap();
        let msg = read_trace_csv(&p).unwrap_err().to_string();
        assert!(msg.contains(":2:") && msg.contains("x_hat_0"), "{msg}");
    }
}
