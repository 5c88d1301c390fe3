//! CSV formats: point-set input files and result/summary output files.
//!
//! Point-set CSV: header `kind,dim,index,c0,c1,...` with `kind` one of
//! `p`, `q`, `ptilde`, `qtilde`; UTF-8, `.` decimal separator. Results CSV:
//! one row per (trial, method) in the exact TrialRecord field order.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;

use crate::objectives::PointPairs;
use crate::{Result, SrpError};

use super::{SummaryRow, TrialRecord};

pub const RESULTS_HEADER: &str =
    "experiment,trial,d,n_outliers,method,achieved_energy,lower_bound,ratio,rot_err,trans_err,wall_time_s,converged";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write the record stream. The `wall_time_s` column is empty-marked so that
/// reruns with the same seed produce byte-identical files; timings are
/// summarized in the summary CSV instead.
pub fn write_results_csv<W: Write>(mut w: W, records: &[TrialRecord]) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.trial,
            r.d,
            r.n_outliers,
            r.method,
            fmt_opt(r.achieved_energy),
            fmt_opt(r.lower_bound),
            fmt_opt(r.ratio),
            fmt_opt(r.rot_err),
            fmt_opt(r.trans_err),
            "", // wall_time_s: see above
            r.converged.map(|b| b.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str = "d,n_outliers,method,trials,mean_achieved_energy,mean_lower_bound,mean_ratio,mean_rot_err,mean_trans_err,mean_wall_time_s,converged_count";

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.d,
            r.n_outliers,
            r.method,
            r.trials,
            fmt_opt(r.mean_achieved_energy),
            fmt_opt(r.mean_lower_bound),
            fmt_opt(r.mean_ratio),
            fmt_opt(r.mean_rot_err),
            fmt_opt(r.mean_trans_err),
            fmt_opt(r.mean_wall_time_s),
            r.converged_count,
        )?;
    }
    Ok(())
}

/// A loaded point-set file: the ordered pairs and, when present, the
/// unpaired pools.
#[derive(Debug, Clone)]
pub struct PointSetFile {
    pub pts: PointPairs,
    pub pools: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn columns_to_matrix(mut cols: Vec<(usize, Vec<f64>)>, what: &str) -> Result<DMatrix<f64>> {
    if cols.is_empty() {
        return Err(SrpError::Parse(format!("no '{what}' rows in point file")));
    }
    cols.sort_by_key(|(idx, _)| *idx);
    let d = cols[0].1.len();
    let mut m = DMatrix::zeros(d, cols.len());
    for (j, (_, coords)) in cols.iter().enumerate() {
        if coords.len() != d {
            return Err(SrpError::Parse(format!(
                "'{what}' rows have inconsistent coordinate counts"
            )));
        }
        for (i, &c) in coords.iter().enumerate() {
            m[(i, j)] = c;
        }
    }
    Ok(m)
}

/// Parse a point-set CSV from a reader.
pub fn read_point_csv<R: Read>(reader: R) -> Result<PointSetFile> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| SrpError::Parse("empty point file".into()))?
        .map_err(SrpError::Io)?;
    let head: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if head.len() < 4 || head[0] != "kind" || head[1] != "dim" || head[2] != "index" {
        return Err(SrpError::Parse(
            "point file header must start with kind,dim,index,c0,...".into(),
        ));
    }

    let mut p_cols = Vec::new();
    let mut q_cols = Vec::new();
    let mut ptilde_cols = Vec::new();
    let mut qtilde_cols = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(SrpError::Io)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(SrpError::Parse(format!(
                "line {}: expected at least 4 fields",
                lineno + 2
            )));
        }
        let dim: usize = fields[1]
            .parse()
            .map_err(|_| SrpError::Parse(format!("line {}: bad dim", lineno + 2)))?;
        let index: usize = fields[2]
            .parse()
            .map_err(|_| SrpError::Parse(format!("line {}: bad index", lineno + 2)))?;
        if fields.len() != 3 + dim {
            return Err(SrpError::Parse(format!(
                "line {}: expected {} coordinates, got {}",
                lineno + 2,
                dim,
                fields.len() - 3
            )));
        }
        let coords: Vec<f64> = fields[3..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| SrpError::Parse(format!("line {}: bad number '{s}'", lineno + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(SrpError::NonFinite(format!("line {}", lineno + 2)));
        }
        match fields[0] {
            "p" => p_cols.push((index, coords)),
            "q" => q_cols.push((index, coords)),
            "ptilde" => ptilde_cols.push((index, coords)),
            "qtilde" => qtilde_cols.push((index, coords)),
            other => {
                return Err(SrpError::Parse(format!(
                    "line {}: unknown kind '{other}'",
                    lineno + 2
                )))
            }
        }
    }

    let p = columns_to_matrix(p_cols, "p")?;
    let q = columns_to_matrix(q_cols, "q")?;
    let pts = PointPairs::new(p, q)?;
    let pools = match (ptilde_cols.is_empty(), qtilde_cols.is_empty()) {
        (true, true) => None,
        (false, false) => Some((
            columns_to_matrix(ptilde_cols, "ptilde")?,
            columns_to_matrix(qtilde_cols, "qtilde")?,
        )),
        _ => {
            return Err(SrpError::Parse(
                "point file has only one of ptilde/qtilde".into(),
            ))
        }
    };
    Ok(PointSetFile { pts, pools })
}

/// Write a point-set CSV (pairs plus optional pools).
pub fn write_point_csv<W: Write>(
    mut w: W,
    pts: &PointPairs,
    pools: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<()> {
    let d = pts.dim();
    write!(w, "kind,dim,index")?;
    for k in 0..d {
        write!(w, ",c{k}")?;
    }
    writeln!(w)?;
    let mut dump = |kind: &str, m: &DMatrix<f64>| -> Result<()> {
        for j in 0..m.ncols() {
            write!(w, "{kind},{d},{j}")?;
            for i in 0..d {
                write!(w, ",{}", m[(i, j)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    };
    dump("p", pts.p())?;
    dump("q", pts.q())?;
    if let Some((pt, qt)) = pools {
        dump("ptilde", pt)?;
        dump("qtilde", qt)?;
    }
    Ok(())
}
