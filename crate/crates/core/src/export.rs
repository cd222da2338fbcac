//! CSV writers. Floats use 17 significant digits in scientific notation so
//! that every value round-trips exactly.

use std::io::Write;

use crate::chain::Discretization;
use crate::dp::{GridDistribution, ValueTable};
use crate::dual::TraceRow;
use crate::error::Result;
use crate::qualify::QualificationReport;

/// `{:.16e}` formatting; non-finite values as `inf`, `-inf`, `NaN`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(out)
}

/// One row per grid node, one column per time index.
fn write_grid_table<W: Write>(out: W, disc: &Discretization, columns: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["x".to_string()];
    header.extend((0..columns.len()).map(|k| format!("t{k}")));
    w.write_record(&header)?;
    for j in 0..disc.n_nodes {
        let mut row = vec![fmt_f64(disc.x(j))];
        row.extend(columns.iter().map(|c| fmt_f64(c[j])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_value_table<W: Write>(out: W, disc: &Discretization, table: &ValueTable) -> Result<()> {
    write_grid_table(out, disc, &table.values)
}

pub fn write_distribution<W: Write>(out: W, disc: &Discretization, dist: &GridDistribution) -> Result<()> {
    write_grid_table(out, disc, &dist.mass)
}

pub fn write_trace<W: Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = writer(out);
    let dim = trace.first().map_or(0, |r| r.lambda.len());
    let mut header = vec!["iter".to_string()];
    header.extend((0..dim).map(|i| format!("lambda_{i}")));
    header.extend(["d_h", "grad_inf", "residual", "step"].map(String::from));
    w.write_record(&header)?;
    for r in trace {
        let mut row = vec![r.iter.to_string()];
        row.extend(r.lambda.iter().map(|&v| fmt_f64(v)));
        row.extend([r.value, r.grad_inf, r.residual, r.step].map(fmt_f64));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `e`, `v_e`, `upper`, `theta`, `iterations`; vectors are written
/// as `;`-separated lists inside one field.
pub fn write_qualification<W: Write>(out: W, report: &QualificationReport) -> Result<()> {
    let join = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(";");
    let mut w = writer(out);
    w.write_record(["e", "v_e", "upper", "theta", "iterations"])?;
    for r in &report.per_sign {
        w.write_record([
            join(&r.signs),
            fmt_f64(r.value),
            fmt_f64(r.upper),
            join(&r.theta),
            r.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `path, time, state`.
pub fn write_paths<W: Write>(out: W, times: &[f64], paths: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["path", "time", "state"])?;
    for (i, p) in paths.iter().enumerate() {
        for (t, x) in times.iter().zip(p) {
            w.write_record([i.to_string(), fmt_f64(*t), fmt_f64(*x)])?;
        }
    }
    w.flush()?;
    Ok(())
}
