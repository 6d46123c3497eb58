//! CSV output with a metadata comment line.

use std::io::Write;

use crate::sim::Trajectory;
use crate::Result;

/// Provenance written as the first line of every CSV: `# tool=… config_hash=… seed=…`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn line(&self) -> String {
        format!("# tool={} config_hash={} seed={}", self.tool, self.config_hash, self.seed)
    }
}

/// Shortest round-trip decimal form.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

pub fn write_table<W, I>(mut out: W, meta: Option<&Meta>, header: &[String], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(m) = meta {
        writeln!(out, "{}", m.line())?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes recorded trajectories as `id,time,x0..,exit_class` rows and stops
/// after `row_cap` rows. Returns the number of rows written.
pub fn write_trajectories<W: Write>(
    out: W,
    meta: Option<&Meta>,
    state_dim: usize,
    trajectories: &[Trajectory],
    row_cap: usize,
) -> Result<usize> {
    let mut header = vec!["id".to_string(), "time".to_string()];
    header.extend((0..state_dim).map(|i| format!("x{i}")));
    header.push("exit_class".into());
    let mut rows = Vec::new();
    'outer: for (id, tr) in trajectories.iter().enumerate() {
        let class = if tr.exited_via_boundary { "boundary" } else { "horizon" };
        for (t, x) in tr.times.iter().zip(&tr.states) {
            if rows.len() >= row_cap {
                log::warn!("trajectory dump truncated at {row_cap} rows");
                break 'outer;
            }
            let mut r = vec![id.to_string(), fmt(*t)];
            r.extend(x.iter().map(|v| fmt(*v)));
            r.push(class.into());
            rows.push(r);
        }
    }
    let n = rows.len();
    write_table(out, meta, &header, rows)?;
    Ok(n)
}
