use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use odcal_core::io::{read_od_values, SummaryRow};
use odcal_core::metrics::{correlation_matrix, epsilon, nrmse, rmse, RECORD_FIELDS};
use odcal_core::{ErrorRecord, Network};

/// Writes the 5x5 correlation matrix of the error columns; undefined entries are empty.
pub fn write_correlations<W: Write>(records: &[ErrorRecord], mut w: W) -> Result<()> {
    let c = correlation_matrix(records);
    writeln!(w, "field,{}", RECORD_FIELDS.join(","))?;
    for (name, row) in RECORD_FIELDS.iter().zip(&c) {
        let cells: Vec<String> = row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())).collect();
        writeln!(w, "{name},{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn read_od(net: &Network, path: &Path) -> Result<Vec<f64>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_od_values(net, BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// `(observed, simulated)` columns of a `sensor_counts_<t>.csv` file.
fn read_sensor_counts(net: &Network, path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut observed = vec![0.0; net.num_sensors()];
    let mut simulated = vec![0.0; net.num_sensors()];
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 4 {
            bail!("{}: expected 4 columns", path.display());
        }
        let k = net
            .link_idx(&rec[0])
            .and_then(|l| net.sensor_of_link(l))
            .with_context(|| format!("{}: unknown sensor link {}", path.display(), &rec[0]))?;
        observed[k] = rec[1].parse()?;
        simulated[k] = rec[3].parse()?;
    }
    Ok((observed, simulated))
}

/// Per-frame summary rows from the files of a calibration run. Real and
/// estimated counts are total sensor entries, observed and simulated.
pub fn summarize(net: &Network, run_dir: &Path, truth_dir: Option<&Path>, frames: usize) -> Result<Vec<SummaryRow>> {
    (0..frames)
        .map(|t| {
            let (obs, sim) = read_sensor_counts(net, &run_dir.join(format!("sensor_counts_{t}.csv")))?;
            let (mut od_eps, mut od_rmse, mut od_nrmse) = (None, None, None);
            if let Some(dir) = truth_dir {
                let truth = read_od(net, &dir.join(format!("true_od_{t}.csv")))?;
                let est = read_od(net, &run_dir.join(format!("od_{t}.csv")))?;
                od_eps = Some(epsilon(&truth, &est));
                od_rmse = Some(rmse(&est, &truth)?);
                od_nrmse = nrmse(&est, &truth).ok();
            }
            Ok(SummaryRow {
                time_frame: t,
                real_count: obs.iter().sum(),
                estimated_count: sim.iter().sum(),
                od_eps,
                od_rmse,
                od_nrmse,
                sensor_eps: Some(epsilon(&obs, &sim)),
                sensor_rmse: Some(rmse(&sim, &obs)?),
                sensor_nrmse: nrmse(&sim, &obs).ok(),
            })
        })
        .collect()
}
