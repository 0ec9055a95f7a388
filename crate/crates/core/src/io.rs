//! Readers and writers for the on-disk formats.
//!
//! Tables are comma separated with a header row. Readers accept input with or
//! without the header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assignment::NodVector;
use crate::error::{Error, Result};
use crate::metrics::ErrorRecord;
use crate::network::{Network, NetworkFile};
use crate::sampler::{RouteFlow, VehiclePlan};

/// Sensor-link field that closes a frame in a count stream.
pub const END_MARKER: &str = "END";

pub fn read_network(path: &Path) -> Result<Network> {
    let file: NetworkFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Network::new(file)
}

pub fn write_network(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &net.to_file())?;
    w.flush()?;
    Ok(())
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

/// Rows of a headerless-or-headed table whose last column is numeric. A first
/// row whose last field does not parse is taken as the header.
fn numeric_rows<R: Read>(r: R, width: usize) -> Result<Vec<(Vec<String>, f64)>> {
    let mut out = Vec::new();
    for (i, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Format(format!("line {}: expected {width} fields, found {}", i + 1, rec.len())));
        }
        let last = &rec[width - 1];
        match last.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push((rec.iter().take(width - 1).map(str::to_string).collect(), v)),
            _ if i == 0 => continue,
            _ => return Err(Error::Format(format!("line {}: bad number {last:?}", i + 1))),
        }
    }
    Ok(out)
}

fn od_index(net: &Network, o: &str, d: &str) -> Result<usize> {
    let oi = net.node_idx(o).ok_or_else(|| Error::UnknownNode(o.to_string()))?;
    let di = net.node_idx(d).ok_or_else(|| Error::UnknownNode(d.to_string()))?;
    net.od_pairs()
        .iter()
        .position(|&p| p == (oi, di))
        .ok_or_else(|| Error::InvalidArgument(format!("{o} -> {d} is not an OD pair")))
}

/// Per-OD values from `origin,destination,value` rows; unlisted pairs are zero.
pub fn read_od_values<R: Read>(net: &Network, r: R) -> Result<Vec<f64>> {
    let mut v = vec![0.0; net.num_od_pairs()];
    for (keys, x) in numeric_rows(r, 3)? {
        v[od_index(net, &keys[0], &keys[1])?] += x;
    }
    Ok(v)
}

pub fn read_nod<R: Read>(net: &Network, r: R) -> Result<NodVector> {
    NodVector::new(read_od_values(net, r)?)
}

pub fn write_nod<W: Write>(net: &Network, nod: &NodVector, w: W) -> Result<()> {
    write_od_table(net, nod.as_slice(), ["origin", "destination", "weight"], w)
}

/// OD estimate table `o,d,trips`.
pub fn write_od<W: Write>(net: &Network, x: &[f64], w: W) -> Result<()> {
    write_od_table(net, x, ["o", "d", "trips"], w)
}

fn write_od_table<W: Write>(net: &Network, x: &[f64], header: [&str; 3], w: W) -> Result<()> {
    let mut w = writer(w);
    w.write_record(header)?;
    for (m, v) in x.iter().enumerate() {
        let (o, d) = net.od_label(m);
        w.write_record([o, d, &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sensor counts from `sensor_link_id,count` rows; unlisted sensors count zero.
pub fn read_counts<R: Read>(net: &Network, r: R) -> Result<Vec<f64>> {
    let mut c = vec![0.0; net.num_sensors()];
    for (keys, x) in numeric_rows(r, 2)? {
        c[sensor_index(net, &keys[0])?] = x;
    }
    Ok(c)
}

fn sensor_index(net: &Network, id: &str) -> Result<usize> {
    let l = net.link_idx(id).ok_or_else(|| Error::UnknownLink(id.to_string()))?;
    net.sensor_of_link(l)
        .ok_or_else(|| Error::InvalidArgument(format!("link {id} carries no sensor")))
}

pub fn write_counts<W: Write>(net: &Network, counts: &[f64], w: W) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["sensor_link_id", "count"])?;
    for (k, c) in counts.iter().enumerate() {
        w.write_record([&net.link(net.sensor_links()[k]).id, &c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Observed (uncorrected scale), analytical and simulated counts per sensor.
pub fn write_count_comparison<W: Write>(
    net: &Network,
    observed: &[f64],
    analytic: &[f64],
    simulated: &[f64],
    w: W,
) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["sensor_link_id", "observed", "analytic", "simulated"])?;
    for k in 0..net.num_sensors() {
        let id = &net.link(net.sensor_links()[k]).id;
        w.write_record([id, &observed[k].to_string(), &analytic[k].to_string(), &simulated[k].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Line-delimited `frame,sensor_link_id,count` records. A frame is released
/// once its `frame,END,` record arrives.
pub struct CountStream<'a, R> {
    net: &'a Network,
    lines: std::io::Lines<R>,
    line_no: usize,
    next_frame: usize,
}

impl<'a, R: BufRead> CountStream<'a, R> {
    pub fn new(net: &'a Network, r: R) -> Self {
        CountStream { net, lines: r.lines(), line_no: 0, next_frame: 0 }
    }

    /// The next complete frame, or `None` at a clean end of input.
    pub fn next_frame(&mut self) -> Result<Option<(usize, Vec<f64>)>> {
        let frame = self.next_frame;
        let mut counts = vec![0.0; self.net.num_sensors()];
        let mut seen_any = false;
        while let Some(line) = self.lines.next() {
            let line = line?;
            self.line_no += 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(self.bad(line));
            }
            let Ok(t) = fields[0].parse::<usize>() else {
                if self.line_no == 1 {
                    continue; // header
                }
                return Err(self.bad(line));
            };
            if t != frame {
                return Err(Error::OutOfOrderFrame { expected: frame, got: t });
            }
            seen_any = true;
            if fields[1] == END_MARKER {
                self.next_frame += 1;
                return Ok(Some((frame, counts)));
            }
            if fields.len() != 3 {
                return Err(self.bad(line));
            }
            let c: f64 = fields[2].parse().map_err(|_| self.bad(line))?;
            counts[sensor_index(self.net, fields[1])?] = c;
        }
        if seen_any {
            return Err(Error::Format(format!("frame {frame} ended without an {END_MARKER} marker")));
        }
        Ok(None)
    }

    fn bad(&self, line: &str) -> Error {
        Error::Format(format!("count stream line {}: {line:?}", self.line_no))
    }
}

/// Writes frames in the count-stream format.
pub fn write_count_stream<W: Write>(net: &Network, frames: &[Vec<f64>], mut w: W) -> Result<()> {
    for (t, counts) in frames.iter().enumerate() {
        for (k, c) in counts.iter().enumerate() {
            writeln!(w, "{t},{},{c}", net.link(net.sensor_links()[k]).id)?;
        }
        writeln!(w, "{t},{END_MARKER},")?;
    }
    Ok(())
}

pub fn write_route_flows<W: Write>(net: &Network, flows: &[RouteFlow], w: W) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["route_id", "origin", "destination", "expected_trips", "links"])?;
    for f in flows {
        let (o, d) = net.od_label(f.od);
        w.write_record([&f.label(), o, d, &f.expected_trips.to_string(), &join_links(net, &f.links)])?;
    }
    w.flush()?;
    Ok(())
}

fn join_links(net: &Network, links: &[usize]) -> String {
    links.iter().map(|&l| net.link(l).id.as_str()).collect::<Vec<_>>().join(";")
}

pub fn write_error_records<W: Write>(records: &[ErrorRecord], w: W) -> Result<()> {
    let mut w = writer(w);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_error_records<R: Read>(r: R) -> Result<Vec<ErrorRecord>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_fp_trace<W: Write>(errors: &[f64], w: W) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["iteration", "fixed_point_error"])?;
    for (i, e) in errors.iter().enumerate() {
        w.write_record([i.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the per-frame summary report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub time_frame: usize,
    pub real_count: f64,
    pub estimated_count: f64,
    pub od_eps: Option<f64>,
    pub od_rmse: Option<f64>,
    pub od_nrmse: Option<f64>,
    pub sensor_eps: Option<f64>,
    pub sensor_rmse: Option<f64>,
    pub sensor_nrmse: Option<f64>,
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut w = writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Ground-truth plans `departure_second,origin,destination,links`.
pub fn write_plans<W: Write>(net: &Network, plans: &[VehiclePlan], w: W) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["departure_second", "origin", "destination", "links"])?;
    for p in plans {
        let (o, d) = net.od_label(p.od);
        w.write_record([&p.departure.to_string(), o, d, &join_links(net, &p.links)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plans<R: Read>(net: &Network, r: R) -> Result<Vec<VehiclePlan>> {
    let mut plans = Vec::new();
    let mut routes: Vec<Vec<Arc<[usize]>>> = vec![Vec::new(); net.num_od_pairs()];
    for (i, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Format(format!("plans line {}: expected 4 fields", i + 1)));
        }
        let Ok(departure) = rec[0].parse::<u32>() else {
            if i == 0 {
                continue;
            }
            return Err(Error::Format(format!("plans line {}: bad departure {:?}", i + 1, &rec[0])));
        };
        let od = od_index(net, &rec[1], &rec[2])?;
        let links: Vec<usize> = rec[3]
            .split(';')
            .map(|id| net.link_idx(id).ok_or_else(|| Error::UnknownLink(id.to_string())))
            .collect::<Result<_>>()?;
        let (o, d) = net.od_pairs()[od];
        let connected = links.windows(2).all(|w| net.link_ends(w[0]).1 == net.link_ends(w[1]).0);
        if links.is_empty() || !connected || net.link_ends(links[0]).0 != o || net.link_ends(*links.last().unwrap()).1 != d {
            return Err(Error::Format(format!("plans line {}: route does not join {} to {}", i + 1, &rec[1], &rec[2])));
        }
        let set = &mut routes[od];
        let route = match set.iter().position(|r| **r == *links) {
            Some(k) => k,
            None => {
                set.push(Arc::from(links));
                set.len() - 1
            }
        };
        plans.push(VehiclePlan { od, route, links: Arc::clone(&set[route]), departure });
    }
    plans.sort_by_key(|p| p.departure);
    Ok(plans)
}

/// Sampled departures `route_id,departure_second`.
pub fn write_plan_dump<W: Write>(plans: &[VehiclePlan], w: W) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["route_id", "departure_second"])?;
    for p in plans {
        w.write_record([format!("{}:{}", p.od, p.route), p.departure.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
