//! Parameter sweeps over request count, payload size or ring size, run in
//! parallel. A safety violation in any run aborts the sweep.

use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;
use rayon::prelude::*;
use thiserror::Error;

use super::scenario::{Scenario, ScenarioError, SweepAxis};
use super::{simulate, write_atomic, Outcome, RunReport, Violation};
use crate::membership::majority;
use crate::metrics::{baseline_leader_cost, Baseline, CSV_HEADER};
use crate::types::NodeId;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run {run_id} violated safety: {violation}")]
    Safety { run_id: String, violation: Violation },
    #[error("cannot write sweep output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot draw plot: {0}")]
    Plot(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepPoint {
    pub value: u64,
    pub run_id: String,
    pub outcome: Outcome,
    pub leader: Option<NodeId>,
    pub leader_msgs: u64,
    pub leader_bytes: u64,
    pub busiest: Option<(NodeId, u64, u64)>,
    pub latency_hops: Option<usize>,
    pub response_hops: Option<usize>,
    pub classical: (u64, u64),
    pub ring: (u64, u64),
}

pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    /// Per-node metrics of every run under one header.
    pub metrics_csv: String,
}

pub const SWEEP_HEADER: &str = "axis,value,run_id,outcome,leader,leader_msgs,leader_bytes,busiest,busiest_msgs,busiest_bytes,latency_hops,response_hops,classical_msgs,classical_bytes,ring_msgs,ring_bytes";

fn axis_name(a: SweepAxis) -> &'static str {
    match a {
        SweepAxis::Requests => "requests",
        SweepAxis::Payload => "payload",
        SweepAxis::RingSize => "ring-size",
    }
}

/// One scenario per axis value. Requests sets the total request count of a
/// single client group; ring size `m` uses `n = 2m - 1` acceptors.
pub fn expand(base: &Scenario) -> Result<Vec<(u64, Scenario)>, ScenarioError> {
    let spec = base
        .sweep
        .as_ref()
        .ok_or_else(|| ScenarioError::Invalid("sweep: missing [sweep] table".into()))?;
    if spec.values.is_empty() {
        return Err(ScenarioError::Invalid("sweep.values must not be empty".into()));
    }
    spec.values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let mut s = base.clone();
            s.sweep = None;
            s.seed = base.seed.wrapping_add(k as u64);
            match spec.axis {
                SweepAxis::Requests => {
                    let mut g = s.clients.first().cloned().unwrap_or_default();
                    g.count = 1;
                    g.requests = v as usize;
                    s.clients = vec![g];
                }
                SweepAxis::Payload => s.clients.iter_mut().for_each(|g| g.payload = v as usize),
                SweepAxis::RingSize => s.n = 2 * v as usize - 1,
            }
            s.validate()?;
            Ok((v, s))
        })
        .collect()
}

fn point(value: u64, s: &Scenario, r: &RunReport) -> SweepPoint {
    let requests = s.total_requests() as u64;
    let payload = s.clients.first().map_or(0, |g| g.payload) as u64;
    let m = majority(s.n) as u64;
    let leader = r.leader_load();
    SweepPoint {
        value,
        run_id: r.run_id.clone(),
        outcome: r.outcome(),
        leader: r.initial_leader,
        leader_msgs: leader.map_or(0, |l| l.total.msgs()),
        leader_bytes: leader.map_or(0, |l| l.total.bytes()),
        busiest: r.summary.busiest,
        latency_hops: r.summary.latency_hops,
        response_hops: r.summary.response_hops,
        classical: baseline_leader_cost(Baseline::Classical, requests, m, payload),
        ring: baseline_leader_cost(Baseline::Ring, requests, m, payload),
    }
}

pub fn run_sweep(base: &Scenario) -> Result<SweepResult, SweepError> {
    let axis = base
        .sweep
        .as_ref()
        .map(|s| s.axis)
        .ok_or_else(|| ScenarioError::Invalid("sweep: missing [sweep] table".into()))?;
    let runs = expand(base)?;
    let done: Vec<(SweepPoint, String)> = runs
        .par_iter()
        .map(|(v, s)| {
            let mut r = simulate(s);
            r.run_id = format!("{}={v}", axis_name(axis));
            if let Some(violation) = r.verdict.violations.first() {
                return Err(SweepError::Safety {
                    run_id: r.run_id.clone(),
                    violation: violation.clone(),
                });
            }
            Ok((point(*v, s, &r), r.csv_rows()))
        })
        .collect::<Result<_, _>>()?;
    let mut metrics_csv = format!("{CSV_HEADER}\n");
    let mut points = Vec::new();
    for (p, rows) in done {
        metrics_csv.push_str(&rows);
        points.push(p);
    }
    Ok(SweepResult {
        axis,
        points,
        metrics_csv,
    })
}

impl SweepResult {
    pub fn csv(&self) -> String {
        let o = |h: Option<usize>| h.map_or(String::new(), |x| x.to_string());
        let mut s = format!("{SWEEP_HEADER}\n");
        for p in &self.points {
            let (bn, bm, bb) = p
                .busiest
                .map_or((String::new(), 0, 0), |(n, m, b)| (n.to_string(), m, b));
            writeln!(
                s,
                "{},{},{},{:?},{},{},{},{bn},{bm},{bb},{},{},{},{},{},{}",
                axis_name(self.axis),
                p.value,
                p.run_id,
                p.outcome,
                p.leader.map_or(String::new(), |l| l.to_string()),
                p.leader_msgs,
                p.leader_bytes,
                o(p.latency_hops),
                o(p.response_hops),
                p.classical.0,
                p.classical.1,
                p.ring.0,
                p.ring.1
            )
            .unwrap();
        }
        s
    }

    /// Writes `sweep.csv` and `metrics.csv`. With `plots`, also writes
    /// busiest-node and leader messages and bytes against both baselines.
    pub fn write(&self, dir: &Path, plots: bool) -> Result<(), SweepError> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("sweep.csv"), self.csv().as_bytes())?;
        write_atomic(&dir.join("metrics.csv"), self.metrics_csv.as_bytes())?;
        if plots {
            let busiest = |p: &SweepPoint| p.busiest.map_or((0, 0), |(_, m, b)| (m, b));
            self.plot(dir, "busiest_msgs.svg", "busiest-node messages", |p| {
                (busiest(p).0, p.classical.0, p.ring.0)
            })?;
            self.plot(dir, "busiest_bytes.svg", "busiest-node bytes", |p| {
                (busiest(p).1, p.classical.1, p.ring.1)
            })?;
            self.plot(dir, "leader_msgs.svg", "leader messages", |p| {
                (p.leader_msgs, p.classical.0, p.ring.0)
            })?;
            self.plot(dir, "leader_bytes.svg", "leader bytes", |p| {
                (p.leader_bytes, p.classical.1, p.ring.1)
            })?;
        }
        Ok(())
    }

    fn plot(
        &self,
        dir: &Path,
        file: &str,
        label: &str,
        f: impl Fn(&SweepPoint) -> (u64, u64, u64),
    ) -> Result<(), SweepError> {
        let err = |e: &dyn std::fmt::Display| SweepError::Plot(e.to_string());
        let xs: Vec<u64> = self.points.iter().map(|p| p.value).collect();
        let series: Vec<(u64, u64, u64)> = self.points.iter().map(&f).collect();
        let x_max = xs.iter().copied().max().unwrap_or(1).max(1);
        let x_min = xs.iter().copied().min().unwrap_or(0);
        let y_max = series
            .iter()
            .map(|(a, b, c)| *a.max(b).max(c))
            .max()
            .unwrap_or(1)
            .max(1);
        let tmp = dir.join(format!(".{file}.tmp"));
        let root = SVGBackend::new(&tmp, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{label} vs {}", axis_name(self.axis)), ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(72)
            .build_cartesian_2d(x_min..x_max, 0..y_max + y_max / 10)
            .map_err(|e| err(&e))?;
        chart
            .configure_mesh()
            .x_desc(axis_name(self.axis))
            .y_desc(label)
            .draw()
            .map_err(|e| err(&e))?;
        type Pick = fn(&(u64, u64, u64)) -> u64;
        let lines: [(&str, RGBColor, Pick); 3] = [
            ("measured", BLUE, |t| t.0),
            ("classical baseline", RED, |t| t.1),
            ("ring baseline", GREEN, |t| t.2),
        ];
        for (name, color, pick) in lines {
            chart
                .draw_series(LineSeries::new(
                    xs.iter().zip(&series).map(|(x, t)| (*x, pick(t))),
                    color,
                ))
                .map_err(|e| err(&e))?
                .label(name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .draw()
            .map_err(|e| err(&e))?;
        root.present().map_err(|e| err(&e))?;
        drop(chart);
        drop(root);
        std::fs::rename(&tmp, dir.join(file))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::{ClientGroup, SweepSpec};

    fn base(axis: SweepAxis, values: Vec<u64>) -> Scenario {
        Scenario {
            clients: vec![ClientGroup {
                requests: 3,
                payload: 256,
                ..ClientGroup::default()
            }],
            sweep: Some(SweepSpec { axis, values }),
            ..Scenario::default()
        }
    }

    #[test]
    fn ring_size_axis_sets_acceptor_count() {
        let runs = expand(&base(SweepAxis::RingSize, vec![3, 5, 7])).unwrap();
        let ns: Vec<usize> = runs.iter().map(|(_, s)| s.n).collect();
        assert_eq!(ns, vec![5, 9, 13]);
    }

    #[test]
    fn empty_axis_is_rejected() {
        let mut s = base(SweepAxis::Payload, vec![]);
        assert!(expand(&s).is_err());
        s.sweep = None;
        assert!(expand(&s).is_err());
    }

    #[test]
    fn payload_sweep_writes_outputs() {
        let r = run_sweep(&base(SweepAxis::Payload, vec![128, 1024])).unwrap();
        assert_eq!(r.points.len(), 2);
        assert!(r.points.iter().all(|p| p.outcome == Outcome::Ok));
        assert!(r.points[1].leader_bytes > r.points[0].leader_bytes);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path(), true).unwrap();
        for f in [
            "sweep.csv",
            "metrics.csv",
            "busiest_msgs.svg",
            "busiest_bytes.svg",
            "leader_msgs.svg",
            "leader_bytes.svg",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }
}
