//! Scenario execution: load a scenario, simulate it, check the trace, and
//! write `trace.log` plus `metrics.csv`.

pub mod checks;
pub mod scenario;
pub mod sweep;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

pub use checks::{check_progress, check_safety, Check, Progress, Verdict, Violation};
pub use scenario::{ClientGroup, Learners, Scenario, ScenarioError, SweepAxis, SweepSpec};
pub use sweep::{run_sweep, SweepError, SweepPoint, SweepResult};

use crate::error::ParseError;
use crate::metrics::{self, NodeLoad, RunSummary};
use crate::simnet::hops::HopIndex;
use crate::simnet::trace::{self, Event, TraceRecord};
use crate::simnet::{RunStats, World};
use crate::types::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    SafetyViolation,
    ProgressFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::SafetyViolation => 2,
            Outcome::ProgressFailure => 3,
        }
    }
}

pub struct RunReport {
    pub run_id: String,
    pub stats: RunStats,
    pub trace: Vec<TraceRecord>,
    pub verdict: Verdict,
    pub progress: Progress,
    pub loads: BTreeMap<NodeId, NodeLoad>,
    pub summary: RunSummary,
    /// Leader of the first installed view.
    pub initial_leader: Option<NodeId>,
}

impl RunReport {
    pub fn outcome(&self) -> Outcome {
        if !self.verdict.ok() {
            Outcome::SafetyViolation
        } else if !self.progress.ok() {
            Outcome::ProgressFailure
        } else {
            Outcome::Ok
        }
    }

    pub fn trace_text(&self) -> String {
        trace::render(&self.trace)
    }

    /// CSV rows without a header.
    pub fn csv_rows(&self) -> String {
        metrics::csv_rows(&self.run_id, &self.loads, &self.summary)
    }

    pub fn csv(&self) -> String {
        format!("{}\n{}", metrics::CSV_HEADER, self.csv_rows())
    }

    pub fn leader_load(&self) -> Option<&NodeLoad> {
        self.initial_leader.and_then(|l| self.loads.get(&l))
    }

    /// Distinct instances executed by at least one learner.
    pub fn learned(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.trace {
            if let Event::Exec { instance, .. } = r.event {
                seen.insert(instance);
            }
        }
        seen.len()
    }

    /// Human-readable report, one fact per line.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let st = &self.stats;
        writeln!(s, "run {}: {:?}", self.run_id, self.outcome()).unwrap();
        let verdicts: Vec<String> = Check::ALL
            .iter()
            .map(|&c| format!("{} {}", c.name(), if self.verdict.holds(c) { "ok" } else { "FAIL" }))
            .collect();
        writeln!(s, "  checks: {}", verdicts.join(", ")).unwrap();
        writeln!(
            s,
            "  progress {} learned {} instances",
            if self.progress.ok() { "ok" } else { "FAIL" },
            self.learned()
        )
        .unwrap();
        writeln!(
            s,
            "  ticks {} submitted {} completed {} views {} distance increments {}",
            st.end_tick, st.submitted, st.completed, st.views, st.distance_increments
        )
        .unwrap();
        if let Some((node, msgs, bytes)) = self.summary.busiest {
            writeln!(s, "  busiest {node}: {msgs} msgs {bytes} bytes").unwrap();
        }
        if let Some(l) = self.leader_load() {
            writeln!(
                s,
                "  leader {}: {} msgs {} bytes",
                l.node,
                l.total.msgs(),
                l.total.bytes()
            )
            .unwrap();
        }
        let hops = |h: Option<usize>| h.map_or("-".to_string(), |x| x.to_string());
        writeln!(
            s,
            "  latency hops {} response hops {}",
            hops(self.summary.latency_hops),
            hops(self.summary.response_hops)
        )
        .unwrap();
        for v in &self.verdict.violations {
            writeln!(s, "  violation {v}").unwrap();
        }
        for (node, miss) in &self.progress.missing {
            writeln!(s, "  progress: {node} is missing {miss} of {} requests", self.progress.submitted)
                .unwrap();
        }
        s
    }
}

/// Simulate `scenario` and check the resulting trace.
pub fn simulate(scenario: &Scenario) -> RunReport {
    let mut world = World::new(scenario.to_setup());
    let stats = world.run();
    let records = world.into_trace();
    let run_id = format!("n{}-seed{}", scenario.n, scenario.seed);
    analyse(run_id, stats, records)
}

pub fn analyse(run_id: String, stats: RunStats, records: Vec<TraceRecord>) -> RunReport {
    let verdict = check_safety(&records);
    let progress = check_progress(&records, &stats.surviving_learners);
    let loads = metrics::aggregate(&records);
    let initial_leader = records.iter().find_map(|r| match &r.event {
        Event::View { leader, .. } => Some(*leader),
        _ => None,
    });
    let first_request = records.iter().find_map(|r| match &r.event {
        Event::Submit { id, .. } => Some(*id),
        _ => None,
    });
    let idx = HopIndex::new(&records);
    let summary = RunSummary {
        busiest: metrics::busiest_node(&loads),
        latency_hops: idx.first_latency(1, initial_leader).map(|h| h.len()),
        response_hops: first_request.and_then(|id| idx.response(id)).map(|h| h.len()),
    };
    RunReport {
        run_id,
        stats,
        trace: records,
        verdict,
        progress,
        loads,
        summary,
        initial_leader,
    }
}

/// Write `trace.log` and `metrics.csv` into `dir`, creating it if needed.
pub fn write_outputs(report: &RunReport, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("trace.log"), report.trace_text().as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), report.csv().as_bytes())?;
    Ok(())
}

/// Write through a sibling temporary file and rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

/// Re-check a saved trace. Parse errors carry the offending line.
pub fn replay(text: &str) -> Result<Verdict, ParseError> {
    Ok(check_safety(&trace::parse(text)?))
}
