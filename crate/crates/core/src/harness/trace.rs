//! Simulation records and their CSV form.
//!
//! Columns: `t,agent,event_kind,status,h_tot,psi_0..psi_{q-1},u_0..,x_0..`.
//! Integration-step rows leave `agent` and `status` empty; `u` holds every
//! agent's held input stacked in agent order and `x` the stacked state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::FilterStatus;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Step,
    Sample,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Step => "step",
            EventKind::Sample => "sample",
        }
    }
}

/// Outcome of one sampling event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Optimal,
    Fallback,
    Adversarial,
    Nominal,
    Error,
}

impl SampleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleStatus::Optimal => "optimal",
            SampleStatus::Fallback => "fallback",
            SampleStatus::Adversarial => "adversarial",
            SampleStatus::Nominal => "nominal",
            SampleStatus::Error => "error",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "optimal" => SampleStatus::Optimal,
            "fallback" => SampleStatus::Fallback,
            "adversarial" => SampleStatus::Adversarial,
            "nominal" => SampleStatus::Nominal,
            "error" => SampleStatus::Error,
            other => return Err(Error::Io(format!("unknown status {other:?}"))),
        })
    }
}

impl From<FilterStatus> for SampleStatus {
    fn from(s: FilterStatus) -> Self {
        match s {
            FilterStatus::Optimal => SampleStatus::Optimal,
            FilterStatus::Fallback => SampleStatus::Fallback,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub agent: Option<usize>,
    pub kind: EventKind,
    pub status: Option<SampleStatus>,
    pub h_tot: f64,
    pub psi: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    /// Safety-row slack at a sampling event (kept in memory only).
    pub slack: Option<f64>,
}

/// Running extremes over a simulation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Largest `h_tot` over every integration step.
    pub max_h_tot: f64,
    /// First integration-step time with `h_tot > 0`.
    pub first_violation: Option<f64>,
    /// Largest `psi_j` per level over recorded rows.
    pub max_psi: Vec<f64>,
    pub fallback_count: usize,
    pub sample_count: usize,
    pub step_count: usize,
    /// Smallest safety-row slack over filtered samples.
    pub min_row_slack: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub order: usize,
    pub rows: Vec<TraceRow>,
    pub summary: TraceSummary,
}

fn header(order: usize, m: usize, n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "agent", "event_kind", "status", "h_tot"].iter().map(|s| s.to_string()).collect();
    h.extend((0..order).map(|j| format!("psi_{j}")));
    h.extend((0..m).map(|k| format!("u_{k}")));
    h.extend((0..n).map(|k| format!("x_{k}")));
    h
}

impl Trace {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            rows: Vec::new(),
            summary: TraceSummary { max_h_tot: f64::NEG_INFINITY, max_psi: vec![f64::NEG_INFINITY; order], ..Default::default() },
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        for (m, p) in self.summary.max_psi.iter_mut().zip(&row.psi) {
            *m = m.max(*p);
        }
        if row.kind == EventKind::Sample {
            self.summary.sample_count += 1;
            if row.status == Some(SampleStatus::Fallback) {
                self.summary.fallback_count += 1;
            }
            if let Some(s) = row.slack {
                self.summary.min_row_slack = Some(self.summary.min_row_slack.map_or(s, |m| m.min(s)));
            }
        }
        self.rows.push(row);
    }

    /// Folds one integration step into the running extremes.
    pub fn observe_step(&mut self, t: f64, h: f64) {
        self.summary.step_count += 1;
        self.summary.max_h_tot = self.summary.max_h_tot.max(h);
        if h > 0.0 && self.summary.first_violation.is_none() {
            self.summary.first_violation = Some(t);
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.kind == EventKind::Step)
    }

    pub fn samples(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.kind == EventKind::Sample)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let (m, n) = self.rows.first().map(|r| (r.u.len(), r.x.len())).unwrap_or((0, 0));
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header(self.order, m, n))?;
        for r in &self.rows {
            let mut rec: Vec<String> = Vec::with_capacity(5 + self.order + m + n);
            rec.push(r.t.to_string());
            rec.push(r.agent.map(|a| a.to_string()).unwrap_or_default());
            rec.push(r.kind.as_str().to_string());
            rec.push(r.status.map(|s| s.as_str().to_string()).unwrap_or_default());
            rec.push(r.h_tot.to_string());
            rec.extend(r.psi.iter().map(f64::to_string));
            rec.extend(r.u.iter().map(f64::to_string));
            rec.extend(r.x.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`Trace::write_csv`]. The summary is rebuilt
    /// from the recorded rows only.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let head = r.headers()?.clone();
        let count = |prefix: &str| head.iter().filter(|c| c.starts_with(prefix)).count();
        let (order, m, n) = (count("psi_"), count("u_"), count("x_"));
        if head.iter().take(5).ne(["t", "agent", "event_kind", "status", "h_tot"]) {
            return Err(Error::Io("unexpected trace header".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Io(format!("bad number {s:?}: {e}")));
        let mut trace = Trace::new(order);
        for rec in r.records() {
            let rec = rec?;
            let kind = match &rec[2] {
                "step" => EventKind::Step,
                "sample" => EventKind::Sample,
                other => return Err(Error::Io(format!("unknown event kind {other:?}"))),
            };
            let agent =
                if rec[1].is_empty() { None } else { Some(rec[1].parse().map_err(|_| Error::Io("bad agent id".into()))?) };
            let status = if rec[3].is_empty() { None } else { Some(SampleStatus::parse(&rec[3])?) };
            let vals = |from: usize, len: usize| (from..from + len).map(|k| num(&rec[k])).collect::<Result<Vec<f64>>>();
            let row = TraceRow {
                t: num(&rec[0])?,
                agent,
                kind,
                status,
                h_tot: num(&rec[4])?,
                psi: vals(5, order)?,
                u: vals(5 + order, m)?,
                x: vals(5 + order + m, n)?,
                slack: None,
            };
            if kind == EventKind::Step {
                trace.observe_step(row.t, row.h_tot);
            }
            trace.push(row);
        }
        Ok(trace)
    }
}
