//! Cycle-stepped timing of one compute unit's input path.
//!
//! Inside a cycle the FIFO controller acts first, then the detector, then the
//! input loader. The loader writes one IFspad row per cycle; the detector may
//! read a row from the cycle after it was written, spends one cycle per row
//! read and one per tuple pushed, and stalls while the even FIFO is full. An
//! op issued at cycle `c` leaves the macro pipeline at the end of `c + 2`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{detect_spikes, Action, IfSpad, PingPong};
use crate::arch::ArchParams;
use crate::cim::{AddressTuple, Parity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapathConfig {
    pub fifo_depth: usize,
    pub parity_switch_cycles: u64,
    pub trace: bool,
}

impl DatapathConfig {
    pub fn from_arch(arch: &ArchParams) -> Self {
        DatapathConfig {
            fifo_depth: arch.fifo_depth,
            parity_switch_cycles: arch.parity_switch_cycles,
            trace: false,
        }
    }
}

impl Default for DatapathConfig {
    fn default() -> Self {
        Self::from_arch(&ArchParams::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceUnit {
    Loader,
    Detector,
    Controller,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceAction {
    Write,
    Read,
    Emit,
    Stall,
    Issue,
    Switch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapathEvent {
    pub cycle: u64,
    pub unit: TraceUnit,
    pub action: TraceAction,
    pub y: Option<usize>,
    pub x: Option<usize>,
    pub parity: Option<Parity>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapathRun {
    pub cycles: u64,
    /// Loader write cycles (one per used row).
    pub il_cycles: u64,
    /// Detector cycles spent reading rows or pushing tuples.
    pub detector_busy: u64,
    pub detector_stalls: u64,
    /// Macro span: ops + fill/drain + switch cycles; 0 without ops.
    pub macro_cycles: u64,
    pub ops: Vec<AddressTuple>,
    pub switches: u64,
    pub fifo_pushes: u64,
    pub fifo_pops: u64,
    pub ifspad_writes: u64,
    pub ifspad_reads: u64,
    pub events: Vec<DatapathEvent>,
}

impl DatapathRun {
    /// Largest single-component time, a lower bound on `cycles`.
    pub fn overlap_bound(&self) -> u64 {
        self.il_cycles
            .max(self.detector_busy)
            .max(self.macro_cycles)
    }

    /// Fully serialized time, an upper bound on `cycles`.
    pub fn serial_bound(&self) -> u64 {
        self.il_cycles + self.detector_busy + self.macro_cycles
    }
}

struct Detector {
    cursor: usize,
    pending: Vec<usize>,
    next: usize,
    done: bool,
}

pub fn datapath_cycles(spad: &IfSpad, cfg: &DatapathConfig) -> DatapathRun {
    let rows = spad.used_rows();
    let psc = cfg.parity_switch_cycles;
    let mut run = DatapathRun {
        il_cycles: rows as u64,
        ..Default::default()
    };
    let mut q = PingPong::new(cfg.fifo_depth);
    let mut det = Detector {
        cursor: 0,
        pending: Vec::new(),
        next: 0,
        done: rows == 0,
    };
    let mut det_end = 0u64;
    let mut last_issue: Option<u64> = None;
    let mut switch_left = 0u64;
    let mut cycle = 0u64;
    let log = |run: &mut DatapathRun, e: DatapathEvent| {
        if cfg.trace {
            run.events.push(e);
        }
    };
    let ev = |cycle, unit, action, y, x, parity| DatapathEvent {
        cycle,
        unit,
        action,
        y,
        x,
        parity,
    };

    while !(det.done && q.is_empty() && switch_left == 0) || (cycle as usize) < rows {
        // Controller
        if switch_left > 0 {
            switch_left -= 1;
            log(&mut run, ev(cycle, TraceUnit::Controller, TraceAction::Switch, None, None, Some(q.active())));
        } else {
            loop {
                match q.decide(det.done) {
                    Action::Issue => {
                        let op = q.issue();
                        run.fifo_pops += 1;
                        if op.parity == Parity::Even {
                            run.fifo_pushes += 1;
                        }
                        log(&mut run, ev(cycle, TraceUnit::Controller, TraceAction::Issue, Some(op.y), Some(op.x), Some(op.parity)));
                        run.ops.push(op);
                        last_issue = Some(cycle);
                        break;
                    }
                    Action::Switch => {
                        q.switch();
                        run.switches += 1;
                        if psc == 0 {
                            continue;
                        }
                        switch_left = psc - 1;
                        log(&mut run, ev(cycle, TraceUnit::Controller, TraceAction::Switch, None, None, Some(q.active())));
                        break;
                    }
                    Action::Wait | Action::Done => break,
                }
            }
        }

        // Detector
        if !det.done {
            if det.next < det.pending.len() {
                let x = det.pending[det.next];
                if q.push(det.cursor, x) {
                    run.fifo_pushes += 1;
                    run.detector_busy += 1;
                    log(&mut run, ev(cycle, TraceUnit::Detector, TraceAction::Emit, Some(det.cursor), Some(x), None));
                    det.next += 1;
                    if det.next == det.pending.len() {
                        det.cursor += 1;
                        det.pending.clear();
                        det.next = 0;
                    }
                } else {
                    run.detector_stalls += 1;
                    log(&mut run, ev(cycle, TraceUnit::Detector, TraceAction::Stall, Some(det.cursor), None, None));
                }
            } else if (det.cursor as u64) < cycle {
                run.ifspad_reads += 1;
                run.detector_busy += 1;
                log(&mut run, ev(cycle, TraceUnit::Detector, TraceAction::Read, Some(det.cursor), None, None));
                det.pending = detect_spikes(spad.row(det.cursor));
                det.next = 0;
                if det.pending.is_empty() {
                    det.cursor += 1;
                }
            }
            if det.cursor == rows && det.pending.is_empty() {
                det.done = true;
                det_end = cycle + 1;
            }
        }

        // Input loader
        if (cycle as usize) < rows {
            run.ifspad_writes += 1;
            log(&mut run, ev(cycle, TraceUnit::Loader, TraceAction::Write, Some(cycle as usize), None, None));
        }
        cycle += 1;
    }

    if !run.ops.is_empty() {
        run.macro_cycles = run.ops.len() as u64 + 2 + psc * run.switches;
    }
    run.cycles = (rows as u64)
        .max(det_end)
        .max(last_issue.map_or(0, |c| c + 3));
    run
}

/// Per-cycle CSV: `cycle,unit,action,y,x,parity`.
pub fn write_trace_csv<W: Write>(events: &[DatapathEvent], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cycle", "unit", "action", "y", "x", "parity"])?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for e in events {
        let unit = match e.unit {
            TraceUnit::Loader => "loader",
            TraceUnit::Detector => "detector",
            TraceUnit::Controller => "controller",
        };
        let action = match e.action {
            TraceAction::Write => "write",
            TraceAction::Read => "read",
            TraceAction::Emit => "emit",
            TraceAction::Stall => "stall",
            TraceAction::Issue => "issue",
            TraceAction::Switch => "switch",
        };
        w.write_record([
            e.cycle.to_string(),
            unit.to_string(),
            action.to_string(),
            opt(e.y),
            opt(e.x),
            e.parity.map(|p| p.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
