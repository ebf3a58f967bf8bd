//! Event-driven timing of one chain of units with one-entry link buffers.
//!
//! A unit starts timestep `t` once it has handed off `t - 1` and the block for
//! `t` sits in its input buffer. On finishing it holds its result until the
//! downstream buffer is free (the downstream unit has started `t - 1`), then
//! the block travels for `xfer` cycles. The last unit sends to a sink that is
//! always free.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Start,
    Finish,
    Send,
    Stall,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Finish => "finish",
            EventKind::Send => "send",
            EventKind::Stall => "stall",
        }
    }
}

/// Event of a unit in chain-local numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEvent {
    pub cycle: u64,
    pub unit: usize,
    pub timestep: usize,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTiming {
    pub makespan: u64,
    pub start: Vec<Vec<u64>>,
    pub finish: Vec<Vec<u64>>,
    pub depart: Vec<Vec<u64>>,
    /// Cycles units spent holding a finished block behind a full link.
    pub link_stall_cycles: u64,
    pub sends: u64,
    pub events: Vec<ChainEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    // Arrivals sort before finishes at equal time; the order is irrelevant
    // to the result but fixed for reproducible traces.
    Arrive { unit: usize, t: usize },
    Finish { unit: usize, t: usize },
    SinkDone,
}

struct Unit {
    next_t: usize,
    busy: bool,
    holding: Option<usize>,
    inbox: Option<usize>,
    slot_taken: bool,
    stalled_since: Option<u64>,
}

struct Sim<'a> {
    delays: &'a [Vec<u64>],
    xfer: u64,
    trace: bool,
    units: Vec<Unit>,
    queue: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    seq: u64,
    out: ChainTiming,
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, ev)));
    }

    fn log(&mut self, cycle: u64, unit: usize, timestep: usize, kind: EventKind) {
        if self.trace {
            self.out.events.push(ChainEvent {
                cycle,
                unit,
                timestep,
                kind,
            });
        }
    }

    fn try_start(&mut self, u: usize, now: u64) {
        let steps = self.delays[u].len();
        let unit = &self.units[u];
        let t = unit.next_t;
        if unit.busy || unit.holding.is_some() || t >= steps {
            return;
        }
        if u > 0 && unit.inbox != Some(t) {
            return;
        }
        if u > 0 {
            self.units[u].inbox = None;
            self.units[u].slot_taken = false;
        }
        self.units[u].busy = true;
        self.out.start[u][t] = now;
        self.log(now, u, t, EventKind::Start);
        let d = self.delays[u][t];
        self.schedule(now + d, Ev::Finish { unit: u, t });
        if u > 0 {
            self.try_depart(u - 1, now);
        }
    }

    fn try_depart(&mut self, u: usize, now: u64) {
        let Some(t) = self.units[u].holding else {
            return;
        };
        let last = u + 1 == self.units.len();
        if !last {
            if self.units[u + 1].slot_taken {
                if self.units[u].stalled_since.is_none() {
                    self.units[u].stalled_since = Some(now);
                    self.log(now, u, t, EventKind::Stall);
                }
                return;
            }
            self.units[u + 1].slot_taken = true;
            self.schedule(now + self.xfer, Ev::Arrive { unit: u + 1, t });
        } else {
            self.schedule(now + self.xfer, Ev::SinkDone);
        }
        if let Some(since) = self.units[u].stalled_since.take() {
            self.out.link_stall_cycles += now - since;
        }
        self.units[u].holding = None;
        self.out.depart[u][t] = now;
        self.out.sends += 1;
        self.log(now, u, t, EventKind::Send);
        self.try_start(u, now);
    }

    fn run(mut self) -> ChainTiming {
        if !self.units.is_empty() {
            self.try_start(0, 0);
        }
        while let Some(Reverse((now, _, ev))) = self.queue.pop() {
            match ev {
                Ev::Finish { unit, t } => {
                    self.units[unit].busy = false;
                    self.units[unit].holding = Some(t);
                    self.units[unit].next_t = t + 1;
                    self.out.finish[unit][t] = now;
                    self.log(now, unit, t, EventKind::Finish);
                    self.try_depart(unit, now);
                }
                Ev::Arrive { unit, t } => {
                    self.units[unit].inbox = Some(t);
                    self.try_start(unit, now);
                }
                Ev::SinkDone => self.out.makespan = self.out.makespan.max(now),
            }
        }
        self.out
    }
}

/// `delays[u][t]` is the busy time of unit `u` on timestep `t`; every unit
/// must list the same number of timesteps.
pub fn simulate_chain(delays: &[Vec<u64>], xfer: u64, trace: bool) -> ChainTiming {
    let steps = delays.first().map_or(0, Vec::len);
    assert!(delays.iter().all(|d| d.len() == steps), "ragged delay table");
    let n = delays.len();
    let sim = Sim {
        delays,
        xfer,
        trace,
        units: (0..n)
            .map(|_| Unit {
                next_t: 0,
                busy: false,
                holding: None,
                inbox: None,
                slot_taken: false,
                stalled_since: None,
            })
            .collect(),
        queue: BinaryHeap::new(),
        seq: 0,
        out: ChainTiming {
            start: vec![vec![0; steps]; n],
            finish: vec![vec![0; steps]; n],
            depart: vec![vec![0; steps]; n],
            ..Default::default()
        },
    };
    let out = sim.run();
    debug_assert!(steps == 0 || n == 0 || out.sends == (n * steps) as u64);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_closed_form() {
        for (n, steps, d, tr) in [(4, 1, 10, 3), (4, 8, 66, 32), (10, 5, 40, 32), (1, 3, 7, 0)] {
            let delays = vec![vec![d; steps]; n];
            let out = simulate_chain(&delays, tr, false);
            assert_eq!(out.makespan, (n + steps - 1) as u64 * d + n as u64 * tr);
        }
    }

    #[test]
    fn slow_tail_backs_up_the_chain() {
        let delays = vec![vec![1; 4], vec![1; 4], vec![20; 4]];
        let out = simulate_chain(&delays, 0, true);
        assert_eq!(out.makespan, 2 + 80);
        assert!(out.link_stall_cycles > 0);
        for u in 0..3 {
            let mut last = 0;
            let mut expect = EventKind::Start;
            for e in out.events.iter().filter(|e| e.unit == u) {
                assert!(e.cycle >= last);
                last = e.cycle;
                match e.kind {
                    EventKind::Start | EventKind::Finish => {
                        assert_eq!(e.kind, expect);
                        expect = if expect == EventKind::Start {
                            EventKind::Finish
                        } else {
                            EventKind::Start
                        };
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn empty_chain() {
        assert_eq!(simulate_chain(&[], 32, false).makespan, 0);
        assert_eq!(simulate_chain(&[vec![], vec![]], 32, false).makespan, 0);
    }
}
