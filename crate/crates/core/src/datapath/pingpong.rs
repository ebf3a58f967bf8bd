use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cim::{AddressTuple, Parity};

/// What the controller does next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Issue,
    Switch,
    Wait,
    Done,
}

/// Even/odd FIFO pair. Tuples enter the even FIFO from the detector; after
/// the even accumulation they move to the odd FIFO and are dropped once the
/// odd accumulation has run.
#[derive(Clone, Debug)]
pub struct PingPong {
    even: VecDeque<(usize, usize)>,
    odd: VecDeque<(usize, usize)>,
    depth: usize,
    active: Parity,
}

impl PingPong {
    pub fn new(depth: usize) -> Self {
        assert!(depth > 0, "fifo depth must be positive");
        PingPong {
            even: VecDeque::with_capacity(depth),
            odd: VecDeque::with_capacity(depth),
            depth,
            active: Parity::Even,
        }
    }

    pub fn active(&self) -> Parity {
        self.active
    }

    pub fn even_len(&self) -> usize {
        self.even.len()
    }

    pub fn odd_len(&self) -> usize {
        self.odd.len()
    }

    pub fn can_push(&self) -> bool {
        self.even.len() < self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.even.is_empty() && self.odd.is_empty()
    }

    /// Detector side. Returns false (and drops nothing) when the even FIFO is full.
    pub fn push(&mut self, y: usize, x: usize) -> bool {
        if !self.can_push() {
            return false;
        }
        self.even.push_back((y, x));
        true
    }

    /// `source_done` means the detector will not push any more tuples.
    pub fn decide(&self, source_done: bool) -> Action {
        match self.active {
            Parity::Even => {
                if !self.even.is_empty() && self.odd.len() < self.depth {
                    Action::Issue
                } else if self.odd.len() == self.depth
                    || (self.even.is_empty() && source_done && !self.odd.is_empty())
                {
                    Action::Switch
                } else if self.is_empty() && source_done {
                    Action::Done
                } else {
                    Action::Wait
                }
            }
            Parity::Odd => {
                if !self.odd.is_empty() {
                    Action::Issue
                } else if !self.even.is_empty() {
                    Action::Switch
                } else if source_done {
                    Action::Done
                } else {
                    Action::Wait
                }
            }
        }
    }

    pub fn switch(&mut self) {
        self.active = self.active.other();
    }

    /// Pop the head of the active FIFO. Even tuples are re-enqueued as odd.
    pub fn issue(&mut self) -> AddressTuple {
        match self.active {
            Parity::Even => {
                let (y, x) = self.even.pop_front().expect("issue from empty even FIFO");
                debug_assert!(self.odd.len() < self.depth);
                self.odd.push_back((y, x));
                AddressTuple::new(y, x, Parity::Even)
            }
            Parity::Odd => {
                let (y, x) = self.odd.pop_front().expect("issue from empty odd FIFO");
                AddressTuple::new(y, x, Parity::Odd)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PingPongRun {
    pub ops: Vec<AddressTuple>,
    pub switches: usize,
}

impl PingPongRun {
    /// Lengths of consecutive same-parity runs.
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        let mut prev = None;
        for op in &self.ops {
            if prev == Some(op.parity) {
                *out.last_mut().unwrap() += 1;
            } else {
                out.push(1);
                prev = Some(op.parity);
            }
        }
        out
    }
}

/// Drive the controller with every tuple available up front; the detector
/// refills the even FIFO whenever there is room.
pub fn pingpong_run(tuples: &[(usize, usize)], depth: usize) -> PingPongRun {
    let mut q = PingPong::new(depth);
    let mut source = tuples.iter();
    let mut pending = source.next();
    let mut run = PingPongRun::default();
    loop {
        while let Some(&(y, x)) = pending {
            if !q.push(y, x) {
                break;
            }
            pending = source.next();
        }
        match q.decide(pending.is_none()) {
            Action::Issue => run.ops.push(q.issue()),
            Action::Switch => {
                q.switch();
                run.switches += 1;
            }
            Action::Done => break,
            Action::Wait => unreachable!("untimed source never starves the controller"),
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i / 16, i % 16)).collect()
    }

    #[test]
    fn three_tuples() {
        let run = pingpong_run(&stream(3), 16);
        let parities: Vec<_> = run.ops.iter().map(|o| o.parity).collect();
        use Parity::*;
        assert_eq!(parities, vec![Even, Even, Even, Odd, Odd, Odd]);
        assert_eq!(run.switches, 1);
    }

    #[test]
    fn forty_tuples() {
        let run = pingpong_run(&stream(40), 16);
        assert_eq!(run.run_lengths(), vec![16, 16, 16, 16, 8, 8]);
        assert_eq!(run.switches, 5);
    }

    #[test]
    fn empty_stream() {
        let run = pingpong_run(&[], 16);
        assert!(run.ops.is_empty());
        assert_eq!(run.switches, 0);
    }

    #[test]
    fn each_tuple_once_per_parity() {
        let tuples = stream(77);
        let run = pingpong_run(&tuples, 5);
        for parity in [Parity::Even, Parity::Odd] {
            let seen: Vec<_> = run
                .ops
                .iter()
                .filter(|o| o.parity == parity)
                .map(|o| (o.y, o.x))
                .collect();
            assert_eq!(seen, tuples);
        }
        assert!(run.run_lengths().iter().all(|&l| l <= 5));
    }
}
