//! Discrete-event kernel: a virtual clock in abstract ticks, a total-order
//! event queue, seeded RNG substreams and a structured trace. The kernel is
//! generic over the event payload; protocol wiring lives in the engine.

pub mod rng;
pub mod trace;

pub use rng::RngFactory;
pub use trace::{Trace, TraceEvent};

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

pub type SimTime = u64;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("cannot schedule at t={requested} before current time t={now}")]
    PastTime { now: SimTime, requested: SimTime },
    #[error("watchdog: event loop exceeded wall-time budget of {0:?}")]
    WallBudget(std::time::Duration),
}

#[derive(Debug)]
struct Scheduled<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<E> Eq for Scheduled<E> {}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // (fire_at, seq) is a total order: same-tick events pop in the order
        // they were scheduled.
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Priority queue of future events with a monotone clock. `now` advances to
/// each event's fire time as it pops; scheduling into the past is an error.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Scheduled<E>>>,
    next_seq: u64,
    now: SimTime,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), next_seq: 0, now: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<(), SimError> {
        if fire_at < self.now {
            return Err(SimError::PastTime { now: self.now, requested: fire_at });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Scheduled { fire_at, seq, payload }));
        Ok(())
    }

    /// Schedules relative to the current time.
    pub fn schedule_in(&mut self, delay: SimTime, payload: E) {
        let at = self.now.saturating_add(delay);
        self.schedule(at, payload).expect("future time is never in the past");
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse(ev) = self.heap.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        Some((ev.fire_at, ev.payload))
    }

    /// Next event's fire time without popping it.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(ev)| ev.fire_at)
    }
}

/// Something that consumes events and may schedule more.
pub trait EventHandler {
    type Ev;

    fn handle(&mut self, t: SimTime, ev: Self::Ev, queue: &mut EventQueue<Self::Ev>);

    /// When true the loop stops even if events remain queued.
    fn finished(&self) -> bool {
        false
    }
}

#[derive(Debug, PartialEq, Eq, Clone, Copy)]
pub enum RunEnd {
    /// Handler reported completion.
    Finished,
    /// Queue drained with no stop condition met.
    QueueExhausted,
    /// Virtual time limit reached; remaining events untouched.
    TimeLimit,
}

/// Drains the queue until the handler finishes, the queue empties, or
/// virtual time passes `t_max`. A wall-clock watchdog guards against
/// runaway loops.
pub fn run_until<H: EventHandler>(
    handler: &mut H,
    queue: &mut EventQueue<H::Ev>,
    t_max: Option<SimTime>,
    wall_budget: Option<std::time::Duration>,
) -> Result<(SimTime, RunEnd), SimError> {
    let started = std::time::Instant::now();
    let mut since_check = 0u32;
    loop {
        if handler.finished() {
            return Ok((queue.now(), RunEnd::Finished));
        }
        match queue.peek_time() {
            None => return Ok((queue.now(), RunEnd::QueueExhausted)),
            Some(t) => {
                if let Some(limit) = t_max {
                    if t > limit {
                        return Ok((queue.now(), RunEnd::TimeLimit));
                    }
                }
            }
        }
        let (t, ev) = queue.pop().expect("peeked event exists");
        handler.handle(t, ev, queue);

        since_check += 1;
        if since_check >= 4096 {
            since_check = 0;
            if let Some(budget) = wall_budget {
                if started.elapsed() > budget {
                    return Err(SimError::WallBudget(budget));
                }
            }
        }
    }
}
