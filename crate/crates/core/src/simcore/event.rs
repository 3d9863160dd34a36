use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    NewCall,
    CallEnroute,
    CallArriveScene,
    CallDepartScene,
    CallArriveHospital,
    AmbulanceAvailable,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::NewCall => "NewCall",
            EventKind::CallEnroute => "CallEnroute",
            EventKind::CallArriveScene => "CallArriveScene",
            EventKind::CallDepartScene => "CallDepartScene",
            EventKind::CallArriveHospital => "CallArriveHospital",
            EventKind::AmbulanceAvailable => "AmbulanceAvailable",
        }
    }

    /// Position in a call's event chain.
    pub fn stage(&self) -> u8 {
        *self as u8
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
    pub call_id: usize,
    pub ambulance_id: Option<usize>,
    pub cell: usize,
}

pub fn event_log_csv(events: &[Event]) -> String {
    let mut s = String::from("time_s,kind,call_id,ambulance_id,cell\n");
    for e in events {
        let amb = e.ambulance_id.map(|a| a.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{}\n", e.time_s, e.kind, e.call_id, amb, e.cell));
    }
    s
}

/// Pending event; earlier time first, then insertion order.
pub(crate) struct Scheduled {
    pub event: Event,
    pub seq: u64,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other.event.time_s.total_cmp(&self.event.time_s).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, event: Event) {
        self.heap.push(Scheduled { event, seq: self.next_seq });
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|s| s.event)
    }
}
