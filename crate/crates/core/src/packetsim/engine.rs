use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::alloc::AllocObjective;
use crate::model::RequirementMatrix;

use super::tags::{tag_bmf, tag_drf, tag_pf};
use super::ServiceStart;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum EventKind {
    FlowArrival,
    ServiceDone(usize),
    Credit(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

/// A packet waiting at (or being served by) a resource.
#[derive(Debug, Clone, Copy)]
struct Entry {
    tag: f64,
    flow: usize,
    seq: u64,
    /// Position along the flow's route.
    stage: usize,
    /// DRFQ tag, carried from admission to every resource.
    drf_tag: f64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.tag
            .total_cmp(&other.tag)
            .then(self.flow.cmp(&other.flow))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Default)]
struct Resource {
    queue: BinaryHeap<Reverse<Entry>>,
    serving: Option<Entry>,
    /// Tag of the last packet to begin service here.
    virtual_time: f64,
}

pub(super) struct Flow {
    pub class: usize,
    /// `u64::MAX` for a persistent flow.
    pub size: u64,
    admitted: u64,
    in_flight: u32,
    pub done: u64,
    pub arrival: f64,
    pub completion: Option<f64>,
    /// Last start tag per resource (index 0 only under DRFQ).
    last_tag: Vec<Option<f64>>,
    /// `Q_ij`: packets waiting or in service at each resource.
    backlog: Vec<u32>,
}

pub(super) struct Engine<'a> {
    req: &'a RequirementMatrix,
    discipline: AllocObjective,
    window: u32,
    propagation: &'a [f64],
    routes: Vec<Vec<usize>>,
    dominant: Vec<f64>,
    pub now: f64,
    events: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    resources: Vec<Resource>,
    /// Global virtual time under DRFQ.
    drf_clock: f64,
    pub flows: Vec<Flow>,
    pub active: Vec<u32>,
    pub finished: Vec<usize>,
    pub max_in_flight: u32,
    pub packets: u64,
    pub trace: Option<Vec<ServiceStart>>,
}

impl<'a> Engine<'a> {
    pub fn new(
        req: &'a RequirementMatrix,
        discipline: AllocObjective,
        window: u32,
        propagation: &'a [f64],
        trace: bool,
    ) -> Self {
        let routes = req
            .rows()
            .map(|row| (0..row.len()).filter(|&j| row[j] > 0.0).collect())
            .collect();
        let dominant = req.rows().map(|row| row.iter().copied().fold(0.0, f64::max)).collect();
        Self {
            req,
            discipline,
            window,
            propagation,
            routes,
            dominant,
            now: 0.0,
            events: BinaryHeap::new(),
            next_seq: 0,
            resources: (0..req.resources()).map(|_| Resource::default()).collect(),
            drf_clock: 0.0,
            flows: Vec::new(),
            active: vec![0; req.classes()],
            finished: Vec::new(),
            max_in_flight: 0,
            packets: 0,
            trace: trace.then(Vec::new),
        }
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Reverse(Event { time, seq, kind }));
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.events.peek().map(|e| e.0.time)
    }

    /// Pops the next event and handles everything but flow arrivals, which
    /// are returned to the caller.
    pub fn step(&mut self) -> Option<EventKind> {
        let Reverse(event) = self.events.pop()?;
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        match event.kind {
            EventKind::FlowArrival => {}
            EventKind::ServiceDone(j) => self.service_done(j),
            EventKind::Credit(flow) => {
                self.flows[flow].in_flight -= 1;
                self.admit(flow);
            }
        }
        Some(event.kind)
    }

    pub fn add_flow(&mut self, class: usize, size: u64) -> usize {
        let id = self.flows.len();
        let slots = if self.discipline == AllocObjective::Drf { 1 } else { self.req.resources() };
        self.flows.push(Flow {
            class,
            size,
            admitted: 0,
            in_flight: 0,
            done: 0,
            arrival: self.now,
            completion: None,
            last_tag: vec![None; slots],
            backlog: vec![0; self.req.resources()],
        });
        self.active[class] += 1;
        self.admit(id);
        id
    }

    /// Moves packets from the ingress buffer into the pipeline while the
    /// window allows.
    fn admit(&mut self, id: usize) {
        loop {
            let flow = &mut self.flows[id];
            if flow.in_flight >= self.window || flow.admitted >= flow.size {
                return;
            }
            let seq = flow.admitted;
            flow.admitted += 1;
            flow.in_flight += 1;
            self.max_in_flight = self.max_in_flight.max(flow.in_flight);
            let drf_tag = if self.discipline == AllocObjective::Drf {
                let tag = tag_drf(self.drf_clock, flow.last_tag[0], self.dominant[flow.class]);
                flow.last_tag[0] = Some(tag);
                tag
            } else {
                0.0
            };
            let entry = Entry {
                tag: drf_tag,
                flow: id,
                seq,
                stage: 0,
                drf_tag,
            };
            self.arrive(entry);
        }
    }

    fn arrive(&mut self, mut entry: Entry) {
        let flow = &mut self.flows[entry.flow];
        let j = self.routes[flow.class][entry.stage];
        let a = self.req.get(flow.class, j);
        flow.backlog[j] += 1;
        let v = self.resources[j].virtual_time;
        entry.tag = match self.discipline {
            AllocObjective::Drf => entry.drf_tag,
            AllocObjective::Pf => tag_pf(v, flow.last_tag[j], a, flow.backlog[j]),
            AllocObjective::Bmf => tag_bmf(v, flow.last_tag[j], a),
        };
        if self.discipline != AllocObjective::Drf {
            debug_assert!(flow.last_tag[j].is_none_or(|s| entry.tag >= s));
            flow.last_tag[j] = Some(entry.tag);
        }
        self.resources[j].queue.push(Reverse(entry));
        self.start(j);
    }

    fn start(&mut self, j: usize) {
        // a completion can re-admit into the same resource before we get here
        if self.resources[j].serving.is_some() {
            return;
        }
        let Some(Reverse(entry)) = self.resources[j].queue.pop() else {
            return;
        };
        let class = self.flows[entry.flow].class;
        let res = &mut self.resources[j];
        if self.discipline == AllocObjective::Drf {
            self.drf_clock = self.drf_clock.max(entry.tag);
        } else {
            debug_assert!(entry.tag >= res.virtual_time);
            res.virtual_time = entry.tag;
        }
        res.serving = Some(entry);
        if let Some(trace) = &mut self.trace {
            trace.push(ServiceStart {
                time: self.now,
                resource: j,
                flow: entry.flow,
                seq: entry.seq,
                tag: entry.tag,
            });
        }
        let service = self.req.get(class, j);
        self.schedule(self.now + service, EventKind::ServiceDone(j));
    }

    fn service_done(&mut self, j: usize) {
        let entry = self.resources[j].serving.take().expect("resource was busy");
        let flow = &mut self.flows[entry.flow];
        flow.backlog[j] -= 1;
        let class = flow.class;
        if entry.stage + 1 < self.routes[class].len() {
            self.arrive(Entry {
                stage: entry.stage + 1,
                ..entry
            });
        } else {
            self.packet_finished(entry.flow);
        }
        self.start(j);
    }

    fn packet_finished(&mut self, id: usize) {
        self.packets += 1;
        let flow = &mut self.flows[id];
        flow.done += 1;
        let class = flow.class;
        if flow.done == flow.size {
            flow.completion = Some(self.now);
            self.active[class] -= 1;
            self.finished.push(id);
            // release per-resource state of the finished flow
            flow.last_tag = Vec::new();
            flow.backlog = Vec::new();
            return;
        }
        let delay = self.propagation[class];
        if delay > 0.0 {
            self.schedule(self.now + delay, EventKind::Credit(id));
        } else {
            flow.in_flight -= 1;
            self.admit(id);
        }
    }
}
