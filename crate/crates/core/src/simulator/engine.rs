//! One replication of the N-server system.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::streams::{Streams, Tag};
use super::{EventCounts, ReplicationResult, Sample, Sampling, SimConfig, TimeAverages};
use crate::meanfield::FractionVector;
use crate::stochkit::scaled_map;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Map,
    Server(usize),
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    kind: Kind,
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
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        let key = |k: Kind| match k {
            Kind::Map => 0usize,
            Kind::Server(s) => s + 1,
        };
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| key(other.kind).cmp(&key(self.kind)))
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Pick an index with probability proportional to `weights` (cumulative).
fn pick(cum: &[f64], u: f64) -> usize {
    let total = *cum.last().expect("non-empty");
    let x = u * total;
    cum.iter().position(|c| x < *c).unwrap_or(cum.len() - 1)
}

struct InService {
    phase: usize,
    rng: ChaCha8Rng,
}

#[derive(Default)]
struct Server {
    len: usize,
    busy: Option<InService>,
    waiting: VecDeque<u64>,
}

/// MAP jump table for one phase: cumulative rates over (next phase, arrival).
struct MapRow {
    cum: Vec<f64>,
    to: Vec<(usize, bool)>,
    rate: f64,
}

/// Service transition table for one PH phase; `None` is completion.
struct PhRow {
    cum: Vec<f64>,
    to: Vec<Option<usize>>,
    rate: f64,
}

pub(super) struct Engine<'a> {
    cfg: &'a SimConfig,
    streams: Streams,
    n: usize,
    d: usize,
    map_rows: Vec<MapRow>,
    ph_rows: Vec<PhRow>,
    alpha_cum: Vec<f64>,
    map_phase: usize,
    map_rng: ChaCha8Rng,
    servers: Vec<Server>,
    heap: BinaryHeap<Event>,
    t: f64,
    /// count_ge[k] = #servers with length ≥ k (count_ge[0] = N)
    count_ge: Vec<u64>,
    area: Vec<f64>,
    area_since: Vec<f64>,
    phase_time: Vec<f64>,
    total: u64,
    total_area: f64,
    next_id: u64,
    arrivals: u64,
    departures: u64,
    map_events: u64,
    window_arrivals: u64,
    initial_customers: u64,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a SimConfig, streams: Streams) -> Self {
        let model = &cfg.model;
        let scaled = scaled_map(&model.map, cfg.n);
        let m_a = model.m_a();
        let map_rows = (0..m_a)
            .map(|i| {
                let mut cum = Vec::new();
                let mut to = Vec::new();
                let mut acc = 0.0;
                for j in 0..m_a {
                    let c = scaled.c()[(i, j)];
                    if j != i && c > 0.0 {
                        acc += c;
                        cum.push(acc);
                        to.push((j, false));
                    }
                    let dd = scaled.d()[(i, j)];
                    if dd > 0.0 {
                        acc += dd;
                        cum.push(acc);
                        to.push((j, true));
                    }
                }
                MapRow { cum, to, rate: acc }
            })
            .collect();
        let t = model.ph.t();
        let exit = model.ph.exit();
        let ph_rows = (0..model.m_b())
            .map(|j| {
                let mut cum = Vec::new();
                let mut to = Vec::new();
                let mut acc = 0.0;
                for k in 0..model.m_b() {
                    if k != j && t[(j, k)] > 0.0 {
                        acc += t[(j, k)];
                        cum.push(acc);
                        to.push(Some(k));
                    }
                }
                if exit[j] > 0.0 {
                    acc += exit[j];
                    cum.push(acc);
                    to.push(None);
                }
                PhRow { cum, to, rate: -t[(j, j)] }
            })
            .collect();
        let mut alpha_cum = Vec::new();
        let mut acc = 0.0;
        for a in model.ph.alpha().iter() {
            acc += a;
            alpha_cum.push(acc);
        }
        Engine {
            cfg,
            streams,
            n: cfg.n,
            d: model.d,
            map_rows,
            ph_rows,
            alpha_cum,
            map_phase: 0,
            map_rng: streams.rng(Tag::Map, 0),
            servers: (0..cfg.n).map(|_| Server::default()).collect(),
            heap: BinaryHeap::new(),
            t: 0.0,
            count_ge: vec![cfg.n as u64],
            area: vec![0.0],
            area_since: vec![0.0],
            phase_time: vec![0.0; m_a],
            total: 0,
            total_area: 0.0,
            next_id: 0,
            arrivals: 0,
            departures: 0,
            map_events: 0,
            window_arrivals: 0,
            initial_customers: 0,
        }
    }

    fn overlap(&self, t0: f64, t1: f64) -> f64 {
        let lo = t0.max(self.cfg.warmup);
        let hi = t1.min(self.cfg.horizon);
        (hi - lo).max(0.0)
    }

    fn touch_level(&mut self, k: usize) {
        while self.count_ge.len() <= k {
            self.count_ge.push(0);
            self.area.push(0.0);
            self.area_since.push(self.t);
        }
        let w = self.overlap(self.area_since[k], self.t);
        self.area[k] += self.count_ge[k] as f64 * w;
        self.area_since[k] = self.t;
    }

    fn advance(&mut self, to: f64) {
        let w = self.overlap(self.t, to);
        self.phase_time[self.map_phase] += w;
        self.total_area += self.total as f64 * w;
        self.t = to;
    }

    fn start_service(&mut self, s: usize, id: u64, phase: Option<usize>) {
        let mut rng = self.streams.rng(Tag::Service, id);
        let phase = match phase {
            Some(p) => p,
            None => {
                let u: f64 = rng.random();
                pick(&self.alpha_cum, u)
            }
        };
        let dt = exp_sample(&mut rng, self.ph_rows[phase].rate);
        self.servers[s].busy = Some(InService { phase, rng });
        self.heap.push(Event {
            time: self.t + dt,
            kind: Kind::Server(s),
        });
    }

    fn join(&mut self, s: usize, id: u64, phase: Option<usize>) {
        let len = self.servers[s].len + 1;
        self.touch_level(len);
        self.count_ge[len] += 1;
        self.servers[s].len = len;
        self.total += 1;
        if len == 1 {
            self.start_service(s, id, phase);
        } else {
            self.servers[s].waiting.push_back(id);
        }
    }

    fn schedule_map(&mut self) {
        let rate = self.map_rows[self.map_phase].rate;
        let dt = exp_sample(&mut self.map_rng, rate);
        self.heap.push(Event {
            time: self.t + dt,
            kind: Kind::Map,
        });
    }

    /// Deterministic initial profile realizing `g` as closely as integer counts allow.
    fn seed_state(&mut self, g: Option<&FractionVector>) {
        let model = &self.cfg.model;
        let mut init = self.streams.rng(Tag::Init, 0);
        let u0: Vec<f64> = match g {
            Some(g) => g.u0.clone(),
            None => model.map.stationary().iter().copied().collect(),
        };
        let mut cum = Vec::with_capacity(u0.len());
        let mut acc = 0.0;
        for v in &u0 {
            acc += v.max(0.0);
            cum.push(acc);
        }
        self.map_phase = pick(&cum, init.random());
        let Some(g) = g else { return };
        let n = self.n;
        let mut counts: Vec<usize> = g
            .tails()
            .iter()
            .map(|t| ((t * n as f64).round().max(0.0) as usize).min(n))
            .collect();
        for k in 1..counts.len() {
            counts[k] = counts[k].min(counts[k - 1]);
        }
        while counts.last() == Some(&0) {
            counts.pop();
        }
        let busy = counts.first().copied().unwrap_or(0);
        // service phases of busy servers by largest remainder on level 1
        let m_b = model.m_b();
        let mut weights = vec![0.0; m_b];
        if let Some(l1) = g.level(1) {
            for (idx, v) in l1.iter().enumerate() {
                weights[idx % m_b] += v.max(0.0);
            }
        }
        let wsum: f64 = weights.iter().sum();
        let mut phases = Vec::with_capacity(busy);
        if wsum > 0.0 {
            let exact: Vec<f64> = weights.iter().map(|w| w / wsum * busy as f64).collect();
            let mut alloc: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
            let mut order: Vec<usize> = (0..m_b).collect();
            order.sort_by(|a, b| {
                (exact[*b] - alloc[*b] as f64).total_cmp(&(exact[*a] - alloc[*a] as f64))
            });
            let mut left = busy - alloc.iter().sum::<usize>();
            for j in order {
                if left == 0 {
                    break;
                }
                alloc[j] += 1;
                left -= 1;
            }
            for (j, c) in alloc.iter().enumerate() {
                phases.extend(std::iter::repeat_n(j, *c));
            }
        }
        for s in 0..busy {
            let len = counts.iter().filter(|c| s < **c).count();
            for pos in 0..len {
                let id = self.next_id;
                self.next_id += 1;
                let phase = if pos == 0 { phases.get(s).copied() } else { None };
                self.join(s, id, phase);
            }
        }
        self.initial_customers = self.next_id;
    }

    fn route(&mut self, id: u64) -> usize {
        let mut rng = self.streams.rng(Tag::Choice, id);
        let n = self.n;
        let mut picks: Vec<usize> = Vec::with_capacity(self.d);
        match self.cfg.sampling {
            Sampling::WithReplacement => {
                for _ in 0..self.d {
                    picks.push(rng.random_range(0..n));
                }
            }
            Sampling::WithoutReplacement => {
                let want = self.d.min(n);
                while picks.len() < want {
                    let s = rng.random_range(0..n);
                    if !picks.contains(&s) {
                        picks.push(s);
                    }
                }
            }
        }
        let best = picks.iter().map(|s| self.servers[*s].len).min().expect("d >= 1");
        let ties: Vec<usize> = picks
            .into_iter()
            .filter(|s| self.servers[*s].len == best)
            .collect();
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[rng.random_range(0..ties.len())]
        }
    }

    fn on_map(&mut self) {
        self.map_events += 1;
        let row = &self.map_rows[self.map_phase];
        let u: f64 = self.map_rng.random();
        let (to, arrival) = row.to[pick(&row.cum, u)];
        self.map_phase = to;
        if arrival {
            let id = self.next_id;
            self.next_id += 1;
            self.arrivals += 1;
            if self.t >= self.cfg.warmup {
                self.window_arrivals += 1;
            }
            let s = self.route(id);
            self.join(s, id, None);
        }
        self.schedule_map();
    }

    fn on_service(&mut self, s: usize) {
        let mut cur = self.servers[s].busy.take().expect("busy server has an event");
        let row = &self.ph_rows[cur.phase];
        let u: f64 = cur.rng.random();
        match row.to[pick(&row.cum, u)] {
            Some(next) => {
                let dt = exp_sample(&mut cur.rng, self.ph_rows[next].rate);
                cur.phase = next;
                self.servers[s].busy = Some(cur);
                self.heap.push(Event {
                    time: self.t + dt,
                    kind: Kind::Server(s),
                });
            }
            None => {
                let len = self.servers[s].len;
                self.touch_level(len);
                self.count_ge[len] -= 1;
                self.servers[s].len = len - 1;
                self.total -= 1;
                self.departures += 1;
                if let Some(next_id) = self.servers[s].waiting.pop_front() {
                    self.start_service(s, next_id, None);
                }
            }
        }
    }

    fn snapshot(&self, t: f64) -> Sample {
        let model = &self.cfg.model;
        let (m_a, m_b) = (model.m_a(), model.m_b());
        let kmax = self.count_ge.iter().rposition(|c| *c > 0).unwrap_or(0);
        let mut levels = vec![vec![0.0; m_a * m_b]; kmax];
        let inv_n = 1.0 / self.n as f64;
        for srv in &self.servers {
            if let Some(b) = &srv.busy {
                for lvl in levels.iter_mut().take(srv.len) {
                    lvl[self.map_phase * m_b + b.phase] += inv_n;
                }
            }
        }
        let mut u0 = vec![0.0; m_a];
        u0[self.map_phase] = 1.0;
        let tails = (1..=kmax).map(|k| self.count_ge[k] as f64 * inv_n).collect();
        Sample {
            t,
            total: self.total,
            map_phase: self.map_phase,
            tails,
            fraction: FractionVector {
                m_a,
                m_b,
                u0,
                levels,
            },
        }
    }

    /// Internal consistency of counters against the server array.
    pub fn audit(&self) -> Result<()> {
        let mut counts = vec![0u64; self.count_ge.len()];
        let mut total = 0u64;
        for srv in &self.servers {
            total += srv.len as u64;
            if srv.len >= counts.len() {
                return Err(Error::Numerical("server length beyond counters".into()));
            }
            for c in counts.iter_mut().take(srv.len + 1) {
                *c += 1;
            }
            if (srv.len > 0) != srv.busy.is_some() || srv.waiting.len() + 1 != srv.len.max(1) {
                return Err(Error::Numerical("server state inconsistent".into()));
            }
        }
        if counts != self.count_ge || total != self.total {
            return Err(Error::Numerical("tail counters out of sync".into()));
        }
        if self.count_ge.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Numerical("tail counts increase in k".into()));
        }
        if self.departures + self.total != self.arrivals + self.initial_customers {
            return Err(Error::Numerical("customer conservation violated".into()));
        }
        Ok(())
    }

    pub fn run(mut self, rep: usize) -> Result<ReplicationResult> {
        let cfg = self.cfg;
        self.seed_state(cfg.initial.as_ref());
        self.schedule_map();
        let mut samples = Vec::with_capacity(cfg.sample_times.len());
        let mut next_sample = 0;
        loop {
            let next_time = self.heap.peek().map_or(f64::INFINITY, |e| e.time);
            while next_sample < cfg.sample_times.len()
                && cfg.sample_times[next_sample] < next_time
                && cfg.sample_times[next_sample] <= cfg.horizon
            {
                let ts = cfg.sample_times[next_sample];
                samples.push(self.snapshot(ts));
                next_sample += 1;
            }
            if next_time > cfg.horizon {
                break;
            }
            let ev = self.heap.pop().expect("peeked");
            self.advance(ev.time);
            match ev.kind {
                Kind::Map => self.on_map(),
                Kind::Server(s) => self.on_service(s),
            }
            if cfg.audit {
                self.audit()?;
            }
        }
        self.advance(cfg.horizon);
        for k in 0..self.count_ge.len() {
            self.touch_level(k);
        }
        let window = cfg.horizon - cfg.warmup;
        let nf = self.n as f64;
        let tails = self.area[1..].iter().map(|a| a / (nf * window)).collect();
        let u0 = self.phase_time.iter().map(|p| p / window).collect();
        Ok(ReplicationResult {
            replication: rep,
            key: self.streams.key(),
            samples,
            time_avg: TimeAverages {
                tails,
                u0,
                total: self.total_area / window,
                arrival_rate: self.window_arrivals as f64 / window,
            },
            counts: EventCounts {
                arrivals: self.arrivals,
                departures: self.departures,
                map_events: self.map_events,
                initial_customers: self.initial_customers,
                in_system: self.total,
            },
        })
    }
}
