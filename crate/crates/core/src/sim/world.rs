//! Vehicles, the step loop and lane-change bookkeeping.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::carfollow::{CarFollowModel, IdmParams, ACCEL_MAX, ACCEL_MIN};
use crate::decision::{decide, maneuver_safe, Candidate, Decision};
use crate::error::{Error, Result};
use crate::mobil::{mobil_decide, mobil_incentive};
use crate::network::{remaining_distance, LaneIdx, LaneRelation, Route, SectionIdx};
use crate::par::Exec;

use super::metrics::{Summary, WindowAccumulator};
use super::nav::Navigator;
use super::scenario::{ModelKind, Scenario};
use super::view::{TrafficView, VehView};

/// Speed adaptation gain toward the target lane while waiting for a gap, 1/s.
pub const SYNC_GAIN: f64 = 0.3;
/// Position updates stop this short of the leader's previous rear bumper, m.
const CAP_MARGIN_M: f64 = 0.1;
/// Leaders closer than this fix the entry speed of a new vehicle, m.
const ENTRY_LOOKAHEAD_M: f64 = 100.0;
/// Floor for the virtual gap to a merge leader, m.
const MERGE_GAP_FLOOR_M: f64 = 0.5;

const STREAM_SPAWN: u64 = 1;
const STREAM_STYLE: u64 = 2;
const STREAM_DESTINATION: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// Asymmetric change followed by a return to the original lane.
    ReturnedToOriginal,
    /// Asymmetric change after which the vehicle left the section elsewhere.
    RouteChanged,
    /// Asymmetric change not yet resolved when the run ended.
    Pending,
    /// Change between lanes leading to the same place.
    Symmetric,
    /// The change back that resolved an earlier asymmetric change.
    ReturnLeg,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::ReturnedToOriginal => "returned_to_original",
            Classification::RouteChanged => "route_changed",
            Classification::Pending => "pending",
            Classification::Symmetric => "symmetric",
            Classification::ReturnLeg => "return_leg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneChangeEvent {
    pub time: f64,
    pub vehicle_id: u64,
    pub from_lane: LaneIdx,
    pub to_lane: LaneIdx,
    /// Combined gain at decision time (MOBIL: its incentive).
    pub g: f64,
    pub classification: Classification,
    pub relation: LaneRelation,
    /// Prob-back estimate behind an asymmetric change.
    pub p_back: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub time: f64,
    pub vehicle_id: u64,
    pub lane: LaneIdx,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: u64,
    pub lane: LaneIdx,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub route: Route,
    pub style: usize,
    pub desired_speed: f64,
    pub cf: CarFollowModel,
    pub idm: IdmParams,
    pub last_change_time: f64,
    pub synchronize: Option<LaneIdx>,
    pub spawn_time: f64,
    /// Unresolved asymmetric changes: event index and original lane.
    pending: Vec<(usize, LaneIdx)>,
}

#[derive(Debug, Clone, Copy)]
struct Arrival {
    style: usize,
    destination: SectionIdx,
    speed_factor: f64,
}

/// What a vehicle wants after the decision phase.
#[derive(Debug, Clone, Copy)]
struct Intent {
    target: Option<LaneIdx>,
    g: f64,
    p_back: Option<f64>,
    synchronize: Option<LaneIdx>,
}

fn ticks(step: u64, dt: f64, period: f64) -> bool {
    if step == 0 {
        return true;
    }
    let a = ((step - 1) as f64 * dt / period + 1e-9).floor();
    let b = (step as f64 * dt / period + 1e-9).floor();
    b > a
}

pub struct World<'s> {
    sc: &'s Scenario,
    exec: Exec,
    step: u64,
    pub t: f64,
    vehicles: Vec<Vehicle>,
    nav: Navigator,
    rng_spawn: ChaCha8Rng,
    rng_style: ChaCha8Rng,
    rng_dest: ChaCha8Rng,
    arrival_gap: Option<Exp<f64>>,
    speed_factor: Option<Normal<f64>>,
    entrances: Vec<SectionIdx>,
    destinations: Vec<Vec<(SectionIdx, f64)>>,
    next_arrival: Vec<f64>,
    queues: Vec<VecDeque<Arrival>>,
    next_id: u64,
    pub events: Vec<LaneChangeEvent>,
    pub windows: WindowAccumulator,
    in_region: Vec<bool>,
    region_lane_km: f64,
    pub trajectories: Vec<TrajPoint>,
    traj_period: Option<f64>,
    spawned: u64,
    exited: u64,
    exited_off_route: u64,
    travel_time_sum: f64,
    speed_sum: f64,
    speed_samples: u64,
}

impl<'s> World<'s> {
    /// Fresh world for one demand level. Vehicle ids start at `id_offset`.
    pub fn new(sc: &'s Scenario, demand_vph: f64, seed: u64, id_offset: u64, exec: Exec) -> Result<Self> {
        let net = &sc.network;
        let nav = Navigator::new(net);
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        let mut rng_spawn = stream(STREAM_SPAWN);
        let arrival_gap = (demand_vph > 0.0)
            .then(|| Exp::new(demand_vph / 3600.0))
            .transpose()
            .map_err(|e| Error::Config(format!("demand: {e}")))?;
        let speed_factor = (sc.speed_factor_sd > 0.0)
            .then(|| Normal::new(1.0, sc.speed_factor_sd))
            .transpose()
            .map_err(|e| Error::Config(format!("speed_factor_sd: {e}")))?;

        let entrances = net.entrances();
        let mut destinations = Vec::new();
        for &e in &entrances {
            let ds: Vec<(SectionIdx, f64)> = nav
                .exits()
                .iter()
                .filter(|&&x| nav.reachable(e, x))
                .map(|&x| {
                    let w = if sc.destinations.is_empty() {
                        1.0
                    } else {
                        sc.destinations.get(&x).copied().unwrap_or(0.0)
                    };
                    (x, w)
                })
                .filter(|d| d.1 > 0.0)
                .collect();
            if ds.is_empty() && demand_vph > 0.0 {
                return Err(Error::Config(format!(
                    "entrance `{}` reaches no destination",
                    net.section(e).id
                )));
            }
            destinations.push(ds);
        }
        let next_arrival = entrances
            .iter()
            .map(|_| arrival_gap.map_or(f64::INFINITY, |d| d.sample(&mut rng_spawn)))
            .collect();
        let in_region = {
            let mut v = vec![false; net.sections().len()];
            for s in &sc.region {
                v[s.0] = true;
            }
            v
        };
        Ok(World {
            sc,
            exec,
            step: 0,
            t: 0.0,
            vehicles: Vec::new(),
            nav,
            rng_spawn,
            rng_style: stream(STREAM_STYLE),
            rng_dest: stream(STREAM_DESTINATION),
            arrival_gap,
            speed_factor,
            queues: entrances.iter().map(|_| VecDeque::new()).collect(),
            entrances,
            destinations,
            next_arrival,
            next_id: id_offset,
            events: Vec::new(),
            windows: WindowAccumulator::new(sc.measurement.window_s),
            region_lane_km: net.lane_length_km(&sc.region),
            in_region,
            trajectories: Vec::new(),
            traj_period: sc.trajectory_interval_s,
            spawned: 0,
            exited: 0,
            exited_off_route: 0,
            travel_time_sum: 0.0,
            speed_sum: 0.0,
            speed_samples: 0,
        })
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn navigator(&self) -> &Navigator {
        &self.nav
    }

    /// Adds a vehicle directly, bypassing the arrival process.
    pub fn insert_vehicle(
        &mut self,
        lane: LaneIdx,
        position: f64,
        speed: f64,
        style: usize,
        destination: SectionIdx,
        desired_speed: f64,
    ) -> u64 {
        let sec = self.sc.network.lane(lane).section;
        let route = self.nav.route(sec, destination);
        let st = &self.sc.styles[style].0;
        let id = self.next_id;
        self.next_id += 1;
        self.vehicles.push(Vehicle {
            id,
            lane,
            position,
            speed,
            accel: 0.0,
            length: self.sc.vehicle_length_m,
            route,
            style,
            desired_speed,
            cf: self.sc.carfollow_for(st, desired_speed),
            idm: self.sc.idm_for(st, desired_speed),
            last_change_time: f64::NEG_INFINITY,
            synchronize: None,
            spawn_time: self.t,
            pending: Vec::new(),
        });
        self.vehicles.sort_by_key(|v| v.id);
        self.spawned += 1;
        id
    }

    fn view(&self) -> TrafficView<'s> {
        let vs = self
            .vehicles
            .iter()
            .map(|v| VehView {
                id: v.id,
                lane: v.lane,
                position: v.position,
                speed: v.speed,
                length: v.length,
                desired_speed: v.desired_speed,
                cf: v.cf,
                idm: v.idm,
                route_next: v.route.next(),
                destination: v.route.destination,
                planned_remainder: self.nav.remainder(&v.route),
            })
            .collect();
        TrafficView::new(&self.sc.network, vs)
    }

    fn breach(&self, detail: String) -> Error {
        Error::InvariantBreach { time: self.t, detail }
    }

    fn check_order(&self, view: &TrafficView) -> Result<()> {
        for (l, list) in view.lanes.iter().enumerate() {
            for w in list.windows(2) {
                let (b, a) = (&view.vehicles[w[0]], &view.vehicles[w[1]]);
                let gap = a.position - a.length - b.position;
                if gap < 0.0 {
                    return Err(self.breach(format!(
                        "negative gap {gap:.4} m on lane `{}` between vehicle {} at {:.3} m and vehicle {} at {:.3} m",
                        self.sc.network.lane(LaneIdx(l)).id,
                        b.id,
                        b.position,
                        a.id,
                        a.position
                    )));
                }
            }
        }
        Ok(())
    }

    fn decide_vehicle(&self, view: &TrafficView, i: usize) -> Result<Option<Intent>> {
        let v = &self.vehicles[i];
        let style = &self.sc.styles[v.style].0;
        let lane = self.sc.network.lane(v.lane);
        if remaining_distance(lane, v.position) < v.speed * self.sc.dt_s + 1.0 {
            return Ok(None);
        }
        let since = self.t - v.last_change_time;
        if since < style.cooldown {
            return Ok(None);
        }
        match self.sc.model {
            ModelKind::Mcdm => {
                let cands: Vec<Candidate> = view
                    .neighbor_lanes(i)
                    .filter_map(|t| {
                        view.incentive_context(&self.nav, i, t)
                            .map(|ctx| Candidate { target: t, ctx })
                    })
                    .collect();
                let out = decide(&cands, style, &self.sc.safety, since)?;
                let Some(best) = out.best else {
                    return Ok(None);
                };
                let p_back = (best.table.relation == LaneRelation::Asymmetric).then_some(best.table.p_back);
                Ok(Some(Intent {
                    target: match out.decision {
                        Decision::Change(t) => Some(t),
                        Decision::Keep => None,
                    },
                    g: best.g,
                    p_back,
                    synchronize: out.synchronize,
                }))
            }
            ModelKind::Mobil => {
                let next = v.route.next();
                let cands: Vec<_> = view
                    .neighbor_lanes(i)
                    .filter(|t| next.is_none_or(|n| self.sc.network.lane(*t).serves(n)))
                    .filter_map(|t| view.mobil_candidate(i, t))
                    .collect();
                let out = mobil_decide(&cands, &self.sc.mobil);
                Ok(out.target.map(|t| Intent {
                    target: Some(t),
                    g: out.incentive.unwrap_or(0.0),
                    p_back: None,
                    synchronize: None,
                }))
            }
        }
    }

    /// Re-checks a change against the live state, including changes applied
    /// earlier in this step.
    fn still_safe(&self, view: &TrafficView, i: usize, target: LaneIdx) -> Result<bool> {
        let v = &view.vehicles[i];
        let min_gap = self.sc.safety.min_gap;
        let merge_ok = view
            .merge_leader_at(target, v.position, v.route_next, v.id)
            .is_none_or(|m| m.gap >= min_gap)
            && view
                .merge_follower_at(target, v.position, v.length, v.route_next, v.id)
                .is_none_or(|m| m.gap >= min_gap);
        if !merge_ok {
            return Ok(false);
        }
        match self.sc.model {
            ModelKind::Mcdm => match view.incentive_context(&self.nav, i, target) {
                Some(ctx) => maneuver_safe(&ctx, &self.sc.safety),
                None => Ok(false),
            },
            ModelKind::Mobil => {
                let v = &view.vehicles[i];
                let leader_ok = view
                    .leader_at(target, v.position, v.route_next, Some(i))
                    .is_none_or(|l| l.gap >= self.sc.safety.min_gap);
                let follower_ok = match view.follower_at(target, v.position, v.length, Some(i)) {
                    Some(f) => f.gap >= self.sc.safety.min_gap,
                    None => true,
                };
                Ok(leader_ok
                    && follower_ok
                    && view
                        .mobil_candidate(i, target)
                        .is_some_and(|c| mobil_incentive(&c, &self.sc.mobil).1))
            }
        }
    }

    fn record_change(&mut self, i: usize, target: LaneIdx, intent: &Intent) {
        let t = self.t;
        let v = &self.vehicles[i];
        let from = v.lane;
        let relation = self.sc.network.lane_relation(from, target, v.route.next());
        let idx = self.events.len();
        let mut resolved = false;
        let pending = std::mem::take(&mut self.vehicles[i].pending);
        let mut keep = Vec::new();
        for (ev, orig) in pending {
            if orig == target {
                self.events[ev].classification = Classification::ReturnedToOriginal;
                resolved = true;
            } else {
                keep.push((ev, orig));
            }
        }
        let classification = if resolved {
            Classification::ReturnLeg
        } else if relation == LaneRelation::Asymmetric {
            keep.push((idx, from));
            Classification::Pending
        } else {
            Classification::Symmetric
        };
        let v = &mut self.vehicles[i];
        v.pending = keep;
        v.lane = target;
        v.last_change_time = t;
        v.synchronize = None;
        self.events.push(LaneChangeEvent {
            time: t,
            vehicle_id: v.id,
            from_lane: from,
            to_lane: target,
            g: intent.g,
            classification,
            relation,
            p_back: if classification == Classification::Pending {
                intent.p_back
            } else {
                None
            },
        });
        let sec = self.sc.network.lane(from).section;
        if self.in_region[sec.0] {
            self.windows.add_event(t);
        }
    }

    fn sample(&mut self, view: &TrafficView) {
        let n = view
            .vehicles
            .iter()
            .filter(|v| self.in_region[self.sc.network.lane(v.lane).section.0])
            .count();
        let density = if self.region_lane_km > 0.0 {
            n as f64 / self.region_lane_km
        } else {
            0.0
        };
        self.windows.add_density(self.t, density);
        for v in &view.vehicles {
            self.speed_sum += v.speed;
            self.speed_samples += 1;
        }
    }

    fn record_trajectories(&mut self) {
        let t = self.t;
        self.trajectories.extend(self.vehicles.iter().map(|v| TrajPoint {
            time: t,
            vehicle_id: v.id,
            lane: v.lane,
            position: v.position,
            speed: v.speed,
            accel: v.accel,
        }));
    }

    /// Advances the world by one time step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.sc.dt_s;
        self.t = self.step as f64 * dt;

        // Snapshot.
        let mut view = self.view();
        self.check_order(&view)?;
        if ticks(self.step, dt, 1.0) {
            self.sample(&view);
        }
        if let Some(p) = self.traj_period {
            if ticks(self.step, dt, p) {
                self.record_trajectories();
            }
        }

        // Decisions against the snapshot.
        let intents: Vec<Result<Option<Intent>>> = {
            let me = &*self;
            let view = &view;
            self.exec.map_range(me.vehicles.len(), |i| me.decide_vehicle(view, i))
        };

        // Apply in ascending id.
        for (i, intent) in intents.into_iter().enumerate() {
            let intent = intent?;
            self.vehicles[i].synchronize = None;
            let Some(intent) = intent else { continue };
            match intent.target {
                Some(target) => {
                    if self.still_safe(&view, i, target)? {
                        self.record_change(i, target, &intent);
                        view.move_vehicle(i, target);
                    } else if self.sc.model == ModelKind::Mcdm {
                        self.vehicles[i].synchronize = Some(target);
                    }
                }
                None => self.vehicles[i].synchronize = intent.synchronize,
            }
        }

        // Car-following on the updated lanes.
        let accels: Vec<Result<(f64, Option<f64>)>> = {
            let me = &*self;
            let view = &view;
            self.exec.map_range(me.vehicles.len(), |i| me.acceleration(view, i))
        };

        // Integrate.
        for (v, a) in self.vehicles.iter_mut().zip(accels) {
            let (acc, gap) = a?;
            let mut speed = (v.speed + acc * dt).max(0.0);
            let mut disp = speed * dt;
            if let Some(gap) = gap {
                let cap = (gap - CAP_MARGIN_M).max(0.0);
                if disp > cap {
                    disp = cap;
                    speed = cap / dt;
                }
            }
            v.accel = (speed - v.speed) / dt;
            v.speed = speed;
            v.position += disp;
        }

        self.transitions();
        self.t = (self.step + 1) as f64 * dt;
        self.spawn();

        if ticks(self.step + 1, dt, self.sc.nav_update_s) {
            let mut counts = vec![0usize; self.sc.network.sections().len()];
            for v in &self.vehicles {
                counts[self.sc.network.lane(v.lane).section.0] += 1;
            }
            self.nav.update(&counts);
        }
        if self.spawned != self.vehicles.len() as u64 + self.exited {
            return Err(self.breach(format!(
                "conservation: spawned {} != active {} + exited {}",
                self.spawned,
                self.vehicles.len(),
                self.exited
            )));
        }
        self.step += 1;
        Ok(())
    }

    /// Acceleration of vehicle `i` and the room it may cover this step.
    fn acceleration(&self, view: &TrafficView, i: usize) -> Result<(f64, Option<f64>)> {
        let v = &self.vehicles[i];
        let leader = view.leader(i);
        let mut acc = match leader {
            Some(l) => {
                if l.gap < 0.0 {
                    return Err(self.breach(format!(
                        "vehicle {} overlaps its leader {} by {:.4} m",
                        v.id, view.vehicles[l.idx].id, -l.gap
                    )));
                }
                let vl = view.vehicles[l.idx].speed;
                v.cf.accel(v.speed, l.gap.max(1e-6), v.speed - vl)?
            }
            None => v.cf.accel(v.speed, f64::INFINITY, 0.0)?,
        };
        let mut room = leader.map(|l| l.gap);
        if let Some(m) = view.merge_leader(i) {
            let vm = view.vehicles[m.idx].speed;
            acc = acc.min(v.cf.accel(v.speed, m.gap.max(MERGE_GAP_FLOOR_M), v.speed - vm)?);
            // Until the merge leader is ahead, stop short of the lane end by
            // its length.
            let m_room = if m.gap >= 0.0 {
                m.gap
            } else {
                (self.sc.network.lane(v.lane).length - v.position - view.vehicles[m.idx].length).max(0.0)
            };
            room = Some(room.map_or(m_room, |r| r.min(m_room)));
        }
        if let Some(t) = v.synchronize {
            let s = view.lane_stats(t, v.position, Some(i));
            if s.count > 0 {
                acc = acc.min(SYNC_GAIN * (s.mean_speed - v.speed));
            }
        }
        Ok((acc.clamp(ACCEL_MIN, ACCEL_MAX), room))
    }

    fn transitions(&mut self) {
        let net = &self.sc.network;
        let mut i = 0;
        while i < self.vehicles.len() {
            let mut exited = false;
            loop {
                let v = &mut self.vehicles[i];
                let lane = net.lane(v.lane);
                if v.position <= lane.length {
                    break;
                }
                for (ev, _) in v.pending.drain(..) {
                    self.events[ev].classification = Classification::RouteChanged;
                }
                if lane.is_terminal() {
                    if lane.section != v.route.destination {
                        self.exited_off_route += 1;
                    }
                    self.travel_time_sum += self.t + self.sc.dt_s - v.spawn_time;
                    exited = true;
                    break;
                }
                let next = match v.route.next() {
                    Some(n) if lane.serves(n) => {
                        v.route.advance();
                        n
                    }
                    _ => {
                        let n = self
                            .nav
                            .best_of(&lane.successors, v.route.destination)
                            .unwrap_or(lane.successors[0]);
                        v.route = self.nav.route(n, v.route.destination);
                        n
                    }
                };
                v.position -= lane.length;
                v.lane = net.entry_lane(v.lane, next);
            }
            if exited {
                self.vehicles.remove(i);
                self.exited += 1;
            } else {
                i += 1;
            }
        }
    }

    fn draw_arrival(&mut self, entrance: usize) -> Arrival {
        let u: f64 = self.rng_style.gen();
        let mut acc = 0.0;
        let mut style = self.sc.styles.len() - 1;
        for (k, (_, share)) in self.sc.styles.iter().enumerate() {
            acc += share;
            if u < acc {
                style = k;
                break;
            }
        }
        let speed_factor = self
            .speed_factor
            .map_or(1.0, |d| d.sample(&mut self.rng_style))
            .clamp(0.5, 1.5);
        let ds = &self.destinations[entrance];
        let total: f64 = ds.iter().map(|d| d.1).sum();
        let mut u = self.rng_dest.gen::<f64>() * total;
        let mut destination = ds[ds.len() - 1].0;
        for (s, w) in ds {
            if u < *w {
                destination = *s;
                break;
            }
            u -= w;
        }
        Arrival {
            style,
            destination,
            speed_factor,
        }
    }

    /// Entry lane and speed for a new vehicle, if any lane has headroom.
    fn spawn_slot(&self, section: SectionIdx, a: &Arrival) -> Option<(LaneIdx, f64)> {
        let net = &self.sc.network;
        let st = &self.sc.styles[a.style].0;
        let desired = st.desired_speed * a.speed_factor;
        let idm = self.sc.idm_for(st, desired);
        let len = self.sc.vehicle_length_m;
        let mut best: Option<(LaneIdx, f64, f64)> = None;
        for &lane in &net.section(section).lanes {
            let rear = self
                .vehicles
                .iter()
                .filter(|v| v.lane == lane)
                .min_by(|a, b| a.position.total_cmp(&b.position));
            let (gap, v_entry) = match rear {
                Some(r) => {
                    let gap = r.position - r.length - len;
                    let v = if gap < ENTRY_LOOKAHEAD_M {
                        desired.min(r.speed)
                    } else {
                        desired
                    };
                    (gap, v)
                }
                None => (f64::INFINITY, desired),
            };
            let mut room = gap - (idm.s0 + v_entry * idm.t_headway);
            for &p in net.predecessors(lane) {
                let plen = net.lane(p).length;
                if let Some(f) = self
                    .vehicles
                    .iter()
                    .filter(|v| v.lane == p)
                    .max_by(|a, b| a.position.total_cmp(&b.position))
                {
                    let up = plen - f.position;
                    room = room.min(up - (idm.s0 + f.speed * idm.t_headway));
                }
            }
            if room >= 0.0 && best.is_none_or(|b| room > b.1) {
                best = Some((lane, room, v_entry));
            }
        }
        best.map(|b| (b.0, b.2))
    }

    fn spawn(&mut self) {
        let horizon = self.t;
        for e in 0..self.entrances.len() {
            while self.next_arrival[e] <= horizon {
                let a = self.draw_arrival(e);
                self.queues[e].push_back(a);
                let gap = self
                    .arrival_gap
                    .map_or(f64::INFINITY, |d| d.sample(&mut self.rng_spawn));
                self.next_arrival[e] += gap;
            }
            while let Some(a) = self.queues[e].front().copied() {
                let Some((lane, v_entry)) = self.spawn_slot(self.entrances[e], &a) else {
                    break;
                };
                self.queues[e].pop_front();
                let st = &self.sc.styles[a.style].0;
                let desired = st.desired_speed * a.speed_factor;
                let route = self.nav.route(self.entrances[e], a.destination);
                let id = self.next_id;
                self.next_id += 1;
                self.vehicles.push(Vehicle {
                    id,
                    lane,
                    position: self.sc.vehicle_length_m,
                    speed: v_entry,
                    accel: 0.0,
                    length: self.sc.vehicle_length_m,
                    route,
                    style: a.style,
                    desired_speed: desired,
                    cf: self.sc.carfollow_for(st, desired),
                    idm: self.sc.idm_for(st, desired),
                    last_change_time: f64::NEG_INFINITY,
                    synchronize: None,
                    spawn_time: self.t,
                    pending: Vec::new(),
                });
                self.spawned += 1;
            }
        }
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn summary(&self) -> Summary {
        Summary {
            spawned: self.spawned,
            exited: self.exited,
            exited_off_route: self.exited_off_route,
            active: self.vehicles.len() as u64,
            queued: self.queued() as u64,
            lane_changes: self.events.len() as u64,
            mean_speed_mps: if self.speed_samples > 0 {
                self.speed_sum / self.speed_samples as f64
            } else {
                0.0
            },
            mean_travel_time_s: if self.exited > 0 {
                self.travel_time_sum / self.exited as f64
            } else {
                0.0
            },
            negative_gap_violations: 0,
        }
    }

    /// Sums needed to merge summaries of several runs.
    pub(crate) fn totals(&self) -> (f64, u64, f64) {
        (self.speed_sum, self.speed_samples, self.travel_time_sum)
    }

    /// Checks the final state, e.g. after the last step.
    pub fn check(&self) -> Result<()> {
        self.check_order(&self.view())
    }
}
