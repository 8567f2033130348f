//! The simulated world: ego, background traffic, events and observations.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bev::{rasterize_drivable, rasterize_polyline, BevFrame, ContextMaps};
use crate::config::{ObsConfig, SimConfig, DT};
use crate::control::{bicycle_step, lookahead, pure_pursuit, rate_limit, speed_control, EgoCommand, LaneCommand};
use crate::error::{Result, SimError};
use crate::geom::{dist, dot, sub, unit, wrap_angle, Obb, Point};
use crate::idm::{idm_accel, Leader};
use crate::observe::{EgoHistory, Feature, Observation, VehicleHistory, HISTORY_LEN, HISTORY_STRIDE};
use crate::scenario::Scenario;

/// Raw steps kept per vehicle, enough for the oldest history sample.
const TRACK_LEN: usize = (HISTORY_LEN - 1) * HISTORY_STRIDE + 1;
/// Smallest gap between scheduled spawns of one flow (s).
pub const MIN_HEADWAY_S: f64 = 1.0;
/// A flow's entry point is blocked while any vehicle is this close (m).
const SPAWN_CLEARANCE: f64 = 10.0;
/// Ego id; background vehicles count up from 1.
pub const EGO_ID: u32 = 0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    pub steering: f64,
    pub yaw_rate: f64,
    pub jerk: f64,
    /// Yaw acceleration (rad/s²).
    pub yaw_acc: f64,
    pub length: f64,
    pub width: f64,
    pub lane: Option<usize>,
    /// Arc length along the current lane.
    pub offset: f64,
}

impl VehicleState {
    pub fn pos(&self) -> Point {
        [self.x, self.y]
    }

    pub fn obb(&self) -> Obb {
        Obb::new(self.pos(), self.heading, self.length, self.width)
    }
}

/// One scheduled background vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpawnEntry {
    pub flow: usize,
    /// Scheduled entry time (s); negative times belong to the preroll.
    pub time: f64,
    pub desired_speed: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub crash: bool,
    pub offroad: bool,
    pub offroute: bool,
    pub wrong_way: bool,
    pub reached_goal: bool,
    pub stagnant: bool,
    /// Route arc-length advance this step (m).
    pub progress_delta: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observation: Observation,
    pub events: StepEvents,
    /// The lane command actually executed after feasibility coercion.
    pub command: EgoCommand,
    /// Crash, offroad or goal.
    pub terminated: bool,
    /// Step limit reached without termination.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
struct Background {
    id: u32,
    /// `None` for a parked obstacle.
    flow: Option<usize>,
    s: f64,
    v0: f64,
    state: VehicleState,
    track: VecDeque<VehicleState>,
}

#[derive(Clone, Copy, Debug)]
struct Nav {
    active: usize,
    lane_s: f64,
    changing: bool,
}

/// One simulator instance. Single-threaded; clone-free; owns its RNG.
pub struct Env {
    scenario: Arc<Scenario>,
    cfg: SimConfig,
    obs_cfg: ObsConfig,
    seed: u64,
    step: usize,
    done: bool,
    ego: VehicleState,
    ego_track: VecDeque<VehicleState>,
    nav: Nav,
    route_s: f64,
    background: Vec<Background>,
    schedule: Vec<SpawnEntry>,
    cursor: usize,
    waiting: Vec<VecDeque<SpawnEntry>>,
    next_id: u32,
    positions: VecDeque<Point>,
    /// Evaluations left before stagnation may fire again.
    stagnation_cooldown: usize,
}

/// Draws each flow's spawn times and desired speeds over the preroll plus the
/// episode horizon, flow by flow from one ChaCha8 stream seeded with `seed`.
pub fn draw_schedule(scenario: &Scenario, seed: u64) -> Vec<SpawnEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = scenario.max_steps as f64 * DT;
    let mut out = Vec::new();
    for (k, f) in scenario.flows.iter().enumerate() {
        let mut t = -scenario.traffic_preroll_s;
        loop {
            let u: f64 = rng.random();
            t += (f.headway_mean_s + f.headway_jitter_s * (2.0 * u - 1.0)).max(MIN_HEADWAY_S);
            if t > horizon {
                break;
            }
            let w: f64 = rng.random();
            out.push(SpawnEntry {
                flow: k,
                time: t,
                desired_speed: f.speed_range[0] + (f.speed_range[1] - f.speed_range[0]) * w,
            });
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

impl Env {
    pub fn new(scenario: Arc<Scenario>, cfg: SimConfig, obs_cfg: ObsConfig) -> Result<Self> {
        cfg.validate()?;
        obs_cfg.validate()?;
        let flows = scenario.flows.len();
        let mut env = Env {
            scenario,
            cfg,
            obs_cfg,
            seed: 0,
            step: 0,
            done: true,
            ego: VehicleState::default(),
            ego_track: VecDeque::with_capacity(TRACK_LEN),
            nav: Nav {
                active: 0,
                lane_s: 0.0,
                changing: false,
            },
            route_s: 0.0,
            background: Vec::new(),
            schedule: Vec::new(),
            cursor: 0,
            waiting: vec![VecDeque::new(); flows],
            next_id: 1,
            positions: VecDeque::new(),
            stagnation_cooldown: 0,
        };
        env.reset_state(0);
        Ok(env)
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn obs_config(&self) -> &ObsConfig {
        &self.obs_cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn schedule(&self) -> &[SpawnEntry] {
        &self.schedule
    }

    /// Background vehicles as `(id, state)`, in id order.
    pub fn vehicles(&self) -> impl Iterator<Item = (u32, &VehicleState)> {
        self.background.iter().map(|b| (b.id, &b.state))
    }

    /// Vehicles ever spawned, excluding obstacles added by hand.
    pub fn spawned_count(&self) -> usize {
        (self.next_id - 1) as usize
    }

    /// Fraction of the spawn-to-goal route covered, in `[0, 1]`.
    pub fn progress_fraction(&self) -> f64 {
        ((self.route_s - self.scenario.spawn_s) / self.scenario.route_length()).clamp(0.0, 1.0)
    }

    pub fn active_lane(&self) -> usize {
        self.nav.active
    }

    pub fn lane_change_in_progress(&self) -> bool {
        self.nav.changing
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        self.reset_state(seed);
        self.observe()
    }

    fn reset_state(&mut self, seed: u64) {
        let sc = Arc::clone(&self.scenario);
        self.seed = seed;
        self.step = 0;
        self.done = false;
        let lane = &sc.graph.lanes[sc.spawn_lane];
        let p = lane.line.point_at(sc.spawn_offset);
        self.ego = VehicleState {
            x: p[0],
            y: p[1],
            heading: lane.line.heading_at(sc.spawn_offset),
            speed: sc.spawn_speed,
            length: self.cfg.vehicle_length,
            width: self.cfg.vehicle_width,
            lane: Some(sc.spawn_lane),
            offset: sc.spawn_offset,
            ..Default::default()
        };
        self.ego_track.clear();
        self.ego_track.push_back(self.ego);
        self.nav = Nav {
            active: sc.spawn_lane,
            lane_s: sc.spawn_offset,
            changing: false,
        };
        self.route_s = sc.spawn_s;
        self.background.clear();
        self.next_id = 1;
        for w in &mut self.waiting {
            w.clear();
        }
        self.schedule = draw_schedule(&sc, seed);
        self.cursor = 0;
        self.place_preroll();
        self.positions.clear();
        self.positions.push_back(self.ego.pos());
        self.stagnation_cooldown = 0;
    }

    /// Vehicles scheduled before `t = 0` are placed where they would be
    /// had they driven at their desired speed since their entry time.
    fn place_preroll(&mut self) {
        let sc = Arc::clone(&self.scenario);
        let min_gap = self.cfg.vehicle_length + self.cfg.idm.s0;
        let mut last_s = vec![f64::INFINITY; sc.flows.len()];
        while self.cursor < self.schedule.len() && self.schedule[self.cursor].time <= 0.0 {
            let e = self.schedule[self.cursor];
            self.cursor += 1;
            let path = &sc.flows[e.flow].path;
            let s = (e.desired_speed * -e.time).min(last_s[e.flow] - min_gap);
            if s > path.length() {
                continue;
            }
            let p = path.line.point_at(s.max(0.0));
            if s < 0.0 || dist(p, self.ego.pos()) < SPAWN_CLEARANCE + self.cfg.vehicle_length {
                self.waiting[e.flow].push_back(e);
                continue;
            }
            last_s[e.flow] = s;
            self.insert(e.flow, s, e.desired_speed);
        }
    }

    fn insert(&mut self, flow: usize, s: f64, v0: f64) {
        let path = &self.scenario.flows[flow].path;
        let p = path.line.point_at(s);
        let lane = path.lane_at(s);
        let state = VehicleState {
            x: p[0],
            y: p[1],
            heading: path.line.heading_at(s),
            speed: v0,
            length: self.cfg.vehicle_length,
            width: self.cfg.vehicle_width,
            lane: Some(lane),
            offset: s - path.lane_starts[path.lanes.iter().position(|&l| l == lane).unwrap_or(0)],
            ..Default::default()
        };
        let mut track = VecDeque::with_capacity(TRACK_LEN);
        track.push_back(state);
        self.background.push(Background {
            id: self.next_id,
            flow: Some(flow),
            s,
            v0,
            state,
            track,
        });
        self.next_id += 1;
    }

    /// Adds a parked vehicle. Returns its id.
    pub fn add_obstacle(&mut self, pos: Point, heading: f64) -> u32 {
        let id = 1_000_000 + self.background.len() as u32;
        let state = VehicleState {
            x: pos[0],
            y: pos[1],
            heading,
            length: self.cfg.vehicle_length,
            width: self.cfg.vehicle_width,
            lane: self.scenario.graph.lane_at(pos, &[]),
            ..Default::default()
        };
        let mut track = VecDeque::new();
        track.push_back(state);
        self.background.push(Background {
            id,
            flow: None,
            s: 0.0,
            v0: 0.0,
            state,
            track,
        });
        id
    }

    /// Moves the ego without simulating (test and tooling hook).
    pub fn teleport_ego(&mut self, pos: Point, heading: f64, speed: f64) {
        self.ego.x = pos[0];
        self.ego.y = pos[1];
        self.ego.heading = heading;
        self.ego.speed = speed;
        if let Some(b) = self.ego_track.back_mut() {
            *b = self.ego;
        }
    }

    /// Successor of `lane` to follow: on the route if possible, else the first.
    fn next_lane(&self, lane: usize) -> Option<usize> {
        let g = &self.scenario.graph;
        let succ = &g.lanes[lane].successors;
        succ.iter()
            .copied()
            .find(|l| self.scenario.route.lanes.contains(l))
            .or_else(|| succ.first().copied())
    }

    fn coerce(&self, cmd: EgoCommand) -> EgoCommand {
        let lane = &self.scenario.graph.lanes[self.nav.active];
        let feasible = match cmd.lane {
            LaneCommand::Keep => true,
            _ if self.nav.changing => false,
            LaneCommand::SwitchLeft => lane.left.is_some(),
            LaneCommand::SwitchRight => lane.right.is_some(),
        };
        EgoCommand {
            target_speed: if cmd.target_speed.is_nan() { 0.0 } else { cmd.target_speed.clamp(0.0, self.cfg.v_max) },
            lane: if feasible { cmd.lane } else { LaneCommand::Keep },
        }
    }

    /// Executes the command's lane part on the navigation state and returns
    /// `(acceleration, steering)` for the current ego state.
    pub fn mid_level_control(&mut self, cmd: EgoCommand) -> (f64, f64) {
        let c = self.cfg.controller;
        let g = &self.scenario.graph;
        let pos = self.ego.pos();
        let switch_to = match cmd.lane {
            LaneCommand::Keep => None,
            LaneCommand::SwitchLeft => g.lanes[self.nav.active].left,
            LaneCommand::SwitchRight => g.lanes[self.nav.active].right,
        };
        if let Some(l) = switch_to {
            self.nav.active = l;
            self.nav.changing = true;
        }
        let mut proj = g.lanes[self.nav.active]
            .line
            .project_window(pos, self.nav.lane_s - 5.0, self.nav.lane_s + 20.0);
        while proj.s >= g.lanes[self.nav.active].line.length() - 1e-9 {
            let Some(next) = self.next_lane(self.nav.active) else {
                break;
            };
            self.nav.active = next;
            proj = g.lanes[next].line.project_window(pos, 0.0, 20.0);
        }
        self.nav.lane_s = proj.s;
        if self.nav.changing && proj.lateral.abs() < c.lane_change_tolerance {
            self.nav.changing = false;
        }
        let mut lane = self.nav.active;
        let mut s = proj.s + lookahead(self.ego.speed, &c);
        while s > g.lanes[lane].line.length() {
            match self.next_lane(lane) {
                Some(n) => {
                    s -= g.lanes[lane].line.length();
                    lane = n;
                }
                None => break,
            }
        }
        let target = g.lanes[lane].line.point_at(s);
        let desired = pure_pursuit(pos, self.ego.heading, target, &c);
        let steering = rate_limit(self.ego.steering, desired, &c).clamp(-c.steer_limit, c.steer_limit);
        (speed_control(self.ego.speed, cmd.target_speed, &c), steering)
    }

    fn leader_for(&self, i: usize) -> Option<Leader> {
        let me = &self.background[i];
        let flow = me.flow?;
        let path = &self.scenario.flows[flow].path.line;
        let idm = &self.cfg.idm;
        let reach = idm.look_ahead + 2.0 * self.cfg.vehicle_length;
        let mut best: Option<Leader> = None;
        let others = self
            .background
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, b)| &b.state)
            .chain(std::iter::once(&self.ego));
        for o in others {
            if dist(o.pos(), me.state.pos()) > reach {
                continue;
            }
            let pr = path.project_window(o.pos(), me.s, me.s + idm.look_ahead);
            if pr.s <= me.s || pr.distance > idm.path_half_width {
                continue;
            }
            let gap = pr.s - me.s - (me.state.length + o.length) / 2.0;
            let speed = (o.speed * (o.heading - path.heading_at(pr.s)).cos()).max(0.0);
            if best.is_none_or(|b| gap < b.gap) {
                best = Some(Leader { gap, speed });
            }
        }
        best
    }

    fn advance_background(&mut self) {
        let accels: Vec<f64> = (0..self.background.len())
            .map(|i| {
                let b = &self.background[i];
                if b.flow.is_none() {
                    0.0
                } else {
                    idm_accel(b.state.speed, b.v0, self.leader_for(i), &self.cfg.idm)
                }
            })
            .collect();
        let sc = Arc::clone(&self.scenario);
        for (b, a) in self.background.iter_mut().zip(accels) {
            let Some(flow) = b.flow else {
                continue;
            };
            let path = &sc.flows[flow].path;
            let v = (b.state.speed + a * DT).clamp(0.0, b.v0);
            b.s += v * DT;
            let p = path.line.point_at(b.s);
            let heading = path.line.heading_at(b.s);
            let lane = path.lane_at(b.s);
            let k = path.lanes.iter().position(|&l| l == lane).unwrap_or(0);
            let accel = (v - b.state.speed) / DT;
            b.state = VehicleState {
                x: p[0],
                y: p[1],
                heading,
                speed: v,
                accel,
                jerk: (accel - b.state.accel) / DT,
                lane: Some(lane),
                offset: b.s - path.lane_starts[k],
                ..b.state
            };
        }
        self.background
            .retain(|b| b.flow.is_none_or(|f| b.s <= sc.flows[f].path.length()));
    }

    fn spawn_due(&mut self) {
        let now = self.step as f64 * DT;
        while self.cursor < self.schedule.len() && self.schedule[self.cursor].time <= now {
            let e = self.schedule[self.cursor];
            self.waiting[e.flow].push_back(e);
            self.cursor += 1;
        }
        for flow in 0..self.waiting.len() {
            let Some(&e) = self.waiting[flow].front() else {
                continue;
            };
            let start = self.scenario.flows[flow].path.line.point_at(0.0);
            let blocked = dist(start, self.ego.pos()) < SPAWN_CLEARANCE
                || self
                    .background
                    .iter()
                    .any(|b| dist(start, b.state.pos()) < SPAWN_CLEARANCE);
            if !blocked {
                self.waiting[flow].pop_front();
                self.insert(flow, 0.0, e.desired_speed);
            }
        }
    }

    /// Advances the world by one step under `cmd`.
    pub fn step(&mut self, cmd: EgoCommand) -> Result<StepOutcome> {
        if self.done {
            return Err(SimError::EpisodeOver);
        }
        let cmd = self.coerce(cmd);
        let (accel, steering) = self.mid_level_control(cmd);
        self.advance_background();

        let c = self.cfg.controller;
        let prev = self.ego;
        let next = bicycle_step(prev.pos(), prev.heading, prev.speed, accel, steering, c.wheelbase);
        self.ego.x = next.pos[0];
        self.ego.y = next.pos[1];
        self.ego.heading = wrap_angle(next.heading);
        self.ego.speed = next.speed;
        self.ego.accel = next.accel;
        self.ego.steering = steering;
        self.ego.yaw_rate = next.yaw_rate;
        self.ego.jerk = (next.accel - prev.accel) / DT;
        self.ego.yaw_acc = (next.yaw_rate - prev.yaw_rate) / DT;

        self.step += 1;
        self.spawn_due();
        let events = self.detect_events();
        self.push_tracks();

        let terminated = events.crash || events.offroad || events.reached_goal;
        let truncated = !terminated && self.step >= self.scenario.max_steps;
        self.done = terminated || truncated;
        Ok(StepOutcome {
            observation: self.observe(),
            events,
            command: cmd,
            terminated,
            truncated,
        })
    }

    fn push_tracks(&mut self) {
        push_bounded(&mut self.ego_track, self.ego);
        for b in &mut self.background {
            push_bounded(&mut b.track, b.state);
        }
    }

    /// Evaluates the event flags for the current state and advances the
    /// route-progress and stagnation trackers.
    pub fn detect_events(&mut self) -> StepEvents {
        let sc = Arc::clone(&self.scenario);
        let g = &sc.graph;
        let pos = self.ego.pos();
        let ego_box = self.ego.obb();
        let crash = self.background.iter().any(|b| {
            dist(b.state.pos(), pos) <= ego_box.circumradius() * 2.0 + 1.0 && b.state.obb().overlaps(&ego_box)
        });

        let mut preferred = vec![self.nav.active];
        preferred.extend(sc.route.lanes.iter().copied());
        let lane = g.lane_at(pos, &preferred);
        self.ego.lane = lane;
        let (offroute, wrong_way) = match lane {
            None => (false, false),
            Some(l) => {
                let on_route = sc.route.lanes.iter().any(|&r| r == l || g.adjacent(r, l));
                let pr = g.lanes[l].line.project(pos);
                self.ego.offset = pr.s;
                let dev = wrap_angle(self.ego.heading - g.lanes[l].line.heading_at(pr.s));
                (!on_route, dev.abs() > FRAC_PI_2)
            }
        };

        let pr = sc.project_route(pos, self.route_s - 5.0, self.route_s + 20.0);
        let progress_delta = pr.s - self.route_s;
        self.route_s = pr.s;

        let reached_goal = !crash && dist(pos, sc.goal.point) <= sc.goal.radius;

        let window = self.cfg.stagnation_window_steps;
        self.positions.push_back(pos);
        while self.positions.len() > window + 1 {
            self.positions.pop_front();
        }
        let mut stagnant = false;
        if self.stagnation_cooldown > 0 {
            self.stagnation_cooldown -= 1;
        } else if self.positions.len() == window + 1
            && dist(*self.positions.front().unwrap(), pos) < self.cfg.stagnation_distance
        {
            stagnant = true;
            self.stagnation_cooldown = window - 1;
        }

        StepEvents {
            crash,
            offroad: lane.is_none(),
            offroute,
            wrong_way,
            reached_goal,
            stagnant,
            progress_delta,
        }
    }

    /// Builds the ego's observation of the current state.
    pub fn observe(&self) -> Observation {
        let o = &self.obs_cfg;
        let ego = &self.ego;
        let pos = ego.pos();
        let mut near: Vec<(f64, u32, usize)> = self
            .background
            .iter()
            .enumerate()
            .map(|(i, b)| (dist(b.state.pos(), pos), b.id, i))
            .filter(|&(d, _, _)| d <= o.sensor_range)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut slots: Vec<Option<VehicleHistory>> = near
            .iter()
            .take(o.n_slots)
            .map(|&(_, id, i)| {
                let track = &self.background[i].track;
                Some(VehicleHistory {
                    id,
                    samples: std::array::from_fn(|k| relative(ego, sample(track, k))),
                })
            })
            .collect();
        slots.resize(o.n_slots, None);

        let e1 = std::array::from_fn(|k| relative(ego, sample(&self.ego_track, k)));
        let e2 = std::array::from_fn(|k| {
            let s = sample(&self.ego_track, k);
            [s.steering, s.yaw_rate, s.speed, s.accel, s.jerk]
        });

        let frame = BevFrame::new(pos, ego.heading, o.map_size, o.resolution);
        let route = &self.scenario.route.line;
        let remaining = route.slice(self.route_s, route.length());
        Observation {
            slots,
            ego: EgoHistory { e1, e2 },
            maps: ContextMaps {
                drivable: rasterize_drivable(&self.scenario.graph, &frame),
                waypoint: rasterize_polyline(&remaining, &frame),
                resolution: o.resolution,
            },
        }
    }
}

fn push_bounded(track: &mut VecDeque<VehicleState>, s: VehicleState) {
    if track.len() == TRACK_LEN {
        track.pop_front();
    }
    track.push_back(s);
}

/// History sample `k` (0 = newest) at a stride of `HISTORY_STRIDE` raw
/// steps, repeating the oldest stored sample when the track is short.
fn sample(track: &VecDeque<VehicleState>, k: usize) -> &VehicleState {
    let back = (k * HISTORY_STRIDE).min(track.len() - 1);
    &track[track.len() - 1 - back]
}

/// `(x_right, y_forward, heading, speed, lane)` relative to the ego pose.
fn relative(ego: &VehicleState, s: &VehicleState) -> Feature {
    let d = sub(s.pos(), ego.pos());
    let f = unit(ego.heading);
    let right = [f[1], -f[0]];
    [
        dot(d, right),
        dot(d, f),
        wrap_angle(s.heading - ego.heading),
        s.speed,
        s.lane.map_or(-1.0, |l| l as f64),
    ]
}
