//! Scenario files, the lane graph and route paths.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geom::{dist, Point, Polyline, Projection};

fn default_width() -> f64 {
    3.5
}

fn default_speed_limit() -> f64 {
    13.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSpec {
    pub id: String,
    pub points: Vec<Point>,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_speed_limit")]
    pub speed_limit: f64,
    #[serde(default)]
    pub successors: Vec<String>,
}

/// `left` lies immediately to the left of `right`; both run the same way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjacencySpec {
    pub left: String,
    pub right: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnSpec {
    pub lane: String,
    /// Arc length along the spawn lane.
    pub offset: f64,
    #[serde(default)]
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub point: Point,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub spawn: SpawnSpec,
    pub route: Vec<String>,
    pub goal: GoalSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub route: Vec<String>,
    pub headway_mean_s: f64,
    pub headway_jitter_s: f64,
    /// Desired-speed range `[lo, hi]` in m/s.
    pub speed_range: [f64; 2],
}

/// On-disk scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub lanes: Vec<LaneSpec>,
    #[serde(default)]
    pub adjacency: Vec<AdjacencySpec>,
    pub ego: EgoSpec,
    #[serde(default)]
    pub traffic: Vec<FlowSpec>,
    /// Seconds of traffic history simulated analytically before `t = 0`.
    #[serde(default)]
    pub traffic_preroll_s: f64,
    pub max_steps: usize,
}

#[derive(Clone, Debug)]
pub struct Lane {
    pub id: String,
    pub index: usize,
    pub line: Polyline,
    pub width: f64,
    pub speed_limit: f64,
    pub successors: Vec<usize>,
    pub predecessors: Vec<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    bounds: [f64; 4],
}

impl Lane {
    /// Whether `p` lies on the lane surface: segment rectangles plus round
    /// joints at interior vertices and at ends that continue into another lane.
    pub fn contains(&self, p: Point) -> bool {
        let b = &self.bounds;
        if p[0] < b[0] || p[0] > b[2] || p[1] < b[1] || p[1] > b[3] {
            return false;
        }
        let half = self.width / 2.0;
        let pts = self.line.points();
        for i in 0..self.line.segments() {
            if segment_contains(pts[i], pts[i + 1], half, p) {
                return true;
            }
        }
        pts.iter()
            .enumerate()
            .any(|(i, &q)| self.has_joint(i) && dist(p, q) <= half)
    }

    /// Whether this lane ends where its drivable surface continues.
    pub fn has_joint(&self, vertex: usize) -> bool {
        let last = self.line.points().len() - 1;
        (vertex > 0 && vertex < last)
            || (vertex == 0 && !self.predecessors.is_empty())
            || (vertex == last && !self.successors.is_empty())
    }

    pub fn bounds(&self) -> [f64; 4] {
        self.bounds
    }
}

/// Point-in-rectangle test for one segment of half-width `half`.
pub fn segment_contains(a: Point, b: Point, half: f64, p: Point) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let rel = [p[0] - a[0], p[1] - a[1]];
    let t = rel[0] * d[0] + rel[1] * d[1];
    if t < 0.0 || t > len2 {
        return false;
    }
    let lat = (d[0] * rel[1] - d[1] * rel[0]).abs() / len2.sqrt();
    lat <= half
}

#[derive(Clone, Debug)]
pub struct LaneGraph {
    pub lanes: Vec<Lane>,
}

impl LaneGraph {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lanes.iter().position(|l| l.id == id)
    }

    pub fn is_drivable(&self, p: Point) -> bool {
        self.lanes.iter().any(|l| l.contains(p))
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.lanes[a].left == Some(b) || self.lanes[a].right == Some(b)
    }

    /// The lane `p` lies on, preferring `preferred` lanes in order, then the
    /// lowest index.
    pub fn lane_at(&self, p: Point, preferred: &[usize]) -> Option<usize> {
        preferred
            .iter()
            .copied()
            .find(|&i| self.lanes[i].contains(p))
            .or_else(|| self.lanes.iter().position(|l| l.contains(p)))
    }
}

/// A route flattened into one reference polyline.
#[derive(Clone, Debug)]
pub struct RoutePath {
    pub lanes: Vec<usize>,
    pub line: Polyline,
    /// Arc length on `line` where each route lane's portion starts.
    pub lane_starts: Vec<f64>,
}

impl RoutePath {
    /// Consecutive lanes must be successors or adjacent. Across an adjacency
    /// step the path cuts over diagonally around the lanes' midpoints.
    pub fn build(graph: &LaneGraph, lanes: Vec<usize>) -> Result<Self> {
        if lanes.is_empty() {
            return Err(SimError::Scenario("route is empty".into()));
        }
        let mut points: Vec<Point> = Vec::new();
        let mut lane_starts = Vec::with_capacity(lanes.len());
        let mut cum = 0.0;
        for (k, &li) in lanes.iter().enumerate() {
            let line = &graph.lanes[li].line;
            let adjacent_prev = k > 0 && graph.adjacent(lanes[k - 1], li);
            let adjacent_next = k + 1 < lanes.len() && graph.adjacent(li, lanes[k + 1]);
            if k + 1 < lanes.len() {
                let next = lanes[k + 1];
                if !adjacent_next && !graph.lanes[li].successors.contains(&next) {
                    return Err(SimError::Scenario(format!(
                        "route is not connected: {} -> {}",
                        graph.lanes[li].id, graph.lanes[next].id
                    )));
                }
            }
            // Lane changes are drawn as a gentle diagonal across the middle of the lane pair.
            let cut = (line.length() / 4.0).min(15.0);
            let from = if adjacent_prev { line.length() / 2.0 + cut } else { 0.0 };
            let to = if adjacent_next { line.length() / 2.0 - cut } else { line.length() };
            let part = line.slice(from, to);
            let mut first = true;
            for p in part {
                if let Some(&last) = points.last() {
                    let d = dist(last, p);
                    if d <= 1e-6 {
                        if first {
                            lane_starts.push(cum);
                            first = false;
                        }
                        continue;
                    }
                    cum += d;
                }
                if first {
                    lane_starts.push(cum);
                    first = false;
                }
                points.push(p);
            }
        }
        let line = Polyline::new(points)?;
        Ok(RoutePath {
            lanes,
            line,
            lane_starts,
        })
    }

    /// Route lane covering arc length `s`.
    pub fn lane_at(&self, s: f64) -> usize {
        let k = self.lane_starts.partition_point(|&st| st <= s).max(1) - 1;
        self.lanes[k]
    }

    pub fn length(&self) -> f64 {
        self.line.length()
    }
}

#[derive(Clone, Debug)]
pub struct Goal {
    pub point: Point,
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct Flow {
    pub path: RoutePath,
    pub headway_mean_s: f64,
    pub headway_jitter_s: f64,
    pub speed_range: [f64; 2],
}

/// A validated scenario ready to simulate.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub file: ScenarioFile,
    pub graph: LaneGraph,
    pub spawn_lane: usize,
    pub spawn_offset: f64,
    pub spawn_speed: f64,
    pub route: RoutePath,
    pub goal: Goal,
    /// Arc length of the spawn point and of the goal on the route path.
    pub spawn_s: f64,
    pub goal_s: f64,
    pub flows: Vec<Flow>,
    pub traffic_preroll_s: f64,
    pub max_steps: usize,
}

/// Names of the bundled scenarios.
pub const BUILTIN: [&str; 6] = [
    "straight",
    "left_turn_t",
    "roundabout_a",
    "roundabout_b",
    "roundabout_c",
    "double_merge",
];

fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "straight" => include_str!("../scenarios/straight.json"),
        "left_turn_t" => include_str!("../scenarios/left_turn_t.json"),
        "roundabout_a" => include_str!("../scenarios/roundabout_a.json"),
        "roundabout_b" => include_str!("../scenarios/roundabout_b.json"),
        "roundabout_c" => include_str!("../scenarios/roundabout_c.json"),
        "double_merge" => include_str!("../scenarios/double_merge.json"),
        _ => return None,
    })
}

impl Scenario {
    pub fn builtin(name: &str) -> Result<Self> {
        let src = builtin_source(name).ok_or_else(|| SimError::UnknownScenario(name.into()))?;
        Self::from_json(src)
    }

    pub fn from_json(src: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(src)?)
    }

    /// Loads a JSON file, or a bundled scenario when `path` is `builtin:<name>`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("builtin:")) {
            return Self::builtin(name);
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let bad = |m: String| SimError::Scenario(m);
        let mut lanes = Vec::with_capacity(file.lanes.len());
        for (index, spec) in file.lanes.iter().enumerate() {
            if file.lanes[..index].iter().any(|l| l.id == spec.id) {
                return Err(bad(format!("duplicate lane id {:?}", spec.id)));
            }
            if !(spec.width > 0.0) || !(spec.speed_limit > 0.0) {
                return Err(bad(format!("lane {:?}: width and speed_limit must be positive", spec.id)));
            }
            let line = Polyline::new(spec.points.clone())
                .map_err(|e| bad(format!("lane {:?}: {e}", spec.id)))?;
            let bounds = line.bounds(spec.width / 2.0);
            lanes.push(Lane {
                id: spec.id.clone(),
                index,
                line,
                width: spec.width,
                speed_limit: spec.speed_limit,
                successors: Vec::new(),
                predecessors: Vec::new(),
                left: None,
                right: None,
                bounds,
            });
        }
        let mut graph = LaneGraph { lanes };
        let lookup = |g: &LaneGraph, id: &str| g.index_of(id).ok_or_else(|| bad(format!("unknown lane id {id:?}")));
        for (i, spec) in file.lanes.iter().enumerate() {
            for s in &spec.successors {
                let j = lookup(&graph, s)?;
                graph.lanes[i].successors.push(j);
                graph.lanes[j].predecessors.push(i);
            }
        }
        for adj in &file.adjacency {
            let l = lookup(&graph, &adj.left)?;
            let r = lookup(&graph, &adj.right)?;
            if l == r {
                return Err(bad(format!("lane {:?} cannot be adjacent to itself", adj.left)));
            }
            if graph.lanes[r].left.is_some_and(|x| x != l) || graph.lanes[l].right.is_some_and(|x| x != r) {
                return Err(bad(format!("conflicting adjacency for {:?}/{:?}", adj.left, adj.right)));
            }
            graph.lanes[r].left = Some(l);
            graph.lanes[l].right = Some(r);
        }

        let ego = &file.ego;
        let spawn_lane = lookup(&graph, &ego.spawn.lane)?;
        let spawn_len = graph.lanes[spawn_lane].line.length();
        if !(0.0..=spawn_len).contains(&ego.spawn.offset) {
            return Err(bad(format!("spawn offset {} outside lane length {spawn_len}", ego.spawn.offset)));
        }
        if !(ego.spawn.speed >= 0.0) {
            return Err(bad("spawn speed must be non-negative".into()));
        }
        let route_lanes = ego
            .route
            .iter()
            .map(|id| lookup(&graph, id))
            .collect::<Result<Vec<_>>>()?;
        if route_lanes.first() != Some(&spawn_lane) {
            return Err(bad("ego route must start on the spawn lane".into()));
        }
        let route = RoutePath::build(&graph, route_lanes)?;
        if !(ego.goal.radius > 0.0) {
            return Err(bad("goal radius must be positive".into()));
        }
        let last = &graph.lanes[*route.lanes.last().unwrap()];
        let goal_gap = last.line.project(ego.goal.point).distance;
        if goal_gap > ego.goal.radius + last.width / 2.0 {
            return Err(bad(format!(
                "goal region does not reach the final route lane {:?} (gap {goal_gap:.2} m)",
                last.id
            )));
        }
        let spawn_point = graph.lanes[spawn_lane].line.point_at(ego.spawn.offset);
        let spawn_s = route.line.project(spawn_point).s;
        let goal_s = route.line.project(ego.goal.point).s;
        if goal_s <= spawn_s {
            return Err(bad("goal lies behind the spawn point along the route".into()));
        }

        let mut flows = Vec::with_capacity(file.traffic.len());
        for (k, f) in file.traffic.iter().enumerate() {
            let lanes = f
                .route
                .iter()
                .map(|id| lookup(&graph, id))
                .collect::<Result<Vec<_>>>()?;
            let path = RoutePath::build(&graph, lanes).map_err(|e| bad(format!("traffic[{k}]: {e}")))?;
            let [lo, hi] = f.speed_range;
            if !(f.headway_mean_s > 0.0) || !(f.headway_jitter_s >= 0.0) || !(lo > 0.0) || !(hi >= lo) {
                return Err(bad(format!(
                    "traffic[{k}]: need headway_mean_s > 0, headway_jitter_s >= 0, 0 < speed_range[0] <= speed_range[1]"
                )));
            }
            flows.push(Flow {
                path,
                headway_mean_s: f.headway_mean_s,
                headway_jitter_s: f.headway_jitter_s,
                speed_range: f.speed_range,
            });
        }
        if file.max_steps == 0 {
            return Err(bad("max_steps must be >= 1".into()));
        }
        if !(file.traffic_preroll_s >= 0.0) {
            return Err(bad("traffic_preroll_s must be non-negative".into()));
        }
        Ok(Scenario {
            name: file.name.clone(),
            graph,
            spawn_lane,
            spawn_offset: ego.spawn.offset,
            spawn_speed: ego.spawn.speed,
            route,
            goal: Goal {
                point: ego.goal.point,
                radius: ego.goal.radius,
            },
            spawn_s,
            goal_s,
            flows,
            traffic_preroll_s: file.traffic_preroll_s,
            max_steps: file.max_steps,
            file,
        })
    }

    /// Route arc length from the spawn point to the goal.
    pub fn route_length(&self) -> f64 {
        self.goal_s - self.spawn_s
    }

    pub fn project_route(&self, p: Point, lo: f64, hi: f64) -> Projection {
        self.route.line.project_window(p, lo, hi)
    }

    /// Stable 64-bit FNV-1a digest of the scenario contents.
    pub fn digest(&self) -> u64 {
        let text = serde_json::to_string(&self.file).expect("scenario serialises");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
