//! Newline-delimited JSON trajectory logs and bitwise replay.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{ObsConfig, SimConfig};
use crate::control::{EgoCommand, LaneCommand};
use crate::env::{Env, StepEvents, StepOutcome, EGO_ID};
use crate::error::{Result, SimError};
use crate::scenario::Scenario;

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Header {
        version: u32,
        scenario: String,
        digest: String,
        seed: u64,
        sim: SimConfig,
        obs: ObsConfig,
    },
    Command {
        step: usize,
        target_speed: f64,
        lane: LaneCommand,
    },
    State {
        step: usize,
        id: u32,
        x: f64,
        y: f64,
        heading: f64,
        speed: f64,
    },
    Events {
        step: usize,
        events: StepEvents,
        terminated: bool,
        truncated: bool,
    },
}

/// State records for every vehicle, ego first, then background by id.
pub fn snapshot(env: &Env) -> Vec<Record> {
    let step = env.step_count();
    let state = |id: u32, v: &crate::env::VehicleState| Record::State {
        step,
        id,
        x: v.x,
        y: v.y,
        heading: v.heading,
        speed: v.speed,
    };
    let mut bg: Vec<_> = env.vehicles().collect();
    bg.sort_by_key(|&(id, _)| id);
    std::iter::once(state(EGO_ID, env.ego()))
        .chain(bg.into_iter().map(|(id, v)| state(id, v)))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<Record>,
}

impl TrajectoryLog {
    /// Starts a log right after `env.reset(seed)`.
    pub fn start(env: &Env) -> Self {
        let mut records = vec![Record::Header {
            version: LOG_VERSION,
            scenario: env.scenario().name.clone(),
            digest: format!("{:016x}", env.scenario().digest()),
            seed: env.seed(),
            sim: env.config().clone(),
            obs: env.obs_config().clone(),
        }];
        records.extend(snapshot(env));
        TrajectoryLog { records }
    }

    /// Appends one step: the command as issued, then the resulting states and events.
    pub fn record(&mut self, cmd: EgoCommand, env: &Env, out: &StepOutcome) {
        self.records.push(Record::Command {
            step: env.step_count() - 1,
            target_speed: cmd.target_speed,
            lane: cmd.lane,
        });
        self.records.extend(snapshot(env));
        self.records.push(events_record(env.step_count(), out));
    }

    pub fn commands(&self) -> impl Iterator<Item = EgoCommand> + '_ {
        self.records.iter().filter_map(|r| match *r {
            Record::Command { target_speed, lane, .. } => Some(EgoCommand { target_speed, lane }),
            _ => None,
        })
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|e| SimError::Log(format!("line {}: {e}", n + 1)))?,
            );
        }
        Ok(TrajectoryLog { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn events_record(step: usize, out: &StepOutcome) -> Record {
    Record::Events {
        step,
        events: out.events,
        terminated: out.terminated,
        truncated: out.truncated,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    /// Simulation step whose records differ.
    pub step: usize,
    pub expected: String,
    pub actual: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    pub divergence: Option<Divergence>,
}

/// Bitwise comparison through the shortest round-trip float encoding.
fn same(a: &Record, b: &Record) -> bool {
    serde_json::to_string(a).ok() == serde_json::to_string(b).ok()
}

/// Re-runs a log's commands and reports the first record that differs.
pub fn replay(log: &TrajectoryLog, scenario: Arc<Scenario>) -> Result<ReplayReport> {
    let Some(Record::Header {
        version,
        digest,
        seed,
        sim,
        obs,
        ..
    }) = log.records.first()
    else {
        return Err(SimError::Log("log does not start with a header".into()));
    };
    if *version != LOG_VERSION {
        return Err(SimError::Log(format!(
            "log version {version} is not supported (expected {LOG_VERSION})"
        )));
    }
    if *digest != format!("{:016x}", scenario.digest()) {
        return Err(SimError::Log("scenario digest does not match the log".into()));
    }
    let mut env = Env::new(scenario, sim.clone(), obs.clone())?;
    env.reset(*seed);

    let mut expected = log.records[1..].iter();
    let check = |exp: &mut std::slice::Iter<Record>, actual: Vec<Record>, step: usize| -> Option<Divergence> {
        for a in actual {
            match exp.next() {
                Some(e) if same(e, &a) => {}
                e => {
                    return Some(Divergence {
                        step,
                        expected: e.map_or("end of log".into(), |e| serde_json::to_string(e).unwrap_or_default()),
                        actual: serde_json::to_string(&a).unwrap_or_default(),
                    })
                }
            }
        }
        None
    };
    if let Some(d) = check(&mut expected, snapshot(&env), 0) {
        return Ok(ReplayReport {
            steps: 0,
            divergence: Some(d),
        });
    }
    let mut steps = 0;
    while let Some(r) = expected.next() {
        let Record::Command { target_speed, lane, .. } = *r else {
            return Err(SimError::Log(format!("expected a command record after step {steps}")));
        };
        let out = env.step(EgoCommand { target_speed, lane })?;
        steps += 1;
        let mut actual = snapshot(&env);
        actual.push(events_record(steps, &out));
        if let Some(d) = check(&mut expected, actual, steps) {
            return Ok(ReplayReport {
                steps,
                divergence: Some(d),
            });
        }
    }
    Ok(ReplayReport { steps, divergence: None })
}
