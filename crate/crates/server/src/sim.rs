//! A simulated operator that drives whole sessions over the TCP protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use panelguide_core::analytics::{score_session, MetricsReport, PairedSamples, ScoreError};
use panelguide_core::session::{ManualClock, Phase};
use panelguide_core::wire::WireMessage;
use panelguide_core::{CommandSequence, Execution, ItemId, PanelSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrongItemPolicy {
    /// Any other interactable item.
    #[default]
    RandomValid,
    /// An adjacent index in the same category.
    NeighborIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorProfile {
    /// Per-step probability of acting on a wrong item.
    pub error_rate: f64,
    #[serde(default)]
    pub policy: WrongItemPolicy,
    /// Inclusive `[min, max]` think time per step.
    pub think_time_ms: [u64; 2],
    #[serde(default)]
    pub seed: u64,
}

impl OperatorProfile {
    pub fn perfect(think_time_ms: [u64; 2], seed: u64) -> Self {
        Self {
            error_rate: 0.0,
            policy: WrongItemPolicy::RandomValid,
            think_time_ms,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(SimError::Profile(format!(
                "error_rate {} is outside [0, 1]",
                self.error_rate
            )));
        }
        if self.think_time_ms[0] > self.think_time_ms[1] {
            return Err(SimError::Profile("think_time_ms minimum exceeds maximum".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("connection: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("server closed the connection while waiting for {0}")]
    Disconnected(&'static str),
    #[error("server error {code}: {reason}")]
    Server { code: u16, reason: String },
    #[error("unexpected server message {got:?} while waiting for {expected}")]
    Protocol { expected: &'static str, got: String },
    #[error("scoring {path}: {source}")]
    Score {
        path: PathBuf,
        #[source]
        source: ScoreError,
    },
}

/// How think time passes: real sleeps, or advancing a clock shared with an
/// in-process server.
#[derive(Debug, Clone, Default)]
pub enum Pacing {
    #[default]
    Sleep,
    Virtual(ManualClock),
}

/// Where the server listens and where it writes session logs.
#[derive(Debug, Clone)]
pub struct Target {
    pub addr: SocketAddr,
    pub log_dir: PathBuf,
    pub pacing: Pacing,
    pub read_timeout: Duration,
}

impl Target {
    pub fn new(addr: SocketAddr, log_dir: impl Into<PathBuf>) -> Self {
        Self {
            addr,
            log_dir: log_dir.into(),
            pacing: Pacing::Sleep,
            read_timeout: Duration::from_secs(30),
        }
    }

    pub fn virtual_clock(mut self, clock: ManualClock) -> Self {
        self.pacing = Pacing::Virtual(clock);
        self
    }
}

struct Wire {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Wire {
    fn connect(target: &Target) -> Result<Self, SimError> {
        let stream = TcpStream::connect(target.addr)?;
        stream.set_read_timeout(Some(target.read_timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    fn send(&mut self, msg: &WireMessage) -> Result<(), SimError> {
        self.writer.write_all(msg.encode_line().as_bytes())?;
        Ok(())
    }

    fn recv(&mut self, expected: &'static str) -> Result<WireMessage, SimError> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => return Err(SimError::Disconnected(expected)),
            Ok(_) => {}
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                return Err(SimError::Timeout(expected))
            }
            Err(e) => return Err(e.into()),
        }
        let trimmed = line.trim_end_matches('\n');
        match WireMessage::parse(trimmed) {
            Ok(WireMessage::Err { code, reason }) => Err(SimError::Server { code, reason }),
            Ok(msg) => Ok(msg),
            Err(_) => Err(SimError::Protocol {
                expected,
                got: trimmed.to_string(),
            }),
        }
    }

    fn expect_state(&mut self, phase: Phase) -> Result<(), SimError> {
        let expected = phase.wire_name();
        match self.recv(expected)? {
            WireMessage::State(p) if p == phase => Ok(()),
            other => Err(SimError::Protocol {
                expected,
                got: other.encode(),
            }),
        }
    }
}

/// Picks the item an imperfect operator touches instead of `correct`.
pub fn wrong_item(
    schema: &PanelSchema,
    correct: ItemId,
    policy: WrongItemPolicy,
    rng: &mut impl Rng,
) -> ItemId {
    if policy == WrongItemPolicy::NeighborIndex {
        let count = schema.count(correct.category);
        if count > 1 {
            let up = correct.index + 1 < count;
            let down = correct.index > 0;
            let index = match (down, up) {
                (true, true) if rng.gen_bool(0.5) => correct.index - 1,
                (true, true) | (false, true) => correct.index + 1,
                _ => correct.index - 1,
            };
            return ItemId::new(correct.category, index);
        }
    }
    let pool: Vec<ItemId> = schema
        .interactable_items()
        .filter(|i| *i != correct)
        .collect();
    pool[rng.gen_range(0..pool.len())]
}

/// Role under which a simulated session is logged.
pub fn session_role(label: &str, seed: u64) -> String {
    format!("sim-{label}-{seed}")
}

/// Runs one complete session and returns the path of its log.
///
/// The operator says HELLO under `role`, sends `TEXT <fixture>`, waits for
/// the sequence, acts on the first step, then for each later step sends
/// NEXT and acts on the prompted item (or a wrong one) until DONE.
pub fn run_session(
    profile: &OperatorProfile,
    target: &Target,
    fixture: &str,
    role: &str,
) -> Result<PathBuf, SimError> {
    profile.validate()?;
    let schema = PanelSchema::default_panel();
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut wire = Wire::connect(target)?;

    wire.send(&WireMessage::Hello(role.to_string()))?;
    match wire.recv("STATE")? {
        WireMessage::State(_) => {}
        other => {
            return Err(SimError::Protocol {
                expected: "STATE",
                got: other.encode(),
            })
        }
    }
    wire.send(&WireMessage::Text(fixture.to_string()))?;
    wire.expect_state(Phase::AwaitingModel)?;
    let steps = match wire.recv("SEQ")? {
        WireMessage::Seq(items) => items,
        other => {
            return Err(SimError::Protocol {
                expected: "SEQ",
                got: other.encode(),
            })
        }
    };
    wire.expect_state(Phase::Ready)?;

    for (i, first_item) in steps.iter().enumerate() {
        let prompted = if i == 0 {
            *first_item
        } else {
            wire.send(&WireMessage::Next)?;
            match wire.recv("PROMPT")? {
                WireMessage::Prompt { item, .. } => item,
                other => {
                    return Err(SimError::Protocol {
                        expected: "PROMPT",
                        got: other.encode(),
                    })
                }
            }
        };
        let think = rng.gen_range(profile.think_time_ms[0]..=profile.think_time_ms[1]);
        match &target.pacing {
            Pacing::Sleep => std::thread::sleep(Duration::from_millis(think)),
            Pacing::Virtual(clock) => clock.advance(think),
        }
        let item = if rng.gen_bool(profile.error_rate) {
            wrong_item(&schema, prompted, profile.policy, &mut rng)
        } else {
            prompted
        };
        wire.send(&WireMessage::Act(item.to_string()))?;
        match wire.recv("EVT")? {
            WireMessage::Evt { .. } => {}
            other => {
                return Err(SimError::Protocol {
                    expected: "EVT",
                    got: other.encode(),
                })
            }
        }
    }
    match wire.recv("DONE")? {
        WireMessage::Done { .. } => {}
        other => {
            return Err(SimError::Protocol {
                expected: "DONE",
                got: other.encode(),
            })
        }
    }
    Ok(target.log_dir.join(format!("{role}.jsonl")))
}

/// Reads and scores a session log.
pub fn score_log(path: &Path, correct: &CommandSequence) -> Result<MetricsReport, SimError> {
    let text = std::fs::read_to_string(path)?;
    score_session(&text, correct).map_err(|source| SimError::Score {
        path: path.to_path_buf(),
        source,
    })
}

/// One arm of a paired experiment.
#[derive(Debug, Clone)]
pub struct Condition {
    pub label: String,
    pub fixture: String,
    pub profile: OperatorProfile,
    /// Sequence the operator is scored against.
    pub correct: CommandSequence,
}

#[derive(Debug, Clone)]
pub struct PairedExperiment {
    pub time: PairedSamples,
    pub accuracy: PairedSamples,
    pub logs: Vec<(PathBuf, PathBuf)>,
}

#[derive(Debug, Error)]
#[error("subject seed {seed}, condition {condition}: {source}")]
pub struct ExperimentError {
    pub seed: u64,
    pub condition: String,
    #[source]
    pub source: SimError,
}

/// Runs both conditions for subjects seeded `base_seed..base_seed + n`.
///
/// Subjects run concurrently under [`Execution::Parallel`] unless the
/// target uses a virtual clock, whose single timeline forces sequential
/// runs.
pub fn run_paired_experiment(
    conditions: [&Condition; 2],
    n_subjects: usize,
    base_seed: u64,
    target: &Target,
    exec: Execution,
) -> Result<PairedExperiment, ExperimentError> {
    let exec = match target.pacing {
        Pacing::Virtual(_) => Execution::Sequential,
        Pacing::Sleep => exec,
    };
    let subject = |i: usize| -> Result<[(MetricsReport, PathBuf); 2], ExperimentError> {
        let seed = base_seed + i as u64;
        let run = |c: &Condition| {
            let fail = |source| ExperimentError {
                seed,
                condition: c.label.clone(),
                source,
            };
            let role = session_role(&c.label, seed);
            let path = run_session(&c.profile.with_seed(seed), target, &c.fixture, &role)
                .map_err(fail)?;
            let metrics = score_log(&path, &c.correct).map_err(fail)?;
            Ok((metrics, path))
        };
        Ok([run(conditions[0])?, run(conditions[1])?])
    };
    let results = exec.map_range(n_subjects, subject);

    let mut time = Vec::with_capacity(n_subjects);
    let mut accuracy = Vec::with_capacity(n_subjects);
    let mut logs = Vec::with_capacity(n_subjects);
    for result in results {
        let [(a, path_a), (b, path_b)] = result?;
        time.push((a.completion_time_s, b.completion_time_s));
        accuracy.push((a.accuracy, b.accuracy));
        logs.push((path_a, path_b));
    }
    let (la, lb) = (&conditions[0].label, &conditions[1].label);
    Ok(PairedExperiment {
        time: PairedSamples::new(la, lb, time),
        accuracy: PairedSamples::new(la, lb, accuracy),
        logs,
    })
}
