//! Scripted scenarios: timed commands against a testbed plus inline
//! assertions. The grammar is documented in `docs/scenarios.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use citytb_asi::{Aggregate, Filter, HistoryQuery, Series};
use citytb_core::{parse_duration, NodeImage, SimTime};
use citytb_mgmt::Timeouts;
use citytb_rd::Query;
use citytb_sim::Weather;
use thiserror::Error;

use crate::bed::{parse_instant, Testbed, TestbedConfig};
use crate::error::TestbedError;
use crate::ops::{parse_fault, parse_mode};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("setup: {0}")]
    Setup(#[from] TestbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn dur(s: &str) -> Result<Duration, String> {
    parse_duration(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sky {
    Rain,
    Mild,
    Dry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Link {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Side {
    Experiment,
    Service,
}

#[derive(Debug, Clone, Parser)]
#[command(no_binary_name = true, disable_help_subcommand = true)]
enum Command {
    /// Do nothing; used to move the clock.
    Wait,
    /// Step until every device is registered.
    Up {
        #[arg(long, value_parser = dur, default_value = "1h")]
        limit: Duration,
    },
    Weather {
        sky: Sky,
        #[arg(long)]
        peak: Option<f64>,
        #[arg(long, value_parser = dur, default_value = "0s")]
        ramp: Duration,
    },
    Fault {
        #[command(subcommand)]
        op: FaultOp,
    },
    /// Take the broker offline or bring it back.
    Bus { link: Link },
    Reserve {
        #[arg(long, value_delimiter = ',', required = true)]
        urns: Vec<String>,
        #[arg(long, default_value = "+0s", allow_hyphen_values = true)]
        from: String,
        #[arg(long, value_parser = dur)]
        dur: Duration,
        /// Handle for later `session` commands.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        credential: Option<String>,
    },
    Cancel {
        #[arg(long)]
        name: String,
    },
    Session {
        #[command(subcommand)]
        op: SessionOp,
    },
    Timeouts {
        #[arg(long, value_parser = dur)]
        invalidation: Option<Duration>,
        #[arg(long, value_parser = dur)]
        deletion: Option<Duration>,
        #[arg(long, value_parser = dur)]
        configurator: Option<Duration>,
    },
    /// Make a configurator refuse every command about one device.
    Reject {
        urn: String,
        #[arg(long, value_enum, default_value = "experiment")]
        side: Side,
    },
}

#[derive(Debug, Clone, Subcommand)]
enum FaultOp {
    Inject {
        target: String,
        kind: String,
        #[arg(long)]
        loss: Option<f64>,
    },
}

#[derive(Debug, Clone, Subcommand)]
enum SessionOp {
    Open { name: String },
    Send { name: String, urn: String, payload: String },
    Reset { name: String, urn: String },
    Flash {
        name: String,
        #[arg(long, default_value = "echo")]
        behavior: String,
        #[arg(long, default_value_t = 4096)]
        size: usize,
        #[arg(long, default_value = "broadcast")]
        mode: String,
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
        #[arg(long, default_value_t = 2)]
        version: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn parse(s: &str) -> Option<Op> {
        Some(match s {
            "==" => Op::Eq,
            "!=" => Op::Ne,
            "<" => Op::Lt,
            "<=" => Op::Le,
            ">" => Op::Gt,
            ">=" => Op::Ge,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum Step {
    At { at: String, text: String, cmd: Command },
    Assert { query: Vec<String>, op: Op, value: String },
}

#[derive(Debug, Clone)]
struct Line {
    no: usize,
    text: String,
    step: Step,
}

/// A parsed script. Header lines (`topo`, `tick`, `user`) must come before
/// the first timed command.
#[derive(Debug, Clone)]
pub struct Script {
    pub topo: Option<String>,
    pub tick: Option<Duration>,
    pub users: Vec<(String, String)>,
    lines: Vec<Line>,
}

const QUERIES: [&str; 14] = [
    "registered",
    "count",
    "state",
    "available",
    "events",
    "misordered",
    "duplicates",
    "last",
    "series",
    "observations",
    "trace",
    "flashed",
    "version",
    "now",
];

impl Script {
    pub fn parse(text: &str) -> Result<Script, ScenarioError> {
        let mut s = Script {
            topo: None,
            tick: None,
            users: Vec::new(),
            lines: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let no = i + 1;
            let syntax = |msg: String| ScenarioError::Syntax { line: no, msg };
            let line = raw.split(" #").next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let words = shlex::split(line).ok_or_else(|| syntax("unbalanced quotes".into()))?;
            let header = s.lines.is_empty();
            match words[0].as_str() {
                "topo" if header => {
                    let [_, file] = &words[..] else { return Err(syntax("usage: topo <file>".into())) };
                    s.topo = Some(file.clone());
                }
                "tick" if header => {
                    let [_, d] = &words[..] else { return Err(syntax("usage: tick <duration>".into())) };
                    s.tick = Some(dur(d).map_err(syntax)?);
                }
                "user" if header => {
                    let [_, name, cred] = &words[..] else {
                        return Err(syntax("usage: user <name> <credential>".into()));
                    };
                    s.users.push((name.clone(), cred.clone()));
                }
                "topo" | "tick" | "user" => return Err(syntax(format!("{} must precede the first command", words[0]))),
                "at" => {
                    if words.len() < 3 {
                        return Err(syntax("usage: at <time> <command>".into()));
                    }
                    let at = words[1].clone();
                    parse_instant(&at, SimTime::ZERO).map_err(|e| syntax(e.to_string()))?;
                    let cmd = Command::try_parse_from(&words[2..]).map_err(|e| {
                        syntax(e.render().to_string().lines().next().unwrap_or("bad command").to_string())
                    })?;
                    s.lines.push(Line {
                        no,
                        text: line.to_string(),
                        step: Step::At {
                            at,
                            text: words[2..].join(" "),
                            cmd,
                        },
                    });
                }
                "assert" => {
                    if words.len() < 4 {
                        return Err(syntax("usage: assert <query> <op> <value>".into()));
                    }
                    let n = words.len();
                    let op = Op::parse(&words[n - 2]).ok_or_else(|| syntax(format!("unknown operator {:?}", words[n - 2])))?;
                    let query = words[1..n - 2].to_vec();
                    if !QUERIES.contains(&query[0].as_str()) {
                        return Err(syntax(format!("unknown query {:?}", query[0])));
                    }
                    s.lines.push(Line {
                        no,
                        text: line.to_string(),
                        step: Step::Assert {
                            query,
                            op,
                            value: words[n - 1].clone(),
                        },
                    });
                }
                other => return Err(syntax(format!("unknown directive {other:?}"))),
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Script, ScenarioError> {
        Script::parse(&std::fs::read_to_string(path)?)
    }
}

/// Finds a topology file named by a script: as given, next to the script,
/// then in a `seeds` directory beside or above it.
pub fn locate(name: &str, script_dir: &Path) -> Option<PathBuf> {
    let direct = PathBuf::from(name);
    let candidates = [
        direct.clone(),
        script_dir.join(name),
        script_dir.join("seeds").join(name),
        script_dir.join("../seeds").join(name),
    ];
    candidates.into_iter().find(|p| p.is_file())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertOutcome {
    pub line: usize,
    pub text: String,
    pub actual: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub asserts: Vec<AssertOutcome>,
    /// Commands that returned an error, as (line, kind).
    pub command_errors: Vec<(usize, String)>,
    pub end: SimTime,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.asserts.iter().all(|a| a.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Num(f64),
    Text(String),
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Num(n) => write!(f, "{n}"),
            Val::Text(t) => f.write_str(t),
        }
    }
}

fn compare(actual: &Val, op: Op, want: &str) -> bool {
    let ord = match (actual, want.parse::<f64>()) {
        (Val::Num(a), Ok(b)) => a.partial_cmp(&b),
        (Val::Text(a), _) => {
            let eq = a.eq_ignore_ascii_case(want);
            return match op {
                Op::Eq => eq,
                Op::Ne => !eq,
                _ => false,
            };
        }
        (Val::Num(_), Err(_)) => return op == Op::Ne,
    };
    let Some(ord) = ord else { return false };
    use std::cmp::Ordering::*;
    match op {
        Op::Eq => ord == Equal,
        Op::Ne => ord != Equal,
        Op::Lt => ord == Less,
        Op::Le => ord != Greater,
        Op::Gt => ord == Greater,
        Op::Ge => ord != Less,
    }
}

/// Runs a script against a testbed it builds from the script's header.
/// `topo` overrides the header's topology.
pub fn run_file(path: &Path, topo: Option<&Path>, out: &mut dyn Write) -> Result<Report, ScenarioError> {
    let script = Script::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let topo = match topo {
        Some(t) => t.to_path_buf(),
        None => {
            let name = script.topo.as_deref().ok_or(ScenarioError::Syntax {
                line: 0,
                msg: "no topo line and no topology given".into(),
            })?;
            locate(name, dir).ok_or_else(|| TestbedError::Topology(format!("{name} not found")))?
        }
    };
    let mut cfg = TestbedConfig::default();
    if let Some(t) = script.tick {
        cfg.tick = t;
    }
    if !script.users.is_empty() {
        cfg.users = script.users.clone();
    }
    let mut bed = Testbed::from_seed(&topo, cfg)?;
    Runner::new(&mut bed, script).run(out)
}

pub struct Runner<'a> {
    bed: &'a mut Testbed,
    script: Script,
    last: String,
    reservations: BTreeMap<String, (u64, String)>,
    sessions: BTreeMap<String, u32>,
    flashed: BTreeMap<String, usize>,
}

impl<'a> Runner<'a> {
    pub fn new(bed: &'a mut Testbed, script: Script) -> Self {
        Runner {
            bed,
            script,
            last: "ok".into(),
            reservations: BTreeMap::new(),
            sessions: BTreeMap::new(),
            flashed: BTreeMap::new(),
        }
    }

    pub fn run(mut self, out: &mut dyn Write) -> Result<Report, ScenarioError> {
        let mut report = Report::default();
        let lines = std::mem::take(&mut self.script.lines);
        for line in lines {
            match line.step {
                Step::At { at, text, cmd } => {
                    let t = parse_instant(&at, self.bed.now())?;
                    self.bed.run_to(t);
                    let result = self.exec(cmd);
                    self.last = match &result {
                        Ok(()) => "ok".into(),
                        Err(e) => e.kind().to_string(),
                    };
                    match result {
                        Ok(()) => writeln!(out, "{:>12} {text}: ok", self.bed.now().to_string())?,
                        Err(e) => {
                            writeln!(out, "{:>12} {text}: {} ({e})", self.bed.now().to_string(), e.kind())?;
                            report.command_errors.push((line.no, e.kind().to_string()));
                        }
                    }
                }
                Step::Assert { query, op, value } => {
                    let actual = match self.query(&query) {
                        Ok(v) => v,
                        Err(e) => Val::Text(format!("error:{}", e.kind())),
                    };
                    let passed = compare(&actual, op, &value);
                    writeln!(
                        out,
                        "{:>12} {} line {}: {} (got {actual})",
                        self.bed.now().to_string(),
                        if passed { "PASS" } else { "FAIL" },
                        line.no,
                        line.text
                    )?;
                    report.asserts.push(AssertOutcome {
                        line: line.no,
                        text: line.text,
                        actual: actual.to_string(),
                        passed,
                    });
                }
            }
        }
        report.end = self.bed.now();
        Ok(report)
    }

    fn exec(&mut self, cmd: Command) -> Result<(), TestbedError> {
        let bed = &mut *self.bed;
        match cmd {
            Command::Wait => Ok(()),
            Command::Up { limit } => bed.bring_up(limit),
            Command::Weather { sky, peak, ramp } => {
                let w = match sky {
                    Sky::Rain => Weather::Rain,
                    Sky::Mild => Weather::Mild,
                    Sky::Dry => Weather::Dry {
                        peak: peak.ok_or_else(|| TestbedError::BadRequest("dry weather needs --peak".into()))?,
                        ramp,
                    },
                };
                let now = bed.now();
                bed.world.environment.set_weather(now, w);
                Ok(())
            }
            Command::Fault { op: FaultOp::Inject { target, kind, loss } } => {
                let k = parse_fault(&kind, loss)?;
                bed.inject_fault(&target, k)
            }
            Command::Bus { link } => {
                bed.broker.set_available(link == Link::Up);
                Ok(())
            }
            Command::Reserve {
                urns,
                from,
                dur,
                name,
                user,
                credential,
            } => {
                let (u, c) = self.credentials(user, credential)?;
                let g = self.bed.reserve(&u, &c, &urns, &from, dur)?;
                if let Some(n) = name {
                    self.reservations.insert(n, (g.id, g.key));
                }
                Ok(())
            }
            Command::Cancel { name } => {
                let (id, _) = self.reservation(&name)?;
                let (u, c) = self.credentials(None, None)?;
                self.bed.cancel(&u, &c, id)
            }
            Command::Session { op } => self.session(op),
            Command::Timeouts {
                invalidation,
                deletion,
                configurator,
            } => {
                let mut t: Timeouts = bed.portal.timeouts();
                if let Some(d) = invalidation {
                    t.invalidation_ms = d.as_millis() as u64;
                }
                if let Some(d) = deletion {
                    t.deletion_ms = d.as_millis() as u64;
                }
                if let Some(d) = configurator {
                    t.configurator_ms = d.as_millis() as u64;
                }
                bed.set_timeouts(t);
                Ok(())
            }
            Command::Reject { urn, side } => {
                let urn = bed.resolve(&urn)?;
                match side {
                    Side::Experiment => bed.exp.reject(urn),
                    Side::Service => bed.svc.reject(urn),
                }
                Ok(())
            }
        }
    }

    fn credentials(&self, user: Option<String>, credential: Option<String>) -> Result<(String, String), TestbedError> {
        let users = if self.script.users.is_empty() {
            TestbedConfig::default().users
        } else {
            self.script.users.clone()
        };
        let user = user.unwrap_or_else(|| users[0].0.clone());
        let credential = credential
            .or_else(|| users.iter().find(|(u, _)| *u == user).map(|(_, c)| c.clone()))
            .unwrap_or_default();
        Ok((user, credential))
    }

    fn reservation(&self, name: &str) -> Result<(u64, String), TestbedError> {
        self.reservations
            .get(name)
            .cloned()
            .ok_or_else(|| TestbedError::NotFound(format!("no reservation named {name:?}")))
    }

    fn session_id(&self, name: &str) -> Result<u32, TestbedError> {
        self.sessions
            .get(name)
            .copied()
            .ok_or_else(|| TestbedError::NotFound(format!("no open session {name:?}")))
    }

    fn session(&mut self, op: SessionOp) -> Result<(), TestbedError> {
        match op {
            SessionOp::Open { name } => {
                let (_, key) = self.reservation(&name)?;
                let id = self.bed.open_session(&key, None)?;
                self.sessions.insert(name, id);
                Ok(())
            }
            SessionOp::Send { name, urn, payload } => {
                let id = self.session_id(&name)?;
                self.bed.send(id, &urn, payload.as_bytes())
            }
            SessionOp::Reset { name, urn } => {
                let id = self.session_id(&name)?;
                self.bed.reset(id, &urn)
            }
            SessionOp::Flash {
                name,
                behavior,
                size,
                mode,
                targets,
                version,
            } => {
                let id = self.session_id(&name)?;
                let image = NodeImage::new(
                    format!("{name}-v{version}"),
                    version,
                    behavior,
                    (0..size).map(|i| (i % 251) as u8).collect(),
                );
                let mode = parse_mode(&mode)?;
                let out = self.bed.flash(id, mode, &targets, &image);
                let done = match &out {
                    Ok(o) => o.completed.len(),
                    Err(_) => self
                        .bed
                        .runtime
                        .session(id)
                        .and_then(|s| s.last_flash.as_ref())
                        .map_or(0, |r| r.completed.len()),
                };
                self.flashed.insert(name, done);
                out.map(|_| ())
            }
        }
    }

    fn query(&self, q: &[String]) -> Result<Val, TestbedError> {
        let bed = &*self.bed;
        let arg = |i: usize| {
            q.get(i)
                .map(String::as_str)
                .ok_or_else(|| TestbedError::BadRequest(format!("{} needs more arguments", q[0])))
        };
        let num = |n: usize| Ok(Val::Num(n as f64));
        match q[0].as_str() {
            "registered" => num(bed.portal.rd().len()),
            "count" => {
                let pairs: Vec<(&str, &str)> = q[1..]
                    .iter()
                    .map(|p| p.split_once('=').unwrap_or((p.as_str(), "")))
                    .collect();
                let query = Query::from_pairs(pairs)?;
                num(bed.portal.rd().count(&query))
            }
            "state" => {
                let urn = bed.resolve(arg(1)?)?;
                Ok(Val::Text(bed.state(&urn).map_or("absent", |s| s.as_str()).to_string()))
            }
            "available" => match q.get(1) {
                None => num(bed.runtime.available_nodes().count()),
                Some(id) => Ok(Val::Text(bed.runtime.is_available(&bed.resolve(id)?).to_string())),
            },
            "events" => num(bed.broker.count(arg(1)?)),
            "misordered" => num(bed.misordered().len()),
            "duplicates" => {
                let all: Vec<_> = bed.portal.rd().scan().map(|d| d.urn.clone()).collect();
                let distinct: BTreeSet<_> = all.iter().collect();
                num(all.len() - distinct.len())
            }
            "last" => Ok(Val::Text(self.last.clone())),
            "series" | "observations" => {
                let (phen, from, to, agg) = if q[0] == "series" {
                    (arg(2)?, arg(3)?, arg(4)?, Some(arg(1)?.parse::<Aggregate>()?))
                } else {
                    (arg(1)?, arg(2)?, arg(3)?, None)
                };
                let from = parse_instant(from, bed.now())?;
                let to = parse_instant(to, bed.now())?;
                let mut hq = HistoryQuery::raw(Filter::phenomenon(phen), from, to);
                if let Some(a) = agg {
                    hq = hq.aggregated(a, None);
                }
                match bed.store.query_history(&hq)? {
                    Series::Raw(v) => num(v.len()),
                    Series::Aggregated(v) => Ok(v.first().map_or(Val::Text("none".into()), |w| Val::Num(w.value))),
                }
            }
            "trace" => {
                let id = self.session_id(arg(1)?)?;
                num(bed.runtime.session(id).map_or(0, |s| s.trace.len()))
            }
            "flashed" => num(self.flashed.get(arg(1)?).copied().unwrap_or(0)),
            "version" => {
                let urn = bed.resolve(arg(1)?)?;
                let node = bed.world.node(&urn).ok_or_else(|| TestbedError::NotFound(urn.to_string()))?;
                num(node.installed.version as usize)
            }
            "now" => Ok(Val::Num(bed.now().as_millis() as f64 / 1000.0)),
            other => Err(TestbedError::BadRequest(format!("unknown query {other:?}"))),
        }
    }
}
