//! `citytb`: run a testbed locally, or drive a running one over HTTP.
//!
//! Exit status: 0 on success, 1 for usage and local errors, 2 when the
//! server refuses a request or cannot be reached, 3 when a scenario
//! assertion fails.

mod args;
mod client;
mod render;

use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use serde_json::{json, Value};

use args::{Asi, Cli, Command, Fault, Filters, Resources, Scenario, Session, UpArgs};
use citytb_core::parse_duration;
use citytb_testbed::{scenario, Server, ServerConfig, Testbed, TestbedConfig};
use client::Client;
use render::Out;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Remote(String),
    Assertions(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Remote(_) => 2,
            Failure::Assertions(_) => 3,
        }
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Remote(m) => eprintln!("citytb: {m}"),
                Failure::Assertions(n) => eprintln!("citytb: {n} assertion(s) failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let out = Out { machine: cli.machine };
    let c = Client::new(&cli.server);
    match cli.command {
        Command::Up(a) => up(a, &out),
        Command::Resources(r) => resources(&c, &out, r),
        Command::Fault(Fault::Inject { target, kind, loss }) => {
            c.post_json("/admin/faults", &json!({"target": target, "kind": kind, "loss": loss}), None)?;
            out.done(&format!("{kind} injected at {target}"));
            Ok(())
        }
        Command::Reserve(r) => {
            let body = json!({
                "user": r.credentials.user,
                "credential": r.credentials.credential,
                "urns": r.urns,
                "from": r.from,
                "dur": r.dur,
            });
            out.granted(&c.post_json("/rs/reservations", &body, None)?);
            Ok(())
        }
        Command::Cancel(a) => {
            let body = json!({"user": a.credentials.user, "credential": a.credentials.credential});
            c.post_json(&format!("/rs/reservations/{}/cancel", a.id), &body, None)?;
            out.done(&format!("reservation {} cancelled", a.id));
            Ok(())
        }
        Command::Availability { from, to } => {
            let mut q = vec![("from".to_string(), from)];
            if let Some(t) = to {
                q.push(("to".into(), t));
            }
            out.availability(&c.get("/rs/availability", &q)?);
            Ok(())
        }
        Command::Nodes => {
            out.json(&c.get("/rs/nodes", &[])?);
            Ok(())
        }
        Command::Session(s) => session(&c, &out, s),
        Command::Asi(a) => asi(&c, &out, a),
        Command::Timeouts {
            invalidation,
            deletion,
            configurator,
        } => {
            let ms = |v: Option<String>| -> Result<Option<u64>, Failure> {
                v.map(|t| parse_duration(&t).map(|d| d.as_millis() as u64).map_err(usage))
                    .transpose()
            };
            let patch = json!({
                "invalidation_ms": ms(invalidation)?,
                "deletion_ms": ms(deletion)?,
                "configurator_ms": ms(configurator)?,
            });
            let unchanged = patch.as_object().unwrap().values().all(Value::is_null);
            let body = if unchanged {
                c.get("/admin/timeouts", &[])?
            } else {
                c.post_json("/admin/timeouts", &patch, None)?
            };
            out.json(&body);
            Ok(())
        }
        Command::Events { since, follow } => {
            let mut next = since;
            loop {
                let body = c.get("/admin/events", &[("since".into(), next.to_string())])?;
                for line in body.lines().filter(|l| !l.is_empty()) {
                    out.event(line);
                    if let Some(seq) = serde_json::from_str::<Value>(line).ok().and_then(|v| v["seq"].as_u64()) {
                        next = seq + 1;
                    }
                }
                if !follow {
                    return Ok(());
                }
                std::thread::sleep(Duration::from_millis(500));
            }
        }
        Command::Health => {
            out.json(&c.get("/admin/health", &[])?);
            Ok(())
        }
        Command::Scenario(Scenario::Run { file, topo }) => {
            let mut stdout = std::io::stdout();
            let report = scenario::run_file(&file, topo.as_deref(), &mut stdout).map_err(usage)?;
            let failed = report.asserts.iter().filter(|a| !a.passed).count();
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Assertions(failed.max(report.command_errors.len())))
            }
        }
    }
}

fn find_topology(p: &Path) -> Result<PathBuf, Failure> {
    if p.exists() {
        return Ok(p.to_path_buf());
    }
    let under = Path::new("seeds").join(p);
    if under.exists() {
        return Ok(under);
    }
    Err(usage(format!("topology {} not found", p.display())))
}

fn up(a: UpArgs, out: &Out) -> Result<(), Failure> {
    let topo = find_topology(&a.topo)?;
    let mut cfg = TestbedConfig {
        tick: parse_duration(&a.tick).map_err(usage)?,
        data_dir: a.data_dir,
        bus_listen: a.bus_listen,
        agents_over_tcp: a.agents_over_tcp,
        ..TestbedConfig::default()
    };
    if let Some(path) = &a.agent_config {
        cfg.agent = citytb_mgmt::AgentConfig::load(path).map_err(usage)?;
    }
    cfg.users = a
        .users
        .iter()
        .map(|u| {
            u.split_once(':')
                .map(|(n, c)| (n.to_string(), c.to_string()))
                .ok_or_else(|| usage(format!("--user wants name:credential, got {u:?}")))
        })
        .collect::<Result<_, _>>()?;
    let mut bed = Testbed::from_seed(&topo, cfg).map_err(usage)?;
    if !a.cold {
        let limit = parse_duration(&a.ready_limit).map_err(usage)?;
        bed.bring_up(limit).map_err(usage)?;
    }
    let bus = bed.bus_server.as_ref().map(|s| s.local_addr());
    let server = Server::start(
        bed,
        ServerConfig {
            listen: a.listen,
            speed: a.speed,
        },
    )
    .map_err(usage)?;
    out.listening(&server.url(), bus);
    server.wait();
    Ok(())
}

fn filter_pairs(f: &Filters) -> Result<Vec<(String, String)>, Failure> {
    let mut q: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: &str| q.push((k.to_string(), v.to_string()));
    match f.role.as_deref() {
        Some("gateway") => push("hw.class", "gateway"),
        Some(r) => push("role", r),
        None => {}
    }
    if let Some(p) = &f.phenomenon {
        push("phenomenon", p);
    }
    if let Some(g) = &f.gateway {
        push("parent-gateway", g);
    }
    if let Some(c) = &f.connection {
        push("connection.type", c);
    }
    if let Some(c) = &f.class {
        push("hw.class", c);
    }
    if let Some(s) = &f.state {
        push("state", s);
    }
    if let Some(n) = &f.near {
        let parts: Vec<&str> = n.split(',').map(str::trim).collect();
        let [lat, lon, r] = parts[..] else {
            return Err(usage(format!("--near wants lat,lon,radius, got {n:?}")));
        };
        push("lat", lat);
        push("lon", lon);
        push("radius", r);
    }
    q.extend(split_pairs(&f.pairs)?);
    Ok(q)
}

fn split_pairs(raw: &[String]) -> Result<Vec<(String, String)>, Failure> {
    raw.iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| usage(format!("expected key=value, got {p:?}")))
        })
        .collect()
}

fn form(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("&")
}

fn read_input(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(usage)?;
        return Ok(s);
    }
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Polls a subscription until `count` lines have been printed, or forever.
fn poll_subscription(c: &Client, path: &str, count: Option<usize>, mut each: impl FnMut(&str)) -> Result<(), Failure> {
    let mut seen = 0;
    loop {
        for line in c.get(path, &[])?.lines().filter(|l| !l.is_empty()) {
            each(line);
            seen += 1;
            if count.is_some_and(|n| seen >= n) {
                return Ok(());
            }
        }
        std::thread::sleep(Duration::from_millis(500));
    }
}

fn created_id(body: &str) -> Result<u64, Failure> {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v["id"].as_u64())
        .ok_or_else(|| Failure::Remote(format!("unexpected reply {body:?}")))
}

fn resources(c: &Client, out: &Out, r: Resources) -> Result<(), Failure> {
    match r {
        Resources::List(f) => out.docs(&c.get("/rd/resources", &filter_pairs(&f)?)?),
        Resources::Get { urn } => out.docs(&c.get(&format!("/rd/resources/{urn}"), &[])?),
        Resources::Summary => out.summary(&c.get("/admin/resources-summary", &[])?),
        Resources::Put { file } => {
            let uri = c.post_text("/rd/resources", &read_input(&file)?)?;
            out.done(&uri);
        }
        Resources::Update { urn, file } => {
            c.put_text(&format!("/rd/resources/{urn}"), &read_input(&file)?)?;
            out.done(&format!("{urn} updated"));
        }
        Resources::Delete { urn } => {
            c.delete(&format!("/rd/resources/{urn}"))?;
            out.done(&format!("{urn} deleted"));
        }
        Resources::Watch { filters, count } => {
            let id = created_id(&c.post_text("/rd/subscriptions", &form(&filter_pairs(&filters)?))?)?;
            poll_subscription(c, &format!("/rd/subscriptions/{id}"), count, |l| out.change(l))?;
        }
    }
    Ok(())
}

fn session(c: &Client, out: &Out, s: Session) -> Result<(), Failure> {
    match s {
        Session::Open { key, controller } => {
            let body = json!({"key": key.key, "controller_url": controller});
            out.opened(&c.post_json("/rs/sessions", &body, None)?);
        }
        Session::Send {
            id,
            urn,
            payload,
            hex,
            key,
        } => {
            let body = if hex {
                json!({"urn": urn, "payload_hex": payload})
            } else {
                json!({"urn": urn, "payload": payload})
            };
            c.post_json(&format!("/rs/sessions/{id}/send"), &body, Some(&key.key))?;
            out.done("sent");
        }
        Session::Flash {
            id,
            image,
            behavior,
            mode,
            targets,
            version,
            key,
        } => {
            let bytes = std::fs::read(&image).map_err(|e| usage(format!("{}: {e}", image.display())))?;
            let image_id = image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            let q = vec![
                ("behavior".to_string(), behavior),
                ("mode".to_string(), mode),
                ("targets".to_string(), targets.join(",")),
                ("version".to_string(), version.to_string()),
                ("image_id".to_string(), image_id),
            ];
            out.flashed(&c.post_bytes(&format!("/rs/sessions/{id}/flash"), &q, &bytes, &key.key)?);
        }
        Session::Reset { id, urn, key } => {
            c.post_json(&format!("/rs/sessions/{id}/reset"), &json!({"urn": urn}), Some(&key.key))?;
            out.done(&format!("{urn} reset"));
        }
        Session::Trace(f) => feed(c, out, "trace", f)?,
        Session::Events(f) => feed(c, out, "events", f)?,
    }
    Ok(())
}

fn feed(c: &Client, out: &Out, what: &str, f: args::FeedArgs) -> Result<(), Failure> {
    let path = format!("/rs/sessions/{}/{what}", f.id);
    let mut q = vec![("since".to_string(), f.since.to_string())];
    if f.follow {
        q.push(("follow".into(), "1".into()));
        return c.follow(&path, &f.key.key, &q, |l| out.trace(l));
    }
    for line in c.get_keyed(&path, &f.key.key, &q)?.lines().filter(|l| !l.is_empty()) {
        out.trace(line);
    }
    Ok(())
}

fn asi(c: &Client, out: &Out, a: Asi) -> Result<(), Failure> {
    match a {
        Asi::Query { pairs, csv } => {
            let mut q = split_pairs(&pairs)?;
            if csv {
                q.push(("format".into(), "csv".into()));
                render::emit(c.get("/asi/observations", &q)?.trim_end());
            } else {
                out.series(&c.get("/asi/observations", &q)?);
            }
        }
        Asi::Subscribe { pairs, count } => {
            let id = created_id(&c.post_text("/asi/subscriptions", &form(&split_pairs(&pairs)?))?)?;
            poll_subscription(c, &format!("/asi/subscriptions/{id}"), count, |l| out.line(l))?;
        }
        Asi::Heatmap {
            phenomenon,
            bbox,
            cells,
            at,
        } => {
            let mut q = vec![
                ("phenomenon".to_string(), phenomenon),
                ("bbox".to_string(), bbox),
                ("cells".to_string(), cells),
            ];
            if let Some(t) = at {
                q.push(("at".into(), t));
            }
            out.heatmap(&c.get("/asi/heatmap", &q)?);
        }
    }
    Ok(())
}
