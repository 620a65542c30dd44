use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

use citytb_testbed::http::ENDPOINTS;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn citytb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citytb"))
        .args(args)
        .env_remove("CITYTB_URL")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// A served topology, killed on drop.
struct Up {
    child: Child,
    url: String,
}

impl Up {
    fn start(topo: &str) -> Up {
        let mut child = Command::new(env!("CARGO_BIN_EXE_citytb"))
            .args(["--machine", "up", "--listen", "127.0.0.1:0", "--topo"])
            .arg(root().join("seeds").join(topo))
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut first = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
        Up {
            child,
            url: first.trim().to_string(),
        }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all = vec!["--server", &self.url, "--machine"];
        all.extend_from_slice(args);
        citytb(&all)
    }
}

impl Drop for Up {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn every_endpoint_has_a_command() {
    for (method, path, cmd) in ENDPOINTS {
        let mut args: Vec<&str> = cmd.split(' ').collect();
        args.push("--help");
        let o = citytb(&args);
        assert_eq!(code(&o), 0, "{method} {path}: `citytb {cmd}` missing");
    }
    assert_eq!(code(&citytb(&["scenario", "run", "--help"])), 0);
    assert_eq!(code(&citytb(&["up", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&citytb(&["frobnicate"])), 1);
    assert_eq!(code(&citytb(&["reserve", "--urns", "n001"])), 1);
    assert_eq!(code(&citytb(&["up", "--topo", "no-such.topo"])), 1);
}

#[test]
fn unreachable_server_exits_two() {
    let o = citytb(&["--server", "http://127.0.0.1:9", "health"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn served_topology_answers_the_client() {
    let up = Up::start("small.topo");
    let o = up.run(&["resources", "list", "--role", "gateway"]);
    assert_eq!(code(&o), 0);
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2, "{lines:?}");
    assert!(lines.iter().all(|l| l.starts_with("urn=") && l.contains("\thw.class=gateway")));

    let health: serde_json::Value = serde_json::from_str(stdout(&up.run(&["health"])).trim()).unwrap();
    assert_eq!(health["registered"], 22);

    let first = up.run(&["reserve", "--urns", "n001,n002", "--dur", "1h"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let granted: serde_json::Value = serde_json::from_str(stdout(&first).trim()).unwrap();
    let second = up.run(&["reserve", "--urns", "n002", "--dur", "1h"]);
    assert_eq!(code(&second), 2);
    assert!(String::from_utf8_lossy(&second.stderr).contains("Conflict"));

    let key = granted["key"].as_str().unwrap();
    let opened = up.run(&["session", "open", "--key", key]);
    assert_eq!(code(&opened), 0);
    let session: serde_json::Value = serde_json::from_str(stdout(&opened).trim()).unwrap();
    let id = session["session"].to_string();
    assert_eq!(code(&up.run(&["session", "send", &id, "n001", "hello", "--key", key])), 0);
    let trace = up.run(&["session", "trace", &id, "--key", key]);
    assert!(stdout(&trace).lines().any(|l| l.contains("hello")));
    assert_eq!(code(&up.run(&["session", "send", &id, "n001", "x", "--key", &"00".repeat(32)])), 2);

    let avail = up.run(&["availability", "--from", "0s", "--to", "30d"]);
    assert_eq!(stdout(&avail).lines().count(), 14);
    assert_eq!(code(&up.run(&["fault", "inject", "n003", "node-death"])), 0);
    assert_eq!(code(&up.run(&["fault", "inject", "n003", "meteor"])), 2);
    assert_eq!(code(&up.run(&["cancel", &granted["id"].to_string()])), 0);
}

#[test]
fn scenario_run_reports_through_the_exit_status() {
    let o = citytb(&["scenario", "run"]);
    assert_eq!(code(&o), 1);
    let script = root().join("scenarios/registration_storm.scn");
    let o = citytb(&["scenario", "run", script.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l.contains("PASS line")));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(
        &bad,
        format!("topo {}\nat 0s up --limit 10m\nassert registered == 21\n", root().join("seeds/small.topo").display()),
    )
    .unwrap();
    let o = citytb(&["scenario", "run", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
}
