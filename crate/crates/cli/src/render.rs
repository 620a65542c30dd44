//! Output. Human mode is for reading; machine mode prints one record per
//! line with a fixed field order and nothing else.

use std::io::Write;
use std::net::SocketAddr;

use serde_json::Value;

/// Prints one line. A closed pipe (`citytb ... | head`) ends the process
/// quietly instead of panicking.
pub fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

macro_rules! say {
    ($($t:tt)*) => { emit(&format!($($t)*)) };
}

pub struct Out {
    pub machine: bool,
}

fn parse(body: &str) -> Value {
    serde_json::from_str(body).unwrap_or(Value::String(body.to_string()))
}

fn lines(body: &str) -> impl Iterator<Item = Value> + '_ {
    body.lines().filter(|l| !l.trim().is_empty()).map(parse)
}

/// Simulated milliseconds as `[Nd ]HH:MM:SS[.mmm]`.
fn clock(v: &Value) -> String {
    let Some(ms) = v.as_u64() else { return v.to_string() };
    let (s, milli) = (ms / 1000, ms % 1000);
    let (d, h, m, sec) = (s / 86_400, s / 3600 % 24, s / 60 % 60, s % 60);
    let mut out = if d > 0 { format!("{d}d ") } else { String::new() };
    out.push_str(&format!("{h:02}:{m:02}:{sec:02}"));
    if milli > 0 {
        out.push_str(&format!(".{milli:03}"));
    }
    out
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

impl Out {
    pub fn line(&self, l: &str) {
        say!("{l}");
    }

    pub fn done(&self, msg: &str) {
        if !self.machine {
            say!("{msg}");
        }
    }

    pub fn json(&self, body: &str) {
        if self.machine {
            say!("{}", parse(body));
        } else {
            say!("{}", serde_json::to_string_pretty(&parse(body)).unwrap_or_default());
        }
    }

    pub fn listening(&self, url: &str, bus: Option<SocketAddr>) {
        if self.machine {
            say!("{url}");
        } else {
            say!("listening on {url}");
            if let Some(b) = bus {
                say!("management bus on {b}");
            }
        }
    }

    /// Resource descriptions come as `key=value` blocks separated by blank
    /// lines; machine mode puts each on one tab-separated line.
    pub fn docs(&self, body: &str) {
        let blocks = body.split("\n\n").map(str::trim).filter(|b| !b.is_empty());
        if self.machine {
            for b in blocks {
                say!("{}", b.lines().collect::<Vec<_>>().join("\t"));
            }
        } else {
            let all: Vec<&str> = blocks.collect();
            say!("{}", all.join("\n\n"));
            eprintln!("{} resource(s)", all.len());
        }
    }

    pub fn summary(&self, body: &str) {
        for v in lines(body) {
            if self.machine {
                say!("{v}");
            } else {
                say!("{:<10} {:<16} {:>6}", text(&v["state"]), text(&v["role"]), text(&v["count"]));
            }
        }
    }

    pub fn granted(&self, body: &str) {
        let v = parse(body);
        if self.machine {
            say!("{v}");
        } else {
            say!(
                "reservation {} from {} to {}\nkey {}",
                v["id"],
                clock(&v["start"]),
                clock(&v["end"]),
                text(&v["key"])
            );
        }
    }

    pub fn availability(&self, body: &str) {
        for v in lines(body) {
            if self.machine {
                say!("{v}");
                continue;
            }
            let busy = v["busy"].as_array().cloned().unwrap_or_default();
            if busy.is_empty() {
                say!("{}  free", text(&v["urn"]));
            } else {
                let slots: Vec<String> = busy
                    .iter()
                    .map(|s| format!("{}..{} (#{})", clock(&s["start"]), clock(&s["end"]), s["reservation"]))
                    .collect();
                say!("{}  busy {}", text(&v["urn"]), slots.join(", "));
            }
        }
    }

    pub fn opened(&self, body: &str) {
        let v = parse(body);
        if self.machine {
            say!("{v}");
        } else {
            say!("session {} at {}", v["session"], text(&v["endpoint"]));
        }
    }

    pub fn flashed(&self, body: &str) {
        let v = parse(body);
        if self.machine {
            say!("{v}");
            return;
        }
        let done = v["completed"].as_array().map_or(0, Vec::len);
        let failed: Vec<String> = v["failed"].as_array().into_iter().flatten().map(text).collect();
        say!(
            "{done} node(s) flashed in {} rounds ({} chunks, {} data and {} ack frames)",
            v["rounds"], v["chunks"], v["data_frames"], v["ack_frames"]
        );
        if !failed.is_empty() {
            say!("failed: {}", failed.join(", "));
        }
    }

    pub fn trace(&self, l: &str) {
        if self.machine {
            say!("{l}");
            return;
        }
        let v = parse(l);
        say!("{} {:<6} {} {}", clock(&v["at"]), text(&v["direction"]), text(&v["urn"]), text(&v["text"]));
    }

    pub fn event(&self, l: &str) {
        if self.machine {
            say!("{l}");
            return;
        }
        let v = parse(l);
        let mut s = format!(
            "{:>6} {} {:<24} {}",
            text(&v["seq"]),
            clock(&v["at"]),
            text(&v["event_type"]),
            text(&v["urn"])
        );
        if let Some(ok) = v["ok"].as_bool() {
            s.push_str(if ok { " ok" } else { " refused" });
        }
        if let Some(c) = v["cause"].as_str() {
            s.push_str(&format!(" ({c})"));
        }
        say!("{s}");
    }

    pub fn change(&self, l: &str) {
        if self.machine {
            say!("{l}");
        } else {
            let v = parse(l);
            say!("{} {}", text(&v["change"]), text(&v["urn"]));
        }
    }

    pub fn series(&self, body: &str) {
        let v = parse(body);
        let points = v["points"].as_array().cloned().unwrap_or_default();
        for p in points {
            if self.machine {
                say!("{p}");
            } else if v["kind"] == "raw" {
                say!(
                    "{} {} {}={} {}",
                    clock(&p["timestamp"]),
                    text(&p["source"]),
                    text(&p["phenomenon"]),
                    text(&p["value"]),
                    text(&p["unit"])
                );
            } else {
                say!(
                    "{}..{} n={} {}",
                    clock(&p["start"]),
                    clock(&p["end"]),
                    text(&p["count"]),
                    text(&p["value"])
                );
            }
        }
    }

    pub fn heatmap(&self, body: &str) {
        let v = parse(body);
        let cols = v["grid"]["cols"].as_u64().unwrap_or(1).max(1) as usize;
        let cells = v["cells"].as_array().cloned().unwrap_or_default();
        if self.machine {
            for (i, c) in cells.iter().enumerate() {
                say!("{}\t{}\t{}", i / cols, i % cols, text(c));
            }
            return;
        }
        say!("{} at {} from {} source(s), north up", text(&v["phenomenon"]), clock(&v["at"]), v["sources"]);
        // Stored from the south-west corner; print the northern row first.
        for row in cells.chunks(cols).rev() {
            let r: Vec<String> = row
                .iter()
                .map(|c| c.as_f64().map_or("     .".into(), |x| format!("{x:6.1}")))
                .collect();
            say!("{}", r.join(" "));
        }
    }
}
