//! A running testbed: a driver thread advancing the simulated clock and an
//! HTTP server over the same state.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::bed::Testbed;
use crate::error::TestbedError;
use crate::http::{router, Shared, TraceLine};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: String,
    /// Simulated seconds per wall-clock second; 0 runs flat out.
    pub speed: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:8080".into(),
            speed: 1.0,
        }
    }
}

pub struct Server {
    addr: SocketAddr,
    shared: Shared,
    stop: Arc<AtomicBool>,
    driver: Option<thread::JoinHandle<()>>,
    http: Option<thread::JoinHandle<()>>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Server {
    pub fn start(bed: Testbed, cfg: ServerConfig) -> Result<Server, TestbedError> {
        let shared: Shared = Arc::new(Mutex::new(bed));
        let listener = std::net::TcpListener::bind(&cfg.listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(shared.clone());
        let http = thread::Builder::new().name("http".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = serve.await {
                    tracing::error!("http server: {e}");
                }
            });
        })?;
        let stop = Arc::new(AtomicBool::new(false));
        let driver = {
            let shared = shared.clone();
            let stop = stop.clone();
            thread::Builder::new()
                .name("driver".into())
                .spawn(move || drive(shared, stop, cfg.speed))?
        };
        tracing::info!(%addr, "serving");
        Ok(Server {
            addr,
            shared,
            stop,
            driver: Some(driver),
            http: Some(http),
            shutdown: Some(tx),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shared(&self) -> Shared {
        self.shared.clone()
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(h) = self.http.take() {
            let _ = h.join();
        }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.driver.take() {
            let _ = h.join();
        }
        if let Some(h) = self.http.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.halt();
    }
}

fn drive(shared: Shared, stop: Arc<AtomicBool>, speed: f64) {
    let callbacks = spawn_callback_sender();
    let mut cursors: BTreeMap<u32, usize> = BTreeMap::new();
    let started = Instant::now();
    let mut sim_elapsed = Duration::ZERO;
    while !stop.load(Ordering::SeqCst) {
        if speed > 0.0 {
            let due = sim_elapsed.div_f64(speed);
            let wall = started.elapsed();
            if wall < due {
                thread::sleep((due - wall).min(Duration::from_millis(50)));
                continue;
            }
        }
        let mut bed = shared.lock().unwrap_or_else(|p| p.into_inner());
        bed.step();
        sim_elapsed += bed.tick;
        // Controller callbacks go out in batches, off this thread.
        let targets: Vec<(u32, String)> = bed
            .runtime
            .sessions()
            .filter_map(|s| s.controller_url.clone().map(|u| (s.id, u)))
            .collect();
        for (id, url) in targets {
            let pos = cursors.entry(id).or_default();
            let events = bed.controller_events(id, *pos);
            if events.is_empty() {
                continue;
            }
            *pos += events.len();
            let body: String = events
                .iter()
                .map(|e| serde_json::to_string(&TraceLine::from(e)).expect("serializable") + "\n")
                .collect();
            let _ = callbacks.send((url, body));
        }
        drop(bed);
        if speed == 0.0 {
            // Let request handlers at the lock between steps.
            thread::yield_now();
        }
    }
}

fn spawn_callback_sender() -> mpsc::Sender<(String, String)> {
    let (tx, rx) = mpsc::channel::<(String, String)>();
    let _ = thread::Builder::new().name("callbacks".into()).spawn(move || {
        for (url, body) in rx {
            let r = ureq::post(&url)
                .header("content-type", "application/x-ndjson")
                .send(body.as_str());
            if let Err(e) = r {
                tracing::warn!(%url, "controller callback failed: {e}");
            }
        }
    });
    tx
}
