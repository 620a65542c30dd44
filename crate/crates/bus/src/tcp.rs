//! TCP transport for the broker.
//!
//! Every message is `[u32 length including itself][u8 op][body]`, integers
//! big-endian. A connection either publishes (PUBLISH, answered by OK or
//! ERROR) or carries exactly one subscription (SUBSCRIBE, then a stream of
//! DELIVER from the broker and ACK from the client).

use std::io::{BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::broker::{Broker, Delivery, EventBus, EventStream, Filter};
use crate::error::BusError;
use crate::event::ManagementEvent;
use crate::registry::Topic;
use crate::wire::{decode_event, encode_event};

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";
pub const ADDR_ENV: &str = "CITYTB_BUS_ADDR";

pub const OP_PUBLISH: u8 = 1;
pub const OP_SUBSCRIBE: u8 = 2;
pub const OP_ACK: u8 = 3;
pub const OP_DELIVER: u8 = 4;
pub const OP_OK: u8 = 5;
pub const OP_ERROR: u8 = 6;

const ERR_UNAVAILABLE: u8 = 1;
const ERR_UNKNOWN_TYPE: u8 = 2;
const ERR_TOPIC: u8 = 3;
const ERR_OTHER: u8 = 9;

/// Bus address from `CITYTB_BUS_ADDR`, else the default.
pub fn bus_addr() -> String {
    std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string())
}

fn write_msg(w: &mut impl Write, op: u8, body: &[u8]) -> std::io::Result<()> {
    let len = (5 + body.len()) as u32;
    let mut buf = Vec::with_capacity(len as usize);
    buf.extend_from_slice(&len.to_be_bytes());
    buf.push(op);
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

fn read_msg(r: &mut impl Read) -> std::io::Result<(u8, Vec<u8>)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len < 5 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "short message"));
    }
    let mut op = [0u8; 1];
    r.read_exact(&mut op)?;
    let mut body = vec![0u8; len - 5];
    r.read_exact(&mut body)?;
    Ok((op[0], body))
}

fn topic_from(b: u8) -> Result<Topic, BusError> {
    Topic::ALL
        .get(b as usize)
        .copied()
        .ok_or_else(|| BusError::Protocol(format!("bad topic index {b}")))
}

fn encode_error(e: &BusError) -> Vec<u8> {
    let (code, text) = match e {
        BusError::Unavailable => (ERR_UNAVAILABLE, String::new()),
        BusError::UnknownEventType(t) => (ERR_UNKNOWN_TYPE, t.clone()),
        BusError::TopicMismatch {
            event_type,
            expected,
            got,
        } => (ERR_TOPIC, format!("{event_type} {expected} {got}")),
        other => (ERR_OTHER, other.to_string()),
    };
    let mut body = vec![code];
    body.extend_from_slice(text.as_bytes());
    body
}

fn decode_error(body: &[u8]) -> BusError {
    let text = String::from_utf8_lossy(body.get(1..).unwrap_or_default()).to_string();
    match body.first() {
        Some(&ERR_UNAVAILABLE) => BusError::Unavailable,
        Some(&ERR_UNKNOWN_TYPE) => BusError::UnknownEventType(text),
        Some(&ERR_TOPIC) => {
            let parts: Vec<&str> = text.split(' ').collect();
            match parts.as_slice() {
                [ev, expected, got] => match (expected.parse(), got.parse()) {
                    (Ok(expected), Ok(got)) => BusError::TopicMismatch {
                        event_type: ev.to_string(),
                        expected,
                        got,
                    },
                    _ => BusError::Protocol(text),
                },
                _ => BusError::Protocol(text),
            }
        }
        _ => BusError::Protocol(text),
    }
}

/// Serves a broker on a TCP port until dropped.
pub struct BusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<thread::JoinHandle<()>>,
}

impl BusServer {
    pub fn bind(addr: impl ToSocketAddrs, broker: Arc<Broker>) -> Result<BusServer, BusError> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::Builder::new()
            .name("bus-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let broker = broker.clone();
                    let flag = flag.clone();
                    let _ = thread::Builder::new()
                        .name("bus-conn".into())
                        .spawn(move || {
                            if let Err(e) = serve(conn, broker, flag) {
                                tracing::debug!("bus connection ended: {e}");
                            }
                        });
                }
            })?;
        Ok(BusServer {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(conn: TcpStream, broker: Arc<Broker>, stop: Arc<AtomicBool>) -> Result<(), BusError> {
    conn.set_nodelay(true)?;
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut writer = conn;
    loop {
        let (op, body) = read_msg(&mut reader)?;
        match op {
            OP_PUBLISH => {
                let result = (|| {
                    let topic = topic_from(*body.first().ok_or(BusError::Protocol("empty".into()))?)?;
                    let event = decode_event(&body[1..]).map_err(|e| match e {
                        crate::wire::DecodeError::UnknownEventType(t) => BusError::UnknownEventType(t),
                        other => BusError::Protocol(other.to_string()),
                    })?;
                    broker.publish(topic, &event)
                })();
                match result {
                    Ok(seq) => write_msg(&mut writer, OP_OK, &seq.to_be_bytes())?,
                    Err(e) => write_msg(&mut writer, OP_ERROR, &encode_error(&e))?,
                }
            }
            OP_SUBSCRIBE => return serve_subscription(body, reader, writer, broker, stop),
            other => return Err(BusError::Protocol(format!("unexpected op {other}"))),
        }
    }
}

fn parse_subscribe(body: &[u8]) -> Result<(bool, Topic, String, Option<Filter>), BusError> {
    let bad = || BusError::Protocol("malformed SUBSCRIBE".into());
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], BusError> {
        let s = body.get(pos..pos + n).ok_or_else(bad)?;
        pos += n;
        Ok(s)
    };
    let durable = take(1)?[0] == 1;
    let topic = topic_from(take(1)?[0])?;
    let n = u16::from_be_bytes(take(2)?.try_into().unwrap()) as usize;
    let id = String::from_utf8(take(n)?.to_vec()).map_err(|_| bad())?;
    let count = u16::from_be_bytes(take(2)?.try_into().unwrap());
    let filter = if count == u16::MAX {
        None
    } else {
        let mut f = Filter::new();
        for _ in 0..count {
            let n = u16::from_be_bytes(take(2)?.try_into().unwrap()) as usize;
            f.insert(String::from_utf8(take(n)?.to_vec()).map_err(|_| bad())?);
        }
        Some(f)
    };
    Ok((durable, topic, id, filter))
}

fn serve_subscription(
    body: Vec<u8>,
    mut reader: BufReader<TcpStream>,
    mut writer: TcpStream,
    broker: Arc<Broker>,
    stop: Arc<AtomicBool>,
) -> Result<(), BusError> {
    let (durable, topic, id, filter) = match parse_subscribe(&body) {
        Ok(v) => v,
        Err(e) => {
            write_msg(&mut writer, OP_ERROR, &encode_error(&e))?;
            return Err(e);
        }
    };
    let mut sub = match broker.subscribe_local(&id, topic, durable, filter) {
        Ok(s) => s,
        Err(e) => {
            write_msg(&mut writer, OP_ERROR, &encode_error(&e))?;
            return Err(e);
        }
    };
    write_msg(&mut writer, OP_OK, &0u64.to_be_bytes())?;
    let closed = Arc::new(AtomicBool::new(false));
    let acker = {
        let closed = closed.clone();
        let broker = broker.clone();
        let id = id.clone();
        thread::spawn(move || {
            while let Ok((op, body)) = read_msg(&mut reader) {
                if op == OP_ACK && body.len() == 8 && durable {
                    let pos = u64::from_be_bytes(body.try_into().unwrap());
                    let _ = broker.ack(&id, topic, pos);
                }
            }
            closed.store(true, Ordering::SeqCst);
        })
    };
    while !closed.load(Ordering::SeqCst) && !stop.load(Ordering::SeqCst) {
        match sub.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(d)) => {
                let mut out = vec![d.topic.index() as u8];
                out.extend_from_slice(&d.position.to_be_bytes());
                out.extend_from_slice(&d.global_seq.to_be_bytes());
                out.extend_from_slice(&encode_event(&d.event)?);
                if write_msg(&mut writer, OP_DELIVER, &out).is_err() {
                    break;
                }
            }
            Ok(None) => {}
            Err(_) => break,
        }
    }
    let _ = writer.shutdown(Shutdown::Both);
    let _ = acker.join();
    Ok(())
}

/// Client side of the TCP transport.
pub struct RemoteBus {
    addr: SocketAddr,
    publisher: Mutex<Option<(BufReader<TcpStream>, TcpStream)>>,
}

impl RemoteBus {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<RemoteBus, BusError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| BusError::Io("no address".into()))?;
        let bus = RemoteBus {
            addr,
            publisher: Mutex::new(None),
        };
        *bus.publisher.lock().unwrap() = Some(bus.open()?);
        Ok(bus)
    }

    fn open(&self) -> Result<(BufReader<TcpStream>, TcpStream), BusError> {
        let s = TcpStream::connect_timeout(&self.addr, Duration::from_secs(2))?;
        s.set_nodelay(true)?;
        Ok((BufReader::new(s.try_clone()?), s))
    }

    fn try_publish(
        conn: &mut (BufReader<TcpStream>, TcpStream),
        body: &[u8],
    ) -> std::io::Result<(u8, Vec<u8>)> {
        write_msg(&mut conn.1, OP_PUBLISH, body)?;
        read_msg(&mut conn.0)
    }
}

impl EventBus for RemoteBus {
    fn publish(&self, topic: Topic, event: &ManagementEvent) -> Result<u64, BusError> {
        let mut body = vec![topic.index() as u8];
        body.extend_from_slice(&encode_event(event)?);
        let mut guard = self.publisher.lock().unwrap();
        let reply = match guard.as_mut().map(|c| Self::try_publish(c, &body)) {
            Some(Ok(r)) => r,
            _ => {
                // One reconnect attempt; a broker restart drops connections.
                let mut conn = self.open().map_err(|_| BusError::Unavailable)?;
                let r = Self::try_publish(&mut conn, &body).map_err(|_| BusError::Unavailable)?;
                *guard = Some(conn);
                r
            }
        };
        match reply {
            (OP_OK, b) if b.len() == 8 => Ok(u64::from_be_bytes(b.try_into().unwrap())),
            (OP_ERROR, b) => Err(decode_error(&b)),
            (op, _) => Err(BusError::Protocol(format!("unexpected reply op {op}"))),
        }
    }

    fn subscribe(
        &self,
        subscriber: &str,
        topic: Topic,
        durable: bool,
        filter: Option<Filter>,
    ) -> Result<Box<dyn EventStream>, BusError> {
        let (mut reader, mut writer) = self.open()?;
        let mut body = vec![durable as u8, topic.index() as u8];
        body.extend_from_slice(&(subscriber.len() as u16).to_be_bytes());
        body.extend_from_slice(subscriber.as_bytes());
        match &filter {
            None => body.extend_from_slice(&u16::MAX.to_be_bytes()),
            Some(f) => {
                body.extend_from_slice(&(f.len() as u16).to_be_bytes());
                for t in f {
                    body.extend_from_slice(&(t.len() as u16).to_be_bytes());
                    body.extend_from_slice(t.as_bytes());
                }
            }
        }
        write_msg(&mut writer, OP_SUBSCRIBE, &body)?;
        match read_msg(&mut reader)? {
            (OP_OK, _) => {}
            (OP_ERROR, b) => return Err(decode_error(&b)),
            (op, _) => return Err(BusError::Protocol(format!("unexpected reply op {op}"))),
        }
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let msg = match read_msg(&mut reader) {
                Ok(m) => m,
                Err(_) => {
                    let _ = tx.send(Err(BusError::Disconnected));
                    return;
                }
            };
            let parsed = (|| {
                let (op, b) = msg;
                if op != OP_DELIVER || b.len() < 17 {
                    return Err(BusError::Protocol(format!("unexpected op {op}")));
                }
                Ok(Delivery {
                    topic: topic_from(b[0])?,
                    position: u64::from_be_bytes(b[1..9].try_into().unwrap()),
                    global_seq: u64::from_be_bytes(b[9..17].try_into().unwrap()),
                    event: decode_event(&b[17..]).map_err(|e| BusError::Protocol(e.to_string()))?,
                })
            })();
            if tx.send(parsed).is_err() {
                return;
            }
        });
        Ok(Box::new(RemoteStream { writer, rx }))
    }
}

struct RemoteStream {
    writer: TcpStream,
    rx: mpsc::Receiver<Result<Delivery, BusError>>,
}

impl EventStream for RemoteStream {
    fn try_recv(&mut self) -> Result<Option<Delivery>, BusError> {
        match self.rx.try_recv() {
            Ok(r) => r.map(Some),
            Err(mpsc::TryRecvError::Empty) => Ok(None),
            Err(mpsc::TryRecvError::Disconnected) => Err(BusError::Disconnected),
        }
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Delivery>, BusError> {
        match self.rx.recv_timeout(timeout) {
            Ok(r) => r.map(Some),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(BusError::Disconnected),
        }
    }

    fn ack(&mut self, position: u64) -> Result<(), BusError> {
        write_msg(&mut self.writer, OP_ACK, &position.to_be_bytes())?;
        Ok(())
    }
}

impl Drop for RemoteStream {
    fn drop(&mut self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}
