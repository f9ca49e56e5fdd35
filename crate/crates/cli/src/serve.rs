//! Websocket bridge. The simulator stays on this thread; each client gets a
//! thread that forwards its frames here and writes back whatever is queued
//! for it.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::Message;
use utcb_core::bridge::{Bridge, ClientMessage, ServerMessage};
use utcb_core::scenario::{ScenarioScript, DEMO_SCRIPT};
use utcb_core::SimTime;

use crate::run::{EXIT_ASSERTION, EXIT_SCHEMA};

const TICK: Duration = Duration::from_millis(20);
const CLIENT_POLL: Duration = Duration::from_millis(10);

enum Inbound {
    Join { id: usize, tx: Sender<String> },
    Frame { id: usize, text: String },
    Leave { id: usize },
}

pub fn serve(port: u16, scenario: Option<&Path>, speed: f64) -> u8 {
    if !(speed.is_finite() && speed > 0.0) {
        eprintln!("--speed must be a positive number");
        return EXIT_SCHEMA;
    }
    let script = match scenario {
        Some(p) => ScenarioScript::load(p),
        None => ScenarioScript::parse(DEMO_SCRIPT),
    };
    let bridge = match script.and_then(|s| Bridge::from_script(&s)) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_SCHEMA;
        }
    };
    let listener = match TcpListener::bind(("127.0.0.1", port)) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot listen on port {port}: {e}");
            return EXIT_ASSERTION;
        }
    };
    let addr = listener.local_addr().expect("bound socket has an address");
    println!("listening on ws://{addr}");
    let _ = std::io::stdout().flush();

    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (id, stream) in listener.incoming().enumerate() {
            let Ok(stream) = stream else { continue };
            let tx = tx.clone();
            thread::spawn(move || client(id, stream, tx));
        }
    });
    drive(bridge, rx, speed);
    0
}

fn drive(mut bridge: Bridge, rx: Receiver<Inbound>, speed: f64) {
    let start = Instant::now();
    let origin = bridge.now().0;
    let virtual_now = || SimTime(origin + (start.elapsed().as_secs_f64() * 1000.0 * speed) as u64);
    let mut clients: BTreeMap<usize, Sender<String>> = BTreeMap::new();
    loop {
        let first = match rx.recv_timeout(TICK) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => return,
        };
        for msg in first
            .into_iter()
            .chain(std::iter::from_fn(|| rx.try_recv().ok()))
        {
            bridge.advance_to(virtual_now());
            match msg {
                Inbound::Join { id, tx } => {
                    for m in bridge.full_state() {
                        let _ = tx.send(encode(&m));
                    }
                    clients.insert(id, tx);
                }
                Inbound::Leave { id } => {
                    clients.remove(&id);
                }
                Inbound::Frame { id, text } => {
                    let result = serde_json::from_str::<ClientMessage>(&text)
                        .map_err(|e| format!("bad message: {e}"))
                        .and_then(|m| bridge.handle(m));
                    if let (Err(message), Some(tx)) = (result, clients.get(&id)) {
                        let _ = tx.send(encode(&ServerMessage::Error { message }));
                    }
                }
            }
        }
        bridge.advance_to(virtual_now());
        let out: Vec<String> = bridge.drain().iter().map(encode).collect();
        if !out.is_empty() {
            clients.retain(|_, tx| out.iter().all(|s| tx.send(s.clone()).is_ok()));
        }
    }
}

fn encode(m: &ServerMessage) -> String {
    serde_json::to_string(m).expect("server messages serialize")
}

fn client(id: usize, stream: TcpStream, inbound: Sender<Inbound>) {
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    if ws.get_ref().set_read_timeout(Some(CLIENT_POLL)).is_err() {
        return;
    }
    let (tx, outbox) = mpsc::channel();
    if inbound.send(Inbound::Join { id, tx }).is_err() {
        return;
    }
    'conn: loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                if inbound.send(Inbound::Frame { id, text }).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        for text in outbox.try_iter() {
            if ws.send(Message::Text(text)).is_err() {
                break 'conn;
            }
        }
    }
    let _ = inbound.send(Inbound::Leave { id });
}
