use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use panelguide_core::session::ManualClock;
use panelguide_core::wire::{WireMessage, MAX_LINE_BYTES};
use panelguide_server::{BackgroundServer, ServerConfig, ServerError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Self {
            writer: s.try_clone().unwrap(),
            reader: BufReader::new(s),
        }
    }

    fn send(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    fn send_raw(&mut self, bytes: &[u8]) {
        self.writer.write_all(bytes).unwrap();
    }

    fn recv(&mut self) -> String {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).unwrap();
        assert!(n > 0, "server closed the connection");
        assert!(line.ends_with('\n'));
        line.pop();
        WireMessage::parse(&line).unwrap_or_else(|e| panic!("{line:?} does not re-parse: {e}"));
        line
    }

    fn call(&mut self, line: &str) -> String {
        self.send(line);
        self.recv()
    }
}

fn start(dir: &TempDir) -> BackgroundServer {
    BackgroundServer::start(ServerConfig::scripted(dir.path()).port(0)).unwrap()
}

fn start_with_clock(dir: &Path, clock: &ManualClock) -> BackgroundServer {
    let config = ServerConfig::scripted(dir).port(0).clock(Arc::new(clock.clone()));
    BackgroundServer::start(config).unwrap()
}

const PUMP_SEQ: &str = "SEQ H_00,S_02,T_01,H_00,B_01,K_02,B_02,T_02";

#[test]
fn text_emits_awaiting_then_seq_then_ready() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut c = Client::connect(server.tcp_addr());
    assert_eq!(c.call("HELLO tester"), "STATE IDLE");
    assert_eq!(c.call("TEXT pump"), "STATE AWAITING_GPT");
    assert_eq!(c.recv(), PUMP_SEQ);
    assert_eq!(c.recv(), "STATE READY");
}

#[test]
fn next_before_sequence_is_wrong_phase() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut c = Client::connect(server.tcp_addr());
    assert_eq!(c.call("NEXT"), "ERR 409 wrong-phase");
    assert_eq!(c.call("ACT B_04"), "ERR 409 wrong-phase");
}

#[test]
fn full_session_over_tcp() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut c = Client::connect(server.tcp_addr());
    c.call("HELLO op1");
    c.call("TEXT pump");
    c.recv();
    c.recv();

    assert_eq!(c.call("ACT S_02"), "EVT S_02 unplug door=closed violation=true");
    // Recorded before the reply was sent.
    let log = std::fs::read_to_string(dir.path().join("op1.jsonl")).unwrap();
    assert!(log.lines().last().unwrap().contains("\"gating_violation\":true"));

    assert_eq!(c.call("NEXT"), "PROMPT 1 S_02 unplug");
    assert_eq!(c.call("PREV"), "PROMPT 0 H_00 turn");
    assert_eq!(c.call("ACT G_00"), "ERR 422 not-interactable G_00");
    assert!(c.call("ACT Z_99").starts_with("ERR 422 unknown-item"));
    for item in ["S_02", "T_01", "H_00", "B_01", "K_02", "B_02"] {
        assert!(c.call(&format!("ACT {item}")).starts_with("EVT"));
    }
    assert_eq!(c.call("ACT T_02"), "EVT T_02 flip door=open violation=false");
    let done = c.recv();
    assert!(done.starts_with("DONE "), "{done}");
    // Seven of eight steps matched, S_02 stood in for H_00 at step one.
    assert!(done.ends_with(" 0.8750"), "{done}");
    assert_eq!(c.call("ACT B_04"), "ERR 409 wrong-phase");
}

#[test]
fn capture_runs_recognition_first() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let image = dir.path().join("hvac.png");
    std::fs::write(&image, [0x89, b'P', b'N', b'G']).unwrap();
    let mut c = Client::connect(server.tcp_addr());
    assert_eq!(
        c.call(&format!("CAPTURE {}", image.display())),
        "STATE CAPTURING"
    );
    assert_eq!(c.recv(), "STATE AWAITING_GPT");
    assert_eq!(c.recv(), "SEQ B_04,K_03,B_07,H_00,S_04,T_04,H_00,T_04");
    assert_eq!(c.recv(), "STATE READY");
}

#[test]
fn pipeline_failure_then_retry() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut c = Client::connect(server.tcp_addr());
    assert_eq!(c.call("TEXT Open the door and press B_04."), "STATE AWAITING_GPT");
    let err = c.recv();
    assert!(err.starts_with("ERR 502 llm: "), "{err}");
    let missing = dir.path().join("nope.png");
    assert_eq!(
        c.call(&format!("CAPTURE {}", missing.display())),
        "STATE CAPTURING"
    );
    assert!(c.recv().starts_with("ERR 502 ingest: "));
    assert_eq!(c.call("TEXT pump"), "STATE AWAITING_GPT");
    assert_eq!(c.recv(), PUMP_SEQ);
}

#[test]
fn malformed_and_oversized_lines() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut c = Client::connect(server.tcp_addr());
    assert!(c.call("JUMP").starts_with("ERR 400 "));
    assert!(c.call("").starts_with("ERR 400 "));
    assert!(c.call("STATE READY").starts_with("ERR 400 "));
    assert!(c.call("NEXT please").starts_with("ERR 400 "));
    let huge = "A".repeat(MAX_LINE_BYTES + 10);
    assert_eq!(c.call(&huge), "ERR 413 line-too-long");
    assert_eq!(c.call("TEXT pump"), "STATE AWAITING_GPT");
}

#[test]
fn roles_name_logs_and_are_exclusive() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut a = Client::connect(server.tcp_addr());
    let mut b = Client::connect(server.tcp_addr());
    assert_eq!(a.call("HELLO alice"), "STATE IDLE");
    assert_eq!(b.call("HELLO alice"), "ERR 409 role-taken");
    assert_eq!(b.call("HELLO bob"), "STATE IDLE");
    a.call("TEXT pump");
    a.recv();
    a.recv();
    assert_eq!(a.call("HELLO carol"), "ERR 409 wrong-phase");
    assert!(dir.path().join("alice.jsonl").exists());
}

#[test]
fn two_clients_have_independent_sessions() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut a = Client::connect(server.tcp_addr());
    let mut b = Client::connect(server.tcp_addr());
    a.call("TEXT pump");
    a.recv();
    a.recv();
    assert_eq!(b.call("NEXT"), "ERR 409 wrong-phase");
    assert_eq!(a.call("ACT H_00"), "EVT H_00 turn door=closed violation=false");
    b.call("TEXT pump");
    b.recv();
    b.recv();
    // The door opened in a's session, not in b's.
    assert_eq!(b.call("ACT S_02"), "EVT S_02 unplug door=closed violation=true");
    assert_eq!(a.call("ACT S_02"), "EVT S_02 unplug door=open violation=false");
    let logs: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(logs.len(), 2);
}

#[test]
fn occupied_port_fails_to_bind() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let dir = TempDir::new().unwrap();
    let err = BackgroundServer::start(ServerConfig::scripted(dir.path()).port(port))
        .err()
        .expect("bind must fail");
    assert!(matches!(err, ServerError::Bind { .. }), "{err}");
    let err = BackgroundServer::start(ServerConfig::scripted(dir.path()).port(u16::MAX))
        .err()
        .unwrap();
    assert!(matches!(err, ServerError::PortRange(_)));
}

#[test]
fn random_bytes_only_get_errors() {
    let dir = TempDir::new().unwrap();
    let server = start(&dir);
    let mut c = Client::connect(server.tcp_addr());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5_000 {
        let len = rng.gen_range(0..80);
        let mut line: Vec<u8> = (0..len).map(|_| rng.gen()).filter(|b| *b != b'\n').collect();
        line.push(b'\n');
        c.send_raw(&line);
        let reply = c.recv();
        assert!(reply.starts_with("ERR "), "{reply:?} for {line:?}");
    }
    // The session is untouched.
    assert_eq!(c.call("TEXT pump"), "STATE AWAITING_GPT");
    assert_eq!(c.recv(), PUMP_SEQ);
}

mod websocket {
    use super::*;
    use tungstenite::{connect, Message};

    type Ws = tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>;

    fn call(ws: &mut Ws, line: &str) -> String {
        ws.send(Message::text(line)).unwrap();
        recv(ws)
    }

    fn recv(ws: &mut Ws) -> String {
        loop {
            match ws.read().unwrap() {
                Message::Text(t) => {
                    let line = t.as_str().to_string();
                    assert!(!line.contains('\n'));
                    WireMessage::parse(&line).unwrap();
                    return line;
                }
                Message::Ping(_) | Message::Pong(_) => continue,
                other => panic!("unexpected frame {other:?}"),
            }
        }
    }

    const SCRIPT: &[&str] = &[
        "HELLO parity",
        "TEXT pump",
        "ACT S_02",
        "NEXT",
        "ACT S_02",
        "ACT T_01",
        "ACT H_00",
        "ACT B_01",
        "ACT K_02",
        "ACT B_02",
        "ACT T_02",
    ];

    fn replies_per_line(line: &str, last: bool) -> usize {
        match line.split(' ').next().unwrap() {
            "TEXT" => 3,
            "ACT" if last => 2,
            _ => 1,
        }
    }

    #[test]
    fn tcp_and_websocket_logs_are_identical() {
        let clock = ManualClock::new(5_000);
        let (tcp_dir, ws_dir) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let tcp_server = start_with_clock(tcp_dir.path(), &clock);
        let ws_server = start_with_clock(ws_dir.path(), &clock);

        let mut tcp_replies = Vec::new();
        let mut c = Client::connect(tcp_server.tcp_addr());
        for (i, line) in SCRIPT.iter().enumerate() {
            clock.set(5_000 + 1_000 * i as u64);
            c.send(line);
            for _ in 0..replies_per_line(line, i == SCRIPT.len() - 1) {
                tcp_replies.push(c.recv());
            }
        }

        let mut ws_replies = Vec::new();
        let (mut ws, _) = connect(format!("ws://{}", ws_server.ws_addr())).unwrap();
        for (i, line) in SCRIPT.iter().enumerate() {
            clock.set(5_000 + 1_000 * i as u64);
            ws_replies.push(call(&mut ws, line));
            for _ in 1..replies_per_line(line, i == SCRIPT.len() - 1) {
                ws_replies.push(recv(&mut ws));
            }
        }

        assert_eq!(tcp_replies, ws_replies);
        // TEXT went out at 6 s and the last ACT at 15 s.
        assert_eq!(tcp_replies.last().unwrap(), "DONE 9000 0.8750");
        let a = std::fs::read(tcp_dir.path().join("parity.jsonl")).unwrap();
        let b = std::fs::read(ws_dir.path().join("parity.jsonl")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn websocket_errors_and_limits() {
        let dir = TempDir::new().unwrap();
        let server = start(&dir);
        let (mut ws, _) = connect(format!("ws://{}", server.ws_addr())).unwrap();
        assert_eq!(call(&mut ws, "NEXT"), "ERR 409 wrong-phase");
        assert!(call(&mut ws, "bogus").starts_with("ERR 400 "));
        let huge = "A".repeat(MAX_LINE_BYTES + 1);
        assert_eq!(call(&mut ws, &huge), "ERR 413 line-too-long");
        ws.send(Message::binary(b"TEXT pump".to_vec())).unwrap();
        assert_eq!(recv(&mut ws), "STATE AWAITING_GPT");
    }
}
