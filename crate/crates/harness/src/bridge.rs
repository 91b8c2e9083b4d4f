//! Newline-delimited JSON over TCP.
//!
//! Environment server: each connection gets a fresh environment and sends
//! `{"op": "spaces" | "reset" | "step" | "close", "seed"?, "action"?}`; every
//! request gets exactly one response `{"ok": bool, ...}` in order.
//!
//! Remote policy client: the harness can also delegate `act` to an external
//! process speaking `{"op": "act", "state": [[...]]}` -> `{"ok": true,
//! "action": n}`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tsc_core::agents::{Agent, AgentError};
use tsc_core::env::{ActionCode, EnvConfig, EnvError, StateMatrix, TscEnv};

use crate::error::{HarnessError, Result};

pub mod codes {
    pub const PARSE: &str = "parse";
    pub const NOT_RESET: &str = "not_reset";
    pub const ACTION_RANGE: &str = "action_range";
    pub const EPISODE_FINISHED: &str = "episode_finished";
    pub const UNKNOWN_OP: &str = "unknown_op";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const ENV: &str = "env";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl WireResponse {
    pub fn failure(code: &str, message: impl Into<String>) -> Self {
        WireResponse {
            ok: false,
            error: Some(code.to_string()),
            message: Some(message.into()),
            ..WireResponse::default()
        }
    }
}

fn env_failure(e: EnvError) -> WireResponse {
    let code = match e {
        EnvError::NotReset => codes::NOT_RESET,
        EnvError::ActionOutOfRange { .. } => codes::ACTION_RANGE,
        EnvError::EpisodeFinished(_) => codes::EPISODE_FINISHED,
        _ => codes::ENV,
    };
    WireResponse::failure(code, e.to_string())
}

/// Protocol state for one client.
pub struct Session {
    env: TscEnv,
    closed: bool,
}

impl Session {
    pub fn new(config: EnvConfig) -> Result<Self> {
        Ok(Session {
            env: TscEnv::new(config)?,
            closed: false,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn handle_line(&mut self, line: &str) -> WireResponse {
        match serde_json::from_str::<WireRequest>(line) {
            Ok(req) => self.handle(req),
            Err(e) => WireResponse::failure(codes::PARSE, e.to_string()),
        }
    }

    pub fn handle(&mut self, req: WireRequest) -> WireResponse {
        match req.op.as_str() {
            "spaces" => {
                let spaces = self.env.spaces();
                WireResponse {
                    ok: true,
                    info: Some(serde_json::to_value(spaces).expect("spaces serialize")),
                    ..WireResponse::default()
                }
            }
            "reset" => match self.env.reset(req.seed.unwrap_or(0)) {
                Ok(state) => WireResponse {
                    ok: true,
                    state: Some(state.rows()),
                    ..WireResponse::default()
                },
                Err(e) => env_failure(e),
            },
            "step" => {
                let action = match req.action {
                    Some(Value::Number(n)) => match (n.as_u64(), n.as_i64()) {
                        (Some(a), _) => a as usize,
                        (None, Some(_)) => {
                            return WireResponse::failure(codes::ACTION_RANGE, format!("action {n} is negative"))
                        }
                        _ => return WireResponse::failure(codes::BAD_REQUEST, format!("action {n} is not an integer")),
                    },
                    Some(other) => {
                        return WireResponse::failure(codes::BAD_REQUEST, format!("action {other} is not an integer"))
                    }
                    None => return WireResponse::failure(codes::BAD_REQUEST, "step needs an action"),
                };
                match self.env.step(ActionCode(action)) {
                    Ok(r) => WireResponse {
                        ok: true,
                        state: Some(r.state.rows()),
                        reward: Some(r.reward),
                        terminated: Some(r.terminated),
                        truncated: Some(r.truncated),
                        info: Some(serde_json::to_value(&r.info).expect("info serializes")),
                        ..WireResponse::default()
                    },
                    Err(e) => env_failure(e),
                }
            }
            "close" => {
                self.closed = true;
                WireResponse {
                    ok: true,
                    ..WireResponse::default()
                }
            }
            other => WireResponse::failure(codes::UNKNOWN_OP, format!("unknown op {other:?}")),
        }
    }
}

fn write_json(out: &mut impl Write, value: &impl Serialize) -> io::Result<()> {
    let mut line = serde_json::to_string(value).map_err(io::Error::other)?;
    line.push('\n');
    out.write_all(line.as_bytes())?;
    out.flush()
}

/// Serves one client until it sends `close` or disconnects.
pub fn handle_connection(stream: TcpStream, config: &EnvConfig) -> Result<()> {
    let mut session = Session::new(config.clone())?;
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let io_err = |e| HarnessError::io(peer.clone(), e);
    let mut reader = BufReader::new(stream.try_clone().map_err(io_err)?);
    let mut writer = stream;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let response = session.handle_line(line.trim_end());
        write_json(&mut writer, &response).map_err(io_err)?;
        if session.is_closed() {
            return Ok(());
        }
    }
}

/// Accepts clients one after another, each against a fresh environment.
/// Stops after `max_clients` connections when given.
pub fn serve(listener: TcpListener, config: EnvConfig, max_clients: Option<usize>) -> Result<()> {
    TscEnv::new(config.clone())?;
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| HarnessError::io("listener", e))?;
        if let Err(e) = handle_connection(stream, &config) {
            eprintln!("{}", e.to_json());
        }
        served += 1;
        if max_clients.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

/// Minimal blocking client for the wire protocol.
pub struct WireClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl WireClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(WireClient {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    /// Sends one raw line and reads one response line.
    pub fn send_raw(&mut self, line: &str) -> io::Result<String> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut response = String::new();
        if self.reader.read_line(&mut response)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        Ok(response)
    }

    pub fn request(&mut self, req: &WireRequest) -> io::Result<WireResponse> {
        let line = serde_json::to_string(req).map_err(io::Error::other)?;
        let text = self.send_raw(&line)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Points the harness at an external policy server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteDescriptor {
    pub format_version: u32,
    pub kind: String,
    pub address: String,
}

impl RemoteDescriptor {
    pub const KIND: &'static str = "remote";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let desc: RemoteDescriptor = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if desc.format_version != 1 || desc.kind != Self::KIND {
            return Err(HarnessError::Parse {
                path: path.to_path_buf(),
                message: format!("expected a format_version 1 {:?} descriptor", Self::KIND),
            });
        }
        Ok(desc)
    }
}

/// Agent whose decisions come from a remote policy server.
pub struct RemoteAgent {
    client: WireClient,
    address: String,
}

impl RemoteAgent {
    pub fn connect(address: &str) -> Result<Self> {
        let client = WireClient::connect(address).map_err(|e| HarnessError::io(address, e))?;
        Ok(RemoteAgent {
            client,
            address: address.to_string(),
        })
    }
}

impl Agent for RemoteAgent {
    fn act(&mut self, state: &StateMatrix) -> std::result::Result<ActionCode, AgentError> {
        let req = WireRequest {
            op: "act".into(),
            seed: None,
            action: None,
            state: Some(state.rows()),
        };
        let resp = self
            .client
            .request(&req)
            .map_err(|e| AgentError::Remote(format!("{}: act: {e}", self.address)))?;
        match (resp.ok, resp.action) {
            (true, Some(a)) => Ok(ActionCode(a)),
            _ => Err(AgentError::Remote(format!(
                "{}: act failed: {}",
                self.address,
                resp.error.unwrap_or_else(|| "no action in response".into())
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        Session::new(EnvConfig::default()).unwrap()
    }

    #[test]
    fn spaces_before_reset() {
        let r = session().handle_line(r#"{"op":"spaces"}"#);
        assert!(r.ok);
        assert_eq!(r.info.unwrap(), serde_json::json!({"state_shape": [9, 9], "action_count": 27}));
    }

    #[test]
    fn error_codes() {
        let mut s = session();
        assert_eq!(s.handle_line("{nope").error.as_deref(), Some(codes::PARSE));
        assert_eq!(s.handle_line(r#"{"op":"step","action":1}"#).error.as_deref(), Some(codes::NOT_RESET));
        assert_eq!(s.handle_line(r#"{"op":"fly"}"#).error.as_deref(), Some(codes::UNKNOWN_OP));
        assert!(s.handle_line(r#"{"op":"reset","seed":7}"#).ok);
        assert_eq!(s.handle_line(r#"{"op":"step","action":27}"#).error.as_deref(), Some(codes::ACTION_RANGE));
        assert_eq!(s.handle_line(r#"{"op":"step","action":-1}"#).error.as_deref(), Some(codes::ACTION_RANGE));
        assert_eq!(s.handle_line(r#"{"op":"step"}"#).error.as_deref(), Some(codes::BAD_REQUEST));
        let r = s.handle_line(r#"{"op":"step","action":1}"#);
        assert!(r.ok && r.truncated == Some(false) && r.terminated == Some(false));
        assert!(s.handle_line(r#"{"op":"close"}"#).ok);
        assert!(s.is_closed());
    }
}
