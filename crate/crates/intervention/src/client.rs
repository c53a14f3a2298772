//! Minimal console used by tests and scripted supervision.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use lazydagger_core::env::EnvAction;

use crate::protocol::{read_message, write_message, Hello, HumanAction, InterventionRequest, Message, Resync};
use crate::server::Health;
use crate::{InterventionError, Result};

pub struct ConsoleClient {
    stream: TcpStream,
    session_id: String,
}

impl ConsoleClient {
    /// Joins `session_id` and returns the client with the server's resync.
    pub fn connect(addr: SocketAddr, session_id: &str, token: &str) -> Result<(Self, Resync)> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        write_message(
            &mut stream,
            &Message::Hello(Hello {
                session_id: session_id.into(),
                token: token.into(),
            }),
        )?;
        match read_message(&mut stream)? {
            Message::Resync(r) => Ok((
                ConsoleClient {
                    stream,
                    session_id: session_id.into(),
                },
                r,
            )),
            Message::Error(e) => Err(InterventionError::Rejected {
                code: e.code,
                message: e.message,
            }),
            other => Err(InterventionError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> Result<()> {
        Ok(self.stream.set_read_timeout(timeout)?)
    }

    pub fn recv(&mut self) -> Result<Message> {
        read_message(&mut self.stream)
    }

    pub fn send_action(&mut self, t: usize, action: EnvAction) -> Result<()> {
        write_message(
            &mut self.stream,
            &Message::HumanAction(HumanAction {
                session_id: self.session_id.clone(),
                t,
                action,
            }),
        )
    }

    pub fn send(&mut self, message: &Message) -> Result<()> {
        write_message(&mut self.stream, message)
    }

    /// Answers every request with `respond`, starting with the one pending
    /// in `resync`, until the server closes the connection. Returns the
    /// number of answered requests.
    pub fn serve(mut self, resync: &Resync, mut respond: impl FnMut(&InterventionRequest) -> EnvAction) -> Result<usize> {
        let mut answered = 0;
        if let Some(r) = &resync.pending {
            self.send_action(r.t, respond(r))?;
            answered += 1;
        }
        loop {
            match self.recv() {
                Ok(Message::RequestIntervention(r)) => {
                    self.send_action(r.t, respond(&r))?;
                    answered += 1;
                }
                Ok(_) => {}
                Err(InterventionError::Closed) => return Ok(answered),
                Err(e) => return Err(e),
            }
        }
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

/// `GET /health` against a running service.
pub fn health(addr: SocketAddr) -> Result<Health> {
    let mut stream = TcpStream::connect(addr)?;
    write!(stream, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n")?;
    let mut text = String::new();
    stream.read_to_string(&mut text)?;
    let (head, body) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| InterventionError::Unexpected("response without a header block".into()))?;
    if !head.starts_with("HTTP/1.1 200") {
        return Err(InterventionError::Unexpected(head.lines().next().unwrap_or("").to_string()));
    }
    Ok(serde_json::from_str(body)?)
}
