//! Line-delimited JSON records exchanged between the harness and a doctor agent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templates::Role;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Diagnosed,
    Budget,
    Abort,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::Diagnosed => "diagnosed",
            EndReason::Budget => "budget",
            EndReason::Abort => "abort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        protocol_version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
    },
    SessionStart {
        session_id: String,
    },
    /// Agents may omit `session_id` on replies; the harness always sends it.
    Utterance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        role: Role,
        text: String,
    },
    SessionEnd {
        session_id: String,
        reason: EndReason,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        reason: String,
    },
}

impl Message {
    pub fn hello() -> Self {
        Message::Hello {
            protocol_version: PROTOCOL_VERSION,
            agent: None,
        }
    }

    pub fn utterance(session_id: &str, role: Role, text: impl Into<String>) -> Self {
        Message::Utterance {
            session_id: Some(session_id.to_string()),
            role,
            text: text.into(),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::SessionStart { .. } => "session_start",
            Message::Utterance { .. } => "utterance",
            Message::SessionEnd { .. } => "session_end",
            Message::Error { .. } => "error",
        }
    }
}

/// One record, without the trailing newline.
pub fn encode(message: &Message) -> String {
    serde_json::to_string(message).expect("protocol message serializes")
}

pub fn decode(line: &str) -> Result<Message> {
    let line = line.trim_end_matches(['\r', '\n']);
    serde_json::from_str(line).map_err(|e| {
        let shown: String = line.chars().take(80).collect();
        Error::Protocol(format!("malformed record {shown:?}: {e}"))
    })
}

/// Collapses line breaks so a reply always fits on one record line.
pub fn single_line(text: &str) -> String {
    text.split(['\r', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        assert_eq!(encode(&Message::hello()), r#"{"type":"hello","protocol_version":1}"#);
        assert_eq!(
            encode(&Message::utterance("00001-x", Role::Patient, "Hi")),
            r#"{"type":"utterance","session_id":"00001-x","role":"patient","text":"Hi"}"#
        );
        assert_eq!(
            encode(&Message::SessionEnd {
                session_id: "s".into(),
                reason: EndReason::Budget
            }),
            r#"{"type":"session_end","session_id":"s","reason":"budget"}"#
        );
    }

    #[test]
    fn decodes_agent_replies_leniently() {
        let m = decode("{\"type\":\"utterance\",\"role\":\"doctor\",\"text\":\"Fever?\",\"extra\":1}\n").unwrap();
        assert_eq!(
            m,
            Message::Utterance {
                session_id: None,
                role: Role::Doctor,
                text: "Fever?".into()
            }
        );
        let hello = decode(r#"{"type":"hello","protocol_version":1,"agent":"echo"}"#).unwrap();
        assert_eq!(hello.type_name(), "hello");
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(decode("hello"), Err(Error::Protocol(_))));
        assert!(matches!(decode(r#"{"type":"shout"}"#), Err(Error::Protocol(_))));
        assert!(matches!(decode(r#"{"type":"utterance","text":"x"}"#), Err(Error::Protocol(_))));
    }

    #[test]
    fn line_breaks_are_collapsed() {
        assert_eq!(single_line("a\n b\r\n\nc"), "a b c");
    }
}
