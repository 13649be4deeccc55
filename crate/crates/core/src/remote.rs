//! Client side of the denoiser wire protocol.
//!
//! Newline-delimited JSON over a plain TCP stream, one object per line:
//!
//! ```text
//! -> {"id":7,"prompt":[1,2],"slots":[null,5,null],"top_k":2}
//! <- {"id":7,"predictions":{"0":[[9,0.61],[4,0.2]],"2":[[1,0.9],[4,0.05]]}}
//! <- {"id":7,"error":"unknown_state"}
//! ```
//!
//! Predictions must cover exactly the `null` slots, be sorted by descending
//! probability, and break probability ties by ascending token id. A server
//! that cannot parse a line answers with `id: -1`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserRequest, DenoiserResponse};
use crate::error::DenoiserError;
use crate::state::TokenId;

/// Environment variable that overrides the configured remote endpoint.
pub const ENDPOINT_ENV: &str = "ANCHORDIFF_ENDPOINT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: i64,
    pub prompt: Vec<TokenId>,
    pub slots: Vec<Option<TokenId>>,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<DenoiserResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireRequest {
    pub fn from_request(id: i64, req: &DenoiserRequest) -> Self {
        WireRequest {
            id,
            prompt: req.prompt_tokens.clone(),
            slots: req.response_slots.clone(),
            top_k: req.top_k,
        }
    }

    pub fn into_request(self) -> DenoiserRequest {
        DenoiserRequest {
            prompt_tokens: self.prompt,
            response_slots: self.slots,
            top_k: self.top_k,
        }
    }
}

pub fn encode_request(id: i64, req: &DenoiserRequest) -> String {
    serde_json::to_string(&WireRequest::from_request(id, req)).expect("request serializes")
}

/// Parses one response line for request `expected_id`.
pub fn decode_response(line: &str, expected_id: i64) -> Result<DenoiserResponse, DenoiserError> {
    let resp: WireResponse = serde_json::from_str(line.trim_end())
        .map_err(|e| DenoiserError::Malformed(format!("unparseable response line: {e}")))?;
    if let Some(err) = resp.error {
        return Err(DenoiserError::Remote(format!("{err} (id {})", resp.id)));
    }
    if resp.id != expected_id {
        return Err(DenoiserError::Malformed(format!(
            "response id {} does not echo request id {expected_id}",
            resp.id
        )));
    }
    resp.predictions
        .ok_or_else(|| DenoiserError::Malformed("response has neither predictions nor error".into()))
}

/// Denoiser served by a remote process over the wire protocol.
pub struct RemoteDenoiser {
    address: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: i64,
}

impl RemoteDenoiser {
    pub fn connect(address: &str) -> Result<Self, DenoiserError> {
        Self::connect_timeout(address, Duration::from_secs(30))
    }

    pub fn connect_timeout(address: &str, timeout: Duration) -> Result<Self, DenoiserError> {
        let transport = |e: std::io::Error| DenoiserError::Transport(format!("{address}: {e}"));
        let addr = address
            .to_socket_addrs()
            .map_err(transport)?
            .next()
            .ok_or_else(|| DenoiserError::Transport(format!("{address}: no address resolved")))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(transport)?;
        stream.set_read_timeout(Some(timeout)).map_err(transport)?;
        stream.set_nodelay(true).map_err(transport)?;
        let writer = stream.try_clone().map_err(transport)?;
        Ok(RemoteDenoiser {
            address: address.to_string(),
            reader: BufReader::new(stream),
            writer,
            next_id: 0,
        })
    }
}

impl Denoiser for RemoteDenoiser {
    fn predict(&mut self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError> {
        request.check()?;
        let id = self.next_id;
        self.next_id += 1;
        let transport = |e: std::io::Error| DenoiserError::Transport(e.to_string());
        let mut line = encode_request(id, request);
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(transport)?;
        self.writer.flush().map_err(transport)?;

        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(transport)?;
        if n == 0 {
            return Err(DenoiserError::Transport(format!(
                "{} closed the connection",
                self.address
            )));
        }
        decode_response(&reply, id)
    }

    fn identity(&self) -> String {
        format!("remote:{}", self.address)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Prediction;
    use std::collections::BTreeMap;

    #[test]
    fn test_request_line_shape() {
        let req = DenoiserRequest::new(
            vec![TokenId(1), TokenId(2)],
            vec![None, Some(TokenId(5)), None],
            2,
        )
        .unwrap();
        assert_eq!(
            encode_request(7, &req),
            r#"{"id":7,"prompt":[1,2],"slots":[null,5,null],"top_k":2}"#
        );
    }

    #[test]
    fn test_response_parsing() {
        let line = r#"{"id":3,"predictions":{"0":[[9,0.61],[4,0.2]],"2":[[1,0.9],[4,0.05]]}}"#;
        let resp = decode_response(line, 3).unwrap();
        let mut expect = BTreeMap::new();
        expect.insert(0, vec![Prediction::new(TokenId(9), 0.61), Prediction::new(TokenId(4), 0.2)]);
        expect.insert(2, vec![Prediction::new(TokenId(1), 0.9), Prediction::new(TokenId(4), 0.05)]);
        assert_eq!(resp, DenoiserResponse::new(expect));

        assert!(matches!(decode_response(line, 4), Err(DenoiserError::Malformed(_))));
        assert!(matches!(
            decode_response(r#"{"id":3,"error":"unknown_state"}"#, 3),
            Err(DenoiserError::Remote(_))
        ));
        assert!(matches!(
            decode_response(r#"{"id":-1,"error":"bad json"}"#, 3),
            Err(DenoiserError::Remote(_))
        ));
        assert!(matches!(decode_response("{\"id\":3", 3), Err(DenoiserError::Malformed(_))));
        assert!(matches!(decode_response(r#"{"id":3}"#, 3), Err(DenoiserError::Malformed(_))));
    }

    #[test]
    fn test_connect_refused_is_transport_error() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        assert!(matches!(
            RemoteDenoiser::connect_timeout(&addr, Duration::from_millis(500)),
            Err(DenoiserError::Transport(_))
        ));
    }
}
