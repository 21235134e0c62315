//! HTTP client for hosted enrichment models.
//!
//! Each request is POSTed as `{"provider": <op>, "payload": {...}}` and the
//! service answers `{"ok": bool, "value": ...}`. Transport failures and 5xx
//! responses are retried; `ok: false` is reported as a provider error.

use std::time::Duration;

use log::debug;
use serde::Deserialize;
use serde_json::Value;

use super::{Provider, Request, Response};
use crate::error::{Error, Result};

/// Endpoint URL for the remote provider service.
pub const ENDPOINT_ENV: &str = "MMREC_PROVIDER_URL";
/// Bearer credential sent with each request. Never logged.
pub const API_KEY_ENV: &str = "MMREC_PROVIDER_KEY";

#[derive(Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
}

impl std::fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("endpoint", &"<redacted>")
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .field("retries", &self.retries)
            .finish()
    }
}

impl RemoteConfig {
    /// Reads the endpoint and credential from the environment.
    pub fn from_env(timeout: Duration, retries: u32) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set; pass --offline to use stubs")))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout,
            retries,
        })
    }
}

#[derive(Deserialize)]
struct Envelope {
    ok: bool,
    #[serde(default)]
    value: Value,
}

pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn attempt(&self, body: &str) -> std::result::Result<(u16, String), String> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req.send(body).map_err(|e| self.scrub(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| self.scrub(e.to_string()))?;
        Ok((status, text))
    }

    /// Removes the endpoint and credential from transport error text.
    fn scrub(&self, mut message: String) -> String {
        let mut secrets = vec![self.config.endpoint.clone()];
        if let Some(host) = self.config.endpoint.split("://").nth(1).and_then(|rest| rest.split(['/', '?']).next()) {
            secrets.push(host.to_string());
            if let Some(name) = host.split(':').next() {
                secrets.push(name.to_string());
            }
        }
        secrets.extend(self.config.api_key.clone());
        for secret in secrets.into_iter().filter(|s| !s.is_empty()) {
            message = message.replace(&secret, "<redacted>");
        }
        message
    }
}

impl Provider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn call(&self, request: &Request) -> Result<Response> {
        let body = serde_json::to_string(request)?;
        let op = request.op_name();
        let mut last_error = String::new();
        for attempt in 0..=self.config.retries {
            match self.attempt(&body) {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let envelope: Envelope = serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("{op}: malformed response: {e}")))?;
                    if !envelope.ok {
                        let message = match envelope.value {
                            Value::String(s) => s,
                            other => other.to_string(),
                        };
                        return Err(Error::Provider {
                            provider: op.into(),
                            message,
                        });
                    }
                    return Response::from_value(request, envelope.value);
                }
                Ok((status, text)) if status >= 500 => {
                    last_error = format!("HTTP {status}: {text}");
                }
                Ok((status, text)) => {
                    return Err(Error::Provider {
                        provider: op.into(),
                        message: format!("HTTP {status}: {text}"),
                    });
                }
                Err(e) => last_error = e,
            }
            debug!("{op} attempt {} failed: {last_error}", attempt + 1);
        }
        Err(Error::Provider {
            provider: op.into(),
            message: format!(
                "gave up after {} attempts: {last_error}",
                self.config.retries + 1
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::PriceTag;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves `responses` in order, one per connection. `None` drops the
    /// connection without answering. Returns the URL and the request bodies.
    fn serve(responses: Vec<Option<(u16, String)>>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/enrich", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for response in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(String::from_utf8(body).unwrap());
                let mut stream = stream;
                if let Some((status, text)) = response {
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                        text.len()
                    );
                    stream.write_all(reply.as_bytes()).unwrap();
                }
            }
        });
        (url, seen)
    }

    fn provider(url: String, retries: u32) -> RemoteProvider {
        RemoteProvider::new(RemoteConfig {
            endpoint: url,
            api_key: Some("secret".into()),
            timeout: Duration::from_secs(5),
            retries,
        })
    }

    #[test]
    fn posts_envelope_and_parses_value() {
        let (url, seen) = serve(vec![Some((200, r#"{"ok":true,"value":"overpriced"}"#.into()))]);
        let request = Request::PriceTag { reviews: vec!["pricey".into()] };
        let response = provider(url, 0).call(&request).unwrap();
        assert_eq!(response, Response::PriceTag(PriceTag::Overpriced));
        let body: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["provider"], "price_tag");
        assert_eq!(body["payload"]["reviews"][0], "pricey");
    }

    #[test]
    fn retries_server_errors() {
        let (url, seen) = serve(vec![
            Some((503, "busy".into())),
            None,
            Some((200, r#"{"ok":true,"value":"a plate of food"}"#.into())),
        ]);
        let request = Request::Caption { image_ref: "img".into() };
        let response = provider(url, 2).call(&request).unwrap();
        assert_eq!(response, Response::Caption("a plate of food".into()));
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn exhausted_retries_is_provider_error() {
        let (url, _) = serve(vec![Some((500, "x".into())), Some((500, "y".into()))]);
        let request = Request::Caption { image_ref: "img".into() };
        let err = provider(url, 1).call(&request).unwrap_err();
        assert!(matches!(err, Error::Provider { .. }), "{err:?}");
    }

    #[test]
    fn not_ok_is_provider_error() {
        let (url, _) = serve(vec![Some((200, r#"{"ok":false,"value":"quota"}"#.into()))]);
        let request = Request::Summarize {
            reviews: vec!["a.".into()],
            subject: crate::providers::Subject::User,
        };
        match provider(url, 0).call(&request) {
            Err(Error::Provider { message, .. }) => assert_eq!(message, "quota"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_embedding_width_is_protocol_error() {
        let (url, _) = serve(vec![Some((200, r#"{"ok":true,"value":[0.1,0.2]}"#.into()))]);
        let request = Request::EmbedText { text: "x".into() };
        assert!(matches!(provider(url, 0).call(&request), Err(Error::Protocol(_))));
    }

    #[test]
    fn credential_is_redacted_in_debug() {
        let config = RemoteConfig {
            endpoint: "http://x".into(),
            api_key: Some("hunter2".into()),
            timeout: Duration::from_secs(1),
            retries: 0,
        };
        let shown = format!("{config:?}");
        assert!(!shown.contains("hunter2") && !shown.contains("http://x"));
    }

    #[test]
    fn transport_errors_hide_the_endpoint() {
        let p = provider("http://unreachable.invalid:9/v1".into(), 0);
        let err = p.call(&Request::Caption { image_ref: "img".into() }).unwrap_err().to_string();
        assert!(!err.contains("unreachable.invalid"), "{err}");
    }
}
