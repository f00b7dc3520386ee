//! Blocking JSON-over-HTTP transport with a single retry, shared by the model-endpoint clients.

use std::time::Duration;

use serde_json::Value;

/// Failure of a request after all attempts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TransportFailure {
    Timeout,
    Unavailable(String),
    /// Non-retryable rejection (4xx other than 408/429) or an unparseable body.
    Rejected(String),
}

pub(crate) struct JsonTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
    attempts: usize,
}

impl JsonTransport {
    pub(crate) fn new(timeout: Duration, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            api_key,
            attempts: 2,
        }
    }

    /// POSTs `body` to `url`; transient failures (transport errors, timeouts, 408/429/5xx)
    /// are retried once.
    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value, TransportFailure> {
        let mut last = TransportFailure::Unavailable("no attempt made".into());
        for attempt in 0..self.attempts {
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(failure @ TransportFailure::Rejected(_)) => return Err(failure),
                Err(failure) => {
                    log::debug!("attempt {} to {url} failed: {failure:?}", attempt + 1);
                    last = failure;
                }
            }
        }
        Err(last)
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, TransportFailure> {
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(TransportFailure::Timeout),
            Err(e) => return Err(TransportFailure::Unavailable(e.to_string())),
        };
        let status = response.status().as_u16();
        if status == 408 || status == 429 || status >= 500 {
            return Err(TransportFailure::Unavailable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(TransportFailure::Rejected(format!("HTTP {status}")));
        }
        match response.body_mut().read_json::<Value>() {
            Ok(v) => Ok(v),
            Err(ureq::Error::Timeout(_)) => Err(TransportFailure::Timeout),
            Err(e) => Err(TransportFailure::Rejected(format!("bad response body: {e}"))),
        }
    }
}

pub(crate) fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
pub(crate) mod test_server {
    //! Minimal scripted HTTP/1.1 server for transport tests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::thread;

    pub(crate) struct ScriptedServer {
        pub(crate) url: String,
        pub(crate) hits: Arc<AtomicUsize>,
    }

    /// Serves `responses[i]` (status, body) for the i-th connection; the last entry repeats.
    pub(crate) fn spawn(responses: Vec<(u16, String)>) -> ScriptedServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, body) = responses[n.min(responses.len() - 1)].clone();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0u8; content_length];
                let _ = reader.read_exact(&mut buf);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        ScriptedServer { url, hits }
    }
}
