use std::io::{BufRead, BufReader};

use citytb_testbed::http::{ErrorBody, KEY_HEADER};
use serde_json::Value;

use crate::Failure;

pub struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: &str) -> Client {
        let cfg = ureq::Agent::config_builder().http_status_as_error(false).build();
        Client {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_config(cfg),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish(&self, r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<String, Failure> {
        let mut r = r.map_err(|e| Failure::Remote(format!("{}: {e}", self.base)))?;
        let status = r.status();
        let body = r
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Remote(format!("reading response: {e}")))?;
        if status.is_success() {
            return Ok(body);
        }
        Err(Failure::Remote(match serde_json::from_str::<ErrorBody>(&body) {
            Ok(e) => format!("{} {}: {}", status.as_u16(), e.error, e.detail),
            Err(_) => format!("{status}: {}", body.trim()),
        }))
    }

    pub fn get(&self, path: &str, query: &[(String, String)]) -> Result<String, Failure> {
        let mut req = self.agent.get(self.url(path));
        for (k, v) in query {
            req = req.query(k, v);
        }
        self.finish(req.call())
    }

    pub fn get_keyed(&self, path: &str, key: &str, query: &[(String, String)]) -> Result<String, Failure> {
        let mut req = self.agent.get(self.url(path)).header(KEY_HEADER, key);
        for (k, v) in query {
            req = req.query(k, v);
        }
        self.finish(req.call())
    }

    /// Streams a long-lived ndjson response line by line.
    pub fn follow(
        &self,
        path: &str,
        key: &str,
        query: &[(String, String)],
        mut each: impl FnMut(&str),
    ) -> Result<(), Failure> {
        let mut req = self.agent.get(self.url(path)).header(KEY_HEADER, key);
        for (k, v) in query {
            req = req.query(k, v);
        }
        let r = req.call().map_err(|e| Failure::Remote(format!("{}: {e}", self.base)))?;
        if !r.status().is_success() {
            return self.finish(Ok(r)).map(|_| ());
        }
        let reader = BufReader::new(r.into_body().into_reader());
        for line in reader.lines() {
            let line = line.map_err(|e| Failure::Remote(format!("stream: {e}")))?;
            if !line.is_empty() {
                each(&line);
            }
        }
        Ok(())
    }

    pub fn post_json(&self, path: &str, body: &Value, key: Option<&str>) -> Result<String, Failure> {
        let mut req = self.agent.post(self.url(path)).header("content-type", "application/json");
        if let Some(k) = key {
            req = req.header(KEY_HEADER, k);
        }
        self.finish(req.send(body.to_string().as_str()))
    }

    pub fn post_text(&self, path: &str, body: &str) -> Result<String, Failure> {
        let req = self.agent.post(self.url(path)).header("content-type", "text/plain");
        self.finish(req.send(body))
    }

    pub fn post_bytes(&self, path: &str, query: &[(String, String)], body: &[u8], key: &str) -> Result<String, Failure> {
        let mut req = self
            .agent
            .post(self.url(path))
            .header("content-type", "application/octet-stream")
            .header(KEY_HEADER, key);
        for (k, v) in query {
            req = req.query(k, v);
        }
        self.finish(req.send(body))
    }

    pub fn put_text(&self, path: &str, body: &str) -> Result<String, Failure> {
        let req = self.agent.put(self.url(path)).header("content-type", "text/plain");
        self.finish(req.send(body))
    }

    pub fn delete(&self, path: &str) -> Result<String, Failure> {
        self.finish(self.agent.delete(self.url(path)).call())
    }
}
