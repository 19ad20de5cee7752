//! HTTP client for an external refiner speaking `POST /refine`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use clickseg::cropgeom::ClickEncoding;
use clickseg::maskcore::Mask;
use clickseg::refine::{RefineError, RefineRequest, Refiner, RemoteRefineReply, RemoteRefineRequest};

pub struct RemoteRefiner {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
    encoding: Option<ClickEncoding>,
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl std::fmt::Debug for RemoteRefiner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteRefiner")
            .field("endpoint", &self.endpoint)
            .field("retries", &self.retries)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl RemoteRefiner {
    pub fn new(
        endpoint: String,
        timeout_ms: u64,
        retries: u32,
        max_in_flight: usize,
        encoding: Option<ClickEncoding>,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms.max(1))))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            endpoint,
            agent,
            retries,
            encoding,
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn post(&self, body: &RemoteRefineRequest, outer: usize) -> Result<Mask, RefineError> {
        let mut resp = self.agent.post(&self.endpoint).send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => RefineError::Timeout,
            e => RefineError::Transport(e.to_string()),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(RefineError::Transport(format!(
                "{} answered HTTP {status}",
                self.endpoint
            )));
        }
        let reply: RemoteRefineReply = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => RefineError::Timeout,
            e => RefineError::MalformedReply(e.to_string()),
        })?;
        reply.into_mask(outer)
    }
}

/// Releases an in-flight slot on drop.
struct Slot<'a>(&'a RemoteRefiner);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

impl Refiner for RemoteRefiner {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn refine(&self, req: &RefineRequest<'_>) -> Result<Mask, RefineError> {
        req.validate()?;
        let body = RemoteRefineRequest::from_request(req, self.encoding.as_ref())?;
        let _slot = {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_in_flight {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
            Slot(self)
        };
        let mut attempt = 0;
        loop {
            match self.post(&body, req.transform.outer) {
                Err(RefineError::Timeout | RefineError::Transport(_)) if attempt < self.retries => attempt += 1,
                other => return other,
            }
        }
    }
}
