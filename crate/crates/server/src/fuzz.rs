//! Randomised load against a running server: concurrent annotators sending a
//! mix of valid answers, malformed bodies, stale task ids, over-limit click
//! lists and forced lease expiries.

use std::collections::BTreeMap;
use std::sync::Mutex;

use clickseg::annsim::substream;
use rand::Rng;

use crate::service::TaskLease;

#[derive(Debug, Clone)]
pub struct FuzzParams {
    pub annotators: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuzzReport {
    pub requests: usize,
    pub by_status: BTreeMap<u16, usize>,
    /// Requests answered with a 5xx or not answered at all.
    pub failures: Vec<String>,
    pub accepted_answers: usize,
}

impl FuzzReport {
    fn merge(&mut self, o: FuzzReport) {
        self.requests += o.requests;
        for (k, v) in o.by_status {
            *self.by_status.entry(k).or_default() += v;
        }
        self.failures.extend(o.failures);
        self.accepted_answers += o.accepted_answers;
    }
}

struct Client {
    base: String,
    agent: ureq::Agent,
    report: FuzzReport,
}

impl Client {
    fn call(&mut self, method: &str, path: &str, body: Option<&[u8]>) -> Option<(u16, String)> {
        let url = format!("{}{path}", self.base);
        let res = match (method, body) {
            ("GET", _) => self.agent.get(&url).call(),
            (_, Some(b)) => self.agent.post(&url).content_type("application/json").send(b),
            _ => self.agent.post(&url).send_empty(),
        };
        self.report.requests += 1;
        match res {
            Ok(mut r) => {
                let status = r.status().as_u16();
                *self.report.by_status.entry(status).or_default() += 1;
                let text = r.body_mut().read_to_string().unwrap_or_default();
                if status >= 500 {
                    self.report.failures.push(format!("{method} {path}: {status} {text}"));
                }
                Some((status, text))
            }
            Err(e) => {
                self.report.failures.push(format!("{method} {path}: {e}"));
                None
            }
        }
    }
}

fn click_json(x: f64, y: f64, positive: bool, t: u64) -> String {
    let p = if positive { "positive" } else { "negative" };
    format!(r#"{{"x":{x},"y":{y},"polarity":"{p}","t_ms":{t}}}"#)
}

fn garbage(rng: &mut impl Rng) -> Vec<u8> {
    const SAMPLES: [&str; 12] = [
        "",
        "{",
        "null",
        "[]",
        "{\"clicks\":null}",
        "{\"clicks\":[{\"x\":\"1\",\"y\":2,\"polarity\":\"positive\"}]}",
        "{\"clicks\":[{\"x\":1e999,\"y\":2,\"polarity\":\"positive\"}]}",
        "{\"clicks\":[{\"x\":1,\"y\":2,\"polarity\":\"sideways\"}]}",
        "{\"clicks\":[{\"x\":1,\"y\":2,\"polarity\":\"positive\",\"t_ms\":-4}]}",
        "\"SKIP\"",
        "{\"answer\":\"skip\"}",
        "{\"clicks\":[],\"duration_ms\":1}",
    ];
    if rng.random_bool(0.3) {
        (0..rng.random_range(1..64)).map(|_| rng.random()).collect()
    } else {
        SAMPLES[rng.random_range(0..SAMPLES.len())].as_bytes().to_vec()
    }
}

/// Runs `params.annotators` threads against `base` (e.g. `http://127.0.0.1:8080`).
/// `expire` is called for forced lease expiries, typically advancing a
/// manual clock past the lease duration.
pub fn run(base: &str, params: &FuzzParams, expire: &(dyn Fn() + Sync)) -> FuzzReport {
    let total = Mutex::new(FuzzReport::default());
    let seen_tasks = Mutex::new(Vec::<String>::new());
    std::thread::scope(|scope| {
        for a in 0..params.annotators {
            let (total, seen_tasks) = (&total, &seen_tasks);
            scope.spawn(move || {
                let mut rng = substream(params.seed, "fuzz", a as u32);
                let agent = ureq::Agent::config_builder()
                    .http_status_as_error(false)
                    .build()
                    .new_agent();
                let mut c = Client {
                    base: base.to_string(),
                    agent,
                    report: FuzzReport::default(),
                };
                let me = format!("annotator-{a}");
                for _ in 0..params.steps {
                    let Some((status, text)) = c.call("GET", &format!("/api/v1/tasks/next?annotator={me}"), None)
                    else {
                        continue;
                    };
                    if status == 204 {
                        if rng.random_bool(0.5) {
                            c.call("POST", "/api/v1/campaign/advance-round", None);
                        }
                        continue;
                    }
                    let Ok(lease) = serde_json::from_str::<TaskLease>(&text) else {
                        continue;
                    };
                    seen_tasks.lock().unwrap().push(lease.task_id.clone());
                    let path = format!("/api/v1/tasks/{}/answer", lease.task_id);
                    let size = lease.canvas_size as f64;
                    let valid_clicks = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                        let cs: Vec<String> = (0..n)
                            .map(|i| {
                                click_json(
                                    rng.random_range(0.0..size),
                                    rng.random_range(0.0..size),
                                    rng.random_bool(0.5),
                                    500 * i as u64,
                                )
                            })
                            .collect();
                        format!(
                            r#"{{"clicks":[{}],"duration_ms":{}}}"#,
                            cs.join(","),
                            rng.random_range(1..60_000)
                        )
                    };
                    let body: Vec<u8> = match rng.random_range(0..100) {
                        0..45 => valid_clicks(rng.random_range(1..=lease.max_clicks), &mut rng).into_bytes(),
                        45..52 => b"\"zero_clicks\"".to_vec(),
                        52..55 => b"\"skip\"".to_vec(),
                        55..63 => valid_clicks(lease.max_clicks + 1 + rng.random_range(0..3), &mut rng).into_bytes(),
                        63..68 => format!(r#"{{"clicks":[{}]}}"#, click_json(size + 3.0, -1.0, true, 0)).into_bytes(),
                        68..82 => garbage(&mut rng),
                        82..88 => {
                            // someone else's (or an old) task
                            let other = {
                                let seen = seen_tasks.lock().unwrap();
                                seen[rng.random_range(0..seen.len())].clone()
                            };
                            let b = valid_clicks(1, &mut rng);
                            c.call("POST", &format!("/api/v1/tasks/{other}/answer"), Some(b.as_bytes()));
                            c.call("POST", "/api/v1/tasks/no-such-task/answer", Some(b.as_bytes()));
                            continue;
                        }
                        88..92 => {
                            expire();
                            valid_clicks(1, &mut rng).into_bytes()
                        }
                        92..96 => {
                            c.call("POST", "/api/v1/campaign/advance-round", None);
                            continue;
                        }
                        _ => {
                            let r = rng.random_range(0..6);
                            c.call("GET", &format!("/api/v1/masks/{}?round={r}", lease.instance_id), None);
                            c.call("GET", &format!("/api/v1/masks/{}?round=x", lease.instance_id), None);
                            c.call("GET", "/api/v1/reports/rounds.csv", None);
                            continue;
                        }
                    };
                    if let Some((200, _)) = c.call("POST", &path, Some(&body)) {
                        c.report.accepted_answers += 1;
                        // retried delivery of the same answer
                        if rng.random_bool(0.2) {
                            c.call("POST", &path, Some(&body));
                        }
                    }
                }
                total.lock().unwrap().merge(c.report);
            });
        }
    });
    total.into_inner().unwrap()
}
