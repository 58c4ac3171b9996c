//! Request counters and latency histograms in the Prometheus text format.

use axum::http::StatusCode;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::Mutex;
use std::time::Duration;

/// Upper bucket bounds in seconds.
pub const BUCKETS: [f64; 10] = [0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 10.0];

#[derive(Default)]
struct Histogram {
    counts: [u64; BUCKETS.len()],
    total: u64,
    sum: f64,
}

#[derive(Default)]
struct Inner {
    requests: BTreeMap<(String, u16), u64>,
    latency: BTreeMap<String, Histogram>,
}

#[derive(Default)]
pub struct Metrics(Mutex<Inner>);

impl Metrics {
    pub fn record(&self, endpoint: &str, status: StatusCode, elapsed: Duration) {
        let mut m = self.0.lock().expect("metrics lock");
        *m.requests.entry((endpoint.to_string(), status.as_u16())).or_default() += 1;
        let h = m.latency.entry(endpoint.to_string()).or_default();
        let secs = elapsed.as_secs_f64();
        for (c, &b) in h.counts.iter_mut().zip(&BUCKETS) {
            if secs <= b {
                *c += 1;
            }
        }
        h.total += 1;
        h.sum += secs;
    }

    /// Requests seen for `endpoint` with `status`.
    pub fn count(&self, endpoint: &str, status: u16) -> u64 {
        let m = self.0.lock().expect("metrics lock");
        m.requests.get(&(endpoint.to_string(), status)).copied().unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let m = self.0.lock().expect("metrics lock");
        let mut out = String::new();
        out.push_str("# TYPE namerec_requests_total counter\n");
        for ((ep, status), n) in &m.requests {
            let _ = writeln!(out, "namerec_requests_total{{endpoint=\"{ep}\",status=\"{status}\"}} {n}");
        }
        out.push_str("# TYPE namerec_request_seconds histogram\n");
        for (ep, h) in &m.latency {
            for (c, b) in h.counts.iter().zip(&BUCKETS) {
                let _ = writeln!(out, "namerec_request_seconds_bucket{{endpoint=\"{ep}\",le=\"{b}\"}} {c}");
            }
            let _ = writeln!(out, "namerec_request_seconds_bucket{{endpoint=\"{ep}\",le=\"+Inf\"}} {}", h.total);
            let _ = writeln!(out, "namerec_request_seconds_sum{{endpoint=\"{ep}\"}} {}", h.sum);
            let _ = writeln!(out, "namerec_request_seconds_count{{endpoint=\"{ep}\"}} {}", h.total);
        }
        out
    }
}
