//! Closed-loop load generator: `concurrency` client threads, each with its own
//! keep-alive connection, issue `total` GET requests between them.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    /// Ascending.
    pub latencies: Vec<Duration>,
    pub status_counts: BTreeMap<u16, usize>,
    /// Requests that got no HTTP response at all.
    pub transport_errors: usize,
    pub wall: Duration,
}

impl LoadReport {
    /// Nearest-rank quantile, `q` in [0, 1].
    pub fn quantile(&self, q: f64) -> Duration {
        if self.latencies.is_empty() {
            return Duration::ZERO;
        }
        let rank = (q.clamp(0.0, 1.0) * self.latencies.len() as f64).ceil() as usize;
        self.latencies[rank.clamp(1, self.latencies.len()) - 1]
    }

    pub fn count(&self, status: u16) -> usize {
        self.status_counts.get(&status).copied().unwrap_or(0)
    }

    /// 5xx responses plus transport failures.
    pub fn failures(&self) -> usize {
        self.status_counts.range(500..600).map(|(_, n)| n).sum::<usize>() + self.transport_errors
    }

    pub fn throughput(&self) -> f64 {
        self.latencies.len() as f64 / self.wall.as_secs_f64().max(1e-9)
    }
}

/// Request `i` goes to `urls[i % urls.len()]`.
pub fn run(urls: &[String], concurrency: usize, total: usize, timeout: Duration) -> LoadReport {
    assert!(!urls.is_empty() && concurrency > 0);
    let next = AtomicUsize::new(0);
    let started = Instant::now();
    let per_thread: Vec<(Vec<Duration>, BTreeMap<u16, usize>, usize)> = thread::scope(|s| {
        let workers: Vec<_> = (0..concurrency)
            .map(|_| {
                s.spawn(|| {
                    let agent: ureq::Agent = ureq::Agent::config_builder()
                        .timeout_global(Some(timeout))
                        .http_status_as_error(false)
                        .build()
                        .into();
                    let mut lat = Vec::new();
                    let mut statuses = BTreeMap::new();
                    let mut errors = 0;
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= total {
                            break;
                        }
                        let t0 = Instant::now();
                        match agent.get(&urls[i % urls.len()]).call() {
                            Ok(mut resp) => {
                                let _ = resp.body_mut().read_to_vec();
                                lat.push(t0.elapsed());
                                *statuses.entry(resp.status().as_u16()).or_insert(0) += 1;
                            }
                            Err(_) => errors += 1,
                        }
                    }
                    (lat, statuses, errors)
                })
            })
            .collect();
        workers.into_iter().map(|w| w.join().expect("load worker panicked")).collect()
    });
    let wall = started.elapsed();

    let mut report = LoadReport { latencies: Vec::with_capacity(total), status_counts: BTreeMap::new(), transport_errors: 0, wall };
    for (lat, statuses, errors) in per_thread {
        report.latencies.extend(lat);
        for (k, v) in statuses {
            *report.status_counts.entry(k).or_insert(0) += v;
        }
        report.transport_errors += errors;
    }
    report.latencies.sort_unstable();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let r = LoadReport {
            latencies: (1..=100).map(Duration::from_millis).collect(),
            status_counts: BTreeMap::from([(200, 97), (503, 2)]),
            transport_errors: 1,
            wall: Duration::from_secs(1),
        };
        assert_eq!(r.quantile(0.5), Duration::from_millis(50));
        assert_eq!(r.quantile(0.99), Duration::from_millis(99));
        assert_eq!(r.quantile(0.0), Duration::from_millis(1));
        assert_eq!(r.failures(), 3);
        assert_eq!(r.count(200), 97);
    }
}
