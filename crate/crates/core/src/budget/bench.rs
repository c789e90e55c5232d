//! Latency micro-benchmark: warmup, timed iterations on a dedicated thread,
//! summary statistics over the raw samples.

use std::fmt::Display;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub const MIN_ITERS: usize = 10;

// Held for the whole measurement; benchmarks in one process never overlap.
static BENCH_LOCK: Mutex<()> = Mutex::new(());

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConditions {
    pub warmup: usize,
    pub iters: usize,
    pub clock: String,
    pub thread: String,
    pub os: String,
    pub arch: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples_ms: Vec<f64>,
    pub conditions: BenchConditions,
}

impl LatencyStats {
    /// Summarizes raw samples. `p95` is nearest-rank, the median averages the
    /// two middle samples for even counts.
    pub fn from_samples(samples_ms: Vec<f64>, warmup: usize) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let (mean, median, p95, min, max) = if n == 0 {
            (0.0, 0.0, 0.0, 0.0, 0.0)
        } else {
            let mean = sorted.iter().sum::<f64>() / n as f64;
            let median = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            };
            let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
            (mean, median, sorted[rank - 1], sorted[0], sorted[n - 1])
        };
        Self {
            mean_ms: mean,
            median_ms: median,
            p95_ms: p95,
            min_ms: min,
            max_ms: max,
            conditions: BenchConditions {
                warmup,
                iters: samples_ms.len(),
                clock: "monotonic (std::time::Instant)".into(),
                thread: "dedicated, single".into(),
                os: std::env::consts::OS.into(),
                arch: std::env::consts::ARCH.into(),
            },
            samples_ms,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("need at least {MIN_ITERS} timed iterations, got {0}")]
    TooFewIters(usize),
    #[error("callable failed at iteration {iteration}: {message}")]
    CallableFailed {
        iteration: usize,
        message: String,
        /// Statistics over the samples recorded before the failure.
        partial: Box<LatencyStats>,
    },
    #[error("benchmark thread panicked")]
    Panicked,
}

/// Times `f` on a dedicated thread: `warmup` untimed calls, then `iters`
/// timed ones. Concurrent calls within one process are serialized.
pub fn bench_latency<F, E>(f: F, warmup: usize, iters: usize) -> Result<LatencyStats, BenchError>
where
    F: FnMut() -> Result<(), E> + Send,
    E: Display,
{
    if iters < MIN_ITERS {
        return Err(BenchError::TooFewIters(iters));
    }
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut f = f;
    std::thread::scope(|scope| {
        let handle = scope.spawn(move || -> Result<LatencyStats, BenchError> {
            for i in 0..warmup {
                if let Err(e) = f() {
                    return Err(BenchError::CallableFailed {
                        iteration: i,
                        message: format!("warmup: {e}"),
                        partial: Box::new(LatencyStats::from_samples(Vec::new(), i)),
                    });
                }
            }
            let mut samples = Vec::with_capacity(iters);
            for i in 0..iters {
                let start = Instant::now();
                let res = f();
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                if let Err(e) = res {
                    return Err(BenchError::CallableFailed {
                        iteration: warmup + i,
                        message: e.to_string(),
                        partial: Box::new(LatencyStats::from_samples(samples, warmup)),
                    });
                }
                samples.push(elapsed);
            }
            Ok(LatencyStats::from_samples(samples, warmup))
        });
        handle.join().map_err(|_| BenchError::Panicked)?
    })
}
