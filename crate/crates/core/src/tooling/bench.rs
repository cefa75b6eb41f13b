use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::GrayImage;
use crate::tensor::SeededRng;
use crate::training::LandmarkModel;

use super::{Result, ToolError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu: String,
    pub threads: usize,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|v| v.trim().to_string()))
            .unwrap_or_else(|| "unknown".into());
        Self { cpu, threads: 1, os: std::env::consts::OS.into(), arch: std::env::consts::ARCH.into() }
    }
}

/// Batch-1 latency in milliseconds of a full predict (forward and decode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub runs: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
    pub environment: Environment,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[pos]
}

pub fn time_inference(model: &LandmarkModel, n_warmup: usize, n_runs: usize) -> Result<Timing> {
    if n_runs == 0 {
        return Err(ToolError::Config("benchmark needs at least one run".into()));
    }
    let (w, h) = model.input_size();
    let mut rng = SeededRng::new(7);
    let img = GrayImage::new(w, h, (0..w * h).map(|_| rng.uniform() as f32).collect())?;
    for _ in 0..n_warmup {
        model.predict(&[&img])?;
    }
    let mut ms = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t = Instant::now();
        std::hint::black_box(model.predict(&[std::hint::black_box(&img)])?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = ms.iter().sum::<f64>() / n_runs as f64;
    ms.sort_by(f64::total_cmp);
    let median = if n_runs % 2 == 1 { ms[n_runs / 2] } else { (ms[n_runs / 2 - 1] + ms[n_runs / 2]) / 2.0 };
    Ok(Timing {
        runs: n_runs,
        mean_ms: mean,
        median_ms: median,
        p95_ms: percentile(&ms, 0.95),
        fps: 1e3 / mean,
        environment: Environment::detect(),
    })
}
