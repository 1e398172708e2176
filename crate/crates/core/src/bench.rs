//! Wall-time comparison of the update engines over growing sample sizes.
//!
//! Only the update itself is timed: data are generated (or sliced) and the
//! fresh model is built before the clock starts. Engines run interleaved on
//! the same data within each repetition, and repetitions cycle through the sizes.

use std::time::Instant;

use serde::Serialize;
use statrs::statistics::Statistics;

use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::inference::{fit, Engine, FitOptions};
use crate::model::{MetaTreeModel, MetaTreeSpec};
use crate::synth;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub spec: MetaTreeSpec,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub engines: Vec<Engine>,
    pub options: FitOptions,
}

impl BenchConfig {
    /// Sizes 50/100/200, 100 repetitions, sequential against batch and sparse.
    pub fn new(spec: MetaTreeSpec) -> Self {
        Self {
            spec,
            sizes: vec![50, 100, 200],
            reps: 100,
            seed: 0,
            engines: vec![Engine::Sequential, Engine::Batch, Engine::Sparse],
            options: FitOptions::default(),
        }
    }
}

/// Where each repetition's data come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh draws from the model's generative process, seeded per `(n, rep)`.
    Synthetic,
    /// The first `n` rows of a user-supplied batch.
    Fixed(DataBatch),
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSample {
    pub engine: Engine,
    pub n: usize,
    pub rep: usize,
    pub wall_time_ms: f64,
    pub nodes_visited: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub engine: Engine,
    pub n: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_nodes_visited: usize,
    pub max_nodes_visited: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchResult {
    pub samples: Vec<BenchSample>,
    pub summaries: Vec<BenchSummary>,
}

impl BenchResult {
    pub fn summary(&self, engine: Engine, n: usize) -> Option<&BenchSummary> {
        self.summaries.iter().find(|s| s.engine == engine && s.n == n)
    }

    /// Mean time at `large` over mean time at `small`.
    pub fn ratio(&self, engine: Engine, small: usize, large: usize) -> Option<f64> {
        Some(self.summary(engine, large)?.mean_ms / self.summary(engine, small)?.mean_ms)
    }

    /// CSV with columns `engine,n,rep,wall_time_ms,nodes_visited`.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("engine,n,rep,wall_time_ms,nodes_visited\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.engine, s.n, s.rep, s.wall_time_ms, s.nodes_visited
            ));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12}{:>8}{:>14}{:>14}{:>16}\n",
            "engine", "n", "mean (ms)", "std (ms)", "nodes visited"
        );
        for s in &self.summaries {
            let visited = if s.min_nodes_visited == s.max_nodes_visited {
                s.min_nodes_visited.to_string()
            } else {
                format!("{}-{}", s.min_nodes_visited, s.max_nodes_visited)
            };
            out.push_str(&format!(
                "{:<12}{:>8}{:>14.4}{:>14.4}{:>16}\n",
                s.engine.name(),
                s.n,
                s.mean_ms,
                s.std_ms,
                visited
            ));
        }
        out
    }
}

fn rep_seed(seed: u64, n: usize, rep: usize) -> u64 {
    seed ^ ((n as u64) << 32) ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn run_bench(config: &BenchConfig, source: &DataSource) -> Result<BenchResult> {
    config.spec.shape.require_bounded("benchmarking")?;
    if config.reps == 0 {
        return Err(Error::InvalidHyperparameter("reps must be positive".into()));
    }
    let template = MetaTreeModel::new(config.spec.clone())?;

    let data_for = |n: usize, rep: usize| -> Result<DataBatch> {
        match source {
            DataSource::Synthetic => synth::generate_seeded(&config.spec, n, rep_seed(config.seed, n, rep)),
            DataSource::Fixed(batch) if batch.len() >= n => Ok(batch.truncated(n)),
            DataSource::Fixed(batch) => Err(Error::InvalidHyperparameter(format!(
                "benchmark size {n} exceeds the {} rows supplied",
                batch.len()
            ))),
        }
    };

    // Warm-up pass, untimed.
    for &n in &config.sizes {
        let data = data_for(n, 0)?;
        for &engine in &config.engines {
            let mut model = template.clone();
            fit(&mut model, engine, &data, &config.options)?;
        }
    }

    // Sizes interleave within each repetition so that drift in machine speed
    // lands on every size alike.
    let mut result = BenchResult::default();
    for rep in 0..config.reps {
        for &n in &config.sizes {
            let data = data_for(n, rep)?;
            for &engine in &config.engines {
                let mut model = template.clone();
                let start = Instant::now();
                let report = fit(&mut model, engine, &data, &config.options)?;
                let elapsed = start.elapsed();
                result.samples.push(BenchSample {
                    engine,
                    n,
                    rep,
                    wall_time_ms: elapsed.as_secs_f64() * 1e3,
                    nodes_visited: report.nodes_visited,
                });
            }
        }
    }
    result.samples.sort_by_key(|s| (s.n, s.rep));
    for &n in &config.sizes {
        for &engine in &config.engines {
            let runs: Vec<&BenchSample> = result
                .samples
                .iter()
                .filter(|s| s.engine == engine && s.n == n)
                .collect();
            let times: Vec<f64> = runs.iter().map(|s| s.wall_time_ms).collect();
            let std_ms = if times.len() > 1 { (&times).std_dev() } else { 0.0 };
            result.summaries.push(BenchSummary {
                engine,
                n,
                mean_ms: (&times).mean(),
                std_ms,
                min_nodes_visited: runs.iter().map(|s| s.nodes_visited).min().unwrap_or(0),
                max_nodes_visited: runs.iter().map(|s| s.nodes_visited).max().unwrap_or(0),
            });
        }
    }
    Ok(result)
}
