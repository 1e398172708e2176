//! The four subcommands. Each writes its primary output to `out` and returns
//! whether the run succeeded in the command's own sense (only `verify` can
//! return `false`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use metatree::bench::{run_bench, BenchConfig, DataSource};
use metatree::inference::{fit, predict};
use metatree::oracle::{self, ExactPosterior};
use metatree::{DataBatch, Engine, FitReport, MetaTreeModel, MetaTreeSpec};

use crate::config::RunConfig;
use crate::input::{read_table_file, Table};

/// Largest gap `verify` accepts between an engine and the enumeration.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

/// Predictives are compared on every point of `{1..M}^K` up to this many.
const MAX_VERIFY_POINTS: u64 = 4096;

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| anyhow!("no {what} given (use --{what} or the config)"))
}

fn load_batch(config: &RunConfig) -> Result<(Table, MetaTreeSpec)> {
    let table = read_table_file(require(&config.data, "data")?, true, config.zero_based)?;
    let spec = config.spec(Some(table.feature_count as u32))?;
    Ok((table, spec))
}

pub fn load_model(path: &Path) -> Result<MetaTreeModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    MetaTreeModel::from_json(&text).with_context(|| format!("loading model {}", path.display()))
}

/// Fits the CSV, writes the model JSON to `config.out` (default `model.json`)
/// and the report as one JSON line to `report`.
pub fn cmd_fit(config: &RunConfig, report: &mut dyn Write) -> Result<(MetaTreeModel, FitReport)> {
    let (table, spec) = load_batch(config)?;
    let data = table.into_batch(spec.shape.arity)?;
    let mut model = MetaTreeModel::new(spec)?;
    let fit_report = fit(&mut model, config.engine, &data, &config.options())?;

    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    fs::write(&out, model.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    writeln!(report, "{}", serde_json::to_string(&fit_report)?)?;
    Ok((model, fit_report))
}

/// One line per row: `{"row": i, "x": [...], "p_one": P(y = 1 | x, data)}`.
pub fn predictions_jsonl(model: &MetaTreeModel, xs: &[Vec<u32>]) -> Result<String> {
    let shape = model.shape();
    let mut checked = DataBatch::new(shape.arity, shape.feature_count as usize);
    let mut out = String::new();
    for (i, x) in xs.iter().enumerate() {
        checked.push(x, 0)?;
        let p = predict(model, x)?;
        out.push_str(&serde_json::to_string(&json!({"row": i + 1, "x": x, "p_one": p.prob(1)}))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_predict(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let model = load_model(require(&config.model, "model")?)?;
    let table = read_table_file(require(&config.data, "data")?, false, config.zero_based)?;
    let k = model.shape().feature_count as usize;
    if table.feature_count != k {
        bail!("the model has {k} features but the CSV has {}", table.feature_count);
    }
    let lines = predictions_jsonl(&model, &table.xs)?;
    match &config.out {
        Some(path) => fs::write(path, lines).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(lines.as_bytes())?,
    }
    Ok(())
}

/// Worst-case gaps between one fitted model and the enumeration.
#[derive(Debug, Clone, Serialize)]
pub struct Discrepancy {
    pub source: String,
    pub g: f64,
    pub subtree: f64,
    /// On the log scale.
    pub marginal: f64,
    pub predictive: f64,
}

impl Discrepancy {
    pub fn max(&self) -> f64 {
        worse(worse(self.g, self.subtree), worse(self.marginal, self.predictive))
    }

    /// False if any gap is NaN.
    pub fn passes(&self) -> bool {
        [self.g, self.subtree, self.marginal, self.predictive]
            .iter()
            .all(|&d| d <= VERIFY_TOLERANCE)
    }
}

/// `max` that keeps NaN.
fn worse(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn verify_points(model: &MetaTreeModel, data: &DataBatch) -> Vec<Vec<u32>> {
    let shape = model.shape();
    let total = u64::from(shape.arity).checked_pow(shape.feature_count);
    if total.is_some_and(|t| t <= MAX_VERIFY_POINTS) {
        let mut points = vec![vec![]];
        for _ in 0..shape.feature_count {
            points = points
                .into_iter()
                .flat_map(|p: Vec<u32>| {
                    (1..=shape.arity).map(move |m| {
                        let mut q = p.clone();
                        q.push(m);
                        q
                    })
                })
                .collect();
        }
        points
    } else {
        data.rows().map(|(x, _)| x.to_vec()).collect()
    }
}

/// Compares a fitted model with the enumeration over `data`.
pub fn discrepancy(
    source: &str,
    fitted: &MetaTreeModel,
    exact: &ExactPosterior,
    data: &DataBatch,
) -> Result<Discrepancy> {
    let prior = MetaTreeModel::new(fitted.spec().clone())?;
    let mut g: f64 = 0.0;
    for address in fitted.enumerate_addresses()? {
        if let Some(p) = exact.split_prob(&address) {
            g = worse(g, (fitted.g_posterior(&address) - p).abs());
        }
    }
    let mut predictive: f64 = 0.0;
    for x in verify_points(fitted, data) {
        let want = oracle::predictive_from(&prior, exact, &x)?.prob(1);
        predictive = worse(predictive, (predict(fitted, &x)?.prob(1) - want).abs());
    }
    Ok(Discrepancy {
        source: source.to_string(),
        g,
        subtree: oracle::max_subtree_discrepancy(fitted, exact)?,
        marginal: (fitted.log_marginal_likelihood() - exact.log_evidence).abs(),
        predictive,
    })
}

/// Runs every applicable engine (and the model in `config.model`, if any)
/// against the enumeration. One JSON line per source, then a summary line.
pub fn cmd_verify(config: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let supplied = config.model.as_deref().map(load_model).transpose()?;
    let table = read_table_file(require(&config.data, "data")?, true, config.zero_based)?;
    let spec = match &supplied {
        Some(model) => model.spec().clone(),
        None => config.spec(Some(table.feature_count as u32))?,
    };
    if table.feature_count != spec.shape.feature_count as usize {
        bail!(
            "the model has {} features but the CSV has {}",
            spec.shape.feature_count,
            table.feature_count
        );
    }
    let data = table.into_batch(spec.shape.arity)?;
    let prior = MetaTreeModel::new(spec)?;
    let exact = oracle::exact_posterior(&prior, &data)?;

    let mut results = Vec::new();
    for engine in Engine::ALL {
        if engine == Engine::Lazy && prior.spec().shared_leaf_prior().is_none() {
            continue;
        }
        let mut model = prior.clone();
        fit(&mut model, engine, &data, &config.options())?;
        results.push(discrepancy(engine.name(), &model, &exact, &data)?);
    }
    if let (Some(model), Some(path)) = (&supplied, &config.model) {
        results.push(discrepancy(&path.display().to_string(), model, &exact, &data)?);
    }

    let mut pass = true;
    let mut worst: f64 = 0.0;
    for r in &results {
        writeln!(out, "{}", serde_json::to_string(&json!({
            "source": r.source,
            "g": r.g,
            "subtree": r.subtree,
            "marginal": r.marginal,
            "predictive": r.predictive,
            "pass": r.passes(),
        }))?)?;
        pass &= r.passes();
        worst = worse(worst, r.max());
    }
    writeln!(out, "{}", serde_json::to_string(&json!({
        "subtrees": exact.entries.len(),
        "n": data.len(),
        "max_discrepancy": worst,
        "tolerance": VERIFY_TOLERANCE,
        "pass": pass,
    }))?)?;
    Ok(pass)
}

/// Prints the timing table to `out` and writes the per-repetition CSV to
/// `config.out` (default `bench.csv`).
pub fn cmd_bench(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (spec, source) = match &config.data {
        Some(_) => {
            let (table, spec) = load_batch(config)?;
            let data = table.into_batch(spec.shape.arity)?;
            (spec, DataSource::Fixed(data))
        }
        None => (config.spec(None)?, DataSource::Synthetic),
    };
    let bench = BenchConfig {
        spec,
        sizes: config.sizes.clone(),
        reps: config.reps,
        seed: config.seed,
        engines: config.engines.clone(),
        options: config.options(),
    };
    let result = run_bench(&bench, &source)?;
    write!(out, "{}", result.table())?;
    if let (Some(&small), Some(&large)) = (bench.sizes.iter().min(), bench.sizes.iter().max()) {
        if small != large {
            for &engine in &bench.engines {
                if let Some(r) = result.ratio(engine, small, large) {
                    writeln!(out, "{engine}: t({large})/t({small}) = {r:.3}")?;
                }
            }
        }
    }
    let path = config.out.clone().unwrap_or_else(|| PathBuf::from("bench.csv"));
    fs::write(&path, result.samples_csv()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
