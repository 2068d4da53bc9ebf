use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use serde::Serialize;

use cran_cache::baselines::{
    most_popular_first, no_cache, proportional_allocation, proportional_by_popularity, uniform_allocation,
};
use cran_cache::channel::{ChannelModel, ChannelSet, SampleRole};
use cran_cache::evaluation::{evaluate_multi, Delivery, EvalOptions, EvalReport};
use cran_cache::rate::CacheAllocation;
use cran_cache::system::{ObjectiveSense, SystemConfig};
use cran_cache::trust_region::{
    optimize_cache_multi, optimize_cache_single, stationarity_gap, PopularityProfile, TrustRegionState,
};

use crate::config::{ExperimentConfig, Scheme};
use crate::output::{num, unwrap_artifact, CsvTable, Meta, OutputDir};
use crate::Failure;

type CmdResult = Result<(), Failure>;

fn solver<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Solver(e.into())
}

fn io<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Io(e.into())
}

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

/// Schemes swept by `zipf-sweep` when `--scheme` is not given.
const SWEEP_SCHEMES: [Scheme; 4] = [
    Scheme::Uniform,
    Scheme::Proportional,
    Scheme::MostPopular,
    Scheme::Optimized,
];

pub struct Context {
    config: ExperimentConfig,
    system: SystemConfig,
    out: OutputDir,
}

impl Context {
    pub fn new(config: ExperimentConfig, command: &'static str) -> anyhow::Result<Self> {
        let meta = Meta {
            tool: "cran-cache",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: config.hash(),
            seed: config.seed,
        };
        let out = OutputDir::create(&config.output_dir, meta)?;
        out.write_json("config.json", &config)?;
        Ok(Context {
            system: config.system(),
            config,
            out,
        })
    }

    fn model(&self) -> Result<ChannelModel, Failure> {
        ChannelModel::new(&self.config.geometry(), &self.system, &self.config.channel, self.config.seed)
            .map_err(config_err)
    }

    /// One shared set, or one per file when `per_file_samples` is set.
    fn channel_sets(&self, model: &ChannelModel, role: SampleRole) -> Result<Vec<ChannelSet>, Failure> {
        let n = match role {
            SampleRole::Train => self.config.train_samples,
            SampleRole::Test => self.config.test_samples,
        };
        let files = if self.config.per_file_samples { self.system.num_files } else { 1 };
        (0..files)
            .map(|k| model.sample(role, k, n).map_err(solver))
            .collect()
    }

    fn eval_options(&self, delivery: Delivery) -> EvalOptions {
        EvalOptions {
            percentiles: self.config.percentiles.clone(),
            delivery,
        }
    }
}

fn set_file_name(role: SampleRole, file: usize) -> String {
    let role = match role {
        SampleRole::Train => "train",
        SampleRole::Test => "test",
    };
    format!("channels/{role}_file{file}.json")
}

pub fn gen_channels(ctx: &Context) -> CmdResult {
    let model = ctx.model()?;
    for role in [SampleRole::Train, SampleRole::Test] {
        for (k, set) in ctx.channel_sets(&model, role)?.iter().enumerate() {
            let body: serde_json::Value = serde_json::from_str(&set.to_json().map_err(io)?).map_err(io)?;
            let path = ctx
                .out
                .write_json(&set_file_name(role, k), &serde_json::json!({ "set": body }))
                .map_err(io)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeArtifact<'a> {
    scheme: Scheme,
    objective: ObjectiveSense,
    allocation: &'a CacheAllocation,
    file_totals: Vec<f64>,
    bs_totals: Vec<f64>,
    final_objective: f64,
    objective_history: &'a [f64],
    outer_iterations: usize,
    converged: bool,
    stationarity_gap: Option<f64>,
}

/// Runs the trust-region optimizer for the configured popularity.
fn optimize_allocation(
    ctx: &Context,
    train: &[ChannelSet],
    popularity: &PopularityProfile,
) -> Result<(CacheAllocation, TrustRegionState), Failure> {
    let options = &ctx.config.trust_region;
    if ctx.system.num_files == 1 {
        optimize_cache_single(&train[0], &ctx.system, ctx.config.objective, options).map_err(solver)
    } else {
        optimize_cache_multi(train, popularity, &ctx.system, options).map_err(solver)
    }
}

pub fn optimize(ctx: &Context) -> CmdResult {
    let model = ctx.model()?;
    let train = ctx.channel_sets(&model, SampleRole::Train)?;
    let popularity = ctx.config.popularity_profile().map_err(config_err)?;
    let (allocation, state) = optimize_allocation(ctx, &train, &popularity)?;
    let gap = match ctx.config.stationarity_probes {
        0 => None,
        probes => Some(
            stationarity_gap(
                &allocation,
                &train,
                &popularity,
                &ctx.system,
                ctx.config.objective,
                probes,
                ctx.config.seed,
            )
            .map_err(solver)?,
        ),
    };
    let artifact = OptimizeArtifact {
        scheme: Scheme::Optimized,
        objective: ctx.config.objective,
        allocation: &allocation,
        file_totals: allocation.file_totals(),
        bs_totals: allocation.bs_totals(),
        final_objective: state.final_objective(),
        objective_history: &state.objective_history,
        outer_iterations: state.outer_iterations,
        converged: state.converged,
        stationarity_gap: gap,
    };
    let path = ctx.out.write_json("allocation.json", &artifact).map_err(io)?;
    ctx.out
        .write_jsonl("iterations.jsonl", &state.log_jsonl().map_err(io)?)
        .map_err(io)?;
    println!(
        "wrote {} (objective {}, {} outer iterations)",
        path.display(),
        num(state.final_objective()),
        state.outer_iterations
    );
    Ok(())
}

fn load_allocation(path: &Path) -> anyhow::Result<CacheAllocation> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value = unwrap_artifact(&text, "allocation")?;
    serde_json::from_value(value).with_context(|| format!("{} is not an allocation", path.display()))
}

fn load_channel_set(path: &Path) -> anyhow::Result<ChannelSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value = unwrap_artifact(&text, "set")?;
    ChannelSet::from_json(&value.to_string()).with_context(|| format!("{} is not a channel set", path.display()))
}

#[derive(Serialize)]
struct EvaluateArtifact<'a> {
    allocation_source: String,
    channel_sources: Vec<String>,
    report: &'a EvalReport,
}

pub fn evaluate(ctx: &Context, allocation_path: &Path, channel_paths: &[PathBuf], delivery: Delivery) -> CmdResult {
    let allocation = load_allocation(allocation_path).map_err(config_err)?;
    allocation.validate(&ctx.system).map_err(config_err)?;
    let test = if channel_paths.is_empty() {
        ctx.channel_sets(&ctx.model()?, SampleRole::Test)?
    } else {
        channel_paths
            .iter()
            .map(|p| load_channel_set(p))
            .collect::<anyhow::Result<Vec<_>>>()
            .map_err(config_err)?
    };
    let popularity = ctx.config.popularity_profile().map_err(config_err)?;
    let report = evaluate_multi(&test, &allocation, &popularity, &ctx.system, &ctx.eval_options(delivery))
        .map_err(solver)?;
    let artifact = EvaluateArtifact {
        allocation_source: allocation_path.display().to_string(),
        channel_sources: channel_paths.iter().map(|p| p.display().to_string()).collect(),
        report: &report,
    };
    let path = ctx.out.write_json("evaluation.json", &artifact).map_err(io)?;
    ctx.out.write_csv_body("evaluation_cdf.csv", &report.cdf_csv()).map_err(io)?;
    println!("wrote {} (mean {} ms/Mb)", path.display(), num(report.mean_time_ms_per_mb));
    Ok(())
}

/// One evaluated scheme. `allocation` is `None` for the dynamic bound,
/// whose caches change with every channel.
#[derive(Serialize)]
struct SchemeResult {
    scheme: Scheme,
    allocation: Option<CacheAllocation>,
    report: EvalReport,
}

/// Builds and evaluates every scheme in `schemes` for one popularity
/// profile. The optimizer runs at most once and its log is returned.
fn run_schemes(
    ctx: &Context,
    schemes: &[Scheme],
    popularity: &PopularityProfile,
    train: &[ChannelSet],
    test: &[ChannelSet],
) -> Result<(Vec<SchemeResult>, Option<TrustRegionState>), Failure> {
    let system = &ctx.system;
    let gains = ctx.model()?.average_gains();
    let mut optimized: Option<(CacheAllocation, TrustRegionState)> = None;
    let mut results = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let (allocation, delivery) = match scheme {
            Scheme::NoCache => (no_cache(system), Delivery::Covariance),
            Scheme::Uniform => (uniform_allocation(system), Delivery::Covariance),
            Scheme::Proportional => {
                let alloc = if system.num_files == 1 {
                    proportional_allocation(&gains, system)
                } else {
                    proportional_by_popularity(&gains, popularity, system)
                };
                (alloc.map_err(solver)?, Delivery::Covariance)
            }
            Scheme::MostPopular => (
                most_popular_first(&gains, popularity, system).map_err(solver)?,
                Delivery::Covariance,
            ),
            Scheme::Optimized | Scheme::RankOne => {
                if optimized.is_none() {
                    optimized = Some(optimize_allocation(ctx, train, popularity)?);
                }
                let alloc = optimized.as_ref().map(|(a, _)| a.clone()).expect("just computed");
                let delivery = if scheme == Scheme::RankOne { Delivery::RankOne } else { Delivery::Covariance };
                (alloc, delivery)
            }
            Scheme::Bound => (uniform_allocation(system), Delivery::DynamicBound),
        };
        allocation
            .validate(system)
            .map_err(|e| solver(anyhow!("{scheme} produced an infeasible allocation: {e}")))?;
        let report = evaluate_multi(test, &allocation, popularity, system, &ctx.eval_options(delivery))
            .map_err(|e| solver(anyhow!("evaluating {scheme}: {e}")))?;
        results.push(SchemeResult {
            scheme,
            allocation: (delivery != Delivery::DynamicBound).then_some(allocation),
            report,
        });
    }
    Ok((results, optimized.map(|(_, s)| s)))
}

fn dedup(schemes: &[Scheme]) -> Vec<Scheme> {
    let mut out: Vec<Scheme> = Vec::new();
    for s in schemes {
        if !out.contains(s) {
            out.push(*s);
        }
    }
    out
}

/// Total cache a row uses: the budget for the dynamic bound, which spends
/// it afresh on every channel.
fn row_total(result: &SchemeResult, system: &SystemConfig) -> f64 {
    result
        .allocation
        .as_ref()
        .map_or(system.total_cache, CacheAllocation::total)
}

#[derive(Serialize)]
struct CompareArtifact<'a> {
    objective: ObjectiveSense,
    popularity: &'a [f64],
    results: &'a [SchemeResult],
}

pub fn compare(ctx: &Context) -> CmdResult {
    let model = ctx.model()?;
    let train = ctx.channel_sets(&model, SampleRole::Train)?;
    let test = ctx.channel_sets(&model, SampleRole::Test)?;
    let popularity = ctx.config.popularity_profile().map_err(config_err)?;
    let schemes = dedup(&ctx.config.schemes);
    let (results, state) = run_schemes(ctx, &schemes, &popularity, &train, &test)?;

    let (l_count, k_count) = (ctx.system.num_bs, ctx.system.num_files);
    let mut header = vec!["scheme".to_string(), "mean_ms_per_mb".to_string()];
    header.extend(ctx.config.percentiles.iter().map(|p| format!("p{}_ms_per_mb", num(*p))));
    header.extend(["mean_rate_bps_hz".to_string(), "total_cache".to_string()]);
    for l in 0..l_count {
        for k in 0..k_count {
            header.push(format!("cache_bs{}_file{}", l + 1, k + 1));
        }
    }
    let mut table = CsvTable::new(header);
    for r in &results {
        let mut row = vec![r.scheme.label().to_string(), num(r.report.mean_time_ms_per_mb)];
        row.extend(r.report.time_percentiles.iter().map(|p| num(p.value * r.report.ms_per_mb_factor)));
        row.push(num(r.report.mean_rate));
        row.push(num(row_total(r, &ctx.system)));
        match &r.allocation {
            Some(a) => row.extend(a.as_slice().iter().map(|c| num(*c))),
            None => row.extend(std::iter::repeat_n(String::new(), l_count * k_count)),
        }
        table.push(row);
        ctx.out
            .write_csv_body(&format!("cdf_{}.csv", r.scheme.name()), &r.report.cdf_csv())
            .map_err(io)?;
    }
    let path = ctx.out.write_csv("compare.csv", &table).map_err(io)?;
    ctx.out
        .write_json(
            "compare.json",
            &CompareArtifact {
                objective: ctx.config.objective,
                popularity: popularity.probabilities(),
                results: &results,
            },
        )
        .map_err(io)?;
    if let Some(state) = state {
        ctx.out
            .write_jsonl("iterations.jsonl", &state.log_jsonl().map_err(io)?)
            .map_err(io)?;
    }
    print!("{}", table.render());
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepPoint {
    alpha: f64,
    popularity: Vec<f64>,
    results: Vec<SchemeResult>,
}

pub fn zipf_sweep(ctx: &Context, schemes_given: bool) -> CmdResult {
    if ctx.config.objective != ObjectiveSense::Time {
        return Err(config_err(anyhow!("zipf-sweep compares expected download time; use --objective time")));
    }
    let schemes = if schemes_given { dedup(&ctx.config.schemes) } else { SWEEP_SCHEMES.to_vec() };
    let model = ctx.model()?;
    let train = ctx.channel_sets(&model, SampleRole::Train)?;
    let test = ctx.channel_sets(&model, SampleRole::Test)?;
    let k_count = ctx.system.num_files;

    let mut header: Vec<String> = ["alpha", "scheme", "mean_ms_per_mb", "mean_normalized_time", "total_cache"]
        .map(String::from)
        .to_vec();
    header.extend((0..k_count).map(|k| format!("cache_file{}", k + 1)));
    let mut table = CsvTable::new(header);
    let mut points = Vec::with_capacity(ctx.config.zipf_alphas.len());
    for &alpha in &ctx.config.zipf_alphas {
        let popularity = PopularityProfile::zipf(k_count, alpha).map_err(config_err)?;
        let (results, _) = run_schemes(ctx, &schemes, &popularity, &train, &test)?;
        for r in &results {
            let mut row = vec![
                num(alpha),
                r.scheme.label().to_string(),
                num(r.report.mean_time_ms_per_mb),
                num(r.report.mean_time),
                num(row_total(r, &ctx.system)),
            ];
            match &r.allocation {
                Some(a) => row.extend(a.file_totals().iter().map(|c| num(*c))),
                None => row.extend(std::iter::repeat_n(String::new(), k_count)),
            }
            table.push(row);
        }
        eprintln!("alpha {} done", num(alpha));
        points.push(SweepPoint {
            alpha,
            popularity: popularity.probabilities().to_vec(),
            results,
        });
    }
    let path = ctx.out.write_csv("zipf_sweep.csv", &table).map_err(io)?;
    ctx.out
        .write_json("zipf_sweep.json", &serde_json::json!({ "points": points }))
        .map_err(io)?;
    print!("{}", table.render());
    println!("wrote {}", path.display());
    Ok(())
}
