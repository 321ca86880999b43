//! Command-line front end for the disaggregation engine.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use alip::formulation::Enhancements;
use alip::io::{self, ColumnMap, DownsampleMode, ReadingSeries, ReportData};
use alip::metrics;
use alip::pipeline::{self, PipelineConfig, StageCounters};
use alip::simgen;

#[derive(Parser)]
#[command(name = "alip", version, about = "Load disaggregation by aided linear integer programming")]
struct Cli {
    /// Worker threads for the per-sample solve stages (0 = all cores).
    /// Results are identical for any setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline with all enhancements (individually switchable).
    Run(RunArgs),
    /// Plain integer-programming baseline (every enhancement off).
    Baseline(BaselineArgs),
    /// Stage sweep: scores each enhancement configuration on one dataset.
    Ablate(BaselineArgs),
    /// Generate a synthetic readings CSV from a scenario or preset.
    Simulate(SimulateArgs),
    /// Score an estimates CSV against a ground-truth CSV.
    Score(ScoreArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Household model file (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Readings CSV (header row required).
    #[arg(long)]
    data: PathBuf,
    /// Downsampling factor applied after loading.
    #[arg(long, default_value_t = 1)]
    factor: usize,
    /// Downsampling mode.
    #[arg(long, value_parser = parse_mode, default_value = "decimate")]
    mode: DownsampleMode,
    /// Timestamp column name.
    #[arg(long, default_value = "timestamp")]
    timestamp_col: String,
    /// Aggregate column name; with no such column the aggregate is the row
    /// sum over the channel columns.
    #[arg(long, default_value = "aggregate")]
    aggregate_col: String,
}

#[derive(Args)]
struct OutputArgs {
    /// Per-block accuracy series N.
    #[arg(long, default_value_t = 5040)]
    block_size: usize,
    /// Write the text report here (also printed to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-block plot CSV here.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Write the refined per-appliance estimates CSV here.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Include wall-clock timing in the report file (makes it
    /// non-reproducible byte-for-byte).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Median lag L.
    #[arg(long, default_value_t = 4)]
    lag: usize,
    /// Disable the augmentation constraint rows.
    #[arg(long)]
    no_constraints: bool,
    /// Disable the state-transition-diagram correction.
    #[arg(long)]
    no_std_correction: bool,
    /// Disable the lagged median filter.
    #[arg(long)]
    no_median: bool,
    /// Disable the transient LP refinement.
    #[arg(long)]
    no_lp_refine: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Median lag L (used by configurations that enable the median).
    #[arg(long, default_value_t = 4)]
    lag: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Bundled preset: collision, transient-alias, or chatter.
    #[arg(long)]
    preset: Option<String>,
    /// Seed for preset scenarios.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Series length for preset scenarios.
    #[arg(long, default_value_t = 10_000)]
    length: usize,
    /// Output readings CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Ground-truth CSV (channel columns).
    #[arg(long)]
    truth: PathBuf,
    /// Estimates CSV (channel columns, same layout).
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long, default_value_t = 5040)]
    block_size: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<DownsampleMode, String> {
    match s {
        "decimate" => Ok(DownsampleMode::Decimate),
        "mean" => Ok(DownsampleMode::Mean),
        other => Err(format!("unknown mode `{other}` (decimate|mean)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("alip: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Run(args) => {
            let flags = Enhancements {
                constraints: !args.no_constraints,
                std_correction: !args.no_std_correction,
                median: !args.no_median,
                lp_refine: !args.no_lp_refine,
            };
            run_pipeline(&args.data, &args.output, args.lag, flags)
        }
        Command::Baseline(args) => {
            run_pipeline(&args.data, &args.output, args.lag, Enhancements::NONE)
        }
        Command::Ablate(args) => ablate(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Score(args) => score(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alip: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_inputs(data: &DataArgs) -> Result<(io::ModelFile, ReadingSeries)> {
    let model = io::load_model(&data.model)
        .with_context(|| format!("loading model {}", data.model.display()))?;
    let map = ColumnMap {
        timestamp: data.timestamp_col.clone(),
        aggregate: Some(data.aggregate_col.clone()),
        channels: None,
    };
    let series = io::load_csv(&data.data, &map)
        .with_context(|| format!("loading readings {}", data.data.display()))?;
    let series = io::downsample(&series, data.factor.max(1), data.mode);
    if series.is_empty() {
        bail!("{}: no usable rows", data.data.display());
    }
    Ok((model, series))
}

/// Ground truth aligned to the model's appliance order, when the CSV
/// channels cover it.
fn aligned_truth(
    model: &alip::HouseholdModel,
    series: &ReadingSeries,
) -> Option<Vec<Vec<f64>>> {
    let truth = series.truth.as_ref()?;
    let order: Option<Vec<usize>> = model
        .appliances
        .iter()
        .map(|a| series.channel_names.iter().position(|c| *c == a.id))
        .collect();
    let order = order?;
    Some(
        truth
            .iter()
            .map(|row| order.iter().map(|&i| row[i]).collect())
            .collect(),
    )
}

fn run_pipeline(
    data: &DataArgs,
    output: &OutputArgs,
    lag: usize,
    flags: Enhancements,
) -> Result<()> {
    let (model_file, series) = load_inputs(data)?;
    let model = &model_file.model;
    let cfg = PipelineConfig {
        enhancements: flags,
        median_lag: lag,
        block_size: output.block_size,
    };
    let result = pipeline::run(model, &series.aggregate, &cfg)?;
    let truth = aligned_truth(model, &series);
    let accuracy = truth
        .as_ref()
        .map(|gt| metrics::score(gt, &result.power, output.block_size))
        .transpose()?;

    let ids: Vec<String> = model.appliances.iter().map(|a| a.id.clone()).collect();
    let report = ReportData {
        enhancements: flags,
        median_lag: lag,
        block_size: output.block_size,
        appliance_ids: ids.clone(),
        samples: series.len(),
        dropped_rows: series.dropped_rows,
        counters: result.counters,
        accuracy: accuracy.clone(),
        mean_sample_seconds: result.mean_sample_seconds,
        include_timing: output.timing,
    };
    print!("{}", io::render_report(&report));
    if output.timing {
        eprintln!(
            "mean wall-clock per sample: {:.3} ms",
            result.mean_sample_seconds * 1e3
        );
    }
    if let Some(path) = &output.report {
        io::emit_report(path, &report)?;
    }
    if let Some(path) = &output.plot_data {
        match &accuracy {
            Some(acc) => io::write_plot_csv(path, &ids, acc)?,
            None => bail!("--plot-data needs ground-truth channels in the data CSV"),
        }
    }
    if let Some(path) = &output.estimates {
        io::write_estimates_csv(path, &series.timestamps, &ids, &result.power)?;
    }
    Ok(())
}

fn ablate(args: &BaselineArgs) -> Result<()> {
    let (model_file, series) = load_inputs(&args.data)?;
    let model = &model_file.model;
    let truth = aligned_truth(model, &series)
        .context("ablate needs ground-truth channels matching the model appliance ids")?;
    let mut configs: Vec<(&str, Enhancements)> = vec![
        ("IP", Enhancements::NONE),
        (
            "constraints",
            Enhancements {
                constraints: true,
                ..Enhancements::NONE
            },
        ),
        (
            "std",
            Enhancements {
                std_correction: true,
                ..Enhancements::NONE
            },
        ),
        (
            "median",
            Enhancements {
                median: true,
                ..Enhancements::NONE
            },
        ),
        (
            "lp",
            Enhancements {
                lp_refine: true,
                ..Enhancements::NONE
            },
        ),
    ];
    configs.push(("ALIP", Enhancements::ALL));
    println!("{:<14} {:>10} {:>10} {:>10} {:>10}", "config", "acc", "std_fix", "med_fix", "lp_runs");
    for (name, flags) in configs {
        let cfg = PipelineConfig {
            enhancements: flags,
            median_lag: args.lag,
            block_size: args.output.block_size,
        };
        let result = pipeline::run(model, &series.aggregate, &cfg)?;
        let acc = metrics::acc(&truth, &result.power)?;
        let StageCounters {
            std_corrections,
            median_corrections,
            lp_refined_samples,
        } = result.counters;
        println!(
            "{name:<14} {acc:>10.6} {std_corrections:>10} {median_corrections:>10} {lp_refined_samples:>10}"
        );
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let scenario = match (&args.scenario, &args.preset) {
        (Some(path), None) => io::load_scenario(path)?,
        (None, Some(preset)) => match preset.as_str() {
            "collision" => simgen::preset_collision(args.seed, args.length),
            "transient-alias" => simgen::preset_transient_alias(args.seed, args.length),
            "chatter" => simgen::preset_chatter(args.seed, args.length),
            other => bail!("unknown preset `{other}` (collision|transient-alias|chatter)"),
        },
        _ => bail!("exactly one of --scenario or --preset is required"),
    };
    let out = simgen::simulate(&scenario)?;
    let series = ReadingSeries {
        timestamps: (0..out.readings.len()).map(|k| k as f64).collect(),
        aggregate: out.readings.clone(),
        truth: Some(out.truth.clone()),
        channel_names: out
            .model
            .appliances
            .iter()
            .map(|a| a.id.clone())
            .collect(),
        dropped_rows: 0,
    };
    io::write_series_csv(&args.out, &series)?;
    println!(
        "wrote {} samples for scenario `{}` to {}",
        out.readings.len(),
        scenario.name,
        args.out.display()
    );
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let map = ColumnMap {
        timestamp: "timestamp".into(),
        aggregate: Some("aggregate".into()),
        channels: None,
    };
    let truth = io::load_csv(&args.truth, &map)?;
    let estimate = io::load_csv(&args.estimate, &map)?;
    let gt = truth
        .truth
        .clone()
        .context("truth CSV has no channel columns")?;
    let est_rows = estimate
        .truth
        .clone()
        .context("estimate CSV has no channel columns")?;
    // Align estimate channels to the truth ordering.
    let order: Vec<usize> = truth
        .channel_names
        .iter()
        .map(|name| {
            estimate
                .channel_names
                .iter()
                .position(|c| c == name)
                .with_context(|| format!("estimate CSV lacks channel `{name}`"))
        })
        .collect::<Result<_>>()?;
    let est: Vec<Vec<f64>> = est_rows
        .iter()
        .map(|row| order.iter().map(|&i| row[i]).collect())
        .collect();
    let report = metrics::score(&gt, &est, args.block_size)?;
    let data = ReportData {
        enhancements: Enhancements::NONE,
        median_lag: 0,
        block_size: args.block_size,
        appliance_ids: truth.channel_names.clone(),
        samples: gt.len(),
        dropped_rows: truth.dropped_rows + estimate.dropped_rows,
        counters: StageCounters::default(),
        accuracy: Some(report.clone()),
        mean_sample_seconds: 0.0,
        include_timing: false,
    };
    print!("{}", io::render_report(&data));
    if let Some(path) = &args.report {
        io::emit_report(path, &data)?;
    }
    if let Some(path) = &args.plot_data {
        io::write_plot_csv(path, &truth.channel_names, &report)?;
    }
    Ok(())
}
