use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rapidlabel_core::cascade::{
    class_stats_from_priors, run_cascade, CascadeMode, CascadeOutcome, ClassStats, PassRecord,
};
use rapidlabel_core::decoder::{decode, AggregationKind, DecodeOverrides, DecodeResult};
use rapidlabel_core::eval::{
    check_naive_cost, naive_multiclass_seconds, precision_recall, published_table1_inputs,
    table1_report,
};
use rapidlabel_core::experiments::{redundancy_sweep, simulate_cascade_pass, VerificationSetup};
use rapidlabel_core::simulator::{simulate_experiment, RateRecallCurve, WorkerProfile};
use rapidlabel_core::taskfile::{read_sessions, write_sessions, TaskFile};
use rapidlabel_core::{build_streams, validate_task, ItemId};
use rapidlabel_service::{OpaqueTokens, Service, ServiceConfig, SystemClock};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "rapidlabel", version, about = "Rapid stream labeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a task file and list every violation.
    Validate { task: PathBuf },
    /// Stream schedules.
    Schedule {
        #[command(subcommand)]
        command: ScheduleCommand,
    },
    /// Simulate workers watching every stream of a task.
    Simulate(SimulateArgs),
    /// Recover labels from a sessions file.
    Decode(DecodeArgs),
    /// Multi-class labeling as a sequence of binary passes.
    Cascade(CascadeArgs),
    /// Reports and plot data.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Write the task file with one schedule record per stream.
    Export {
        task: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct SimulateArgs {
    task: PathBuf,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with `profiles` and/or `curve`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    delay_mean_ms: Option<f64>,
    #[arg(long)]
    delay_std_ms: Option<f64>,
    #[arg(long)]
    base_detect: Option<f64>,
    #[arg(long)]
    false_alarm_rate: Option<f64>,
    #[arg(long)]
    refractory_ms: Option<f64>,
    /// Detection multiplier reached at an all-positive stream.
    #[arg(long)]
    curve_floor: Option<f64>,
}

#[derive(Default, Deserialize)]
struct SimulationConfig {
    #[serde(default)]
    profiles: Vec<WorkerProfile>,
    #[serde(default)]
    curve: Option<RateRecallCurve>,
}

#[derive(clap::Args)]
struct DecodeArgs {
    task: PathBuf,
    sessions: PathBuf,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    target_precision: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    lookback_ms: Option<f64>,
    #[arg(long)]
    delay_mean_ms: Option<f64>,
    #[arg(long)]
    delay_std_ms: Option<f64>,
    #[arg(long, value_enum)]
    aggregation: Option<Aggregation>,
    /// Recorded in the results file. Decoding itself draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Mixture,
    Independent,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Optimized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decoder {
    /// Each pass returns exactly the items of its class.
    Perfect,
    /// Each pass is simulated and decoded.
    Simulated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Counts {
    /// Sum of per-class priors.
    Priors,
    /// Hidden class labels.
    Exact,
}

#[derive(clap::Args)]
struct CascadeArgs {
    task: PathBuf,
    #[arg(long, value_enum, default_value = "optimized")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "perfect")]
    decoder: Decoder,
    #[arg(long, value_enum, default_value = "priors")]
    counts: Counts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Assignments file.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Seconds per conventional binary label, for the naive comparison.
    #[arg(long, default_value_t = 1.7)]
    conventional_seconds: f64,
    #[arg(long, default_value_t = 3)]
    conventional_redundancy: u32,
    /// Question reduction from outside this tool, e.g. a label hierarchy.
    #[arg(long, default_value_t = 1.0)]
    reduction_factor: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Tsv,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Speedup table from the published timings.
    Table1 {
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Recall at precision 0.95 against redundancy, from simulation.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
        levels: Vec<u32>,
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Recompute a naive multi-class cost and check its redundancy.
    Naive {
        #[arg(long)]
        items: u64,
        #[arg(long)]
        classes: u64,
        #[arg(long)]
        seconds_per_label: f64,
        #[arg(long)]
        redundancy: u32,
        /// Figure to check against.
        #[arg(long)]
        reported: Option<f64>,
    },
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 100)]
    snapshot_every: u64,
    /// fsync every log append.
    #[arg(long)]
    sync: bool,
    /// Let unqualified workers open labeling sessions.
    #[arg(long)]
    no_qualification: bool,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Validate { task } => validate(&task),
        Command::Schedule {
            command: ScheduleCommand::Export { task, out },
        } => export_schedule(&task, out.as_deref()),
        Command::Simulate(args) => simulate(args),
        Command::Decode(args) => decode_cmd(args),
        Command::Cascade(args) => cascade(args),
        Command::Report { command } => report(command),
        Command::Serve(args) => serve(args),
    }
}

fn read_task(path: &Path) -> Result<TaskFile> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TaskFile::read(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn validate(path: &Path) -> Result<()> {
    let file = read_task(path)?;
    let report = validate_task(&file.items, &file.config)?;
    if report.is_valid() {
        println!("ok: {} items", file.items.len());
        return Ok(());
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    bail!("{} violation(s)", report.violations.len())
}

fn export_schedule(path: &Path, out: Option<&Path>) -> Result<()> {
    let mut file = read_task(path)?;
    validate_task(&file.items, &file.config)?.into_result()?;
    file.schedules = build_streams(&file.items, &file.config)?;
    let mut w = output(out)?;
    file.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let file = read_task(&args.task)?;
    let sim: SimulationConfig = match &args.config {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))
            .with_context(|| format!("reading {}", p.display()))?,
        None => SimulationConfig::default(),
    };
    let mut profiles = sim.profiles;
    let r = file.config.redundancy as usize;
    if profiles.is_empty() {
        profiles.push(WorkerProfile::default());
    }
    while profiles.len() < r {
        profiles.push(profiles[profiles.len() % profiles.len().max(1)].clone());
    }
    for p in &mut profiles {
        if let Some(v) = args.delay_mean_ms {
            p.delay_mean_ms = v;
        }
        if let Some(v) = args.delay_std_ms {
            p.delay_std_ms = v;
        }
        if let Some(v) = args.base_detect {
            p.base_detect = v;
        }
        if let Some(v) = args.false_alarm_rate {
            p.false_alarm_rate = v;
        }
        if let Some(v) = args.refractory_ms {
            p.refractory_ms = v;
        }
    }
    let mut curve = sim.curve.unwrap_or_default();
    if let Some(f) = args.curve_floor {
        curve.floor = f;
    }

    let sessions = simulate_experiment(
        &file.items,
        &file.truth,
        &file.config,
        &profiles,
        &curve,
        args.seed,
    )?;
    let mut w = output(args.out.as_deref())?;
    write_sessions(&sessions, &mut w)?;
    w.flush()?;
    eprintln!(
        "{} sessions, {} keypresses",
        sessions.len(),
        sessions.iter().map(|s| s.events.len()).sum::<usize>()
    );
    Ok(())
}

#[derive(Serialize)]
struct ResultsFile<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(flatten)]
    result: &'a DecodeResult,
}

fn decode_cmd(args: DecodeArgs) -> Result<()> {
    let file = read_task(&args.task)?;
    let sessions = read_sessions(BufReader::new(
        File::open(&args.sessions).with_context(|| format!("opening {}", args.sessions.display()))?,
    ))?;
    let overrides = DecodeOverrides {
        target_precision: args.target_precision,
        threshold: args.threshold,
        lookback_ms: args.lookback_ms,
        delay_mean_ms: args.delay_mean_ms,
        delay_std_ms: args.delay_std_ms,
        aggregation: args.aggregation.map(|a| match a {
            Aggregation::Mixture => AggregationKind::Mixture,
            Aggregation::Independent => AggregationKind::Independent,
        }),
    };
    let options = overrides.options(&file.config)?;
    let result = decode(&file.items, &sessions, &options)?;

    let mut w = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(
        &mut w,
        &ResultsFile {
            seed: args.seed,
            result: &result,
        },
    )?;
    writeln!(w)?;
    w.flush()?;

    eprintln!(
        "threshold {:.4}, {} of {} items positive, delay {:.1} +/- {:.1} ms",
        result.threshold_used,
        result.positives().count(),
        result.estimates.len(),
        result.delay_model_used.mean_ms,
        result.delay_model_used.std_ms
    );
    for flag in &result.flags {
        eprintln!("flag: {flag}");
    }
    if !file.truth.is_empty() {
        let decisions: BTreeMap<ItemId, bool> = result
            .decisions()
            .into_iter()
            .filter(|(id, _)| file.truth.contains_key(id))
            .collect();
        let pr = precision_recall(&decisions, &file.truth)?;
        eprintln!(
            "against hidden labels: precision {:.3}, recall {:.3} (tp {}, fp {}, fn {})",
            pr.precision, pr.recall, pr.tp, pr.fp, pr.fn_
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct CascadeReport {
    mode: &'static str,
    decoder: &'static str,
    order: Vec<String>,
    passes: Vec<PassRecord>,
    items: usize,
    unclassified: usize,
    total_displays: u64,
    display_seconds: f64,
    naive_seconds: f64,
    speedup_vs_naive: f64,
    reduction_factor: f64,
    combined_speedup: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
}

#[derive(Serialize)]
struct AssignmentsFile<'a> {
    assignments: &'a BTreeMap<ItemId, String>,
    unclassified: &'a [ItemId],
}

fn cascade(args: CascadeArgs) -> Result<()> {
    let file = read_task(&args.task)?;
    let items: Vec<ItemId> = file
        .items
        .iter()
        .filter(|i| !i.is_gold())
        .map(|i| i.item_id.clone())
        .collect();
    let stats: Vec<ClassStats> = match args.counts {
        Counts::Priors => {
            let priors: BTreeMap<_, _> = file
                .class_priors
                .iter()
                .filter(|(id, _)| items.contains(id))
                .map(|(id, p)| (id.clone(), p.clone()))
                .collect();
            class_stats_from_priors(&priors)
        }
        Counts::Exact => {
            let mut counts: BTreeMap<&String, u64> = BTreeMap::new();
            for id in &items {
                if let Some(c) = file.classes.get(id) {
                    *counts.entry(c).or_default() += 1;
                }
            }
            counts
                .into_iter()
                .map(|(c, n)| ClassStats::exact(c.clone(), n))
                .collect()
        }
    };
    if stats.is_empty() {
        bail!("no classes: the task file needs class_priors (or class labels with --counts exact)");
    }
    let mode = match args.mode {
        Mode::Baseline => CascadeMode::Baseline,
        Mode::Optimized => CascadeMode::ClassOptimized,
    };
    let redundancy = u64::from(file.config.redundancy);
    let profiles = vec![WorkerProfile::default(); file.config.redundancy as usize];
    let curve = RateRecallCurve::default();
    let mut pass = 0u64;

    let outcome: CascadeOutcome = run_cascade(
        &items,
        &stats,
        |class, pool| -> Result<Vec<ItemId>> {
            pass += 1;
            match args.decoder {
                Decoder::Perfect => Ok(pool
                    .iter()
                    .filter(|id| file.classes.get(*id) == Some(class))
                    .cloned()
                    .collect()),
                Decoder::Simulated => Ok(simulate_cascade_pass(
                    &file,
                    pool,
                    class,
                    &profiles,
                    &curve,
                    args.seed.wrapping_add(pass),
                )?),
            }
        },
        mode,
        args.seed,
        redundancy,
    )
    .map_err(|e| {
        eprintln!(
            "partial result: {} items assigned before the failure",
            e.partial.assignments.len()
        );
        anyhow::anyhow!("{e}")
    })?;

    let display_seconds =
        outcome.total_displays as f64 * f64::from(file.config.display_interval_ms) / 1000.0;
    let naive_seconds = naive_multiclass_seconds(
        items.len() as u64,
        stats.len() as u64,
        args.conventional_seconds,
        args.conventional_redundancy,
    );
    let speedup_vs_naive = naive_seconds / display_seconds.max(f64::MIN_POSITIVE);
    let labelled: Vec<&ItemId> = items.iter().filter(|id| file.classes.contains_key(*id)).collect();
    let accuracy = (!labelled.is_empty()).then(|| {
        let right = labelled
            .iter()
            .filter(|id| outcome.assignments.get(**id) == file.classes.get(**id))
            .count();
        right as f64 / labelled.len() as f64
    });
    let report = CascadeReport {
        mode: match args.mode {
            Mode::Baseline => "baseline",
            Mode::Optimized => "optimized",
        },
        decoder: match args.decoder {
            Decoder::Perfect => "perfect",
            Decoder::Simulated => "simulated",
        },
        order: outcome.order.clone(),
        passes: outcome.passes.clone(),
        items: items.len(),
        unclassified: outcome.unclassified.len(),
        total_displays: outcome.total_displays,
        display_seconds,
        naive_seconds,
        speedup_vs_naive,
        reduction_factor: args.reduction_factor,
        combined_speedup: speedup_vs_naive * args.reduction_factor,
        accuracy,
    };

    if let Some(path) = &args.out {
        let mut w = output(Some(path))?;
        serde_json::to_writer_pretty(
            &mut w,
            &AssignmentsFile {
                assignments: &outcome.assignments,
                unclassified: &outcome.unclassified,
            },
        )?;
        writeln!(w)?;
        w.flush()?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("mode {} ({} decoder)", report.mode, report.decoder);
        println!("{:<20} {:>8} {:>10} {:>10}", "class", "pool", "positives", "displays");
        for p in &report.passes {
            println!(
                "{:<20} {:>8} {:>10} {:>10}",
                p.class_id, p.pool_size, p.positives, p.displays
            );
        }
        println!("total displays     {}", report.total_displays);
        println!("display time       {:.1}s", report.display_seconds);
        println!("naive time         {:.1}s", report.naive_seconds);
        println!("speedup vs naive   {:.2}x", report.speedup_vs_naive);
        if report.reduction_factor != 1.0 {
            println!(
                "with reduction {:.2}x: {:.2}x",
                report.reduction_factor, report.combined_speedup
            );
        }
        println!("unclassified       {}", report.unclassified);
        if let Some(a) = report.accuracy {
            println!("accuracy           {a:.3}");
        }
    }
    Ok(())
}

fn report(command: ReportCommand) -> Result<()> {
    match command {
        ReportCommand::Table1 { format } => {
            let table = table1_report(&published_table1_inputs())?;
            match format {
                Format::Text => print!("{}", table.render_text()),
                Format::Tsv => print!("{}", table.render_tsv()),
                Format::Csv => print!("{}", table.render_tsv().replace('\t', ",")),
                Format::Json => println!("{}", serde_json::to_string_pretty(&table)?),
            }
        }
        ReportCommand::Sweep {
            levels,
            seeds,
            format,
        } => {
            let points = redundancy_sweep(&VerificationSetup::default(), &levels, seeds)?;
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&points)?),
                Format::Text | Format::Tsv | Format::Csv => {
                    let sep = if matches!(format, Format::Csv) { "," } else { "\t" };
                    println!(
                        "{}",
                        ["redundancy", "seeds", "recall_at_95", "precision", "recall"].join(sep)
                    );
                    for p in points {
                        println!(
                            "{}{sep}{}{sep}{:.4}{sep}{:.4}{sep}{:.4}",
                            p.redundancy,
                            p.seeds,
                            p.mean_recall_at_95,
                            p.mean_precision,
                            p.mean_recall
                        );
                    }
                }
            }
        }
        ReportCommand::Naive {
            items,
            classes,
            seconds_per_label,
            redundancy,
            reported,
        } => {
            let seconds = naive_multiclass_seconds(items, classes, seconds_per_label, redundancy);
            println!("{} labels x {seconds_per_label}s x {redundancy} workers = {seconds}s", items * classes);
            if let Some(r) = reported {
                let check = check_naive_cost(items, classes, seconds_per_label, redundancy, r);
                if check.consistent {
                    println!("reported {r}s: consistent");
                } else {
                    match check.matching_redundancy {
                        Some(m) => println!("reported {r}s: inconsistent, matches {m} workers"),
                        None => println!("reported {r}s: inconsistent with any redundancy up to 20"),
                    }
                }
            }
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        snapshot_every: args.snapshot_every,
        sync: args.sync,
        require_qualification: !args.no_qualification,
        ..ServiceConfig::new(args.data_dir)
    };
    let service = Arc::new(Service::open(config, Arc::new(SystemClock))?);
    eprintln!(
        "serving {} task(s) on http://{}/v1",
        service.task_ids().len(),
        args.addr
    );
    tokio::runtime::Runtime::new()?.block_on(rapidlabel_service::http::serve(
        service,
        Arc::new(OpaqueTokens),
        args.addr,
    ))?;
    Ok(())
}
