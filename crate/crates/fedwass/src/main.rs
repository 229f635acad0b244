//! Command-line front end: dataset generation, session runs, valuation and
//! detection reports, and scaling benchmarks.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use fedwass::augment::{class_stats, stack, LabeledDataset};
use fedwass::datagen::{
    gaussian_blobs, make_case, read_dataset_csv, write_dataset_csv, CaseSpec,
};
use fedwass::error::Error;
use fedwass::fed::{init_session, FedConfig, FedSession, Mode};
use fedwass::measure::DiscreteMeasure;
use fedwass::stats::linear_fit;
use fedwass::valuation::{
    datum_valuations, relevance_report, scores_from_distances, DatumRecord, DetectionVariant,
    ValuationReport,
};
use fedwass::{Backend, Result};

const SCHEMA_VERSION: u32 = 1;
const DEFAULT_REG: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "fedwass", version, about = "Federated Wasserstein valuation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate per-client synthetic datasets and a run manifest.
    Gen(GenArgs),
    /// Run the protocol and emit client scores and datum gradients.
    Valuate(RunArgs),
    /// Run the protocol and score noisy-point detection against ground truth.
    Detect(DetectArgs),
    /// Time protocol runs across client counts and fit time vs N.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Sampling regime, 1..=5.
    #[arg(long, default_value_t = 1)]
    case: u8,
    #[arg(long, default_value_t = 5)]
    clients: usize,
    #[arg(long = "per-client", default_value_t = 200)]
    per_client: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Feature-noise standard deviation (case 5).
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    mode: Option<CliMode>,
    /// Round budget K.
    #[arg(long)]
    iters: Option<usize>,
    /// Shared-measure support size S.
    #[arg(long)]
    support: Option<usize>,
    /// Geodesic coordinate of the interpolating measures.
    #[arg(long)]
    t: Option<f64>,
    /// Ground-cost exponent.
    #[arg(long)]
    p: Option<f64>,
    /// Entropic regularization strength (entropic backend only).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    backend: Option<CliBackend>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run per-client phases on a thread pool.
    #[arg(long = "parallel-clients", default_value_t = false)]
    parallel_clients: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = CliVariant::ClientEtaQ)]
    variant: CliVariant,
}

#[derive(Args)]
struct BenchArgs {
    /// Client counts to time, e.g. --clients-list 2,4,8,16.
    #[arg(long = "clients-list", value_delimiter = ',', default_values_t = vec![2, 4, 8, 16])]
    clients_list: Vec<usize>,
    #[arg(long = "per-client", default_value_t = 200)]
    per_client: usize,
    #[arg(long, default_value_t = 100)]
    support: usize,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "parallel-clients", default_value_t = false)]
    parallel_clients: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Fixed,
    Barycenter,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliBackend {
    Exact,
    Entropic,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliVariant {
    ClientEtaQ,
    ClientGamma,
    ServerEta,
    ServerGamma,
}

impl From<CliVariant> for DetectionVariant {
    fn from(v: CliVariant) -> Self {
        match v {
            CliVariant::ClientEtaQ => DetectionVariant::ClientEtaQ,
            CliVariant::ClientGamma => DetectionVariant::ClientGamma,
            CliVariant::ServerEta => DetectionVariant::ServerEta,
            CliVariant::ServerGamma => DetectionVariant::ServerGamma,
        }
    }
}

/// On-disk description of a generated experiment. `defaults` seeds the run
/// configuration; command-line flags override it.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    schema_version: u32,
    case: u8,
    seed: u64,
    sigma: f64,
    dim: usize,
    num_classes: usize,
    /// Dataset paths, relative to the manifest's directory.
    clients: Vec<String>,
    validation: Option<String>,
    /// Ground-truth corrupted row indices per client (empty when clean).
    noisy_indices: Vec<Vec<usize>>,
    #[serde(default)]
    defaults: ManifestDefaults,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ManifestDefaults {
    mode: Option<String>,
    iters: Option<usize>,
    support: Option<usize>,
    t: Option<f64>,
    p: Option<f64>,
    backend: Option<String>,
    epsilon: Option<f64>,
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Valuate(args) => cmd_valuate(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (label, code) = match &e {
                Error::SolverFailure(_) => ("solver", 3),
                _ => ("config", 2),
            };
            eprintln!("error[{label}]: {e}");
            ExitCode::from(code)
        }
    }
}

/// Cluster means spread on a circle of radius 5 (a line in 1D).
fn cluster_means(classes: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((classes, dim), |(c, j)| {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        match j {
            0 if dim == 1 => 5.0 * c as f64,
            0 => 5.0 * angle.cos(),
            1 => 5.0 * angle.sin(),
            _ => 0.0,
        }
    })
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let means = cluster_means(args.classes, args.dim);
    let cov = Array2::<f64>::eye(args.dim);
    // one pool per class large enough for any regime's aggregate demand
    let pool = args.clients * args.per_client + args.clients + args.classes;
    let base = gaussian_blobs(&means, pool, &cov, args.seed)?;
    let spec = CaseSpec::standard(
        args.case,
        args.clients,
        args.per_client,
        args.classes,
        args.sigma,
        args.seed,
    )?;
    let parts = make_case(&spec, &base)?;

    let mut clients = Vec::new();
    let mut noisy_indices = Vec::new();
    for (i, part) in parts.iter().enumerate() {
        let name = format!("client_{i}.csv");
        write_dataset_csv(&part.data, &args.out.join(&name))?;
        clients.push(name);
        noisy_indices.push(part.noisy_indices.clone());
    }
    let per_class = args.per_client.div_ceil(args.classes).max(2);
    let validation = gaussian_blobs(&means, per_class, &cov, args.seed.wrapping_add(0x5EED))?;
    write_dataset_csv(&validation, &args.out.join("validation.csv"))?;

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        case: args.case,
        seed: args.seed,
        sigma: args.sigma,
        dim: args.dim,
        num_classes: args.classes,
        clients,
        validation: Some("validation.csv".to_string()),
        noisy_indices,
        defaults: ManifestDefaults {
            seed: Some(args.seed),
            ..ManifestDefaults::default()
        },
    };
    let file = std::io::BufWriter::new(std::fs::File::create(args.out.join("manifest.json"))?);
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(())
}

fn load_manifest(path: &Path) -> Result<(RunManifest, PathBuf)> {
    let file = std::fs::File::open(path)?;
    let manifest: RunManifest = serde_json::from_reader(std::io::BufReader::new(file))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "manifest schema {} unsupported (expected {SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok((manifest, dir))
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "fixed" => Ok(Mode::Fixed),
        "barycenter" => Ok(Mode::Barycenter),
        other => Err(Error::InvalidInput(format!("unknown mode '{other}'"))),
    }
}

/// Flags > manifest defaults > built-in defaults.
fn resolve_config(args: &RunArgs, manifest: &RunManifest) -> Result<FedConfig> {
    let d = &manifest.defaults;
    let mode = match args.mode {
        Some(CliMode::Fixed) => Mode::Fixed,
        Some(CliMode::Barycenter) => Mode::Barycenter,
        None => match &d.mode {
            Some(s) => parse_mode(s)?,
            None => Mode::Fixed,
        },
    };
    let mut cfg = FedConfig::new(manifest.clients.len(), mode);
    cfg.rounds = args.iters.or(d.iters).unwrap_or(cfg.rounds);
    cfg.support_size = args.support.or(d.support).unwrap_or(cfg.support_size);
    cfg.t = args.t.or(d.t).unwrap_or(cfg.t);
    cfg.power = args.p.or(d.p).unwrap_or(cfg.power);
    cfg.seed = args.seed.or(d.seed).unwrap_or(cfg.seed);
    cfg.parallel = args.parallel_clients;
    let backend_name = match args.backend {
        Some(CliBackend::Exact) => Some("exact".to_string()),
        Some(CliBackend::Entropic) => Some("entropic".to_string()),
        None => d.backend.clone(),
    };
    cfg.backend = match backend_name.as_deref() {
        None | Some("exact") => Backend::Exact,
        Some("entropic") => Backend::Entropic {
            epsilon: args.epsilon.or(d.epsilon).unwrap_or(0.01),
        },
        Some(other) => {
            return Err(Error::InvalidInput(format!("unknown backend '{other}'")))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn augmented_measure(data: &LabeledDataset) -> Result<DiscreteMeasure> {
    let stats = class_stats(data, DEFAULT_REG, false)?;
    stack(data, &stats)?.to_measure()
}

/// Loads datasets, builds stacked measures, runs the protocol.
fn run_session(args: &RunArgs, manifest: &RunManifest, dir: &Path) -> Result<FedSession> {
    let cfg = resolve_config(args, manifest)?;
    let mut measures = Vec::new();
    for rel in &manifest.clients {
        let data = read_dataset_csv(&dir.join(rel))?;
        measures.push(augmented_measure(&data)?);
    }
    let validation = match (cfg.mode, &manifest.validation) {
        (Mode::Fixed, Some(rel)) => {
            let data = read_dataset_csv(&dir.join(rel))?;
            Some(augmented_measure(&data)?)
        }
        (Mode::Fixed, None) => {
            return Err(Error::InvalidInput(
                "fixed mode requires a validation dataset in the manifest".into(),
            ))
        }
        (Mode::Barycenter, _) => None,
    };
    let mut session = init_session(measures, validation, cfg)?;
    session.run()?;
    if std::env::var("FEDWASS_LOG").as_deref() == Ok("debug") {
        eprintln!("monitor history: {:?}", session.a_history);
    }
    Ok(session)
}

fn write_session_outputs(session: &FedSession, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    session.write_transcript(&out.join("transcript.jsonl"))?;
    let mut writer = csv::Writer::from_path(out.join("a_history.csv"))?;
    writer.write_record(["round", "monitor"])?;
    for (k, a) in session.a_history.iter().enumerate() {
        writer.write_record([k.to_string(), format!("{a:?}")])?;
    }
    writer.flush()?;
    Ok(())
}

fn collect_datums(session: &FedSession, variant: DetectionVariant) -> Result<Vec<DatumRecord>> {
    let mut out = Vec::new();
    for c in &session.clients {
        for v in datum_valuations(session, c.id, variant)? {
            out.push(DatumRecord {
                client_id: c.id,
                datum_index: v.datum_index,
                gradient: v.calibrated_gradient,
                flagged: v.flagged_noisy,
            });
        }
    }
    Ok(out)
}

fn cmd_valuate(args: RunArgs) -> Result<()> {
    let (manifest, dir) = load_manifest(&args.manifest)?;
    let session = run_session(&args, &manifest, &dir)?;
    write_session_outputs(&session, &args.out)?;

    let report = match session.config.mode {
        Mode::Fixed => {
            let distances: Vec<f64> = session.server.estimates.clone();
            scores_from_distances(&distances)?
        }
        Mode::Barycenter => relevance_report(&session)?,
    };
    let datums = collect_datums(&session, DetectionVariant::ClientEtaQ)?;
    let report = ValuationReport {
        scores: report.scores,
        flagged_clients: report.flagged_clients,
        datums,
    };
    report.write_json(&args.out.join("report.json"))?;
    report.write_datum_csv(&args.out.join("datums.csv"))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DetectionMetrics {
    client_id: usize,
    flagged: usize,
    true_noisy: usize,
    /// Null when nothing was flagged.
    precision: Option<f64>,
    /// Null when the client has no ground-truth noise.
    recall: Option<f64>,
    f1: Option<f64>,
}

fn detection_metrics(
    client_id: usize,
    records: &[DatumRecord],
    truth: &[usize],
) -> DetectionMetrics {
    let flagged: Vec<usize> = records
        .iter()
        .filter(|r| r.client_id == client_id && r.flagged)
        .map(|r| r.datum_index)
        .collect();
    let tp = flagged.iter().filter(|i| truth.contains(i)).count() as f64;
    let precision = (!flagged.is_empty()).then(|| tp / flagged.len() as f64);
    let recall = (!truth.is_empty()).then(|| tp / truth.len() as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    DetectionMetrics {
        client_id,
        flagged: flagged.len(),
        true_noisy: truth.len(),
        precision,
        recall,
        f1,
    }
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let (manifest, dir) = load_manifest(&args.run.manifest)?;
    let session = run_session(&args.run, &manifest, &dir)?;
    write_session_outputs(&session, &args.run.out)?;

    let datums = collect_datums(&session, args.variant.into())?;
    let metrics: Vec<DetectionMetrics> = (0..session.clients.len())
        .map(|i| {
            let truth = manifest.noisy_indices.get(i).map_or(&[][..], |v| &v[..]);
            detection_metrics(i, &datums, truth)
        })
        .collect();
    let report = ValuationReport {
        scores: Vec::new(),
        flagged_clients: Vec::new(),
        datums,
    };
    report.write_datum_csv(&args.run.out.join("datums.csv"))?;
    let file =
        std::io::BufWriter::new(std::fs::File::create(args.run.out.join("detection.json"))?);
    serde_json::to_writer_pretty(file, &metrics)?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.clients_list.is_empty() {
        return Err(Error::InvalidInput("bench: empty client list".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let means = cluster_means(3, 2);
    let cov = Array2::<f64>::eye(2);
    let mut rows = Vec::new();
    for &n in &args.clients_list {
        let mut measures = Vec::new();
        for i in 0..n {
            let data = gaussian_blobs(
                &means,
                args.per_client.div_ceil(3),
                &cov,
                args.seed.wrapping_add(i as u64),
            )?;
            measures.push(DiscreteMeasure::uniform(data.features)?);
        }
        let mut cfg = FedConfig::new(n, Mode::Barycenter);
        cfg.rounds = args.iters;
        cfg.support_size = args.support;
        cfg.seed = args.seed;
        cfg.stop_tol = 0.0;
        cfg.parallel = args.parallel_clients;
        let mut session = init_session(measures, None, cfg)?;
        let start = Instant::now();
        session.run()?;
        let seconds = start.elapsed().as_secs_f64();
        rows.push((n, seconds));
    }
    let mut writer = csv::Writer::from_path(args.out.join("bench.csv"))?;
    writer.write_record(["clients", "seconds"])?;
    for (n, s) in &rows {
        writer.write_record([n.to_string(), format!("{s:?}")])?;
    }
    writer.flush()?;

    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|(n, _)| *n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|(_, s)| *s).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys)?;
        let fit = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "slope": slope,
            "intercept": intercept,
            "r_squared": r2,
        });
        let file = std::io::BufWriter::new(std::fs::File::create(args.out.join("fit.json"))?);
        serde_json::to_writer_pretty(file, &fit)?;
    }
    Ok(())
}
