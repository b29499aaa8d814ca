//! The `vinnpruner` command line.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or settings, 3 when an
//! input archive cannot be read, 1 for anything else.

pub mod pgm;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use vinnpruner_core::fixtures::{generate_fixtures, DEFAULT_SEED};
use vinnpruner_core::persistence::{load_dataset, load_model, save_session, SessionArchive};
use vinnpruner_core::prune::MaskLayout;
use vinnpruner_core::{Algorithm, Dataset, Model, PruneSettings};
use vinnpruner_server::{ServerConfig, DEFAULT_PORT};

pub use report::{run_pruning, PruneReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Archive(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Archive(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<vinnpruner_core::Error> for CliError {
    fn from(e: vinnpruner_core::Error) -> Self {
        match e {
            vinnpruner_core::Error::InvalidSettings(_) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "vinnpruner", version, about = "Interactive neural-network pruning workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the JSON API (and the built UI, if given) until interrupted.
    Serve(ServeArgs),
    /// Run K pruning steps headlessly and write a JSON report.
    Prune(PruneArgs),
    /// Run the same schedule for several algorithms; one report each plus summary.csv.
    Compare(CompareArgs),
    /// Write one layer's mask from a saved session as a binary PGM image.
    ExportMask(ExportMaskArgs),
    /// Regenerate the deterministic fixture models, datasets and golden facts.
    GenerateFixtures(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub models_dir: PathBuf,
    #[arg(long)]
    pub datasets_dir: PathBuf,
    /// Sessions are written through here on every change.
    #[arg(long, default_value = "sessions")]
    pub sessions_dir: PathBuf,
    /// Directory with the built UI (index.html).
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// 0 lets the OS pick a free port; the chosen port is printed.
    #[arg(long, env = "VINN_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

/// Pruning schedule shared by `prune` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct Schedule {
    /// Model archive directory (models/<name>).
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset archive directory (datasets/<name>).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Fraction of the remaining weights of every layer to prune per step.
    #[arg(long)]
    pub ratio: f64,
    /// Per-layer override, as LAYER=RATIO. Repeatable.
    #[arg(long = "layer-ratio", value_parser = parse_layer_ratio)]
    pub layer_ratio: Vec<(usize, f64)>,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub schedule: Schedule,
    /// map, lap, lap-forward or lap-backward
    #[arg(long, value_parser = parse_algorithm)]
    pub algo: Algorithm,
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the whole session (all steps and masks) to this directory.
    #[arg(long)]
    pub session_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub schedule: Schedule,
    /// Comma-separated algorithms.
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm, default_value = "map,lap")]
    pub algos: Vec<Algorithm>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportMaskArgs {
    /// Session directory or its session.json.
    #[arg(long)]
    pub session: PathBuf,
    /// Weighted layer index.
    #[arg(long)]
    pub layer: usize,
    /// Step to export. Default: the session's current step.
    #[arg(long)]
    pub step: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    match s.parse::<Algorithm>()? {
        Algorithm::Manual => Err("manual is not a pruning algorithm".into()),
        a => Ok(a),
    }
}

fn parse_layer_ratio(s: &str) -> Result<(usize, f64), String> {
    let (l, r) = s.split_once('=').ok_or_else(|| format!("expected LAYER=RATIO, got '{s}'"))?;
    let layer = l.trim().parse().map_err(|_| format!("bad layer index '{l}'"))?;
    let ratio = r.trim().parse().map_err(|_| format!("bad ratio '{r}'"))?;
    Ok((layer, ratio))
}

fn archive_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn load_inputs(schedule: &Schedule) -> CliResult<(Arc<Model>, Arc<Dataset>)> {
    let model = load_model(&schedule.model).map_err(|e| CliError::Archive(e.to_string()))?;
    let dataset = load_dataset(&schedule.dataset).map_err(|e| CliError::Archive(e.to_string()))?;
    dataset
        .check_compatible(&model)
        .map_err(|e| CliError::Archive(e.to_string()))?;
    Ok((Arc::new(model), Arc::new(dataset)))
}

impl Schedule {
    pub fn settings(&self, algorithm: Algorithm) -> PruneSettings {
        PruneSettings {
            algorithm,
            global_ratio: self.ratio,
            per_layer_ratio: self.layer_ratio.iter().copied().collect::<BTreeMap<_, _>>(),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn prune(args: &PruneArgs) -> CliResult<PruneReport> {
    let (model, dataset) = load_inputs(&args.schedule)?;
    let settings = args.schedule.settings(args.algo);
    let (report, session) = run_pruning(model, dataset, &settings, args.schedule.steps)?;
    write_file(&args.out, &report.to_json_bytes())?;
    if let Some(dir) = &args.session_out {
        save_session(
            &session,
            &archive_id(dir),
            &archive_id(&args.schedule.model),
            &archive_id(&args.schedule.dataset),
            dir,
        )?;
    }
    Ok(report)
}

pub const SUMMARY_CSV: &str = "summary.csv";
pub const CSV_HEADER: &str = "algo,step,ratio,accuracy,loss";

pub fn compare(args: &CompareArgs) -> CliResult<Vec<PruneReport>> {
    if args.algos.is_empty() {
        return Err(CliError::Usage("--algos needs at least one algorithm".into()));
    }
    let (model, dataset) = load_inputs(&args.schedule)?;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut reports = Vec::new();
    for &algo in &args.algos {
        let settings = args.schedule.settings(algo);
        let (report, _) = run_pruning(Arc::clone(&model), Arc::clone(&dataset), &settings, args.schedule.steps)?;
        write_file(&args.out.join(format!("{}.json", algo.as_str())), &report.to_json_bytes())?;
        for step in &report.steps {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                algo.as_str(),
                step.step,
                step.report.sparsity.global_ratio,
                step.report.accuracy,
                step.report.mean_loss
            ));
        }
        reports.push(report);
    }
    write_file(&args.out.join(SUMMARY_CSV), csv.as_bytes())?;
    Ok(reports)
}

pub fn export_mask(args: &ExportMaskArgs) -> CliResult<MaskLayout> {
    let archive = SessionArchive::read(&args.session).map_err(|e| CliError::Archive(e.to_string()))?;
    let step_id = args.step.unwrap_or(archive.current_step);
    let step = archive
        .step(step_id)
        .ok_or_else(|| CliError::Usage(format!("session has no step {step_id}")))?;
    let record = step
        .masks
        .iter()
        .find(|m| m.layer_index == args.layer)
        .ok_or_else(|| CliError::Usage(format!("layer {} has no mask in step {step_id}", args.layer)))?;
    let mask = record.to_mask().map_err(|e| CliError::Archive(e.to_string()))?;
    let layout = MaskLayout::for_shape(mask.shape())?;
    write_file(&args.out, &pgm::mask_pgm(&mask, &layout))?;
    Ok(layout)
}

pub fn serve(args: &ServeArgs) -> CliResult<()> {
    for (flag, dir) in [("--models-dir", &args.models_dir), ("--datasets-dir", &args.datasets_dir)] {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{flag} {} is not a directory", dir.display())));
        }
    }
    if let Some(dir) = &args.static_dir {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("--static-dir {} is not a directory", dir.display())));
        }
    }
    std::fs::create_dir_all(&args.sessions_dir)
        .map_err(|e| CliError::Usage(format!("--sessions-dir {}: {e}", args.sessions_dir.display())))?;
    let config = ServerConfig {
        models_dir: args.models_dir.clone(),
        datasets_dir: args.datasets_dir.clone(),
        sessions_dir: Some(args.sessions_dir.clone()),
        static_dir: args.static_dir.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {}:{}: {e}", args.host, args.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("listening on http://{addr}");
        vinnpruner_server::serve(config, listener)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Serve(args) => serve(&args),
        Command::Prune(args) => {
            let report = prune(&args)?;
            if let Some(last) = report.steps.last() {
                println!(
                    "step {}: accuracy {} loss {} pruned {}/{}",
                    last.step,
                    last.report.accuracy,
                    last.report.mean_loss,
                    last.report.sparsity.pruned,
                    last.report.sparsity.total
                );
            }
            Ok(())
        }
        Command::Compare(args) => {
            compare(&args)?;
            println!("wrote {}", args.out.join(SUMMARY_CSV).display());
            Ok(())
        }
        Command::ExportMask(args) => {
            let layout = export_mask(&args)?;
            println!("wrote {} ({}x{})", args.out.display(), layout.cols, layout.rows);
            Ok(())
        }
        Command::GenerateFixtures(args) => {
            let golden = generate_fixtures(&args.out, args.seed)?;
            println!(
                "fixtures in {}: mlp accuracy {}, cnn accuracy {}",
                args.out.display(),
                golden.mlp.baseline.accuracy,
                golden.cnn.baseline.accuracy
            );
            Ok(())
        }
    }
}
