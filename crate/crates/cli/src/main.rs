use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mvpln_cli::config::{Norm, RunConfig};
use mvpln_cli::diagnose::{diagnose_dump, diagnose_fit};
use mvpln_cli::error::CliError;
use mvpln_cli::heatmap::emit_heatmaps;
use mvpln_cli::run::run_fit;
use mvpln_cli::sim::run_sim;
use mvpln_core::init::InitMethod;
use mvpln_core::simgen::read_labels;
use mvpln_core::tensor_io::load_counts;

#[derive(Parser)]
#[command(
    name = "mvpln",
    version,
    about = "Clustering of three-way count data with MVPLN mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit G = g-min..g-max and write the selection table and fits.
    Fit(Common),
    /// Fit replicated datasets from a preset and summarize the choices.
    Simulate(Common),
    /// Chain diagnostics from a chain dump, or for one unit of a saved fit.
    Diagnose(DiagnoseArgs),
    /// One heatmap per cluster from counts and a labels file.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = ["sim1", "sim2", "sim3"])]
    preset: Option<String>,
    /// Units per simulated dataset.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    g_min: Option<usize>,
    #[arg(long)]
    g_max: Option<usize>,
    #[arg(long, value_parser = parse_init)]
    init: Option<InitMethod>,
    #[arg(long)]
    init_runs: Option<usize>,
    /// Chains per latent sampler.
    #[arg(long)]
    chains: Option<usize>,
    /// Initial iterations per chain, warmup included.
    #[arg(long)]
    iters: Option<usize>,
    /// tmm, total or file:PATH.
    #[arg(long)]
    norm: Option<Norm>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    max_outer_iterations: Option<usize>,
    /// Write per-cluster heatmaps for every fitted G.
    #[arg(long)]
    heatmaps: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Chain dump CSV (chain, iteration, theta_1..).
    #[arg(long, conflicts_with_all = ["fit", "unit", "component"])]
    dump: Option<PathBuf>,
    /// Saved fit_G*.json to sample from.
    #[arg(long, requires_all = ["unit", "component"])]
    fit: Option<PathBuf>,
    #[arg(long)]
    unit: Option<String>,
    /// 1-based component of the fit.
    #[arg(long)]
    component: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    p: usize,
    /// unit,label CSV in input order with 0-based labels, as written by `fit`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_init(s: &str) -> Result<InitMethod, String> {
    s.parse().map_err(|e: mvpln_core::Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    cfg.$field = self.$field.clone();
                }
            )*};
        }
        set!(
            g_min,
            g_max,
            init,
            init_runs,
            chains,
            iters,
            seed,
            out,
            replicates,
            jobs,
            max_outer_iterations
        );
        set_opt!(input, preset, n, r, p, norm);
        if self.input.is_some() {
            cfg.preset = None;
        } else if self.preset.is_some() {
            cfg.input = None;
        }
        cfg.heatmaps |= self.heatmaps;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(common) => {
            let report = run_fit(&common.resolve()?)?;
            print!("{}", report.table.render());
            println!("outputs in {}", report.out.display());
        }
        Command::Simulate(common) => {
            let cfg = common.resolve()?;
            print!("{}", run_sim(&cfg)?.render());
            println!("outputs in {}", cfg.out.display());
        }
        Command::Diagnose(args) => {
            let report = match (&args.dump, &args.fit) {
                (Some(dump), _) => {
                    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
                    diagnose_dump(dump, &out, args.alpha)?
                }
                (None, Some(fit)) => {
                    let cfg = args.common.resolve()?;
                    let unit = args.unit.as_deref().expect("required by clap");
                    diagnose_fit(&cfg, fit, unit, args.component.expect("required by clap"))?
                }
                (None, None) => return Err(CliError::Usage("diagnose needs --dump or --fit".into())),
            };
            println!(
                "{} chains x {} draws, {} coordinates: max PSRF {:.4}, min ESS {:.1}, {}",
                report.n_chains,
                report.retained,
                report.dim,
                report.max_psrf,
                report.min_ess,
                if report.passed { "passed" } else { "failed" }
            );
        }
        Command::Heatmap(args) => {
            let tensor = load_counts(&args.input, args.r, args.p)?;
            let labels = read_labels(&args.labels)?;
            for path in emit_heatmaps(&tensor, &labels, &args.out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mvpln: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
