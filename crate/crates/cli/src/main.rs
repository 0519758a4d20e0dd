use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lapk_cli::{
    cmd_dataset, cmd_evaluate, cmd_register, cmd_sweep, dataset_path, CliError, ExperimentConfig, RUN_HEADER,
};

#[derive(Parser)]
#[command(name = "lapk", version, about = "LAP registration in image space and k-space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register one synthetic pair per (mask kind, R).
    Register(ConfigArgs),
    /// Export a patch dataset.
    Dataset(ConfigArgs),
    /// Score a predictions CSV against a dataset.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Registration over seeds, mask kinds and accelerations.
    Sweep(ConfigArgs),
}

/// A config file plus flags that override its keys.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    mask_kind: Option<String>,
    #[arg(long)]
    r_list: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    phantom_seed: Option<String>,
    #[arg(long)]
    flow_seed: Option<String>,
    #[arg(long)]
    max_disp: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    count: Option<String>,
    #[arg(long)]
    patch_w: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
                ExperimentConfig::parse_text(&text)?
            }
            None => ExperimentConfig::default(),
        };
        // seed first so explicit phantom/flow seeds win
        let flags = [
            ("seed", &self.seed),
            ("dims", &self.dims),
            ("method", &self.method),
            ("mask_kind", &self.mask_kind),
            ("r_list", &self.r_list),
            ("stride", &self.stride),
            ("levels", &self.levels),
            ("phantom_seed", &self.phantom_seed),
            ("flow_seed", &self.flow_seed),
            ("max_disp", &self.max_disp),
            ("seeds", &self.seeds),
            ("count", &self.count),
            ("patch_w", &self.patch_w),
            ("out_dir", &self.out),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Register(a) => {
            let rows = cmd_register(&a.load()?)?;
            println!("{RUN_HEADER}");
            rows.iter().for_each(|r| println!("{}", r.csv()));
        }
        Command::Sweep(a) => {
            let cfg = a.load()?;
            let rows = cmd_sweep(&cfg)?;
            println!("{RUN_HEADER}");
            rows.iter().for_each(|r| println!("{}", r.csv()));
            eprintln!("wrote {}", cfg.out_dir.join("sweep.csv").display());
        }
        Command::Dataset(a) => {
            let cfg = a.load()?;
            let c = cmd_dataset(&cfg)?;
            println!(
                "path={} count={} real={} smooth={} augmented={}",
                dataset_path(&cfg).display(),
                c.total(),
                c.real,
                c.smooth,
                c.augmented
            );
        }
        Command::Evaluate { predictions, dataset, out } => {
            let r = cmd_evaluate(&predictions, &dataset, out.as_deref())?;
            println!("n={} epe_mean={} epe_std={} sepe_mean={}", r.n, r.epe_mean, r.epe_std, r.sepe_mean);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with 2 on malformed flags
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lapk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
