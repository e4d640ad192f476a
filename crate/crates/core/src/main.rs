use artfusion::data::Split;
use artfusion::gradcheck::GradCheckConfig;
use artfusion::model::{ModelConfig, Variant};
use artfusion::train::{cmd_ablation, cmd_evaluate, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, resolve_output, ExperimentConfig};
use artfusion::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Artwork author identification with CNN, Transformer and cascade fusion classifiers.
#[derive(Parser)]
#[command(name = "artfusion", version)]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info", env = "ARTFUSION_LOG")]
    log: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML). Defaults apply to anything not given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Relative paths go under $ARTFUSION_OUTPUT_ROOT when it is set.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Model preset: default, tiny or resnet50. Replaces the config's model section.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    /// Any other field, as dotted.key=value (repeatable), e.g. scheduler.lr_patience=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.preset {
            let k = c.model.num_classes;
            c.model = ModelConfig::preset(p, c.model.variant, k)?;
        }
        if let Some(v) = &self.manifest {
            c.manifest = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.optimizer.lr = v;
        }
        if let Some(v) = self.variant {
            c.model.variant = v;
        }
        if let Some(v) = self.image_size {
            c.model.image_size = v;
        }
        if self.no_augment {
            c.augment.enabled = false;
        }
        c.with_overrides(&self.overrides)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and evaluate its best epoch on the test split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue the run in the output directory from its last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Print the resolved config and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Metrics of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Directory for the report files.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Train every variant for every seed and print the comparison table.
    Ablation {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "cnn_only,transformer_only,fusion")]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "synthetic")]
        dataset_name: String,
    },
    /// Generate a procedural artist-style dataset.
    Synth {
        #[arg(long, default_value_t = 4)]
        artists: usize,
        #[arg(long, default_value_t = 50)]
        per_artist: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 224)]
        size: usize,
    },
    /// Rank artists for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        image: PathBuf,
        /// Also write the ranking as JSON here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 24)]
        coords: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { run, resume, dump_config } => {
            let cfg = run.resolve()?;
            if dump_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let out = cmd_train(&cfg, resume)?;
            let r = &out.test_report;
            println!("best epoch {} (val loss {:.4})", out.best_epoch, out.best_val_loss);
            print!("{}", r.to_text(&out.labels));
            println!("artifacts in {}", out.run_dir.display());
        }
        Cmd::Evaluate { checkpoint, manifest, split, batch_size, output_dir } => {
            let out = output_dir.map(|d| resolve_output(&d));
            let report = cmd_evaluate(&checkpoint, &manifest, split, batch_size, out.as_deref())?;
            let labels = artfusion::model::Checkpoint::load(&checkpoint)?.labels;
            print!("{}", report.to_text(&labels));
            print!("{}", report.confusion.to_text(&labels));
        }
        Cmd::Ablation { run, variants, seeds, dataset_name } => {
            let cfg = run.resolve()?;
            let out = cmd_ablation(&cfg, &variants, &seeds, &dataset_name)?;
            print!("{}", out.table.to_text());
        }
        Cmd::Synth { artists, per_artist, seed, out_dir, size } => {
            let path = cmd_synth(artists, per_artist, seed, &resolve_output(&out_dir), size)?;
            println!("{}", path.display());
        }
        Cmd::Predict { checkpoint, image, output } => {
            let ranked = cmd_predict(&checkpoint, &image)?;
            for r in &ranked {
                println!("{:<24} {:.6}", r.artist, r.probability);
            }
            if let Some(p) = output {
                let json = serde_json::to_string_pretty(&ranked).expect("plain data");
                std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
            }
        }
        Cmd::Gradcheck { coords } => {
            let reports = cmd_gradcheck(&GradCheckConfig { coords_per_input: coords, ..GradCheckConfig::default() })?;
            let failed = reports.iter().filter(|r| !r.passed()).count();
            for r in &reports {
                println!("{r}");
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} of {} gradient checks failed", reports.len())));
            }
            println!("all {} gradient checks passed", reports.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
