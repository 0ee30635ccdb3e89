use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use rehar_core::checkpoint::{load_checkpoint, save_checkpoint};
use rehar_core::config::{self, RunConfig};
use rehar_core::data::{
    generate_synthetic_dataset, load_clip_ppm_sequence, read_manifest, write_dataset, Split,
    VideoClip,
};
use rehar_core::evaluation::{evaluate, input_saliency};
use rehar_core::flow::{estimate_flow, flow_to_color, write_flo_file};
use rehar_core::image::RgbImage;
use rehar_core::model::{PreparedClip, ReharModel};
use rehar_core::training::train;
use rehar_core::{Error, Real};

#[derive(Parser)]
#[command(
    name = "rehar",
    version,
    about = "Two-stream video activity recognition"
)]
struct Cli {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the data and training seeds of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for flow preprocessing and per-batch gradients.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split of a manifest; writes model.rhar and history.tsv.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split; writes ap.tsv and confusion.tsv.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate flow between two P6 images; writes a .flo file and its color rendering.
    Flow {
        prev: PathBuf,
        curr: PathBuf,
        flo: PathBuf,
        ppm: PathBuf,
    },
    /// Input-gradient maps of one category's logit for a clip directory.
    Saliency {
        checkpoint: PathBuf,
        clip: PathBuf,
        category: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the documented default configuration.
    Config,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::NonFinite(_) | Error::NonFiniteGradient { .. } => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_split(manifest: &Path, split: Split) -> Result<Vec<VideoClip>, Error> {
    read_manifest(manifest)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| load_clip_ppm_sequence(&e.path))
        .collect()
}

fn prepare(
    clips: &[VideoClip],
    cfg: &RunConfig,
    model: &rehar_core::model::ModelConfig,
    threads: usize,
) -> Result<Vec<PreparedClip<Real>>, Error> {
    for c in clips {
        if c.label >= model.num_categories {
            return Err(Error::Config(format!(
                "clip {} has label {} but the model has {} categories",
                c.id, c.label, model.num_categories
            )));
        }
    }
    PreparedClip::from_clips(clips, model, &cfg.flow, threads)
}

fn category_names(cfg: &RunConfig, n: usize) -> Vec<String> {
    let cats = cfg.synth.categories();
    if cats.len() == n {
        cats.iter().map(ToString::to_string).collect()
    } else {
        (0..n).map(|i| format!("c{i}")).collect()
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth { out } => {
            let ds = generate_synthetic_dataset(&cfg.synth)?;
            let manifest = write_dataset(&ds, out)?;
            println!(
                "{} train + {} test clips over {} categories; manifest {}",
                ds.train.len(),
                ds.test.len(),
                ds.categories.len(),
                manifest.display()
            );
        }
        Command::Train { manifest, out } => {
            let model_cfg = cfg.model_config();
            let clips = load_split(manifest, Split::Train)?;
            if clips.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{}: no train clips",
                    manifest.display()
                )));
            }
            let prepared = prepare(&clips, &cfg, &model_cfg, cli.threads)?;
            let mut model = ReharModel::<Real>::new(&model_cfg, cfg.training.seed)?;
            info!(
                "training {} parameters on {} clips",
                model.parameter_count(),
                prepared.len()
            );
            let history = train(&mut model, &prepared, &cfg.training, cli.threads)?;
            create_dir(out)?;
            save_checkpoint(&model, out.join("model.rhar"))?;
            write(&out.join("history.tsv"), history.to_tsv())?;
            print!("{}", history.to_tsv());
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
        } => {
            let model: ReharModel<Real> = load_checkpoint(checkpoint)?;
            let clips = load_split(manifest, Split::Test)?;
            if clips.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{}: no test clips",
                    manifest.display()
                )));
            }
            let prepared = prepare(&clips, &cfg, &model.config, cli.threads)?;
            let ev = evaluate(&model, &prepared)?;
            let names = category_names(&cfg, model.config.num_categories);
            create_dir(out)?;
            let ap = ev.map.to_tsv(&names);
            let confusion = ev.confusion.to_tsv(&names);
            write(&out.join("ap.tsv"), &ap)?;
            write(&out.join("confusion.tsv"), &confusion)?;
            println!("accuracy\t{:.6}", ev.accuracy);
            print!("{ap}\n{confusion}");
        }
        Command::Flow {
            prev,
            curr,
            flo,
            ppm,
        } => {
            let a = RgbImage::read_ppm(prev)?;
            let b = RgbImage::read_ppm(curr)?;
            let field = estimate_flow(&a.to_gray(), &b.to_gray(), &cfg.flow)?;
            write_flo_file(&field, flo)?;
            flow_to_color(&field, None).write_ppm(ppm)?;
            println!(
                "mean flow ({:.4}, {:.4}) px",
                field.mean_u(),
                field.mean_v()
            );
        }
        Command::Saliency {
            checkpoint,
            clip,
            category,
            out,
        } => {
            let model: ReharModel<Real> = load_checkpoint(checkpoint)?;
            let clip = load_clip_ppm_sequence(clip)?;
            let prepared = PreparedClip::from_clip(&clip, &model.config, &cfg.flow)?;
            let result = input_saliency(&model, &prepared.pairs, *category)?;
            create_dir(out)?;
            for (i, map) in result.to_gray_maps().iter().enumerate() {
                let kind = if i % 2 == 0 { "frame" } else { "flow" };
                map.write_pgm(out.join(format!("{kind}_{:03}.pgm", i / 2)))?;
            }
            println!("category {category} logit {:.6}", result.logit);
        }
        Command::Config => print!("{}", config::reference()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
