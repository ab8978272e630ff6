use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gabor_cnn::dataset::{generate_to_dir, split_by_distance, DatasetConfig, SplitSpec};
use gabor_cnn::gabor::build_bank;
use gabor_cnn::harness::report::{write_summary, RESULTS_CSV};
use gabor_cnn::harness::{
    emit_report, obtain_dataset, run_experiment_with, summarize, ExperimentConfig, ResultTable,
    RunOptions,
};
use gabor_cnn::imgio::{read_pgm, resize_bilinear, stretch_to_unit, write_pgm};
use gabor_cnn::nn::{build_model, load_checkpoint, save_checkpoint, Arch, Tensor};
use gabor_cnn::pipeline::{build_pipeline, PipelineVariant};
use gabor_cnn::probe::probe_curve;
use gabor_cnn::tensorfile::write_tensor;
use gabor_cnn::train::{evaluate, train_model, Preprocessor};

#[derive(Parser)]
#[command(
    name = "gaborcnn",
    version,
    about = "Gabor front ends, turntable data and CNN experiments"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic dataset operations.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Write a variant's Gabor kernels as PGMs, GBTF tensors and a CSV listing.
    Genbank {
        #[arg(long)]
        variant: PipelineVariant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a pipeline on one PGM and store the result as a GBTF tensor.
    Preprocess {
        #[arg(long)]
        variant: PipelineVariant,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resize the image to this square side first.
        #[arg(long)]
        size: Option<usize>,
        /// Also write every channel as a contrast-stretched PGM.
        #[arg(long)]
        debug: bool,
    },
    /// Train the configured experiment matrix and write reports.
    Train(RunArgs),
    /// Linear-SVM probe of every block of a MiniResNet-8.
    Probe {
        #[command(flatten)]
        run: RunArgs,
        /// Probe this checkpoint instead of training a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pipeline feeding the model; defaults to the first configured variant.
        #[arg(long)]
        variant: Option<PipelineVariant>,
    },
    /// Rebuild summary.csv from results.csv or a directory of cell files.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Render a dataset to `<out>/<object>/<distance>/<height>/<angle>.pgm`.
    Gen {
        /// Read the `[dataset]` table (and seed) from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        objects: Option<usize>,
        /// Comma-separated camera distances in cm.
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
        /// Comma-separated camera heights in cm.
        #[arg(long, value_delimiter = ',')]
        heights: Option<Vec<f64>>,
        #[arg(long)]
        angles: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)
                .with_context(|| format!("reading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("config.toml"), cfg.to_toml_string()?)?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Dataset {
            action:
                DatasetAction::Gen {
                    config,
                    preset,
                    objects,
                    distances,
                    heights,
                    angles,
                    width,
                    height,
                    seed,
                    out,
                },
        } => {
            let (mut ds, mut base_seed) = match &config {
                Some(p) => {
                    let cfg = ExperimentConfig::from_path(p)?;
                    (cfg.dataset, cfg.seed)
                }
                None => (DatasetConfig::full(), 0),
            };
            match preset {
                Some(Preset::Full) => ds = DatasetConfig::full(),
                Some(Preset::Desk) => ds = DatasetConfig::desk(),
                None => {}
            }
            ds.objects = objects.unwrap_or(ds.objects);
            ds.distances = distances.unwrap_or(ds.distances);
            ds.heights = heights.unwrap_or(ds.heights);
            ds.angles = angles.unwrap_or(ds.angles);
            ds.width = width.unwrap_or(ds.width);
            ds.height = height.unwrap_or(ds.height);
            base_seed = seed.unwrap_or(base_seed);
            let n = generate_to_dir(&ds, base_seed, &out)?;
            println!("wrote {n} images to {}", out.display());
        }
        Command::Genbank { variant, out } => genbank(variant, &out)?,
        Command::Preprocess {
            variant,
            input,
            out,
            size,
            debug,
        } => preprocess(variant, &input, &out, size, debug)?,
        Command::Train(args) => {
            let cfg = args.load()?;
            let opts = RunOptions {
                cell_dir: Some(args.out.join("cells")),
                checkpoint_dir: Some(args.out.join("checkpoints")),
            };
            let table = run_experiment_with(&cfg, &opts)?;
            emit_report(&table, &args.out)?;
            let failed = table.rows.iter().filter(|r| r.failed()).count();
            println!(
                "{} cells ({} failed); reports in {}",
                table.rows.len(),
                failed,
                args.out.display()
            );
        }
        Command::Probe {
            run,
            checkpoint,
            variant,
        } => probe(&run, checkpoint.as_deref(), variant)?,
        Command::Report { input, out } => {
            let table = if input.join(RESULTS_CSV).exists() {
                ResultTable::read_csv(input.join(RESULTS_CSV))?
            } else if input.join("cells").is_dir() {
                ResultTable::merge_dir(input.join("cells"))?
            } else if input.is_dir() {
                ResultTable::merge_dir(&input)?
            } else {
                ResultTable::read_csv(&input)?
            };
            if table.rows.is_empty() {
                bail!("no result rows found in {}", input.display());
            }
            fs::create_dir_all(&out)?;
            if out.join(RESULTS_CSV) != input.join(RESULTS_CSV) {
                table.write_csv(out.join(RESULTS_CSV))?;
            }
            write_summary(&summarize(&table), out.join("summary.csv"))?;
            println!(
                "summarized {} rows into {}",
                table.rows.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn genbank(variant: PipelineVariant, out: &Path) -> Result<()> {
    let bank = build_bank(variant)?;
    fs::create_dir_all(out)?;
    let mut listing = String::from("index,sigma,wavelength,phase,orientation,size,sum\n");
    for (i, (p, k)) in bank.filters().iter().enumerate() {
        let n = k.size();
        write_pgm(
            out.join(format!("filter_{i:02}.pgm")),
            &stretch_to_unit(n, n, k.weights())?,
        )?;
        write_tensor(
            out.join(format!("filter_{i:02}.gbtf")),
            &Tensor::new(vec![n, n], k.weights().to_vec())?,
        )?;
        listing.push_str(&format!(
            "{i},{},{},{},{},{n},{:e}\n",
            p.sigma,
            p.wavelength,
            p.phase,
            p.orientation,
            k.sum()
        ));
    }
    fs::write(out.join("bank.csv"), listing)?;
    println!("wrote {} filters to {}", bank.len(), out.display());
    Ok(())
}

fn preprocess(
    variant: PipelineVariant,
    input: &Path,
    out: &Path,
    size: Option<usize>,
    debug: bool,
) -> Result<()> {
    let mut img = read_pgm(input).with_context(|| format!("reading {}", input.display()))?;
    if let Some(s) = size {
        img = resize_bilinear(&img, s, s)?;
    }
    let spec = build_pipeline(variant)?;
    let t = spec.apply(&img)?;
    fs::create_dir_all(out)?;
    let stem = input
        .file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned());
    write_tensor(out.join(format!("{stem}_{variant}.gbtf")), &t)?;
    if debug {
        let (w, h) = (img.width(), img.height());
        let rect = spec.rectified(&img)?;
        for (c, (plane, raw)) in t
            .data()
            .chunks(w * h)
            .zip(rect.data().chunks(w * h))
            .enumerate()
        {
            write_pgm(
                out.join(format!("{stem}_{variant}_ch{c:02}.pgm")),
                &stretch_to_unit(w, h, plane)?,
            )?;
            write_pgm(
                out.join(format!("{stem}_{variant}_ch{c:02}_rectified.pgm")),
                &stretch_to_unit(w, h, raw)?,
            )?;
        }
    }
    println!("{:?} tensor written to {}", t.shape(), out.display());
    Ok(())
}

fn probe(run: &RunArgs, checkpoint: Option<&Path>, variant: Option<PipelineVariant>) -> Result<()> {
    let cfg = run.load()?;
    let variant = variant.unwrap_or(cfg.variants[0]);
    let ds = obtain_dataset(&cfg)?;
    let split = SplitSpec::train_on(&ds, cfg.probe_distance)?;
    let (train, test) = split_by_distance(&ds, &split)?;
    let (model, input_side) = match checkpoint {
        Some(p) => load_checkpoint(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let prep = Preprocessor::new(variant, cfg.input_side)?;
            let mut m = build_model(
                Arch::MiniResNet8,
                prep.channels(),
                ds.objects,
                cfg.input_side,
                cfg.seed,
            )?;
            train_model(&mut m, &prep, &train, &cfg.optim, cfg.seed)?;
            save_checkpoint(run.out.join("probe_model.gbnn"), &m, cfg.input_side)?;
            (m, cfg.input_side)
        }
    };
    let prep = Preprocessor::new(variant, input_side)?;
    if prep.channels() != model.in_channels {
        bail!(
            "variant {variant} yields {} channels but the model expects {}",
            prep.channels(),
            model.in_channels
        );
    }
    let result = probe_curve(&model, &prep, &train, &test, &cfg.svm)?;
    result.write_csv(run.out.join("probe.csv"))?;
    let head = evaluate(&model, &prep, &test)?;
    for r in &result.rows {
        println!(
            "block {}  dim {:>3}  train {:.4}  test {:.4}",
            r.block_index, r.feature_dim, r.train_acc, r.test_acc
        );
    }
    println!("classifier head test accuracy {head:.4}");
    Ok(())
}
