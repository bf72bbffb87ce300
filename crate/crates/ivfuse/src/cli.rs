//! Command-line front end: `train`, `decompose`, `fuse`, `eval`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::baseline::{classical_fuse, ClassicalMethod};
use crate::data_io::{
    checkpoint::{load_checkpoint, save_checkpoint},
    config::load_config_file,
    load_image, load_training_pairs, pair_name, preprocess, save_image, Gray8, PairedDataset,
    PreprocessMode, Split,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_images, FusionStrategy};
use crate::image::FloatImage;
use crate::metrics::{raw_report, score_triple, summarize, table_header};
use crate::net::decompose;
use crate::tensor::{BnMode, Tensor4};
use crate::trainer::{train_with_observer, TrainConfig};

#[derive(Parser)]
#[command(
    name = "ivfuse",
    about = "Infrared/visible image fusion via a decomposing autoencoder",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a paired dataset (DIR/ir, DIR/vis).
    Train {
        /// Dataset directory containing ir/ and vis/ subdirectories.
        #[arg(long)]
        data: PathBuf,
        /// Where to write the trained checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Override the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the mini-batch size.
        #[arg(long)]
        batch: Option<usize>,
        /// Override the RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `key = value` config file applied before the flags above.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write background/detail feature visualizations for one image.
    Decompose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output prefix; writes PREFIX_background.png and PREFIX_detail.png.
        #[arg(long)]
        out_prefix: String,
    },
    /// Fuse an infrared/visible pair into one image.
    Fuse {
        /// Trained checkpoint (required unless --classical is given).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        /// Feature-fusion rule for the network path.
        #[arg(long, value_parser = ["sum", "avg", "l1"], default_value = "sum")]
        strategy: String,
        /// Use the classical two-scale baseline instead of the network.
        #[arg(long, value_parser = ["opt", "box"])]
        classical: Option<String>,
        /// Smoothing weight for --classical opt.
        #[arg(long, default_value_t = 5.0)]
        lambda: f64,
        /// Window radius for --classical box.
        #[arg(long, default_value_t = 15)]
        radius: usize,
        /// Output image (.pgm or .png).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse and score every pair of a dataset, writing a metrics table.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory containing ir/ and vis/ subdirectories.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["sum", "avg", "l1"], default_value = "sum")]
        strategy: String,
        /// Where to write the summary table; per-image scores go to
        /// REPORT.raw alongside it.
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_strategy(name: &str) -> FusionStrategy {
    match name {
        "avg" => FusionStrategy::weighted_average_default(),
        "l1" => FusionStrategy::L1Norm,
        _ => FusionStrategy::Summation,
    }
}

/// Map a (1,1,h,w) tensor in [0,1] to 8-bit pixels.
fn tensor_to_gray8(t: &Tensor4) -> Result<Gray8> {
    let img = FloatImage::from_unit_tensor(t)?;
    Ok(Gray8 {
        h: img.h(),
        w: img.w(),
        pixels: img.quantize(),
    })
}

/// Map a feature plane in (−1,1) to 8-bit pixels for visualization.
fn plane_to_gray8(plane: &[f32], h: usize, w: usize) -> Gray8 {
    let pixels = plane
        .iter()
        .map(|&v| ((v as f64 * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Gray8 { h, w, pixels }
}

fn run_train(
    data: &Path,
    out: &Path,
    epochs: Option<usize>,
    batch: Option<usize>,
    seed: Option<u64>,
    config_path: Option<&Path>,
) -> Result<()> {
    let mut config = match config_path {
        Some(p) => load_config_file(p, TrainConfig::default())?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(b) = batch {
        config.batch_size = b;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let dataset = PairedDataset::from_dir(data, Split::Train)?;
    let pairs = load_training_pairs(&dataset, config.crop)?;
    println!(
        "training on {} pairs, crop {}x{}, {} epochs",
        pairs.len(),
        config.crop.0,
        config.crop.1,
        config.epochs
    );
    let (params, _log) = train_with_observer(&pairs, &config, |record| {
        println!("{}", record.to_line());
    })?;
    save_checkpoint(&params, &config, out)?;
    println!("saved checkpoint to {}", out.display());
    Ok(())
}

fn run_decompose(ckpt: &Path, image_path: &Path, out_prefix: &str) -> Result<()> {
    let (params, _config) = load_checkpoint(ckpt)?;
    let img = load_image(image_path)?;
    let tensor = preprocess(&img, PreprocessMode::Eval)?;
    let out = decompose(&tensor, &params, BnMode::Eval)?;
    let (h, w) = (out.background.h(), out.background.w());
    let background = format!("{out_prefix}_background.png");
    let detail = format!("{out_prefix}_detail.png");
    save_image(
        Path::new(&background),
        &plane_to_gray8(out.background.plane(0, 0), h, w),
    )?;
    save_image(
        Path::new(&detail),
        &plane_to_gray8(out.detail.plane(0, 0), h, w),
    )?;
    println!("wrote {background} and {detail}");
    Ok(())
}

fn load_eval_pair(ir_path: &Path, vis_path: &Path) -> Result<(Tensor4, Tensor4)> {
    let ir = load_image(ir_path)?;
    let vis = load_image(vis_path)?;
    if ir.h != vis.h || ir.w != vis.w {
        return Err(Error::ShapeMismatch {
            context: "fuse inputs",
            lhs: format!("{}x{} ({})", ir.h, ir.w, ir_path.display()),
            rhs: format!("{}x{} ({})", vis.h, vis.w, vis_path.display()),
        });
    }
    Ok((
        preprocess(&ir, PreprocessMode::Eval)?,
        preprocess(&vis, PreprocessMode::Eval)?,
    ))
}

#[allow(clippy::too_many_arguments)]
fn run_fuse(
    ckpt: Option<&Path>,
    ir_path: &Path,
    vis_path: &Path,
    strategy: &str,
    classical: Option<&str>,
    lambda: f64,
    radius: usize,
    out: &Path,
) -> Result<()> {
    let fused: Gray8 = match classical {
        Some(kind) => {
            let ir = load_image(ir_path)?;
            let vis = load_image(vis_path)?;
            if ir.h != vis.h || ir.w != vis.w {
                return Err(Error::ShapeMismatch {
                    context: "fuse inputs",
                    lhs: format!("{}x{} ({})", ir.h, ir.w, ir_path.display()),
                    rhs: format!("{}x{} ({})", vis.h, vis.w, vis_path.display()),
                });
            }
            let method = match kind {
                "opt" => ClassicalMethod::Optimize { lambda },
                _ => ClassicalMethod::BoxFilter { radius },
            };
            let fused = classical_fuse(
                &FloatImage::from_gray8(ir.h, ir.w, &ir.pixels)?,
                &FloatImage::from_gray8(vis.h, vis.w, &vis.pixels)?,
                method,
            )?;
            Gray8 {
                h: fused.h(),
                w: fused.w(),
                pixels: fused.quantize(),
            }
        }
        None => {
            let ckpt = ckpt.ok_or_else(|| {
                Error::InvalidArgument("fuse needs either --ckpt or --classical".into())
            })?;
            let (params, _config) = load_checkpoint(ckpt)?;
            let (ir, vis) = load_eval_pair(ir_path, vis_path)?;
            let fused = fuse_images(&ir, &vis, &params, &parse_strategy(strategy))?;
            tensor_to_gray8(&fused)?
        }
    };
    save_image(out, &fused)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, strategy: &str, report: &Path) -> Result<()> {
    let (params, _config) = load_checkpoint(ckpt)?;
    let dataset = PairedDataset::from_dir(data, Split::Val)?;
    if dataset.is_empty() {
        return Err(Error::Data(format!(
            "{}: dataset contains no image pairs",
            data.display()
        )));
    }
    let rule = parse_strategy(strategy);
    let mut reports = Vec::new();
    let mut skipped = 0usize;
    for (ir_path, vis_path) in &dataset.pairs {
        let name = pair_name(ir_path);
        let scored = load_eval_pair(ir_path, vis_path).and_then(|(ir, vis)| {
            let fused = fuse_images(&ir, &vis, &params, &rule)?;
            score_triple(
                &FloatImage::from_unit_tensor(&ir)?,
                &FloatImage::from_unit_tensor(&vis)?,
                &FloatImage::from_unit_tensor(&fused)?,
                &name,
            )
        });
        match scored {
            Ok(r) => reports.push(r),
            Err(e) => {
                eprintln!("warning: skipping {name}: {e}");
                skipped += 1;
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::Data(format!(
            "all {} pairs failed to score",
            dataset.len()
        )));
    }
    let summary = summarize(&reports)?;
    let table = format!("{}\n{}\n", table_header(), summary.table_row(strategy));
    std::fs::write(report, &table).map_err(|e| Error::io(report, e))?;
    let raw_path = PathBuf::from(format!("{}.raw", report.display()));
    std::fs::write(&raw_path, raw_report(&reports)).map_err(|e| Error::io(&raw_path, e))?;
    print!("{table}");
    println!(
        "scored {}/{} pairs ({skipped} skipped); table in {}, per-image scores in {}",
        reports.len(),
        dataset.len(),
        report.display(),
        raw_path.display()
    );
    Ok(())
}

fn exec(command: Command) -> Result<()> {
    match command {
        Command::Train {
            data,
            out,
            epochs,
            batch,
            seed,
            config,
        } => run_train(&data, &out, epochs, batch, seed, config.as_deref()),
        Command::Decompose {
            ckpt,
            image,
            out_prefix,
        } => run_decompose(&ckpt, &image, &out_prefix),
        Command::Fuse {
            ckpt,
            ir,
            vis,
            strategy,
            classical,
            lambda,
            radius,
            out,
        } => run_fuse(
            ckpt.as_deref(),
            &ir,
            &vis,
            &strategy,
            classical.as_deref(),
            lambda,
            radius,
            &out,
        ),
        Command::Eval {
            ckpt,
            data,
            strategy,
            report,
        } => run_eval(&ckpt, &data, &strategy, &report),
    }
}

/// Parse and run; returns the process exit code. `args` includes the
/// program name in position 0.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match exec(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
