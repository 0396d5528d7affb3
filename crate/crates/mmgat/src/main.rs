//! Command-line front end: dataset synthesis, preprocessing, training,
//! evaluation, gradient checking and checkpoint inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use mmgat::checkpoint::load_checkpoint;
use mmgat::data::{
    dataset_paths, denoise_volume, fuse_frames, load_frames_csv, save_dataset, sort_points,
    synth_dataset, Dataset,
};
use mmgat::gradcheck::run_canonical_gradcheck;
use mmgat::graph::GraphConfig;
use mmgat::metrics::{evaluate, Protocol};
use mmgat::train::{load_train_config, train, TrainError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "mmgat", version, about = "Radar point-cloud pose estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled dataset (point CSV + label CSV).
    Synth {
        /// Number of frames.
        #[arg(long)]
        frames: usize,
        /// Radar points per frame.
        #[arg(long)]
        points: usize,
        /// Joints per skeleton.
        #[arg(long)]
        joints: usize,
        /// Gaussian position noise sigma in meters.
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output stem; writes <out>.points.csv and <out>.labels.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sort, fuse and denoise a dataset, in that fixed order.
    Preprocess {
        /// Input point CSV (a sibling .labels.csv is picked up if present).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output stem; writes <out>.points.csv and <out>.labels.csv.
        #[arg(long)]
        out: PathBuf,
        /// Odd fusion window; 1 disables fusion.
        #[arg(long, default_value_t = 1)]
        fuse_window: usize,
        /// Drop labeled frames with any keypoint outside (-bound, bound) m.
        #[arg(long)]
        denoise_bound: Option<f64>,
        /// Canonical (x, y, z) point ordering per frame.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        sort: bool,
    },
    /// Train a model per a TOML config; writes checkpoint and log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Input point CSV with labels.
        #[arg(long)]
        data: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on labeled data and print a metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input point CSV with labels.
        #[arg(long)]
        data: PathBuf,
        /// Metric protocol: mars (MAE/RMSE) or mri ((PA-)MPJPE).
        #[arg(long)]
        protocol: String,
    },
    /// Check backprop against central finite differences on a tiny graph.
    Gradcheck {
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
    },
    /// Print a checkpoint's config and parameter inventory.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match cli.cmd {
        Cmd::Synth {
            frames,
            points,
            joints,
            noise,
            seed,
            out,
        } => {
            if frames == 0 || points == 0 || joints == 0 {
                return fail(EXIT_USAGE, "--frames, --points and --joints must be >= 1");
            }
            if noise < 0.0 {
                return fail(EXIT_USAGE, "--noise must be >= 0");
            }
            let ds: Dataset<f64> = synth_dataset(frames, points, joints, noise, seed);
            let (pp, lp) = dataset_paths(&out);
            if let Err(e) = save_dataset(&ds, &pp, &lp) {
                return fail(EXIT_DATA, e);
            }
            println!(
                "wrote {} frames ({} points, {} joints) to {} and {}",
                frames,
                frames * points,
                joints,
                pp.display(),
                lp.display()
            );
            ExitCode::SUCCESS
        }

        Cmd::Preprocess {
            input,
            out,
            fuse_window,
            denoise_bound,
            sort,
        } => {
            if fuse_window == 0 || fuse_window % 2 == 0 {
                return fail(EXIT_USAGE, "--fuse-window must be odd and >= 1");
            }
            if let Some(b) = denoise_bound {
                if b <= 0.0 {
                    return fail(EXIT_USAGE, "--denoise-bound must be > 0");
                }
            }
            let mut ds: Dataset<f64> = match load_frames_csv(&input) {
                Ok(ds) => ds,
                Err(e) => return fail(EXIT_DATA, e),
            };
            if sort {
                ds.frames = ds.frames.into_iter().map(sort_points).collect();
            }
            if fuse_window > 1 {
                ds = fuse_frames(&ds, fuse_window);
            }
            let removed = match denoise_bound {
                Some(b) => {
                    let (kept, removed) = denoise_volume(&ds, b);
                    ds = kept;
                    removed
                }
                None => Vec::new(),
            };
            let (pp, lp) = dataset_paths(&out);
            if let Err(e) = save_dataset(&ds, &pp, &lp) {
                return fail(EXIT_DATA, e);
            }
            println!("removed {} frames", removed.len());
            for id in &removed {
                println!("removed frame_id {id}");
            }
            println!("wrote {} frames to {}", ds.frames.len(), pp.display());
            ExitCode::SUCCESS
        }

        Cmd::Train {
            config,
            data,
            resume,
        } => {
            let cfg = match load_train_config(&config) {
                Ok(c) => c,
                Err(TrainError::Io { path, source }) => {
                    return fail(EXIT_DATA, format!("{}: {source}", path.display()))
                }
                Err(e) => return fail(EXIT_USAGE, e),
            };
            let mut ds: Dataset<f64> = match load_frames_csv(&data) {
                Ok(ds) => ds,
                Err(e) => return fail(EXIT_DATA, e),
            };
            ds.frames = ds.frames.into_iter().map(sort_points).collect();
            if cfg.window > 1 {
                ds = fuse_frames(&ds, cfg.window);
            }
            if let Some(b) = cfg.denoise_bound {
                let (kept, removed) = denoise_volume(&ds, b);
                ds = kept;
                if !removed.is_empty() {
                    println!("denoising removed {} frames", removed.len());
                }
            }
            let resume_ck = match resume {
                Some(p) => match load_checkpoint::<f64>(&p) {
                    Ok(ck) => Some(ck),
                    Err(e) => return fail(EXIT_DATA, e),
                },
                None => None,
            };
            match train(&ds, &cfg, resume_ck) {
                Ok(out) => {
                    let log_path = PathBuf::from(format!(
                        "{}.log",
                        cfg.checkpoint_path.display()
                    ));
                    if let Err(e) = std::fs::write(&log_path, out.log.to_lines()) {
                        return fail(EXIT_DATA, e);
                    }
                    if let Some(last) = out.log.records.last() {
                        println!(
                            "trained {} epochs, final train loss {:.6e}",
                            cfg.epochs, last.train_loss
                        );
                    }
                    println!(
                        "checkpoint: {}\nlog: {}",
                        cfg.checkpoint_path.display(),
                        log_path.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e @ TrainError::NonFiniteLoss { .. }) => fail(EXIT_NUMERIC, e),
                Err(e @ (TrainError::Config(_) | TrainError::Unlabeled)) => fail(EXIT_USAGE, e),
                Err(e) => fail(EXIT_DATA, e),
            }
        }

        Cmd::Eval {
            checkpoint,
            data,
            protocol,
        } => {
            let proto = match Protocol::parse(&protocol) {
                Some(p) => p,
                None => return fail(EXIT_USAGE, "--protocol must be `mars` or `mri`"),
            };
            let ck = match load_checkpoint::<f64>(&checkpoint) {
                Ok(ck) => ck,
                Err(e) => return fail(EXIT_DATA, e),
            };
            let ds: Dataset<f64> = match load_frames_csv(&data) {
                Ok(ds) => ds,
                Err(e) => return fail(EXIT_DATA, e),
            };
            let gcfg = GraphConfig {
                k_neighbors: ck.k_neighbors,
                include_edge_features: ck.model.include_edge_features,
            };
            match evaluate(&ds, &ck.params, &ck.model, &gcfg, proto) {
                Ok(report) => {
                    print!("{}", report.to_text());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_DATA, e),
            }
        }

        Cmd::Gradcheck { h } => {
            if h <= 0.0 {
                return fail(EXIT_USAGE, "--h must be > 0");
            }
            let outcome = run_canonical_gradcheck(h);
            println!(
                "checked {} parameter scalars in {:.2}s",
                outcome.params_checked,
                outcome.elapsed.as_secs_f64()
            );
            println!("worst parameter: {}", outcome.worst_param);
            println!("max relative error: {:.16e}", outcome.max_rel_err);
            if outcome.max_rel_err >= 1e-4 {
                return fail(EXIT_NUMERIC, "gradient check failed (>= 1e-4)");
            }
            ExitCode::SUCCESS
        }

        Cmd::Inspect { checkpoint } => {
            let ck = match load_checkpoint::<f64>(&checkpoint) {
                Ok(ck) => ck,
                Err(e) => return fail(EXIT_DATA, e),
            };
            let m = &ck.model;
            println!("joint_count: {}", m.joint_count);
            println!("k_neighbors: {}", ck.k_neighbors);
            println!("include_edge_features: {}", m.include_edge_features);
            println!("edge_widths: {:?}", m.edge_widths);
            println!("gat_layers: {}", m.gat_layers);
            println!("gat_width: {}", m.gat_width);
            println!("head_hidden: {:?}", m.head_hidden);
            println!("dropout_rate: {}", m.dropout_rate);
            println!("leaky_slope: {}", m.leaky_slope);
            println!("epoch: {}", ck.epoch);
            println!("base_lr: {}", ck.base_lr);
            println!("lr_factor: {}", ck.lr_factor);
            println!("adam_step: {}", ck.adam.step);
            for e in ck.params.entries() {
                println!("param {} {:?}", e.name, e.shape);
            }
            println!("total_scalars: {}", ck.params.scalar_count());
            ExitCode::SUCCESS
        }
    }
}
