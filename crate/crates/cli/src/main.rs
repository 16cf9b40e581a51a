use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use voxseg::io::{
    read_cases, read_labels, read_manifest, read_volume, write_dataset, write_labels, RunConfig,
};
use voxseg::metrics::dose_stats;
use voxseg::nn::{gradient_check, load_checkpoint, save_checkpoint, GradCheckOptions, Network, NetworkConfig, Tensor4};
use voxseg::phantom::{generate_dataset, generate_dose_grid, lateral_opposed_beams, split};
use voxseg::pipeline::{
    evaluate, prepare, segment, sweep, train, write_history_csv, write_json, SegReport, Thresholds,
};
use voxseg::{Result, WindowSpec};

/// Volumetric segmentation toolkit: phantoms, training, sweeps and metrics.
#[derive(Parser)]
#[command(name = "voxseg", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded phantom dataset.
    Phantom {
        /// Number of cases; overrides the configured count.
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Train a network on the training split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Segment one volume with a trained network.
    Segment {
        /// Checkpoint manifest (or its stem).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Window half-width; defaults to the training window.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score predicted label files against ground truth.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
    },
    /// Window by threshold grid sweep on a dataset.
    Sweep {
        #[arg(long)]
        data: PathBuf,
    },
    /// Maximum and mean dose per structure of one dataset case.
    DoseStats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        case: usize,
        /// Dose volume; lateral opposed beams are generated when omitted.
        #[arg(long)]
        dose: Option<PathBuf>,
        /// Shield the lenses when generating beams.
        #[arg(long)]
        block_lenses: bool,
        #[arg(long, default_value_t = 1.0)]
        beam_dose: f64,
        #[arg(long, default_value_t = 0.005)]
        attenuation: f64,
    },
    /// Compare analytic and finite-difference gradients of a network.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Use the configured network instead of the small default one.
        #[arg(long)]
        configured: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.apply_seed(s);
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.out_dir.as_path();
    match cli.command {
        Command::Phantom { cases } => {
            let n = cases.unwrap_or(cfg.dataset.cases);
            let phantoms = generate_dataset(n, &cfg.phantom, cfg.seed)?;
            let parts = split(n, cfg.dataset.train_fraction, cfg.dataset.val_fraction);
            write_dataset(out, cfg.seed, &phantoms, parts)?;
            println!("wrote {n} cases to {}", out.display());
        }
        Command::Train { data } => {
            let m = read_manifest(&data)?;
            let dims = cfg.network.input_dims;
            let prep = |which: &[usize]| -> Result<Vec<_>> {
                read_cases(&data, &m, which)?
                    .iter()
                    .map(|c| prepare(&c.volume, &c.labels, cfg.train.window, &cfg.classes, dims))
                    .collect()
            };
            let (net, history) =
                train(Network::build(cfg.network.clone())?, &prep(&m.split.train)?, &prep(&m.split.val)?, &cfg.train)?;
            save_checkpoint(&net, &out.join("model"))?;
            write_history_csv(&out.join("loss.csv"), &history)?;
            println!(
                "trained {} epochs, final loss {:.6}",
                history.train.len(),
                history.train.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Segment { model, input, output, window, threshold } => {
            let net = load_checkpoint(&model)?;
            let w = match window {
                Some(w) => WindowSpec::new(w)?,
                None => cfg.train.window,
            };
            let t = Thresholds::uniform(threshold.unwrap_or(cfg.threshold));
            let labels = segment(&read_volume(&input)?, &net, &cfg.classes, w, &t)?;
            write_labels(&output, &labels)?;
        }
        Command::Evaluate { pred, gt } => {
            if pred.len() != gt.len() {
                return Err(voxseg::Error::InvalidParameter(format!(
                    "{} predictions but {} ground-truth files",
                    pred.len(),
                    gt.len()
                )));
            }
            let organs = &cfg.classes.organs()[1..];
            let cases = pred
                .iter()
                .zip(&gt)
                .map(|(p, g)| evaluate(&read_labels(p)?, &read_labels(g)?, organs))
                .collect::<Result<Vec<_>>>()?;
            let mut report = SegReport::from_cases(&cases)?;
            for o in &mut report.organs {
                o.name = cfg.organ_name(o.organ);
            }
            write_json(&out.join("seg_report.json"), &report)?;
            voxseg::io::write_atomic(&out.join("seg_report.csv"), &report.to_csv()?)?;
            for o in &report.organs {
                println!("{} dice {:.4}", o.name, o.dice_mean);
            }
        }
        Command::Sweep { data } => {
            let m = read_manifest(&data)?;
            let train_set = read_cases(&data, &m, &m.split.train)?;
            let test_set = read_cases(&data, &m, &m.split.test)?;
            let report = sweep(&train_set, &test_set, &cfg.grid, &cfg.sweep_config())?;
            write_json(&out.join("sweep.json"), &report)?;
            voxseg::io::write_atomic(&out.join("sweep_dice.csv"), &report.dice_csv()?)?;
            voxseg::io::write_atomic(&out.join("sweep_hd.csv"), &report.hd_csv()?)?;
            let b = report.best_by_dice;
            println!("best dice {:.4} at window {} threshold {}", b.value, b.window, b.threshold);
        }
        Command::DoseStats { data, case, dose, block_lenses, beam_dose, attenuation } => {
            let m = read_manifest(&data)?;
            let entry = m.cases.get(case).ok_or_else(|| {
                voxseg::Error::InvalidParameter(format!("case {case} of {}", m.cases.len()))
            })?;
            let labels = read_labels(&data.join(&entry.labels))?;
            let grid = match dose {
                Some(p) => read_volume(&p)?,
                None => {
                    let beams = lateral_opposed_beams(&entry.geometry, beam_dose, attenuation, block_lenses, 1.0);
                    generate_dose_grid(labels.dims(), labels.spacing(), &beams)?
                }
            };
            let mut rows = Vec::new();
            for organ in 1..=voxseg::volume::MAX_LABEL {
                let mask = labels.mask_of(organ);
                if mask.count() == 0 {
                    continue;
                }
                let s = dose_stats(&grid, &mask)?;
                println!("{}: max {:.4} Gy, mean {:.4} Gy", cfg.organ_name(organ), s.max_gy, s.mean_gy);
                rows.push(serde_json::json!({
                    "organ": organ,
                    "name": cfg.organ_name(organ),
                    "max_gy": s.max_gy,
                    "mean_gy": s.mean_gy,
                    "voxels": s.voxels,
                }));
            }
            write_json(&out.join("dose_stats.json"), &rows)?;
        }
        Command::Gradcheck { tolerance, configured } => {
            let ncfg = if configured {
                NetworkConfig { dropout: 0.0, seed: cfg.seed, ..cfg.network.clone() }
            } else {
                NetworkConfig { seed: cfg.seed, ..NetworkConfig::toy() }
            };
            let net = Network::build(ncfg)?;
            let (x, target) = gradcheck_inputs(&net, cfg.seed);
            let report = gradient_check(&net, &x, &target, GradCheckOptions { seed: cfg.seed, ..Default::default() })?;
            println!(
                "max relative error {:.3e} ({} of {} parameters, worst {})",
                report.max_rel_error, report.checked, report.total, report.worst_param
            );
            if !(report.max_rel_error < tolerance) {
                eprintln!("error: gradient error above tolerance {tolerance:e}");
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn gradcheck_inputs(net: &Network, seed: u64) -> (Tensor4, voxseg::LabelMap) {
    use rand::Rng;
    let shape = net.input_shape();
    let mut rng = voxseg::rng::stream(seed, "gradcheck-data");
    let x: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let classes = net.config().num_classes as u8;
    let target =
        voxseg::LabelMap::from_fn(shape.dims, [1.0; 3], |_, _, _| rng.random_range(0..classes)).expect("valid grid");
    (Tensor4::new(shape.channels, shape.dims, x).expect("matching length"), target)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

