//! End-to-end run on small single-eye phantoms: generate 25 cases, train one
//! network per window and print the lens Dice for every window and threshold.
//!
//! `cargo run --release --example toy_sweep -- [epochs]` (default 60; about
//! ten minutes on one core).

use std::time::Instant;

use voxseg::nn::{NetworkConfig, OptimizerKind};
use voxseg::phantom::{generate_dataset, PhantomParams};
use voxseg::pipeline::{is_converged, sweep, ClassMap, LabeledCase, SweepConfig, SweepGrid, TrainConfig};

fn main() -> voxseg::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(60, |s| s.parse().expect("epoch count"));
    let start = Instant::now();
    let cases: Vec<LabeledCase> = generate_dataset(25, &PhantomParams::toy(), 42)?.iter().map(Into::into).collect();
    let cfg = SweepConfig {
        network: NetworkConfig {
            num_classes: 3,
            depth: 2,
            base_channels: 2,
            dropout: 0.0,
            input_dims: [32; 3],
            seed: 42,
            ..NetworkConfig::default()
        },
        train: TrainConfig {
            epochs,
            steps_per_epoch: 35,
            learning_rate: 0.006,
            optimizer: OptimizerKind::adam(),
            seed: 42,
            ..TrainConfig::default()
        },
        classes: ClassMap::new(vec![0, 2, 4])?,
        target_organ: 4,
    };
    let grid = SweepGrid::default();
    let report = sweep(&cases[..20], &cases[20..], &grid, &cfg)?;

    println!("lens Dice, rows are windows, columns thresholds {:?}", grid.thresholds);
    for ((w, row), history) in report.windows.iter().zip(&report.cells).zip(&report.histories) {
        let cells: Vec<String> = row.iter().map(|c| format!("{:.3}", c.mean_dice)).collect();
        let settled = (1..=history.train.len()).find(|&k| is_converged(&history.train[..k], 10, 0.1));
        println!("w={w:<5} {}  (loss settles at epoch {settled:?})", cells.join(" "));
    }
    let b = report.best_by_dice;
    println!("best {:.3} at window {} threshold {}", b.value, b.window, b.threshold);
    println!("took {:.0} s", start.elapsed().as_secs_f64());
    Ok(())
}
