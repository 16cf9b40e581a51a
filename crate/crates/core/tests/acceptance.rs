//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxseg::io::{read_labels, read_volume, write_labels, write_volume};
use voxseg::metrics::{dice, dose_stats, hausdorff};
use voxseg::nn::{
    cross_entropy, gradient_check, load_checkpoint, mean_cross_entropy, save_checkpoint, softmax,
    GradCheckOptions, Network, NetworkConfig, OptimizerKind, Tensor4,
};
use voxseg::phantom::{generate_dataset, generate_dose_grid, generate_phantom, lateral_opposed_beams, PhantomParams};
use voxseg::pipeline::{
    apply_threshold, is_converged, merge_overlapping_boxes, sweep, BoundingBox, ClassMap, LabeledCase,
    ProbabilityMaps, SweepConfig, SweepGrid, SweepReport, Thresholds, TrainConfig,
};
use voxseg::volume::{augmentation_angles, rotate, rotate_labels, Interpolation};
use voxseg::{Axis, BinaryMask, CropBox, Error, LabelMap, Volume};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(voxseg::rng::derive(2024, label))
}

fn random_mask(r: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3]) -> BinaryMask {
    let p = r.random_range(0.0..0.6);
    BinaryMask::from_fn(dims, spacing, |_, _, _| r.random_bool(p)).unwrap()
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng("metrics");
    let mut hd_pairs = 0;
    for _ in 0..100 {
        let dims = [0; 3].map(|_| r.random_range(1..=6));
        let spacing = [0; 3].map(|_| r.random_range(0.5..2.0));
        let a = random_mask(&mut r, dims, spacing);
        let b = random_mask(&mut r, dims, spacing);
        let (pa, pb) = (a.points(), b.points());
        let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
        let want = if pa.len() + pb.len() == 0 { 1.0 } else { 2.0 * both as f64 / (pa.len() + pb.len()) as f64 };
        let got = dice(&a, &b).unwrap();
        ensure!(got == want, "dice {got} vs oracle {want} on {dims:?}");

        if pa.is_empty() || pb.is_empty() {
            ensure!(hausdorff(&a, &b).is_err(), "empty mask must not have a distance");
            continue;
        }
        let dist = |p: &[usize; 3], q: &[usize; 3]| {
            (0..3).map(|k| ((p[k] as f64 - q[k] as f64) * spacing[k]).powi(2)).sum::<f64>().sqrt()
        };
        let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
            from.iter()
                .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let want = directed(&pa, &pb).max(directed(&pb, &pa));
        let got = hausdorff(&a, &b).unwrap();
        ensure!((got - want).abs() <= 1e-12, "hd {got} vs oracle {want}");
        hd_pairs += 1;
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok(format!("100 pairs, {hd_pairs} with distances, {:.2}s", t.as_secs_f64()))
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cfg = NetworkConfig { seed: 11, ..NetworkConfig::toy() };
    ensure!(cfg.input_dims == [8; 3] && cfg.depth == 2 && cfg.base_channels == 4 && cfg.dropout == 0.0, "toy net is {cfg:?}");
    let net = Network::build(cfg).unwrap();
    let mut r = rng("gradcheck");
    let x = Tensor4::new(1, [8; 3], (0..512).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let classes = net.config().num_classes as u8;
    let t = LabelMap::from_fn([8; 3], [1.0; 3], |_, _, _| r.random_range(0..classes)).unwrap();
    let report = gradient_check(&net, &x, &t, GradCheckOptions::default()).unwrap();
    let took = start.elapsed();
    ensure!(report.max_rel_error < 1e-4, "max relative error {:e} at {}", report.max_rel_error, report.worst_param);
    ensure!(took < Duration::from_secs(120), "took {took:?}");
    Ok(format!(
        "max rel error {:.2e} over {}/{} params, {:.1}s",
        report.max_rel_error,
        report.checked,
        report.total,
        took.as_secs_f64()
    ))
}

fn softmax_and_loss() -> Outcome {
    let p = softmax(&[0.0; 20]);
    ensure!(p.iter().all(|v| (v - 0.05).abs() < 1e-15), "uniform softmax {p:?}");
    let ce = cross_entropy(&p, &{
        let mut t = vec![0.0; 20];
        t[7] = 1.0;
        t
    });
    ensure!((ce - 20f64.ln()).abs() < 1e-12, "uniform CE {ce}");
    let mut onehot = vec![0.0; 20];
    onehot[3] = 1.0;
    ensure!(cross_entropy(&onehot, &onehot) == 0.0, "matched one-hot CE is not 0");

    let net = Network::build(NetworkConfig { num_classes: 20, seed: 5, ..NetworkConfig::toy() }).unwrap();
    let mut r = rng("softmax");
    let x = Tensor4::new(1, [8; 3], (0..512).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let probs = net.forward(&x).unwrap();
    let worst = (0..probs.voxels())
        .map(|v| ((0..20).map(|c| probs.channel(c)[v]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure!(worst < 1e-9, "probability sum off by {worst:e}");
    let uniform = Tensor4::new(20, [2; 3], vec![0.05; 160]).unwrap();
    let (mean, _) = mean_cross_entropy(&uniform, &[4; 8]);
    ensure!((mean - 20f64.ln()).abs() < 1e-12, "mean CE {mean}");
    Ok(format!("sums within {worst:.1e}"))
}

fn threshold_monotonicity() -> Outcome {
    let mut r = rng("thresholds");
    let levels = [0.75, 0.80, 0.85, 0.90, 0.95];
    let classes = 4;
    for map in 0..50 {
        let dims = [5, 4, 3];
        let n = 60;
        let mut data = vec![0.0; classes * n];
        for v in 0..n {
            let scores: Vec<f64> = (0..classes).map(|_| r.random_range(-1.0..6.0)).collect();
            for (c, p) in softmax(&scores).into_iter().enumerate() {
                data[c * n + v] = p;
            }
        }
        let maps = ProbabilityMaps { probs: Tensor4::new(classes, dims, data).unwrap(), spacing: [1.0; 3] };
        let i = r.random_range(0..levels.len() - 1);
        let j = r.random_range(i + 1..levels.len());
        let lo = apply_threshold(&maps, &Thresholds::uniform(levels[i])).unwrap();
        let hi = apply_threshold(&maps, &Thresholds::uniform(levels[j])).unwrap();
        for c in 1..classes as u8 {
            let ok = lo.data().iter().zip(hi.data()).all(|(&a, &b)| b != c || a == c);
            ensure!(ok, "map {map}: class {c} grows from t={} to t={}", levels[i], levels[j]);
        }
    }
    Ok("50 maps".into())
}

/// Trains one network per window on the toy phantoms.
fn toy_sweep(epochs: usize, grid: &SweepGrid, n_train: usize, n_test: usize) -> SweepReport {
    let cases: Vec<LabeledCase> = generate_dataset(n_train + n_test, &PhantomParams::toy(), 42)
        .unwrap()
        .iter()
        .map(Into::into)
        .collect();
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
        classes: ClassMap::new(vec![0, 2, 4]).unwrap(),
        target_organ: 4,
    };
    sweep(&cases[..n_train], &cases[n_train..], grid, &cfg).unwrap()
}

const TOY_EPOCHS: usize = 60;

struct ToyRun {
    report: SweepReport,
    took: Duration,
}

fn toy_segmentation(run: &ToyRun) -> Outcome {
    let r = &run.report;
    let best = r.best_by_dice;
    let cell = &r.cells[best.row][best.col];
    let eye = cell.organs.iter().find(|o| o.organ == 2).map(|o| o.mean_dice).unwrap_or(0.0);
    let default = r.cell(100.0, 0.80).ok_or("grid lacks the (100, 0.80) cell")?;
    let summary = format!(
        "best w={} t={}: lens {:.3}, eye {:.3}; default cell lens {:.3}; {:.0}s",
        best.window,
        best.threshold,
        cell.mean_dice,
        eye,
        default.mean_dice,
        run.took.as_secs_f64()
    );
    ensure!(cell.mean_dice >= 0.5, "lens Dice too low: {summary}");
    ensure!(eye >= 0.8, "eye Dice too low: {summary}");
    ensure!(cell.mean_dice > default.mean_dice, "optimum does not beat the default cell: {summary}");
    ensure!(run.took < Duration::from_secs(20 * 60), "too slow: {summary}");
    Ok(summary)
}

fn rescan(r: &SweepReport) -> (usize, usize, Option<(usize, usize)>) {
    let mut best = (0, 0);
    let mut hd: Option<(usize, usize, f64)> = None;
    for i in 0..r.windows.len() {
        for j in 0..r.thresholds.len() {
            let c = &r.cells[i][j];
            if c.mean_dice > r.cells[best.0][best.1].mean_dice {
                best = (i, j);
            }
            if let Some(h) = c.mean_hd_mm {
                if hd.is_none_or(|(_, _, b)| h < b) {
                    hd = Some((i, j, h));
                }
            }
        }
    }
    (best.0, best.1, hd.map(|(i, j, _)| (i, j)))
}

fn sweep_consistency(run: &ToyRun) -> Outcome {
    let r = &run.report;
    let (i, j, hd) = rescan(r);
    ensure!((r.best_by_dice.row, r.best_by_dice.col) == (i, j), "Dice optimum {:?} vs rescan ({i}, {j})", r.best_by_dice);
    ensure!(r.best_by_hd.map(|c| (c.row, c.col)) == hd, "HD optimum {:?} vs rescan {hd:?}", r.best_by_hd);

    let small = SweepGrid { windows: vec![60.0, 90.0], thresholds: vec![0.75, 0.9] };
    let a = serde_json::to_vec(&toy_sweep(2, &small, 3, 2)).unwrap();
    let b = serde_json::to_vec(&toy_sweep(2, &small, 3, 2)).unwrap();
    ensure!(a == b, "repeated sweeps differ");

    let last = r.windows.len() - 1;
    ensure!(i > 0 && i < last, "selected window {} is on the grid edge", r.windows[i]);
    Ok(format!("optima match rescan, repeat runs byte-identical, selected window {} inside [{}, {}]", r.windows[i], r.windows[0], r.windows[last]))
}

fn convergence_rule(run: &ToyRun) -> Outcome {
    ensure!(is_converged(&[10.0, 9.5], 2, 0.10), "{{10, 9.5}} should be stable");
    ensure!(!is_converged(&[10.0, 5.0], 2, 0.10), "{{10, 5}} should not be stable");
    let r = &run.report;
    let fired: Vec<Option<usize>> = r
        .histories
        .iter()
        .map(|h| (1..=h.train.len()).find(|&k| is_converged(&h.train[..k], 10, 0.10)))
        .collect();
    let chosen = fired[r.best_by_dice.row];
    ensure!(chosen.is_some_and(|k| k < TOY_EPOCHS), "rule never fired on the selected run: {fired:?}");
    Ok(format!("fires at epoch {} of {TOY_EPOCHS} on the selected run; all windows {fired:?}", chosen.unwrap()))
}

fn augmentation_grid() -> Outcome {
    let a = augmentation_angles();
    ensure!(a.len() == 17, "{} angles", a.len());
    ensure!(a[0] == -25.0, "first angle {}", a[0]);
    ensure!(a.windows(2).all(|p| p[1] - p[0] == 3.0), "uneven steps {a:?}");
    let mut r = rng("rotate");
    let vol = Volume::from_fn([7, 6, 5], [1.0, 0.8, 1.3], |_, _, _| r.random_range(-1000.0..1000.0)).unwrap();
    let labels = LabelMap::from_fn([7, 6, 5], [1.0; 3], |_, _, _| r.random_range(0..6)).unwrap();
    for axis in Axis::ALL {
        for mode in [Interpolation::Trilinear, Interpolation::Nearest] {
            let out = rotate(&vol, axis, 0.0, mode, -1000.0);
            let same = out.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(same, "rotate by 0 about {axis:?} ({mode:?}) changed voxels");
        }
        ensure!(rotate_labels(&labels, axis, 0.0, 0) == labels, "label rotation by 0 changed voxels");
    }
    Ok(format!("{:?}", a))
}

fn union_oracle(boxes: &[BoundingBox]) -> Vec<BoundingBox> {
    // Union overlapping groups until nothing overlaps.
    let mut cur: Vec<BoundingBox> = boxes.to_vec();
    loop {
        let n = cur.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in i + 1..n {
                if cur[i].class == cur[j].class && cur[i].bounds.intersects(&cur[j].bounds) {
                    let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<Option<BoundingBox>> = vec![None; n];
        for i in 0..n {
            let g = root(&mut parent, i);
            groups[g] = Some(match groups[g] {
                Some(b) => BoundingBox { class: b.class, bounds: b.bounds.union(&cur[i].bounds) },
                None => cur[i],
            });
        }
        let next: Vec<BoundingBox> = groups.into_iter().flatten().collect();
        if next.len() == n {
            let mut out = next;
            out.sort_by_key(|b| (b.class, b.bounds.lo, b.bounds.hi));
            return out;
        }
        cur = next;
    }
}

fn box_merge() -> Outcome {
    let mut r = rng("boxes");
    let mut merged_total = 0;
    for set in 0..200 {
        let n = r.random_range(0..=10);
        let boxes: Vec<BoundingBox> = (0..n)
            .map(|_| {
                let lo = [0; 3].map(|_| r.random_range(-5..20i64));
                let hi = lo.map(|l| l + r.random_range(1..8i64));
                BoundingBox { class: r.random_range(1..=2), bounds: CropBox::new(lo, hi).unwrap() }
            })
            .collect();
        let out = merge_overlapping_boxes(&boxes);
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                ensure!(a.class != b.class || !a.bounds.intersects(&b.bounds), "set {set}: {a:?} overlaps {b:?}");
            }
        }
        for b in &boxes {
            ensure!(out.iter().any(|o| o.class == b.class && o.bounds.contains(&b.bounds)), "set {set}: {b:?} lost");
        }
        let mut got = out.clone();
        got.sort_by_key(|b| (b.class, b.bounds.lo, b.bounds.hi));
        ensure!(got == union_oracle(&boxes), "set {set}: differs from the union oracle");
        merged_total += boxes.len() - out.len();
    }
    Ok(format!("200 sets, {merged_total} boxes absorbed"))
}

fn dose_statistics() -> Outcome {
    let mut r = rng("dose");
    for _ in 0..20 {
        let dims = [0; 3].map(|_| r.random_range(1..=8));
        let dose = Volume::from_fn(dims, [1.0; 3], |_, _, _| r.random_range(0.0f32..70.0)).unwrap();
        let mask = random_mask(&mut r, dims, [1.0; 3]);
        let picked: Vec<f64> = dose.data().iter().zip(mask.data()).filter(|(_, m)| **m).map(|(d, _)| f64::from(*d)).collect();
        if picked.is_empty() {
            ensure!(dose_stats(&dose, &mask).is_err(), "empty structure must be an error");
            continue;
        }
        let s = dose_stats(&dose, &mask).unwrap();
        let max = picked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = picked.iter().sum::<f64>() / picked.len() as f64;
        ensure!(s.max_gy == max && s.mean_gy == mean && s.voxels == picked.len(), "{s:?} vs max {max} mean {mean}");
    }
    let p = generate_phantom(&PhantomParams::default(), 3).unwrap();
    let beams = lateral_opposed_beams(&p.geometry, 1.0, 0.005, true, 1.0);
    let dose = generate_dose_grid(p.volume.dims(), p.volume.spacing(), &beams).unwrap();
    let mut line = Vec::new();
    for eye in &p.geometry.eyes {
        let lens = dose_stats(&dose, &p.labels.mask_of(eye.lens_label)).unwrap();
        let globe = dose_stats(&dose, &p.labels.mask_of(eye.eye_label)).unwrap();
        ensure!(lens.mean_gy < globe.mean_gy, "lens {} Gy vs eye {} Gy", lens.mean_gy, globe.mean_gy);
        line.push(format!("lens {:.3} < eye {:.3} Gy", lens.mean_gy, globe.mean_gy));
    }
    Ok(line.join(", "))
}

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng("io");
    let vol = Volume::from_fn([5, 4, 3], [0.7, 0.9, 2.5], |_, _, _| r.random_range(-1e4f32..1e4)).unwrap();
    let labels = LabelMap::from_fn([5, 4, 3], [0.7, 0.9, 2.5], |_, _, _| r.random_range(0..21)).unwrap();
    let vp = dir.path().join("v.vol");
    let lp = dir.path().join("l.vol");
    write_volume(&vp, &vol).unwrap();
    write_labels(&lp, &labels).unwrap();
    let back = read_volume(&vp).unwrap();
    let bitwise = back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure!(bitwise && back.dims() == vol.dims() && back.spacing() == vol.spacing(), "volume round trip");
    ensure!(read_labels(&lp).unwrap() == labels, "label round trip");

    let net = Network::build(NetworkConfig { seed: 77, ..NetworkConfig::toy() }).unwrap();
    let stem = dir.path().join("net");
    save_checkpoint(&net, &stem).unwrap();
    let loaded = load_checkpoint(&stem).unwrap();
    let bits = |n: &Network| -> Vec<u64> { n.params().iter().flat_map(|(_, p)| p.data.iter().map(|v| v.to_bits())).collect::<Vec<_>>() };
    ensure!(bits(&loaded) == bits(&net) && loaded.config() == net.config(), "checkpoint round trip");

    let bytes = std::fs::read(&vp).unwrap();
    let cut = dir.path().join("cut.vol");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    ensure!(matches!(read_volume(&cut), Err(Error::LengthMismatch { .. })), "truncated volume");
    let magic = dir.path().join("magic.vol");
    std::fs::write(&magic, String::from_utf8_lossy(&bytes).replacen("VVOL1", "VVOL9", 1).as_bytes()).unwrap();
    ensure!(matches!(read_volume(&magic), Err(Error::Format { .. })), "bad magic");
    ensure!(matches!(read_volume(&lp), Err(Error::ValueKind { .. })), "labels read as intensity");
    ensure!(matches!(read_labels(&vp), Err(Error::ValueKind { .. })), "intensity read as labels");

    let blob = stem.with_extension("bin");
    let full = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &full[..full.len() - 8]).unwrap();
    ensure!(matches!(load_checkpoint(&stem), Err(Error::LengthMismatch { .. })), "truncated checkpoint blob");
    std::fs::write(stem.with_extension("json"), b"{ not json").unwrap();
    ensure!(matches!(load_checkpoint(&stem), Err(Error::Format { .. })), "corrupt checkpoint manifest");
    Ok("bitwise round trips; truncation, magic, kind and manifest errors".into())
}

fn run(n: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    match &out {
        Ok(d) => println!("criterion {n:>2} {name}: PASS ({d})"),
        Err(d) => println!("criterion {n:>2} {name}: FAIL ({d})"),
    }
    out.is_ok()
}

fn main() {
    // `cargo test -- --list` and filters: nothing to enumerate.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= run(1, "metric oracles", metric_oracles);
    ok &= run(2, "gradient fidelity", gradient_fidelity);
    ok &= run(3, "softmax and cross-entropy", softmax_and_loss);
    ok &= run(4, "threshold monotonicity", threshold_monotonicity);

    let start = Instant::now();
    let toy = catch_unwind(|| toy_sweep(TOY_EPOCHS, &SweepGrid::default(), 20, 5)).map(|report| ToyRun { report, took: start.elapsed() });
    let toy = &toy;
    let with_toy = |f: fn(&ToyRun) -> Outcome| move || toy.as_ref().map_err(|_| "toy sweep panicked".to_string()).and_then(f);
    ok &= run(5, "toy end-to-end segmentation", with_toy(toy_segmentation));
    ok &= run(6, "sweep consistency", with_toy(sweep_consistency));
    ok &= run(7, "convergence rule", with_toy(convergence_rule));

    ok &= run(8, "augmentation grid", augmentation_grid);
    ok &= run(9, "box merge", box_merge);
    ok &= run(10, "dose statistics", dose_statistics);
    ok &= run(11, "volume and checkpoint I/O", io_round_trips);
    if !ok {
        std::process::exit(1);
    }
}
