//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::io::Write as _;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng as _;

use fgvc_ssl::dataset::{generate_synthetic, Dataset, Image};
use fgvc_ssl::diversification::{apply_suppression, suppression_mask, DbConfig};
use fgvc_ssl::explain::localization_rate;
use fgvc_ssl::losses::{cross_entropy_value, dcl_loc_loss, gce_value, LocMode, MemoryBank};
use fgvc_ssl::model::Model;
use fgvc_ssl::rng::stream;
use fgvc_ssl::tensor::{Graph, Tensor};
use fgvc_ssl::trainer::{train, train_with, Mode, TrainConfig};
use fgvc_ssl::transforms::{apply_rcm, location_targets, rcm_permutation, reassemble, JigsawPermutation};
use fgvc_ssl::verify;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, title: &str, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("[{}] {id:>2} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        std::io::stdout().flush().ok();
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn gradients(r: &mut Report) {
    let t = Instant::now();
    let checks = verify::grad_checks().expect("grad suite runs");
    let secs = t.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.value).fold(0.0, f64::max);
    let bad: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    r.line(
        1,
        bad.is_empty() && secs < 60.0 && checks.iter().all(|c| c.tolerance == 1e-4),
        "gradient oracle",
        format!("{} ops and losses, worst rel err {worst:.2e} < 1e-4, {secs:.1}s < 60s, failing {bad:?}", checks.len()),
    );
}

fn gce_equals_ce(r: &mut Report) {
    let mut rng = stream(2024, &[2]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=20);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y = rng.random_range(0..n);
        worst = worst.max((gce_value(&s, y, n - 1).unwrap() - cross_entropy_value(&s, y).unwrap()).abs());
    }
    r.line(2, worst < 1e-12, "GCE with k = N-1 equals CE", format!("max |diff| {worst:.2e} < 1e-12 over 1000 vectors"));
}

fn displacement_ok(perm: &[usize], d: usize) -> bool {
    let mut seen = vec![false; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        if p >= perm.len() || seen[p] || p.abs_diff(i) >= 2 * d {
            return false;
        }
        seen[p] = true;
    }
    true
}

fn rcm_validity(r: &mut Report) {
    let t = Instant::now();
    let mut bad = 0;
    for i in 0..10_000u64 {
        let k = if i % 2 == 0 { 4 } else { 7 };
        let d = 1 + (i as usize / 2) % 3;
        let p = rcm_permutation(k, d, &mut stream(i, &[3])).unwrap();
        let ok = p.row_perms().iter().chain(p.col_perms()).all(|q| displacement_ok(q, d));
        bad += !ok as usize;
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        3,
        bad == 0 && secs < 10.0,
        "RCM validity",
        format!("{bad} of 10000 draws violate bound or bijectivity, {secs:.2}s < 10s"),
    );
}

fn rcm_roundtrip(r: &mut Report) {
    let mut bad = 0;
    for seed in 0..100u64 {
        let mut rng = stream(seed, &[4]);
        let size = 8 * rng.random_range(2..=6);
        let img = Image::new(size, size, (0..3 * size * size).map(|_| rng.random::<f32>()).collect()).unwrap();
        let k = [2, 4, 8][seed as usize % 3];
        let d = rng.random_range(1..k);
        let (phi, perm) = apply_rcm(&img, &rcm_permutation(k, d, &mut rng).unwrap()).unwrap();
        let back = reassemble(&phi, &perm).unwrap();
        let same = back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        bad += !same as usize;
    }
    r.line(4, bad == 0, "RCM roundtrip", format!("{bad} of 100 reassemblies differ bitwise"));
}

fn reductions(r: &mut Report) {
    let (tr, te) = generate_synthetic(4, 6, 3, 16, 5).unwrap();
    let base = TrainConfig {
        epochs: 3,
        batch_size: 4,
        lr_decay_epoch: 2,
        ..TrainConfig::default()
    };
    let rot = TrainConfig {
        mode: Mode::Rotation,
        lambda: 0.0,
        ..base.clone()
    };
    let mut snaps = Vec::new();
    train_with::<f64>(&base, &tr, &te, |_, m| snaps.push(m.params().clone())).unwrap();
    let mut epoch = 0;
    let mut dev: f64 = 0.0;
    train_with::<f64>(&rot, &tr, &te, |_, m: &Model<f64>| {
        for p in snaps[epoch].iter() {
            for (a, b) in p.value.data().iter().zip(m.param(&p.name).unwrap().data()) {
                dev = dev.max((a - b).abs());
            }
        }
        epoch += 1;
    })
    .unwrap();

    let mut rng = stream(6, &[5]);
    let cams = Tensor::<f32>::new(vec![10, 8, 8], (0..640).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let mut changed = 0;
    for (i, cfg) in [
        DbConfig { p_peak: 0.0, p_patch: 0.0, ..DbConfig::default() },
        DbConfig { alpha: 1.0, p_peak: 1.0, p_patch: 1.0, ..DbConfig::default() },
    ]
    .iter()
    .enumerate()
    {
        for s in 0..20 {
            let mask = suppression_mask(&cams, cfg, &mut stream(s, &[i as u64])).unwrap();
            let out = apply_suppression(&cams, &mask, cfg.alpha).unwrap();
            changed += out.data().iter().zip(cams.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        }
    }

    let mut loc: f64 = 0.0;
    for seed in 0..20u64 {
        let k = 2 + seed as usize % 6;
        let perm = rcm_permutation(k, 1, &mut stream(seed, &[7])).unwrap();
        let shuffled = [location_targets(&perm)];
        let grid = |p: &JigsawPermutation| {
            let t = location_targets(p);
            let mut v = Vec::new();
            for axis in 0..2 {
                v.extend(t.coords().iter().map(|c| c[axis]));
            }
            Tensor::<f64>::new(vec![1, 2, k, k], v).unwrap()
        };
        for mode in [LocMode::Mse, LocMode::L1] {
            let mut g = Graph::new();
            let pi = g.constant(grid(&JigsawPermutation::identity(k)));
            let pp = g.constant(grid(&perm));
            let l = dcl_loc_loss(&mut g, pi, pp, &shuffled, mode).unwrap();
            loc = loc.max(g.value(l).item().unwrap().abs());
        }
    }
    r.line(
        5,
        epoch == 3 && dev <= 1e-12 && changed == 0 && loc == 0.0,
        "reduction boundaries",
        format!("rotation lambda 0 vs baseline max param diff {dev:.2e} <= 1e-12; DB identity changed {changed} values; perfect location loss {loc}"),
    );
}

fn memory_bank(r: &mut Report) {
    let (dim, beta) = (16, 0.5);
    let ids: Vec<u64> = (100..140).collect();
    let mut bank = MemoryBank::new(&ids, dim, beta, 9).unwrap();
    let mut expect: Vec<Vec<f64>> = ids.iter().map(|&i| bank.get(i).unwrap().to_vec()).collect();
    let mut rng = stream(10, &[6]);
    for _ in 0..5000 {
        let j = rng.random_range(0..ids.len());
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        bank.update(ids[j], &v).unwrap();
        let m: Vec<f64> = expect[j].iter().zip(&v).map(|(m, v)| beta * m + (1.0 - beta) * v).collect();
        let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        expect[j] = m.iter().map(|x| x / n).collect();
    }
    let (mut dev, mut norm): (f64, f64) = (0.0, 0.0);
    for (i, &id) in ids.iter().enumerate() {
        let got = bank.get(id).unwrap();
        for (a, b) in got.iter().zip(&expect[i]) {
            dev = dev.max((a - b).abs());
        }
        norm = norm.max((got.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs());
    }
    r.line(
        6,
        dev < 1e-10 && norm < 1e-6,
        "memory bank EMA",
        format!("max deviation {dev:.2e} < 1e-10, max |norm - 1| {norm:.2e} < 1e-6"),
    );
}

struct Run {
    top1: f64,
    model: Option<Model<f32>>,
}

fn preset(seed: u64) -> (Dataset, Dataset) {
    generate_synthetic(20, 100, 50, 32, seed).unwrap()
}

fn run(mode: Mode, fraction: f64, seed: u64, lambda: Option<f64>, data: &(Dataset, Dataset)) -> Run {
    let mut cfg = TrainConfig::with_mode(mode);
    cfg.seed = seed;
    cfg.split.label_fraction = fraction;
    if let Some(l) = lambda {
        cfg.lambda = l;
    }
    let out = train::<f32>(&cfg, &data.0, &data.1).unwrap();
    Run {
        top1: out.history.last().unwrap().test_top1,
        model: Some(out.model),
    }
}

fn directional(r: &mut Report) {
    let t = Instant::now();
    let mut base = Vec::new();
    let mut dcl = Vec::new();
    let mut dcl_model = None;
    for &seed in &SEEDS {
        let data = preset(seed);
        base.push(run(Mode::Baseline, 1.0, seed, None, &data).top1);
        let mut d = run(Mode::Dcl, 1.0, seed, None, &data);
        dcl.push(d.top1);
        if seed == SEEDS[0] {
            dcl_model = d.model.take();
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let (mb, md) = (median(&base), median(&dcl));
    r.line(
        7,
        md >= mb && secs < 1200.0,
        "DCL >= baseline (full labels)",
        format!("median top-1 dcl {md:.2} vs baseline {mb:.2} (dcl {dcl:?}, baseline {base:?}), {secs:.0}s < 1200s"),
    );

    let t = Instant::now();
    let full_gaps: Vec<f64> = dcl.iter().zip(&base).map(|(d, b)| d - b).collect();
    let mut low_gaps = Vec::new();
    for &seed in &SEEDS {
        let data = preset(seed);
        let b = run(Mode::Baseline, 0.1, seed, None, &data).top1;
        let d = run(Mode::Dcl, 0.1, seed, None, &data).top1;
        low_gaps.push(d - b);
    }
    let (g1, g01) = (median(&full_gaps), median(&low_gaps));
    r.line(
        8,
        g01 - g1 > 0.0,
        "low-label gap exceeds full-label gap",
        format!(
            "median gap at 0.10 {g01:.2} vs at 1.00 {g1:.2} (paired gaps {} / {}), {:.0}s",
            fmt(&low_gaps),
            fmt(&full_gaps),
            t.elapsed().as_secs_f64()
        ),
    );

    let model = dcl_model.expect("seed 0 run kept");
    let test = preset(SEEDS[0]).1;
    let rate = localization_rate(&model, &test).unwrap();
    // eval crops show 32·31/35 source pixels per side, so a random peak
    // lands in a box with probability area / visible²
    let visible = 32.0 * 31.0 / 35.0;
    let chance = 100.0
        * test.samples().iter().map(|s| s.glyph_box.unwrap().area() as f64).sum::<f64>()
        / (test.len() as f64 * visible * visible);
    r.line(
        10,
        rate >= 3.0 * chance,
        "Grad-CAM localization",
        format!("rate {rate:.2}% vs 3 x chance {:.2}% (chance {chance:.2}%)", 3.0 * chance),
    );
}

fn lambda_trend(r: &mut Report) {
    let t = Instant::now();
    let mut low = Vec::new();
    let mut high = Vec::new();
    for &seed in &SEEDS {
        let data = preset(seed);
        low.push(run(Mode::Rotation, 1.0, seed, Some(0.1), &data).top1);
        high.push(run(Mode::Rotation, 1.0, seed, Some(0.7), &data).top1);
    }
    let (ml, mh) = (median(&low), median(&high));
    r.line(
        9,
        mh <= ml,
        "rotation lambda 0.7 <= lambda 0.1",
        format!("median top-1 {mh:.2} vs {ml:.2} ({high:?} / {low:?}), {:.0}s", t.elapsed().as_secs_f64()),
    );
}

fn cli_determinism(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_fgvc-ssl");
    let data = dir.path().join("data");
    let ok = Command::new(bin)
        .args(["gen-data", "--out", data.to_str().unwrap(), "--classes", "4", "--per-class-train", "8"])
        .args(["--per-class-test", "4", "--size", "16", "--seed", "3"])
        .output()
        .unwrap()
        .status
        .success();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "mode = \"dcl\"\nepochs = 3\nbatch_size = 4\nseed = 11\n").unwrap();
    let train_into = |name: &str| {
        let out = dir.path().join(name);
        let st = Command::new(bin)
            .args(["train", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()])
            .args(["--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let (a, b) = (train_into("a"), train_into("b"));
    r.line(
        11,
        ok && a == b && !a.is_empty(),
        "cmd_train determinism",
        format!("metrics.csv {} bytes, identical: {}", a.len(), a == b),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    gradients(&mut r);
    gce_equals_ce(&mut r);
    rcm_validity(&mut r);
    rcm_roundtrip(&mut r);
    reductions(&mut r);
    memory_bank(&mut r);
    cli_determinism(&mut r);
    directional(&mut r);
    lambda_trend(&mut r);
    println!("{} of 11 criteria failed", r.failed);
    if r.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
