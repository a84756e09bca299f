//! Command-line front end: argument definitions and the subcommand bodies.
//!
//! Every subcommand reads MCMR tensor files and an optional key=value config,
//! writes MCMR tensor files or key=value reports, and returns a one-line summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiments::{perturbed_window_flows, Scenario};
use crate::metrics::{es_ed_from_spec, score_frames, sequence_psnr, Roi};
use crate::motion::{estimate_flow_warploss, refine_flow_recon_driven, RefineStatus};
use crate::operators::{CoilMaps, FlowSet, MaskStack};
use crate::phantom::{generate_phantom, window_from_pairwise};
use crate::recon::cg::is_non_increasing;
use crate::recon::{cgsense_init, mcmr_reconstruct, CineSequence, KSpaceStack, ReconConfig};
use crate::rng::Seed;
use crate::sampling::{effective_accel, generate_mask};
use crate::tensor::{load_tensor, save_tensor, ComplexTensor};

/// PSNR at or above this is printed as "perfect"; single-precision storage
/// caps round trips well below infinity.
pub const PERFECT_DISPLAY_DB: f64 = 100.0;

#[derive(Debug, Parser)]
#[command(name = "mcmr", version, about = "Motion-compensated cine MR reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// key = value experiment file; defaults apply to missing keys
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub k_half: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// CG iterations of the motion-compensated solve
    #[arg(long)]
    pub iters: Option<usize>,
    /// CG iterations of the CG-SENSE initialization
    #[arg(long)]
    pub init_iters: Option<usize>,
}

impl ReconArgs {
    fn apply(&self, mut cfg: ReconConfig) -> ReconConfig {
        if let Some(k) = self.k_half {
            cfg.k_half = k;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(i) = self.iters {
            cfg.cg_iters = i;
        }
        if let Some(i) = self.init_iters {
            cfg.init_iters = i;
        }
        cfg
    }
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// k-space stack [N, S, X, Y]; unsampled lines are discarded
    #[arg(long)]
    pub kspace: PathBuf,
    #[arg(long)]
    pub coils: PathBuf,
    /// sampling mask [N, Y]
    #[arg(long)]
    pub mask: PathBuf,
}

struct Problem {
    y: KSpaceStack,
    coils: CoilMaps,
    mask: MaskStack,
}

impl ProblemArgs {
    fn load(&self) -> Result<Problem> {
        let mask = MaskStack::from_tensor(&load_tensor(&self.mask)?)?;
        let y = KSpaceStack::new(load_tensor(&self.kspace)?)?.masked(&mask)?;
        let coils = CoilMaps::new(load_tensor(&self.coils)?)?;
        Ok(Problem { y, coils, mask })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlowSource {
    /// ground truth with the configured perturbation
    Perturbed,
    Gt,
    Zero,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the phantom and write sequence, flows, coil maps and full k-space
    Simulate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a variable-density Cartesian mask [N, Y]
    Mask {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        accel: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CG-SENSE initialization followed by motion-compensated reconstruction
    Recon {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        recon: ReconArgs,
        /// window flows [N, K, 2, X, Y]
        #[arg(long, conflicts_with = "pairwise_flows")]
        flows: Option<PathBuf>,
        /// all-pairs flows [N, N, 2, X, Y], windowed to --k-half
        #[arg(long)]
        pairwise_flows: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// also write the CG-SENSE initialization
        #[arg(long)]
        init_out: Option<PathBuf>,
    },
    /// Estimate window flows by minimizing the warping loss
    Motion {
        #[command(flatten)]
        cfg: ConfigArg,
        /// image sequence [N, X, Y], usually the CG-SENSE initialization
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        k_half: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine flows by descent on the reconstruction loss
    Refine {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        recon: ReconArgs,
        /// supervision target [N, X, Y]
        #[arg(long)]
        reference: PathBuf,
        /// starting flows; zeros when absent
        #[arg(long)]
        init_flows: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// key=value file with the accepted-loss trajectory
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// PSNR / SSIM table of one or more reconstructions
    Metrics {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        reference: PathBuf,
        /// NAME=PATH, repeatable
        #[arg(long = "recon", required = true)]
        recons: Vec<String>,
        /// x0,y0,width,height (offset added); defaults to the phantom ROI
        #[arg(long, conflicts_with = "full_frame")]
        roi: Option<String>,
        #[arg(long)]
        full_frame: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep the neighbor count on the configured phantom
    AblateK {
        #[command(flatten)]
        cfg: ConfigArg,
        /// comma-separated k-half values
        #[arg(long)]
        list: String,
        #[arg(long, value_enum, default_value = "perturbed")]
        flows: FlowSource,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep the regularization weight on the configured phantom
    AblateLambda {
        #[command(flatten)]
        cfg: ConfigArg,
        /// comma-separated lambda values
        #[arg(long)]
        list: String,
        #[arg(long)]
        k_half: Option<usize>,
        #[arg(long, value_enum, default_value = "perturbed")]
        flows: FlowSource,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn write_tensor(path: &Path, t: &ComplexTensor, what: &str) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    save_tensor(path, t)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let out: Result<Vec<T>> = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid {what} '{v}'"))))
        .collect();
    let out = out?;
    if out.is_empty() {
        return Err(Error::Config(format!("empty {what} list")));
    }
    Ok(out)
}

pub fn format_psnr(db: f64) -> String {
    if db >= PERFECT_DISPLAY_DB {
        "perfect".into()
    } else {
        format!("{db:.2}")
    }
}

fn report_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn all_monotone(histories: &[Vec<f64>]) -> bool {
    histories.iter().all(|h| is_non_increasing(h, 0.0))
}

fn max_final_residual(histories: &[Vec<f64>]) -> f64 {
    histories.iter().filter_map(|h| h.last()).fold(0.0, |a, &b| a.max(b))
}

/// Run one parsed command and return its summary line.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { cfg, out_dir } => simulate(&cfg.load()?, &out_dir),
        Command::Mask {
            cfg,
            accel,
            seed,
            out,
        } => {
            let mut c = cfg.load()?;
            if let Some(a) = accel {
                c.accel = a;
            }
            if let Some(s) = seed {
                c.mask_seed = Seed(s);
            }
            let spec = c.mask_spec();
            let mask = generate_mask(&spec)?;
            write_tensor(&out, &mask.to_tensor(), "mask")?;
            Ok(format!(
                "mask: wrote {} ({} frames x {} lines, {} per frame, effective R {:.2}, union {}/{})",
                out.display(),
                mask.n_frames(),
                mask.n_pe(),
                mask.sampled_count(0),
                effective_accel(&mask),
                mask.union_count(),
                mask.n_pe()
            ))
        }
        Command::Recon {
            cfg,
            problem,
            recon,
            flows,
            pairwise_flows,
            out,
            init_out,
        } => {
            let c = recon.apply(cfg.load()?.recon);
            let p = problem.load()?;
            let (_, nx, ny) = p.coils.shape();
            let n = p.y.n_frames();
            let flows = match (flows, pairwise_flows) {
                (Some(f), _) => FlowSet::from_tensor(&load_tensor(&f)?)?,
                (None, Some(f)) => window_from_pairwise(&FlowSet::from_tensor(&load_tensor(&f)?)?, c.k_half)?,
                (None, None) => FlowSet::zeros(n, c.window_len(), nx, ny),
            };
            let x_u = cgsense_init(&p.y, &p.coils, &p.mask, c.init_iters, c.cg_tol)?.sequence;
            let x_u_ref = (c.lambda > 0.0).then_some(&x_u);
            let res = mcmr_reconstruct(&p.y, &flows, &p.coils, &p.mask, &c, x_u_ref)?;
            if let Some(path) = init_out {
                write_tensor(&path, x_u.tensor(), "initialization")?;
            }
            write_tensor(&out, res.sequence.tensor(), "reconstruction")?;
            Ok(format!(
                "recon: wrote {} ({n} frames, k_half {}, lambda {}, {} iters, max final residual {:.3e}, monotone {})",
                out.display(),
                c.k_half,
                c.lambda,
                c.cg_iters,
                max_final_residual(&res.residuals),
                all_monotone(&res.residuals)
            ))
        }
        Command::Motion {
            cfg,
            images,
            k_half,
            out,
        } => {
            let c = cfg.load()?;
            let k_half = k_half.unwrap_or(c.recon.k_half);
            let x = CineSequence::new(load_tensor(&images)?)?;
            let flows = estimate_flow_warploss(&x, k_half, &c.opt)?;
            let l_w = crate::motion::warping_loss(&x, &flows)?;
            write_tensor(&out, &flows.to_tensor(), "flows")?;
            Ok(format!(
                "motion: wrote {} ({} frames, K {}, median |u| {:.3} px, warping loss {:.4e})",
                out.display(),
                flows.n_frames(),
                flows.k(),
                flows.median_magnitude(),
                l_w
            ))
        }
        Command::Refine {
            cfg,
            problem,
            recon,
            reference,
            init_flows,
            max_iters,
            step_size,
            out,
            report,
        } => {
            let c = cfg.load()?;
            let rc = recon.apply(c.recon.clone());
            let mut opt = c.opt.clone();
            if let Some(m) = max_iters {
                opt.max_outer_iters = m;
            }
            if let Some(s) = step_size {
                opt.step_size = s;
            }
            let p = problem.load()?;
            let (_, nx, ny) = p.coils.shape();
            let x_ref = CineSequence::new(load_tensor(&reference)?)?;
            let init = match init_flows {
                Some(f) => FlowSet::from_tensor(&load_tensor(&f)?)?,
                None => FlowSet::zeros(p.y.n_frames(), rc.window_len(), nx, ny),
            };
            let x_u = if rc.lambda > 0.0 {
                Some(cgsense_init(&p.y, &p.coils, &p.mask, rc.init_iters, rc.cg_tol)?.sequence)
            } else {
                None
            };
            let res = refine_flow_recon_driven(&init, &p.y, &p.coils, &p.mask, &rc, &opt, x_u.as_ref(), &x_ref)?;
            write_tensor(&out, &res.flows.to_tensor(), "refined flows")?;
            let first = res.trajectory[0];
            let last = *res.trajectory.last().unwrap();
            if let Some(path) = report {
                let mut text = String::new();
                writeln!(text, "status = {:?}", res.status).unwrap();
                writeln!(text, "accepted_steps = {}", res.trajectory.len() - 1).unwrap();
                writeln!(text, "gradient_evals = {}", res.gradient_evals).unwrap();
                writeln!(text, "loss_evals = {}", res.loss_evals).unwrap();
                for (i, l) in res.trajectory.iter().enumerate() {
                    writeln!(text, "loss.{i} = {l:.9e}").unwrap();
                }
                if let Some(e) = res.fd_max_rel_err {
                    writeln!(text, "fd_max_rel_err = {e:.3e}").unwrap();
                }
                write_text(&path, &text)?;
            }
            let warn = if res.status == RefineStatus::StepTooSmall {
                " (warning: no descent at minimal step)"
            } else {
                ""
            };
            Ok(format!(
                "refine: wrote {} (loss {first:.4e} -> {last:.4e}, {} accepted steps, {:?}){warn}",
                out.display(),
                res.trajectory.len() - 1,
                res.status
            ))
        }
        Command::Metrics {
            cfg,
            reference,
            recons,
            roi,
            full_frame,
            report,
        } => {
            let c = cfg.load()?;
            let x_ref = CineSequence::new(load_tensor(&reference)?)?;
            let roi = if full_frame {
                None
            } else if let Some(r) = roi {
                let v: Vec<usize> = parse_list(&r, "ROI value")?;
                if v.len() != 4 {
                    return Err(Error::Config("ROI needs x0,y0,width,height".into()));
                }
                Some(Roi::new(v[0], v[1], v[2], v[3]))
            } else {
                Some(Roi::from_phantom(&c.phantom))
            };
            let es_ed = es_ed_from_spec(&c.phantom);
            let mut table = String::new();
            let mut text = String::new();
            writeln!(table, "{:<16} {:>9} {:>7} {:>9} {:>9}", "name", "PSNR", "SSIM", "ES PSNR", "ED PSNR").unwrap();
            for item in &recons {
                let (name, path) = item
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--recon expects NAME=PATH, got '{item}'")))?;
                let x = CineSequence::new(load_tensor(path)?)?;
                if !x.tensor().is_finite() {
                    return Err(Error::NonFinite(format!("reconstruction '{name}'")));
                }
                let p = sequence_psnr(&x_ref, &x, roi.as_ref())?;
                let frames = score_frames(&x_ref, &x, roi.as_ref())?;
                let ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / frames.len() as f64;
                let (es, ed) = if es_ed.degenerate || es_ed.ed >= frames.len() || es_ed.es >= frames.len() {
                    (f64::NAN, f64::NAN)
                } else {
                    (frames[es_ed.es].psnr, frames[es_ed.ed].psnr)
                };
                writeln!(
                    table,
                    "{:<16} {:>9} {:>7.4} {:>9} {:>9}",
                    name,
                    format_psnr(p),
                    ssim,
                    format_psnr(es),
                    format_psnr(ed)
                )
                .unwrap();
                writeln!(text, "{name}.psnr = {}", report_value(p)).unwrap();
                writeln!(text, "{name}.ssim = {}", report_value(ssim)).unwrap();
                if !es.is_nan() {
                    writeln!(text, "{name}.es_psnr = {}", report_value(es)).unwrap();
                    writeln!(text, "{name}.ed_psnr = {}", report_value(ed)).unwrap();
                }
                for (i, f) in frames.iter().enumerate() {
                    writeln!(text, "{name}.frame.{i}.psnr = {}", report_value(f.psnr)).unwrap();
                }
            }
            print!("{table}");
            if let Some(path) = &report {
                write_text(path, &text)?;
            }
            Ok(format!(
                "metrics: {} reconstruction(s) scored{}",
                recons.len(),
                report.map(|p| format!(", report {}", p.display())).unwrap_or_default()
            ))
        }
        Command::AblateK {
            cfg,
            list,
            flows,
            report,
        } => {
            let c = cfg.load()?;
            let ks: Vec<usize> = parse_list(&list, "k-half")?;
            let rows = ablate_k(&c, &ks, flows)?;
            finish_sweep("k_half", &rows, report.as_deref())
        }
        Command::AblateLambda {
            cfg,
            list,
            k_half,
            flows,
            report,
        } => {
            let mut c = cfg.load()?;
            if let Some(k) = k_half {
                c.recon.k_half = k;
            }
            let ls: Vec<f64> = parse_list(&list, "lambda")?;
            let rows = ablate_lambda(&c, &ls, flows)?;
            finish_sweep("lambda", &rows, report.as_deref())
        }
    }
}

/// Write the four phantom files into `out_dir`.
pub fn simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<String> {
    let gt = generate_phantom(&cfg.phantom)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_tensor(&out_dir.join("sequence.mcmr"), gt.sequence.tensor(), "sequence")?;
    write_tensor(&out_dir.join("flows_gt.mcmr"), &gt.flows_gt.to_tensor(), "flows")?;
    write_tensor(&out_dir.join("coils.mcmr"), gt.coil_maps.tensor(), "coil maps")?;
    write_tensor(&out_dir.join("kspace_full.mcmr"), gt.kspace.tensor(), "k-space")?;
    let s = &cfg.phantom;
    Ok(format!(
        "simulate: wrote 4 files to {} ({} frames, {}x{}, {} coils, noise {})",
        out_dir.display(),
        s.n_frames,
        s.nx,
        s.ny,
        s.n_coils,
        s.noise_sigma
    ))
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub psnr: f64,
    pub ssim: f64,
    pub monotone: bool,
    pub final_residual: f64,
}

fn sweep_flows(sc: &Scenario, c: &ExperimentConfig, k_half: usize, src: FlowSource) -> Result<FlowSet> {
    let (nx, ny) = sc.gt.sequence.grid();
    match src {
        FlowSource::Perturbed => perturbed_window_flows(&sc.gt, k_half, &c.perturb),
        FlowSource::Gt => sc.gt.window_flows(k_half),
        FlowSource::Zero => Ok(FlowSet::zeros(c.phantom.n_frames, 2 * k_half + 1, nx, ny)),
    }
}

fn sweep_row(sc: &Scenario, flows: &FlowSet, rc: &ReconConfig, label: String) -> Result<SweepRow> {
    let out = sc.reconstruct(flows, rc)?;
    let frames = sc.frame_scores(&out.sequence)?;
    Ok(SweepRow {
        label,
        psnr: sc.psnr(&out.sequence)?,
        ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / frames.len() as f64,
        monotone: all_monotone(&out.residuals),
        final_residual: max_final_residual(&out.residuals),
    })
}

pub fn ablate_k(c: &ExperimentConfig, ks: &[usize], src: FlowSource) -> Result<Vec<SweepRow>> {
    let sc = Scenario::from_parts(generate_phantom(&c.phantom)?, generate_mask(&c.mask_spec())?, c.recon.init_iters)?;
    ks.iter()
        .map(|&k| {
            let rc = ReconConfig {
                k_half: k,
                ..c.recon.clone()
            };
            sweep_row(&sc, &sweep_flows(&sc, c, k, src)?, &rc, k.to_string())
        })
        .collect()
}

pub fn ablate_lambda(c: &ExperimentConfig, ls: &[f64], src: FlowSource) -> Result<Vec<SweepRow>> {
    let sc = Scenario::from_parts(generate_phantom(&c.phantom)?, generate_mask(&c.mask_spec())?, c.recon.init_iters)?;
    let flows = sweep_flows(&sc, c, c.recon.k_half, src)?;
    ls.iter()
        .map(|&l| {
            let rc = ReconConfig {
                lambda: l,
                ..c.recon.clone()
            };
            sweep_row(&sc, &flows, &rc, l.to_string())
        })
        .collect()
}

fn finish_sweep(param: &str, rows: &[SweepRow], report: Option<&Path>) -> Result<String> {
    let mut table = String::new();
    let mut text = String::new();
    writeln!(table, "{param:<10} {:>9} {:>7} {:>9} {:>12}", "PSNR", "SSIM", "monotone", "residual").unwrap();
    for r in rows {
        writeln!(
            table,
            "{:<10} {:>9} {:>7.4} {:>9} {:>12.3e}",
            r.label,
            format_psnr(r.psnr),
            r.ssim,
            r.monotone,
            r.final_residual
        )
        .unwrap();
        writeln!(text, "{param}.{}.psnr = {}", r.label, report_value(r.psnr)).unwrap();
        writeln!(text, "{param}.{}.ssim = {}", r.label, report_value(r.ssim)).unwrap();
        writeln!(text, "{param}.{}.monotone = {}", r.label, r.monotone).unwrap();
    }
    print!("{table}");
    if let Some(path) = report {
        write_text(path, &text)?;
    }
    let best = rows
        .iter()
        .max_by(|a, b| a.psnr.total_cmp(&b.psnr))
        .ok_or_else(|| Error::Config("empty sweep".into()))?;
    Ok(format!(
        "ablate: {} settings of {param}, best {} at {} dB",
        rows.len(),
        best.label,
        format_psnr(best.psnr)
    ))
}
