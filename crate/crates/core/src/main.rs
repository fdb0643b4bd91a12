use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use roa_core::checks::{run_suite, GRADCHECK_TOL};
use roa_core::config::read_model_config;
use roa_core::io::{write_curve_csv, write_pgm, write_tensor};
use roa_core::labels::{rasterize_scene, LabelConfig, RegionType};
use roa_core::loss::{roa_loss, Reduction};
use roa_core::network::{ModelConfig, RoaModel, ScaleMode};
use roa_core::ops::norm::NormMode;
use roa_core::optim::Adam;
use roa_core::scene::{gen_synthetic, parse_scene_file, write_scene_file, Scene};
use roa_core::train::{build_samples, Schedule, Trainer, CONFIG_FILE};

/// Region-oriented attention toolkit: labels, network, gradient checks and
/// toy training.
#[derive(Parser)]
#[command(name = "roa-bev", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic scene file.
    GenSynthetic {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        boxes: usize,
        /// Number of scenes (seeds seed, seed+1, ...).
        #[arg(long, default_value_t = 1)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize attention labels for every camera of every scene.
    GenLabels {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        stride: usize,
        #[arg(long, default_value = "overlap")]
        region_type: RegionType,
    },
    /// Predict attention maps for a scene and report l_roa.
    Forward {
        #[arg(long)]
        scene: PathBuf,
        /// Checkpoint directory; without one a fresh model is built from the
        /// model flags.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run the double-precision finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Entries probed per parameter tensor in the end-to-end case.
        #[arg(long, default_value_t = 2)]
        samples: usize,
    },
    /// Train on a scene file (or one synthetic scene) and write a
    /// checkpoint plus the loss curve.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train once per kernel size in {3,5,7,9,11,13} and compare.
    AblateKernel {
        #[command(flatten)]
        run: RunArgs,
        /// Comparison CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 7)]
    kernel_size: usize,
    #[arg(long, default_value = "multi_scale")]
    scale_mode: ScaleMode,
    #[arg(long, default_value = "overlap")]
    region_type: RegionType,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Network input as HEIGHTxWIDTH, multiples of 32. Camera intrinsics
    /// are rescaled to match.
    #[arg(long, default_value = "64x192", value_parser = parse_size)]
    input_size: (usize, usize),
    #[arg(long, default_value_t = 8)]
    base_channels: usize,
    #[arg(long, default_value_t = 8)]
    neck_channels: usize,
    #[arg(long, default_value_t = 4)]
    se_reduction: usize,
    #[arg(long)]
    shared_lkb: bool,
    #[arg(long)]
    residual_attention: bool,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            input_height: self.input_size.0,
            input_width: self.input_size.1,
            base_channels: self.base_channels,
            neck_channels: self.neck_channels,
            kernel_size: self.kernel_size,
            se_reduction: self.se_reduction,
            scale_mode: self.scale_mode,
            region_type: self.region_type,
            shared_lkb: self.shared_lkb,
            residual_attention: self.residual_attention,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scene file; defaults to one synthetic scene drawn from --seed.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Boxes in the synthetic scene.
    #[arg(long, default_value_t = 12)]
    boxes: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Adam learning rate. Higher rates tend to kill the head's final relu
    /// at this model size.
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    /// Decay the learning rate linearly to 0 over the run.
    #[arg(long)]
    decay: bool,
    #[command(flatten)]
    model: ModelArgs,
}

impl RunArgs {
    fn scenes(&self) -> anyhow::Result<Vec<Scene>> {
        match &self.scene {
            Some(p) => Ok(parse_scene_file(p)?),
            None => Ok(vec![gen_synthetic(self.model.seed, self.boxes)]),
        }
    }

    fn schedule(&self) -> Schedule {
        if self.decay {
            Schedule::LinearDecay { horizon: self.steps as u64 }
        } else {
            Schedule::Constant
        }
    }

    fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            ..Default::default()
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HEIGHTxWIDTH")?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    Ok((h, w))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen_labels(scene: &Path, out: &Path, stride: usize, region_type: RegionType) -> anyhow::Result<()> {
    let scenes = parse_scene_file(scene)?;
    create_dir(out)?;
    let cfg = LabelConfig {
        stride,
        region_type,
        ..Default::default()
    };
    for s in &scenes {
        let maps = rasterize_scene(&s.boxes3d(), &s.cameras, &cfg)?;
        for m in &maps {
            let stem = format!("{}_cam{}", s.id, m.camera_index);
            write_tensor(&out.join(format!("{stem}.roat")), &m.to_tensor())?;
            write_pgm(&out.join(format!("{stem}.pgm")), &m.values, m.height, m.width)?;
        }
        println!("{}: {} boxes, label sum {}", s.id, s.boxes.len(), maps.iter().map(|m| m.sum()).sum::<f64>());
    }
    Ok(())
}

fn forward(scene: &Path, checkpoint: Option<&Path>, out: &Path, model: &ModelArgs) -> anyhow::Result<()> {
    let scenes = parse_scene_file(scene)?;
    let cfg = match checkpoint {
        Some(dir) => read_model_config(&dir.join(CONFIG_FILE))?,
        None => model.config(),
    };
    let (net, mut store) = RoaModel::new(&cfg)?;
    let norm = match checkpoint {
        Some(dir) => {
            store.load(dir)?;
            NormMode::Eval
        }
        // fresh running statistics carry no information yet
        None => NormMode::Train,
    };
    create_dir(out)?;
    let samples = build_samples(&scenes, &cfg)?;
    for (s, sample) in scenes.iter().zip(&samples) {
        let res = net.full_forward(&store, &sample.images, Some(&sample.labels), norm)?;
        let pred = &res.roa_pred;
        let [n, _, h, w] = pred.shape()[..] else { bail!("prediction is not NCHW") };
        for cam in 0..n {
            let values = &pred.data()[cam * h * w..(cam + 1) * h * w];
            let stem = format!("{}_cam{cam}_pred", s.id);
            let t = roa_core::Tensor::new(&[1, 1, h, w], values.to_vec())?;
            write_tensor(&out.join(format!("{stem}.roat")), &t)?;
            write_pgm(&out.join(format!("{stem}.pgm")), values, h, w)?;
        }
        let l = roa_loss(pred, &sample.labels, Reduction::Mean)?;
        println!("{}: l_roa {l:.6}", s.id);
    }
    Ok(())
}

fn gradcheck(seed: u64, samples: usize) -> anyhow::Result<bool> {
    let start = Instant::now();
    let results = run_suite(seed, samples)?;
    let mut ok = true;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        ok &= r.passed();
        println!(
            "{verdict:4} {:32} max rel error {:.3e} ({} entries, {} reprobed; worst input {} entry {}: analytic {:.6e}, numeric {:.6e})",
            r.name,
            r.report.max_rel_error,
            r.report.checked,
            r.report.reprobed,
            r.report.input,
            r.report.entry,
            r.report.analytic,
            r.report.numeric
        );
    }
    println!(
        "gradcheck: {} (tolerance {GRADCHECK_TOL:e}, {:.1}s)",
        if ok { "pass" } else { "fail" },
        start.elapsed().as_secs_f64()
    );
    Ok(ok)
}

fn train(run: &RunArgs, out: &Path, resume: Option<&Path>) -> anyhow::Result<()> {
    let scenes = run.scenes()?;
    let mut trainer = match resume {
        Some(dir) => Trainer::resume(dir, &scenes, run.adam())?,
        None => {
            let mut t = Trainer::new(&run.model.config(), &scenes, run.adam())?;
            t.schedule = run.schedule();
            t
        }
    };
    let start = Instant::now();
    let curve = trainer.run(run.steps)?;
    create_dir(out)?;
    trainer.save(&out.join("checkpoint"))?;
    write_curve_csv(&out.join("loss.csv"), &curve)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!(
            "steps {}..={}: l_roa {:.6} -> {:.6} ({:.1}s)",
            first.step,
            last.step,
            first.l_roa,
            last.l_roa,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

const ABLATION_KERNELS: [usize; 6] = [3, 5, 7, 9, 11, 13];

fn ablate_kernel(run: &RunArgs, out: &Path) -> anyhow::Result<()> {
    let scenes = run.scenes()?;
    let mut csv = String::from("kernel_size,scale_mode,steps,seed,initial_l_roa,final_l_roa,param_count,lkb_param_count\n");
    for k in ABLATION_KERNELS {
        let cfg = ModelConfig {
            kernel_size: k,
            ..run.model.config()
        };
        let mut trainer = Trainer::new(&cfg, &scenes, run.adam())?;
        trainer.schedule = run.schedule();
        let curve = trainer.run(run.steps)?;
        let initial = curve.first().map_or(f64::NAN, |p| p.l_roa);
        let last = curve.last().map_or(f64::NAN, |p| p.l_roa);
        let lkb: usize = trainer.model.roa.lkbs.iter().map(|l| l.param_count(&trainer.store)).sum();
        let line = format!(
            "{k},{},{},{},{initial},{last},{},{lkb}\n",
            cfg.scale_mode,
            run.steps,
            cfg.seed,
            trainer.store.scalar_count()
        );
        print!("{line}");
        csv.push_str(&line);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenSynthetic { seed, boxes, scenes, out } => {
            let list: Vec<Scene> = (0..*scenes as u64).map(|i| gen_synthetic(seed + i, *boxes)).collect();
            write_scene_file(out, &list).map_err(Into::into)
        }
        Command::GenLabels {
            scene,
            out,
            stride,
            region_type,
        } => gen_labels(scene, out, *stride, *region_type),
        Command::Forward {
            scene,
            checkpoint,
            out,
            model,
        } => forward(scene, checkpoint.as_deref(), out, model),
        Command::Gradcheck { seed, samples } => match gradcheck(*seed, *samples) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Train { run, out, resume } => train(run, out, resume.as_deref()),
        Command::AblateKernel { run, out } => ablate_kernel(run, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
