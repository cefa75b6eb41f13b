use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pipnet::data::{nonface_images, synth_generate, write_dataset, GrayImage, Template};
use pipnet::evaluation::{black_train, evaluate, nonface_test, write_overlays};
use pipnet::networks::HeadKind;
use pipnet::stc::{adapt, generate_pseudo_labels};
use pipnet::tensor::SeededRng;
use pipnet::tooling::{
    compare_adaptation, count_flops, init_model, load_checkpoint, neighbor_sweep, save_checkpoint, stride_sweep,
    time_inference, train_model, Benchmark, RunConfig, RunManifest, SweepKind, ToolError,
};
use pipnet::training::ModelSpec;

#[derive(Parser, Debug)]
#[command(name = "pipnet", version, about = "Facial landmark detection with pixel-in-pixel heads")]
struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepArg {
    Stride,
    Neighbors,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset (images, points files, manifest).
    Synth {
        #[arg(long, value_enum, default_value = "source")]
        domain: Domain,
    },
    /// Train the configured model on the source training split.
    Train,
    /// Evaluate a checkpoint on both test splits.
    Eval,
    /// Self-training with curriculum from source to target domain.
    Stc {
        /// Also run the plain self-training arm and the unadapted baseline.
        #[arg(long)]
        compare: bool,
    },
    /// FLOP counts and batch-1 latency per head kind.
    Bench,
    /// Black-image training and non-face probing.
    PriorExp,
    /// Stride or neighbor-count grid.
    Sweep {
        #[arg(long, value_enum)]
        kind: Option<SweepArg>,
    },
}

type Result<T> = std::result::Result<T, ToolError>;

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ToolError::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::Sweep { kind: Some(k) } = cli.command {
        cfg.sweep.kind = match k {
            SweepArg::Stride => SweepKind::Stride,
            SweepArg::Neighbors => SweepKind::Neighbors,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), body)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.text(name, &serde_json::to_string_pretty(value)?)
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| out.join("model.json"))
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let mut out = Out::new(&cli.out)?;
    let name = match &cli.command {
        Command::Synth { domain } => {
            let synth = match domain {
                Domain::Source => &cfg.data.source,
                Domain::Target => &cfg.data.target,
            };
            let mut rng = SeededRng::new(cfg.seed);
            let samples = synth_generate(synth, &Template::builtin(), cfg.synth_count, &mut rng)?;
            write_dataset(&cli.out, &samples)?;
            out.files.extend(["manifest.json".to_string(), "images/".into(), "points/".into()]);
            "synth"
        }
        Command::Train => {
            let bench = Benchmark::build(cfg)?;
            let (model, report) = train_model(cfg, &cfg.model, &bench.train)?;
            let path = out.path("model.json");
            save_checkpoint(&model, &path)?;
            out.files.push("model.bin".into());
            out.text("train.csv", &report.to_csv())?;
            out.text("train_timing.csv", &report.timing_csv())?;
            "train"
        }
        Command::Eval => {
            let ckpt = checkpoint_path(cfg, &cli.out);
            if !ckpt.exists() {
                return Err(ToolError::Config(format!("no checkpoint at {}", ckpt.display())));
            }
            let model = load_checkpoint(&ckpt)?;
            let bench = Benchmark::build(cfg)?;
            let source = evaluate(&model, &bench.test, cfg.norm)?;
            let target = evaluate(&model, &bench.target_test, cfg.norm)?;
            out.text("per_landmark.csv", &source.per_landmark_csv())?;
            out.json("eval.json", &serde_json::json!({ "source": source, "target": target }))?;
            let shown: Vec<&GrayImage> = bench.test.iter().take(8).map(|s| &s.image).collect();
            let preds = model.predict(&shown)?;
            let truth: Vec<_> = bench.test.iter().take(8).map(|s| s.landmarks.clone()).collect();
            write_overlays(&cli.out.join("overlays"), &shown, &preds, Some(&truth), 4)?;
            out.files.push("overlays/".into());
            "eval"
        }
        Command::Stc { compare } => {
            let bench = Benchmark::build(cfg)?;
            if *compare {
                let r = compare_adaptation(cfg, &bench)?;
                for (arm, rep) in &r.reports {
                    out.text(&format!("{arm}.csv"), &rep.to_csv())?;
                }
                out.json(
                    "adaptation.json",
                    &serde_json::json!({ "no_adaptation": r.no_adaptation, "self_training": r.self_training, "stc": r.stc }),
                )?;
            } else {
                let spec = ModelSpec { aux: true, ..cfg.model.clone() };
                let (base, mut report) = train_model(cfg, &spec, &bench.train)?;
                let res = adapt(base, &bench.train, &bench.unlabeled, &cfg.curriculum, &cfg.schedule(), &cfg.augment(), None)?;
                report.extend(res.report);
                out.text("train.csv", &report.to_csv())?;
                out.text("train_timing.csv", &report.timing_csv())?;
                out.json("rounds.json", &res.rounds)?;
                let pseudo = generate_pseudo_labels(&res.model, &bench.unlabeled, res.rounds.len())?;
                pseudo.write_pts(&cli.out.join("pseudo"))?;
                out.files.push("pseudo/".into());
                out.json("eval.json", &evaluate(&res.model, &bench.target_test, cfg.norm)?)?;
                save_checkpoint(&res.model, &out.path("model.json"))?;
                out.files.push("model.bin".into());
            }
            "stc"
        }
        Command::Bench => {
            let bench = Benchmark::build(&RunConfig { data: pipnet::tooling::DataConfig { train: 4, ..cfg.data.clone() }, ..cfg.clone() })?;
            let mut costs = Vec::new();
            let mut timings = Vec::new();
            for &kind in &cfg.bench.kinds {
                let model = init_model(cfg, &ModelSpec { kind, ..cfg.model.clone() }, &bench.train)?;
                costs.push(serde_json::json!({ "kind": kind, "flops": count_flops(&model.net), "params": model.net.num_params() }));
                timings.push(serde_json::json!({ "kind": kind, "timing": time_inference(&model, cfg.bench.warmup, cfg.bench.runs)? }));
            }
            out.json("flops.json", &costs)?;
            out.json("timing.json", &timings)?;
            "bench"
        }
        Command::PriorExp => {
            let bench = Benchmark::build(cfg)?;
            let mut results = Vec::new();
            for kind in HeadKind::ALL {
                let spec = ModelSpec { kind, ..cfg.model.clone() };
                let r = black_train(&spec, &bench.train, &cfg.prior_schedule())?;
                let (w, h) = (spec.backbone.input_w, spec.backbone.input_h);
                let black = GrayImage::zeros(w, h);
                write_overlays(
                    &cli.out.join("black").join(kind.name()),
                    &[&black],
                    std::slice::from_ref(&r.prediction),
                    Some(std::slice::from_ref(&r.label_mean)),
                    4,
                )?;
                results.push(serde_json::json!({
                    "kind": kind, "identical": r.identical, "nme_to_mean": r.nme_to_mean,
                    "prediction": r.prediction, "label_mean": r.label_mean,
                }));
            }
            out.files.push("black/".into());
            out.json("black_train.json", &results)?;
            let ckpt = checkpoint_path(cfg, &cli.out);
            let model = if ckpt.exists() { load_checkpoint(&ckpt)? } else { train_model(cfg, &cfg.model, &bench.train)?.0 };
            let images = nonface_images(cfg.nonface_count, cfg.model.backbone.input_h, &mut SeededRng::new(cfg.seed).derive(0x0f));
            nonface_test(&model, &images, &cli.out.join("nonface"))?;
            out.files.push("nonface/".into());
            "prior-exp"
        }
        Command::Sweep { .. } => {
            let bench = Benchmark::build(cfg)?;
            let points = match cfg.sweep.kind {
                SweepKind::Stride => stride_sweep(cfg, &bench, &cfg.sweep.strides)?,
                SweepKind::Neighbors => neighbor_sweep(cfg, &bench, &cfg.sweep.neighbors)?,
            };
            let mut csv = String::from("stride,neighbors,nme,grid_accuracy\n");
            for p in &points {
                let acc = p.grid_accuracy.map(|a| a.to_string()).unwrap_or_default();
                csv.push_str(&format!("{},{},{},{acc}\n", p.stride, p.neighbors, p.nme));
            }
            out.text("sweep.csv", &csv)?;
            out.json("sweep.json", &points)?;
            "sweep"
        }
    };
    RunManifest::new(name, cfg, out.files).write(&cli.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
