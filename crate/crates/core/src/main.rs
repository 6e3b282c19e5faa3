use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vimu::datasets::{synth_generate, DatabaseProfile, Experiment, SynthConfig};
use vimu::error::{Error, Result};
use vimu::fusionclf::Classifier;
use vimu::genmodel::Generator;
use vimu::harness::{
    emit_report, evaluate_arm, predictions_csv, preprocess, report_csv, run_experiment, svg_bars, train_arm, train_generator, Arm,
    ArmModels, ExperimentConfig, MetricsReport, ReportFormat,
};

#[derive(Parser)]
#[command(name = "vimu", version, about = "Virtual IMU synthesis from sEMG and multimodal gesture recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Window the dataset and print a summary.
    Preprocess(ExpArgs),
    /// Train the generator on the generator cohort.
    TrainGan(ExpArgs),
    /// Write generated IMU windows of the recognition subjects as CSV.
    GenerateImu(GenerateArgs),
    /// Train per-subject classifiers for the selected arms.
    TrainClf(ClfArgs),
    /// Score saved classifiers on the test trials.
    Evaluate(ClfArgs),
    /// Full pipeline: generator, classifiers, evaluation and report.
    Run(ExpArgs),
    /// Render saved reports.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults used when no configuration file is given.
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides VIMU_SEED and the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gan_epochs: Option<usize>,
    #[arg(long)]
    gan_max_pairs: Option<usize>,
    #[arg(long)]
    clf_epochs: Option<usize>,
    /// Comma-separated arms: unimodal, virtual_multimodal, real_multimodal.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,
    #[arg(long)]
    no_pretrain: bool,
}

#[derive(Args)]
struct ClfArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Generator checkpoint; defaults to generator.ckpt in the output directory.
    #[arg(long)]
    generator: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Destination CSV; defaults to virtual_imu.csv in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Destination directory.
    #[arg(long)]
    out: PathBuf,
    /// Synthetic configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    gestures: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files.
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
    formats: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("VIMU_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("VIMU_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// File (or preset), then VIMU_SEED, then flags.
fn load_config(a: &ExpArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => match a.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Full => {
                let profile = DatabaseProfile::by_name(a.profile.as_deref().unwrap_or("femg_vpf"))?;
                ExperimentConfig::full(&profile)
            }
        },
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(p) = &a.profile {
        cfg.profile = p.clone();
    }
    if let Some(e) = &a.experiment {
        cfg.experiment = match e.as_str() {
            "exp1" => Experiment::Exp1,
            "exp2" => Experiment::Exp2,
            _ => return Err(Error::Config(format!("unknown experiment {e:?}"))),
        };
    }
    if let Some(o) = &a.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.gan_epochs {
        cfg.gan.epochs = e;
    }
    if let Some(m) = a.gan_max_pairs {
        cfg.gan_max_pairs = Some(m);
    }
    if let Some(e) = a.clf_epochs {
        cfg.clf.epochs = e;
    }
    if let Some(arms) = &a.arms {
        cfg.arms = arms.iter().map(|s| Arm::parse(s)).collect::<Result<_>>()?;
    }
    if a.no_pretrain {
        cfg.clf.pretrain = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_generator(cfg: &ExperimentConfig, path: Option<&PathBuf>) -> Result<Generator<f32>> {
    let path = path.cloned().unwrap_or_else(|| cfg.output_dir.join("generator.ckpt"));
    Ok(Generator::load(&path)?.0)
}

fn clf_path(cfg: &ExperimentConfig, arm: Arm, subject: u32) -> PathBuf {
    cfg.output_dir.join(format!("clf_{}_s{subject:03}.ckpt", arm.name()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.subjects {
        cfg.subjects = n;
    }
    if let Some(n) = a.gestures {
        cfg.gestures = n;
    }
    if let Some(n) = a.trials {
        cfg.trials = n;
    }
    let m = synth_generate(&cfg, &a.out)?;
    println!("wrote {} trials to {}", m.files.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => {
            let cfg = load_config(&a)?;
            let pre = preprocess(&cfg)?;
            let windows: usize = pre.groups.iter().map(|g| g.hgr.len()).sum();
            let summary = serde_json::json!({
                "database": pre.profile.name,
                "window_frames": pre.k,
                "groups": pre.groups.len(),
                "windows": windows,
                "split": pre.plan,
                "data_fingerprint": pre.data_fingerprint,
            });
            let text = serde_json::to_string_pretty(&summary)? + "\n";
            write_text(&cfg.output_dir.join("preprocess.json"), &text)?;
            print!("{text}");
            Ok(())
        }
        Command::TrainGan(a) => {
            let cfg = load_config(&a)?;
            let pre = preprocess(&cfg)?;
            let g = train_generator(&pre, &cfg)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
                path: cfg.output_dir.clone(),
                source: e,
            })?;
            g.generator.save(&cfg.output_dir.join("generator.ckpt"), &g.meta)?;
            vimu::diffnet::write_checkpoint(&cfg.output_dir.join("discriminator.ckpt"), g.discriminator.net.params())?;
            write_text(&cfg.output_dir.join("gan_history.json"), &(serde_json::to_string_pretty(&g.history)? + "\n"))?;
            println!("trained generator on {} pairs", g.pairs);
            Ok(())
        }
        Command::GenerateImu(a) => {
            let cfg = load_config(&a.exp)?;
            let gen = load_generator(&cfg, a.generator.as_ref())?;
            let pre = preprocess(&cfg)?;
            let kind = pre.imu_kind.unwrap_or(pre.profile.imu_kind);
            let mut csv = String::from("window_id,frame");
            for c in 0..gen.config.c2 {
                csv.push_str(&format!(",ch{c}"));
            }
            csv.push('\n');
            for g in pre.groups.iter().filter(|g| pre.plan.recognition_subjects.contains(&g.tag.subject)) {
                let virt = gen.generate_virtual(&gen.normalize_input(&g.gan)?, kind)?;
                for (j, w) in virt.iter().enumerate() {
                    for f in 0..w.frames {
                        csv.push_str(&format!("s{:03}_t{:02}_c{:03}_w{j:04},{f}", g.tag.subject, g.tag.trial, g.label));
                        for c in 0..w.channels {
                            csv.push_str(&format!(",{}", w.at(f, c)));
                        }
                        csv.push('\n');
                    }
                }
            }
            write_text(&a.out.unwrap_or_else(|| cfg.output_dir.join("virtual_imu.csv")), &csv)
        }
        Command::TrainClf(a) => {
            let cfg = load_config(&a.exp)?;
            let pre = preprocess(&cfg)?;
            let gen = if cfg.needs_generator() {
                Some(load_generator(&cfg, a.generator.as_ref())?)
            } else {
                None
            };
            for &arm in &cfg.arms {
                let models = train_arm(&pre, &cfg, arm, gen.as_ref())?;
                std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
                    path: cfg.output_dir.clone(),
                    source: e,
                })?;
                for (s, m) in &models.models {
                    m.save(&clf_path(&cfg, arm, *s))?;
                }
                println!("trained {} classifiers for {}", models.models.len(), arm.name());
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let cfg = load_config(&a.exp)?;
            let pre = preprocess(&cfg)?;
            let gen = if cfg.needs_generator() {
                Some(load_generator(&cfg, a.generator.as_ref())?)
            } else {
                None
            };
            let mut arms = Vec::new();
            for &arm in &cfg.arms {
                let models = pre
                    .plan
                    .recognition_subjects
                    .iter()
                    .map(|&s| Ok((s, Classifier::load(&clf_path(&cfg, arm, s))?)))
                    .collect::<Result<Vec<_>>>()?;
                let out = evaluate_arm(
                    &pre,
                    ArmModels {
                        arm,
                        models,
                        pretrain_history: None,
                        histories: Vec::new(),
                    },
                    gen.as_ref(),
                )?;
                write_text(&cfg.output_dir.join(format!("predictions_{}.csv", arm.name())), &predictions_csv(&out.predictions))?;
                arms.push(out.report);
            }
            let report = MetricsReport {
                vimu_report: MetricsReport::VERSION,
                database: pre.profile.name.clone(),
                experiment: cfg.experiment,
                seed: cfg.seed,
                config_fingerprint: cfg.fingerprint(),
                data_fingerprint: pre.data_fingerprint.clone(),
                deltas: MetricsReport::compute_deltas(&arms),
                arms,
                generator: None,
            };
            emit_report(&report, &[ReportFormat::Json, ReportFormat::Csv], &cfg.output_dir)?;
            print!("{}", report_csv(&report));
            Ok(())
        }
        Command::Run(a) => {
            let cfg = load_config(&a)?;
            let out = run_experiment(&cfg)?;
            out.save_artifacts(&cfg.output_dir)?;
            emit_report(&out.report, &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::SvgBars], &cfg.output_dir)?;
            for arm in &out.report.arms {
                println!("{:<20} mean {:.4}  std {:.4}", arm.arm.name(), arm.mean, arm.std);
            }
            Ok(())
        }
        Command::Report(a) => {
            let formats = a.formats.iter().map(|f| ReportFormat::parse(f)).collect::<Result<Vec<_>>>()?;
            let reports = a
                .inputs
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    MetricsReport::from_json(&text)
                })
                .collect::<Result<Vec<_>>>()?;
            if let [single] = reports.as_slice() {
                emit_report(single, &formats, &a.out)?;
                return Ok(());
            }
            for f in formats {
                match f {
                    ReportFormat::Json => {
                        let all: Vec<&MetricsReport> = reports.iter().collect();
                        write_text(&a.out.join("report.json"), &(serde_json::to_string_pretty(&all)? + "\n"))?
                    }
                    ReportFormat::Csv => {
                        let mut csv = String::new();
                        for (i, r) in reports.iter().enumerate() {
                            let body = report_csv(r);
                            csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |(_, rest)| rest) });
                        }
                        write_text(&a.out.join("report.csv"), &csv)?
                    }
                    ReportFormat::SvgBars => write_text(&a.out.join("report.svg"), &svg_bars(&reports))?,
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
