//! Experiment configuration, the end-to-end pipeline, metrics and reports.

mod pipeline;
mod report;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datasets::{DatabaseProfile, Experiment, TrimConfig};
use crate::diffnet::{sha256_hex, AdamConfig, StepSchedule};
use crate::error::{Error, Result};
use crate::fusionclf::ClfTrainConfig;
use crate::genmodel::GanTrainConfig;
use crate::sigproc::ChainConfig;

pub use pipeline::{
    evaluate_arm, preprocess, run_experiment, train_arm, train_generator, ArmModels, ArmOutcome, ExperimentOutput,
    GeneratorOutcome, PredictionRow, Preprocessed, WindowGroup,
};
pub use report::{emit_report, predictions_csv, report_csv, svg_bars, ReportFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// sEMG only.
    Unimodal,
    /// sEMG plus generated IMU.
    VirtualMultimodal,
    /// sEMG plus recorded IMU.
    RealMultimodal,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Unimodal, Arm::VirtualMultimodal, Arm::RealMultimodal];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Unimodal => "unimodal",
            Arm::VirtualMultimodal => "virtual_multimodal",
            Arm::RealMultimodal => "real_multimodal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm {s:?}")))
    }
}

/// Layer widths of the recognition model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWidths {
    pub conv_maps: usize,
    pub lc_maps: usize,
    pub stream_hidden: usize,
    pub fusion_hidden: usize,
    pub dropout: f64,
}

impl Default for ClassifierWidths {
    fn default() -> Self {
        ClassifierWidths {
            conv_maps: 64,
            lc_maps: 64,
            stream_hidden: 512,
            fusion_hidden: 512,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub profile: String,
    pub experiment: Experiment,
    pub chain: ChainConfig,
    pub trim: TrimConfig,
    pub gan: GanTrainConfig,
    /// Upper bound on generator training pairs; a seeded subset is drawn
    /// when there are more.
    pub gan_max_pairs: Option<usize>,
    pub clf: ClfTrainConfig,
    pub widths: ClassifierWidths,
    pub arms: Vec<Arm>,
    /// Master seed. The nested generator and classifier seeds are derived
    /// from it and the values in the file are ignored.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full(&DatabaseProfile::femg_vpf())
    }
}

impl ExperimentConfig {
    /// Full-scale settings for a published database.
    pub fn full(profile: &DatabaseProfile) -> Self {
        ExperimentConfig {
            dataset: PathBuf::from("data"),
            profile: profile.name.clone(),
            experiment: Experiment::Exp2,
            chain: ChainConfig {
                decimation: profile.decimation,
                ..ChainConfig::default()
            },
            trim: TrimConfig::default(),
            gan: GanTrainConfig::default(),
            gan_max_pairs: None,
            clf: ClfTrainConfig::default(),
            widths: ClassifierWidths::default(),
            arms: Arm::ALL.to_vec(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Desk-scale settings for the synthetic database: 50 Hz after
    /// decimation, 10-frame windows every 2 frames, narrow layers and a short
    /// generator schedule.
    pub fn desk() -> Self {
        let profile = DatabaseProfile::synthetic();
        ExperimentConfig {
            experiment: Experiment::Exp1,
            chain: ChainConfig {
                decimation: profile.decimation,
                step_ms: 40.0,
                ..ChainConfig::default()
            },
            gan: GanTrainConfig {
                epochs: 200,
                adam: AdamConfig {
                    learning_rate: 5e-4,
                    ..AdamConfig::default()
                },
                ..GanTrainConfig::default()
            },
            gan_max_pairs: Some(512),
            clf: ClfTrainConfig {
                schedule: StepSchedule::default(),
                ..ClfTrainConfig::default()
            },
            widths: ClassifierWidths {
                conv_maps: 16,
                lc_maps: 16,
                stream_hidden: 64,
                fusion_hidden: 64,
                dropout: 0.5,
            },
            ..Self::full(&profile)
        }
    }

    pub fn profile(&self) -> Result<DatabaseProfile> {
        DatabaseProfile::by_name(&self.profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Config("no arms selected".into()));
        }
        self.profile()?;
        self.clf.validate()?;
        if self.gan.batch_size < 2 {
            return Err(Error::Config("generator batch size must be at least 2".into()));
        }
        if self.gan_max_pairs.is_some_and(|m| m < self.gan.batch_size) {
            return Err(Error::Config("gan_max_pairs is below the generator batch size".into()));
        }
        Ok(())
    }

    pub fn needs_generator(&self) -> bool {
        self.arms.contains(&Arm::VirtualMultimodal)
    }

    /// SHA-256 of the configuration with paths removed.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.dataset = PathBuf::new();
        c.output_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

/// Fraction of predictions equal to the labels.
pub fn compute_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InsufficientData(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn aggregate(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: u32,
    /// Per-window accuracy.
    pub accuracy: f64,
    /// Accuracy of a majority vote over each test trial's windows.
    pub trial_vote_accuracy: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: Arm,
    pub subjects: Vec<SubjectResult>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub virtual_minus_unimodal: Option<f64>,
    pub real_minus_virtual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSummary {
    pub pairs: usize,
    pub epochs: usize,
    pub final_d_loss: Option<f64>,
    pub final_g_loss: Option<f64>,
    /// Pearson correlation per IMU channel between generated and recorded
    /// test windows of the recognition subjects.
    pub heldout_correlation: Vec<f64>,
    pub mean_heldout_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub vimu_report: u32,
    pub database: String,
    pub experiment: Experiment,
    pub seed: u64,
    pub config_fingerprint: String,
    pub data_fingerprint: String,
    pub arms: Vec<ArmReport>,
    pub deltas: Deltas,
    pub generator: Option<GeneratorSummary>,
}

impl MetricsReport {
    pub const VERSION: u32 = 1;

    pub fn arm(&self, arm: Arm) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn compute_deltas(arms: &[ArmReport]) -> Deltas {
        let mean = |a: Arm| arms.iter().find(|r| r.arm == a).map(|r| r.mean);
        let (u, v, r) = (mean(Arm::Unimodal), mean(Arm::VirtualMultimodal), mean(Arm::RealMultimodal));
        Deltas {
            virtual_minus_unimodal: v.zip(u).map(|(v, u)| v - u),
            real_minus_virtual: r.zip(v).map(|(r, v)| r - v),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vimu_report != Self::VERSION {
            return Err(Error::Format(format!("unsupported report version {}", self.vimu_report)));
        }
        for a in &self.arms {
            if a.subjects.iter().any(|s| !(0.0..=1.0).contains(&s.accuracy)) {
                return Err(Error::Format(format!("accuracy outside [0, 1] in arm {}", a.arm.name())));
            }
        }
        if Self::compute_deltas(&self.arms) != self.deltas {
            return Err(Error::Format("deltas disagree with the arm means".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: MetricsReport = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}
