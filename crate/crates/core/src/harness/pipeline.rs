use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use sha2::{Digest, Sha256};

use super::{aggregate, compute_accuracy, Arm, ArmReport, ExperimentConfig, GeneratorSummary, MetricsReport, SubjectResult};
use crate::datasets::{
    decode_trial, make_split, DatabaseProfile, DatasetManifest, SplitPlan, TrainingRole, TrialRecord, WindowTag, MANIFEST_FILE,
};
use crate::diffnet::{derive_seed, rng_from_seed, Tensor};
use crate::error::{Error, Result};
use crate::fusionclf::{
    build_multimodal, build_unimodal, majority_vote, predict, train_classifier, Classifier, ClfHistory, ClfTrainConfig, FusionConfig,
    LabeledWindows, StreamConfig,
};
use crate::genmodel::{
    channel_correlation, train_gan, windows_to_tensor, Discriminator, GanHistory, Generator, GeneratorMeta,
};
use crate::sigproc::{fit_stats, ChainOutput, Modality, MultichannelSeries, NormMode, SignalWindow};

/// Windows of one (subject, trial, class) cut from the action segment, or
/// from the spliced rest slices for rest classes.
#[derive(Debug, Clone)]
pub struct WindowGroup {
    pub tag: WindowTag,
    pub label: usize,
    /// Recognition-chain sEMG.
    pub hgr: Vec<SignalWindow<f32>>,
    /// Generator-chain sEMG.
    pub gan: Vec<SignalWindow<f32>>,
    pub imu: Option<Vec<SignalWindow<f32>>>,
    pub gan_series: MultichannelSeries<f32>,
    pub imu_series: Option<MultichannelSeries<f32>>,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub profile: DatabaseProfile,
    pub manifest: DatasetManifest,
    pub plan: SplitPlan,
    /// Window length in frames.
    pub k: usize,
    pub semg_channels: usize,
    pub imu_channels: usize,
    pub imu_kind: Option<Modality>,
    pub groups: Vec<WindowGroup>,
    /// SHA-256 over the manifest and every trial file read.
    pub data_fingerprint: String,
}

impl Preprocessed {
    fn groups_where(&self, f: impl Fn(&WindowGroup) -> bool) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| f(&self.groups[i])).collect()
    }

    pub fn train_groups(&self, subject: u32) -> Vec<usize> {
        self.groups_where(|g| g.tag.subject == subject && self.plan.clf_train_trials.contains(&g.tag.trial))
    }

    pub fn test_groups(&self, subject: u32) -> Vec<usize> {
        self.groups_where(|g| g.tag.subject == subject && self.plan.clf_test_trials.contains(&g.tag.trial))
    }

    pub fn gan_groups(&self) -> Vec<usize> {
        self.groups_where(|g| self.plan.gan_subjects.contains(&g.tag.subject) && self.plan.gan_train_trials.contains(&g.tag.trial))
    }

    pub fn classes(&self) -> usize {
        self.profile.gestures
    }
}

fn seconds_to_frames(s: f64, rate: f64) -> usize {
    (s * rate + 1e-9).floor() as usize
}

fn slice_output(out: &ChainOutput<f32>, start: usize, end: usize) -> Result<ChainOutput<f32>> {
    Ok(ChainOutput {
        hgr_semg: out.hgr_semg.slice_frames(start, end)?,
        gan_semg: out.gan_semg.slice_frames(start, end)?,
        imu: out.imu.as_ref().map(|s| s.slice_frames(start, end)).transpose()?,
    })
}

fn concat_outputs(parts: &[ChainOutput<f32>]) -> Result<ChainOutput<f32>> {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out.hgr_semg = out.hgr_semg.concat(&p.hgr_semg)?;
        out.gan_semg = out.gan_semg.concat(&p.gan_semg)?;
        out.imu = match (&out.imu, &p.imu) {
            (Some(a), Some(b)) => Some(a.concat(b)?),
            _ => None,
        };
    }
    Ok(out)
}

fn check_geometry(m: &DatasetManifest, p: &DatabaseProfile) -> Result<()> {
    let mismatch = |what: &str, a: String, b: String| Err(Error::Manifest(format!("{what}: dataset has {a}, profile {} expects {b}", p.name)));
    if m.semg_channels != p.semg_channels {
        return mismatch("sEMG channels", m.semg_channels.to_string(), p.semg_channels.to_string());
    }
    if m.imu_kind.is_some() && (m.imu_channels != p.imu_channels || m.imu_kind != Some(p.imu_kind)) {
        return mismatch("IMU channels", m.imu_channels.to_string(), p.imu_channels.to_string());
    }
    if m.gestures.count != p.action_gestures() {
        return mismatch("gestures", m.gestures.count.to_string(), p.action_gestures().to_string());
    }
    if m.sample_rate_hz != p.sample_rate_hz {
        return mismatch("sample rate", m.sample_rate_hz.to_string(), p.sample_rate_hz.to_string());
    }
    Ok(())
}

/// Loads the dataset, splits it and cuts every trial the split uses into
/// aligned windows of the three chains.
pub fn preprocess(cfg: &ExperimentConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let profile = cfg.profile()?;
    let dir = &cfg.dataset;
    let manifest = DatasetManifest::load(dir)?;
    manifest.verify_files(dir)?;
    check_geometry(&manifest, &profile)?;
    let plan = make_split(&manifest, cfg.experiment, &profile)?;

    let rate = cfg.chain.effective_rate(manifest.sample_rate_hz);
    let (k, step) = cfg.chain.window_frames(manifest.sample_rate_hz);
    let lead = seconds_to_frames(cfg.trim.rest_lead_s, rate);
    let action = seconds_to_frames(cfg.trim.action_s, rate);
    let rest_start = seconds_to_frames(cfg.trim.rest_offset_s, rate);
    let rest_len = seconds_to_frames(cfg.trim.rest_keep_s, rate);

    let used = |s: u32, t: u32| {
        (plan.gan_subjects.contains(&s) && plan.gan_train_trials.contains(&t))
            || (plan.recognition_subjects.contains(&s) && (plan.clf_train_trials.contains(&t) || plan.clf_test_trials.contains(&t)))
    };
    let mut entries: Vec<_> = manifest.files.iter().filter(|f| used(f.key.subject, f.key.trial)).collect();
    entries.sort_by_key(|f| f.key);

    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(dir.join(MANIFEST_FILE)).map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?);
    let mut segments: Vec<(WindowTag, usize, ChainOutput<f32>)> = Vec::new();
    let mut rest: BTreeMap<(u32, u32, usize), Vec<ChainOutput<f32>>> = BTreeMap::new();
    for entry in entries {
        let path = dir.join(&entry.path);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(&bytes);
        let rec: TrialRecord = decode_trial(&bytes, entry.key, manifest.sample_rate_hz)?;
        manifest.check_record(&rec)?;
        let out = ChainOutput::run(&rec.semg, rec.imu.as_ref(), &cfg.chain)?;
        let frames = out.hgr_semg.frames();
        if lead + action > frames || rest_start + rest_len > lead {
            return Err(Error::Trim(format!(
                "{:?}: {frames} frames at {rate} Hz cannot hold the configured segments",
                entry.key
            )));
        }
        let tag = WindowTag {
            subject: entry.key.subject,
            trial: entry.key.trial,
        };
        segments.push((tag, entry.key.gesture as usize, slice_output(&out, lead, lead + action)?));
        if let Some(label) = profile.rest_label(entry.key.gesture) {
            rest.entry((tag.subject, tag.trial, label as usize))
                .or_default()
                .push(slice_output(&out, rest_start, rest_start + rest_len)?);
        }
    }
    for ((subject, trial, label), parts) in rest {
        segments.push((WindowTag { subject, trial }, label, concat_outputs(&parts)?));
    }

    let mut groups = Vec::with_capacity(segments.len());
    for (tag, label, out) in segments {
        let cut = |s: &MultichannelSeries<f32>| crate::sigproc::segment_frames(s, k, step);
        groups.push(WindowGroup {
            tag,
            label,
            hgr: cut(&out.hgr_semg)?,
            gan: cut(&out.gan_semg)?,
            imu: out.imu.as_ref().map(cut).transpose()?,
            gan_series: out.gan_semg,
            imu_series: out.imu,
        });
    }
    Ok(Preprocessed {
        imu_kind: manifest.imu_kind,
        imu_channels: manifest.imu_channels,
        semg_channels: manifest.semg_channels,
        profile,
        manifest,
        plan,
        k,
        groups,
        data_fingerprint: format!("{:x}", hasher.finalize()),
    })
}

/// Seeds drawn from the master seed in a fixed order.
struct Seeds {
    gan: u64,
    subsample: u64,
    model: u64,
    clf: u64,
}

impl Seeds {
    fn new(master: u64) -> Self {
        let mut root = rng_from_seed(master);
        Seeds {
            gan: derive_seed(&mut root),
            subsample: derive_seed(&mut root),
            model: derive_seed(&mut root),
            clf: derive_seed(&mut root),
        }
    }
}

pub struct GeneratorOutcome {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub history: GanHistory,
    pub meta: GeneratorMeta,
    pub pairs: usize,
}

/// Trains the generator on the generator cohort's windows.
pub fn train_generator(pre: &Preprocessed, cfg: &ExperimentConfig) -> Result<GeneratorOutcome> {
    let kind = pre
        .imu_kind
        .ok_or_else(|| Error::MissingData("the dataset has no IMU to train a generator on".into()))?;
    let idx = pre.gan_groups();
    let groups: Vec<&WindowGroup> = idx.iter().map(|&i| &pre.groups[i]).collect();
    pre.plan.check_training(TrainingRole::Generator, groups.iter().map(|g| &g.tag))?;
    let imu_series = groups
        .iter()
        .map(|g| g.imu_series.as_ref().ok_or_else(|| Error::MissingData(format!("{:?} has no IMU", g.tag))))
        .collect::<Result<Vec<_>>>()?;
    let semg_stats = fit_stats(groups.iter().map(|g| &g.gan_series))?;
    let imu_stats = fit_stats(imu_series.iter().copied())?;

    let mut semg_windows = Vec::new();
    let mut imu_windows = Vec::new();
    for g in &groups {
        for (s, m) in g.gan.iter().zip(g.imu.as_ref().expect("checked above")) {
            let mut s = s.clone();
            semg_stats.normalize_in_place(&mut s.data, s.channels, NormMode::Zscore)?;
            let mut m = m.clone();
            imu_stats.normalize_in_place(&mut m.data, m.channels, NormMode::MinmaxPm1)?;
            semg_windows.push(s);
            imu_windows.push(m);
        }
    }
    let n = semg_windows.len();
    let mut chosen: Vec<usize> = (0..n).collect();
    if let Some(max) = cfg.gan_max_pairs.filter(|&m| m < n) {
        chosen = index::sample(&mut rng_from_seed(Seeds::new(cfg.seed).subsample), n, max).into_vec();
        chosen.sort_unstable();
    }
    let pick = |ws: &[SignalWindow<f32>]| ws.iter().enumerate().filter(|(i, _)| chosen.binary_search(i).is_ok()).map(|(_, w)| w.clone()).collect::<Vec<_>>();
    let semg = windows_to_tensor(&pick(&semg_windows), pre.k, pre.semg_channels)?;
    let imu = windows_to_tensor(&pick(&imu_windows), pre.k, pre.imu_channels)?;

    let mut gan_cfg = cfg.gan.clone();
    gan_cfg.seed = Seeds::new(cfg.seed).gan;
    let (mut generator, discriminator, history) = train_gan(&semg, &imu, &gan_cfg)?;
    generator.semg_stats = Some(semg_stats.clone());
    generator.imu_stats = Some(imu_stats.clone());
    let mut hasher = Sha256::new();
    for t in [&semg, &imu] {
        for v in t.values() {
            hasher.update(v.to_le_bytes());
        }
    }
    let meta = GeneratorMeta {
        config: generator.config,
        discriminator: discriminator.config,
        train: gan_cfg,
        semg_stats: Some(semg_stats),
        imu_stats: Some(imu_stats),
        imu_modality: kind,
        seed: Seeds::new(cfg.seed).gan,
        data_fingerprint: format!("{:x}", hasher.finalize()),
    };
    Ok(GeneratorOutcome {
        generator,
        discriminator,
        history,
        meta,
        pairs: chosen.len(),
    })
}

fn virtual_windows(pre: &Preprocessed, g: &WindowGroup, generator: &Generator<f32>) -> Result<Vec<SignalWindow<f32>>> {
    let kind = pre.imu_kind.unwrap_or(pre.profile.imu_kind);
    generator.generate_virtual(&generator.normalize_input(&g.gan)?, kind)
}

/// Stream inputs of the given groups for an arm.
fn labeled(pre: &Preprocessed, groups: &[usize], arm: Arm, generator: Option<&Generator<f32>>) -> Result<(LabeledWindows<f32>, Vec<WindowTag>)> {
    let mut semg = Vec::new();
    let mut imu = Vec::new();
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    for &i in groups {
        let g = &pre.groups[i];
        semg.extend(g.hgr.iter().cloned());
        labels.extend(std::iter::repeat_n(g.label, g.hgr.len()));
        tags.extend(std::iter::repeat_n(g.tag, g.hgr.len()));
        match arm {
            Arm::Unimodal => {}
            Arm::RealMultimodal => imu.extend(
                g.imu
                    .as_ref()
                    .ok_or_else(|| Error::MissingData(format!("real IMU missing for {:?}", g.tag)))?
                    .iter()
                    .cloned(),
            ),
            Arm::VirtualMultimodal => {
                let gen = generator.ok_or_else(|| Error::State("the virtual arm needs a trained generator".into()))?;
                imu.extend(virtual_windows(pre, g, gen)?);
            }
        }
    }
    let mut inputs = vec![windows_to_tensor(&semg, pre.k, pre.semg_channels)?];
    if arm != Arm::Unimodal {
        inputs.push(windows_to_tensor(&imu, pre.k, pre.imu_channels)?);
    }
    Ok((LabeledWindows::new(inputs, labels)?, tags))
}

fn build_model(pre: &Preprocessed, cfg: &ExperimentConfig, arm: Arm) -> Result<Classifier<f32>> {
    let w = cfg.widths;
    let stream = |c: usize| {
        let mut s = StreamConfig::new(pre.k, c).with_widths(w.conv_maps, w.lc_maps, w.stream_hidden);
        s.dropout = w.dropout;
        s
    };
    let fusion = FusionConfig {
        hidden: w.fusion_hidden,
        classes: pre.classes(),
    };
    let seed = Seeds::new(cfg.seed).model;
    match arm {
        Arm::Unimodal => build_unimodal(stream(pre.semg_channels), fusion, seed),
        _ => build_multimodal(stream(pre.semg_channels), stream(pre.imu_channels), fusion, seed),
    }
}

pub struct ArmModels {
    pub arm: Arm,
    pub models: Vec<(u32, Classifier<f32>)>,
    pub pretrain_history: Option<ClfHistory>,
    pub histories: Vec<(u32, ClfHistory)>,
}

/// Trains one classifier per recognition subject, pretraining on all
/// subjects' training windows first when configured.
pub fn train_arm(pre: &Preprocessed, cfg: &ExperimentConfig, arm: Arm, generator: Option<&Generator<f32>>) -> Result<ArmModels> {
    let clf_cfg = ClfTrainConfig {
        seed: Seeds::new(cfg.seed).clf,
        ..cfg.clf.clone()
    };
    let mut per_subject = Vec::new();
    for &s in &pre.plan.recognition_subjects {
        let (data, tags) = labeled(pre, &pre.train_groups(s), arm, generator)?;
        pre.plan.check_training(TrainingRole::Classifier, &tags)?;
        per_subject.push((s, data));
    }
    let base = build_model(pre, cfg, arm)?;
    let (base, pretrain_history) = if clf_cfg.pretrain {
        let all = LabeledWindows::concat(&per_subject.iter().map(|(_, d)| d).collect::<Vec<_>>())?;
        let mut m = base;
        let h = train_classifier(&mut m, &all, &clf_cfg)?;
        (m, Some(h))
    } else {
        (base, None)
    };
    let mut models = Vec::new();
    let mut histories = Vec::new();
    for (s, data) in per_subject {
        let mut m = base.clone();
        histories.push((s, train_classifier(&mut m, &data, &clf_cfg)?));
        models.push((s, m));
    }
    Ok(ArmModels {
        arm,
        models,
        pretrain_history,
        histories,
    })
}

/// One test window's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub window_id: String,
    pub true_label: usize,
    pub predicted_label: usize,
    pub max_prob: f64,
}

pub struct ArmOutcome {
    pub report: ArmReport,
    pub predictions: Vec<PredictionRow>,
    pub models: ArmModels,
}

/// Scores each subject's classifier on that subject's test windows.
pub fn evaluate_arm(pre: &Preprocessed, models: ArmModels, generator: Option<&Generator<f32>>) -> Result<ArmOutcome> {
    let mut subjects = Vec::new();
    let mut rows = Vec::new();
    for (s, model) in &models.models {
        let groups = pre.test_groups(*s);
        let (data, tags) = labeled(pre, &groups, models.arm, generator)?;
        if data.is_empty() {
            return Err(Error::InsufficientData(format!("subject {s} has no test windows")));
        }
        let refs: Vec<&Tensor<f32>> = data.inputs.iter().collect();
        let p = predict(model, &refs)?;
        let accuracy = compute_accuracy(&p.classes, &data.labels)?;
        // one vote per (trial, class) segment
        let mut segment = Vec::with_capacity(data.len());
        let mut truth = BTreeMap::new();
        let mut w = 0;
        for (gi, &g) in groups.iter().enumerate() {
            let group = &pre.groups[g];
            for j in 0..group.hgr.len() {
                segment.push(gi);
                truth.insert(gi, group.label);
                rows.push(PredictionRow {
                    window_id: format!("s{:03}_t{:02}_c{:03}_w{:04}", tags[w].subject, tags[w].trial, group.label, j),
                    true_label: data.labels[w],
                    predicted_label: p.classes[w],
                    max_prob: p.max_prob(w),
                });
                w += 1;
            }
        }
        let votes = majority_vote(&p.classes, &segment);
        let vote_hits = votes.iter().filter(|(g, c)| truth[*g] == **c).count();
        subjects.push(SubjectResult {
            subject: *s,
            accuracy,
            trial_vote_accuracy: vote_hits as f64 / votes.len() as f64,
            windows: data.len(),
        });
    }
    let (mean, std) = aggregate(&subjects.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    Ok(ArmOutcome {
        report: ArmReport {
            arm: models.arm,
            subjects,
            mean,
            std,
        },
        predictions: rows,
        models,
    })
}

fn heldout_correlation(pre: &Preprocessed, generator: &Generator<f32>) -> Result<Vec<f64>> {
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for &s in &pre.plan.recognition_subjects {
        for g in pre.test_groups(s) {
            let g = &pre.groups[g];
            if let Some(imu) = &g.imu {
                real.extend(imu.iter().cloned());
                fake.extend(virtual_windows(pre, g, generator)?);
            }
        }
    }
    if real.is_empty() {
        return Ok(Vec::new());
    }
    channel_correlation(
        &windows_to_tensor(&fake, pre.k, pre.imu_channels)?,
        &windows_to_tensor(&real, pre.k, pre.imu_channels)?,
    )
}

pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub generator: Option<GeneratorOutcome>,
    pub arms: Vec<ArmOutcome>,
}

/// Preprocessing, generator training, per-arm training and evaluation.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pre = preprocess(cfg)?;
    if cfg.arms.contains(&Arm::RealMultimodal) && pre.imu_kind.is_none() {
        return Err(Error::MissingData("the real multimodal arm needs recorded IMU".into()));
    }
    let generator = if cfg.needs_generator() {
        Some(train_generator(&pre, cfg)?)
    } else {
        None
    };
    let gen_ref = generator.as_ref().map(|g| &g.generator);
    let mut arms = Vec::new();
    let mut selected = cfg.arms.clone();
    selected.sort();
    selected.dedup();
    for arm in selected {
        let models = train_arm(&pre, cfg, arm, gen_ref)?;
        arms.push(evaluate_arm(&pre, models, gen_ref)?);
    }
    let summary = match &generator {
        Some(g) => {
            let corr = if pre.imu_kind.is_some() {
                heldout_correlation(&pre, &g.generator)?
            } else {
                Vec::new()
            };
            let last = g.history.epochs.last();
            Some(GeneratorSummary {
                pairs: g.pairs,
                epochs: g.history.epochs.len(),
                final_d_loss: last.map(|e| e.d_loss),
                final_g_loss: last.map(|e| e.g_loss),
                mean_heldout_correlation: if corr.is_empty() { f64::NAN } else { corr.iter().sum::<f64>() / corr.len() as f64 },
                heldout_correlation: corr,
            })
        }
        None => None,
    };
    let arm_reports: Vec<ArmReport> = arms.iter().map(|a| a.report.clone()).collect();
    let report = MetricsReport {
        vimu_report: MetricsReport::VERSION,
        database: pre.profile.name.clone(),
        experiment: cfg.experiment,
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
        data_fingerprint: pre.data_fingerprint.clone(),
        deltas: MetricsReport::compute_deltas(&arm_reports),
        arms: arm_reports,
        generator: summary,
    };
    Ok(ExperimentOutput { report, generator, arms })
}

impl ExperimentOutput {
    /// Writes checkpoints, histories and predictions into `dir`.
    pub fn save_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(g) = &self.generator {
            g.generator.save(&dir.join("generator.ckpt"), &g.meta)?;
            crate::diffnet::write_checkpoint(&dir.join("discriminator.ckpt"), g.discriminator.net.params())?;
            write_json(&dir.join("gan_history.json"), &g.history)?;
        }
        for a in &self.arms {
            let name = a.report.arm.name();
            for (s, m) in &a.models.models {
                m.save(&dir.join(format!("clf_{name}_s{s:03}.ckpt")))?;
            }
            let path = dir.join(format!("predictions_{name}.csv"));
            std::fs::write(&path, super::predictions_csv(&a.predictions)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
