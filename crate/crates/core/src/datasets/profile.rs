use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::sigproc::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Separate subject cohorts for the generator and the classifier.
    Exp1,
    /// Every subject in both roles.
    Exp2,
}

/// Geometry and protocol of one database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseProfile {
    pub name: String,
    /// Subjects used for classification.
    pub subjects: usize,
    /// Classes, rest classes included.
    pub gestures: usize,
    pub semg_channels: usize,
    pub imu_channels: usize,
    pub imu_kind: Modality,
    /// Trials recorded per gesture.
    pub trials_total: u32,
    /// Trials used in experiments.
    pub usable_trials: Vec<u32>,
    pub sample_rate_hz: f64,
    /// Decimation factor applied before windowing.
    pub decimation: usize,
    /// Rest classes built from spliced rest slices, one per gesture group.
    pub rest_classes: usize,
    pub clf_train_trials: Vec<u32>,
    pub clf_test_trials: Vec<u32>,
}

fn trials(range: std::ops::RangeInclusive<u32>) -> Vec<u32> {
    range.collect()
}

impl DatabaseProfile {
    #[allow(clippy::too_many_arguments)]
    fn ninapro(name: &str, subjects: usize, gestures: usize, semg: usize, imu: usize, kind: Modality, rate: f64, decimation: usize) -> Self {
        DatabaseProfile {
            name: name.into(),
            subjects,
            gestures,
            semg_channels: semg,
            imu_channels: imu,
            imu_kind: kind,
            trials_total: 6,
            usable_trials: trials(1..=6),
            sample_rate_hz: rate,
            decimation,
            rest_classes: 0,
            clf_train_trials: vec![1, 3, 4, 6],
            clf_test_trials: vec![2, 5],
        }
    }

    pub fn femg_vpf() -> Self {
        DatabaseProfile {
            name: "femg_vpf".into(),
            subjects: 28,
            gestures: 38,
            semg_channels: 8,
            imu_channels: 3,
            imu_kind: Modality::Euler,
            trials_total: 6,
            usable_trials: trials(1..=4),
            sample_rate_hz: 2040.0,
            decimation: 20,
            rest_classes: 2,
            clf_train_trials: vec![1, 3],
            clf_test_trials: vec![2, 4],
        }
    }

    pub fn ninapro_db2() -> Self {
        Self::ninapro("ninapro_db2", 40, 50, 12, 36, Modality::Acc, 2000.0, 20)
    }

    pub fn ninapro_db3() -> Self {
        Self::ninapro("ninapro_db3", 6, 50, 12, 36, Modality::Acc, 2000.0, 20)
    }

    pub fn ninapro_db5() -> Self {
        Self::ninapro("ninapro_db5", 10, 53, 16, 3, Modality::Acc, 200.0, 1)
    }

    pub fn ninapro_db7() -> Self {
        Self::ninapro("ninapro_db7", 20, 41, 12, 36, Modality::Acc, 2000.0, 20)
    }

    pub fn siem() -> Self {
        DatabaseProfile {
            name: "siem".into(),
            subjects: 20,
            gestures: 12,
            semg_channels: 8,
            imu_channels: 3,
            imu_kind: Modality::Euler,
            trials_total: 18,
            usable_trials: trials(1..=6),
            sample_rate_hz: 2040.0,
            decimation: 20,
            rest_classes: 0,
            clf_train_trials: vec![1, 3, 4, 6],
            clf_test_trials: vec![2, 5],
        }
    }

    /// Desk-scale synthetic database.
    pub fn synthetic() -> Self {
        DatabaseProfile {
            name: "synthetic".into(),
            subjects: 4,
            gestures: 4,
            semg_channels: 8,
            imu_channels: 3,
            imu_kind: Modality::Euler,
            trials_total: 4,
            usable_trials: trials(1..=4),
            sample_rate_hz: 200.0,
            decimation: 4,
            rest_classes: 0,
            clf_train_trials: vec![1, 3],
            clf_test_trials: vec![2, 4],
        }
    }

    pub fn all_published() -> Vec<Self> {
        vec![
            Self::femg_vpf(),
            Self::ninapro_db2(),
            Self::ninapro_db3(),
            Self::ninapro_db5(),
            Self::ninapro_db7(),
            Self::siem(),
        ]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::all_published()
            .into_iter()
            .chain([Self::synthetic()])
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown database profile {name:?}")))
    }

    /// Recorded gestures, i.e. classes without the rest classes.
    pub fn action_gestures(&self) -> usize {
        self.gestures - self.rest_classes
    }

    /// Class index of the rest slice cut from a trial of `gesture`.
    pub fn rest_label(&self, gesture: u32) -> Option<u32> {
        if self.rest_classes == 0 {
            return None;
        }
        let per_group = self.action_gestures() / self.rest_classes;
        Some((self.action_gestures() + (gesture as usize / per_group).min(self.rest_classes - 1)) as u32)
    }
}

/// Which subjects and trials feed each model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub experiment: Experiment,
    pub gan_subjects: Vec<u32>,
    pub recognition_subjects: Vec<u32>,
    pub gan_train_trials: Vec<u32>,
    pub clf_train_trials: Vec<u32>,
    pub clf_test_trials: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingRole {
    Generator,
    Classifier,
}

/// Origin of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowTag {
    pub subject: u32,
    pub trial: u32,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<_> = self.clf_train_trials.iter().collect();
        if self.clf_test_trials.iter().any(|t| train.contains(t)) {
            return Err(Error::Leakage(format!(
                "train trials {:?} and test trials {:?} overlap",
                self.clf_train_trials, self.clf_test_trials
            )));
        }
        if self.experiment == Experiment::Exp2 && self.gan_train_trials.iter().any(|t| self.clf_test_trials.contains(t)) {
            return Err(Error::Leakage("generator trains on classifier test trials".into()));
        }
        Ok(())
    }

    fn is_test(&self, tag: WindowTag) -> bool {
        self.recognition_subjects.contains(&tag.subject) && self.clf_test_trials.contains(&tag.trial)
    }

    /// Fails unless every tagged window is allowed to train the given model
    /// and none comes from a test trial.
    pub fn check_training<'a>(&self, role: TrainingRole, tags: impl IntoIterator<Item = &'a WindowTag>) -> Result<()> {
        self.validate()?;
        let (subjects, trials) = match role {
            TrainingRole::Generator => (&self.gan_subjects, &self.gan_train_trials),
            TrainingRole::Classifier => (&self.recognition_subjects, &self.clf_train_trials),
        };
        for &tag in tags {
            if self.is_test(tag) {
                return Err(Error::Leakage(format!(
                    "test window of subject {} trial {} in {role:?} training",
                    tag.subject, tag.trial
                )));
            }
            if !subjects.contains(&tag.subject) || !trials.contains(&tag.trial) {
                return Err(Error::Leakage(format!(
                    "window of subject {} trial {} is outside the {role:?} training split",
                    tag.subject, tag.trial
                )));
            }
        }
        Ok(())
    }
}

/// Splits sorted subjects per the experiment. In the first experiment the
/// generator cohort is the first `ceil(n / 2)` subjects.
pub fn make_split_for_subjects(subjects: &[u32], experiment: Experiment, profile: &DatabaseProfile) -> Result<SplitPlan> {
    if subjects.is_empty() {
        return Err(Error::InsufficientData("no subjects".into()));
    }
    let mut sorted = subjects.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let plan = match experiment {
        Experiment::Exp1 => {
            if sorted.len() < 2 {
                return Err(Error::InsufficientData("the first experiment needs two subjects".into()));
            }
            let half = sorted.len().div_ceil(2);
            SplitPlan {
                experiment,
                gan_subjects: sorted[..half].to_vec(),
                recognition_subjects: sorted[half..].to_vec(),
                gan_train_trials: profile.usable_trials.clone(),
                clf_train_trials: profile.clf_train_trials.clone(),
                clf_test_trials: profile.clf_test_trials.clone(),
            }
        }
        Experiment::Exp2 => SplitPlan {
            experiment,
            gan_subjects: sorted.clone(),
            recognition_subjects: sorted,
            gan_train_trials: profile.clf_train_trials.clone(),
            clf_train_trials: profile.clf_train_trials.clone(),
            clf_test_trials: profile.clf_test_trials.clone(),
        },
    };
    plan.validate()?;
    Ok(plan)
}

pub fn make_split(manifest: &DatasetManifest, experiment: Experiment, profile: &DatabaseProfile) -> Result<SplitPlan> {
    if manifest.trials_per_gesture != profile.trials_total {
        return Err(Error::Manifest(format!(
            "{} trials per gesture, profile {} expects {}",
            manifest.trials_per_gesture, profile.name, profile.trials_total
        )));
    }
    make_split_for_subjects(&manifest.subjects, experiment, profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn femg_rest_labels() {
        let p = DatabaseProfile::femg_vpf();
        assert_eq!(p.action_gestures(), 36);
        assert_eq!(p.rest_label(0), Some(36));
        assert_eq!(p.rest_label(17), Some(36));
        assert_eq!(p.rest_label(18), Some(37));
        assert_eq!(DatabaseProfile::ninapro_db2().rest_label(3), None);
    }

    #[test]
    fn exp1_odd_cohort_rounds_up() {
        let p = DatabaseProfile::synthetic();
        let s = make_split_for_subjects(&[5, 1, 3], Experiment::Exp1, &p).unwrap();
        assert_eq!(s.gan_subjects, vec![1, 3]);
        assert_eq!(s.recognition_subjects, vec![5]);
    }

    #[test]
    fn guard_accepts_and_rejects() {
        let p = DatabaseProfile::ninapro_db2();
        let s = make_split_for_subjects(&[1, 2, 3, 4], Experiment::Exp1, &p).unwrap();
        let ok = [WindowTag { subject: 3, trial: 1 }, WindowTag { subject: 4, trial: 6 }];
        s.check_training(TrainingRole::Classifier, &ok).unwrap();
        s.check_training(TrainingRole::Generator, &[WindowTag { subject: 1, trial: 5 }]).unwrap();
        let test = [WindowTag { subject: 3, trial: 2 }];
        assert!(matches!(s.check_training(TrainingRole::Classifier, &test), Err(Error::Leakage(_))));
        assert!(s.check_training(TrainingRole::Generator, &test).is_err());
        assert!(s.check_training(TrainingRole::Generator, &ok).is_err());
    }

    #[test]
    fn profile_lookup() {
        assert_eq!(DatabaseProfile::by_name("siem").unwrap(), DatabaseProfile::siem());
        assert!(matches!(DatabaseProfile::by_name("db9"), Err(Error::Config(_))));
    }
}
