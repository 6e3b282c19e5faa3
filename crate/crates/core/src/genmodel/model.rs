use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffnet::{read_checkpoint, write_checkpoint, InitScheme, LayerSpec, Sequential, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sigproc::{ChannelStats, Modality, NormMode, SignalWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Window length in frames.
    pub k: usize,
    /// sEMG channels.
    pub c1: usize,
    /// IMU channels.
    pub c2: usize,
    /// Batch-normalize the last (single-map) transposed convolution too.
    pub final_batchnorm: bool,
}

impl GeneratorConfig {
    pub fn new(k: usize, c1: usize, c2: usize) -> Self {
        GeneratorConfig {
            k,
            c1,
            c2,
            final_batchnorm: true,
        }
    }

    pub const MAPS: [usize; 3] = [32, 16, 1];

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for (i, &maps) in Self::MAPS.iter().enumerate() {
            specs.push(LayerSpec::Tconv2d {
                maps,
                kernel: [3, 3],
                stride: [1, 2],
                padding: [1, 1],
                output_padding: [0, 1],
            });
            if i < 2 || self.final_batchnorm {
                specs.push(LayerSpec::Batchnorm);
            }
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::dense(self.k * self.c2));
        specs.push(LayerSpec::Tanh);
        specs.push(LayerSpec::Reshape {
            shape: vec![1, self.k, self.c2],
        });
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub k: usize,
    pub c2: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl DiscriminatorConfig {
    pub fn new(k: usize, c2: usize) -> Self {
        DiscriminatorConfig {
            k,
            c2,
            dropout: 0.2,
            leaky_slope: 0.2,
        }
    }

    pub const MAPS: usize = 16;

    pub fn layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(Self::MAPS, 3, 3, 0),
            LayerSpec::Batchnorm,
            LayerSpec::LeakyRelu { slope: self.leaky_slope },
            LayerSpec::Dropout { rate: self.dropout },
            LayerSpec::Flatten,
            LayerSpec::dense(1),
            LayerSpec::Sigmoid,
        ]
    }
}

/// Generator network plus the statistics needed to use it on raw data.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub net: Sequential<T>,
    /// z-score statistics of the sEMG inputs seen in training.
    pub semg_stats: Option<ChannelStats>,
    /// min-max statistics that map IMU windows to [-1, 1].
    pub imu_stats: Option<ChannelStats>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub net: Sequential<T>,
}

pub fn build_generator<T: Scalar>(cfg: GeneratorConfig, seed: u64) -> Result<Generator<T>> {
    if cfg.k == 0 || cfg.c1 == 0 || cfg.c2 == 0 {
        return Err(Error::Config(format!("generator geometry {cfg:?} has a zero dimension")));
    }
    let net = Sequential::new(&[1, cfg.k, cfg.c1], cfg.layers(), InitScheme::Dcgan, seed)?;
    Ok(Generator {
        config: cfg,
        net,
        semg_stats: None,
        imu_stats: None,
    })
}

pub fn build_discriminator<T: Scalar>(cfg: DiscriminatorConfig, seed: u64) -> Result<Discriminator<T>> {
    if cfg.k < 3 || cfg.c2 < 3 {
        return Err(Error::Config(format!(
            "discriminator needs at least 3x3 windows for its stride-3 convolution, got {}x{}",
            cfg.k, cfg.c2
        )));
    }
    let net = Sequential::new(&[1, cfg.k, cfg.c2], cfg.layers(), InitScheme::Dcgan, seed).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Discriminator { config: cfg, net })
}

/// Stacks `frames x channels` windows into an `(n, 1, frames, channels)` tensor.
pub fn windows_to_tensor<T: Scalar>(windows: &[SignalWindow<T>], frames: usize, channels: usize) -> Result<Tensor<T>> {
    if let Some(w) = windows.iter().find(|w| w.frames != frames || w.channels != channels) {
        return Err(Error::Shape(format!(
            "window is {}x{}, expected {frames}x{channels}",
            w.frames, w.channels
        )));
    }
    let rows: Vec<&[T]> = windows.iter().map(|w| w.data.as_slice()).collect();
    Tensor::stack(&rows, &[1, frames, channels])
}

impl<T: Scalar> Generator<T> {
    /// Normalized virtual IMU windows in [-1, 1] for a batch `(n, 1, k, c1)`.
    pub fn generate_normalized(&self, semg: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer(semg)
    }

    /// Applies the stored sEMG z-score statistics to raw generator-chain windows.
    pub fn normalize_input(&self, windows: &[SignalWindow<T>]) -> Result<Vec<SignalWindow<T>>> {
        let stats = self
            .semg_stats
            .as_ref()
            .ok_or_else(|| Error::State("generator has no sEMG statistics".into()))?;
        windows
            .iter()
            .map(|w| {
                let mut w = w.clone();
                stats.normalize_in_place(&mut w.data, w.channels, NormMode::Zscore)?;
                Ok(w)
            })
            .collect()
    }

    /// Synthesizes virtual IMU windows from normalized sEMG windows, in eval
    /// mode, and maps them back to physical units with the stored IMU
    /// statistics (if any).
    pub fn generate_virtual(&self, semg: &[SignalWindow<T>], modality: Modality) -> Result<Vec<SignalWindow<T>>> {
        let cfg = self.config;
        if semg.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(stats) = &self.imu_stats {
            if stats.channels() != cfg.c2 {
                return Err(Error::StatsMismatch {
                    expected: cfg.c2,
                    actual: stats.channels(),
                });
            }
        }
        if let Some(stats) = &self.semg_stats {
            if stats.channels() != cfg.c1 {
                return Err(Error::StatsMismatch {
                    expected: cfg.c1,
                    actual: stats.channels(),
                });
            }
        }
        let x = windows_to_tensor(semg, cfg.k, cfg.c1)?;
        let y = self.generate_normalized(&x)?;
        semg.iter()
            .enumerate()
            .map(|(i, w)| {
                let mut data = y.sample(i).to_vec();
                if let Some(stats) = &self.imu_stats {
                    stats.denormalize_in_place(&mut data, cfg.c2, NormMode::MinmaxPm1)?;
                }
                SignalWindow::new(data, cfg.k, cfg.c2, w.origin_frame, modality)
            })
            .collect()
    }

    /// Writes the weights to `path` and a JSON sidecar next to it.
    pub fn save(&self, path: &Path, meta: &GeneratorMeta) -> Result<()> {
        write_checkpoint(path, self.net.params())?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(meta)?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(path: &Path) -> Result<(Self, GeneratorMeta)> {
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: GeneratorMeta = serde_json::from_str(&text)?;
        let mut g = build_generator(meta.config, meta.seed)?;
        g.net.params_mut().load(&read_checkpoint(path)?)?;
        g.semg_stats = meta.semg_stats.clone();
        g.imu_stats = meta.imu_stats.clone();
        Ok((g, meta))
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn probabilities(&self, imu: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer(imu)
    }
}

/// JSON sidecar stored with a generator checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub config: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: super::GanTrainConfig,
    pub semg_stats: Option<ChannelStats>,
    pub imu_stats: Option<ChannelStats>,
    pub imu_modality: Modality,
    pub seed: u64,
    /// SHA-256 of the training tensors.
    pub data_fingerprint: String,
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out_shapes(net: &Sequential<f32>) -> Vec<Vec<usize>> {
        net.layers().iter().map(|l| l.out_shape.clone()).collect()
    }

    #[test]
    fn generator_shapes_for_db2_geometry() {
        let g = build_generator::<f32>(GeneratorConfig::new(20, 12, 36), 1).unwrap();
        let shapes = out_shapes(&g.net);
        assert_eq!(shapes[0], vec![32, 20, 24]);
        assert_eq!(shapes[3], vec![16, 20, 48]);
        assert_eq!(shapes[6], vec![1, 20, 96]);
        assert_eq!(shapes[9], vec![1920]);
        assert_eq!(shapes[10], vec![720]);
        assert_eq!(g.net.output_shape(), &[1, 20, 36]);
        let dense = g.net.params().by_name("10.dense.weight").unwrap();
        let bias = g.net.params().by_name("10.dense.bias").unwrap();
        assert_eq!(dense.value.len() + bias.value.len(), 1920 * 720 + 720);
    }

    #[test]
    fn generator_dense_width_for_euler_geometry() {
        let g = build_generator::<f32>(GeneratorConfig::new(20, 8, 3), 1).unwrap();
        assert_eq!(g.net.layers()[10].out_shape, vec![60]);
    }

    #[test]
    fn final_batchnorm_flag_drops_one_layer() {
        let mut cfg = GeneratorConfig::new(20, 8, 3);
        cfg.final_batchnorm = false;
        assert_eq!(cfg.layers().len(), GeneratorConfig::new(20, 8, 3).layers().len() - 1);
        assert!(build_generator::<f32>(cfg, 0).is_ok());
    }

    #[test]
    fn discriminator_shapes() {
        let d = build_discriminator::<f32>(DiscriminatorConfig::new(20, 36), 1).unwrap();
        assert_eq!(d.net.layers()[0].out_shape, vec![16, 6, 12]);
        assert_eq!(d.net.layers()[4].out_shape, vec![1152]);
        assert_eq!(d.net.output_shape(), &[1]);
        let d = build_discriminator::<f32>(DiscriminatorConfig::new(20, 3), 1).unwrap();
        assert_eq!(d.net.layers()[0].out_shape, vec![16, 6, 1]);
        assert!(matches!(build_discriminator::<f32>(DiscriminatorConfig::new(20, 2), 1), Err(Error::Config(_))));
    }

    #[test]
    fn discriminator_output_is_a_probability() {
        let d = build_discriminator::<f64>(DiscriminatorConfig::new(9, 6), 3).unwrap();
        let x = Tensor::from_vec(vec![3, 1, 9, 6], (0..162).map(|i| (i as f64 - 80.0) * 10.0).collect()).unwrap();
        for p in d.probabilities(&x).unwrap().values() {
            assert!(*p >= 0.0 && *p <= 1.0);
        }
    }

    #[test]
    fn virtual_windows_have_imu_shape_and_tanh_range() {
        let g = build_generator::<f32>(GeneratorConfig::new(20, 12, 36), 4).unwrap();
        let semg: Vec<SignalWindow<f32>> = (0..3)
            .map(|i| SignalWindow::new((0..240).map(|v| ((v * (i + 1)) as f32 * 0.1).sin() * 5.0).collect(), 20, 12, i, Modality::Semg).unwrap())
            .collect();
        let out = g.generate_virtual(&semg, Modality::Acc).unwrap();
        assert_eq!(out.len(), 3);
        for w in &out {
            assert_eq!((w.frames, w.channels), (20, 36));
            assert!(w.data.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
        assert_eq!(out, g.generate_virtual(&semg, Modality::Acc).unwrap());
    }

    #[test]
    fn stats_mismatch_is_reported() {
        let mut g = build_generator::<f32>(GeneratorConfig::new(5, 3, 3), 4).unwrap();
        g.imu_stats = Some(ChannelStats {
            min: vec![0.0; 2],
            max: vec![1.0; 2],
            mean: vec![0.5; 2],
            std: vec![0.1; 2],
        });
        let w = SignalWindow::new(vec![0.0f32; 15], 5, 3, 0, Modality::Semg).unwrap();
        assert!(matches!(g.generate_virtual(&[w], Modality::Euler), Err(Error::StatsMismatch { .. })));
    }
}
