use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    concat_features, decode_checkpoint, derive_seed, encode_checkpoint, rng_from_seed, split_features, InitScheme, LayerSpec,
    Mode, ParamSet, Sequential, Tensor,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Window length in frames.
    pub k: usize,
    pub channels: usize,
    pub conv_maps: usize,
    pub lc_maps: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl StreamConfig {
    pub fn new(k: usize, channels: usize) -> Self {
        StreamConfig {
            k,
            channels,
            conv_maps: 64,
            lc_maps: 64,
            hidden: 512,
            dropout: 0.5,
        }
    }

    /// Same geometry with narrower layers.
    pub fn with_widths(mut self, conv_maps: usize, lc_maps: usize, hidden: usize) -> Self {
        self.conv_maps = conv_maps;
        self.lc_maps = lc_maps;
        self.hidden = hidden;
        self
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.k, self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.channels == 0 || self.conv_maps == 0 || self.lc_maps == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("degenerate stream {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        vec![
            Batchnorm,
            LayerSpec::conv(self.conv_maps, 3, 1, 1),
            Batchnorm,
            Relu,
            LayerSpec::conv(self.conv_maps, 3, 1, 1),
            Batchnorm,
            Relu,
            LayerSpec::local1x1(self.lc_maps),
            Batchnorm,
            Relu,
            LayerSpec::local1x1(self.lc_maps),
            Batchnorm,
            Relu,
            Flatten,
            LayerSpec::dense(self.hidden),
            Dropout { rate: self.dropout },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub hidden: usize,
    pub classes: usize,
}

impl FusionConfig {
    pub fn new(classes: usize) -> Self {
        FusionConfig { hidden: 512, classes }
    }

    fn layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Relu,
            LayerSpec::dense(self.hidden),
            LayerSpec::Batchnorm,
            LayerSpec::Relu,
            LayerSpec::dense(self.classes),
            LayerSpec::Softmax,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// sEMG stream first, then the IMU stream if any.
    pub streams: Vec<StreamConfig>,
    pub fusion: FusionConfig,
    pub seed: u64,
}

/// One or two streams whose outputs are concatenated into a shared head.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    pub config: ClassifierConfig,
    pub streams: Vec<Sequential<T>>,
    pub head: Sequential<T>,
}

const STREAM_PREFIX: [&str; 2] = ["semg", "imu"];

fn build<T: Scalar>(config: ClassifierConfig) -> Result<Classifier<T>> {
    if config.fusion.classes < 2 {
        return Err(Error::Config(format!("{} classes; at least 2 required", config.fusion.classes)));
    }
    if config.fusion.hidden == 0 {
        return Err(Error::Config("fusion head needs hidden units".into()));
    }
    if config.streams.is_empty() || config.streams.len() > 2 {
        return Err(Error::Config(format!("{} streams; expected 1 or 2", config.streams.len())));
    }
    for s in &config.streams {
        s.validate()?;
    }
    if config.streams.iter().any(|s| s.k != config.streams[0].k) {
        return Err(Error::Config("streams disagree on the window length".into()));
    }
    // Seeds are drawn in a fixed order so the sEMG stream of a unimodal model
    // starts from the same weights as in the multimodal one.
    let mut root = rng_from_seed(config.seed);
    let seeds = [derive_seed(&mut root), derive_seed(&mut root)];
    let head_seed = derive_seed(&mut root);
    let mut streams = Vec::new();
    for (s, seed) in config.streams.iter().zip(seeds) {
        let net = Sequential::new(&s.input_shape(), s.layers(), InitScheme::HeNormal, seed)?;
        let (h, w) = (net.layers()[13].in_shape[1], net.layers()[13].in_shape[2]);
        if (h, w) != (s.k, s.channels) {
            return Err(Error::Config(format!("stream maps {h}x{w}, expected {}x{}", s.k, s.channels)));
        }
        streams.push(net);
    }
    let width: usize = config.streams.iter().map(|s| s.hidden).sum();
    let head = Sequential::new(&[width], config.fusion.layers(), InitScheme::HeNormal, head_seed)?;
    Ok(Classifier { config, streams, head })
}

/// sEMG and IMU streams feeding one fusion head.
pub fn build_multimodal<T: Scalar>(semg: StreamConfig, imu: StreamConfig, fusion: FusionConfig, seed: u64) -> Result<Classifier<T>> {
    build(ClassifierConfig {
        streams: vec![semg, imu],
        fusion,
        seed,
    })
}

/// A single sEMG stream feeding the fusion head.
pub fn build_unimodal<T: Scalar>(semg: StreamConfig, fusion: FusionConfig, seed: u64) -> Result<Classifier<T>> {
    build(ClassifierConfig {
        streams: vec![semg],
        fusion,
        seed,
    })
}

impl<T: Scalar> Classifier<T> {
    pub fn from_config(config: ClassifierConfig) -> Result<Self> {
        build(config)
    }

    pub fn is_multimodal(&self) -> bool {
        self.streams.len() == 2
    }

    pub fn classes(&self) -> usize {
        self.config.fusion.classes
    }

    pub fn trainable_count(&self) -> usize {
        self.streams.iter().map(|s| s.params().trainable_count()).sum::<usize>() + self.head.params().trainable_count()
    }

    fn check_inputs(&self, inputs: &[&Tensor<T>]) -> Result<()> {
        if inputs.len() != self.streams.len() {
            return Err(Error::ModalityMismatch {
                expected: format!("{} input streams", self.streams.len()),
                actual: format!("{} input streams", inputs.len()),
            });
        }
        let n = inputs[0].batch();
        for (x, net) in inputs.iter().zip(&self.streams) {
            if x.rank() != 4 || &x.shape()[1..] != net.input_shape() || x.batch() != n {
                return Err(Error::Shape(format!(
                    "stream input {:?} does not match (n, {:?})",
                    x.shape(),
                    net.input_shape()
                )));
            }
        }
        Ok(())
    }

    /// Training-time forward pass returning class probabilities.
    pub fn forward<R: RngCore + ?Sized>(&mut self, inputs: &[&Tensor<T>], mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        self.check_inputs(inputs)?;
        let mut feats = Vec::with_capacity(inputs.len());
        for (x, net) in inputs.iter().zip(self.streams.iter_mut()) {
            feats.push(net.forward(x, mode, rng)?);
        }
        let refs: Vec<&Tensor<T>> = feats.iter().collect();
        self.head.forward(&concat_features(&refs)?, mode, rng)
    }

    pub fn backward(&mut self, dprobs: &Tensor<T>) -> Result<()> {
        let dz = self.head.backward(dprobs, true)?.expect("input gradient requested");
        let widths: Vec<usize> = self.config.streams.iter().map(|s| s.hidden).collect();
        for (g, net) in split_features(&dz, &widths)?.iter().zip(self.streams.iter_mut()) {
            net.backward(g, false)?;
        }
        Ok(())
    }

    /// Eval-mode probabilities.
    pub fn infer(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.check_inputs(inputs)?;
        let feats = inputs
            .iter()
            .zip(&self.streams)
            .map(|(x, net)| net.infer(x))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<T>> = feats.iter().collect();
        self.head.infer(&concat_features(&refs)?)
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.streams {
            s.zero_grad();
        }
        self.head.zero_grad();
    }

    /// Parameter sets with their checkpoint prefixes.
    pub fn param_sets(&self) -> Vec<(&'static str, &ParamSet<T>)> {
        let mut out: Vec<_> = self.streams.iter().zip(STREAM_PREFIX).map(|(s, p)| (p, s.params())).collect();
        out.push(("head", self.head.params()));
        out
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet<T>> {
        let mut out: Vec<_> = self.streams.iter_mut().map(|s| s.params_mut()).collect();
        out.push(self.head.params_mut());
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.param_sets()
            .into_iter()
            .flat_map(|(prefix, ps)| ps.named_tensors().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t)))
            .collect()
    }

    pub fn load_tensors<U: Scalar>(&mut self, tensors: &[(String, Tensor<U>)]) -> Result<()> {
        let mut sets: Vec<(&str, &mut ParamSet<T>)> =
            self.streams.iter_mut().zip(STREAM_PREFIX).map(|(s, p)| (p, s.params_mut())).collect();
        sets.push(("head", self.head.params_mut()));
        for (prefix, ps) in sets {
            let lead = format!("{prefix}.");
            let own: Vec<(String, Tensor<U>)> = tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(&lead).map(|rest| (rest.to_string(), t.clone())))
                .collect();
            ps.load(&own)?;
        }
        Ok(())
    }

    /// Weights go to `path`, the configuration to `path` + ".json".
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_checkpoint(&self.named_tensors());
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let sidecar = crate::genmodel::sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.config)?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = crate::genmodel::sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let mut clf = build(serde_json::from_str(&text)?)?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        clf.load_tensors(&decode_checkpoint(&bytes)?)?;
        Ok(clf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::param_digest;

    #[test]
    fn full_geometry_shapes() {
        let clf = build_multimodal::<f32>(StreamConfig::new(20, 12), StreamConfig::new(20, 36), FusionConfig::new(50), 1).unwrap();
        let s = &clf.streams[0];
        for l in &s.layers()[1..13] {
            assert_eq!(&l.out_shape[1..], &[20, 12]);
        }
        assert_eq!(s.layers()[13].out_shape, vec![15360]);
        assert_eq!(s.output_shape(), &[512]);
        assert_eq!(clf.head.input_shape(), &[1024]);
        assert_eq!(clf.head.output_shape(), &[50]);
    }

    #[test]
    fn unimodal_count_is_multimodal_minus_imu_stream() {
        let (s, i, f) = (StreamConfig::new(20, 8), StreamConfig::new(20, 3), FusionConfig::new(38));
        let multi = build_multimodal::<f32>(s, i, f, 5).unwrap();
        let uni = build_unimodal::<f32>(s, f, 5).unwrap();
        let imu_stream = multi.streams[1].params().trainable_count();
        // the head's first dense layer loses 512 inputs per hidden unit
        let head_width_diff = 512 * f.hidden;
        assert_eq!(uni.trainable_count(), multi.trainable_count() - imu_stream - head_width_diff);
        assert_eq!(param_digest(uni.streams[0].params()), param_digest(multi.streams[0].params()));
    }

    #[test]
    fn mismatched_window_length() {
        let r = build_multimodal::<f32>(StreamConfig::new(20, 8), StreamConfig::new(10, 3), FusionConfig::new(4), 0);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(build_unimodal::<f32>(StreamConfig::new(20, 8), FusionConfig::new(1), 0).is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let s = StreamConfig::new(6, 4).with_widths(4, 4, 8);
        let i = StreamConfig::new(6, 3).with_widths(4, 4, 8);
        let f = FusionConfig { hidden: 8, classes: 5 };
        let clf = build_multimodal::<f64>(s, i, f, 2).unwrap();
        let a = Tensor::from_vec(vec![3, 1, 6, 4], (0..72).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let b = Tensor::from_vec(vec![3, 1, 6, 3], (0..54).map(|v| (v as f64 * 0.11).cos()).collect()).unwrap();
        let p = clf.infer(&[&a, &b]).unwrap();
        assert_eq!(p.shape(), &[3, 5]);
        for row in p.values().chunks(5) {
            assert!(row.iter().all(|&v| v > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(clf.infer(&[&a]), Err(Error::ModalityMismatch { .. })));
        assert!(matches!(clf.infer(&[&b, &a]), Err(Error::Shape(_))));
    }

    #[test]
    fn imu_stream_does_not_affect_semg_features() {
        let s = StreamConfig::new(6, 4).with_widths(4, 4, 8);
        let i = StreamConfig::new(6, 3).with_widths(4, 4, 8);
        let mut clf = build_multimodal::<f64>(s, i, FusionConfig { hidden: 8, classes: 3 }, 9).unwrap();
        let a = Tensor::from_vec(vec![2, 1, 6, 4], (0..48).map(|v| (v as f64 * 0.5).sin()).collect()).unwrap();
        let before = clf.streams[0].infer(&a).unwrap();
        for p in clf.streams[1].params_mut().iter_mut() {
            p.value = p.value.map(|v| v * 3.0 + 1.0);
        }
        assert_eq!(before, clf.streams[0].infer(&a).unwrap());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        let s = StreamConfig::new(6, 4).with_widths(4, 4, 8);
        let clf = build_unimodal::<f32>(s, FusionConfig { hidden: 8, classes: 3 }, 4).unwrap();
        clf.save(&path).unwrap();
        let back = Classifier::<f32>::load(&path).unwrap();
        assert_eq!(back.named_tensors(), clf.named_tensors());
        assert_eq!(back.config, clf.config);
    }
}
