use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::kernels::{conv_out, tconv_out, Grid};

/// One layer of a sequential network together with its hyperparameters.
/// Shapes exclude the batch axis; spatial tensors are `maps x height x width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        maps: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
    Tconv2d {
        maps: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        output_padding: [usize; 2],
    },
    /// Unshared-weight convolution; only the 1x1, stride 1 form is supported.
    LocallyConnected {
        maps: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    Dense {
        units: usize,
    },
    Batchnorm,
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
    Softmax,
    Dropout {
        rate: f64,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn conv(maps: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            maps,
            kernel: [kernel; 2],
            stride: [stride; 2],
            padding: [padding; 2],
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn local1x1(maps: usize) -> Self {
        LayerSpec::LocallyConnected {
            maps,
            kernel: [1, 1],
            stride: [1, 1],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Tconv2d { .. } => "tconv2d",
            LayerSpec::LocallyConnected { .. } => "locally_connected",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Batchnorm => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// Output shape for a given input shape, or a dimension error naming `index`.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let err = |detail: String| Error::dim(index, self.name(), detail);
        let spatial = || -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(err(format!("expects maps x height x width, got {input:?}"))),
            }
        };
        let positive = |what: &str, v: [usize; 2]| -> Result<()> {
            if v[0] == 0 || v[1] == 0 {
                Err(err(format!("{what} components must be >= 1, got {v:?}")))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Conv2d {
                maps,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = spatial()?;
                positive("stride", *stride)?;
                positive("kernel", *kernel)?;
                if *maps == 0 {
                    return Err(err("zero output maps".into()));
                }
                let oh = conv_out(h, kernel[0], stride[0], padding[0]);
                let ow = conv_out(w, kernel[1], stride[1], padding[1]);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![*maps, oh, ow]),
                    _ => Err(err(format!("kernel {kernel:?} does not fit input {h}x{w} with padding {padding:?}"))),
                }
            }
            LayerSpec::Tconv2d {
                maps,
                kernel,
                stride,
                padding,
                output_padding,
            } => {
                let (_, h, w) = spatial()?;
                positive("stride", *stride)?;
                positive("kernel", *kernel)?;
                if *maps == 0 {
                    return Err(err("zero output maps".into()));
                }
                if output_padding[0] >= stride[0] || output_padding[1] >= stride[1] {
                    return Err(err(format!("output padding {output_padding:?} must be below stride {stride:?}")));
                }
                let oh = tconv_out(h, kernel[0], stride[0], padding[0], output_padding[0]);
                let ow = tconv_out(w, kernel[1], stride[1], padding[1], output_padding[1]);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![*maps, oh, ow]),
                    _ => Err(err("non-positive output size".into())),
                }
            }
            LayerSpec::LocallyConnected { maps, kernel, stride } => {
                let (_, h, w) = spatial()?;
                if *kernel != [1, 1] || *stride != [1, 1] {
                    return Err(err(format!(
                        "only 1x1 kernels with stride 1 are supported, got {kernel:?} / {stride:?}"
                    )));
                }
                if *maps == 0 {
                    return Err(err("zero output maps".into()));
                }
                Ok(vec![*maps, h, w])
            }
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(err(format!("expects a flat feature vector, got {input:?}")));
                }
                if *units == 0 {
                    return Err(err("zero units".into()));
                }
                Ok(vec![*units])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(err(format!("expects a flat vector, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::LeakyRelu { slope } => {
                if !slope.is_finite() {
                    return Err(err("non-finite slope".into()));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(err(format!("rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Batchnorm => {
                if input.is_empty() || input.len() == 2 || input.len() > 3 {
                    return Err(err(format!("expects features or maps x h x w, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() || shape.contains(&0) {
                    return Err(err(format!("cannot reshape {input:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
        }
    }
}

/// Grid of a forward convolution from `input` (`c x h x w`) to `output`.
pub(crate) fn conv_grid(input: &[usize], output: &[usize], kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2]) -> Grid {
    Grid {
        channels: input[0],
        h: input[1],
        w: input[2],
        kh: kernel[0],
        kw: kernel[1],
        sh: stride[0],
        sw: stride[1],
        ph: padding[0],
        pw: padding[1],
        oh: output[1],
        ow: output[2],
    }
}

/// A layer placed in a network: its spec, resolved shapes and parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub(crate) slots: Vec<usize>,
}
