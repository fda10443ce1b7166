use std::collections::BTreeMap;

use crate::config::LltConfig;
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Tensor};

pub const KERNEL_SIZE: usize = 3;

/// Which nonlinearity a layer applies after its convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Convolution, affine normalization, rectifier.
    Block,
    /// Bare convolution.
    Conv,
}

/// One convolution layer of the extractor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub out_ch: usize,
    pub in_ch: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl LayerSpec {
    fn new(name: impl Into<String>, kind: LayerKind, out_ch: usize, in_ch: usize, stride: usize, dilation: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            out_ch,
            in_ch,
            stride,
            dilation,
        }
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch, KERNEL_SIZE, KERNEL_SIZE]
    }

    /// Tensor names stored for this layer, with their shapes.
    pub fn tensors(&self) -> [(String, Vec<usize>); 4] {
        [
            (format!("{}.kernel", self.name), self.kernel_shape()),
            (format!("{}.bias", self.name), vec![self.out_ch]),
            (format!("{}.norm_scale", self.name), vec![self.out_ch]),
            (format!("{}.norm_shift", self.name), vec![self.out_ch]),
        ]
    }
}

pub fn visual_block_name() -> &'static str {
    "visual.block0"
}

pub fn visual_dilated_name(scale: usize) -> String {
    format!("visual.dil{scale}")
}

pub fn geo_down_name(i: usize) -> String {
    format!("geo.down{i}")
}

pub fn geo_scale_name(scale: usize) -> String {
    format!("geo.scale{scale}")
}

pub const GUIDE_BLOCK: &str = "guide.block0";
pub const GUIDE_CONV: &str = "guide.conv1";

/// Every layer the extractor needs under `cfg`, in evaluation order.
pub fn layer_specs(cfg: &LltConfig) -> Vec<LayerSpec> {
    use LayerKind::*;
    let mut layers = vec![LayerSpec::new(visual_block_name(), Block, cfg.d_c, 3, 1, 1)];
    for s in 1..=cfg.n_scales {
        layers.push(LayerSpec::new(visual_dilated_name(s), Block, cfg.d_c, cfg.d_c, 1, 2));
    }
    layers.push(LayerSpec::new(geo_down_name(0), Block, 32, 1, 2, 1));
    layers.push(LayerSpec::new(geo_down_name(1), Block, 256, 32, 2, 1));
    layers.push(LayerSpec::new(geo_down_name(2), Conv, cfg.d_d, 256, 2, 1));
    for s in 1..=cfg.n_scales {
        layers.push(LayerSpec::new(geo_scale_name(s), Block, cfg.d_d, cfg.d_d, 1, 1));
    }
    layers.push(LayerSpec::new(GUIDE_BLOCK, Block, 3, 1, 1, 1));
    layers.push(LayerSpec::new(GUIDE_CONV, Conv, 1, 3, 1, 1));
    layers
}

/// Named tensors covering every extractor layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelWeights {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; a name may only be inserted once.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate tensor name `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    /// Replaces or adds a tensor.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Checks that every layer required by `cfg` is present with the right shape.
    pub fn validate(&self, cfg: &LltConfig) -> Result<()> {
        for layer in layer_specs(cfg) {
            for (name, shape) in layer.tensors() {
                let t = self.get(&name).ok_or_else(|| Error::MissingWeight { layer: name.clone() })?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::WeightShape {
                        name,
                        expected: shape,
                        found: t.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Builds the convolution parameters of one layer.
    pub fn conv_params(&self, layer: &LayerSpec) -> Result<ConvParams> {
        let [kernel, bias, scale, shift] = layer.tensors().map(|(name, shape)| {
            let t = self.get(&name).ok_or_else(|| Error::MissingWeight { layer: name.clone() })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::WeightShape {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
            Ok(t.clone())
        });
        ConvParams::new(kernel?, bias?, layer.stride, layer.dilation, scale?, shift?)
    }
}
