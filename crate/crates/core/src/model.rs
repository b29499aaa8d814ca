//! Layer specifications, models, datasets and static shape chaining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    Maxpool2d,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// `weight` is `[out_units, in_units]`.
    Dense { weight: Tensor, bias: Tensor },
    /// `weight` is `[out_ch, in_ch, kh, kw]`; padding is symmetric zero padding.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool2d { window: usize, stride: usize },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Maxpool2d { .. } => LayerKind::Maxpool2d,
            LayerSpec::Flatten => LayerKind::Flatten,
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            LayerSpec::Dense { weight, .. } | LayerSpec::Conv2d { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            LayerSpec::Dense { weight, .. } | LayerSpec::Conv2d { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            LayerSpec::Dense { bias, .. } | LayerSpec::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    /// Output shape for a given input shape, validating this layer's parameters.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let invalid = |message: String| Error::InvalidLayer {
            layer: index,
            message,
        };
        match self {
            LayerSpec::Dense { weight, bias } => {
                if weight.rank() != 2 {
                    return Err(invalid(format!(
                        "dense weight must be rank 2, got shape {:?}",
                        weight.shape()
                    )));
                }
                let (out_units, in_units) = (weight.shape()[0], weight.shape()[1]);
                if bias.shape() != [out_units] {
                    return Err(invalid(format!(
                        "bias shape {:?} does not match {out_units} output units",
                        bias.shape()
                    )));
                }
                if input != [in_units] {
                    return Err(Error::ShapeMismatch {
                        layer: index,
                        expected: vec![in_units],
                        actual: input.to_vec(),
                    });
                }
                Ok(vec![out_units])
            }
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                if weight.rank() != 4 {
                    return Err(invalid(format!(
                        "conv2d weight must be rank 4, got shape {:?}",
                        weight.shape()
                    )));
                }
                let ws = weight.shape();
                let (out_ch, in_ch, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                if bias.shape() != [out_ch] {
                    return Err(invalid(format!(
                        "bias shape {:?} does not match {out_ch} output channels",
                        bias.shape()
                    )));
                }
                if *stride == 0 {
                    return Err(invalid("stride must be positive".into()));
                }
                if input.len() != 3 || input[0] != in_ch {
                    return Err(Error::ShapeMismatch {
                        layer: index,
                        expected: vec![in_ch, 0, 0],
                        actual: input.to_vec(),
                    });
                }
                let oh = conv_output_dim(input[1], *padding, kh, *stride)?;
                let ow = conv_output_dim(input[2], *padding, kw, *stride)?;
                Ok(vec![out_ch, oh, ow])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Maxpool2d { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err(invalid("window and stride must be positive".into()));
                }
                if input.len() != 3 {
                    return Err(Error::ShapeMismatch {
                        layer: index,
                        expected: vec![0, 0, 0],
                        actual: input.to_vec(),
                    });
                }
                let oh = conv_output_dim(input[1], 0, *window, *stride)?;
                let ow = conv_output_dim(input[2], 0, *window, *stride)?;
                Ok(vec![input[0], oh, ow])
            }
            LayerSpec::Flatten => Ok(vec![numel(input)]),
        }
    }
}

/// `floor((input + 2*padding - kernel) / stride) + 1`, or an error if that is below 1.
pub fn conv_output_dim(input: usize, padding: usize, kernel: usize, stride: usize) -> Result<usize> {
    let span = (input + 2 * padding) as i64 - kernel as i64;
    if span < 0 || stride == 0 {
        let out = if stride == 0 { 0 } else { span.div_euclid(stride as i64) + 1 };
        return Err(Error::Dimension(out.min(0), input, padding, kernel, stride));
    }
    Ok(span as usize / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Model {
    /// Builds a model and validates shape chaining from `input_shape`.
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let model = Self {
            name: name.into(),
            input_shape,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidLayer {
                layer: 0,
                message: format!("invalid input shape {:?}", self.input_shape),
            });
        }
        self.layer_shapes()?;
        if !self.layers.iter().any(LayerSpec::is_weighted) {
            return Err(Error::NoWeightedLayer);
        }
        Ok(())
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer.output_shape(i, &current)?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    /// Input shape of layer `index`.
    pub fn layer_input_shape(&self, index: usize) -> Result<Vec<usize>> {
        if index == 0 {
            return Ok(self.input_shape.clone());
        }
        let shapes = self.layer_shapes()?;
        Ok(shapes[index - 1].clone())
    }

    pub fn weighted_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.layer_shapes()
            .ok()
            .and_then(|s| s.last().map(|s| numel(s)))
            .unwrap_or(0)
    }

    pub fn weighted_layer(&self, index: usize) -> Result<&LayerSpec> {
        match self.layers.get(index) {
            Some(layer) if layer.is_weighted() => Ok(layer),
            Some(_) => Err(Error::NotWeighted(index)),
            None => Err(Error::IndexOutOfRange {
                what: "layer",
                index,
                len: self.layers.len(),
            }),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight().map_or(0, Tensor::len) + l.bias().map_or(0, Tensor::len))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[N, ...input_shape]`
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        samples: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            samples,
            labels,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.samples.rank() < 2 || self.samples.shape()[0] != n {
            return Err(Error::InvalidDataset(format!(
                "samples shape {:?} does not hold {n} samples",
                self.samples.shape()
            )));
        }
        if self.class_names.is_empty() {
            return Err(Error::InvalidDataset("no class names".into()));
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.class_names.len())
        {
            return Err(Error::InvalidDataset(format!(
                "label {l} at index {i} is not below num_classes {}",
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn sample(&self, index: usize) -> Result<Tensor> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                what: "sample",
                index,
                len: self.len(),
            });
        }
        Ok(self.samples.slice_outer(index))
    }

    /// Checks the dataset can be fed to `model`.
    pub fn check_compatible(&self, model: &Model) -> Result<()> {
        if self.sample_shape() != model.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: model.input_shape.clone(),
                actual: self.sample_shape().to_vec(),
            });
        }
        let classes = model.num_classes();
        if classes != self.num_classes() {
            return Err(Error::InvalidDataset(format!(
                "model produces {classes} scores but dataset has {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(out: usize, inp: usize) -> LayerSpec {
        LayerSpec::Dense {
            weight: Tensor::zeros(vec![out, inp]),
            bias: Tensor::zeros(vec![out]),
        }
    }

    #[test]
    fn chains_cnn_shapes() {
        let model = Model::new(
            "cnn",
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv2d {
                    weight: Tensor::zeros(vec![4, 1, 3, 3]),
                    bias: Tensor::zeros(vec![4]),
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::Maxpool2d { window: 2, stride: 2 },
                LayerSpec::Flatten,
                dense(3, 36),
            ],
        )
        .unwrap();
        let shapes = model.layer_shapes().unwrap();
        assert_eq!(shapes[0], vec![4, 6, 6]);
        assert_eq!(shapes[2], vec![4, 3, 3]);
        assert_eq!(shapes[3], vec![36]);
        assert_eq!(model.num_classes(), 3);
        assert_eq!(model.weighted_layers(), vec![0, 4]);
    }

    #[test]
    fn shape_chain_violation_names_layer() {
        let err = Model::new("m", vec![4], vec![dense(3, 4), LayerSpec::Relu, dense(2, 5)]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { layer: 2, .. }), "{err}");
    }

    #[test]
    fn requires_weighted_layer() {
        let err = Model::new("m", vec![4], vec![LayerSpec::Relu]).unwrap_err();
        assert!(matches!(err, Error::NoWeightedLayer));
    }

    #[test]
    fn conv_output_dim_formula() {
        assert_eq!(conv_output_dim(8, 0, 3, 1).unwrap(), 6);
        assert_eq!(conv_output_dim(8, 1, 3, 2).unwrap(), 4);
        assert_eq!(conv_output_dim(7, 0, 2, 2).unwrap(), 3);
        assert!(conv_output_dim(2, 0, 3, 1).is_err());
    }

    #[test]
    fn dataset_label_bounds() {
        let err = Dataset::new(
            "d",
            Tensor::zeros(vec![2, 3]),
            vec![0, 2],
            vec!["a".into(), "b".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));
        assert!(matches!(
            Dataset::new("d", Tensor::zeros(vec![0, 3]), vec![], vec!["a".into()]),
            Err(Error::EmptyDataset)
        ));
    }
}
