use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// One layer of a feed-forward stack.
///
/// Convolutions are stride 1 with no padding. Activations travel between
/// layers flattened in channel-major order, so `Flatten` only changes how the
/// next layer interprets the shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    Conv {
        channels: usize,
        kernel: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv { .. })
    }
}

/// Activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    /// Either `[features]` or `[channels, height, width]`.
    pub input: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Geometry of a parameterized layer after shape inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGeometry {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        in_height: usize,
        in_width: usize,
    },
}

impl ParamGeometry {
    /// Weight matrix dimensions `(rows, cols)`.
    pub fn weight_dims(&self) -> (usize, usize) {
        match *self {
            ParamGeometry::Dense { inputs, outputs } => (outputs, inputs),
            ParamGeometry::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels, in_channels * kernel * kernel),
        }
    }

    pub fn fan_in_out(&self) -> (usize, usize) {
        match *self {
            ParamGeometry::Dense { inputs, outputs } => (inputs, outputs),
            ParamGeometry::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
        }
    }

    pub fn bias_len(&self) -> usize {
        self.weight_dims().0
    }
}

impl ArchitectureSpec {
    pub fn input_shape(&self) -> Result<Shape> {
        match self.input.as_slice() {
            [n] if *n > 0 => Ok(Shape::Flat(*n)),
            [c, h, w] if *c > 0 && *h > 0 && *w > 0 => Ok(Shape::Image {
                channels: *c,
                height: *h,
                width: *w,
            }),
            other => bail!(Shape, "input shape {other:?} must be [features] or [channels, height, width] with nonzero entries"),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Infers every layer's output shape, checking that adjacent layers compose.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.classes < 2 {
            bail!(Shape, "class count must be at least 2, got {}", self.classes);
        }
        if !self.layers.iter().any(LayerSpec::has_params) {
            bail!(Shape, "architecture needs at least one dense or conv layer");
        }
        let mut shape = self.input_shape()?;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape) {
                (LayerSpec::Dense { inputs, outputs }, Shape::Flat(n)) => {
                    if inputs != n {
                        bail!(Shape, "layer {i}: dense expects {inputs} inputs but receives {n}");
                    }
                    if outputs == 0 {
                        bail!(Shape, "layer {i}: dense with zero outputs");
                    }
                    Shape::Flat(outputs)
                }
                (LayerSpec::Dense { .. }, Shape::Image { .. }) => {
                    bail!(Shape, "layer {i}: dense after an image-shaped activation needs a flatten")
                }
                (
                    LayerSpec::Conv { channels, kernel },
                    Shape::Image {
                        height, width, ..
                    },
                ) => {
                    if channels == 0 || kernel == 0 || kernel > height || kernel > width {
                        bail!(Shape, "layer {i}: conv kernel {kernel} with {channels} channels does not fit {height}x{width}");
                    }
                    Shape::Image {
                        channels,
                        height: height - kernel + 1,
                        width: width - kernel + 1,
                    }
                }
                (LayerSpec::Conv { .. }, Shape::Flat(_)) => {
                    bail!(Shape, "layer {i}: conv needs an image-shaped input")
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, s) => Shape::Flat(s.len()),
            };
            out.push(shape);
        }
        match shape {
            Shape::Flat(n) if n == self.classes => Ok(out),
            s => bail!(Shape, "final layer produces {s:?}, expected {} logits", self.classes),
        }
    }

    /// Geometry of each parameterized layer, in layer order.
    pub fn param_geometry(&self) -> Result<Vec<ParamGeometry>> {
        let shapes = self.shapes()?;
        let mut prev = self.input_shape()?;
        let mut geoms = Vec::new();
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match (*layer, prev) {
                (LayerSpec::Dense { inputs, outputs }, _) => {
                    geoms.push(ParamGeometry::Dense { inputs, outputs })
                }
                (
                    LayerSpec::Conv { channels, kernel },
                    Shape::Image {
                        channels: in_channels,
                        height,
                        width,
                    },
                ) => geoms.push(ParamGeometry::Conv {
                    in_channels,
                    out_channels: channels,
                    kernel,
                    in_height: height,
                    in_width: width,
                }),
                _ => {}
            }
            prev = *shape;
        }
        Ok(geoms)
    }

    /// A two-layer perceptron `inputs -> hidden -> classes`.
    pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Self {
        ArchitectureSpec {
            input: vec![inputs],
            classes,
            layers: vec![
                LayerSpec::Dense {
                    inputs,
                    outputs: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: hidden,
                    outputs: classes,
                },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_stack_composes() {
        let arch = ArchitectureSpec {
            input: vec![1, 8, 8],
            classes: 3,
            layers: vec![
                LayerSpec::Conv {
                    channels: 2,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 72,
                    outputs: 3,
                },
            ],
        };
        let shapes = arch.shapes().unwrap();
        assert_eq!(
            shapes[0],
            Shape::Image {
                channels: 2,
                height: 6,
                width: 6
            }
        );
        assert_eq!(shapes[3], Shape::Flat(3));
        assert_eq!(arch.param_geometry().unwrap().len(), 2);
    }

    #[test]
    fn rejects_incomposable_shapes() {
        let mut arch = ArchitectureSpec::mlp(4, 5, 3);
        arch.layers[2] = LayerSpec::Dense {
            inputs: 6,
            outputs: 3,
        };
        assert!(arch.shapes().is_err());

        let one_class = ArchitectureSpec::mlp(4, 5, 1);
        assert!(one_class.shapes().is_err());

        let no_params = ArchitectureSpec {
            input: vec![2],
            classes: 2,
            layers: vec![LayerSpec::Relu],
        };
        assert!(no_params.shapes().is_err());

        let conv_on_flat = ArchitectureSpec {
            input: vec![16],
            classes: 2,
            layers: vec![LayerSpec::Conv {
                channels: 1,
                kernel: 2,
            }],
        };
        assert!(conv_on_flat.shapes().is_err());
    }

    #[test]
    fn layer_serde_uses_tagged_form() {
        let json = r#"{"input":[4],"classes":3,"layers":[{"type":"dense","in":4,"out":3}]}"#;
        let arch: ArchitectureSpec = serde_json::from_str(json).unwrap();
        assert_eq!(
            arch.layers[0],
            LayerSpec::Dense {
                inputs: 4,
                outputs: 3
            }
        );
        assert!(serde_json::from_str::<ArchitectureSpec>(
            r#"{"input":[4],"classes":3,"layers":[{"type":"dense","in":4,"out":3,"bogus":1}]}"#
        )
        .is_err());
    }
}
