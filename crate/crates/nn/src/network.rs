use crate::{Layer, Tensor};

/// Named view of one parameter tensor and its gradient accumulator.
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
    pub grad: &'a mut [f64],
}

macro_rules! param_view {
    ($out:expr, $i:expr, $tag:expr, $w:expr, $g:expr) => {{
        let shape = $w.shape().to_vec();
        $out.push(ParamView {
            name: format!("layer{}.{}", $i, $tag),
            shape,
            data: $w.as_slice_mut().unwrap(),
            grad: $g.as_slice_mut().unwrap(),
        });
    }};
}

/// A feed-forward stack of layers with explicit activation caching.
#[derive(Debug, Clone, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        x
    }

    /// Forward pass that keeps each layer's input for a later backward call.
    pub fn forward_cached(&self, input: &Tensor) -> (Tensor, Vec<Tensor>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.forward(&x);
            caches.push(x);
            x = y;
        }
        (x, caches)
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients.
    pub fn backward(&mut self, caches: &[Tensor], grad_out: Tensor) -> Tensor {
        assert_eq!(caches.len(), self.layers.len(), "cache/layer mismatch");
        let mut g = grad_out;
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Mutable views over every parameter tensor, in a stable order.
    pub fn params_mut(&mut self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(l) => {
                    param_view!(out, i, "weight", l.weight, l.grad_weight);
                    param_view!(out, i, "bias", l.bias, l.grad_bias);
                }
                Layer::ConvT(l) => {
                    param_view!(out, i, "weight", l.weight, l.grad_weight);
                    param_view!(out, i, "bias", l.bias, l.grad_bias);
                }
                Layer::Dense(l) => {
                    param_view!(out, i, "weight", l.weight, l.grad_weight);
                    param_view!(out, i, "bias", l.bias, l.grad_bias);
                }
                Layer::Dueling(l) => {
                    param_view!(out, i, "value.weight", l.value.weight, l.value.grad_weight);
                    param_view!(out, i, "value.bias", l.value.bias, l.value.grad_bias);
                    param_view!(
                        out,
                        i,
                        "advantage.weight",
                        l.advantage.weight,
                        l.advantage.grad_weight
                    );
                    param_view!(out, i, "advantage.bias", l.advantage.bias, l.advantage.grad_bias);
                }
                Layer::Relu | Layer::Elu | Layer::Flatten | Layer::Reshape(..) => {}
            }
        }
        out
    }

    /// Copies every parameter from `source` (used for target-network sync).
    pub fn copy_params_from(&mut self, source: &Network) {
        let mut src = source.clone();
        let src_params = src.params_mut();
        let dst_params = self.params_mut();
        assert_eq!(src_params.len(), dst_params.len(), "param count mismatch");
        for (d, s) in dst_params.into_iter().zip(src_params) {
            assert_eq!(d.shape, s.shape, "param shape mismatch for {}", d.name);
            d.data.copy_from_slice(s.data);
        }
    }

    pub fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.data.len()).sum()
    }
}
