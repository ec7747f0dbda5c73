use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, Tensor, Var};

/// Offset used by [`IntensityActivation::BiasedRelu`] when none is given.
pub const DEFAULT_RELU_EPS: f64 = 1e-3;

/// Same-padded convolution with a per-filter bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv2dLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv2dLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel_size * kernel_size;
        let kernel = store.add_uniform(
            format!("{name}.kernel"),
            &[out_channels, in_channels, kernel_size, kernel_size],
            fan_in,
            rng,
        );
        let bias = store.add_uniform(format!("{name}.bias"), &[out_channels], fan_in, rng);
        Conv2dLayer { kernel, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.kernel], Some(p[self.bias]), Padding::Same)
    }
}

/// Two same-padded convolutions with a tanh between them.
#[derive(Debug, Clone, Copy)]
pub struct ConvStack {
    pub first: Conv2dLayer,
    pub second: Conv2dLayer,
}

impl ConvStack {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Self {
        ConvStack {
            first: Conv2dLayer::new(store, &format!("{name}.conv1"), in_channels, channels, kernel_size, rng),
            second: Conv2dLayer::new(store, &format!("{name}.conv2"), channels, channels, kernel_size, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let a = self.first.forward(g, p, x)?;
        let a = g.tanh(a)?;
        self.second.forward(g, p, a)
    }
}

/// Hidden and cell maps of a conv-LSTM, each `[hidden, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize, height: usize, width: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[hidden, height, width]),
            c: Tensor::zeros(&[hidden, height, width]),
        }
    }
}

/// Convolutional LSTM cell. Gate blocks along the filter axis are ordered
/// input, forget, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmCell {
    pub input_kernels: ParamId,
    pub state_kernels: ParamId,
    pub bias: ParamId,
    pub input_channels: usize,
    pub hidden: usize,
    pub kernel_size: usize,
}

impl ConvLstmCell {
    pub const FORGET_BIAS: f64 = 1.0;

    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_channels: usize,
        hidden: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Self {
        let k2 = kernel_size * kernel_size;
        let fan_in = (input_channels + hidden) * k2;
        let input_kernels = store.add_uniform(
            format!("{name}.input_kernels"),
            &[4 * hidden, input_channels, kernel_size, kernel_size],
            fan_in,
            rng,
        );
        let state_kernels = store.add_uniform(
            format!("{name}.state_kernels"),
            &[4 * hidden, hidden, kernel_size, kernel_size],
            fan_in,
            rng,
        );
        let bias = store.add_uniform(format!("{name}.bias"), &[4 * hidden], fan_in, rng);
        store.get_mut(bias).data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|b| *b = Self::FORGET_BIAS);
        ConvLstmCell {
            input_kernels,
            state_kernels,
            bias,
            input_channels,
            hidden,
            kernel_size,
        }
    }

    /// One step: `c = f * c_prev + i * g`, `h = o * tanh(c)`.
    pub fn step(&self, g: &mut Graph, p: &Bound, h_prev: Var, c_prev: Var, x: Var) -> Result<(Var, Var)> {
        let (sh, sc, sx) = (g.shape(h_prev), g.shape(c_prev), g.shape(x));
        if sh != sc
            || sh.len() != 3
            || sx.len() != 3
            || sh[0] != self.hidden
            || sx[0] != self.input_channels
            || sh[1..] != sx[1..]
        {
            return Err(Error::input(format!(
                "conv_lstm_step: states {sh:?}/{sc:?} incompatible with input {sx:?} \
                 for {} input and {} hidden channels",
                self.input_channels, self.hidden
            )));
        }
        let from_input = g.conv2d(x, p[self.input_kernels], Some(p[self.bias]), Padding::Same)?;
        let from_state = g.conv2d(h_prev, p[self.state_kernels], None, Padding::Same)?;
        let pre = g.add(from_input, from_state)?;
        let n = self.hidden;
        let i = g.narrow(pre, 0, n)?;
        let i = g.sigmoid(i)?;
        let f = g.narrow(pre, n, n)?;
        let f = g.sigmoid(f)?;
        let o = g.narrow(pre, 2 * n, n)?;
        let o = g.sigmoid(o)?;
        let cand = g.narrow(pre, 3 * n, n)?;
        let cand = g.tanh(cand)?;
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => crate::tensor::sigmoid(x),
        }
    }
}

/// Affine layer `y = W x + b` followed by an activation; `W` is `[out, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Multi-layer perceptron over column vectors.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Builds layers chaining `widths`; every layer but the last uses `hidden`,
    /// the last uses `output`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let count = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                weight: store.add_uniform(format!("{name}.layer{i}.weight"), &[w[1], w[0]], w[0], rng),
                bias: store.add_uniform(format!("{name}.layer{i}.bias"), &[w[1]], w[0], rng),
                inputs: w[0],
                outputs: w[1],
                activation: if i + 1 == count { output } else { hidden },
            })
            .collect();
        Mlp { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    /// Applies the network to `x`, either a rank-1 `[in]` vector or a rank-2
    /// `[in, N]` matrix whose columns are evaluated independently.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let width = self.layers[0].inputs;
        let (rank1, cols) = match shape.as_slice() {
            [w] if *w == width => (true, 1),
            [w, n] if *w == width => (false, *n),
            _ => {
                return Err(Error::input(format!(
                    "mlp_forward: input {shape:?} does not match first layer width {width}"
                )))
            }
        };
        let mut a = if rank1 { g.reshape(x, &[width, 1])? } else { x };
        for layer in &self.layers {
            let z = g.matmul(p[layer.weight], a)?;
            let z = g.add_row_bias(z, p[layer.bias])?;
            a = layer.activation.apply(g, z)?;
        }
        let out = self.layers.last().expect("nonempty").outputs;
        if rank1 {
            g.reshape(a, &[out])
        } else {
            debug_assert_eq!(g.shape(a), &[out, cols]);
            Ok(a)
        }
    }
}

/// Output nonlinearity of the intensity head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IntensityActivation {
    Sigmoid,
    /// `eps + max(x, 0)`
    BiasedRelu {
        eps: f64,
    },
    /// `elu(x) + 1`
    EluPlusOne,
    /// `log(exp(x) + 1)`
    Softplus,
}

impl IntensityActivation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            IntensityActivation::Sigmoid => g.sigmoid(x),
            IntensityActivation::BiasedRelu { eps } => g.biased_relu(x, eps),
            IntensityActivation::EluPlusOne => g.elu_plus_one(x),
            IntensityActivation::Softplus => g.softplus(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        use crate::tensor::{elu_plus_one, sigmoid, softplus};
        match self {
            IntensityActivation::Sigmoid => sigmoid(x),
            IntensityActivation::BiasedRelu { eps } => eps + x.max(0.0),
            IntensityActivation::EluPlusOne => elu_plus_one(x),
            IntensityActivation::Softplus => softplus(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntensityActivation::Sigmoid => "sigmoid",
            IntensityActivation::BiasedRelu { .. } => "biased_relu",
            IntensityActivation::EluPlusOne => "elu_plus_one",
            IntensityActivation::Softplus => "softplus",
        }
    }
}

/// Pointwise application of an intensity activation to a tensor.
pub fn activation_eval(sigma: IntensityActivation, x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigma.eval(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("activations map finite to finite")
}
