use rand::Rng;

use crate::error::ConfigError;
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{uniform_init, ParamId, ParamStore};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Sigmoid,
    Softmax,
    Relu,
}

/// Fully connected layer `y = act(x · Wᵀ + b)` with `W: outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, ConfigError> {
        if inputs == 0 || outputs == 0 {
            return Err(ConfigError::new(format!("layer `{name}` has a zero width")));
        }
        let w = store.insert(format!("{name}.w"), uniform_init(&[outputs, inputs], inputs, rng))?;
        let b = store.insert(format!("{name}.b"), uniform_init(&[outputs], inputs, rng))?;
        Ok(Self { name: name.to_string(), w, b, inputs, outputs, activation })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var, ConfigError> {
        let width = g.value(x).cols();
        if width != self.inputs {
            return Err(ConfigError::new(format!(
                "layer `{}` expects input width {}, got {width}",
                self.name, self.inputs
            )));
        }
        let w = g.param(self.w);
        let b = g.param(self.b);
        let z = g.matmul_nt(x, w);
        let z = g.add_bias(z, b);
        Ok(match self.activation {
            Activation::None => z,
            Activation::Sigmoid => g.sigmoid(z),
            Activation::Softmax => g.softmax_rows(z),
            Activation::Relu => g.relu(z),
        })
    }
}

/// One LSTM layer. Gate blocks are stacked row-wise in the order
/// input, forget, cell, output, so `w_ih` is `4H × D` and `w_hh` is `4H × H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Stacked LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub name: String,
    pub layers: Vec<LstmLayer>,
}

/// Recurrent state of a stacked LSTM: per layer `h` and `c`, each `batch × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<S> {
    pub h: Vec<Tensor<S>>,
    pub c: Vec<Tensor<S>>,
}

impl<S: Scalar> LstmState<S> {
    pub fn zeros(hidden: &[usize], batch: usize) -> Self {
        Self {
            h: hidden.iter().map(|&n| Tensor::zeros(&[batch, n])).collect(),
            c: hidden.iter().map(|&n| Tensor::zeros(&[batch, n])).collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.first().map_or(0, Tensor::rows)
    }
}

/// [`LstmState`] lifted into a graph.
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl LstmVars {
    pub fn to_state<S: Scalar>(&self, g: &Graph<'_, S>) -> LstmState<S> {
        LstmState {
            h: self.h.iter().map(|&v| g.value(v).clone()).collect(),
            c: self.c.iter().map(|&v| g.value(v).clone()).collect(),
        }
    }
}

impl Lstm {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, ConfigError> {
        if hidden.is_empty() {
            return Err(ConfigError::new(format!("LSTM `{name}` needs at least one layer")));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            if width == 0 || h == 0 {
                return Err(ConfigError::new(format!("LSTM `{name}` layer {i} has a zero width")));
            }
            let w_ih = store.insert(format!("{name}.{i}.w_ih"), uniform_init(&[4 * h, width], width, rng))?;
            let w_hh = store.insert(format!("{name}.{i}.w_hh"), uniform_init(&[4 * h, h], h, rng))?;
            let mut bias: Tensor<S> = uniform_init(&[4 * h], width + h, rng);
            bias.data_mut()[h..2 * h].fill(S::one());
            let b = store.insert(format!("{name}.{i}.b"), bias)?;
            layers.push(LstmLayer { w_ih, w_hh, b, input: width, hidden: h });
            width = h;
        }
        Ok(Self { name: name.to_string(), layers })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn zero_state<S: Scalar>(&self, batch: usize) -> LstmState<S> {
        LstmState::zeros(&self.hidden_sizes(), batch)
    }

    /// Validates `state` against the topology and places it on the graph.
    pub fn bind_state<S: Scalar>(&self, g: &mut Graph<'_, S>, state: &LstmState<S>) -> Result<LstmVars, ConfigError> {
        if state.h.len() != self.layers.len() || state.c.len() != self.layers.len() {
            return Err(ConfigError::new(format!(
                "LSTM `{}` has {} layers but the state carries {}",
                self.name,
                self.layers.len(),
                state.h.len()
            )));
        }
        let batch = state.batch();
        for (i, l) in self.layers.iter().enumerate() {
            for t in [&state.h[i], &state.c[i]] {
                if t.cols() != l.hidden || t.rows() != batch {
                    return Err(ConfigError::new(format!(
                        "LSTM `{}` layer {i}: state shape {:?} does not match hidden size {}",
                        self.name,
                        t.shape(),
                        l.hidden
                    )));
                }
            }
        }
        Ok(LstmVars {
            h: state.h.iter().map(|t| g.constant(t.clone())).collect(),
            c: state.c.iter().map(|t| g.constant(t.clone())).collect(),
        })
    }

    /// Advances all layers by one timestep. `x` is `batch × input`.
    pub fn step<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, state: &mut LstmVars) -> Result<Var, ConfigError> {
        let mut input = x;
        for (i, l) in self.layers.iter().enumerate() {
            let width = g.value(input).cols();
            if width != l.input {
                return Err(ConfigError::new(format!(
                    "LSTM `{}` layer {i} expects input width {}, got {width}",
                    self.name, l.input
                )));
            }
            if g.value(input).rows() != g.value(state.h[i]).rows() {
                return Err(ConfigError::new(format!("LSTM `{}` layer {i}: batch size differs from state", self.name)));
            }
            let h = l.hidden;
            let w_ih = g.param(l.w_ih);
            let w_hh = g.param(l.w_hh);
            let b = g.param(l.b);
            let zx = g.matmul_nt(input, w_ih);
            let zh = g.matmul_nt(state.h[i], w_hh);
            let z = g.add(zx, zh);
            let z = g.add_bias(z, b);
            let gi = g.slice_cols(z, 0, h);
            let gf = g.slice_cols(z, h, h);
            let gc = g.slice_cols(z, 2 * h, h);
            let go = g.slice_cols(z, 3 * h, h);
            let gi = g.sigmoid(gi);
            let gf = g.sigmoid(gf);
            let gc = g.tanh(gc);
            let go = g.sigmoid(go);
            let keep = g.mul(gf, state.c[i]);
            let write = g.mul(gi, gc);
            let c = g.add(keep, write);
            let tc = g.tanh(c);
            let hn = g.mul(go, tc);
            state.h[i] = hn;
            state.c[i] = c;
            input = hn;
        }
        Ok(input)
    }
}

/// Runs a stacked LSTM over a `T × D` sequence (batch of one) and returns the
/// `T × H` top-layer outputs plus the final state.
pub fn lstm_forward<S: Scalar>(
    store: &ParamStore<S>,
    lstm: &Lstm,
    inputs: &Tensor<S>,
    init: &LstmState<S>,
) -> Result<(Tensor<S>, LstmState<S>), ConfigError> {
    if inputs.cols() != lstm.input_width() {
        return Err(ConfigError::new(format!(
            "LSTM `{}` layer 0 expects input width {}, got {}",
            lstm.name,
            lstm.input_width(),
            inputs.cols()
        )));
    }
    let mut g = Graph::inference(store);
    let mut state = lstm.bind_state(&mut g, init)?;
    let mut out = Vec::with_capacity(inputs.rows() * lstm.output_width());
    for t in 0..inputs.rows() {
        let x = g.constant(Tensor::row(inputs.row_slice(t).to_vec()));
        let h = lstm.step(&mut g, x, &mut state)?;
        out.extend_from_slice(g.value(h).data());
    }
    let final_state = state.to_state(&g);
    Ok((Tensor::matrix(inputs.rows(), lstm.output_width(), out), final_state))
}

/// Applies a dense layer to every row of `input`.
pub fn ff_forward<S: Scalar>(store: &ParamStore<S>, layer: &Dense, input: &Tensor<S>) -> Result<Tensor<S>, ConfigError> {
    let mut g = Graph::inference(store);
    let x = g.constant(Tensor::matrix(input.rows(), input.cols(), input.data().to_vec()));
    let y = layer.forward(&mut g, x)?;
    Ok(g.value(y).clone())
}
