use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ActionSet, NEIGHBOR_DIM, SELF_DIM};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Shape of the network. The defaults are the 64-unit LSTM and two
/// 256-unit rectified layers; tests use smaller sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub fc: usize,
    pub actions: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 64,
            fc: 256,
            actions: ActionSet::Eleven.len(),
        }
    }
}

impl NetworkConfig {
    pub fn lstm_input(&self) -> usize {
        NEIGHBOR_DIM + self.hidden
    }

    pub fn encoded(&self) -> usize {
        SELF_DIM + self.hidden
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Glorot-uniform initialisation.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `out = W x + b`
    pub fn affine_into(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = bias[r] + dot(self.row(r), x);
        }
    }

    /// `dx += W^T dy`
    pub fn add_transpose_mul(&self, dy: &[f64], dx: &mut [f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, self.row(r), dx);
            }
        }
    }

    /// `self += dy x^T`
    pub fn add_outer(&mut self, dy: &[f64], x: &[f64]) {
        let cols = self.cols;
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, x, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Weights of the four LSTM gates. Every matrix maps the concatenation
/// `[neighbor (7) ; previous hidden (n_h)]` to `n_h` pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_input: Matrix,
    pub w_forget: Matrix,
    pub w_output: Matrix,
    pub w_cell: Matrix,
    pub b_input: Vec<f64>,
    pub b_forget: Vec<f64>,
    pub b_output: Vec<f64>,
    pub b_cell: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize) -> Self {
        let cols = NEIGHBOR_DIM + hidden;
        LstmParams {
            w_input: Matrix::zeros(hidden, cols),
            w_forget: Matrix::zeros(hidden, cols),
            w_output: Matrix::zeros(hidden, cols),
            w_cell: Matrix::zeros(hidden, cols),
            b_input: vec![0.0; hidden],
            b_forget: vec![0.0; hidden],
            b_output: vec![0.0; hidden],
            b_cell: vec![0.0; hidden],
        }
    }

    pub fn random<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let cols = NEIGHBOR_DIM + hidden;
        LstmParams {
            w_input: Matrix::glorot(hidden, cols, rng),
            w_forget: Matrix::glorot(hidden, cols, rng),
            w_output: Matrix::glorot(hidden, cols, rng),
            w_cell: Matrix::glorot(hidden, cols, rng),
            b_input: vec![0.0; hidden],
            b_forget: vec![1.0; hidden],
            b_output: vec![0.0; hidden],
            b_cell: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_input.len()
    }
}

/// Feedforward trunk and the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w_policy: Matrix,
    pub b_policy: Vec<f64>,
    pub w_value: Matrix,
    pub b_value: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        MlpParams {
            w1: Matrix::zeros(cfg.fc, cfg.encoded()),
            b1: vec![0.0; cfg.fc],
            w2: Matrix::zeros(cfg.fc, cfg.fc),
            b2: vec![0.0; cfg.fc],
            w_policy: Matrix::zeros(cfg.actions, cfg.fc),
            b_policy: vec![0.0; cfg.actions],
            w_value: Matrix::zeros(1, cfg.fc),
            b_value: vec![0.0; 1],
        }
    }

    pub fn random<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        MlpParams {
            w1: Matrix::glorot(cfg.fc, cfg.encoded(), rng),
            b1: vec![0.0; cfg.fc],
            w2: Matrix::glorot(cfg.fc, cfg.fc, rng),
            b2: vec![0.0; cfg.fc],
            w_policy: Matrix::glorot(cfg.actions, cfg.fc, rng),
            b_policy: vec![0.0; cfg.actions],
            w_value: Matrix::glorot(1, cfg.fc, rng),
            b_value: vec![0.0; 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub gamma: f64,
    pub action_set: ActionSet,
    pub version: u32,
}

impl Default for NetworkMeta {
    fn default() -> Self {
        NetworkMeta {
            gamma: 0.97,
            action_set: ActionSet::Eleven,
            version: FORMAT_VERSION,
        }
    }
}

/// One named tensor, borrowed.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

macro_rules! tensor_list {
    ($self:ident, $mat:ident, $vec:ident) => {
        vec![
            $mat!("lstm.w_input", $self.lstm.w_input),
            $mat!("lstm.w_forget", $self.lstm.w_forget),
            $mat!("lstm.w_output", $self.lstm.w_output),
            $mat!("lstm.w_cell", $self.lstm.w_cell),
            $vec!("lstm.b_input", $self.lstm.b_input),
            $vec!("lstm.b_forget", $self.lstm.b_forget),
            $vec!("lstm.b_output", $self.lstm.b_output),
            $vec!("lstm.b_cell", $self.lstm.b_cell),
            $mat!("mlp.w1", $self.mlp.w1),
            $vec!("mlp.b1", $self.mlp.b1),
            $mat!("mlp.w2", $self.mlp.w2),
            $vec!("mlp.b2", $self.mlp.b2),
            $mat!("mlp.w_policy", $self.mlp.w_policy),
            $vec!("mlp.b_policy", $self.mlp.b_policy),
            $mat!("mlp.w_value", $self.mlp.w_value),
            $vec!("mlp.b_value", $self.mlp.b_value),
        ]
    };
}

macro_rules! view_mat {
    ($n:expr, $m:expr) => {
        TensorView {
            name: $n,
            dims: vec![$m.rows, $m.cols],
            data: &$m.data,
        }
    };
}
macro_rules! view_vec {
    ($n:expr, $v:expr) => {
        TensorView {
            name: $n,
            dims: vec![$v.len()],
            data: &$v,
        }
    };
}
macro_rules! mut_mat {
    ($n:expr, $m:expr) => {
        ($n, &mut $m.data[..])
    };
}
macro_rules! mut_vec {
    ($n:expr, $v:expr) => {
        ($n, &mut $v[..])
    };
}

/// Storage shared by parameters, gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub lstm: LstmParams,
    pub mlp: MlpParams,
}

impl ParamSet {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        ParamSet {
            lstm: LstmParams::zeros(cfg.hidden),
            mlp: MlpParams::zeros(cfg),
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        tensor_list!(self, view_mat, view_vec)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        tensor_list!(self, mut_mat, mut_vec)
    }

    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            hidden: self.lstm.hidden(),
            fc: self.mlp.b1.len(),
            actions: self.mlp.b_policy.len(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            axpy(scale, s.data, dst);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Gradient of the loss with respect to every parameter.
pub type GradientSet = ParamSet;

/// The full actor-critic network: LSTM encoder, trunk, policy and value
/// heads, plus metadata. One set of weights serves both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: ParamSet,
    pub meta: NetworkMeta,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases except the forget gate (1.0).
    pub fn random<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let lstm = LstmParams::random(cfg.hidden, rng);
        let mlp = MlpParams::random(cfg, rng);
        NetworkParams {
            weights: ParamSet { lstm, mlp },
            meta: NetworkMeta {
                action_set: ActionSet::from_len(cfg.actions).unwrap_or_default(),
                ..NetworkMeta::default()
            },
        }
    }

    pub fn zeros(cfg: &NetworkConfig) -> Self {
        NetworkParams {
            weights: ParamSet::zeros(cfg),
            meta: NetworkMeta {
                action_set: ActionSet::from_len(cfg.actions).unwrap_or_default(),
                ..NetworkMeta::default()
            },
        }
    }

    pub fn lstm(&self) -> &LstmParams {
        &self.weights.lstm
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.weights.mlp
    }

    pub fn config(&self) -> NetworkConfig {
        self.weights.config()
    }

    pub fn num_actions(&self) -> usize {
        self.weights.mlp.b_policy.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.weights.all_finite() {
            Ok(())
        } else {
            Err(Error::NumericInput(
                "network parameters contain non-finite values".into(),
            ))
        }
    }
}
