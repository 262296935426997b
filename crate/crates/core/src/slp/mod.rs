//! The lightweight perceptron detector.
//!
//! `Z` dense ReLU layers of width `V` are applied, with shared weights, to
//! each of the `T` input signals; the `T` feature vectors are concatenated and
//! mapped by one affine layer plus sigmoid to `K` activity probabilities. With
//! `T = 1` the concatenation is the identity and the network is the
//! decentralized per-AP detector.

mod io;
mod pareto;
mod train;

pub use io::{load_model, read_model_header, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use pareto::{param_count, pareto_front, pareto_mask, ParetoPoint};
pub use train::{
    bce_loss, loss_and_gradients, train, Gradients, SampleSet, TrainConfig, TrainReport, PREDICTION_CLIP,
};

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::{Complex, Complex64};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Reals per input signal, `2 * L * N`.
    pub input_dim: usize,
    /// Z
    pub hidden_layers: usize,
    /// V
    pub hidden_width: usize,
    /// K
    pub num_devices: usize,
    /// T, the number of signals concatenated (1 for the per-AP detector).
    pub cluster_inputs: usize,
}

impl ModelConfig {
    pub fn for_signal(
        pilot_len: usize,
        num_antennas: usize,
        hidden_layers: usize,
        hidden_width: usize,
        num_devices: usize,
        cluster_inputs: usize,
    ) -> Self {
        ModelConfig {
            input_dim: 2 * pilot_len * num_antennas,
            hidden_layers,
            hidden_width,
            num_devices,
            cluster_inputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_layers == 0
            || self.hidden_width == 0
            || self.num_devices == 0
            || self.cluster_inputs == 0
        {
            return Err(Error::Config(format!("model dimensions must all be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out x in
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Fan-in scaled Gaussian weights with variance `gain / fan_in`, zero bias.
    fn init(inputs: usize, outputs: usize, gain: f64, rng: &mut seed::SimRng) -> Self {
        let normal = Normal::new(0.0, (gain / inputs as f64).sqrt()).expect("positive std");
        DenseLayer {
            weights: Array2::from_shape_simple_fn((outputs, inputs), || normal.sample(rng)),
            bias: Array1::zeros(outputs),
        }
    }

    pub(crate) fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlpModel {
    pub config: ModelConfig,
    /// Shared hidden stack, input side first.
    pub hidden: Vec<DenseLayer>,
    /// Maps the `T * V` concatenated features to `K` logits.
    pub output: DenseLayer,
}

const ONE_BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Sigmoid kept inside the open unit interval.
fn sigmoid_open(z: f64) -> f64 {
    sigmoid(z).clamp(f64::MIN_POSITIVE, ONE_BELOW_ONE)
}

impl SlpModel {
    /// He-initialized ReLU layers and a fan-in scaled output layer.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(seed, "slp-init", 0);
        let v = config.hidden_width;
        let mut hidden = Vec::with_capacity(config.hidden_layers);
        for z in 0..config.hidden_layers {
            let fan_in = if z == 0 { config.input_dim } else { v };
            hidden.push(DenseLayer::init(fan_in, v, 2.0, &mut rng));
        }
        let output = DenseLayer::init(config.cluster_inputs * v, config.num_devices, 1.0, &mut rng);
        Ok(SlpModel { config, hidden, output })
    }

    /// A model whose every weight and bias is zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let v = config.hidden_width;
        let hidden = (0..config.hidden_layers)
            .map(|z| DenseLayer::zeros(if z == 0 { config.input_dim } else { v }, v))
            .collect();
        let output = DenseLayer::zeros(config.cluster_inputs * v, config.num_devices);
        Ok(SlpModel { config, hidden, output })
    }

    pub fn param_count(&self) -> usize {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.output))
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Checks that the model was built for signals of this system.
    pub fn ensure_compatible(&self, num_devices: usize, input_dim: usize, cluster_inputs: usize) -> Result<()> {
        let c = &self.config;
        if c.num_devices != num_devices || c.input_dim != input_dim || c.cluster_inputs != cluster_inputs {
            return Err(Error::Mismatch(format!(
                "model expects K = {}, input_dim = {}, T = {}; data has K = {num_devices}, input_dim = {input_dim}, T = {cluster_inputs}",
                c.num_devices, c.input_dim, c.cluster_inputs
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<usize> {
        if inputs.len() != self.config.cluster_inputs {
            return Err(Error::DimensionMismatch(format!(
                "model takes {} inputs, got {}",
                self.config.cluster_inputs,
                inputs.len()
            )));
        }
        let rows = inputs[0].nrows();
        for x in inputs {
            if x.ncols() != self.config.input_dim || x.nrows() != rows {
                return Err(Error::DimensionMismatch(format!(
                    "input block is {:?}, expected {rows} x {}",
                    x.dim(),
                    self.config.input_dim
                )));
            }
        }
        Ok(rows)
    }

    /// Hidden-stack activations for one input block: `[x, h_1, ..., h_Z]`.
    pub(crate) fn hidden_activations(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.hidden {
            let mut h = layer.affine(acts.last().expect("non-empty").view());
            h.mapv_inplace(|v| v.max(0.0));
            acts.push(h);
        }
        acts
    }

    fn hidden_features(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for layer in &self.hidden {
            h = layer.affine(h.view());
            h.mapv_inplace(|v| v.max(0.0));
        }
        h
    }

    /// Output logits for a batch; `inputs[t]` is the `B x input_dim` block of
    /// the `t`-th signal.
    pub fn logits_batch(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.check_inputs(inputs)?;
        let feats: Vec<Array2<f64>> = inputs.iter().map(|x| self.hidden_features(*x)).collect();
        let cat = if feats.len() == 1 {
            feats.into_iter().next().expect("one block")
        } else {
            let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
            concatenate(Axis(1), &views).expect("equal row counts")
        };
        Ok(self.output.affine(cat.view()))
    }

    /// Activity probabilities for a batch, `B x K`, each strictly in (0, 1).
    pub fn forward_batch(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        let mut out = self.logits_batch(inputs)?;
        out.mapv_inplace(sigmoid_open);
        Ok(out)
    }

    /// Activity probabilities for a single sample of `T` input vectors.
    pub fn forward(&self, inputs: &[ArrayView1<'_, f64>]) -> Result<Array1<f64>> {
        let blocks: Vec<ArrayView2<'_, f64>> = inputs.iter().map(|x| x.view().insert_axis(Axis(0))).collect();
        Ok(self.forward_batch(&blocks)?.row(0).to_owned())
    }
}

/// Real-valued layout of an `L x N` complex block: for each symbol row, for
/// each antenna, `(re, im)`.
pub fn flatten_signal<T: Copy + Into<f64>>(y: ArrayView2<'_, Complex<T>>) -> Array1<f64> {
    let mut out = Array1::zeros(2 * y.len());
    flatten_signal_into(y, out.as_slice_mut().expect("contiguous"));
    out
}

/// [`flatten_signal`] writing into a caller-provided buffer of length `2 L N`.
pub fn flatten_signal_into<T: Copy + Into<f64>>(y: ArrayView2<'_, Complex<T>>, out: &mut [f64]) {
    assert_eq!(out.len(), 2 * y.len(), "output buffer must hold 2 L N reals");
    for (pair, z) in out.chunks_exact_mut(2).zip(y.iter()) {
        pair[0] = z.re.into();
        pair[1] = z.im.into();
    }
}

/// Inverse of [`flatten_signal`].
pub fn unflatten_signal(x: &[f64], pilot_len: usize, num_antennas: usize) -> Result<Array2<Complex64>> {
    if x.len() != 2 * pilot_len * num_antennas {
        return Err(Error::DimensionMismatch(format!(
            "{} reals cannot hold a {pilot_len} x {num_antennas} complex block",
            x.len()
        )));
    }
    let v = x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    Ok(Array2::from_shape_vec((pilot_len, num_antennas), v).expect("length checked"))
}

/// Rescales a flattened signal to unit mean square (a zero vector stays zero).
///
/// Received power spans several tens of dB across devices and APs; the
/// detector only sees the normalized shape of the block.
pub fn normalize_features(x: &mut [f64]) {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if ms > 0.0 {
        let s = ms.sqrt().recip();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Flatten plus [`normalize_features`]: the network input for one signal.
pub fn signal_features_into<T: Copy + Into<f64>>(y: ArrayView2<'_, Complex<T>>, out: &mut [f64]) {
    flatten_signal_into(y, out);
    normalize_features(out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use num_complex::Complex32;

    fn small_config(t: usize) -> ModelConfig {
        ModelConfig::for_signal(2, 1, 1, 3, 2, t)
    }

    #[test]
    fn flatten_layout() {
        let y = array![[Complex32::new(3.0, 4.0)]];
        assert_eq!(flatten_signal(y.view()).to_vec(), vec![3.0, 4.0]);
        let y2 = array![
            [Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)],
            [Complex64::new(5.0, 6.0), Complex64::new(7.0, 8.0)]
        ];
        assert_eq!(flatten_signal(y2.view()).to_vec(), (1..=8).map(f64::from).collect::<Vec<_>>());
        assert!(flatten_signal(Array2::<Complex64>::zeros((3, 2)).view()).iter().all(|&v| v == 0.0));
        assert!(unflatten_signal(&[1.0; 5], 1, 2).is_err());
    }

    #[test]
    fn normalization_keeps_zero_and_scales_to_unit_power() {
        let mut z = vec![0.0; 4];
        normalize_features(&mut z);
        assert_eq!(z, vec![0.0; 4]);
        let mut x = vec![3.0, 4.0, 0.0, 0.0];
        normalize_features(&mut x);
        let ms: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((ms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = SlpModel::zeros(small_config(2)).unwrap();
        let x = array![1.0, -2.0, 3.0, 0.5];
        let p = m.forward(&[x.view(), x.view()]).unwrap();
        assert_eq!(p.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn forward_matches_hand_arithmetic() {
        // L=2, N=1, V=3, K=2, one hidden layer, written out element by element
        let m = SlpModel::new(small_config(1), 5).unwrap();
        let x = [0.3, -1.2, 0.7, 2.0];
        let mut h = [0.0; 3];
        for (v, hv) in h.iter_mut().enumerate() {
            let mut acc = m.hidden[0].bias[v];
            for (i, xi) in x.iter().enumerate() {
                acc += m.hidden[0].weights[[v, i]] * xi;
            }
            *hv = if acc > 0.0 { acc } else { 0.0 };
        }
        let p = m.forward(&[ArrayView1::from(&x[..])]).unwrap();
        for k in 0..2 {
            let mut z = m.output.bias[k];
            for (v, hv) in h.iter().enumerate() {
                z += m.output.weights[[k, v]] * hv;
            }
            let want = 1.0 / (1.0 + (-z).exp());
            assert!((p[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_shapes() {
        let m = SlpModel::new(small_config(2), 0).unwrap();
        let x = array![1.0, 2.0, 3.0, 4.0];
        assert!(matches!(m.forward(&[x.view()]), Err(Error::DimensionMismatch(_))));
        let short = array![1.0, 2.0];
        assert!(matches!(m.forward(&[x.view(), short.view()]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn saturated_outputs_stay_open() {
        let mut m = SlpModel::zeros(small_config(1)).unwrap();
        m.output.bias[0] = 1e4;
        m.output.bias[1] = -1e4;
        let p = m.forward(&[array![0.0, 0.0, 0.0, 0.0].view()]).unwrap();
        assert!(p[0] < 1.0 && p[1] > 0.0);
    }

    #[test]
    fn permuting_inputs_with_output_blocks_is_invariant() {
        let cfg = ModelConfig::for_signal(2, 1, 2, 4, 3, 3);
        let m = SlpModel::new(cfg, 9).unwrap();
        let xs = [array![0.1, 0.9, -0.3, 0.4], array![-1.0, 0.2, 0.8, 0.0], array![0.5, 0.5, -0.5, 1.5]];
        let p = m.forward(&[xs[0].view(), xs[1].view(), xs[2].view()]).unwrap();

        let perm = [2, 0, 1];
        let mut permuted = m.clone();
        let v = cfg.hidden_width;
        for (new_t, &old_t) in perm.iter().enumerate() {
            permuted
                .output
                .weights
                .slice_mut(s![.., new_t * v..(new_t + 1) * v])
                .assign(&m.output.weights.slice(s![.., old_t * v..(old_t + 1) * v]));
        }
        let q = permuted
            .forward(&[xs[perm[0]].view(), xs[perm[1]].view(), xs[perm[2]].view()])
            .unwrap();
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_input_has_no_concatenation_effect() {
        let m = SlpModel::new(small_config(1), 3).unwrap();
        let x = array![[0.2, 0.1, -0.4, 1.0]];
        let feats = m.hidden_features(x.view());
        let direct = m.output.affine(feats.view());
        assert_eq!(m.logits_batch(&[x.view()]).unwrap(), direct);
    }
}
