//! Minimal dense feed-forward networks with explicit forward, backward,
//! and adaptive-moment optimizer steps. Everything is f64 and batch-first
//! so training runs are bit-reproducible.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::{Error, Result};

/// Output-layer nonlinearity; hidden layers are always rectifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Logistic,
    Identity,
}

impl Activation {
    fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Logistic => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Identity => z.clone(),
        }
    }

    /// Derivative as a function of pre-activation `z` and output `y`.
    fn derivative(&self, z: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Logistic => y.mapv(|v| v * (1.0 - v)),
            Activation::Identity => Array2::ones(z.raw_dim()),
        }
    }

    fn code(&self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Logistic => 1.0,
            Activation::Identity => 2.0,
        }
    }

    fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Logistic),
            2 => Ok(Activation::Identity),
            other => Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        }
    }
}

/// Dense multi-layer perceptron. Weight matrices are (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub output_activation: Activation,
}

/// Forward-pass state needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input to each layer (the batch input, then each hidden output).
    layer_inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Cache {
    /// Pre-activation values per layer, e.g. for checking how close a
    /// rectifier sits to its kink.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }
}

/// Parameter gradients plus the gradient with respect to the input batch.
#[derive(Debug, Clone)]
pub struct Grads {
    pub d_weights: Vec<Array2<f64>>,
    pub d_biases: Vec<Array1<f64>>,
    pub d_input: Array2<f64>,
}

impl Mlp {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new(widths: &[usize], output_activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..=bound)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
            output_activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    fn activation_at(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }

    /// Batch forward pass; rows are samples.
    pub fn forward(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Cache)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} != layer width {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let mut layer_inputs = vec![input.clone()];
        let mut pre_activations = Vec::with_capacity(self.weights.len());
        let mut outputs = Vec::with_capacity(self.weights.len());
        let mut x = input.clone();
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = x.dot(&w.t()) + b;
            let y = self.activation_at(layer).apply(&z);
            pre_activations.push(z);
            outputs.push(y.clone());
            if layer + 1 < self.weights.len() {
                layer_inputs.push(y.clone());
            }
            x = y;
        }
        Ok((
            x,
            Cache {
                layer_inputs,
                pre_activations,
                outputs,
            },
        ))
    }

    /// Convenience single-sample forward.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (y, _) = self.forward(&x)?;
        Ok(y.row(0).to_vec())
    }

    /// Exact reverse-mode gradients for all parameters and the input,
    /// given dL/d(output).
    pub fn backward(&self, cache: &Cache, output_grad: &Array2<f64>) -> Result<Grads> {
        if output_grad.ncols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "gradient width {} != output width {}",
                output_grad.ncols(),
                self.output_dim()
            )));
        }
        let layers = self.weights.len();
        let mut d_weights = vec![Array2::zeros((0, 0)); layers];
        let mut d_biases = vec![Array1::zeros(0); layers];
        let mut grad = output_grad.clone();
        for layer in (0..layers).rev() {
            let dz = &grad
                * &self
                    .activation_at(layer)
                    .derivative(&cache.pre_activations[layer], &cache.outputs[layer]);
            d_weights[layer] = dz.t().dot(&cache.layer_inputs[layer]);
            d_biases[layer] = dz.sum_axis(Axis(0));
            grad = dz.dot(&self.weights[layer]);
        }
        Ok(Grads {
            d_weights,
            d_biases,
            d_input: grad,
        })
    }

    /// theta_target <- n * theta_source + (1 - n) * theta_target.
    pub fn soft_update_from(&mut self, source: &Mlp, n: f64) -> Result<()> {
        if !(n > 0.0 && n <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "soft-update coefficient {n} outside (0, 1]"
            )));
        }
        if self.widths != source.widths {
            return Err(Error::Shape("target/source width mismatch".into()));
        }
        for (t, s) in self.weights.iter_mut().zip(&source.weights) {
            t.zip_mut_with(s, |t, &s| *t = n * s + (1.0 - n) * *t);
        }
        for (t, s) in self.biases.iter_mut().zip(&source.biases) {
            t.zip_mut_with(s, |t, &s| *t = n * s + (1.0 - n) * *t);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = vec![
            (
                "widths".into(),
                vec![self.widths.len()],
                self.widths.iter().map(|&w| w as f64).collect(),
            ),
            (
                "output_activation".into(),
                vec![1],
                vec![self.output_activation.code()],
            ),
        ];
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            tensors.push((
                format!("w{i}"),
                vec![w.nrows(), w.ncols()],
                w.iter().copied().collect(),
            ));
            tensors.push((format!("b{i}"), vec![b.len()], b.to_vec()));
        }
        write_tensors(path, &tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut tensors = read_tensors(path)?;
        let widths_raw = take_tensor(&mut tensors, "widths")?;
        let widths: Vec<usize> = widths_raw.1.iter().map(|&w| w as usize).collect();
        let activation = Activation::from_code(take_tensor(&mut tensors, "output_activation")?.1[0])?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..widths.len() - 1 {
            let (dims, data) = take_tensor(&mut tensors, &format!("w{i}"))?;
            if dims != [widths[i + 1], widths[i]] {
                return Err(Error::Checkpoint(format!(
                    "w{i} has shape {dims:?}, expected [{}, {}]",
                    widths[i + 1],
                    widths[i]
                )));
            }
            weights.push(
                Array2::from_shape_vec((dims[0], dims[1]), data)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            );
            let (bdims, bdata) = take_tensor(&mut tensors, &format!("b{i}"))?;
            if bdims != [widths[i + 1]] {
                return Err(Error::Checkpoint(format!("b{i} has shape {bdims:?}")));
            }
            biases.push(Array1::from_vec(bdata));
        }
        Ok(Mlp {
            widths,
            weights,
            biases,
            output_activation: activation,
        })
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m_weights: Vec<Array2<f64>>,
    v_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_biases: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m_weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) -> Result<()> {
        if grads.d_weights.len() != net.weights.len() {
            return Err(Error::Shape("gradient/parameter layer mismatch".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let scale = self.learning_rate * correction2.sqrt() / correction1;
        for layer in 0..net.weights.len() {
            if grads.d_weights[layer].raw_dim() != net.weights[layer].raw_dim() {
                return Err(Error::Shape(format!("layer {layer} gradient shape mismatch")));
            }
            update_tensor2(
                &mut net.weights[layer],
                &grads.d_weights[layer],
                &mut self.m_weights[layer],
                &mut self.v_weights[layer],
                self.beta1,
                self.beta2,
                self.epsilon,
                scale,
                correction2,
            );
            update_tensor1(
                &mut net.biases[layer],
                &grads.d_biases[layer],
                &mut self.m_biases[layer],
                &mut self.v_biases[layer],
                self.beta1,
                self.beta2,
                self.epsilon,
                scale,
                correction2,
            );
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = vec![(
            "meta".into(),
            vec![5],
            vec![
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                self.step_count as f64,
            ],
        )];
        for (i, (m, v)) in self.m_weights.iter().zip(&self.v_weights).enumerate() {
            tensors.push((
                format!("mw{i}"),
                vec![m.nrows(), m.ncols()],
                m.iter().copied().collect(),
            ));
            tensors.push((
                format!("vw{i}"),
                vec![v.nrows(), v.ncols()],
                v.iter().copied().collect(),
            ));
        }
        for (i, (m, v)) in self.m_biases.iter().zip(&self.v_biases).enumerate() {
            tensors.push((format!("mb{i}"), vec![m.len()], m.to_vec()));
            tensors.push((format!("vb{i}"), vec![v.len()], v.to_vec()));
        }
        write_tensors(path, &tensors)
    }

    pub fn load(path: impl AsRef<Path>, net: &Mlp) -> Result<Self> {
        let mut tensors = read_tensors(path)?;
        let (_, meta) = take_tensor(&mut tensors, "meta")?;
        if meta.len() != 5 {
            return Err(Error::Checkpoint("optimizer meta must have 5 entries".into()));
        }
        let mut adam = Adam::new(net, meta[0]);
        adam.beta1 = meta[1];
        adam.beta2 = meta[2];
        adam.epsilon = meta[3];
        adam.step_count = meta[4] as u64;
        for i in 0..net.weights.len() {
            let (dims, data) = take_tensor(&mut tensors, &format!("mw{i}"))?;
            adam.m_weights[i] = Array2::from_shape_vec((dims[0], dims[1]), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let (dims, data) = take_tensor(&mut tensors, &format!("vw{i}"))?;
            adam.v_weights[i] = Array2::from_shape_vec((dims[0], dims[1]), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let (_, data) = take_tensor(&mut tensors, &format!("mb{i}"))?;
            adam.m_biases[i] = Array1::from_vec(data);
            let (_, data) = take_tensor(&mut tensors, &format!("vb{i}"))?;
            adam.v_biases[i] = Array1::from_vec(data);
        }
        Ok(adam)
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor2(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    scale: f64,
    correction2: f64,
) {
    azip_update(
        param.iter_mut(),
        grad.iter(),
        m.iter_mut(),
        v.iter_mut(),
        beta1,
        beta2,
        epsilon,
        scale,
        correction2,
    );
}

#[allow(clippy::too_many_arguments)]
fn update_tensor1(
    param: &mut Array1<f64>,
    grad: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    scale: f64,
    correction2: f64,
) {
    azip_update(
        param.iter_mut(),
        grad.iter(),
        m.iter_mut(),
        v.iter_mut(),
        beta1,
        beta2,
        epsilon,
        scale,
        correction2,
    );
}

#[allow(clippy::too_many_arguments)]
fn azip_update<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    ms: impl Iterator<Item = &'a mut f64>,
    vs: impl Iterator<Item = &'a mut f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    scale: f64,
    correction2: f64,
) {
    for (((p, &g), m), v) in params.zip(grads).zip(ms).zip(vs) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        // Equivalent to lr * m_hat / (sqrt(v_hat) + eps') with the bias
        // corrections folded into `scale`.
        *p -= scale * *m / ((*v).sqrt() + epsilon * correction2.sqrt());
    }
}

const TENSOR_MAGIC: &[u8; 8] = b"AOVTEN01";

/// Named tensors as (shape, row-major data).
pub type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

/// Writes named f64 tensors: magic, count, then per tensor a name,
/// shape header, and little-endian payload.
pub fn write_tensors(
    path: impl AsRef<Path>,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    file.write_all(TENSOR_MAGIC)?;
    file.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, dims, data) in tensors {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: {} values for shape {dims:?}",
                data.len()
            )));
        }
        file.write_all(&(name.len() as u32).to_le_bytes())?;
        file.write_all(name.as_bytes())?;
        file.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            file.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in data {
            file.write_all(&x.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Reads a tensor container written by [`write_tensors`].
pub fn read_tensors(path: impl AsRef<Path>) -> Result<TensorMap> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a tensor checkpoint",
            path.as_ref().display()
        )));
    }
    let count = read_u32(&mut file)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut file)? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint("tensor name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name not UTF-8".into()))?;
        let ndim = read_u32(&mut file)? as usize;
        if ndim > 8 {
            return Err(Error::Checkpoint(format!("tensor {name}: {ndim} dims")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            file.read_exact(&mut b)?;
            dims.push(u64::from_le_bytes(b) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            file.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        tensors.insert(name, (dims, data));
    }
    Ok(tensors)
}

fn read_u32(file: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    file.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn take_tensor(tensors: &mut TensorMap, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}
