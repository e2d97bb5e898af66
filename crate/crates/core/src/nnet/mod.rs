//! Fully connected ReLU network with analytic parameter Jacobians.
//!
//! Parameters are flattened layer-major, input layer first; within a layer
//! the weight matrix is laid out row-major and followed by the bias. Every
//! Jacobian column and gradient entry in this module uses that order.

mod checkpoint;
mod spectral;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use spectral::{spectral_norm, POWER_ITER_MAX, POWER_ITER_TOL};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative band above ν inside which a layer counts as already projected.
const PROJECTION_SLACK: f64 = 1e-12;

/// A flattened parameter vector. Construction rejects NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(Error::Domain("parameter vector"))
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for ParamVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.weight.nrows() * self.weight.ncols() + self.bias.len()
    }
}

/// Multi-layer perceptron: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

/// Pre-activations and activations recorded during a forward pass.
struct Trace {
    /// `activations[0]` is the input; `activations[l + 1]` is the output of layer `l`.
    activations: Vec<DVector<f64>>,
    pre: Vec<DVector<f64>>,
}

#[inline]
fn relu_grad(z: f64) -> f64 {
    // Subgradient at exactly zero is taken as zero.
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes (`[n_in, hidden.., n_out]`).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Usage(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// He-uniform weights, zero biases, deterministic in `seed`.
    pub fn he_uniform(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let fan_in = layer.weight.ncols() as f64;
            let limit = (6.0 / fan_in).sqrt();
            // Fill row-major so the draw order matches the flattened layout.
            for i in 0..layer.weight.nrows() {
                for j in 0..layer.weight.ncols() {
                    layer.weight[(i, j)] = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Usage("network needs at least one layer".into()));
        }
        let mut sizes = vec![layers[0].weight.ncols()];
        for layer in &layers {
            if layer.weight.ncols() != *sizes.last().unwrap() || layer.bias.len() != layer.weight.nrows() {
                return Err(Error::Usage("inconsistent layer shapes".into()));
            }
            sizes.push(layer.weight.nrows());
        }
        Ok(Self { sizes, layers })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Start offset of each layer's block in the flattened parameter vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets
    }

    /// Index range of the output layer's parameters.
    pub fn last_layer_range(&self) -> std::ops::Range<usize> {
        let p = self.param_count();
        p - self.layers.last().unwrap().param_count()..p
    }

    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for i in 0..layer.weight.nrows() {
                for j in 0..layer.weight.ncols() {
                    out.push(layer.weight[(i, j)]);
                }
            }
            out.extend(layer.bias.iter().copied());
        }
        ParamVector(DVector::from_vec(out))
    }

    /// Overwrite all parameters from a flattened vector.
    pub fn set_params(&mut self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let mut k = 0;
        for layer in &mut self.layers {
            for i in 0..layer.weight.nrows() {
                for j in 0..layer.weight.ncols() {
                    layer.weight[(i, j)] = theta[k];
                    k += 1;
                }
            }
            for b in layer.bias.iter_mut() {
                *b = theta[k];
                k += 1;
            }
        }
        Ok(())
    }

    /// A copy of this architecture carrying the parameters `theta`.
    pub fn with_params(&self, theta: &DVector<f64>) -> Result<Self> {
        let mut net = self.clone();
        net.set_params(theta)?;
        Ok(net)
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_in() {
            return Err(Error::Shape {
                expected: self.n_in(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("network input"));
        }
        Ok(())
    }

    fn trace(&self, x: &DVector<f64>) -> Trace {
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        activations.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = &layer.weight * &activations[l] + &layer.bias;
            let a = if l + 1 < n { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
            activations.push(a);
        }
        Trace { activations, pre }
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = &layer.weight * &a + &layer.bias;
            a = if l + 1 < n { z.map(|v| v.max(0.0)) } else { z };
        }
        Ok(a)
    }

    /// Forward pass with each output component clamped to `[-bound, bound]`.
    pub fn forward_clipped(&self, x: &DVector<f64>, bound: f64) -> Result<DVector<f64>> {
        Ok(self.forward(x)?.map(|v| v.clamp(-bound, bound)))
    }

    /// Backpropagate the row block `seed` (k × n_out) to parameter space,
    /// returning the k × p matrix `seed · ∂f/∂θ`.
    fn backprop_rows(&self, tr: &Trace, seed: DMatrix<f64>) -> DMatrix<f64> {
        let p = self.param_count();
        let k = seed.nrows();
        let mut out = DMatrix::zeros(k, p);
        let offsets = self.layer_offsets();
        let mut g = seed;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = &tr.activations[l];
            let (rows, cols) = layer.weight.shape();
            let off = offsets[l];
            for r in 0..k {
                for i in 0..rows {
                    let gi = g[(r, i)];
                    if gi == 0.0 {
                        continue;
                    }
                    let base = off + i * cols;
                    for j in 0..cols {
                        out[(r, base + j)] = gi * a_prev[j];
                    }
                    out[(r, off + rows * cols + i)] = gi;
                }
            }
            if l > 0 {
                let mut next = &g * &layer.weight;
                let z = &tr.pre[l - 1];
                for j in 0..next.ncols() {
                    if relu_grad(z[j]) == 0.0 {
                        next.column_mut(j).fill(0.0);
                    }
                }
                g = next;
            }
        }
        out
    }

    /// Exact Jacobian of the output with respect to the flattened parameters
    /// (n_out × p), columns ordered as in [`Mlp::flatten`].
    pub fn param_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let tr = self.trace(x);
        Ok(self.backprop_rows(&tr, DMatrix::identity(self.n_out(), self.n_out())))
    }

    /// Output and parameter Jacobian from a single forward pass.
    pub fn forward_with_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_input(x)?;
        let tr = self.trace(x);
        let y = tr.activations.last().unwrap().clone();
        let jac = self.backprop_rows(&tr, DMatrix::identity(self.n_out(), self.n_out()));
        Ok((y, jac))
    }

    /// Vector-Jacobian product `Jᵀ v` without forming `J`.
    pub fn vjp(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let tr = self.trace(x);
        let mut grad = DVector::zeros(self.param_count());
        self.accumulate_vjp(&tr, v.clone(), &mut grad);
        Ok(grad)
    }

    fn accumulate_vjp(&self, tr: &Trace, mut delta: DVector<f64>, grad: &mut DVector<f64>) {
        let offsets = self.layer_offsets();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = &tr.activations[l];
            let (rows, cols) = layer.weight.shape();
            let off = offsets[l];
            for i in 0..rows {
                let di = delta[i];
                if di == 0.0 {
                    continue;
                }
                let base = off + i * cols;
                for j in 0..cols {
                    grad[base + j] += di * a_prev[j];
                }
                grad[off + rows * cols + i] += di;
            }
            if l > 0 {
                let z = &tr.pre[l - 1];
                let mut back = layer.weight.tr_mul(&delta);
                for (b, zj) in back.iter_mut().zip(z.iter()) {
                    *b *= relu_grad(*zj);
                }
                delta = back;
            }
        }
    }

    /// Sum-of-squares loss `Σ ‖y − f(x)‖²` over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[(DVector<f64>, DVector<f64>)]) -> Result<(f64, DVector<f64>)> {
        if batch.is_empty() {
            return Err(Error::Usage("loss over an empty batch".into()));
        }
        let mut loss = 0.0;
        let mut grad = DVector::zeros(self.param_count());
        for (x, y) in batch {
            self.check_input(x)?;
            if y.len() != self.n_out() {
                return Err(Error::Shape {
                    expected: self.n_out(),
                    got: y.len(),
                });
            }
            let tr = self.trace(x);
            let err = tr.activations.last().unwrap() - y;
            loss += err.norm_squared();
            self.accumulate_vjp(&tr, 2.0 * err, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Sum-of-squares loss only.
    pub fn loss(&self, batch: &[(DVector<f64>, DVector<f64>)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("loss over an empty batch".into()));
        }
        let mut loss = 0.0;
        for (x, y) in batch {
            loss += (self.forward(x)? - y).norm_squared();
        }
        Ok(loss)
    }

    /// Spectral norm of every layer weight, by power iteration.
    pub fn layer_spectral_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| spectral_norm(&l.weight)).collect()
    }

    /// Rescale every layer whose spectral norm exceeds `nu` so that its
    /// norm becomes `nu`. Biases are left untouched.
    pub fn project_spectral(&mut self, nu: f64) -> Result<()> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Usage(format!("projection bound must be positive, got {nu}")));
        }
        for layer in &mut self.layers {
            if !layer.weight.iter().all(|v| v.is_finite()) {
                return Err(Error::Domain("layer weights"));
            }
            // Frobenius norm bounds the spectral norm from above.
            if layer.weight.norm() < nu {
                continue;
            }
            // Layers already on the boundary are left untouched so that
            // re-projection is exact.
            let sigma = spectral_norm(&layer.weight);
            if sigma > nu * (1.0 + PROJECTION_SLACK) {
                layer.weight *= nu / sigma;
            }
        }
        Ok(())
    }

    /// Product of layer spectral norms; a Lipschitz constant of the network in its input.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layer_spectral_norms().iter().product()
    }
}
