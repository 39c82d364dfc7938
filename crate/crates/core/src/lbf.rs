//! Learned barrier function: a small fully connected network trained online.
//!
//! The network maps a world-frame position to a scalar barrier value ĥ.
//! Positive values mean "clear of surfaces", negative values mean "within
//! the safety margin of a surface". Hidden layers use tanh; the output node
//! is affine with identity activation so ĥ can exceed 1 (labels range up to
//! the sensor range minus the margin).
//!
//! Three exact quantities drive the controller:
//! - `forward`: the value ĥ(p),
//! - `input_gradient`: ∂ĥ/∂p by reverse-mode differentiation through the
//!   tanh chain (`d tanh(z)/dz = 1 - tanh²(z)`),
//! - `cbc_residual`: the discrete-time barrier condition
//!   ĥ(p⁺) − ĥ(p) + γ·ĥ(p), nonnegative when the condition holds.
//!
//! Training is plain full-batch gradient descent on mean squared error,
//! warm-continued across ticks: every scan yields a fresh dataset and the
//! same network keeps learning, which is what lets a few epochs per tick
//! suffice.

use crate::sensing::Dataset;
use crate::world::Position2;
use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default architecture: 2 inputs, five tanh hidden layers, scalar output.
pub const DEFAULT_LAYER_SIZES: [usize; 7] = [2, 32, 32, 16, 16, 8, 1];

/// Gradient-descent settings for one training round, plus the seed that
/// initialized the network.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Rows per gradient step; `None` uses the whole dataset per step.
    /// Mini-batches are drawn from a seeded per-epoch shuffle, so training
    /// stays deterministic for a given seed.
    pub batch_size: Option<usize>,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: None,
            seed: 0,
        }
    }
}

/// Outcome of one training round.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Full-dataset loss before any update.
    pub initial_loss: f64,
    /// Full-dataset loss after the last update.
    pub final_loss: f64,
    pub epochs_run: usize,
    /// Full-dataset loss before each epoch's updates, then the final loss;
    /// length `epochs_run + 1`.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrainError {
    /// The loss left the representable range (divergent learning rate).
    /// Parameters are rolled back to their values at entry.
    #[error("training loss became non-finite; parameters restored")]
    NonFiniteLoss,
    #[error("training dataset is empty")]
    EmptyDataset,
}

/// Region classification of a position relative to the margin `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyClass {
    Safe,
    Boundary,
    Unsafe,
}

/// Fully connected network with tanh hidden layers and an identity output.
///
/// `weights[l]` has shape `layer_sizes[l] x layer_sizes[l+1]` (inputs of the
/// layer by outputs), so a layer computes `z = weights[l]ᵀ a + biases[l]`.
#[derive(Debug, Clone)]
pub struct BarrierNet {
    sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl BarrierNet {
    /// Builds a network with the given layer sizes, weights drawn uniformly
    /// from ±sqrt(6 / (n_in + n_out)) per layer (a seeded, reproducible
    /// draw), and zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Self {
        assert!(
            layer_sizes.len() >= 2,
            "network needs at least input and output layers"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let mut m = DMatrix::zeros(n_in, n_out);
            for i in 0..n_in {
                for j in 0..n_out {
                    m[(i, j)] = rng.gen_range(-limit..limit);
                }
            }
            weights.push(m);
            biases.push(DVector::zeros(n_out));
        }
        Self {
            sizes: layer_sizes.to_vec(),
            weights,
            biases,
        }
    }

    /// All-zero parameters; useful as a fixture (constant-zero output).
    pub fn zeroed(layer_sizes: &[usize]) -> Self {
        assert!(layer_sizes.len() >= 2);
        let weights = layer_sizes
            .windows(2)
            .map(|w| DMatrix::zeros(w[0], w[1]))
            .collect();
        let biases = layer_sizes.windows(2).map(|w| DVector::zeros(w[1])).collect();
        Self {
            sizes: layer_sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut DMatrix<f64> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut DVector<f64> {
        &mut self.biases[layer]
    }

    fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Evaluates ĥ at a single position.
    pub fn forward(&self, p: Position2) -> f64 {
        let last = self.num_layers() - 1;
        let mut a = DVector::from_column_slice(&[p.x, p.y]);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.tr_mul(&a);
            z += b;
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            a = z;
        }
        a[0]
    }

    /// Evaluates ĥ on a batch of positions given as a `2 x n` matrix,
    /// returning the `1 x n` output row.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let acts = self.forward_batch_cached(inputs);
        acts.into_iter().last().unwrap()
    }

    /// Forward pass keeping every layer's activation (the input is layer 0).
    fn forward_batch_cached(&self, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(inputs.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            // Weight matrices are small; the transpose copy is cheap and the
            // big product runs on the optimized matmul path.
            let mut z = w.transpose() * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Exact gradient of ĥ with respect to the input position, by reverse
    /// accumulation: v_{l-1} = W_l (d_l ⊙ v_l) with d_l = 1 - tanh²(z_l).
    pub fn input_gradient(&self, p: Position2) -> Vector2<f64> {
        let last = self.num_layers() - 1;
        // Forward, keeping hidden activations (tanh values).
        let mut acts: Vec<DVector<f64>> = Vec::with_capacity(self.num_layers());
        let mut a = DVector::from_column_slice(&[p.x, p.y]);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.tr_mul(&a);
            z += b;
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z.clone());
            a = z;
        }
        // Backward: seed with the output layer's weight column.
        let mut v = self.weights[last].column(0).clone_owned();
        for l in (1..=last).rev() {
            // acts[l-1] holds tanh(z_l) for hidden layer l.
            let mut dz = v;
            for (d, &a) in dz.iter_mut().zip(acts[l - 1].iter()) {
                *d *= 1.0 - a * a;
            }
            v = &self.weights[l - 1] * dz;
        }
        Vector2::new(v[0], v[1])
    }

    /// Classifies a position against the margin `delta` with tolerance
    /// `tol`: Safe if ĥ > delta + tol, Boundary if |ĥ - delta| <= tol,
    /// Unsafe otherwise.
    pub fn classify(&self, p: Position2, delta: f64, tol: f64) -> SafetyClass {
        let h = self.forward(p);
        if h > delta + tol {
            SafetyClass::Safe
        } else if (h - delta).abs() <= tol {
            SafetyClass::Boundary
        } else {
            SafetyClass::Unsafe
        }
    }

    /// Discrete-time barrier condition residual
    /// ĥ(p_next) − ĥ(p_now) + γ·ĥ(p_now); nonnegative iff the condition
    /// holds for this transition.
    pub fn cbc_residual(&self, p_next: Position2, p_now: Position2, gamma: f64) -> f64 {
        self.forward(p_next) - (1.0 - gamma) * self.forward(p_now)
    }

    /// Runs `cfg.epochs` of gradient descent on mean squared error against
    /// the dataset labels, updating parameters in place. Returns the loss
    /// trajectory. On a non-finite loss the parameters are restored to their
    /// values at entry and `NonFiniteLoss` is returned.
    pub fn train_incremental(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<TrainReport, TrainError> {
        let n = data.len();
        if n == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let snapshot = (self.weights.clone(), self.biases.clone());

        let mut x = DMatrix::zeros(2, n);
        for (i, p) in data.inputs.iter().enumerate() {
            x[(0, i)] = p.x;
            x[(1, i)] = p.y;
        }
        let y = DMatrix::from_fn(1, n, |_, i| data.labels[i]);

        let batch = cfg.batch_size.unwrap_or(n).clamp(1, n);
        let full_batch = batch == n;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1bf_7a11);

        let mut epoch_losses = Vec::with_capacity(cfg.epochs + 1);
        for _ in 0..cfg.epochs {
            let pre_loss = if full_batch {
                // The descent step evaluates the full dataset anyway; reuse
                // that forward pass as this epoch's loss sample.
                self.descend(&x, &y, cfg.learning_rate)
            } else {
                let l = self.batch_loss(&x, &y);
                // Fisher-Yates with the config seed: a fresh but
                // reproducible visiting order every epoch.
                for i in (1..n).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                let mut start = 0;
                while start < n {
                    let m = batch.min(n - start);
                    let mut xs = DMatrix::zeros(2, m);
                    let mut ys = DMatrix::zeros(1, m);
                    for (k, &idx) in order[start..start + m].iter().enumerate() {
                        xs.set_column(k, &x.column(idx));
                        ys[(0, k)] = y[(0, idx)];
                    }
                    self.descend(&xs, &ys, cfg.learning_rate);
                    start += m;
                }
                l
            };
            if !pre_loss.is_finite() {
                self.weights = snapshot.0;
                self.biases = snapshot.1;
                return Err(TrainError::NonFiniteLoss);
            }
            epoch_losses.push(pre_loss);
        }

        let final_loss = self.batch_loss(&x, &y);
        if !final_loss.is_finite() {
            self.weights = snapshot.0;
            self.biases = snapshot.1;
            return Err(TrainError::NonFiniteLoss);
        }
        epoch_losses.push(final_loss);

        Ok(TrainReport {
            initial_loss: epoch_losses[0],
            final_loss,
            epochs_run: cfg.epochs,
            epoch_losses,
        })
    }

    /// Mean squared error of the current parameters on a batch.
    fn batch_loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let pred = self.forward_batch(x);
        let diff = pred - y;
        diff.norm_squared() / x.ncols() as f64
    }

    /// One gradient-descent step on the batch; returns the pre-update loss.
    fn descend(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>, lr: f64) -> f64 {
        let m = x.ncols() as f64;
        let acts = self.forward_batch_cached(x);
        let last = self.num_layers() - 1;

        let mut delta = &acts[last + 1] - y;
        let loss = delta.norm_squared() / m;
        delta *= 2.0 / m;

        for l in (0..=last).rev() {
            let dw = &acts[l] * delta.transpose();
            let db = delta.column_sum();
            if l > 0 {
                let mut prev = &self.weights[l] * delta;
                prev.zip_apply(&acts[l], |d, a| *d *= 1.0 - a * a);
                delta = prev;
            }
            self.weights[l] -= dw * lr;
            self.biases[l] -= db * lr;
        }
        loss
    }
}
