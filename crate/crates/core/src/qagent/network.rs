use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionValue, CachedQ, QLearner};
use crate::embeddings::EmbeddingTable;
use crate::{Error, Result};

/// Hidden layer widths of the value network.
pub const HIDDEN: [usize; 3] = [128, 256, 128];

/// One fully connected layer, `y = w x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Multilayer perceptron mapping `[embedding; action flag]` to a scalar.
/// Hidden layers use ReLU, the output is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

impl QNetwork {
    /// He-uniform initialization with the default hidden widths.
    pub fn new(embedding_dim: usize, seed: u64) -> Self {
        Self::with_hidden(embedding_dim, &HIDDEN, seed)
    }

    pub fn with_hidden(embedding_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths(embedding_dim, hidden)
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..=bound)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(embedding_dim: usize, hidden: &[usize]) -> Self {
        let layers = widths(embedding_dim, hidden)
            .windows(2)
            .map(|pair| Dense {
                w: Array2::zeros((pair[1], pair[0])),
                b: Array1::zeros(pair[1]),
            })
            .collect();
        Self { layers }
    }

    /// Validates that consecutive layers chain and end in a scalar.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Format("network has no layers".into()));
        };
        if last.w.nrows() != 1 {
            return Err(Error::Format(format!("output layer has {} units, expected 1", last.w.nrows())));
        }
        if layers[0].w.ncols() < 2 {
            return Err(Error::Format("input layer must take an embedding plus the action flag".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.b.len() != layer.w.nrows() {
                return Err(Error::Format(format!("layer {i}: bias length does not match weights")));
            }
            if i > 0 && layer.w.ncols() != layers[i - 1].w.nrows() {
                return Err(Error::Format(format!("layer {i}: input width does not match previous layer")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Embedding dimension the network expects (the action flag excluded).
    pub fn embedding_dim(&self) -> usize {
        self.layers[0].w.ncols() - 1
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.w.nrows()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|x| x.is_finite()))
    }

    /// `Q(s, a)`.
    pub fn q_value(&self, state: ArrayView1<'_, f64>, action: Action) -> Result<f64> {
        self.check_dim(state.len())?;
        Ok(self.evaluate(state, action))
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.embedding_dim() {
            return Err(Error::Domain(format!(
                "Q-network expects {}-dimensional states, got {dim}",
                self.embedding_dim()
            )));
        }
        Ok(())
    }

    fn input(state: ArrayView1<'_, f64>, action: Action) -> Array1<f64> {
        let mut x = Array1::zeros(state.len() + 1);
        x.slice_mut(ndarray::s![..state.len()]).assign(&state);
        x[state.len()] = action.flag();
        x
    }

    fn evaluate(&self, state: ArrayView1<'_, f64>, action: Action) -> f64 {
        let mut a = Self::input(state, action);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.w.dot(&a) + &layer.b;
            if i < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a[0]
    }

    /// One SGD step on `½ (Q(s, a) − target)²` with step size `alpha`.
    pub fn regress(&mut self, state: ArrayView1<'_, f64>, action: Action, target: f64, alpha: f64) -> Result<()> {
        self.check_dim(state.len())?;
        let last = self.layers.len() - 1;
        let mut acts = vec![Self::input(state, action)];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&acts[i]) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let q = acts[last + 1][0];
        let err = q - target;
        if !err.is_finite() {
            return Err(Error::Numeric(format!(
                "Q-network produced {q} against target {target}"
            )));
        }
        let mut delta = Array1::from_elem(1, err);
        for i in (0..=last).rev() {
            let back = if i > 0 {
                let mut d = self.layers[i].w.t().dot(&delta);
                // ReLU derivative, read off the stored post-activation.
                d.zip_mut_with(&acts[i], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                Some(d)
            } else {
                None
            };
            let layer = &mut self.layers[i];
            Zip::from(layer.w.rows_mut()).and(&delta).for_each(|mut row, &d| {
                if d != 0.0 {
                    row.scaled_add(-alpha * d, &acts[i]);
                }
            });
            layer.b.scaled_add(-alpha, &delta);
            if let Some(d) = back {
                delta = d;
            }
        }
        if !self.is_finite() {
            return Err(Error::Numeric(format!(
                "Q-network update diverged (alpha {alpha}, target {target}, prediction {q})"
            )));
        }
        Ok(())
    }

    /// Evaluates both actions for every word of `table`, freezing the
    /// network into a lookup for inference.
    pub fn tabulate(&self, table: &EmbeddingTable) -> Result<CachedQ> {
        self.check_dim(table.dim())?;
        let values = (0..table.len())
            .map(|id| {
                let s = table.vector(id);
                [self.evaluate(s, Action::Stop), self.evaluate(s, Action::Hop)]
            })
            .collect();
        Ok(CachedQ::new(values))
    }
}

fn widths(embedding_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![embedding_dim + 1];
    w.extend_from_slice(hidden);
    w.push(1);
    w
}

impl ActionValue for QNetwork {
    fn value(&self, table: &EmbeddingTable, token: usize, action: Action) -> f64 {
        self.evaluate(table.vector(token), action)
    }
}

impl QLearner for QNetwork {
    fn update_toward(&mut self, table: &EmbeddingTable, token: usize, action: Action, target: f64, alpha: f64) -> Result<()> {
        self.regress(table.vector(token), action, target, alpha)
    }
}
