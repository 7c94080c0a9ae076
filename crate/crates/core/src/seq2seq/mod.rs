//! Encoder–decoder LSTM with a Bahdanau additive attention head.
//!
//! The decoder predicts a vector in embedding space; words are recovered by
//! nearest-neighbor lookup. There are no start/end tokens: the decoder runs
//! exactly as many steps as the source has tokens, and the "previous output"
//! fed to the first step is the zero vector.

mod lstm;
mod train;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::EmbeddingTable;
use crate::opcount;
use crate::{Error, Result};

pub use lstm::Lstm;
pub use train::{loss_and_gradients, pair_loss, train, TrainConfig, TrainOutcome};

/// Default half-width of the uniform initialization.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub embedding: usize,
    pub hidden: usize,
    pub align: usize,
}

/// `e_i = v · tanh(W_q s + W_k h_i)`
#[derive(Debug, Clone, PartialEq)]
pub struct Additive {
    /// `A × H`, applied to the decoder state.
    pub w_query: Array2<f64>,
    /// `A × H`, applied to each encoder state.
    pub w_key: Array2<f64>,
    pub v: Array1<f64>,
}

/// Hidden state → embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    encoder: Lstm,
    decoder: Lstm,
    attention: Additive,
    projection: Projection,
}

/// Names of the parameter tensors, in the order [`Seq2SeqModel::params`]
/// yields them.
pub const PARAM_NAMES: [&str; 11] = [
    "encoder.w",
    "encoder.u",
    "encoder.b",
    "decoder.w",
    "decoder.u",
    "decoder.b",
    "attention.w_query",
    "attention.w_key",
    "attention.v",
    "projection.w",
    "projection.b",
];

impl Seq2SeqModel {
    /// Assembles a model from parts, checking that every shape agrees.
    pub fn from_parts(encoder: Lstm, decoder: Lstm, attention: Additive, projection: Projection) -> Result<Self> {
        let model = Self {
            encoder,
            decoder,
            attention,
            projection,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let e = self.encoder.input();
        let h = self.encoder.hidden();
        let a = self.attention.v.len();
        let expect = [
            ("encoder.w", self.encoder.w.dim(), (4 * h, e)),
            ("encoder.u", self.encoder.u.dim(), (4 * h, h)),
            ("encoder.b", (self.encoder.b.len(), 1), (4 * h, 1)),
            ("decoder.w", self.decoder.w.dim(), (4 * h, e + h)),
            ("decoder.u", self.decoder.u.dim(), (4 * h, h)),
            ("decoder.b", (self.decoder.b.len(), 1), (4 * h, 1)),
            ("attention.w_query", self.attention.w_query.dim(), (a, h)),
            ("attention.w_key", self.attention.w_key.dim(), (a, h)),
            ("projection.w", self.projection.w.dim(), (e, h)),
            ("projection.b", (self.projection.b.len(), 1), (e, 1)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Format(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if e == 0 || h == 0 || a == 0 {
            return Err(Error::Format("model dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Uniform initialization in `[-scale, scale]` from a seeded generator.
    pub fn random(dims: Dims, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Dims {
            embedding: e,
            hidden: h,
            align: a,
        } = dims;
        let encoder = Lstm::random(e, h, &mut rng, scale);
        let decoder = Lstm::random(e + h, h, &mut rng, scale);
        let attention = Additive {
            w_query: lstm::uniform(&mut rng, (a, h), scale),
            w_key: lstm::uniform(&mut rng, (a, h), scale),
            v: Array1::from_shape_simple_fn(a, || rand::Rng::random_range(&mut rng, -scale..=scale)),
        };
        let projection = Projection {
            w: lstm::uniform(&mut rng, (e, h), scale),
            b: Array1::from_shape_simple_fn(e, || rand::Rng::random_range(&mut rng, -scale..=scale)),
        };
        Self {
            encoder,
            decoder,
            attention,
            projection,
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            embedding: e,
            hidden: h,
            align: a,
        } = dims;
        Self {
            encoder: Lstm::zeros(e, h),
            decoder: Lstm::zeros(e + h, h),
            attention: Additive {
                w_query: Array2::zeros((a, h)),
                w_key: Array2::zeros((a, h)),
                v: Array1::zeros(a),
            },
            projection: Projection {
                w: Array2::zeros((e, h)),
                b: Array1::zeros(e),
            },
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            embedding: self.encoder.input(),
            hidden: self.encoder.hidden(),
            align: self.attention.v.len(),
        }
    }

    pub fn encoder(&self) -> &Lstm {
        &self.encoder
    }

    pub fn decoder(&self) -> &Lstm {
        &self.decoder
    }

    pub fn attention(&self) -> &Additive {
        &self.attention
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    /// Mutable access for hand-built models. Shapes are re-checked.
    pub fn update_parts(&mut self, f: impl FnOnce(&mut Lstm, &mut Lstm, &mut Additive, &mut Projection)) -> Result<()> {
        f(
            &mut self.encoder,
            &mut self.decoder,
            &mut self.attention,
            &mut self.projection,
        );
        self.check_shapes()
    }

    /// Parameter tensors as flat slices, named per [`PARAM_NAMES`].
    pub fn params(&self) -> [(&'static str, &[f64]); 11] {
        fn flat(x: Option<&[f64]>) -> &[f64] {
            x.expect("parameters are contiguous")
        }
        [
            (PARAM_NAMES[0], flat(self.encoder.w.as_slice())),
            (PARAM_NAMES[1], flat(self.encoder.u.as_slice())),
            (PARAM_NAMES[2], flat(self.encoder.b.as_slice())),
            (PARAM_NAMES[3], flat(self.decoder.w.as_slice())),
            (PARAM_NAMES[4], flat(self.decoder.u.as_slice())),
            (PARAM_NAMES[5], flat(self.decoder.b.as_slice())),
            (PARAM_NAMES[6], flat(self.attention.w_query.as_slice())),
            (PARAM_NAMES[7], flat(self.attention.w_key.as_slice())),
            (PARAM_NAMES[8], flat(self.attention.v.as_slice())),
            (PARAM_NAMES[9], flat(self.projection.w.as_slice())),
            (PARAM_NAMES[10], flat(self.projection.b.as_slice())),
        ]
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut [f64]); 11] {
        fn flat(x: Option<&mut [f64]>) -> &mut [f64] {
            x.expect("parameters are contiguous")
        }
        [
            (PARAM_NAMES[0], flat(self.encoder.w.as_slice_mut())),
            (PARAM_NAMES[1], flat(self.encoder.u.as_slice_mut())),
            (PARAM_NAMES[2], flat(self.encoder.b.as_slice_mut())),
            (PARAM_NAMES[3], flat(self.decoder.w.as_slice_mut())),
            (PARAM_NAMES[4], flat(self.decoder.u.as_slice_mut())),
            (PARAM_NAMES[5], flat(self.decoder.b.as_slice_mut())),
            (PARAM_NAMES[6], flat(self.attention.w_query.as_slice_mut())),
            (PARAM_NAMES[7], flat(self.attention.w_key.as_slice_mut())),
            (PARAM_NAMES[8], flat(self.attention.v.as_slice_mut())),
            (PARAM_NAMES[9], flat(self.projection.w.as_slice_mut())),
            (PARAM_NAMES[10], flat(self.projection.b.as_slice_mut())),
        ]
    }

    /// Shapes of the parameter tensors, aligned with [`Self::params`].
    pub fn param_shapes(&self) -> [Vec<usize>; 11] {
        [
            self.encoder.w.shape().to_vec(),
            self.encoder.u.shape().to_vec(),
            self.encoder.b.shape().to_vec(),
            self.decoder.w.shape().to_vec(),
            self.decoder.u.shape().to_vec(),
            self.decoder.b.shape().to_vec(),
            self.attention.w_query.shape().to_vec(),
            self.attention.w_key.shape().to_vec(),
            self.attention.v.shape().to_vec(),
            self.projection.w.shape().to_vec(),
            self.projection.b.shape().to_vec(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|(_, p)| p.iter().all(|x| x.is_finite()))
    }

    /// Maps a hidden vector into embedding space.
    pub fn project(&self, h: ArrayView1<'_, f64>) -> Array1<f64> {
        opcount::add(self.projection.w.len());
        self.projection.w.dot(&h) + &self.projection.b
    }

    /// Precomputes `W_k h_i` for every encoder position.
    pub fn attention_keys(&self, enc: &EncoderStates) -> Array2<f64> {
        opcount::add(enc.states.len() * self.attention.v.len());
        enc.states.dot(&self.attention.w_key.t())
    }

    /// Softmax attention given precomputed keys. Also returns the `tanh`
    /// activations, which the backward pass needs.
    pub(crate) fn attention_with_keys(&self, query: ArrayView1<'_, f64>, keys: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
        let a = self.attention.v.len();
        let p = keys.nrows();
        opcount::add(a * self.encoder.hidden() + 2 * p * a);
        let q = self.attention.w_query.dot(&query);
        let t = (&keys + &q.view().insert_axis(Axis(0))).mapv(f64::tanh);
        let scores = t.dot(&self.attention.v);
        (softmax(scores.view()), t)
    }
}

/// Numerically stable softmax.
pub fn softmax(x: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = x.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

/// Per-position encoder outputs plus the final cell state that seeds the
/// decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    /// `p × H`, row `i` is `h_i`.
    pub states: Array2<f64>,
    pub final_h: Array1<f64>,
    pub final_c: Array1<f64>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

/// Rows of embeddings for a token sequence.
pub fn embed(table: &EmbeddingTable, tokens: &[String]) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((tokens.len(), table.dim()));
    for (mut row, token) in m.rows_mut().into_iter().zip(tokens) {
        row.assign(&table.lookup(token)?);
    }
    Ok(m)
}

/// Runs the encoder over already-embedded inputs.
pub fn encode_embedded(model: &Seq2SeqModel, inputs: ArrayView2<'_, f64>) -> EncoderStates {
    let h_dim = model.dims().hidden;
    let mut h = Array1::zeros(h_dim);
    let mut c = Array1::zeros(h_dim);
    let mut states = Array2::zeros((inputs.nrows(), h_dim));
    for (x, mut out) in inputs.rows().into_iter().zip(states.rows_mut()) {
        (h, c) = model.encoder.step(x, h.view(), c.view());
        out.assign(&h);
    }
    EncoderStates {
        states,
        final_h: h,
        final_c: c,
    }
}

pub fn encode(model: &Seq2SeqModel, table: &EmbeddingTable, tokens: &[String]) -> Result<EncoderStates> {
    check_table(model, table)?;
    Ok(encode_embedded(model, embed(table, tokens)?.view()))
}

fn check_table(model: &Seq2SeqModel, table: &EmbeddingTable) -> Result<()> {
    if model.dims().embedding != table.dim() {
        return Err(Error::Domain(format!(
            "model expects {}-dimensional embeddings, table has {}",
            model.dims().embedding,
            table.dim()
        )));
    }
    Ok(())
}

/// Bahdanau attention distribution of `decoder_state` over the encoder
/// positions.
pub fn attention_weights(model: &Seq2SeqModel, decoder_state: ArrayView1<'_, f64>, enc: &EncoderStates) -> Array1<f64> {
    let keys = model.attention_keys(enc);
    model.attention_with_keys(decoder_state, keys.view()).0
}

/// `Σ_i w_i h_i`
pub fn context(enc: &EncoderStates, weights: ArrayView1<'_, f64>) -> Array1<f64> {
    opcount::add(enc.states.len());
    enc.states.t().dot(&weights)
}

/// Decoder recurrent state `(h, c)`.
pub type DecoderState = (Array1<f64>, Array1<f64>);

/// One decoder step: the LSTM consumes `[prev_output_embedding; context]`
/// and its new hidden state is projected into embedding space.
pub fn decode_step(
    model: &Seq2SeqModel,
    prev_output_embedding: ArrayView1<'_, f64>,
    context: ArrayView1<'_, f64>,
    state: &DecoderState,
) -> (DecoderState, Array1<f64>) {
    let e = prev_output_embedding.len();
    let mut x = Array1::zeros(e + context.len());
    x.slice_mut(s![..e]).assign(&prev_output_embedding);
    x.slice_mut(s![e..]).assign(&context);
    let (h, c) = model.decoder.step(x.view(), state.0.view(), state.1.view());
    let out = model.project(h.view());
    ((h, c), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Softmax,
    Max,
}

/// `p × p` attention grid: row = output position (voter), column = input
/// position (candidate).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub weights: Array2<f64>,
    pub normalization: Normalization,
}

impl AttentionMatrix {
    pub fn new(weights: Array2<f64>, normalization: Normalization) -> Self {
        Self {
            weights,
            normalization,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    /// Divides each row by its maximum.
    pub fn max_normalized(&self) -> AttentionMatrix {
        let mut weights = self.weights.clone();
        for mut row in weights.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            if max > 0.0 {
                row /= max;
            }
        }
        AttentionMatrix::new(weights, Normalization::Max)
    }
}

/// Teacher-forced attention grids, one per pair.
pub fn export_attention(
    model: &Seq2SeqModel,
    corpus: &Corpus,
    table: &EmbeddingTable,
    normalization: Normalization,
) -> Result<Vec<AttentionMatrix>> {
    check_table(model, table)?;
    corpus
        .pairs
        .iter()
        .map(|pair| {
            let src = embed(table, &pair.source)?;
            let tgt = embed(table, &pair.target)?;
            let trace = train::forward(model, src.view(), tgt.view());
            let p = pair.len();
            let mut weights = Array2::zeros((p, p));
            for (mut row, step) in weights.rows_mut().into_iter().zip(&trace.steps) {
                row.assign(&step.alpha);
            }
            let matrix = AttentionMatrix::new(weights, Normalization::Softmax);
            Ok(match normalization {
                Normalization::Softmax => matrix,
                Normalization::Max => matrix.max_normalized(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;
    use ndarray::array;
    use rand::Rng;

    pub(crate) fn tiny_table(dim: usize, words: &[&str], seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = words
            .iter()
            .map(|w| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (w.to_string(), v)
            })
            .collect();
        EmbeddingTable::from_rows(dim, rows).unwrap()
    }

    fn tokens(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn dims() -> Dims {
        Dims {
            embedding: 4,
            hidden: 5,
            align: 3,
        }
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let table = tiny_table(4, &["a", "b", "c"], 1);
        let model = Seq2SeqModel::random(dims(), 3, INIT_SCALE);
        let enc = encode(&model, &table, &tokens("a b c a")).unwrap();
        assert_eq!(enc.states.dim(), (4, 5));
        let again = encode(&model, &table, &tokens("a b c a")).unwrap();
        assert_eq!(enc, again);
        assert!(matches!(
            encode(&model, &table, &tokens("a zz")),
            Err(Error::UnknownToken(_))
        ));
    }

    #[test]
    fn zero_model_encodes_to_zero_states() {
        let table = tiny_table(4, &["a", "b"], 1);
        let model = Seq2SeqModel::zeros(dims());
        let enc = encode(&model, &table, &tokens("a b a")).unwrap();
        // i = f = o = σ(0) = 1/2 and g = tanh(0) = 0, so c and h stay zero.
        assert!(enc.states.iter().all(|&x| x == 0.0));
        assert_eq!(enc.states.row(0), enc.states.row(2));
    }

    #[test]
    fn identical_states_give_uniform_attention() {
        let model = Seq2SeqModel::random(dims(), 5, 0.5);
        let h = array![0.1, -0.2, 0.3, 0.0, 0.5];
        let states = ndarray::stack(Axis(0), &[h.view(), h.view(), h.view(), h.view()]).unwrap();
        let enc = EncoderStates {
            states,
            final_h: h.clone(),
            final_c: h.clone(),
        };
        let w = attention_weights(&model, array![0.3, 0.1, 0.0, -0.4, 0.2].view(), &enc);
        for &x in &w {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_score_saturates_softmax() {
        // One hidden unit, one alignment unit: e_i = v·tanh(q·s + k·h_i).
        let mut model = Seq2SeqModel::zeros(Dims {
            embedding: 1,
            hidden: 1,
            align: 1,
        });
        model
            .update_parts(|_, _, att, _| {
                att.w_key[[0, 0]] = 1.0;
                att.v[0] = 200.0;
            })
            .unwrap();
        let enc = EncoderStates {
            states: array![[0.0], [5.0], [0.0]],
            final_h: array![0.0],
            final_c: array![0.0],
        };
        let w = attention_weights(&model, array![0.0].view(), &enc);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_matches_direct_formula() {
        let model = Seq2SeqModel::random(dims(), 11, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let states = Array2::from_shape_simple_fn((3, 5), || rng.random_range(-1.0..1.0));
        let s: Array1<f64> = Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0));
        let enc = EncoderStates {
            states: states.clone(),
            final_h: Array1::zeros(5),
            final_c: Array1::zeros(5),
        };
        // Scalar loops, independent of the vectorized path.
        let att = model.attention();
        let mut scores = [0.0; 3];
        for (i, score) in scores.iter_mut().enumerate() {
            for a in 0..3 {
                let mut pre = 0.0;
                for k in 0..5 {
                    pre += att.w_query[[a, k]] * s[k] + att.w_key[[a, k]] * states[[i, k]];
                }
                *score += att.v[a] * pre.tanh();
            }
        }
        let z: f64 = scores.iter().map(|e| e.exp()).sum();
        let w = attention_weights(&model, s.view(), &enc);
        for i in 0..3 {
            assert!((w[i] - scores[i].exp() / z).abs() < 1e-10);
        }
    }

    #[test]
    fn swapping_identical_states_keeps_attention() {
        let model = Seq2SeqModel::random(dims(), 2, 0.5);
        let h = array![0.2, 0.2, -0.1, 0.4, 0.0];
        let g = array![-0.3, 0.1, 0.1, 0.0, 0.2];
        let states = ndarray::stack(Axis(0), &[h.view(), g.view(), h.view()]).unwrap();
        let enc = EncoderStates {
            states,
            final_h: g.clone(),
            final_c: g.clone(),
        };
        let w = attention_weights(&model, g.view(), &enc);
        assert!((w[0] - w[2]).abs() < 1e-15);
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_step_contract() {
        let model = Seq2SeqModel::random(dims(), 4, INIT_SCALE);
        let state = (Array1::zeros(5), Array1::zeros(5));
        let prev = array![0.1, 0.2, 0.3, 0.4];
        let ctx = array![0.0, 0.1, 0.0, 0.1, 0.0];
        let (next, out) = decode_step(&model, prev.view(), ctx.view(), &state);
        assert_eq!(out.len(), 4);
        assert_eq!(next.0.len(), 5);
        let (next2, out2) = decode_step(&model, prev.view(), ctx.view(), &state);
        assert_eq!((next, out), (next2, out2));

        let zero = Seq2SeqModel::zeros(dims());
        let (_, out) = decode_step(&zero, Array1::zeros(4).view(), Array1::zeros(5).view(), &state);
        assert_eq!(out, Array1::<f64>::zeros(4));
    }

    #[test]
    fn from_parts_rejects_inconsistent_shapes() {
        let m = Seq2SeqModel::random(dims(), 0, 0.1);
        let mut bad = m.attention().clone();
        bad.w_key = Array2::zeros((2, 2));
        assert!(Seq2SeqModel::from_parts(
            m.encoder().clone(),
            m.decoder().clone(),
            bad,
            m.projection().clone()
        )
        .is_err());
        assert!(Seq2SeqModel::from_parts(
            m.encoder().clone(),
            m.decoder().clone(),
            m.attention().clone(),
            m.projection().clone()
        )
        .is_ok());
    }

    #[test]
    fn max_normalization_arithmetic() {
        let m = AttentionMatrix::new(array![[0.2, 0.5, 0.3]], Normalization::Softmax);
        let n = m.max_normalized();
        for (got, want) in n.weights.iter().zip([0.4, 1.0, 0.6]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn export_attention_rows_are_distributions() {
        let table = tiny_table(4, &["a", "b", "c", "x", "y", "z"], 1);
        let corpus = Corpus::from_pairs(vec![
            SentencePair {
                source: tokens("a b c"),
                target: tokens("x y z"),
            },
            SentencePair {
                source: tokens("c a b a"),
                target: tokens("z x y x"),
            },
        ]);
        let model = Seq2SeqModel::random(dims(), 8, 0.5);
        let soft = export_attention(&model, &corpus, &table, Normalization::Softmax).unwrap();
        assert_eq!(soft.len(), 2);
        assert_eq!(soft[1].weights.dim(), (4, 4));
        for m in &soft {
            for row in m.weights.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
        let maxed = export_attention(&model, &corpus, &table, Normalization::Max).unwrap();
        for m in &maxed {
            for row in m.weights.rows() {
                let max = row.fold(0.0f64, |a, &b| a.max(b));
                assert!((max - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }
}
