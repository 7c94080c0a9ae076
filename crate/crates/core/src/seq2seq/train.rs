//! Teacher-forced training with hand-written backpropagation through time.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{add_outer, LstmCache};
use super::{embed, Seq2SeqModel};
use crate::corpus::Corpus;
use crate::embeddings::EmbeddingTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm cap per update.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 10,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Seq2SeqModel,
    /// Mean per-pair loss of each epoch.
    pub loss_trace: Vec<f64>,
}

pub(crate) struct DecoderStep {
    query: Array1<f64>,
    tanh: Array2<f64>,
    pub(crate) alpha: Array1<f64>,
    lstm: LstmCache,
    h: Array1<f64>,
    d_out: Array1<f64>,
}

pub(crate) struct PairTrace {
    encoder: Vec<LstmCache>,
    states: Array2<f64>,
    pub(crate) steps: Vec<DecoderStep>,
    pub(crate) loss: f64,
}

/// `1 - cos(a, b)` and its gradient with respect to `a`.
fn cosine_loss(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
    let na = a.dot(&a).sqrt().max(1e-12);
    let nb = b.dot(&b).sqrt().max(1e-12);
    let cos = a.dot(&b) / (na * nb);
    let grad = &a * (cos / (na * na)) - &b / (na * nb);
    (1.0 - cos, grad)
}

/// Teacher-forced forward pass over one pair, keeping every activation.
pub(crate) fn forward(model: &Seq2SeqModel, src: ArrayView2<'_, f64>, tgt: ArrayView2<'_, f64>) -> PairTrace {
    let dims = model.dims();
    let (e, h_dim) = (dims.embedding, dims.hidden);
    let p = src.nrows();

    let mut h = Array1::zeros(h_dim);
    let mut c = Array1::zeros(h_dim);
    let mut states = Array2::zeros((p, h_dim));
    let mut encoder = Vec::with_capacity(p);
    for (t, x) in src.rows().into_iter().enumerate() {
        let (nh, nc, cache) = model.encoder.step_cached(x, h.view(), c.view());
        states.row_mut(t).assign(&nh);
        encoder.push(cache);
        (h, c) = (nh, nc);
    }

    let keys = states.dot(&model.attention.w_key.t());
    let mut steps = Vec::with_capacity(p);
    let mut loss = 0.0;
    let mut x = Array1::zeros(e + h_dim);
    for j in 0..tgt.nrows() {
        if j > 0 {
            x.slice_mut(s![..e]).assign(&tgt.row(j - 1));
        }
        let (alpha, tanh) = model.attention_with_keys(h.view(), keys.view());
        x.slice_mut(s![e..]).assign(&states.t().dot(&alpha));
        let (nh, nc, lstm) = model.decoder.step_cached(x.view(), h.view(), c.view());
        let out = model.projection.w.dot(&nh) + &model.projection.b;
        let (l, d_out) = cosine_loss(out.view(), tgt.row(j));
        loss += l;
        steps.push(DecoderStep {
            query: h,
            tanh,
            alpha,
            lstm,
            h: nh.clone(),
            d_out,
        });
        (h, c) = (nh, nc);
    }

    PairTrace {
        encoder,
        states,
        steps,
        loss,
    }
}

fn backward(model: &Seq2SeqModel, trace: &PairTrace, grad: &mut Seq2SeqModel) {
    let dims = model.dims();
    let (e, h_dim) = (dims.embedding, dims.hidden);
    let p = trace.states.nrows();
    let att = &model.attention;

    let mut d_states = Array2::<f64>::zeros((p, h_dim));
    // d_hidden[j] is the gradient w.r.t. the decoder hidden state entering
    // step j; d_hidden[0] is the encoder's final hidden state.
    let mut d_hidden = vec![Array1::<f64>::zeros(h_dim); trace.steps.len() + 1];
    let mut dc = Array1::<f64>::zeros(h_dim);

    for (j, step) in trace.steps.iter().enumerate().rev() {
        add_outer(&mut grad.projection.w, step.d_out.view(), step.h.view());
        grad.projection.b += &step.d_out;
        let dh = &d_hidden[j + 1] + &model.projection.w.t().dot(&step.d_out);

        let (dx, dh_prev, dc_prev) = model.decoder.backward(&step.lstm, &dh, &dc, &mut grad.decoder);
        d_hidden[j] += &dh_prev;
        dc = dc_prev;

        // context = Σ α_i h_i
        let d_ctx = dx.slice(s![e..]);
        let d_alpha = trace.states.dot(&d_ctx);
        add_outer(&mut d_states, step.alpha.view(), d_ctx);

        // softmax
        let dot = step.alpha.dot(&d_alpha);
        let d_score = &step.alpha * &(d_alpha - dot);

        // score_i = v · tanh(pre_i), pre_i = W_q s + W_k h_i
        grad.attention.v += &step.tanh.t().dot(&d_score);
        let d_pre = &d_score.view().insert_axis(Axis(1))
            * &att.v.view().insert_axis(Axis(0))
            * &step.tanh.mapv(|t| 1.0 - t * t);
        let d_query = d_pre.sum_axis(Axis(0));
        add_outer(&mut grad.attention.w_query, d_query.view(), step.query.view());
        d_hidden[j] += &att.w_query.t().dot(&d_query);
        grad.attention.w_key += &d_pre.t().dot(&trace.states);
        d_states += &d_pre.dot(&att.w_key);
    }

    // The decoder starts from the encoder's final (h, c).
    let mut dh_next = d_hidden.swap_remove(0);
    for (t, cache) in trace.encoder.iter().enumerate().rev() {
        let dh = &d_states.row(t) + &dh_next;
        let (_, dh_prev, dc_prev) = model.encoder.backward(cache, &dh, &dc, &mut grad.encoder);
        dh_next = dh_prev;
        dc = dc_prev;
    }
}

/// Summed cosine loss of one pair under teacher forcing.
pub fn pair_loss(model: &Seq2SeqModel, src: ArrayView2<'_, f64>, tgt: ArrayView2<'_, f64>) -> f64 {
    forward(model, src, tgt).loss
}

/// Loss of one pair and its gradient with respect to every parameter, the
/// gradient packed in a model-shaped container.
pub fn loss_and_gradients(model: &Seq2SeqModel, src: ArrayView2<'_, f64>, tgt: ArrayView2<'_, f64>) -> (f64, Seq2SeqModel) {
    let trace = forward(model, src, tgt);
    let mut grad = Seq2SeqModel::zeros(model.dims());
    backward(model, &trace, &mut grad);
    (trace.loss, grad)
}

fn global_norm(grad: &Seq2SeqModel) -> f64 {
    grad.params()
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Per-pair SGD with global-norm clipping over shuffled epochs.
pub fn train(model: Seq2SeqModel, corpus: &Corpus, table: &EmbeddingTable, config: &TrainConfig) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Domain("cannot train on an empty corpus".into()));
    }
    if !(config.lr >= 0.0 && config.lr.is_finite()) || config.grad_clip.is_nan() || config.grad_clip <= 0.0 {
        return Err(Error::Config(format!(
            "need lr >= 0 and grad_clip > 0, got lr = {}, grad_clip = {}",
            config.lr, config.grad_clip
        )));
    }
    if model.dims().embedding != table.dim() {
        return Err(Error::Domain("model and embedding table dimensions differ".into()));
    }
    let data: Vec<(Array2<f64>, Array2<f64>)> = corpus
        .pairs
        .iter()
        .map(|p| Ok((embed(table, &p.source)?, embed(table, &p.target)?)))
        .collect::<Result<_>>()?;

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &index in &order {
            let (src, tgt) = &data[index];
            let (loss, grad) = loss_and_gradients(&model, src.view(), tgt.view());
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss {loss} at epoch {epoch}, pair {index} ({:?})",
                    corpus.pairs[index].source
                )));
            }
            total += loss;
            let norm = global_norm(&grad);
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient norm {norm} at epoch {epoch}, pair {index}"
                )));
            }
            let scale = if norm > config.grad_clip {
                config.grad_clip / norm
            } else {
                1.0
            };
            let step = config.lr * scale;
            if step != 0.0 {
                for ((_, p), (_, g)) in model.params_mut().into_iter().zip(grad.params()) {
                    for (w, dw) in p.iter_mut().zip(g) {
                        *w -= step * dw;
                    }
                }
            }
        }
        let mean = total / data.len() as f64;
        log::info!("epoch {}: mean loss {mean:.5}", epoch + 1);
        loss_trace.push(mean);
    }
    debug_assert!(model.is_finite());
    Ok(TrainOutcome { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_table;
    use super::super::{Dims, INIT_SCALE};
    use super::*;
    use crate::corpus::SentencePair;

    fn pair(src: &str, tgt: &str) -> SentencePair {
        SentencePair {
            source: src.split_whitespace().map(String::from).collect(),
            target: tgt.split_whitespace().map(String::from).collect(),
        }
    }

    fn dims() -> Dims {
        Dims {
            embedding: 4,
            hidden: 6,
            align: 6,
        }
    }

    #[test]
    fn cosine_loss_gradient_is_orthogonal_to_input() {
        let a = ndarray::array![0.3, -1.0, 2.0];
        let b = ndarray::array![1.0, 0.5, 0.5];
        let (_, g) = cosine_loss(a.view(), b.view());
        // Cosine is scale invariant, so the gradient has no radial part.
        assert!(g.dot(&a).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let table = tiny_table(4, &["a", "b", "x", "y"], 3);
        let corpus = Corpus::from_pairs(vec![pair("a b", "x y"), pair("b a", "y x")]);
        let model = Seq2SeqModel::random(dims(), 1, INIT_SCALE);
        let config = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &corpus, &table, &config).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.loss_trace.len(), 3);
    }

    #[test]
    fn overfits_a_single_pair() {
        let table = tiny_table(4, &["a", "b", "c", "x", "y", "z"], 3);
        let corpus = Corpus::from_pairs(vec![pair("a b c", "z x y")]);
        let model = Seq2SeqModel::random(dims(), 2, INIT_SCALE);
        let config = TrainConfig {
            lr: 0.05,
            epochs: 200,
            seed: 1,
            grad_clip: 5.0,
        };
        let out = train(model, &corpus, &table, &config).unwrap();
        let first = out.loss_trace[0];
        let last = *out.loss_trace.last().unwrap();
        assert!(last <= 0.5 * first, "loss {first} -> {last}");
        assert!(out.model.is_finite());
    }

    #[test]
    fn memorized_pair_loss_goes_below_threshold() {
        let table = tiny_table(4, &["a", "b", "c", "d", "w", "x", "y", "z"], 5);
        let corpus = Corpus::from_pairs(vec![pair("a b c d", "w x y z")]);
        let model = Seq2SeqModel::random(dims(), 7, INIT_SCALE);
        let config = TrainConfig {
            lr: 0.05,
            epochs: 1500,
            seed: 1,
            grad_clip: 5.0,
        };
        let out = train(model, &corpus, &table, &config).unwrap();
        assert!(*out.loss_trace.last().unwrap() < 0.05, "{:?}", out.loss_trace.last());
    }

    #[test]
    fn training_is_deterministic() {
        let table = tiny_table(4, &["a", "b", "c", "x", "y", "z"], 3);
        let corpus = Corpus::from_pairs(vec![pair("a b c", "x y z"), pair("c b", "z y"), pair("a", "x")]);
        let config = TrainConfig {
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let model = Seq2SeqModel::random(dims(), 4, INIT_SCALE);
            train(model, &corpus, &table, &config).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let table = tiny_table(4, &["a"], 3);
        let model = Seq2SeqModel::random(dims(), 4, INIT_SCALE);
        assert!(train(model, &Corpus::default(), &table, &TrainConfig::default()).is_err());
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let dims = Dims {
            embedding: 3,
            hidden: 4,
            align: 3,
        };
        let table = tiny_table(3, &["a", "b", "c", "x", "y", "z"], 21);
        let src = embed(&table, &["a".into(), "b".into(), "c".into()]).unwrap();
        let tgt = embed(&table, &["z".into(), "y".into(), "x".into()]).unwrap();
        let model = Seq2SeqModel::random(dims, 5, 0.5);
        let (_, grad) = loss_and_gradients(&model, src.view(), tgt.view());
        let step = 1e-5;
        for (k, (name, analytic)) in grad.params().iter().enumerate() {
            for (idx, &a) in analytic.iter().enumerate() {
                let mut plus = model.clone();
                plus.params_mut()[k].1[idx] += step;
                let mut minus = model.clone();
                minus.params_mut()[k].1[idx] -= step;
                let numeric = (pair_loss(&plus, src.view(), tgt.view())
                    - pair_loss(&minus, src.view(), tgt.view()))
                    / (2.0 * step);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{idx}]: analytic {a}, numeric {numeric}");
            }
        }
    }
}
