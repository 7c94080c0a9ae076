//! Q-learning agent that walks the embedding similarity graph.
//!
//! States are words (through their embeddings) and there are two actions:
//! stop (0) and hop (1). `Q(x, Hop)` is the value of hopping *into* `x` and
//! `Q(x, Stop)` the value of stopping at `x`, so the greedy walk compares
//! `Q(current, Stop)` against `Q(n, Hop)` over the neighbors `n`. A
//! transition therefore updates the entry `(next_state, action)`, and its
//! bootstrap term is the best option available from the next state.
//!
//! Rewards follow the cosine rule: a hop earns `cos(S_{t+1}, S_t)`, stopping
//! earns `cos(S_t, S_t)` and ends the episode. There is no discount; the
//! horizon bounds every episode.

mod network;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::{EmbeddingTable, SimilarityGraph};
use crate::seq2seq::Seq2SeqModel;
use crate::{Error, Result};

pub use network::{Dense, QNetwork, HIDDEN};

/// Floor of the linear exploration schedule.
pub const EPSILON_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QConfig {
    pub alpha: f64,
    pub horizon: usize,
    /// Initial exploration rate; decays linearly to [`EPSILON_FLOOR`].
    pub epsilon0: f64,
    pub threshold: f64,
    pub bonus: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            alpha: 0.002,
            horizon: 4,
            epsilon0: 0.9,
            threshold: 0.79,
            bonus: 0.25,
            episodes: 2000,
            seed: 0,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("q.alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("q.horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return Err(Error::Config(format!("q.epsilon0 must be in [0, 1], got {}", self.epsilon0)));
        }
        if !(self.bonus >= 0.0 && self.bonus.is_finite()) {
            return Err(Error::Config(format!("q.bonus must be non-negative, got {}", self.bonus)));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("graph.threshold must be in [-1, 1], got {}", self.threshold)));
        }
        Ok(())
    }

    /// Exploration rate for episode `e` of `self.episodes`.
    pub fn epsilon(&self, e: usize) -> f64 {
        let end = self.epsilon0.min(EPSILON_FLOOR);
        if self.episodes <= 1 {
            return self.epsilon0;
        }
        let t = e as f64 / (self.episodes - 1) as f64;
        self.epsilon0 + (end - self.epsilon0) * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Stop,
    Hop,
}

impl Action {
    /// The value appended to the state embedding.
    pub fn flag(self) -> f64 {
        match self {
            Action::Stop => 0.0,
            Action::Hop => 1.0,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Anything that can score a `(word, action)` pair.
pub trait ActionValue {
    fn value(&self, table: &EmbeddingTable, token: usize, action: Action) -> f64;
}

/// An [`ActionValue`] that can be moved toward a target.
pub trait QLearner: ActionValue {
    fn update_toward(&mut self, table: &EmbeddingTable, token: usize, action: Action, target: f64, alpha: f64) -> Result<()>;
}

/// Exact tabular values, defaulting to zero. Serves as the reference the
/// network is checked against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularQ {
    values: BTreeMap<(usize, Action), f64>,
}

impl TabularQ {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, token: usize, action: Action) -> f64 {
        self.values.get(&(token, action)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, token: usize, action: Action, value: f64) {
        self.values.insert((token, action), value);
    }
}

impl ActionValue for TabularQ {
    fn value(&self, _table: &EmbeddingTable, token: usize, action: Action) -> f64 {
        self.get(token, action)
    }
}

impl QLearner for TabularQ {
    fn update_toward(&mut self, _table: &EmbeddingTable, token: usize, action: Action, target: f64, alpha: f64) -> Result<()> {
        let q = self.get(token, action);
        let updated = q + alpha * (target - q);
        if !updated.is_finite() {
            return Err(Error::Numeric(format!("tabular update to {updated} (q {q}, target {target})")));
        }
        self.set(token, action, updated);
        Ok(())
    }
}

/// A frozen network evaluated once per word, indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedQ {
    values: Vec<[f64; 2]>,
}

impl CachedQ {
    pub fn new(values: Vec<[f64; 2]>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl ActionValue for CachedQ {
    fn value(&self, _table: &EmbeddingTable, token: usize, action: Action) -> f64 {
        self.values[token][action.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: Action,
    pub next_state: usize,
    pub reward: f64,
    /// No bootstrap beyond this transition.
    pub terminal: bool,
}

impl Transition {
    pub fn new(state: usize, action: Action, next_state: usize, reward: f64, terminal: bool) -> Result<Self> {
        if action == Action::Stop && next_state != state {
            return Err(Error::Domain("a stop transition must stay in place".into()));
        }
        Ok(Self {
            state,
            action,
            next_state,
            reward,
            terminal,
        })
    }
}

/// `max(Q(x, Stop), max_{n ∈ N(x)} Q(n, Hop))` together with the greedy
/// choice: `None` for stop, `Some(n)` for a hop. Stop wins ties, and among
/// neighbors the smallest token id wins.
pub fn greedy_option<Q: ActionValue + ?Sized>(q: &Q, current: usize, graph: &SimilarityGraph, table: &EmbeddingTable) -> (f64, Option<usize>) {
    let stay = q.value(table, current, Action::Stop);
    let mut best: Option<(usize, f64)> = None;
    for &(n, _) in graph.neighbors(current) {
        let v = q.value(table, n, Action::Hop);
        best = match best {
            Some((b, bv)) if bv > v || (bv == v && b < n) => Some((b, bv)),
            _ => Some((n, v)),
        };
    }
    match best {
        Some((n, v)) if v > stay => (v, Some(n)),
        _ => (stay, None),
    }
}

/// `reward + max(Q(S', Stop), max_n Q(n, Hop))`, or just the reward for a
/// terminal transition. No discount.
pub fn q_target<Q: ActionValue + ?Sized>(q: &Q, transition: &Transition, graph: &SimilarityGraph, table: &EmbeddingTable) -> f64 {
    if transition.terminal {
        return transition.reward;
    }
    transition.reward + greedy_option(q, transition.next_state, graph, table).0
}

/// Moves the entry `(next_state, action)` toward [`q_target`] with step
/// size `alpha`. Exact `Q + α(target − Q)` for [`TabularQ`]; one gradient
/// step on the squared error for [`QNetwork`].
pub fn q_update_step<Q: QLearner + ?Sized>(
    q: &mut Q,
    transition: &Transition,
    alpha: f64,
    graph: &SimilarityGraph,
    table: &EmbeddingTable,
) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let target = q_target(q, transition, graph, table);
    q.update_toward(table, transition.next_state, transition.action, target, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ActionZero,
    Horizon,
    NoNeighbors,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkTrace {
    pub start: usize,
    pub visited: Vec<usize>,
    pub stop_reason: StopReason,
}

impl WalkTrace {
    /// The visited words with duplicates collapsed.
    pub fn similar_words(&self) -> BTreeSet<usize> {
        self.visited.iter().copied().collect()
    }
}

/// Greedy walk from `start`: at most `horizon` hops, each to the neighbor
/// with the largest hop value, stopping as soon as staying is at least as
/// good.
pub fn walk<Q: ActionValue + ?Sized>(q: &Q, start: usize, graph: &SimilarityGraph, table: &EmbeddingTable, horizon: usize) -> WalkTrace {
    let mut visited = Vec::new();
    let mut current = start;
    let stop_reason = loop {
        if visited.len() == horizon {
            break StopReason::Horizon;
        }
        if graph.neighbors(current).is_empty() {
            break StopReason::NoNeighbors;
        }
        match greedy_option(q, current, graph, table).1 {
            None => break StopReason::ActionZero,
            Some(n) => {
                visited.push(n);
                current = n;
            }
        }
    };
    WalkTrace {
        start,
        visited,
        stop_reason,
    }
}

/// One epsilon-greedy training episode from `start`, updating `q` after
/// every transition. Returns the total reward collected.
pub fn run_episode<Q: QLearner + ?Sized>(
    q: &mut Q,
    start: usize,
    graph: &SimilarityGraph,
    table: &EmbeddingTable,
    config: &QConfig,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut current = start;
    let mut total = 0.0;
    for t in 0..config.horizon {
        let neighbors = graph.neighbors(current);
        let choice = if rng.random::<f64>() < epsilon {
            match rng.random_range(0..=neighbors.len()) {
                0 => None,
                i => Some(neighbors[i - 1].0),
            }
        } else {
            greedy_option(q, current, graph, table).1
        };
        let transition = match choice {
            None => Transition::new(current, Action::Stop, current, table.similarity(current, current), true)?,
            Some(n) => Transition::new(current, Action::Hop, n, table.similarity(n, current), t + 1 == config.horizon)?,
        };
        q_update_step(q, &transition, config.alpha, graph, table)?;
        total += transition.reward;
        if transition.action == Action::Stop {
            break;
        }
        current = transition.next_state;
    }
    Ok(total)
}

/// Runs `config.episodes` episodes from starts drawn uniformly from
/// `starts`. Returns the total reward of each episode.
pub fn train_from_starts<Q: QLearner + ?Sized>(
    q: &mut Q,
    starts: &[usize],
    graph: &SimilarityGraph,
    table: &EmbeddingTable,
    config: &QConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if starts.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.episodes)
        .map(|e| {
            let start = starts[rng.random_range(0..starts.len())];
            run_episode(q, start, graph, table, config, config.epsilon(e), &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct QTrainOutcome {
    pub net: QNetwork,
    pub reward_trace: Vec<f64>,
}

/// Trains the network on walks that start where inference will start them:
/// from the words the baseline decoder emits on the training sentences.
pub fn train_q(
    net: QNetwork,
    corpus: &Corpus,
    model: &Seq2SeqModel,
    graph: &SimilarityGraph,
    table: &EmbeddingTable,
    config: &QConfig,
) -> Result<QTrainOutcome> {
    config.validate()?;
    if net.embedding_dim() != table.dim() {
        return Err(Error::Domain(format!(
            "Q-network expects {}-dimensional states, table has {}",
            net.embedding_dim(),
            table.dim()
        )));
    }
    let mut net = net;
    if config.episodes == 0 {
        return Ok(QTrainOutcome {
            net,
            reward_trace: Vec::new(),
        });
    }
    let starts: Vec<usize> = crate::infer::walk_starts(model, corpus, table)?
        .into_iter()
        .filter(|&s| !graph.neighbors(s).is_empty())
        .collect();
    if starts.is_empty() {
        log::warn!("no decoder output has a graph neighbor; the Q-network is left untrained");
    }
    let reward_trace = train_from_starts(&mut net, &starts, graph, table, config)?;
    Ok(QTrainOutcome { net, reward_trace })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::embeddings::build_similarity_graph;

    /// Unit vectors at the given angles (degrees) in the plane.
    pub(crate) fn planar_table(angles: &[(&str, f64)]) -> EmbeddingTable {
        let rows = angles
            .iter()
            .map(|&(w, deg)| {
                let r = deg.to_radians();
                (w, vec![r.cos(), r.sin()])
            })
            .collect();
        EmbeddingTable::from_rows(2, rows).unwrap()
    }

    fn full_graph(table: &EmbeddingTable, threshold: f64) -> SimilarityGraph {
        let vocab = Vocabulary::from_tokens(table.words().iter().map(String::as_str));
        build_similarity_graph(table, &vocab, threshold).unwrap()
    }

    /// a - b - c - d, 30° apart, so only adjacent words clear cos 0.8.
    fn path() -> (EmbeddingTable, SimilarityGraph) {
        let table = planar_table(&[("a", 0.0), ("b", 30.0), ("c", 60.0), ("d", 90.0)]);
        let graph = full_graph(&table, 0.8);
        (table, graph)
    }

    #[test]
    fn q_target_bootstraps_on_the_best_option() {
        let (table, graph) = path();
        let t = Transition::new(0, Action::Hop, 1, 0.5, false).unwrap();
        assert_eq!(q_target(&TabularQ::new(), &t, &graph, &table), 0.5);
        let mut q = TabularQ::new();
        for id in 0..4 {
            q.set(id, Action::Hop, 2.0);
            q.set(id, Action::Stop, 5.0);
        }
        assert_eq!(q_target(&q, &t, &graph, &table), 5.5);
        q.set(2, Action::Hop, 7.0);
        assert_eq!(q_target(&q, &t, &graph, &table), 7.5);
        let terminal = Transition { terminal: true, ..t };
        assert_eq!(q_target(&q, &terminal, &graph, &table), 0.5);
    }

    #[test]
    fn reward_between_unit_test_vectors() {
        let table = EmbeddingTable::from_rows(2, vec![("x", vec![1.0, 0.0]), ("y", vec![1.0, 1.0])]).unwrap();
        let graph = full_graph(&table, 0.5);
        let mut q = TabularQ::new();
        q.set(1, Action::Stop, 0.25);
        let t = Transition::new(0, Action::Hop, 1, table.similarity(1, 0), false).unwrap();
        let target = q_target(&q, &t, &graph, &table);
        assert!((target - (std::f64::consts::FRAC_1_SQRT_2 + 0.25)).abs() < 1e-8);
    }

    #[test]
    fn tabular_update_examples() {
        let (table, graph) = path();
        let t = Transition::new(0, Action::Hop, 1, 1.0, true).unwrap();
        let mut q = TabularQ::new();
        q.set(1, Action::Hop, 0.5);
        let mut full = q.clone();
        q_update_step(&mut full, &t, 1.0, &graph, &table).unwrap();
        assert_eq!(full.get(1, Action::Hop), 1.0);
        let mut none = q.clone();
        q_update_step(&mut none, &t, 0.0, &graph, &table).unwrap();
        assert_eq!(none.get(1, Action::Hop), 0.5);
        q_update_step(&mut q, &t, 0.2, &graph, &table).unwrap();
        assert!((q.get(1, Action::Hop) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn stop_transition_must_stay() {
        assert!(Transition::new(0, Action::Stop, 1, 1.0, true).is_err());
    }

    #[test]
    fn isolated_start_gives_empty_trace() {
        let table = planar_table(&[("a", 0.0), ("b", 90.0)]);
        let graph = full_graph(&table, 0.8);
        let trace = walk(&TabularQ::new(), 0, &graph, &table, 4);
        assert_eq!(trace.visited, Vec::<usize>::new());
        assert_eq!(trace.stop_reason, StopReason::NoNeighbors);
    }

    #[test]
    fn horizon_caps_the_walk() {
        let (table, graph) = path();
        let mut q = TabularQ::new();
        for id in 0..4 {
            q.set(id, Action::Hop, 1.0);
        }
        let trace = walk(&q, 0, &graph, &table, 1);
        assert_eq!(trace.visited, vec![1]);
        assert_eq!(trace.stop_reason, StopReason::Horizon);
    }

    // Hand rollout on a-b-c-d with H = 4:
    //   at a: stop 0.0 vs hop b 0.9           -> b
    //   at b: stop 0.1 vs max(a 0.2, c 0.7)   -> c
    //   at c: stop 0.3 vs max(b 0.9, d 0.4)   -> b
    //   at b: as before                        -> c   (horizon reached)
    #[test]
    fn path_graph_matches_hand_rollout() {
        let (table, graph) = path();
        let mut q = TabularQ::new();
        for (id, stop, hop) in [(0, 0.0, 0.2), (1, 0.1, 0.9), (2, 0.3, 0.7), (3, 0.0, 0.4)] {
            q.set(id, Action::Stop, stop);
            q.set(id, Action::Hop, hop);
        }
        let trace = walk(&q, 0, &graph, &table, 4);
        assert_eq!(trace.visited, vec![1, 2, 1, 2]);
        assert_eq!(trace.stop_reason, StopReason::Horizon);
        assert_eq!(trace.similar_words().into_iter().collect::<Vec<_>>(), vec![1, 2]);

        // Raising stop at c ends the walk there.
        q.set(2, Action::Stop, 0.95);
        let trace = walk(&q, 0, &graph, &table, 4);
        assert_eq!(trace.visited, vec![1, 2]);
        assert_eq!(trace.stop_reason, StopReason::ActionZero);
    }

    #[test]
    fn ties_prefer_stop_then_smallest_id() {
        let (table, graph) = path();
        let mut q = TabularQ::new();
        q.set(0, Action::Hop, 1.0);
        q.set(2, Action::Hop, 1.0);
        assert_eq!(greedy_option(&q, 1, &graph, &table), (1.0, Some(0)));
        q.set(1, Action::Stop, 1.0);
        assert_eq!(greedy_option(&q, 1, &graph, &table), (1.0, None));
    }

    #[test]
    fn epsilon_decays_linearly_to_floor() {
        let config = QConfig {
            episodes: 11,
            ..QConfig::default()
        };
        assert_eq!(config.epsilon(0), 0.9);
        assert!((config.epsilon(5) - 0.475).abs() < 1e-12);
        assert!((config.epsilon(10) - EPSILON_FLOOR).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(QConfig::default().validate().is_ok());
        for bad in [
            QConfig { alpha: 0.0, ..QConfig::default() },
            QConfig { alpha: 1.5, ..QConfig::default() },
            QConfig { horizon: 0, ..QConfig::default() },
            QConfig { epsilon0: -0.1, ..QConfig::default() },
            QConfig { bonus: -1.0, ..QConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    /// A hub with five spokes on a cone around it: each spoke has cosine
    /// 0.866 with the hub and 0.827 with its two adjacent spokes, and the
    /// remaining spoke pairs fall below the threshold.
    pub(crate) fn hub() -> (EmbeddingTable, SimilarityGraph) {
        let half = 30f64.to_radians();
        let mut rows = vec![("hub".to_string(), vec![1.0, 0.0, 0.0])];
        for k in 0..5 {
            let phi = (72.0 * k as f64).to_radians();
            rows.push((format!("s{k}"), vec![half.cos(), half.sin() * phi.cos(), half.sin() * phi.sin()]));
        }
        let table = EmbeddingTable::from_rows(3, rows).unwrap();
        let graph = full_graph(&table, 0.79);
        (table, graph)
    }

    fn hub_config(alpha: f64, episodes: usize) -> QConfig {
        QConfig {
            alpha,
            episodes,
            seed: 3,
            ..QConfig::default()
        }
    }

    #[test]
    fn tabular_oracle_reaches_the_hub_from_every_spoke() {
        let (table, graph) = hub();
        let spokes: Vec<usize> = (1..6).collect();
        let mut q = TabularQ::new();
        train_from_starts(&mut q, &spokes, &graph, &table, &hub_config(0.02, 20_000)).unwrap();
        for &s in &spokes {
            let trace = walk(&q, s, &graph, &table, 1);
            assert_eq!(trace.visited, vec![0], "from spoke {s}");
        }
    }

    #[test]
    fn trained_network_agrees_with_the_tabular_oracle() {
        let (table, graph) = hub();
        let spokes: Vec<usize> = (1..6).collect();
        let mut oracle = TabularQ::new();
        train_from_starts(&mut oracle, &spokes, &graph, &table, &hub_config(0.02, 20_000)).unwrap();
        let mut net = QNetwork::with_hidden(3, &[16, 32, 16], 5);
        train_from_starts(&mut net, &spokes, &graph, &table, &hub_config(0.01, 4000)).unwrap();
        for &s in &spokes {
            let expected = walk(&oracle, s, &graph, &table, 1);
            let got = walk(&net, s, &graph, &table, 1);
            assert_eq!(got.visited, expected.visited, "from spoke {s}");
        }
    }

    /// Means of consecutive tenths of the 10-episode block averages.
    fn decile_means(trace: &[f64]) -> Vec<f64> {
        let blocks: Vec<f64> = trace.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        blocks.chunks(blocks.len() / 10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }

    #[test]
    fn reward_trace_climbs_like_the_tabular_oracle() {
        let (table, graph) = hub();
        let spokes: Vec<usize> = (1..6).collect();
        let oracle = train_from_starts(&mut TabularQ::new(), &spokes, &graph, &table, &hub_config(0.02, 20_000)).unwrap();
        let oracle = decile_means(&oracle);
        assert!(oracle.windows(2).all(|w| w[1] >= w[0]), "{oracle:?}");

        let mut net = QNetwork::with_hidden(3, &[16, 32, 16], 5);
        let trace = decile_means(&train_from_starts(&mut net, &spokes, &graph, &table, &hub_config(0.01, 4000)).unwrap());
        assert!(trace[9] > trace[0] + 0.5, "{trace:?}");
        assert!((trace[9] - oracle[9]).abs() < 0.1, "{trace:?} vs {oracle:?}");
    }

    #[test]
    fn zero_episodes_leave_the_learner_untouched() {
        let (table, graph) = hub();
        let mut net = QNetwork::with_hidden(3, &[4], 1);
        let before = net.clone();
        let trace = train_from_starts(&mut net, &[1, 2], &graph, &table, &hub_config(0.01, 0)).unwrap();
        assert!(trace.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn training_is_deterministic() {
        let (table, graph) = hub();
        let run = || {
            let mut net = QNetwork::with_hidden(3, &[8, 8], 2);
            let trace = train_from_starts(&mut net, &[1, 2, 3], &graph, &table, &hub_config(0.01, 200)).unwrap();
            (net, trace)
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn cached_values_reproduce_network_walks() {
        let (table, graph) = hub();
        let net = QNetwork::new(3, 9);
        let cached = net.tabulate(&table).unwrap();
        for s in 0..table.len() {
            assert_eq!(walk(&net, s, &graph, &table, 4), walk(&cached, s, &graph, &table, 4));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_tabular(values: &[(f64, f64)]) -> TabularQ {
            let mut q = TabularQ::new();
            for (id, &(stop, hop)) in values.iter().enumerate() {
                q.set(id, Action::Stop, stop);
                q.set(id, Action::Hop, hop);
            }
            q
        }

        proptest! {
            // Restarting the walk from any visited word reproduces the rest of
            // the trace: the next hop depends on the current word alone.
            #[test]
            fn walks_are_markov(values in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6), start in 0usize..6, horizon in 1usize..8) {
                let (table, graph) = hub();
                let q = random_tabular(&values);
                let trace = walk(&q, start, &graph, &table, horizon);
                prop_assert!(trace.visited.len() <= horizon);
                for (i, &w) in trace.visited.iter().enumerate() {
                    prop_assert!(graph.is_input_word(w));
                    let suffix = walk(&q, w, &graph, &table, horizon - i - 1);
                    prop_assert_eq!(&suffix.visited[..], &trace.visited[i + 1..]);
                }
            }

            #[test]
            fn tabular_update_contracts_toward_target(q0 in -5.0f64..5.0, reward in -1.0f64..1.0, alpha in 0.0f64..=1.0) {
                let (table, graph) = hub();
                let t = Transition::new(1, Action::Hop, 0, reward, true).unwrap();
                let mut q = TabularQ::new();
                q.set(0, Action::Hop, q0);
                q_update_step(&mut q, &t, alpha, &graph, &table).unwrap();
                let lhs = (q.get(0, Action::Hop) - reward).abs();
                let rhs = (1.0 - alpha) * (q0 - reward).abs();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
            }
        }
    }
}
