use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use super::{AnalyzeArgs, BenchArgs, Cli, Command, GenToyArgs, InferArgs, ModelArgs};
use crate::checkpoint::{load_qnet, load_seq2seq, save_qnet, save_seq2seq, Metadata};
use crate::corpus::{load_parallel_corpus, split_corpus, tokenize, Corpus};
use crate::election::{satisfaction_report, KRule};
use crate::embeddings::{build_similarity_graph, load_embeddings, EmbeddingTable, SimilarityGraph};
use crate::eval::{benchmark_latency, corpus_bleu, emit_report, Engine, Report};
use crate::gaussmask::fit_gaussian;
use crate::infer::{InferenceMode, Translator};
use crate::qagent::{train_q, QNetwork};
use crate::seq2seq::{export_attention, train, AttentionMatrix, Dims, Normalization, Seq2SeqModel, INIT_SCALE};
use crate::toy::{generate, ToyConfig};
use crate::{Error, Result};

pub(super) fn dispatch(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match &cli.command {
        Command::GenToy(args) => gen_toy(&config, args),
        Command::Train => cmd_train(&config),
        Command::Analyze(args) => cmd_analyze(&config, args),
        Command::TrainQ(args) => cmd_train_q(&config, args),
        Command::Infer(args) => cmd_infer(&config, args),
        Command::Bench(args) => cmd_bench(&config, args),
    }
}

/// Corpus, embeddings and the three splits.
struct Data {
    table: EmbeddingTable,
    train: Corpus,
    val: Corpus,
    test: Corpus,
}

/// Loads the configured corpus and embeddings. Words of `extra` are looked
/// up in the embedding file too, so that external test sets can be embedded.
fn load_data(config: &RunConfig, extra: Option<&Corpus>) -> Result<Data> {
    let corpus_path = config.input_file("corpus.path")?;
    let embeddings_path = config.input_file("embeddings.path")?;
    let dim = config.embedding_dim()?;
    let corpus = load_parallel_corpus(&corpus_path, config.max_pairs())?;
    let vocab = match extra {
        Some(extra) => corpus.joint_vocab().union(&extra.joint_vocab()),
        None => corpus.joint_vocab(),
    };
    let (table, _missing) = load_embeddings(&embeddings_path, &vocab, dim)?;
    let (corpus, _dropped) = corpus.retain_embedded(&table);
    let (train, val, test) = split_corpus(&corpus, config.split_ratios()?, config.module_seed("corpus"))?;
    log::info!(
        "{} pairs: {} train, {} val, {} test; {} embedded words",
        corpus.len(),
        train.len(),
        val.len(),
        test.len(),
        table.len()
    );
    Ok(Data { table, train, val, test })
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// A checkpoint the user named or the default one under `output.dir`; a
/// missing file is a configuration error.
fn checkpoint_path(config: &RunConfig, given: Option<&Path>, default_name: &str) -> Result<PathBuf> {
    let path = given.map_or_else(|| config.output_dir().join(default_name), Path::to_path_buf);
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(path)
}

fn load_model(config: &RunConfig, args: &ModelArgs, table: &EmbeddingTable) -> Result<Seq2SeqModel> {
    let path = checkpoint_path(config, args.model.as_deref(), "model.json")?;
    let (model, _) = load_seq2seq(&path)?;
    if model.dims().embedding != table.dim() {
        return Err(Error::Config(format!(
            "{} was trained on {}-dimensional embeddings, config says {}",
            path.display(),
            model.dims().embedding,
            table.dim()
        )));
    }
    Ok(model)
}

fn load_agent(path: Option<&Path>, table: &EmbeddingTable) -> Result<Option<QNetwork>> {
    let Some(path) = path else { return Ok(None) };
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let (net, _) = load_qnet(path)?;
    if net.embedding_dim() != table.dim() {
        return Err(Error::Config(format!(
            "{} expects {}-dimensional embeddings, config says {}",
            path.display(),
            net.embedding_dim(),
            table.dim()
        )));
    }
    Ok(Some(net))
}

fn graph(config: &RunConfig, data: &Data) -> Result<SimilarityGraph> {
    let graph = build_similarity_graph(&data.table, &data.train.source_vocab, config.threshold())?;
    log::info!("similarity graph: {} edges at threshold {}", graph.edge_count(), graph.threshold());
    Ok(graph)
}

fn gen_toy(config: &RunConfig, args: &GenToyArgs) -> Result<()> {
    let toy = ToyConfig {
        pairs: args.pairs,
        seed: config.global_seed(),
        ..ToyConfig::default()
    };
    let data = generate(&toy)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    data.write(&args.out.join("toy.tsv"), &args.out.join("toy.vec"))?;
    let run = format!(
        "seed = 0\n\n\
         [corpus]\npath = \"toy.tsv\"\n\n\
         [embeddings]\npath = \"toy.vec\"\ndim = {dim}\n\n\
         [model]\nhidden_dim = 32\n\n\
         [train]\nlr = 0.3\nepochs = 30\n\n\
         [output]\ndir = \"runs\"\n",
        dim = toy.dim
    );
    write(&args.out.join("config.toml"), run)?;
    println!("{}", args.out.join("config.toml").display());
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let data = load_data(config, None)?;
    if data.train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    let hidden = config.hidden_dim();
    let dims = Dims {
        embedding: data.table.dim(),
        hidden,
        align: hidden,
    };
    let hyper = config.train_config()?;
    let init = Seq2SeqModel::random(dims, config.module_seed("model"), INIT_SCALE);
    let outcome = train(init, &data.train, &data.table, &hyper)?;

    let dir = output_dir(config)?;
    let mut meta = Metadata::new();
    meta.insert("train".into(), serde_json::to_value(hyper)?);
    meta.insert("train_pairs".into(), data.train.len().into());
    let model_path = dir.join("model.json");
    save_seq2seq(&outcome.model, &meta, &model_path)?;
    let mut trace = String::from("epoch,loss\n");
    for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
        writeln!(trace, "{},{loss}", epoch + 1).expect("writing to a String");
    }
    write(&dir.join("loss_trace.csv"), trace)?;
    println!("{}", model_path.display());
    Ok(())
}

/// One exported attention grid with the sentence it belongs to.
#[derive(Debug, Serialize, Deserialize)]
struct ExportedAttention {
    source: Vec<String>,
    target: Vec<String>,
    /// Row-major; row = output position.
    weights: Vec<Vec<f64>>,
}

fn to_matrix(e: &ExportedAttention) -> Result<AttentionMatrix> {
    let p = e.weights.len();
    if e.weights.iter().any(|row| row.len() != p) {
        return Err(Error::Format("attention grids must be square".into()));
    }
    let flat = e.weights.iter().flatten().copied().collect();
    let weights = ndarray::Array2::from_shape_vec((p, p), flat).map_err(|err| Error::Format(err.to_string()))?;
    Ok(AttentionMatrix::new(weights, Normalization::Max))
}

fn cmd_analyze(config: &RunConfig, args: &AnalyzeArgs) -> Result<()> {
    let exported: Vec<ExportedAttention> = match &args.attention {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)?
        }
        None => {
            let data = load_data(config, None)?;
            // Fail on a missing checkpoint before complaining about the data.
            let model = load_model(config, &args.model, &data.table)?;
            if data.val.is_empty() {
                return Err(Error::Config(
                    "the validation split is empty; use more pairs or a larger corpus.split_ratios entry".into(),
                ));
            }
            let matrices = export_attention(&model, &data.val, &data.table, Normalization::Max)?;
            data.val
                .pairs
                .iter()
                .zip(matrices)
                .map(|(pair, m)| ExportedAttention {
                    source: pair.source.clone(),
                    target: pair.target.clone(),
                    weights: m.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                })
                .collect()
        }
    };
    if exported.is_empty() {
        return Err(Error::Config("no attention matrices to analyze".into()));
    }
    let matrices = exported.iter().map(to_matrix).collect::<Result<Vec<_>>>()?;
    let satisfaction = satisfaction_report(&matrices, &KRule::TABLE)?;

    let mut fits = String::from("sentence,row,mu,sigma,rmse,gaussian_like\n");
    let (mut rows, mut gaussian_like) = (0usize, 0usize);
    for (s, m) in matrices.iter().enumerate() {
        if m.len() < 3 {
            continue;
        }
        for (r, row) in m.weights.rows().into_iter().enumerate() {
            let fit = fit_gaussian(row)?;
            rows += 1;
            gaussian_like += usize::from(fit.is_gaussian_like());
            writeln!(
                fits,
                "{s},{r},{:.6},{:.6},{:.6},{}",
                fit.mu,
                fit.sigma,
                fit.rmse,
                fit.is_gaussian_like()
            )
            .expect("writing to a String");
        }
    }

    let dir = output_dir(config)?;
    if args.attention.is_none() {
        write(&dir.join("attention.json"), serde_json::to_string(&exported)? + "\n")?;
    }
    write(&dir.join("satisfaction.csv"), satisfaction.to_csv())?;
    write(&dir.join("gaussian_fit.csv"), fits)?;
    let summary = json!({
        "matrices": matrices.len(),
        "satisfaction": satisfaction.rows.iter().map(|r| json!({
            "k_rule": r.k_rule,
            "average_satisfaction": r.average_satisfaction,
        })).collect::<Vec<_>>(),
        "fitted_rows": rows,
        "gaussian_like_rows": gaussian_like,
    });
    write(&dir.join("analysis.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    print!("{}", satisfaction.to_csv());
    Ok(())
}

fn cmd_train_q(config: &RunConfig, args: &ModelArgs) -> Result<()> {
    let data = load_data(config, None)?;
    let model = load_model(config, args, &data.table)?;
    let graph = graph(config, &data)?;
    let q = config.q_config()?;
    let init = QNetwork::new(data.table.dim(), q.seed);
    let outcome = train_q(init, &data.train, &model, &graph, &data.table, &q)?;

    let dir = output_dir(config)?;
    let mut meta = Metadata::new();
    meta.insert("q".into(), serde_json::to_value(q)?);
    let path = dir.join("qnet.json");
    save_qnet(&outcome.net, &meta, &path)?;
    let mut trace = String::from("episode,reward\n");
    for (e, r) in outcome.reward_trace.iter().enumerate() {
        writeln!(trace, "{},{r}", e + 1).expect("writing to a String");
    }
    write(&dir.join("reward_trace.csv"), trace)?;
    println!("{}", path.display());
    Ok(())
}

fn translator<'a>(
    config: &RunConfig,
    model: &'a Seq2SeqModel,
    data: &'a Data,
    agent: Option<(&QNetwork, &'a SimilarityGraph)>,
) -> Result<Translator<'a>> {
    let q = config.q_config()?;
    let mut t = Translator::new(model, &data.table, &data.train.target_vocab)?
        .with_sigma(config.sigma_rule())
        .with_bonus(q.bonus);
    if let Some((net, graph)) = agent {
        t = t.with_agent(net, graph, q.horizon)?;
    }
    Ok(t)
}

fn cmd_infer(config: &RunConfig, args: &InferArgs) -> Result<()> {
    if args.mode == InferenceMode::GaussianRl && args.qnet.is_none() {
        return Err(Error::Config("--mode gaussian_rl needs --qnet".into()));
    }
    let text = if args.input.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Error::io("<stdin>", e))?;
        s
    } else {
        fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?
    };
    let sentences: Vec<Vec<String>> = text.lines().map(tokenize).collect();

    let data = load_data(config, None)?;
    let model = load_model(config, &args.model, &data.table)?;
    let net = load_agent(args.qnet.as_deref(), &data.table)?;
    let graph = match net {
        Some(_) => Some(graph(config, &data)?),
        None => None,
    };
    let t = translator(config, &model, &data, net.as_ref().zip(graph.as_ref()))?;

    let mut out = String::new();
    let mut weights = Vec::with_capacity(sentences.len());
    for sentence in &sentences {
        let result = t.translate(sentence, args.mode)?;
        out.push_str(&result.output_tokens.join(" "));
        out.push('\n');
        weights.push(json!({
            "source": result.source_tokens,
            "output": result.output_tokens,
            "weights": result.per_step_weights.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        }));
    }
    print!("{out}");
    if let Some(path) = &args.emit_weights {
        let doc = json!({ "mode": args.mode.as_str(), "sentences": weights });
        write(path, serde_json::to_string(&doc)? + "\n")?;
    }
    Ok(())
}

fn cmd_bench(config: &RunConfig, args: &BenchArgs) -> Result<()> {
    if args.reps == 0 {
        return Err(Error::Config("--reps must be at least 1".into()));
    }
    let external = match &args.test {
        Some(path) => Some(load_parallel_corpus(path, None)?),
        None => None,
    };
    let data = load_data(config, external.as_ref())?;
    let test = match external {
        Some(c) => c.retain_embedded(&data.table).0,
        None => data.test.clone(),
    };
    if test.is_empty() {
        return Err(Error::Config("the test set is empty".into()));
    }
    let model = load_model(config, &args.model, &data.table)?;
    let net = load_agent(args.qnet.as_deref(), &data.table)?;
    let graph = match net {
        Some(_) => Some(graph(config, &data)?),
        None => None,
    };
    let t = translator(config, &model, &data, net.as_ref().zip(graph.as_ref()))?;
    let modes: Vec<InferenceMode> = InferenceMode::ALL
        .into_iter()
        .filter(|&m| m != InferenceMode::GaussianRl || t.has_agent())
        .collect();

    let references: Vec<Vec<String>> = test.pairs.iter().map(|p| p.target.clone()).collect();
    let mut bleu = BTreeMap::new();
    for &mode in &modes {
        let hypotheses = test
            .pairs
            .iter()
            .map(|p| Ok(t.translate(&p.source, mode)?.output_tokens))
            .collect::<Result<Vec<_>>>()?;
        let report = corpus_bleu(&references, &hypotheses)?;
        log::info!("{mode}: BLEU {:.2}", report.corpus_bleu);
        bleu.insert(mode, report);
    }

    let t = &t;
    let mut engines: Vec<(InferenceMode, Engine<'_>)> = modes
        .iter()
        .map(|&mode| {
            let engine: Engine<'_> = Box::new(move |s: &[String]| Ok(t.translate(s, mode)?.wall_time));
            (mode, engine)
        })
        .collect();
    let latency = benchmark_latency(&mut engines, &test, args.reps)?;

    let satisfaction_set = if data.val.is_empty() { &test } else { &data.val };
    let matrices = export_attention(&model, satisfaction_set, &data.table, Normalization::Max)?;
    let satisfaction = satisfaction_report(&matrices, &KRule::TABLE)?;

    let report = Report::new(&bleu, latency, satisfaction);
    let out = args.out.clone().unwrap_or_else(|| config.output_dir().join("report"));
    emit_report(&report, &out)?;
    print!("{}{}", report.bleu_csv(), report.latency_csv());
    Ok(())
}
