//! Pretrained word vectors, cosine queries, and the thresholded similarity
//! graph the Q-learning agent walks on.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::corpus::Vocabulary;
use crate::{Error, Result};

/// Dense vectors for a closed set of words. Token ids are row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
    // Row-normalized copy of `vectors`, used by every cosine query.
    unit: Array2<f64>,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` rows. Rejects ragged, empty,
    /// duplicate, and zero vectors.
    pub fn from_rows<S: Into<String>>(dim: usize, rows: Vec<(S, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("embedding dimension must be positive".into()));
        }
        let mut words = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (word, vector) in rows {
            let word = word.into();
            if vector.len() != dim {
                return Err(Error::Format(format!(
                    "vector for `{word}` has length {}, expected {dim}",
                    vector.len()
                )));
            }
            if vector.iter().all(|&x| x == 0.0) {
                return Err(Error::Format(format!("zero vector for `{word}`")));
            }
            if index.insert(word.clone(), words.len()).is_some() {
                return Err(Error::Format(format!("duplicate word `{word}`")));
            }
            words.push(word);
            flat.extend(vector);
        }
        let vectors = Array2::from_shape_vec((words.len(), dim), flat)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut unit = vectors.clone();
        for mut row in unit.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row /= norm;
        }
        Ok(Self {
            words,
            index,
            vectors,
            unit,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vector(&self, id: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(id)
    }

    pub fn unit_vector(&self, id: usize) -> ArrayView1<'_, f64> {
        self.unit.row(id)
    }

    pub fn lookup(&self, word: &str) -> Result<ArrayView1<'_, f64>> {
        self.id(word)
            .map(|id| self.vector(id))
            .ok_or_else(|| Error::UnknownToken(word.to_owned()))
    }

    /// Cosine similarity between two stored words.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        self.unit.row(a).dot(&self.unit.row(b)).clamp(-1.0, 1.0)
    }

    /// The sub-table of words in `vocab`, in this table's id order.
    pub fn restricted(&self, vocab: &Vocabulary) -> EmbeddingTable {
        let rows = self
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| vocab.contains(w))
            .map(|(id, w)| (w.clone(), self.vectors.row(id).to_vec()))
            .collect();
        EmbeddingTable::from_rows(self.dim(), rows).expect("rows of a valid table are valid")
    }

    /// Writes the table in word2vec text format with a `<count> <dim>` header.
    pub fn write_word2vec(&self, path: &Path) -> Result<()> {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for (word, row) in self.words.iter().zip(self.vectors.rows()) {
            out.push_str(word);
            for x in row {
                write!(out, " {x}").expect("writing to a String");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Loads a word2vec text file, keeping only words in `vocab`. Returns the
/// table (ids follow `vocab`'s id order) and the vocabulary words the file
/// does not cover.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<(EmbeddingTable, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };

    let mut found: HashMap<&str, Vec<f64>> = HashMap::new();
    for (index, line) in text.lines().enumerate() {
        let lineno = index + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();

        if index == 0 && values.len() == 1 {
            if let (Ok(_), Ok(header_dim)) = (word.parse::<usize>(), values[0].parse::<usize>()) {
                if header_dim != dim {
                    return Err(parse_err(
                        lineno,
                        format!("header declares dimension {header_dim}, expected {dim}"),
                    ));
                }
                continue;
            }
        }
        if values.len() != dim {
            return Err(parse_err(
                lineno,
                format!("vector has {} components, expected {dim}", values.len()),
            ));
        }
        if !vocab.contains(word) || found.contains_key(word) {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, format!("bad component: {e}")))?;
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(lineno, "non-finite component".into()));
        }
        if vector.iter().all(|&x| x == 0.0) {
            return Err(parse_err(lineno, format!("zero vector for `{word}`")));
        }
        found.insert(word, vector);
    }

    if found.is_empty() {
        return Err(Error::Format(format!(
            "{}: no word of the vocabulary has an embedding",
            path.display()
        )));
    }
    let mut rows = Vec::with_capacity(found.len());
    let mut missing = Vec::new();
    for word in vocab.words() {
        match found.remove(word) {
            Some(vector) => rows.push((word.to_owned(), vector)),
            None => missing.push(word.to_owned()),
        }
    }
    if !missing.is_empty() {
        log::warn!("{} vocabulary words have no embedding", missing.len());
    }
    Ok((EmbeddingTable::from_rows(dim, rows)?, missing))
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// `u·v / (‖u‖‖v‖)`, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Id of the word whose vector is most cosine-similar to `query`; ties go to
/// the smallest id. With `restrict_to`, only words of that vocabulary compete.
pub fn nearest_word(table: &EmbeddingTable, query: ArrayView1<'_, f64>, restrict_to: Option<&Vocabulary>) -> Result<usize> {
    let q = norm(query);
    if q == 0.0 {
        return Err(Error::Domain("nearest word of a zero query".into()));
    }
    if query.len() != table.dim() {
        return Err(Error::Domain(format!(
            "query has dimension {}, table has {}",
            query.len(),
            table.dim()
        )));
    }
    let scores: Array1<f64> = table.unit.dot(&query);
    let mut best: Option<(usize, f64)> = None;
    for (id, &score) in scores.iter().enumerate() {
        if restrict_to.is_some_and(|v| !v.contains(&table.words[id])) {
            continue;
        }
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((id, score));
        }
    }
    best.map(|(id, _)| id)
        .ok_or_else(|| Error::Domain("nearest word over an empty candidate set".into()))
}

/// Directed view of the cosine-similarity graph. Every table word has an
/// entry, but only words of the input vocabulary appear as neighbors, so the
/// relation is symmetric on the input vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    threshold: f64,
    adjacency: Vec<Vec<(usize, f64)>>,
    is_input: Vec<bool>,
}

impl SimilarityGraph {
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Neighbors of `id`, by descending similarity then ascending id.
    pub fn neighbors(&self, id: usize) -> &[(usize, f64)] {
        &self.adjacency[id]
    }

    pub fn is_input_word(&self, id: usize) -> bool {
        self.is_input[id]
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }
}

/// Links every table word to each distinct input-vocabulary word whose cosine
/// similarity is at least `threshold`.
pub fn build_similarity_graph(table: &EmbeddingTable, input_vocab: &Vocabulary, threshold: f64) -> Result<SimilarityGraph> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold {threshold} outside [-1, 1]")));
    }
    let is_input: Vec<bool> = table.words.iter().map(|w| input_vocab.contains(w)).collect();
    let inputs: Vec<usize> = (0..table.len()).filter(|&id| is_input[id]).collect();
    let adjacency = (0..table.len())
        .map(|a| {
            let mut row: Vec<(usize, f64)> = inputs
                .iter()
                .filter(|&&b| b != a)
                .map(|&b| (b, table.similarity(a, b)))
                .filter(|&(_, s)| s >= threshold)
                .collect();
            row.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            row
        })
        .collect();
    Ok(SimilarityGraph {
        threshold,
        adjacency,
        is_input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn random_table(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (format!("w{i}"), v)
            })
            .collect();
        EmbeddingTable::from_rows(dim, rows).unwrap()
    }

    fn vocab_of(table: &EmbeddingTable) -> Vocabulary {
        Vocabulary::from_tokens(table.words().iter().map(String::as_str))
    }

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_with_header() {
        let f = temp_file("2 4\ncasa 1 0 0 0\nhouse 0.9 0.1 0 0\n");
        let vocab = Vocabulary::from_tokens(["house", "casa"]);
        let (table, missing) = load_embeddings(f.path(), &vocab, 4).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.dim(), 4);
        assert!(missing.is_empty());
        // Ids follow the vocabulary, not the file.
        assert_eq!(table.id("house"), Some(0));
    }

    #[test]
    fn load_reports_ragged_row() {
        let f = temp_file("a 1 2 3\nb 1 2\n");
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        match load_embeddings(f.path(), &vocab, 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_missing_words() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_tokens(words.iter().map(String::as_str));
        let body: String = words[..7].iter().map(|w| format!("{w} 1 0.5\n")).collect();
        let f = temp_file(&body);
        let (table, missing) = load_embeddings(f.path(), &vocab, 2).unwrap();
        assert_eq!(table.len(), 7);
        assert_eq!(missing, ["w7", "w8", "w9"]);
    }

    #[test]
    fn load_rejects_header_dim_mismatch_and_no_overlap() {
        let f = temp_file("1 3\na 1 2 3\n");
        let vocab = Vocabulary::from_tokens(["a"]);
        assert!(load_embeddings(f.path(), &vocab, 4).is_err());
        let other = Vocabulary::from_tokens(["zzz"]);
        assert!(matches!(
            load_embeddings(f.path(), &other, 3),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn load_rejects_zero_vector() {
        let f = temp_file("a 0 0\n");
        let vocab = Vocabulary::from_tokens(["a"]);
        assert!(load_embeddings(f.path(), &vocab, 2).is_err());
    }

    #[test]
    fn word2vec_round_trip() {
        let table = random_table(5, 3, 1);
        let f = tempfile::NamedTempFile::new().unwrap();
        table.write_word2vec(f.path()).unwrap();
        let (back, _) = load_embeddings(f.path(), &vocab_of(&table), 3).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn cosine_examples() {
        let u = array![1.0, 0.0];
        let v = array![1.0, 1.0];
        assert_eq!(cosine_similarity(u.view(), u.view()).unwrap(), 1.0);
        assert_eq!(cosine_similarity(u.view(), array![0.0, 3.0].view()).unwrap(), 0.0);
        let c = cosine_similarity(u.view(), v.view()).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(cosine_similarity(u.view(), array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn graph_extremes() {
        let table = random_table(6, 4, 2);
        let vocab = vocab_of(&table);
        let empty = build_similarity_graph(&table, &vocab, 1.0).unwrap();
        assert_eq!(empty.edge_count(), 0);
        let complete = build_similarity_graph(&table, &vocab, -1.0).unwrap();
        for id in 0..table.len() {
            assert_eq!(complete.neighbors(id).len(), 5);
        }
        assert!(build_similarity_graph(&table, &vocab, 1.5).is_err());
    }

    #[test]
    fn graph_matches_all_pairs_filter() {
        // Low dimension so that some pairs clear the 0.79 bar.
        let table = random_table(5, 2, 9);
        let vocab = vocab_of(&table);
        let graph = build_similarity_graph(&table, &vocab, 0.79).unwrap();
        for a in 0..5 {
            let mut expected: Vec<usize> = (0..5)
                .filter(|&b| b != a)
                .filter(|&b| {
                    cosine_similarity(table.vector(a), table.vector(b)).unwrap() >= 0.79
                })
                .collect();
            let mut got: Vec<usize> = graph.neighbors(a).iter().map(|&(b, _)| b).collect();
            expected.sort_unstable();
            got.sort_unstable();
            assert_eq!(got, expected, "node {a}");
        }
        assert!(graph.edge_count() > 0);
    }

    #[test]
    fn graph_neighbors_are_restricted_to_input_vocab() {
        let table = random_table(8, 3, 4);
        let input = Vocabulary::from_tokens(["w0", "w1", "w2", "w3"]);
        let graph = build_similarity_graph(&table, &input, -1.0).unwrap();
        for id in 0..8 {
            for &(n, _) in graph.neighbors(id) {
                assert!(input.contains(table.word(n)));
            }
        }
        assert_eq!(graph.neighbors(7).len(), 4);
        assert_eq!(graph.neighbors(0).len(), 3);
    }

    #[test]
    fn nearest_word_examples() {
        let table = EmbeddingTable::from_rows(
            2,
            vec![("pos", vec![1.0, 2.0]), ("neg", vec![-1.0, -2.0])],
        )
        .unwrap();
        assert_eq!(nearest_word(&table, table.vector(0), None).unwrap(), 0);
        assert_eq!(nearest_word(&table, array![-2.0, -4.0].view(), None).unwrap(), 1);
        assert!(nearest_word(&table, array![0.0, 0.0].view(), None).is_err());
        let only_pos = Vocabulary::from_tokens(["pos"]);
        assert_eq!(
            nearest_word(&table, array![-1.0, -2.0].view(), Some(&only_pos)).unwrap(),
            0
        );
    }

    #[test]
    fn nearest_word_matches_linear_scan() {
        let table = random_table(100, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let q: Array1<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for id in 0..table.len() {
                let s = cosine_similarity(q.view(), table.vector(id)).unwrap();
                if s > best_score {
                    best = id;
                    best_score = s;
                }
            }
            assert_eq!(nearest_word(&table, q.view(), None).unwrap(), best);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-10.0f64..10.0, dim)
                .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        }

        proptest! {
            #[test]
            fn cosine_symmetric_and_scale_invariant(u in nonzero_vec(5), v in nonzero_vec(5), alpha in 0.01f64..100.0) {
                let u = Array1::from(u);
                let v = Array1::from(v);
                let uv = cosine_similarity(u.view(), v.view()).unwrap();
                let vu = cosine_similarity(v.view(), u.view()).unwrap();
                let scaled = cosine_similarity((&u * alpha).view(), v.view()).unwrap();
                prop_assert!((uv - vu).abs() < 1e-12);
                prop_assert!((uv - scaled).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&uv));
            }

            #[test]
            fn graph_is_symmetric(seed in 0u64..1000, threshold in -0.5f64..0.99) {
                let table = random_table(12, 3, seed);
                let vocab = vocab_of(&table);
                let graph = build_similarity_graph(&table, &vocab, threshold).unwrap();
                for a in 0..table.len() {
                    for &(b, s) in graph.neighbors(a) {
                        prop_assert!(s >= threshold);
                        prop_assert!(graph.neighbors(b).iter().any(|&(x, _)| x == a));
                    }
                }
            }

            #[test]
            fn stored_words_retrieve_themselves(seed in 0u64..1000) {
                let table = random_table(30, 6, seed);
                for id in 0..table.len() {
                    prop_assert_eq!(nearest_word(&table, table.vector(id), None).unwrap(), id);
                }
            }
        }
    }
}
