//! Deterministic synthetic query–chunk corpora.
//!
//! Queries and chunks use disjoint surface vocabularies (`q0001...` vs
//! `c0001...`) linked by a hidden random bijection, so raw lexical overlap
//! between a query and its golden chunk is exactly zero. An untrained
//! bag-of-words encoder therefore retrieves near chance, and any retrieval
//! lift is attributable to learned alignment.
//!
//! Clients draw query tokens from per-client vocabulary slices, which makes
//! the partition non-IID by construction; `client_slice_overlap` widens the
//! slices to soften the heterogeneity.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::util::ceil_frac;

/// One training record: a query paired with its golden chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub query: String,
    pub chunk: String,
    pub chunk_id: String,
    pub client_id: u64,
}

/// One held-out evaluation query with its golden chunk ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query: String,
    pub golden_ids: Vec<String>,
}

/// One retrievable chunk of the evaluation corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusChunk {
    pub chunk_id: String,
    pub text: String,
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_clients: usize,
    pub pairs_per_client: Vec<usize>,
    pub query_vocab_size: usize,
    pub chunk_vocab_size: usize,
    pub tokens_per_chunk: usize,
    pub tokens_per_query: usize,
    /// Fraction of query tokens whose bijective partner appears in the
    /// golden chunk. 1.0 = fully aligned, 0.0 = no signal at all.
    pub overlap_fraction: f64,
    pub distractor_chunks: usize,
    /// Number of held-out evaluation queries; each references a distinct
    /// training chunk.
    pub eval_queries: usize,
    /// Widens each client's vocabulary slice by this fraction of its base
    /// width on both sides. 0.0 keeps the slices fully disjoint (maximal
    /// heterogeneity).
    pub client_slice_overlap: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_clients: 5,
            pairs_per_client: vec![200; 5],
            query_vocab_size: 75,
            chunk_vocab_size: 75,
            tokens_per_chunk: 4,
            tokens_per_query: 3,
            overlap_fraction: 1.0,
            distractor_chunks: 150,
            eval_queries: 50,
            client_slice_overlap: 0.0,
            seed: 42,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.n_clients == 0 {
            return cfg("n_clients must be >= 1".into());
        }
        if self.pairs_per_client.len() != self.n_clients {
            return cfg(format!(
                "pairs_per_client has {} entries, expected n_clients = {}",
                self.pairs_per_client.len(),
                self.n_clients
            ));
        }
        if self.query_vocab_size != self.chunk_vocab_size {
            return cfg(format!(
                "query_vocab_size ({}) must equal chunk_vocab_size ({}) for the bijection",
                self.query_vocab_size, self.chunk_vocab_size
            ));
        }
        if self.query_vocab_size == 0 {
            return cfg("query_vocab_size must be >= 1".into());
        }
        if self.tokens_per_query == 0 || self.tokens_per_chunk == 0 {
            return cfg("tokens_per_query and tokens_per_chunk must be >= 1".into());
        }
        if self.tokens_per_query > self.query_vocab_size {
            return cfg(format!(
                "tokens_per_query ({}) exceeds query_vocab_size ({})",
                self.tokens_per_query, self.query_vocab_size
            ));
        }
        if self.tokens_per_chunk > self.chunk_vocab_size {
            return cfg(format!(
                "tokens_per_chunk ({}) exceeds chunk_vocab_size ({})",
                self.tokens_per_chunk, self.chunk_vocab_size
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return cfg(format!(
                "overlap_fraction must lie in [0, 1], got {}",
                self.overlap_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.client_slice_overlap) {
            return cfg(format!(
                "client_slice_overlap must lie in [0, 1], got {}",
                self.client_slice_overlap
            ));
        }
        let signal = ceil_frac(self.overlap_fraction, self.tokens_per_query);
        if signal > self.tokens_per_chunk {
            return cfg(format!(
                "a chunk of {} tokens cannot hold {} bijective partners",
                self.tokens_per_chunk, signal
            ));
        }
        let total: usize = self.pairs_per_client.iter().sum();
        if self.eval_queries > total {
            return cfg(format!(
                "eval_queries ({}) exceeds total training pairs ({total})",
                self.eval_queries
            ));
        }
        Ok(())
    }

    fn token_width(&self) -> usize {
        let digits = self.query_vocab_size.saturating_sub(1).to_string().len();
        digits.max(4)
    }

    /// Per-client token-index ranges over the query vocabulary.
    fn client_slices(&self) -> Vec<(usize, usize)> {
        let v = self.query_vocab_size;
        let k = self.n_clients;
        let base = v / k;
        let rem = v % k;
        let mut slices = Vec::with_capacity(k);
        let mut start = 0usize;
        for i in 0..k {
            let width = base + usize::from(i < rem);
            let ext = (self.client_slice_overlap * width as f64).round() as usize;
            let lo = start.saturating_sub(ext);
            let hi = (start + width + ext).min(v);
            slices.push((lo, hi));
            start += width;
        }
        slices
    }
}

/// Everything `generate` produces. The bijection is exposed for analysis
/// and tests; it is never written to the dataset files.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub pairs: Vec<TrainPair>,
    pub eval: Vec<EvalQuery>,
    pub corpus: Vec<CorpusChunk>,
    /// `bijection[q]` is the chunk-vocabulary partner of query token `q`.
    pub bijection: Vec<usize>,
}

fn q_token(idx: usize, width: usize) -> String {
    format!("q{idx:0width$}")
}

fn c_token(idx: usize, width: usize) -> String {
    format!("c{idx:0width$}")
}

fn chunk_id(counter: usize) -> String {
    format!("ch{counter:06}")
}

/// Samples `count` distinct values from `pool` (order randomized).
fn sample_distinct(pool: &[usize], count: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    debug_assert!(count <= pool.len());
    let picked = rand::seq::index::sample(rng, pool.len(), count);
    picked.iter().map(|i| pool[i]).collect()
}

/// Generates a corpus deterministically from the spec. Identical specs
/// (including seed) produce identical output, byte for byte once written.
pub fn generate(spec: &CorpusSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let v = spec.query_vocab_size;
    let width = spec.token_width();

    let mut bijection: Vec<usize> = (0..v).collect();
    bijection.shuffle(&mut rng);
    let mut inverse = vec![0usize; v];
    for (q, &c) in bijection.iter().enumerate() {
        inverse[c] = q;
    }

    let slices = spec.client_slices();
    let signal_count = ceil_frac(spec.overlap_fraction, spec.tokens_per_query);
    let all_chunk_tokens: Vec<usize> = (0..v).collect();

    let mut pairs = Vec::new();
    let mut chunk_tokens_by_pair: Vec<Vec<usize>> = Vec::new();
    let mut query_texts = HashSet::new();
    let mut id_counter = 0usize;

    for (client, &n_pairs) in spec.pairs_per_client.iter().enumerate() {
        let (lo, hi) = slices[client];
        let slice: Vec<usize> = (lo..hi).collect();
        if slice.len() < spec.tokens_per_query {
            return Err(Error::Config(format!(
                "client {client} vocabulary slice has {} tokens, \
                 fewer than tokens_per_query ({})",
                slice.len(),
                spec.tokens_per_query
            )));
        }
        for _ in 0..n_pairs {
            let query_idx = sample_distinct(&slice, spec.tokens_per_query, &mut rng);
            let signal = &query_idx[..signal_count];
            let partners: Vec<usize> = signal.iter().map(|&q| bijection[q]).collect();

            // Fillers must avoid the partner of *any* query token, so that
            // overlap_fraction exactly controls the signal in the chunk.
            let forbidden: HashSet<usize> =
                query_idx.iter().map(|&q| bijection[q]).collect();
            let filler_pool: Vec<usize> = all_chunk_tokens
                .iter()
                .copied()
                .filter(|t| !forbidden.contains(t))
                .collect();
            let n_fillers = spec.tokens_per_chunk - signal_count;
            if filler_pool.len() < n_fillers {
                return Err(Error::Config(format!(
                    "chunk vocabulary too small for {n_fillers} fillers"
                )));
            }
            let fillers = sample_distinct(&filler_pool, n_fillers, &mut rng);

            let mut chunk_idx = partners;
            chunk_idx.extend(fillers);
            chunk_idx.shuffle(&mut rng);

            let query = query_idx
                .iter()
                .map(|&i| q_token(i, width))
                .collect::<Vec<_>>()
                .join(" ");
            let chunk = chunk_idx
                .iter()
                .map(|&i| c_token(i, width))
                .collect::<Vec<_>>()
                .join(" ");
            query_texts.insert(query.clone());
            pairs.push(TrainPair {
                query,
                chunk,
                chunk_id: chunk_id(id_counter),
                client_id: client as u64,
            });
            chunk_tokens_by_pair.push(chunk_idx);
            id_counter += 1;
        }
    }

    // Held-out eval queries, each targeting a distinct training chunk: the
    // query's signal tokens are preimages of tokens in that chunk, so the
    // golden chunk contains their bijective partners.
    let referenced = rand::seq::index::sample(&mut rng, pairs.len(), spec.eval_queries);
    let mut eval = Vec::with_capacity(spec.eval_queries);
    let mut corpus_ids: Vec<usize> = Vec::new();
    for pair_pos in referenced.iter() {
        let chunk_idx = &chunk_tokens_by_pair[pair_pos];
        let preimages: Vec<usize> = chunk_idx.iter().map(|&c| inverse[c]).collect();
        let preimage_set: HashSet<usize> = preimages.iter().copied().collect();
        let filler_pool: Vec<usize> =
            (0..v).filter(|t| !preimage_set.contains(t)).collect();
        let n_fillers = spec.tokens_per_query - signal_count.min(spec.tokens_per_query);
        if preimages.len() < signal_count || filler_pool.len() < n_fillers {
            return Err(Error::Config(
                "vocabulary too small to build held-out eval queries".into(),
            ));
        }

        let mut attempts = 0;
        let query = loop {
            let mut tokens = sample_distinct(&preimages, signal_count, &mut rng);
            tokens.extend(sample_distinct(&filler_pool, n_fillers, &mut rng));
            tokens.shuffle(&mut rng);
            let text = tokens
                .iter()
                .map(|&i| q_token(i, width))
                .collect::<Vec<_>>()
                .join(" ");
            if !query_texts.contains(&text) {
                break text;
            }
            attempts += 1;
            if attempts > 100 {
                return Err(Error::Config(
                    "could not generate a held-out eval query distinct from \
                     all training queries; enlarge the vocabulary"
                        .into(),
                ));
            }
        };
        eval.push(EvalQuery {
            query,
            golden_ids: vec![pairs[pair_pos].chunk_id.clone()],
        });
        corpus_ids.push(pair_pos);
    }

    // Retrieval corpus: the referenced training chunks plus distractors.
    corpus_ids.sort_unstable();
    let mut corpus: Vec<CorpusChunk> = corpus_ids
        .iter()
        .map(|&p| CorpusChunk {
            chunk_id: pairs[p].chunk_id.clone(),
            text: pairs[p].chunk.clone(),
        })
        .collect();
    for _ in 0..spec.distractor_chunks {
        let tokens = sample_distinct(&all_chunk_tokens, spec.tokens_per_chunk, &mut rng);
        corpus.push(CorpusChunk {
            chunk_id: chunk_id(id_counter),
            text: tokens
                .iter()
                .map(|&i| c_token(i, width))
                .collect::<Vec<_>>()
                .join(" "),
        });
        id_counter += 1;
    }

    Ok(GeneratedCorpus {
        pairs,
        eval,
        corpus,
        bijection,
    })
}

/// Per-client pair counts and token histograms.
#[derive(Debug, Clone, Serialize)]
pub struct ClientPartition {
    pub client_id: u64,
    pub pairs: usize,
    pub query_tokens: BTreeMap<String, usize>,
    pub chunk_tokens: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub total_pairs: usize,
    pub clients: Vec<ClientPartition>,
}

pub fn partition_report(pairs: &[TrainPair]) -> PartitionReport {
    let mut by_client: BTreeMap<u64, ClientPartition> = BTreeMap::new();
    for p in pairs {
        let entry = by_client
            .entry(p.client_id)
            .or_insert_with(|| ClientPartition {
                client_id: p.client_id,
                pairs: 0,
                query_tokens: BTreeMap::new(),
                chunk_tokens: BTreeMap::new(),
            });
        entry.pairs += 1;
        for t in p.query.split(' ') {
            *entry.query_tokens.entry(t.to_string()).or_insert(0) += 1;
        }
        for t in p.chunk.split(' ') {
            *entry.chunk_tokens.entry(t.to_string()).or_insert(0) += 1;
        }
    }
    PartitionReport {
        total_pairs: pairs.len(),
        clients: by_client.into_values().collect(),
    }
}

pub fn save_pairs(path: &Path, pairs: &[TrainPair]) -> Result<()> {
    io::write_jsonl(path, pairs)
}

pub fn load_pairs(path: &Path) -> Result<Vec<TrainPair>> {
    io::read_jsonl(path)
}

pub fn save_eval(path: &Path, eval: &[EvalQuery]) -> Result<()> {
    io::write_jsonl(path, eval)
}

pub fn load_eval(path: &Path) -> Result<Vec<EvalQuery>> {
    io::read_jsonl(path)
}

pub fn save_corpus(path: &Path, corpus: &[CorpusChunk]) -> Result<()> {
    io::write_jsonl(path, corpus)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusChunk>> {
    io::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec(seed: u64) -> CorpusSpec {
        CorpusSpec {
            n_clients: 3,
            pairs_per_client: vec![6, 8, 10],
            query_vocab_size: 60,
            chunk_vocab_size: 60,
            tokens_per_chunk: 8,
            tokens_per_query: 4,
            overlap_fraction: 1.0,
            distractor_chunks: 5,
            eval_queries: 6,
            client_slice_overlap: 0.0,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.bijection, b.bijection);
    }

    #[test]
    fn partition_sizes_match_spec() {
        let mut spec = small_spec(1);
        spec.pairs_per_client = vec![3, 5, 4];
        let g = generate(&spec).unwrap();
        let report = partition_report(&g.pairs);
        let counts: Vec<usize> = report.clients.iter().map(|c| c.pairs).collect();
        assert_eq!(counts, vec![3, 5, 4]);
        assert_eq!(report.total_pairs, 12);
    }

    #[test]
    fn zero_overlap_means_no_partner_tokens() {
        let mut spec = small_spec(11);
        spec.overlap_fraction = 0.0;
        let g = generate(&spec).unwrap();
        let width = spec.token_width();
        for p in &g.pairs {
            let chunk_tokens: HashSet<&str> = p.chunk.split(' ').collect();
            for qt in p.query.split(' ') {
                let idx: usize = qt[1..].parse().unwrap();
                let partner = c_token(g.bijection[idx], width);
                assert!(
                    !chunk_tokens.contains(partner.as_str()),
                    "partner {partner} leaked into chunk at overlap 0"
                );
            }
        }
    }

    #[test]
    fn full_overlap_puts_every_partner_in_chunk() {
        let spec = small_spec(13);
        let g = generate(&spec).unwrap();
        let width = spec.token_width();
        for p in &g.pairs {
            let chunk_tokens: HashSet<&str> = p.chunk.split(' ').collect();
            for qt in p.query.split(' ') {
                let idx: usize = qt[1..].parse().unwrap();
                let partner = c_token(g.bijection[idx], width);
                assert!(chunk_tokens.contains(partner.as_str()));
            }
        }
    }

    #[test]
    fn eval_queries_are_held_out_and_golden_ids_resolve() {
        let spec = small_spec(17);
        let g = generate(&spec).unwrap();
        let train_queries: HashSet<&str> = g.pairs.iter().map(|p| p.query.as_str()).collect();
        let corpus_ids: HashSet<&str> = g.corpus.iter().map(|c| c.chunk_id.as_str()).collect();
        let train_ids: HashSet<&str> = g.pairs.iter().map(|p| p.chunk_id.as_str()).collect();
        assert_eq!(g.eval.len(), spec.eval_queries);
        for e in &g.eval {
            assert!(!train_queries.contains(e.query.as_str()));
            assert!(!e.golden_ids.is_empty());
            for id in &e.golden_ids {
                assert!(corpus_ids.contains(id.as_str()));
                assert!(train_ids.contains(id.as_str()));
            }
        }
        assert_eq!(
            g.corpus.len(),
            spec.eval_queries + spec.distractor_chunks
        );
    }

    #[test]
    fn eval_signal_tokens_map_into_golden_chunk() {
        let spec = small_spec(23);
        let g = generate(&spec).unwrap();
        let width = spec.token_width();
        let by_id: BTreeMap<&str, &str> = g
            .corpus
            .iter()
            .map(|c| (c.chunk_id.as_str(), c.text.as_str()))
            .collect();
        // overlap 1.0: every eval query token's partner is in the golden chunk
        for e in &g.eval {
            let chunk = by_id[e.golden_ids[0].as_str()];
            let chunk_tokens: HashSet<&str> = chunk.split(' ').collect();
            for qt in e.query.split(' ') {
                let idx: usize = qt[1..].parse().unwrap();
                let partner = c_token(g.bijection[idx], width);
                assert!(chunk_tokens.contains(partner.as_str()));
            }
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = small_spec(1);
        spec.overlap_fraction = 1.5;
        assert!(matches!(generate(&spec), Err(Error::Config(_))));

        let mut spec = small_spec(1);
        spec.chunk_vocab_size = 61;
        assert!(matches!(generate(&spec), Err(Error::Config(_))));

        let mut spec = small_spec(1);
        spec.pairs_per_client = vec![1, 2];
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn jsonl_round_trip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate(&small_spec(3)).unwrap();

        let p = dir.path().join("pairs.jsonl");
        save_pairs(&p, &g.pairs).unwrap();
        assert_eq!(load_pairs(&p).unwrap(), g.pairs);

        let e = dir.path().join("eval.jsonl");
        save_eval(&e, &g.eval).unwrap();
        assert_eq!(load_eval(&e).unwrap(), g.eval);

        let c = dir.path().join("corpus.jsonl");
        save_corpus(&c, &g.corpus).unwrap();
        assert_eq!(load_corpus(&c).unwrap(), g.corpus);

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(load_pairs(&empty).unwrap().is_empty());

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"query\":\"a\",\"chunk\":\"b\",\"client_id\":0}\n").unwrap();
        match load_pairs(&bad) {
            Err(Error::Parse { line, detail, .. }) => {
                assert_eq!(line, 1);
                assert!(detail.contains("chunk_id"), "detail: {detail}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn pair_jsonl_key_order_is_stable() {
        let pair = TrainPair {
            query: "q0001".into(),
            chunk: "c0002".into(),
            chunk_id: "ch000000".into(),
            client_id: 3,
        };
        let line = serde_json::to_string(&pair).unwrap();
        assert_eq!(
            line,
            r#"{"query":"q0001","chunk":"c0002","chunk_id":"ch000000","client_id":3}"#
        );
    }

    #[test]
    fn empty_partition_report() {
        let report = partition_report(&[]);
        assert_eq!(report.total_pairs, 0);
        assert!(report.clients.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn surfaces_disjoint_for_any_seed(seed in 0u64..1_000_000) {
            let g = generate(&small_spec(seed)).unwrap();
            let mut query_tokens = HashSet::new();
            let mut chunk_tokens = HashSet::new();
            for p in &g.pairs {
                query_tokens.extend(p.query.split(' ').map(str::to_string));
                chunk_tokens.extend(p.chunk.split(' ').map(str::to_string));
            }
            for e in &g.eval {
                query_tokens.extend(e.query.split(' ').map(str::to_string));
            }
            for c in &g.corpus {
                chunk_tokens.extend(c.text.split(' ').map(str::to_string));
            }
            prop_assert!(query_tokens.is_disjoint(&chunk_tokens));
        }

        #[test]
        fn chunk_ids_unique_for_any_seed(seed in 0u64..1_000_000) {
            let g = generate(&small_spec(seed)).unwrap();
            let mut ids = HashSet::new();
            for p in &g.pairs {
                prop_assert!(ids.insert(p.chunk_id.clone()));
            }
            // corpus repeats referenced training ids but distractors are fresh
            for c in &g.corpus {
                if !ids.contains(&c.chunk_id) {
                    prop_assert!(ids.insert(c.chunk_id.clone()));
                }
            }
        }
    }
}
