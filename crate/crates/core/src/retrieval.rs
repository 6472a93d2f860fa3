//! Brute-force vector retrieval and the upstream metric suite.
//!
//! Retrieval is exact: every query is scored against every indexed chunk
//! by cosine similarity and the top-k taken, ties broken by ascending
//! chunk id. Metrics cover the presence family (hit@k, exact match), the
//! order-sensitive family (MRR, AP, DCG/IDCG/NDCG) and the
//! threshold-driven family (precision/recall/accuracy@k, F1).

use std::collections::BTreeSet;

use serde_json::Value;

use crate::corpus::{CorpusChunk, EvalQuery};
use crate::embedder::{FeatureExtractor, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Vec64;

/// Immutable embedding index over a chunk corpus.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    entries: Vec<(String, Vec64)>,
    dim: usize,
}

impl VectorIndex {
    /// Builds an index from prepared `(chunk_id, embedding)` entries.
    pub fn from_entries(entries: Vec<(String, Vec64)>, dim: usize) -> Result<Self> {
        for (id, e) in &entries {
            if e.len() != dim {
                return Err(Error::Dimension {
                    op: "VectorIndex::from_entries",
                    left: dim,
                    right: e.len(),
                });
            }
            if e.l2_norm() == 0.0 {
                return Err(Error::Degenerate {
                    op: "VectorIndex::from_entries",
                    detail: format!("zero-norm embedding for chunk {id}"),
                });
            }
        }
        Ok(Self { entries, dim })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec64)] {
        &self.entries
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.entries.iter().any(|(id, _)| id == chunk_id)
    }
}

/// Embeds every corpus chunk. Chunks that embed to the zero vector are
/// excluded with a warning; they can never be retrieved by cosine.
pub fn build_index(
    params: &ModelParams,
    extractor: &FeatureExtractor,
    corpus: &[CorpusChunk],
) -> Result<VectorIndex> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot index an empty corpus".into()));
    }
    let mut entries = Vec::with_capacity(corpus.len());
    for chunk in corpus {
        let features = extractor.featurize(&chunk.text);
        let embedding = params.embed(&features)?;
        if embedding.l2_norm() == 0.0 {
            log::warn!(
                "chunk {} embeds to the zero vector; excluded from the index",
                chunk.chunk_id
            );
            continue;
        }
        entries.push((chunk.chunk_id.clone(), embedding));
    }
    Ok(VectorIndex {
        entries,
        dim: params.d_out(),
    })
}

/// Top-k retrieval result for one query, scores descending.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    /// `(chunk_id, cosine score)`, scores non-increasing; equal scores
    /// ordered by ascending chunk id.
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
}

/// Exact k-nearest-neighbor retrieval by descending cosine similarity.
pub fn knn(index: &VectorIndex, query_embedding: &Vec64, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if query_embedding.l2_norm() == 0.0 {
        return Err(Error::Degenerate {
            op: "knn",
            detail: "zero-norm query embedding".into(),
        });
    }
    if query_embedding.len() != index.dim {
        return Err(Error::Dimension {
            op: "knn",
            left: index.dim,
            right: query_embedding.len(),
        });
    }
    let mut scored: Vec<(String, f64)> = index
        .entries
        .iter()
        .map(|(id, emb)| Ok((id.clone(), query_embedding.cosine(emb)?)))
        .collect::<Result<_>>()?;
    scored.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(RankedList {
        query_id: String::new(),
        ranked: scored,
        k,
    })
}

/// Golden chunk ids for one query.
#[derive(Debug, Clone)]
pub struct Judgments {
    golden: BTreeSet<String>,
}

impl Judgments {
    pub fn new<I: IntoIterator<Item = String>>(ids: I) -> Result<Self> {
        let golden: BTreeSet<String> = ids.into_iter().collect();
        if golden.is_empty() {
            return Err(Error::Config("golden id set must be nonempty".into()));
        }
        Ok(Self { golden })
    }

    pub fn ids(&self) -> &BTreeSet<String> {
        &self.golden
    }

    pub fn len(&self) -> usize {
        self.golden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.golden.is_empty()
    }

    fn contains(&self, id: &str) -> bool {
        self.golden.contains(id)
    }
}

/// 1 if any of the top-k ids is golden.
pub fn metric_hit(ranked: &RankedList, golden: &Judgments, k: usize) -> f64 {
    let top = ranked.ranked.iter().take(k);
    f64::from(top.into_iter().any(|(id, _)| golden.contains(id)))
}

/// 1 if *all* golden ids appear in the top-k (complete recall).
pub fn metric_em(ranked: &RankedList, golden: &Judgments, k: usize) -> f64 {
    let top: BTreeSet<&str> = ranked
        .ranked
        .iter()
        .take(k)
        .map(|(id, _)| id.as_str())
        .collect();
    f64::from(golden.ids().iter().all(|g| top.contains(g.as_str())))
}

/// Reciprocal rank of the first golden id, 0 if none was retrieved.
pub fn metric_mrr(ranked: &RankedList, golden: &Judgments) -> f64 {
    ranked
        .ranked
        .iter()
        .position(|(id, _)| golden.contains(id))
        .map_or(0.0, |pos| 1.0 / (pos + 1) as f64)
}

/// Average precision: mean of precision@r over golden ranks r, divided by
/// the number of golden ids.
pub fn metric_ap(ranked: &RankedList, golden: &Judgments) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (pos, (id, _)) in ranked.ranked.iter().enumerate() {
        if golden.contains(id) {
            found += 1;
            sum += found as f64 / (pos + 1) as f64;
        }
    }
    sum / golden.len() as f64
}

/// Binary-gain DCG family at cutoff `k`: `(dcg, idcg, ndcg)`.
pub fn metric_dcg(ranked: &RankedList, golden: &Judgments, k: usize) -> (f64, f64, f64) {
    let discount = |rank: usize| ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, (id, _))| golden.contains(id))
        .map(|(i, _)| 1.0 / discount(i + 1))
        .sum();
    let ideal = golden.len().min(k);
    let idcg: f64 = (1..=ideal).map(|r| 1.0 / discount(r)).sum();
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    (dcg, idcg, ndcg)
}

/// How accuracy@k counts a correct result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccMode {
    /// Fraction of top-k results whose cosine score exceeds theta.
    Threshold,
    /// Label-based fallback: acc@k equals hit@k.
    Label,
}

/// Threshold family at cutoff `k`: `(precision@k, recall@k, accuracy@k, f1)`.
///
/// F1 is the harmonic mean of precision@1 and recall@1 regardless of `k`.
pub fn metric_prf(
    ranked: &RankedList,
    golden: &Judgments,
    k: usize,
    theta: f64,
    acc_mode: AccMode,
) -> (f64, f64, f64, f64) {
    let inter = ranked
        .ranked
        .iter()
        .take(k)
        .filter(|(id, _)| golden.contains(id))
        .count();
    let pre = inter as f64 / k as f64;
    let rec = inter as f64 / golden.len() as f64;
    let acc = match acc_mode {
        AccMode::Threshold => {
            ranked
                .ranked
                .iter()
                .take(k)
                .filter(|(_, score)| *score > theta)
                .count() as f64
                / k as f64
        }
        AccMode::Label => metric_hit(ranked, golden, k),
    };

    let first_hit = ranked
        .ranked
        .first()
        .is_some_and(|(id, _)| golden.contains(id));
    let pre1 = f64::from(first_hit);
    let rec1 = if first_hit {
        1.0 / golden.len() as f64
    } else {
        0.0
    };
    let f1 = if pre1 + rec1 > 0.0 {
        2.0 * pre1 * rec1 / (pre1 + rec1)
    } else {
        0.0
    };
    (pre, rec, acc, f1)
}

/// Evaluation knobs; defaults mirror the report schema.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub theta: f64,
    pub acc_mode: AccMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            theta: 0.5,
            acc_mode: AccMode::Threshold,
        }
    }
}

/// Named metric values in a fixed key order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
    pub ks: Vec<usize>,
}

impl MetricReport {
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Flat JSON object, keys in report order. With `percent` the values
    /// are scaled by 100 at serialization time only.
    pub fn to_json(&self, percent: bool) -> String {
        let mut map = serde_json::Map::new();
        for (name, value) in &self.entries {
            let v = if percent { value * 100.0 } else { *value };
            map.insert(name.clone(), Value::from(v));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad metric report JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("metric report must be a JSON object".into()))?;
        let mut entries = Vec::with_capacity(obj.len());
        for (k, v) in obj {
            let f = v
                .as_f64()
                .ok_or_else(|| Error::Config(format!("metric {k} is not a number")))?;
            entries.push((k.clone(), f));
        }
        Ok(Self {
            entries,
            ks: Vec::new(),
        })
    }

    /// `run,metric,value` rows for plotting.
    pub fn to_csv(&self, run: &str, percent: bool) -> String {
        let mut out = String::from("run,metric,value\n");
        for (name, value) in &self.entries {
            let v = if percent { value * 100.0 } else { *value };
            out.push_str(&format!("{run},{name},{v}\n"));
        }
        out
    }
}

/// Runs the full metric suite over an eval set and averages per query.
///
/// The DCG family, MRR, AP and exact match are computed at the largest
/// cutoff in `ks`; hit@k is reported at the smallest and largest cutoffs;
/// precision/recall/accuracy at every cutoff.
pub fn evaluate(
    index: &VectorIndex,
    params: &ModelParams,
    extractor: &FeatureExtractor,
    eval_set: &[EvalQuery],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if eval_set.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    if opts.ks.is_empty() {
        return Err(Error::Config("at least one cutoff k is required".into()));
    }
    let mut ks = opts.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let k_min = ks[0];
    let k_max = *ks.last().expect("nonempty");

    let mut missing: BTreeSet<String> = BTreeSet::new();
    for q in eval_set {
        for id in &q.golden_ids {
            if !index.contains(id) {
                missing.insert(id.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingGolden(missing.into_iter().collect()));
    }

    let nq = eval_set.len() as f64;
    let mut hit_min = 0.0;
    let mut hit_max = 0.0;
    let mut em = 0.0;
    let mut mrr = 0.0;
    let mut map = 0.0;
    let mut dcg = 0.0;
    let mut idcg = 0.0;
    let mut ndcg = 0.0;
    let mut f1 = 0.0;
    let mut acc = vec![0.0; ks.len()];
    let mut rec = vec![0.0; ks.len()];
    let mut pre = vec![0.0; ks.len()];

    for (qi, q) in eval_set.iter().enumerate() {
        let features = extractor.featurize(&q.query);
        let embedding = params.embed(&features)?;
        let mut ranked = knn(index, &embedding, k_max)?;
        ranked.query_id = format!("q{qi}");
        let golden = Judgments::new(q.golden_ids.iter().cloned())?;

        hit_min += metric_hit(&ranked, &golden, k_min);
        hit_max += metric_hit(&ranked, &golden, k_max);
        em += metric_em(&ranked, &golden, k_max);
        mrr += metric_mrr(&ranked, &golden);
        map += metric_ap(&ranked, &golden);
        let (d, i, n) = metric_dcg(&ranked, &golden, k_max);
        dcg += d;
        idcg += i;
        ndcg += n;
        for (pos, &k) in ks.iter().enumerate() {
            let (p, r, a, f) = metric_prf(&ranked, &golden, k, opts.theta, opts.acc_mode);
            pre[pos] += p;
            rec[pos] += r;
            acc[pos] += a;
            if pos == 0 {
                f1 += f;
            }
        }
    }

    let mut entries = vec![
        (format!("hit@{k_min}"), hit_min / nq),
        (format!("hit@{k_max}"), hit_max / nq),
        ("em".to_string(), em / nq),
        ("mrr".to_string(), mrr / nq),
        ("map".to_string(), map / nq),
        ("ndcg".to_string(), ndcg / nq),
        ("dcg".to_string(), dcg / nq),
        ("idcg".to_string(), idcg / nq),
        ("f1".to_string(), f1 / nq),
    ];
    for (pos, &k) in ks.iter().enumerate() {
        entries.push((format!("acc@{k}"), acc[pos] / nq));
    }
    for (pos, &k) in ks.iter().enumerate() {
        entries.push((format!("rec@{k}"), rec[pos] / nq));
    }
    for (pos, &k) in ks.iter().enumerate() {
        entries.push((format!("pre@{k}"), pre[pos] / nq));
    }

    // rate metrics stay in [0,1]; dcg/idcg are sums and may exceed 1
    for (name, value) in &entries {
        if name != "dcg" && name != "idcg" && !(0.0..=1.0 + 1e-12).contains(value) {
            return Err(Error::Config(format!(
                "metric {name} left [0,1]: {value}"
            )));
        }
    }

    Ok(MetricReport { entries, ks })
}
