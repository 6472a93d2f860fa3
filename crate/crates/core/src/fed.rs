//! Federated orchestration: round loop, client selection, local training,
//! aggregation, and the five comparison strategies.
//!
//! Clients exchange parameter *deltas* (`w_local - w_global`), which the
//! server combines as `w <- w + sum_k (n_k/N) * delta_k`. Starting every
//! client from the same broadcast weights makes this algebraically
//! identical to weighted weight-averaging, and the delta is exactly the
//! quantity the encrypted path encrypts.
//!
//! Every random choice flows from `FedConfig::seed` through tagged SHA-256
//! derivations, so runs are bit-reproducible; client updates within a
//! round are pure functions of (dataset, broadcast weights, round seed).

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TrainPair;
use crate::embedder::{
    infonce_grad, infonce_loss, kd_grad, kd_loss, pair_similarities, Batch, FeatureExtractor,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::he::{
    aggregate, decrypt_aggregate, encrypt_update, keygen, CiphertextVec, FixedPointCodec,
    HeParams, PublicKey, SecretKey, TranscriptRecord,
};
use crate::tensor::Vec64;
use crate::util::ceil_frac;

/// Training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Untrained baseline: returns the initial weights untouched.
    Vanilla,
    /// All client data pooled and trained on one node.
    Central,
    /// A single client training alone on its own data.
    Independent,
    /// Federated averaging without distillation.
    FedAvg,
    /// Federated averaging with the similarity-distillation penalty and,
    /// optionally, encrypted aggregation.
    FedE4Rag,
}

impl Mode {
    pub const ALL: [&'static str; 5] =
        ["central", "independent", "vanilla", "fedavg", "fede4rag"];
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "central" => Ok(Mode::Central),
            "independent" => Ok(Mode::Independent),
            "fedavg" => Ok(Mode::FedAvg),
            "fede4rag" => Ok(Mode::FedE4Rag),
            other => Err(Error::Config(format!(
                "unknown mode '{other}'; valid modes: {}",
                Mode::ALL.join(", ")
            ))),
        }
    }
}

/// Federated training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub lambda_kd: f64,
    pub client_fraction: f64,
    pub mode: Mode,
    pub he_enabled: bool,
    pub seed: u64,
    /// Which client trains in `independent` mode.
    pub client_id: Option<u64>,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 25,
            local_epochs: 1,
            batch_size: 16,
            lr: 1e-5,
            tau: 1.0,
            lambda_kd: 1.0,
            client_fraction: 1.0,
            mode: Mode::FedAvg,
            he_enabled: false,
            seed: 42,
            client_id: None,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.lambda_kd < 0.0 {
            return Err(Error::Config(format!(
                "lambda_kd must be >= 0, got {}",
                self.lambda_kd
            )));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client_fraction must lie in (0, 1], got {}",
                self.client_fraction
            )));
        }
        if self.mode == Mode::Independent && self.client_id.is_none() {
            return Err(Error::Config(
                "independent mode requires a client_id".into(),
            ));
        }
        Ok(())
    }

    /// Distillation weight actually applied: forced to 0 outside fede4rag.
    fn effective_lambda(&self) -> f64 {
        if self.mode == Mode::FedE4Rag {
            self.lambda_kd
        } else {
            0.0
        }
    }
}

/// One client's training data, featurized once at construction.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    client_id: u64,
    queries: Vec<Vec64>,
    chunks: Vec<Vec64>,
}

impl ClientDataset {
    /// Featurizes the client's pairs, dropping pairs whose query or chunk
    /// featurizes to the zero vector (cosine would be undefined).
    pub fn build(client_id: u64, pairs: &[TrainPair], fx: &FeatureExtractor) -> Self {
        let mut queries = Vec::with_capacity(pairs.len());
        let mut chunks = Vec::with_capacity(pairs.len());
        for p in pairs {
            let q = fx.featurize(&p.query);
            let c = fx.featurize(&p.chunk);
            if q.l2_norm() == 0.0 || c.l2_norm() == 0.0 {
                log::warn!(
                    "client {client_id}: pair {} featurizes to a zero vector, skipped",
                    p.chunk_id
                );
                continue;
            }
            queries.push(q);
            chunks.push(c);
        }
        Self {
            client_id,
            queries,
            chunks,
        }
    }

    pub fn client_id(&self) -> u64 {
        self.client_id
    }

    /// Number of usable training pairs, the FedAvg weight `n_k`.
    pub fn n_pairs(&self) -> usize {
        self.queries.len()
    }
}

/// Groups pairs by client id (ascending) and featurizes each group.
pub fn build_client_datasets(
    pairs: &[TrainPair],
    fx: &FeatureExtractor,
) -> Vec<ClientDataset> {
    let mut grouped: BTreeMap<u64, Vec<TrainPair>> = BTreeMap::new();
    for p in pairs {
        grouped.entry(p.client_id).or_default().push(p.clone());
    }
    grouped
        .into_iter()
        .map(|(id, ps)| ClientDataset::build(id, &ps, fx))
        .collect()
}

/// Concatenates all clients (in id order) into one dataset with id 0.
fn pool_datasets(clients: &[ClientDataset]) -> ClientDataset {
    let mut sorted: Vec<&ClientDataset> = clients.iter().collect();
    sorted.sort_by_key(|c| c.client_id);
    let mut queries = Vec::new();
    let mut chunks = Vec::new();
    for c in sorted {
        queries.extend(c.queries.iter().cloned());
        chunks.extend(c.chunks.iter().cloned());
    }
    ClientDataset {
        client_id: 0,
        queries,
        chunks,
    }
}

/// Per-round bookkeeping.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<u64>,
    /// Mean batch loss per participating client, in `clients` order.
    pub client_losses: Vec<f64>,
    pub delta_norm: f64,
}

impl RoundRecord {
    pub fn mean_local_loss(&self) -> f64 {
        if self.client_losses.is_empty() {
            0.0
        } else {
            self.client_losses.iter().sum::<f64>() / self.client_losses.len() as f64
        }
    }
}

/// Wire form of one round-log line.
#[derive(Serialize, Deserialize)]
struct RoundLogLine {
    round: usize,
    clients: Vec<u64>,
    mean_local_loss: f64,
    delta_norm: f64,
}

const TAG_SELECT: u8 = 0;
const TAG_CLIENT: u8 = 1;
const TAG_ENCRYPT: u8 = 2;

/// Stable per-round, per-client seed derivation.
fn derive_seed(tag: u8, seed: u64, round: usize, client: u64) -> u64 {
    let mut h = Sha256::new();
    h.update([tag]);
    h.update(seed.to_le_bytes());
    h.update((round as u64).to_le_bytes());
    h.update(client.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Samples `ceil(fraction * K)` client ids without replacement,
/// deterministically from `round_seed`; returned sorted ascending.
pub fn select_clients(all_ids: &[u64], fraction: f64, round_seed: u64) -> Result<Vec<u64>> {
    if all_ids.is_empty() {
        return Err(Error::Config("no clients to select from".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "client fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = all_ids.len();
    let m = ceil_frac(fraction, k).clamp(1, k);
    let mut rng = ChaCha20Rng::seed_from_u64(round_seed);
    let picked = rand::seq::index::sample(&mut rng, k, m);
    let mut ids: Vec<u64> = picked.iter().map(|i| all_ids[i]).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Runs `E` epochs of seeded mini-batch SGD from the broadcast weights and
/// returns the accumulated parameter delta plus the per-batch losses.
///
/// The delta is accumulated directly (`delta -= lr * grad` per step, with
/// the working weights recomputed as `global + delta`), so the returned
/// vector is the exact float sum of the steps taken.
pub fn client_update(
    state: &ClientDataset,
    global_params: &ModelParams,
    cfg: &FedConfig,
    round_seed: u64,
) -> Result<(Vec64, Vec<f64>)> {
    if state.n_pairs() == 0 {
        return Err(Error::Config(format!(
            "client {} has no usable training pairs",
            state.client_id
        )));
    }
    let lambda = cfg.effective_lambda();
    let d_out = global_params.d_out();
    let d_in = global_params.d_in();
    let global_flat = global_params.flatten();

    let mut rng = ChaCha20Rng::seed_from_u64(round_seed);
    let mut delta = Vec64::zeros(d_out * d_in);
    let mut current = global_params.clone();
    let mut losses = Vec::new();

    for _epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..state.n_pairs()).collect();
        order.shuffle(&mut rng);
        for batch_idx in order.chunks(cfg.batch_size) {
            let queries: Vec<Vec64> = batch_idx.iter().map(|&i| state.queries[i].clone()).collect();
            let chunks: Vec<Vec64> = batch_idx.iter().map(|&i| state.chunks[i].clone()).collect();
            let batch = Batch::new(queries, chunks)?;

            let mut loss = infonce_loss(&current, &batch, cfg.tau)?;
            let mut grad = infonce_grad(&current, &batch, cfg.tau)?;
            if lambda > 0.0 {
                let z_local = pair_similarities(&current, &batch)?;
                let z_teacher = pair_similarities(global_params, &batch)?;
                loss += lambda * kd_loss(&z_local, &z_teacher)?;
                grad = grad.axpy(lambda, &kd_grad(&current, global_params, &batch)?)?;
            }
            losses.push(loss);

            delta = delta.axpy(-cfg.lr, &grad)?;
            current = ModelParams::from_flat(d_out, d_in, &global_flat.axpy(1.0, &delta)?)?;
        }
    }
    Ok((delta, losses))
}

/// One client's contribution to a round.
#[derive(Debug, Clone)]
pub struct ClientDelta {
    pub client_id: u64,
    pub delta: Vec64,
    pub weight: u64,
}

/// Plaintext weighted mean `sum_k (n_k/N) * delta_k`, summed in ascending
/// client-id order so the result is independent of input order.
///
/// Computed in anchored form `delta_0 + sum_k (n_k/N) * (delta_k - delta_0)`,
/// which is exactly idempotent: identical deltas yield that delta whatever
/// the weights, and a single client's delta passes through bit-untouched.
pub fn aggregate_plain(deltas: &[ClientDelta]) -> Result<Vec64> {
    if deltas.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let mut sorted: Vec<&ClientDelta> = deltas.iter().collect();
    sorted.sort_by_key(|d| d.client_id);
    let len = sorted[0].delta.len();
    let total: u64 = sorted.iter().map(|d| d.weight).sum();
    if total == 0 {
        return Err(Error::Config("total client weight is zero".into()));
    }
    let anchor = sorted[0].delta.as_slice();
    let mut acc = sorted[0].delta.clone().into_vec();
    for d in sorted.iter().skip(1) {
        if d.delta.len() != len {
            return Err(Error::Dimension {
                op: "aggregate_plain",
                left: len,
                right: d.delta.len(),
            });
        }
        let w = d.weight as f64 / total as f64;
        for ((slot, &v), &a) in acc.iter_mut().zip(d.delta.as_slice()).zip(anchor) {
            *slot += w * (v - a);
        }
    }
    Vec64::new(acc)
}

/// Key material and codec for the encrypted aggregation path.
pub struct HeContext {
    pub params: HeParams,
    pub pk: PublicKey,
    pub sk: SecretKey,
    pub codec: FixedPointCodec,
    /// Seed for encryption randomness; `None` draws from OS entropy.
    pub enc_seed: Option<u64>,
}

impl HeContext {
    /// Trusted setup: one keypair per run, deterministic in the seed.
    pub fn setup(params: HeParams, keygen_seed: u64, enc_seed: Option<u64>) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(keygen_seed);
        let (pk, sk) = keygen(&params, &mut rng)?;
        let codec = params.codec();
        Ok(Self {
            params,
            pk,
            sk,
            codec,
            enc_seed,
        })
    }
}

/// Observer for per-round artifacts (checkpoints, logs, transcripts).
pub trait RoundSink {
    fn on_round(&mut self, record: &RoundRecord, params: &ModelParams) -> Result<()>;

    fn on_ciphertexts(
        &mut self,
        _round: usize,
        _client_id: u64,
        _cts: &CiphertextVec,
    ) -> Result<()> {
        Ok(())
    }
}

/// Writes `round_<t>.json` checkpoints, a `rounds.jsonl` log and (for
/// encrypted runs) a `transcript.jsonl` audit file into a directory.
pub struct FileRoundSink {
    dir: PathBuf,
}

impl FileRoundSink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        // truncate any previous log so reruns are byte-identical
        for name in ["rounds.jsonl", "transcript.jsonl"] {
            let p = dir.join(name);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::Io { path: p, source: e })?;
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn append(&self, name: &str, line: &str) -> Result<()> {
        let path = self.dir.join(name);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
        writeln!(f, "{line}").map_err(|e| Error::Io { path, source: e })
    }
}

impl RoundSink for FileRoundSink {
    fn on_round(&mut self, record: &RoundRecord, params: &ModelParams) -> Result<()> {
        let line = serde_json::to_string(&RoundLogLine {
            round: record.round,
            clients: record.clients.clone(),
            mean_local_loss: record.mean_local_loss(),
            delta_norm: record.delta_norm,
        })
        .expect("round record serializes");
        self.append("rounds.jsonl", &line)?;
        crate::io::write_text(
            &self.dir.join(format!("round_{}.json", record.round)),
            &params.to_json(),
        )
    }

    fn on_ciphertexts(&mut self, round: usize, client_id: u64, cts: &CiphertextVec) -> Result<()> {
        let line = serde_json::to_string(&TranscriptRecord::new(client_id, round, cts))
            .expect("transcript serializes");
        self.append("transcript.jsonl", &line)
    }
}

/// Final weights plus the per-round history.
pub struct RunOutput {
    pub params: ModelParams,
    pub records: Vec<RoundRecord>,
}

/// Encrypted aggregation of one round: each delta is encoded, pre-scaled
/// by its client's weight, encrypted under the public key, summed
/// homomorphically (no key in scope), then decrypted and divided by the
/// total weight.
fn he_aggregate(
    ctx: &HeContext,
    round: usize,
    deltas: &[ClientDelta],
    sink: &mut Option<&mut dyn RoundSink>,
) -> Result<Vec64> {
    if deltas.len() > ctx.params.max_clients {
        return Err(Error::Config(format!(
            "{} clients exceed the HE parameter bound of {}",
            deltas.len(),
            ctx.params.max_clients
        )));
    }
    let mut sorted: Vec<&ClientDelta> = deltas.iter().collect();
    sorted.sort_by_key(|d| d.client_id);
    let mut encrypted = Vec::with_capacity(sorted.len());
    let mut total_weight = 0u64;
    for d in sorted {
        let mut rng = match ctx.enc_seed {
            Some(s) => ChaCha20Rng::seed_from_u64(derive_seed(TAG_ENCRYPT, s, round, d.client_id)),
            None => ChaCha20Rng::from_entropy(),
        };
        let cts = encrypt_update(&ctx.pk, &ctx.codec, &d.delta, d.weight, &mut rng)
            .map_err(|e| e.in_round(round, d.client_id))?;
        if let Some(s) = sink.as_deref_mut() {
            s.on_ciphertexts(round, d.client_id, &cts)?;
        }
        encrypted.push(cts);
        total_weight += d.weight;
    }
    let agg = aggregate(&encrypted)?;
    decrypt_aggregate(&ctx.sk, &ctx.codec, &agg, total_weight)
}

fn run_rounds(
    cfg: &FedConfig,
    init: ModelParams,
    clients: &[ClientDataset],
    he: Option<&HeContext>,
    mut sink: Option<&mut dyn RoundSink>,
) -> Result<RunOutput> {
    let mut by_id: BTreeMap<u64, &ClientDataset> = BTreeMap::new();
    for c in clients {
        if c.n_pairs() == 0 {
            return Err(Error::Config(format!(
                "client {} has an empty dataset",
                c.client_id
            )));
        }
        if by_id.insert(c.client_id, c).is_some() {
            return Err(Error::Config(format!(
                "duplicate client id {}",
                c.client_id
            )));
        }
    }
    let ids: Vec<u64> = by_id.keys().copied().collect();
    let use_he = cfg.he_enabled && cfg.mode == Mode::FedE4Rag;
    if use_he && he.is_none() {
        return Err(Error::Config(
            "he_enabled requires an HE context (keys + codec)".into(),
        ));
    }

    let mut w = init;
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let selected = select_clients(&ids, cfg.client_fraction, derive_seed(TAG_SELECT, cfg.seed, t, u64::MAX))?;
        let mut deltas = Vec::with_capacity(selected.len());
        let mut client_losses = Vec::with_capacity(selected.len());
        for &cid in &selected {
            let ds = by_id[&cid];
            let (delta, losses) =
                client_update(ds, &w, cfg, derive_seed(TAG_CLIENT, cfg.seed, t, cid))
                    .map_err(|e| e.in_round(t, cid))?;
            client_losses.push(if losses.is_empty() {
                0.0
            } else {
                losses.iter().sum::<f64>() / losses.len() as f64
            });
            deltas.push(ClientDelta {
                client_id: cid,
                delta,
                weight: ds.n_pairs() as u64,
            });
        }

        let mean_delta = if use_he {
            he_aggregate(he.expect("checked above"), t, &deltas, &mut sink)?
        } else {
            aggregate_plain(&deltas)?
        };
        let new_flat = w.flatten().axpy(1.0, &mean_delta)?;
        w = ModelParams::from_flat(w.d_out(), w.d_in(), &new_flat)?;

        let record = RoundRecord {
            round: t,
            clients: selected,
            client_losses,
            delta_norm: mean_delta.l2_norm(),
        };
        if let Some(s) = sink.as_deref_mut() {
            s.on_round(&record, &w)?;
        }
        records.push(record);
    }
    Ok(RunOutput { params: w, records })
}

/// Runs the configured strategy to completion.
///
/// * `vanilla` returns the initial weights bit-untouched.
/// * `central` pools every client's pairs (client-id order) into a single
///   dataset with id 0 and trains it for `rounds * local_epochs` epochs,
///   which makes it the exact single-client reduction of `fedavg`.
/// * `independent` trains only `cfg.client_id`, alone.
/// * `fedavg` runs the round loop with distillation off.
/// * `fede4rag` runs the round loop with distillation on, aggregating
///   through the encrypted path when `he_enabled`.
pub fn run(
    cfg: &FedConfig,
    init: ModelParams,
    clients: &[ClientDataset],
    he: Option<&HeContext>,
    sink: Option<&mut dyn RoundSink>,
) -> Result<RunOutput> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::Config("at least one client is required".into()));
    }
    match cfg.mode {
        Mode::Vanilla => Ok(RunOutput {
            params: init,
            records: Vec::new(),
        }),
        Mode::Central => {
            let pooled = pool_datasets(clients);
            run_rounds(cfg, init, std::slice::from_ref(&pooled), he, sink)
        }
        Mode::Independent => {
            let cid = cfg.client_id.expect("validated");
            let ds = clients
                .iter()
                .find(|c| c.client_id == cid)
                .ok_or_else(|| Error::Config(format!("no client with id {cid}")))?;
            run_rounds(cfg, init, std::slice::from_ref(ds), he, sink)
        }
        Mode::FedAvg | Mode::FedE4Rag => run_rounds(cfg, init, clients, he, sink),
    }
}
