//! Scratch harness for lift tuning (temporary).

use fedembed_core::corpus::{generate, CorpusSpec};
use fedembed_core::embedder::{FeatureExtractor, ModelParams};
use fedembed_core::fed::{build_client_datasets, run, FedConfig, Mode};
use fedembed_core::retrieval::{build_index, evaluate, EvalOptions};

fn envf(k: &str, d: f64) -> f64 {
    std::env::var(k).map(|s| s.parse().unwrap()).unwrap_or(d)
}
fn envu(k: &str, d: usize) -> usize {
    std::env::var(k).map(|s| s.parse().unwrap()).unwrap_or(d)
}

fn main() {
    let vocab = envu("VOCAB", 200);
    let tpq = envu("TPQ", 8);
    let tpc = envu("TPC", 16);
    let slice_overlap = envf("SLICE", 0.0);
    let lr = envf("LR", 1e-2);
    let rounds = envu("T", 25);
    let lambda = envf("LAMBDA", 1.0);

    println!("vocab={vocab} tpq={tpq} tpc={tpc} slice={slice_overlap} lr={lr} T={rounds} lambda={lambda}");
    let mut c4_pass = 0;
    let mut c5_pass = 0;
    let nseeds = envu("NSEEDS", 3);
    let seeds: Vec<u64> = [42u64, 1, 2, 3, 4, 5, 6, 7, 8, 9][..nseeds].to_vec();
    for &seed in &seeds {
        let spec = CorpusSpec {
            query_vocab_size: vocab,
            chunk_vocab_size: vocab,
            tokens_per_query: tpq,
            tokens_per_chunk: tpc,
            client_slice_overlap: slice_overlap,
            seed,
            ..Default::default()
        };
        let g = generate(&spec).unwrap();
        let fx = FeatureExtractor::new(256, seed).unwrap();
        let clients = build_client_datasets(&g.pairs, &fx);
        let opts = EvalOptions::default();
        let init = ModelParams::seeded_uniform(64, 256, 0.05, seed);

        let mut results = Vec::new();
        for mode in [Mode::Vanilla, Mode::FedAvg, Mode::FedE4Rag] {
            let cfg = FedConfig {
                rounds,
                lr,
                lambda_kd: lambda,
                mode,
                seed,
                ..Default::default()
            };
            let out = run(&cfg, init.clone(), &clients, None, None).unwrap();
            let index = build_index(&out.params, &fx, &g.corpus).unwrap();
            let report = evaluate(&index, &out.params, &fx, &g.eval, &opts).unwrap();
            results.push((
                report.get("hit@10").unwrap(),
                report.get("mrr").unwrap(),
            ));
        }
        let (van, avg, fed) = (results[0], results[1], results[2]);
        let c4 = fed.0 >= van.0 + 0.30 && fed.0 >= avg.0 - 0.02;
        let c5 = fed.1 >= avg.1;
        c4_pass += c4 as u32;
        c5_pass += c5 as u32;
        println!(
            "  seed {seed}: vanilla h10={:.3} | fedavg h10={:.3} mrr={:.3} | fede4rag h10={:.3} mrr={:.3} | c4={c4} c5={c5}",
            van.0, avg.0, avg.1, fed.0, fed.1
        );
    }
    println!("  => c4 {c4_pass}/{} , c5 {c5_pass}/{}", seeds.len(), seeds.len());
}
