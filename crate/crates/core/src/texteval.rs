//! Generation metrics over (candidate, reference) text pairs.
//!
//! Tokenization is pinned exactly: lowercase, split on runs of whitespace,
//! strip the punctuation characters `.,;:!?"'` from both ends of each
//! token, drop tokens that become empty. Character n-grams (chrF) are
//! taken over the lowercased text with all whitespace removed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored answer: candidate text against its reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextPair {
    pub query_id: String,
    pub candidate: String,
    pub reference: String,
}

const STRIP: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\''];

/// Pinned word tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(STRIP).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Lowercased character stream with whitespace removed, for chrF.
fn char_stream(text: &str) -> Vec<char> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect()
}

/// Multiset of n-grams over a slice, as (ngram, count) pairs.
fn ngram_counts<T: Clone + Ord>(items: &[T], n: usize) -> Vec<(Vec<T>, usize)> {
    let mut grams: Vec<Vec<T>> = items.windows(n).map(|w| w.to_vec()).collect();
    grams.sort();
    let mut out: Vec<(Vec<T>, usize)> = Vec::new();
    for g in grams {
        match out.last_mut() {
            Some((last, c)) if *last == g => *c += 1,
            _ => out.push((g, 1)),
        }
    }
    out
}

/// Clipped overlap between two n-gram multisets, plus each side's total.
fn clipped_overlap<T: Clone + Ord>(cand: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let cg = ngram_counts(cand, n);
    let rg = ngram_counts(reference, n);
    let total_c: usize = cg.iter().map(|(_, c)| *c).sum();
    let total_r: usize = rg.iter().map(|(_, c)| *c).sum();
    let mut overlap = 0usize;
    let mut i = 0;
    let mut j = 0;
    while i < cg.len() && j < rg.len() {
        match cg[i].0.cmp(&rg[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                overlap += cg[i].1.min(rg[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (overlap, total_c, total_r)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// ROUGE-N precision/recall/F1 with clipped n-gram overlap, n in {1, 2}.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<(f64, f64, f64)> {
    if !(1..=2).contains(&n) {
        return Err(Error::Config(format!("rouge_n supports n in {{1,2}}, got {n}")));
    }
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    let (overlap, total_c, total_r) = clipped_overlap(&cand, &refr, n);
    if total_c == 0 {
        log::warn!("rouge_n: candidate has no {n}-grams");
        return Ok((0.0, 0.0, 0.0));
    }
    let p = overlap as f64 / total_c as f64;
    let r = if total_r == 0 {
        0.0
    } else {
        overlap as f64 / total_r as f64
    };
    Ok((p, r, harmonic(p, r)))
}

/// Length of the longest common subsequence, classic two-row DP.
fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L precision/recall/F1 over the token-level LCS.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<(f64, f64, f64)> {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() {
        log::warn!("rouge_l: empty candidate");
        return Ok((0.0, 0.0, 0.0));
    }
    let l = lcs_len(&cand, &refr) as f64;
    let p = l / cand.len() as f64;
    let r = if refr.is_empty() {
        0.0
    } else {
        l / refr.len() as f64
    };
    Ok((p, r, harmonic(p, r)))
}

/// BLEU with add-one smoothing on orders n >= 2 and a brevity penalty of
/// `exp(1 - |ref|/|cand|)` when the candidate is shorter.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::Config("bleu needs max_n >= 1".into()));
    }
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() {
        return Ok(0.0);
    }
    let mut product = 1.0f64;
    for n in 1..=max_n {
        let (overlap, total_c, _) = clipped_overlap(&cand, &refr, n);
        let p = if n == 1 {
            if total_c == 0 {
                0.0
            } else {
                overlap as f64 / total_c as f64
            }
        } else {
            (overlap + 1) as f64 / (total_c + 1) as f64
        };
        product *= p;
    }
    let bp = if cand.len() < refr.len() {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    Ok(bp * product.powf(1.0 / max_n as f64))
}

/// Per-order F_beta for n-gram multisets; `None` when neither side has
/// n-grams of this order (the order is excluded from the mean).
fn order_f_beta<T: Clone + Ord>(cand: &[T], reference: &[T], n: usize, beta: f64) -> Option<f64> {
    let (overlap, total_c, total_r) = clipped_overlap(cand, reference, n);
    if total_c == 0 && total_r == 0 {
        return None;
    }
    if total_c == 0 || total_r == 0 {
        return Some(0.0);
    }
    let p = overlap as f64 / total_c as f64;
    let r = overlap as f64 / total_r as f64;
    let b2 = beta * beta;
    if p + r == 0.0 {
        return Some(0.0);
    }
    Some((1.0 + b2) * p * r / (b2 * p + r))
}

/// chrF: mean of per-order character n-gram F_beta (orders 1..=n); with
/// `word_n > 0` word n-gram orders 1..=word_n join the uniform average
/// (the chrF++ variant).
pub fn chrf(candidate: &str, reference: &str, n: usize, word_n: usize, beta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("chrf needs n >= 1".into()));
    }
    let c_chars = char_stream(candidate);
    let r_chars = char_stream(reference);
    let mut scores: Vec<f64> = Vec::new();
    for order in 1..=n {
        if let Some(f) = order_f_beta(&c_chars, &r_chars, order, beta) {
            scores.push(f);
        }
    }
    if word_n > 0 {
        let c_words = tokenize(candidate);
        let r_words = tokenize(reference);
        for order in 1..=word_n {
            if let Some(f) = order_f_beta(&c_words, &r_words, order, beta) {
                scores.push(f);
            }
        }
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Levenshtein distance with unit costs.
fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error rate: token-level edit distance over the reference length.
/// May exceed 1. A reference that tokenizes to nothing counts as length 1.
pub fn wer(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    levenshtein(&cand, &refr) as f64 / refr.len().max(1) as f64
}

/// Character error rate over the normalized text (tokens joined by single
/// spaces).
pub fn cer(candidate: &str, reference: &str) -> f64 {
    let cand: Vec<char> = tokenize(candidate).join(" ").chars().collect();
    let refr: Vec<char> = tokenize(reference).join(" ").chars().collect();
    levenshtein(&cand, &refr) as f64 / refr.len().max(1) as f64
}

/// Per-pair metric values.
#[derive(Debug, Clone, Serialize)]
pub struct PairScores {
    pub query_id: String,
    pub chrf: f64,
    #[serde(rename = "chrf++")]
    pub chrf_pp: f64,
    pub r1_p: f64,
    pub r1_r: f64,
    pub r1_f: f64,
    pub r2_p: f64,
    pub r2_r: f64,
    pub r2_f: f64,
    pub rl_p: f64,
    pub rl_r: f64,
    pub rl_f: f64,
    pub bleu: f64,
    pub wer: f64,
    pub cer: f64,
}

/// Aggregate report: arithmetic means over pairs, plus the per-pair
/// breakdown (not serialized).
#[derive(Debug, Clone, Serialize)]
pub struct GenReport {
    pub chrf: f64,
    #[serde(rename = "chrf++")]
    pub chrf_pp: f64,
    pub r1_p: f64,
    pub r1_r: f64,
    pub r1_f: f64,
    pub r2_p: f64,
    pub r2_r: f64,
    pub r2_f: f64,
    pub rl_p: f64,
    pub rl_r: f64,
    pub rl_f: f64,
    pub bleu: f64,
    pub wer: f64,
    pub cer: f64,
    #[serde(skip)]
    pub per_pair: Vec<PairScores>,
}

fn score_pair(pair: &TextPair) -> Result<PairScores> {
    let (r1_p, r1_r, r1_f) = rouge_n(&pair.candidate, &pair.reference, 1)?;
    let (r2_p, r2_r, r2_f) = rouge_n(&pair.candidate, &pair.reference, 2)?;
    let (rl_p, rl_r, rl_f) = rouge_l(&pair.candidate, &pair.reference)?;
    Ok(PairScores {
        query_id: pair.query_id.clone(),
        chrf: chrf(&pair.candidate, &pair.reference, 6, 0, 2.0)?,
        chrf_pp: chrf(&pair.candidate, &pair.reference, 6, 2, 2.0)?,
        r1_p,
        r1_r,
        r1_f,
        r2_p,
        r2_r,
        r2_f,
        rl_p,
        rl_r,
        rl_f,
        bleu: bleu(&pair.candidate, &pair.reference, 4)?,
        wer: wer(&pair.candidate, &pair.reference),
        cer: cer(&pair.candidate, &pair.reference),
    })
}

/// Scores every pair and averages. Order of pairs does not affect the
/// aggregates beyond float-sum associativity (summation is input order).
pub fn evaluate_text(pairs: &[TextPair]) -> Result<GenReport> {
    if pairs.is_empty() {
        return Err(Error::Config("no text pairs to evaluate".into()));
    }
    let per_pair: Vec<PairScores> = pairs.iter().map(score_pair).collect::<Result<_>>()?;
    let n = per_pair.len() as f64;
    let mean = |f: fn(&PairScores) -> f64| per_pair.iter().map(f).sum::<f64>() / n;
    Ok(GenReport {
        chrf: mean(|s| s.chrf),
        chrf_pp: mean(|s| s.chrf_pp),
        r1_p: mean(|s| s.r1_p),
        r1_r: mean(|s| s.r1_r),
        r1_f: mean(|s| s.r1_f),
        r2_p: mean(|s| s.r2_p),
        r2_r: mean(|s| s.r2_r),
        r2_f: mean(|s| s.r2_f),
        rl_p: mean(|s| s.rl_p),
        rl_r: mean(|s| s.rl_r),
        rl_f: mean(|s| s.rl_f),
        bleu: mean(|s| s.bleu),
        wer: mean(|s| s.wer),
        cer: mean(|s| s.cer),
        per_pair,
    })
}
