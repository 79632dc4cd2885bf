//! Caption metrics over a shared tokenizer: corpus BLEU-4, CIDEr-D and a
//! synonym-free METEOR variant reported as `meteor_lite`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

/// Identifier of the tokenization rules below, recorded in reports.
pub const TOKENIZER_VERSION: &str = "lower-alnum-v1";

/// Lowercases and splits on every character that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Ngram<'_>, usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4: uniform weights over clipped 1..4-gram precisions, brevity
/// penalty against the closest reference length (shorter on ties), no
/// smoothing.
pub fn bleu4(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        for n in 1..=4 {
            let counts = ngram_counts(cand, n);
            let mut max_ref: BTreeMap<Ngram<'_>, usize> = BTreeMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &counts {
                matched[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 || matched.iter().zip(&total).any(|(&m, &t)| m == 0 || t == 0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    bp * log_p.exp()
}

pub const CIDER_SIGMA: f64 = 6.0;

struct TfIdf<'a> {
    vecs: [BTreeMap<Ngram<'a>, f64>; 4],
    norms: [f64; 4],
    len: usize,
}

fn tfidf<'a>(tokens: &'a [String], df: &BTreeMap<Ngram<'_>, usize>, log_n: f64) -> TfIdf<'a> {
    let mut vecs: [BTreeMap<Ngram<'a>, f64>; 4] = Default::default();
    let mut norms = [0.0; 4];
    for n in 1..=4 {
        for (g, tf) in ngram_counts(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_n - d.ln());
            norms[n - 1] += w * w;
            vecs[n - 1].insert(g, w);
        }
        norms[n - 1] = norms[n - 1].sqrt();
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim(hyp: &TfIdf<'_>, r: &TfIdf<'_>) -> f64 {
    let delta = hyp.len as f64 - r.len as f64;
    let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut sum = 0.0;
    for n in 0..4 {
        let mut val = 0.0;
        for (g, &h) in &hyp.vecs[n] {
            if let Some(&rv) = r.vecs[n].get(g) {
                val += h.min(rv) * rv;
            }
        }
        if hyp.norms[n] != 0.0 && r.norms[n] != 0.0 {
            val /= hyp.norms[n] * r.norms[n];
        }
        sum += val * gauss;
    }
    sum / 4.0
}

/// Per-item CIDEr-D scores (scaled by 10). Document frequencies are counted
/// over each item's reference set.
pub fn cider_scores(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Vec<f64> {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let mut df: BTreeMap<Ngram<'_>, usize> = BTreeMap::new();
    for refs in references {
        let mut seen: BTreeSet<Ngram<'_>> = BTreeSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (references.len().max(1) as f64).ln();
    candidates
        .iter()
        .zip(references)
        .map(|(cand, refs)| {
            if refs.is_empty() {
                return 0.0;
            }
            let h = tfidf(cand, &df, log_n);
            let total: f64 = refs.iter().map(|r| cider_sim(&h, &tfidf(r, &df, log_n))).sum();
            10.0 * total / refs.len() as f64
        })
        .collect()
}

/// Corpus CIDEr-D: the mean of [`cider_scores`].
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> f64 {
    let s = cider_scores(candidates, references);
    if s.is_empty() {
        0.0
    } else {
        s.iter().sum::<f64>() / s.len() as f64
    }
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

fn stemmer() -> &'static Stemmer {
    static S: OnceLock<Stemmer> = OnceLock::new();
    S.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Unigram alignment as `(candidate_pos, reference_pos)` pairs: exact
/// matches first, then stem matches among the leftovers, each stage
/// greedily pairing a candidate word with the leftmost free reference word.
pub fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut used_c = vec![false; candidate.len()];
    let mut used_r = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let stem = |w: &String| stemmer().stem(w).into_owned();
    let c_stems: Vec<String> = candidate.iter().map(stem).collect();
    let r_stems: Vec<String> = reference.iter().map(stem).collect();
    for stage in 0..2 {
        for i in 0..candidate.len() {
            if used_c[i] {
                continue;
            }
            let hit = (0..reference.len()).find(|&j| {
                !used_r[j]
                    && if stage == 0 {
                        candidate[i] == reference[j]
                    } else {
                        c_stems[i] == r_stems[j]
                    }
            });
            if let Some(j) = hit {
                used_c[i] = true;
                used_r[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Runs of alignment pairs adjacent in both sentences.
pub fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

fn meteor_single(candidate: &[String], reference: &[String]) -> f64 {
    let pairs = align(candidate, reference);
    let m = pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let frag = chunk_count(&pairs) as f64 / m;
    f_mean * (1.0 - METEOR_GAMMA * frag.powf(METEOR_BETA))
}

/// Best score over the references.
pub fn meteor_lite(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|r| meteor_single(candidate, r))
        .fold(0.0, f64::max)
}

/// All three caption metrics over a corpus of raw strings.
pub fn caption_metrics(candidates: &[String], references: &[Vec<String>]) -> BTreeMap<String, f64> {
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(c)).collect();
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| tokenize(r)).collect())
        .collect();
    BTreeMap::from([
        ("bleu4".to_string(), bleu4(&cands, &refs)),
        ("cider".to_string(), cider(&cands, &refs)),
        ("meteor_lite".to_string(), meteor_corpus(&cands, &refs)),
    ])
}

/// Mean sentence-level `meteor_lite`.
pub fn meteor_corpus(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_lite(c, r))
        .sum::<f64>()
        / candidates.len() as f64
}
