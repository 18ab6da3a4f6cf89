//! Free-form answer metrics over a shared tokenization.
//!
//! Tokenization: lowercase, every character that is neither alphanumeric nor
//! whitespace becomes a space, then split on whitespace.
//!
//! - BLEU-n: clipped modified precisions for orders 1..n, geometric mean,
//!   brevity penalty `exp(1 - r/c)` when `c < r` with `r` the closest
//!   reference length (ties go to the shorter). No smoothing: any zero
//!   precision gives 0. Reports use corpus-level BLEU (counts summed over
//!   items before the geometric mean).
//! - ROUGE-L: LCS F-measure with β = 1.2, maximum over references.
//! - CIDEr-D: TF-IDF n-gram vectors for n = 1..4, clipped numerator
//!   `Σ min(h, r)·r`, cosine normalization, gaussian length penalty with
//!   σ = 6, mean over n and references, ×10. IDF is `ln((N + 1) / max(1, df))`
//!   over the N reference sets of the corpus.
//! - METEOR (simplified): unigram matches where stems agree under the English
//!   Porter2 stemmer, no synonym table. The alignment maximizes matches, then
//!   minimizes chunks. α = 0.9, β = 3, γ = 0.5, maximum over references.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn new(text: &str) -> Self {
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .map(|c| {
                if c.is_alphanumeric() || c.is_whitespace() {
                    c
                } else {
                    ' '
                }
            })
            .collect();
        Self {
            tokens: cleaned.split_whitespace().map(str::to_string).collect(),
        }
    }

    pub fn detokenize(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize(text: &str) -> TokenizedText {
    TokenizedText::new(text)
}

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Ngram<'_>, u32> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate total for order `n`.
fn clipped_precision_counts(candidate: &TokenizedText, references: &[TokenizedText], n: usize) -> (u64, u64) {
    let cand = ngram_counts(&candidate.tokens, n);
    let mut max_ref: BTreeMap<Ngram<'_>, u32> = BTreeMap::new();
    for r in references {
        for (g, c) in ngram_counts(&r.tokens, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let clipped = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)) as u64)
        .sum();
    let total = candidate.len().saturating_sub(n - 1) as u64;
    (clipped, total)
}

fn closest_ref_len(c: usize, references: &[TokenizedText]) -> usize {
    references
        .iter()
        .map(TokenizedText::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn bleu_from_counts(clipped: &[u64], totals: &[u64], c: usize, r: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for (&m, &t) in clipped.iter().zip(totals) {
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / clipped.len() as f64).exp()
}

/// Sentence-level BLEU-n in `[0, 1]`. `n` is clamped to `1..=4`.
pub fn bleu_n(candidate: &TokenizedText, references: &[TokenizedText], n: usize) -> f64 {
    let n = n.clamp(1, 4);
    let (clipped, totals): (Vec<u64>, Vec<u64>) = (1..=n)
        .map(|i| clipped_precision_counts(candidate, references, i))
        .unzip();
    bleu_from_counts(
        &clipped,
        &totals,
        candidate.len(),
        closest_ref_len(candidate.len(), references),
    )
}

/// Corpus BLEU-n: clipped counts, totals and lengths are summed over items.
pub fn corpus_bleu(candidates: &[TokenizedText], references: &[Vec<TokenizedText>], n: usize) -> f64 {
    let n = n.clamp(1, 4);
    let mut clipped = vec![0u64; n];
    let mut totals = vec![0u64; n];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        for i in 1..=n {
            let (m, t) = clipped_precision_counts(cand, refs, i);
            clipped[i - 1] += m;
            totals[i - 1] += t;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    bleu_from_counts(&clipped, &totals, c, r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

pub fn rouge_l(candidate: &TokenizedText, references: &[TokenizedText]) -> f64 {
    let b2 = ROUGE_BETA * ROUGE_BETA;
    references
        .iter()
        .map(|r| {
            let l = lcs_len(&candidate.tokens, &r.tokens);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / candidate.len() as f64;
            let rec = l as f64 / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_MAX_N: usize = 4;

struct TfIdf<'a> {
    vecs: Vec<BTreeMap<Ngram<'a>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn tfidf<'a>(tokens: &'a [String], idf: &dyn Fn(Ngram<'_>) -> f64) -> TfIdf<'a> {
    let mut vecs = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for n in 1..=CIDER_MAX_N {
        let v: BTreeMap<Ngram<'a>, f64> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, tf)| (g, tf as f64 * idf(g)))
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim(h: &TfIdf<'_>, r: &TfIdf<'_>) -> f64 {
    let delta = h.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let mut val: f64 = h.vecs[n]
            .iter()
            .map(|(g, &hv)| r.vecs[n].get(g).map_or(0.0, |&rv| hv.min(rv) * rv))
            .sum();
        if h.norms[n] != 0.0 && r.norms[n] != 0.0 {
            val /= h.norms[n] * r.norms[n];
        }
        total += val * penalty;
    }
    total / CIDER_MAX_N as f64
}

/// Per-item CIDEr-D scores in `[0, 10]` plus their corpus mean.
pub fn cider_scores(
    candidates: &[TokenizedText],
    references: &[Vec<TokenizedText>],
) -> Result<(f64, Vec<f64>), EvalError> {
    if references.iter().all(|refs| refs.iter().all(TokenizedText::is_empty)) {
        return Err(EvalError::DegenerateCorpus);
    }
    let mut df: BTreeMap<Ngram<'_>, u32> = BTreeMap::new();
    for refs in references {
        let mut seen: BTreeSet<Ngram<'_>> = BTreeSet::new();
        for r in refs {
            for n in 1..=CIDER_MAX_N {
                seen.extend(ngram_counts(&r.tokens, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let big_n = references.len() as f64;
    let idf = |g: Ngram<'_>| ((big_n + 1.0) / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
    let scores: Vec<f64> = candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| {
            if refs.is_empty() {
                return 0.0;
            }
            let h = tfidf(&c.tokens, &idf);
            let sum: f64 = refs.iter().map(|r| cider_sim(&h, &tfidf(&r.tokens, &idf))).sum();
            10.0 * sum / refs.len() as f64
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    Ok((mean, scores))
}

/// Corpus-mean CIDEr-D in `[0, 10]`.
pub fn cider(candidates: &[TokenizedText], references: &[Vec<TokenizedText>]) -> Result<f64, EvalError> {
    cider_scores(candidates, references).map(|(mean, _)| mean)
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;
/// Search nodes explored before the chunk search settles for its best so far.
const METEOR_NODE_CAP: usize = 200_000;

pub fn stem_tokens(text: &TokenizedText) -> Vec<String> {
    let stemmer = Stemmer::create(Algorithm::English);
    text.tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect()
}

/// Alignment of two stemmed token lists: `(matches, chunks)`.
///
/// Matching tokens form complete bipartite groups per stem, so the maximum
/// match count is `Σ min(count_c, count_r)`. Among maximum alignments the
/// one with the most adjacent continuations (`(i, j)` after `(i-1, j-1)`)
/// has the fewest chunks, `chunks = matches - continuations`.
pub fn meteor_alignment(cand: &[String], refr: &[String]) -> (usize, usize) {
    let mut class_of: HashMap<&str, usize> = HashMap::new();
    for s in cand.iter().chain(refr) {
        let next = class_of.len();
        class_of.entry(s.as_str()).or_insert(next);
    }
    let classes = class_of.len();
    let cc: Vec<usize> = cand.iter().map(|s| class_of[s.as_str()]).collect();
    let rc: Vec<usize> = refr.iter().map(|s| class_of[s.as_str()]).collect();
    let mut cand_left = vec![0usize; classes];
    let mut ref_count = vec![0usize; classes];
    cc.iter().for_each(|&c| cand_left[c] += 1);
    rc.iter().for_each(|&c| ref_count[c] += 1);
    let need: Vec<usize> = (0..classes).map(|c| cand_left[c].min(ref_count[c])).collect();
    let matches: usize = need.iter().sum();
    if matches == 0 {
        return (0, 0);
    }
    let options: Vec<Vec<usize>> = cc
        .iter()
        .map(|&c| (0..refr.len()).filter(|&j| rc[j] == c).collect())
        .collect();

    struct Search<'a> {
        cc: &'a [usize],
        options: &'a [Vec<usize>],
        used: Vec<bool>,
        need: Vec<usize>,
        cand_left: Vec<usize>,
        best: usize,
        nodes: usize,
    }

    impl Search<'_> {
        fn run(&mut self, i: usize, prev: Option<usize>, cont: usize, remaining: usize) {
            self.nodes += 1;
            if i == self.cc.len() {
                self.best = self.best.max(cont);
                return;
            }
            if cont + remaining <= self.best || self.nodes > METEOR_NODE_CAP {
                return;
            }
            let c = self.cc[i];
            self.cand_left[c] -= 1;
            if self.need[c] > 0 {
                // try the continuing position first
                let opts = &self.options[i];
                let order = opts
                    .iter()
                    .filter(|&&j| Some(j) == prev.map(|p| p + 1))
                    .chain(opts.iter().filter(|&&j| Some(j) != prev.map(|p| p + 1)));
                for &j in order.collect::<Vec<_>>() {
                    if self.used[j] {
                        continue;
                    }
                    self.used[j] = true;
                    self.need[c] -= 1;
                    let gain = usize::from(prev.is_some_and(|p| p + 1 == j));
                    self.run(i + 1, Some(j), cont + gain, remaining - 1);
                    self.need[c] += 1;
                    self.used[j] = false;
                }
            }
            if self.cand_left[c] >= self.need[c] {
                self.run(i + 1, None, cont, remaining);
            }
            self.cand_left[c] += 1;
        }
    }

    let mut search = Search {
        cc: &cc,
        options: &options,
        used: vec![false; refr.len()],
        need,
        cand_left,
        best: greedy_continuations(&options, refr.len()),
        nodes: 0,
    };
    search.run(0, None, 0, matches);
    (matches, matches - search.best)
}

/// Continuations of the alignment that matches every token when it can,
/// preferring the position right after the previous match.
fn greedy_continuations(options: &[Vec<usize>], ref_len: usize) -> usize {
    let mut used = vec![false; ref_len];
    let mut prev: Option<usize> = None;
    let mut cont = 0;
    for opts in options {
        let want = prev.map(|p| p + 1);
        let pick = opts
            .iter()
            .copied()
            .find(|&j| Some(j) == want && !used[j])
            .or_else(|| opts.iter().copied().find(|&j| !used[j]));
        if let Some(j) = pick {
            used[j] = true;
            cont += usize::from(Some(j) == want);
        }
        prev = pick;
    }
    cont
}

/// Score of one candidate against one reference given the alignment.
pub fn meteor_from_alignment(matches: usize, chunks: usize, cand_len: usize, ref_len: usize) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / cand_len as f64;
    let r = matches as f64 / ref_len as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / matches as f64).powf(METEOR_BETA);
    f_mean * (1.0 - penalty)
}

pub fn meteor_simplified(candidate: &TokenizedText, references: &[TokenizedText]) -> f64 {
    let c = stem_tokens(candidate);
    references
        .iter()
        .map(|r| {
            let rs = stem_tokens(r);
            let (m, ch) = meteor_alignment(&c, &rs);
            meteor_from_alignment(m, ch, c.len(), rs.len())
        })
        .fold(0.0, f64::max)
}

/// Free-form metrics, each ×100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor: f64,
    pub meteor_variant: String,
    pub n_items: usize,
}

pub const METEOR_VARIANT: &str = "simplified: exact and Porter2-stem unigram matches, no synonyms";

impl MetricReport {
    pub fn compute(candidates: &[String], references: &[Vec<String>]) -> Result<Self, EvalError> {
        let cands: Vec<TokenizedText> = candidates.iter().map(|c| tokenize(c)).collect();
        let refs: Vec<Vec<TokenizedText>> = references
            .iter()
            .map(|rs| rs.iter().map(|r| tokenize(r)).collect())
            .collect();
        Self::compute_tokenized(&cands, &refs)
    }

    pub fn compute_tokenized(cands: &[TokenizedText], refs: &[Vec<TokenizedText>]) -> Result<Self, EvalError> {
        let n = cands.len();
        if n == 0 || refs.len() != n {
            return Err(EvalError::IdMismatch(format!(
                "{n} candidates against {} reference sets",
                refs.len()
            )));
        }
        let mean = |f: &dyn Fn(&TokenizedText, &[TokenizedText]) -> f64| {
            cands.iter().zip(refs).map(|(c, r)| f(c, r)).sum::<f64>() / n as f64
        };
        Ok(Self {
            bleu_1: 100.0 * corpus_bleu(cands, refs, 1),
            bleu_2: 100.0 * corpus_bleu(cands, refs, 2),
            bleu_3: 100.0 * corpus_bleu(cands, refs, 3),
            bleu_4: 100.0 * corpus_bleu(cands, refs, 4),
            rouge_l: 100.0 * mean(&rouge_l),
            cider: 100.0 * cider(cands, refs)?,
            meteor: 100.0 * mean(&meteor_simplified),
            meteor_variant: METEOR_VARIANT.to_string(),
            n_items: n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> TokenizedText {
        tokenize(s)
    }

    #[test]
    fn tokenization() {
        assert_eq!(t("The cat, on the MAT!").tokens, ["the", "cat", "on", "the", "mat"]);
        assert_eq!(t("it's 3-way").tokens, ["it", "s", "3", "way"]);
        assert!(t(" .,; ").is_empty());
    }

    #[test]
    fn bleu_examples() {
        let r = [t("the cat sat on the mat")];
        assert_eq!(bleu_n(&t("the cat sat on the mat"), &r, 1), 1.0);
        assert_eq!(bleu_n(&t("the cat sat on the mat"), &r, 4), 1.0);
        let third = bleu_n(&t("the the the"), &[t("the cat")], 1);
        assert!((third - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu_n(&t(""), &r, 1), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty_uses_closest_reference() {
        // c = 2, refs of length 3 and 5: r = 3, BP = exp(1 - 3/2)
        let refs = [t("a b c"), t("a b x y z")];
        let got = bleu_n(&t("a b"), &refs, 1);
        assert!((got - (-0.5f64).exp()).abs() < 1e-12);
        // equidistant lengths 2 and 4 around c = 3: shorter wins, BP = 1
        let refs = [t("a b"), t("a b c d")];
        assert_eq!(bleu_n(&t("a b c"), &refs, 1), 1.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&t("a b c"), &[t("a b c")]), 1.0);
        assert_eq!(rouge_l(&t("a b"), &[t("c d")]), 0.0);
        let (p, r, b2) = (0.75, 1.0, 1.44);
        let want = (1.0 + b2) * p * r / (r + b2 * p);
        assert!((rouge_l(&t("a b c d"), &[t("a c d")]) - want).abs() < 1e-12);
    }

    #[test]
    fn cider_examples() {
        let c = [t("a red mug on the table")];
        let r = vec![vec![t("a red mug on the table")]];
        assert!((cider(&c, &r).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(cider(&[t("zebra")], &r).unwrap(), 0.0);
        assert!(matches!(cider(&c, &[vec![t("")]]), Err(EvalError::DegenerateCorpus)));
    }

    #[test]
    fn meteor_examples() {
        let s = t("the cat sat down");
        let got = meteor_simplified(&s, std::slice::from_ref(&s));
        assert!((got - (1.0 - 0.5 / 64.0)).abs() < 1e-12);
        assert_eq!(meteor_simplified(&t("a b"), &[t("c d")]), 0.0);
        // reordering keeps F_mean but splits into more chunks
        let shuffled = meteor_simplified(&t("sat down the cat"), std::slice::from_ref(&s));
        assert!((shuffled - (1.0 - 0.5 * (2.0f64 / 4.0).powi(3))).abs() < 1e-12);
        assert!(shuffled < got);
    }

    #[test]
    fn meteor_matches_stems() {
        assert_eq!(
            meteor_alignment(&stem_tokens(&t("running dogs")), &stem_tokens(&t("dog runs"))),
            (2, 2)
        );
    }

    #[test]
    fn meteor_prefers_fewer_chunks_over_first_fit() {
        // greedy first fit pairs the first "a" with ref 0 and splits; the
        // best alignment uses "a b" against ref positions 2, 3
        let c: Vec<String> = ["a", "b"].map(String::from).into();
        let r: Vec<String> = ["a", "x", "a", "b"].map(String::from).into();
        assert_eq!(meteor_alignment(&c, &r), (2, 1));
    }

    /// BLEU-n is not monotone in n: a higher-order precision above the
    /// lower-order geometric mean raises the score.
    #[test]
    fn bleu_can_rise_with_n() {
        let c = t("b a b");
        let r = [t("a b a")];
        assert!((bleu_n(&c, &r, 1) - 2.0 / 3.0).abs() < 1e-12);
        assert!((bleu_n(&c, &r, 2) - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(bleu_n(&c, &r, 2) > bleu_n(&c, &r, 1));
    }

    proptest! {
        #[test]
        fn scores_are_bounded(
            c in proptest::collection::vec(0u8..5, 0..10),
            r in proptest::collection::vec(proptest::collection::vec(0u8..5, 1..10), 1..3),
        ) {
            let words = |v: &Vec<u8>| TokenizedText { tokens: v.iter().map(|w| format!("w{w}")).collect() };
            let cand = words(&c);
            let refs: Vec<TokenizedText> = r.iter().map(words).collect();
            for n in 1..=4 {
                let b = bleu_n(&cand, &refs, n);
                prop_assert!((0.0..=1.0).contains(&b));
            }
            let rl = rouge_l(&cand, &refs);
            prop_assert!((0.0..=1.0).contains(&rl));
            let m = meteor_simplified(&cand, &refs);
            prop_assert!((0.0..1.0).contains(&m));
            let ci = cider(std::slice::from_ref(&cand), std::slice::from_ref(&refs)).unwrap();
            prop_assert!((0.0..=10.0 + 1e-9).contains(&ci));
        }

        #[test]
        fn tokenize_round_trips(s in "\\PC{0,40}") {
            let tok = tokenize(&s);
            prop_assert_eq!(tokenize(&tok.detokenize()), tok);
        }
    }
}
