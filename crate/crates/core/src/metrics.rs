//! Caption-quality metrics: BLEU-1..4, ROUGE-1/ROUGE-L, METEOR (exact +
//! stem matching stages) and BERTScore aggregation over externally
//! supplied token embeddings.
//!
//! Sentence-level scores are averaged arithmetically over image pairs;
//! there is no corpus-level count pooling. One reference per image.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::EmbeddingSet;
use crate::model::CaptionCorpus;
use crate::stem::porter_stem;
use crate::text::{collapse_repetitions, tokenize, TokenSequence, DEFAULT_MAX_BLOCK};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("zero-norm vector at index {index} on the {side} side")]
    ZeroNormVector { side: &'static str, index: usize },
    #[error("dimension mismatch: expected {expected}, vector {index} on the {side} side has {actual}")]
    DimensionMismatch {
        side: &'static str,
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("no generated caption for gold image {0:?}")]
    MissingCaption(String),
    #[error("no {side} embeddings for image {id:?}")]
    MissingEmbedding { side: &'static str, id: String },
    #[error("gold caption corpus is empty, nothing to score")]
    EmptyGold,
}

/// Modified n-gram precision BLEU with brevity penalty.
///
/// For each order k up to `n`, clipped matches over candidate k-grams
/// give `p_k`; a zero match count with a non-zero total is smoothed to
/// `1/(2*t_k)`. The score is `BP * exp(mean log p_k)`, zero for an
/// empty candidate or when the candidate is shorter than `n` tokens.
pub fn bleu(candidate: &TokenSequence, reference: &TokenSequence, n: usize) -> f64 {
    assert!((1..=4).contains(&n), "bleu order must be in 1..=4");
    let cand = candidate.tokens();
    let refs = reference.tokens();
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let total = if cand.len() >= k { cand.len() - k + 1 } else { 0 };
        if total == 0 {
            return 0.0;
        }
        let matches = clipped_matches(cand, refs, k);
        let p = if matches == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let bp = if cand.len() > refs.len() {
        1.0
    } else {
        (1.0 - refs.len() as f64 / cand.len() as f64).exp()
    };
    bp * (log_sum / n as f64).exp()
}

fn ngram_counts<'a>(tokens: &'a [String], k: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= k {
        for gram in tokens.windows(k) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches(cand: &[String], refs: &[String], k: usize) -> usize {
    let ref_counts = ngram_counts(refs, k);
    ngram_counts(cand, k)
        .into_iter()
        .map(|(gram, count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    Rouge1,
    RougeL,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// ROUGE-1 (clipped unigram overlap) or ROUGE-L (longest common
/// subsequence), both with balanced F1.
pub fn rouge(candidate: &TokenSequence, reference: &TokenSequence, variant: RougeVariant) -> RougeScore {
    let cand = candidate.tokens();
    let refs = reference.tokens();
    let overlap = match variant {
        RougeVariant::Rouge1 => clipped_matches(cand, refs, 1) as f64,
        RougeVariant::RougeL => lcs_length(cand, refs) as f64,
    };
    let precision = if cand.is_empty() { 0.0 } else { overlap / cand.len() as f64 };
    let recall = if refs.is_empty() { 0.0 } else { overlap / refs.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    RougeScore { precision, recall, f1 }
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for token in a {
        for (j, other) in b.iter().enumerate() {
            current[j + 1] = if token == other {
                prev[j] + 1
            } else {
                prev[j + 1].max(current[j])
            };
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// METEOR over two matching stages (exact tokens, then Porter-stem
/// equality on the leftovers), each a one-to-one alignment of maximal
/// cardinality. Among those alignments the one with the fewest chunks
/// is chosen — exactly, by memoized search, when total matches fit the
/// search domain, otherwise by a left-to-right contiguity-preferring
/// greedy pass. Score is `F_mean * (1 - 0.5*(chunks/matches)^3)` with
/// `F_mean = 10PR/(R+9P)`, or zero without matches.
pub fn meteor(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    let problem = align::MatchProblem::build(candidate.tokens(), reference.tokens());
    let matches = problem.total_matches();
    if matches == 0 {
        return 0.0;
    }
    let chunks = problem.min_chunks();
    let p = matches as f64 / candidate.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    f_mean * (1.0 - penalty)
}

mod align {
    //! Unigram alignment with per-class match quotas.
    //!
    //! Stage quotas are forced by maximal cardinality: each word class
    //! contributes `min(cand count, ref count)` exact pairs, and each
    //! stem class `min` of the remaining occurrences as stem pairs
    //! (stem pairs always link different words). The only freedom is
    //! which occurrences pair with which, which is what the chunk
    //! minimization searches over.

    use std::collections::HashMap;

    use indexmap::IndexMap;

    use crate::stem::porter_stem;

    /// Exact search is used when matches and reference positions fit
    /// these limits; the node budget bounds adversarial inputs (on
    /// exhaustion the best alignment found so far is kept, which is
    /// never worse than greedy).
    const MAX_EXACT_MATCHES: usize = 64;
    const MAX_EXACT_REF_POSITIONS: usize = 128;
    const NODE_BUDGET: usize = 500_000;
    const MEMO_CAP: usize = 100_000;

    pub struct MatchProblem {
        cand_word: Vec<u32>,
        cand_stem: Vec<u32>,
        ref_word: Vec<u32>,
        ref_stem: Vec<u32>,
        exact_quota: Vec<u32>,
        stem_quota: Vec<u32>,
        word_stem: Vec<u32>,
        total: usize,
    }

    impl MatchProblem {
        pub fn build(cand: &[String], refs: &[String]) -> MatchProblem {
            let mut words: IndexMap<&str, u32> = IndexMap::new();
            let mut intern = |token: &'static str| -> u32 { unreachable!("{token}") };
            let _ = &mut intern;
            let mut id_of = |map: &mut IndexMap<&str, u32>, token| -> u32 {
                let next = map.len() as u32;
                *map.entry(token).or_insert(next)
            };
            let cand_word: Vec<u32> = cand.iter().map(|t| id_of(&mut words, t)).collect();
            let ref_word: Vec<u32> = refs.iter().map(|t| id_of(&mut words, t)).collect();
            let n_words = words.len();

            let mut stems: IndexMap<String, u32> = IndexMap::new();
            let mut word_stem = vec![0u32; n_words];
            for (token, &w) in &words {
                let stem = porter_stem(token);
                let next = stems.len() as u32;
                word_stem[w as usize] = *stems.entry(stem).or_insert(next);
            }
            let n_stems = stems.len();

            let mut cand_count = vec![0u32; n_words];
            let mut ref_count = vec![0u32; n_words];
            for &w in &cand_word {
                cand_count[w as usize] += 1;
            }
            for &w in &ref_word {
                ref_count[w as usize] += 1;
            }
            let exact_quota: Vec<u32> = (0..n_words)
                .map(|w| cand_count[w].min(ref_count[w]))
                .collect();

            let mut cand_left = vec![0u32; n_stems];
            let mut ref_left = vec![0u32; n_stems];
            for w in 0..n_words {
                let s = word_stem[w] as usize;
                cand_left[s] += cand_count[w] - exact_quota[w];
                ref_left[s] += ref_count[w] - exact_quota[w];
            }
            let stem_quota: Vec<u32> = (0..n_stems)
                .map(|s| cand_left[s].min(ref_left[s]))
                .collect();

            let total = exact_quota.iter().sum::<u32>() as usize
                + stem_quota.iter().sum::<u32>() as usize;

            let cand_stem: Vec<u32> = cand_word.iter().map(|&w| word_stem[w as usize]).collect();
            let ref_stem: Vec<u32> = ref_word.iter().map(|&w| word_stem[w as usize]).collect();

            MatchProblem {
                cand_word,
                cand_stem,
                ref_word,
                ref_stem,
                exact_quota,
                stem_quota,
                word_stem,
                total,
            }
        }

        pub fn total_matches(&self) -> usize {
            self.total
        }

        pub fn min_chunks(&self) -> usize {
            let greedy = chunk_count(&self.greedy_pairs());
            if self.total <= MAX_EXACT_MATCHES && self.ref_word.len() <= MAX_EXACT_REF_POSITIONS {
                let mut search = Search::new(self, greedy as u32);
                search.run();
                search.best as usize
            } else {
                greedy
            }
        }

        /// Sequential stage passes, candidate positions left to right,
        /// preferring a ref position that extends the current chunk and
        /// otherwise the smallest compatible one.
        fn greedy_pairs(&self) -> Vec<(usize, usize)> {
            let n_cand = self.cand_word.len();
            let n_ref = self.ref_word.len();
            let mut exact_quota = self.exact_quota.clone();
            let mut stem_quota = self.stem_quota.clone();
            let mut ref_used = vec![false; n_ref];
            let mut pair_at: Vec<Option<usize>> = vec![None; n_cand];

            for i in 0..n_cand {
                let w = self.cand_word[i];
                if exact_quota[w as usize] == 0 {
                    continue;
                }
                let valid = |j: usize| !ref_used[j] && self.ref_word[j] == w;
                let continuation = (i > 0)
                    .then(|| pair_at[i - 1])
                    .flatten()
                    .map(|r| r + 1)
                    .filter(|&j| j < n_ref && valid(j));
                if let Some(j) = continuation.or_else(|| (0..n_ref).find(|&j| valid(j))) {
                    ref_used[j] = true;
                    exact_quota[w as usize] -= 1;
                    pair_at[i] = Some(j);
                }
            }
            for i in 0..n_cand {
                if pair_at[i].is_some() {
                    continue;
                }
                let (w, s) = (self.cand_word[i], self.cand_stem[i]);
                if stem_quota[s as usize] == 0 {
                    continue;
                }
                let valid =
                    |j: usize| !ref_used[j] && self.ref_stem[j] == s && self.ref_word[j] != w;
                let continuation = (i > 0)
                    .then(|| pair_at[i - 1])
                    .flatten()
                    .map(|r| r + 1)
                    .filter(|&j| j < n_ref && valid(j));
                if let Some(j) = continuation.or_else(|| (0..n_ref).find(|&j| valid(j))) {
                    ref_used[j] = true;
                    stem_quota[s as usize] -= 1;
                    pair_at[i] = Some(j);
                }
            }
            pair_at
                .iter()
                .enumerate()
                .filter_map(|(i, j)| j.map(|j| (i, j)))
                .collect()
        }
    }

    /// Chunks of an alignment sorted by candidate position: a pair
    /// starts a new chunk unless it is `(prev cand + 1, prev ref + 1)`.
    pub fn chunk_count(pairs: &[(usize, usize)]) -> usize {
        let mut chunks = 0;
        let mut prev: Option<(usize, usize)> = None;
        for &(i, j) in pairs {
            if prev != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
                chunks += 1;
            }
            prev = Some((i, j));
        }
        chunks
    }

    /// Exhaustive assignment search with dominance memoization and a
    /// greedy upper bound.
    struct Search<'p> {
        p: &'p MatchProblem,
        ref_used: u128,
        exact_quota: Vec<u32>,
        stem_quota: Vec<u32>,
        exact_quota_by_stem: Vec<u32>,
        cand_word_remaining: Vec<u32>,
        cand_stem_remaining: Vec<u32>,
        ref_word_avail: Vec<u32>,
        ref_stem_avail: Vec<u32>,
        remaining_total: u32,
        best: u32,
        nodes: usize,
        memo: HashMap<(u32, i32, u128, Vec<u32>), u32>,
    }

    impl<'p> Search<'p> {
        fn new(p: &'p MatchProblem, upper_bound: u32) -> Self {
            let n_words = p.exact_quota.len();
            let n_stems = p.stem_quota.len();
            let mut cand_word_remaining = vec![0u32; n_words];
            let mut cand_stem_remaining = vec![0u32; n_stems];
            for &w in &p.cand_word {
                cand_word_remaining[w as usize] += 1;
            }
            for &s in &p.cand_stem {
                cand_stem_remaining[s as usize] += 1;
            }
            let mut ref_word_avail = vec![0u32; n_words];
            let mut ref_stem_avail = vec![0u32; n_stems];
            for &w in &p.ref_word {
                ref_word_avail[w as usize] += 1;
            }
            for &s in &p.ref_stem {
                ref_stem_avail[s as usize] += 1;
            }
            let mut exact_quota_by_stem = vec![0u32; n_stems];
            for (w, &quota) in p.exact_quota.iter().enumerate() {
                exact_quota_by_stem[p.word_stem[w] as usize] += quota;
            }
            let remaining_total =
                p.exact_quota.iter().sum::<u32>() + p.stem_quota.iter().sum::<u32>();
            Search {
                p,
                ref_used: 0,
                exact_quota: p.exact_quota.clone(),
                stem_quota: p.stem_quota.clone(),
                exact_quota_by_stem,
                cand_word_remaining,
                cand_stem_remaining,
                ref_word_avail,
                ref_stem_avail,
                remaining_total,
                best: upper_bound,
                nodes: 0,
                memo: HashMap::new(),
            }
        }

        fn run(&mut self) {
            self.dfs(0, None, 0);
        }

        fn feasible_word(&self, w: usize) -> bool {
            self.exact_quota[w] <= self.cand_word_remaining[w]
                && self.exact_quota[w] <= self.ref_word_avail[w]
        }

        fn feasible_stem(&self, s: usize) -> bool {
            let need = self.stem_quota[s] + self.exact_quota_by_stem[s];
            need <= self.cand_stem_remaining[s] && need <= self.ref_stem_avail[s]
        }

        fn dfs(&mut self, i: usize, adj: Option<usize>, chunks: u32) {
            if self.remaining_total == 0 {
                self.best = self.best.min(chunks);
                return;
            }
            if chunks >= self.best || self.nodes > NODE_BUDGET {
                return;
            }
            let n_cand = self.p.cand_word.len();
            if i >= n_cand || (n_cand - i) < self.remaining_total as usize {
                return;
            }
            self.nodes += 1;

            let adj_key = adj.map_or(-1, |r| r as i32);
            let mut quota_key = self.exact_quota.clone();
            quota_key.extend_from_slice(&self.stem_quota);
            let key = (i as u32, adj_key, self.ref_used, quota_key);
            match self.memo.get(&key) {
                Some(&prev) if chunks >= prev => return,
                _ => {
                    if self.memo.len() < MEMO_CAP {
                        self.memo.insert(key, chunks);
                    }
                }
            }

            let w = self.p.cand_word[i] as usize;
            let s = self.p.cand_stem[i] as usize;
            // position i is being decided; future capacity excludes it
            self.cand_word_remaining[w] -= 1;
            self.cand_stem_remaining[s] -= 1;

            // exact matches first, chunk-continuing ref first
            if self.exact_quota[w] > 0 {
                for j in self.ref_candidates(adj, |this, j| {
                    this.p.ref_word[j] as usize == w && !this.used(j)
                }) {
                    self.take_exact(i, j, w, adj, chunks);
                }
            }
            if self.stem_quota[s] > 0 {
                for j in self.ref_candidates(adj, |this, j| {
                    this.p.ref_stem[j] as usize == s
                        && this.p.ref_word[j] as usize != w
                        && !this.used(j)
                }) {
                    self.take_stem(i, j, w, s, adj, chunks);
                }
            }
            // skip position i
            if self.feasible_word(w) && self.feasible_stem(s) {
                self.dfs(i + 1, None, chunks);
            }

            self.cand_word_remaining[w] += 1;
            self.cand_stem_remaining[s] += 1;
        }

        fn used(&self, j: usize) -> bool {
            self.ref_used & (1u128 << j) != 0
        }

        fn ref_candidates(
            &self,
            adj: Option<usize>,
            valid: impl Fn(&Self, usize) -> bool,
        ) -> Vec<usize> {
            let n_ref = self.p.ref_word.len();
            let continuation = adj.map(|r| r + 1).filter(|&j| j < n_ref && valid(self, j));
            let mut out = Vec::new();
            if let Some(j) = continuation {
                out.push(j);
            }
            for j in 0..n_ref {
                if Some(j) != continuation && valid(self, j) {
                    out.push(j);
                }
            }
            out
        }

        fn take_exact(&mut self, i: usize, j: usize, w: usize, adj: Option<usize>, chunks: u32) {
            let sj = self.p.ref_stem[j] as usize;
            self.ref_used |= 1 << j;
            self.exact_quota[w] -= 1;
            self.exact_quota_by_stem[sj] -= 1;
            self.ref_word_avail[w] -= 1;
            self.ref_stem_avail[sj] -= 1;
            self.remaining_total -= 1;

            if self.feasible_word(w) && self.feasible_stem(sj) {
                let next_chunks = chunks + u32::from(adj != j.checked_sub(1));
                self.dfs(i + 1, Some(j), next_chunks);
            }

            self.remaining_total += 1;
            self.ref_stem_avail[sj] += 1;
            self.ref_word_avail[w] += 1;
            self.exact_quota_by_stem[sj] += 1;
            self.exact_quota[w] += 1;
            self.ref_used &= !(1 << j);
        }

        fn take_stem(
            &mut self,
            i: usize,
            j: usize,
            w: usize,
            s: usize,
            adj: Option<usize>,
            chunks: u32,
        ) {
            let wj = self.p.ref_word[j] as usize;
            self.ref_used |= 1 << j;
            self.stem_quota[s] -= 1;
            self.ref_word_avail[wj] -= 1;
            self.ref_stem_avail[s] -= 1;
            self.remaining_total -= 1;

            if self.feasible_word(w) && self.feasible_word(wj) && self.feasible_stem(s) {
                let next_chunks = chunks + u32::from(adj != j.checked_sub(1));
                self.dfs(i + 1, Some(j), next_chunks);
            }

            self.remaining_total += 1;
            self.ref_stem_avail[s] += 1;
            self.ref_word_avail[wj] += 1;
            self.stem_quota[s] += 1;
            self.ref_used &= !(1 << j);
        }
    }
}

/// Greedy-max-cosine BERTScore aggregation over pre-computed,
/// externally supplied embeddings. Vectors are L2-normalized first;
/// per-token similarities are floored at zero so scores stay in
/// `[0,1]`. No idf weighting, no baseline rescaling.
pub fn bertscore_aggregate(
    cand_vectors: &[Vec<f64>],
    ref_vectors: &[Vec<f64>],
) -> Result<(f64, f64, f64), MetricError> {
    if cand_vectors.is_empty() || ref_vectors.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let cand = normalize("candidate", cand_vectors)?;
    let dim = cand[0].len();
    let refs = normalize_with_dim("reference", ref_vectors, dim)?;

    let precision = mean_max_similarity(&cand, &refs);
    let recall = mean_max_similarity(&refs, &cand);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

fn normalize(side: &'static str, vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MetricError> {
    let dim = vectors[0].len();
    normalize_with_dim(side, vectors, dim)
}

fn normalize_with_dim(
    side: &'static str,
    vectors: &[Vec<f64>],
    dim: usize,
) -> Result<Vec<Vec<f64>>, MetricError> {
    vectors
        .iter()
        .enumerate()
        .map(|(index, v)| {
            if v.len() != dim {
                return Err(MetricError::DimensionMismatch {
                    side,
                    index,
                    expected: dim,
                    actual: v.len(),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(MetricError::ZeroNormVector { side, index });
            }
            Ok(v.iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// Mean over `from` of each vector's best cosine against `against`,
/// floored at zero. All vectors are unit length here, so cosine is the
/// dot product.
fn mean_max_similarity(from: &[Vec<f64>], against: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for v in from {
        let mut best = 0.0f64;
        for u in against {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            best = best.max(dot);
        }
        sum += best;
    }
    sum / from.len() as f64
}

/// BERTScore triple for one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// All per-pair caption metrics; `bert` is present only when
/// embeddings were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionPairScore {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge1_f: f64,
    pub rouge_l_f: f64,
    pub meteor: f64,
    pub bert: Option<BertScore>,
}

/// Corpus caption scores: per-pair values in gold image order plus
/// their arithmetic means.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEvalResult {
    pub per_pair: Vec<CaptionPairScore>,
    pub corpus: CaptionPairScore,
    pub n_pairs: usize,
}

/// Candidate- and reference-side token embeddings for BERTScore.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingPair<'a> {
    pub candidate: &'a EmbeddingSet,
    pub reference: &'a EmbeddingSet,
}

/// Scores generated captions against gold, pair by pair in gold input
/// order. With `postprocess` the repetition collapse is applied to the
/// generated caption before tokenization. Corpus values are arithmetic
/// means accumulated in gold order.
pub fn evaluate_captions(
    gold: &CaptionCorpus,
    generated: &CaptionCorpus,
    embeddings: Option<EmbeddingPair<'_>>,
    postprocess: bool,
) -> Result<CaptionEvalResult, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let pairs: Vec<(&str, &str, &str)> = gold
        .iter()
        .map(|(image_id, gold_caption)| {
            generated
                .get(image_id)
                .map(|generated_caption| (image_id, gold_caption, generated_caption))
                .ok_or_else(|| MetricError::MissingCaption(image_id.to_string()))
        })
        .collect::<Result<_, _>>()?;
    if let Some(pair) = &embeddings {
        for (image_id, _, _) in &pairs {
            if !pair.candidate.contains_key(*image_id) {
                return Err(MetricError::MissingEmbedding {
                    side: "candidate",
                    id: image_id.to_string(),
                });
            }
            if !pair.reference.contains_key(*image_id) {
                return Err(MetricError::MissingEmbedding {
                    side: "reference",
                    id: image_id.to_string(),
                });
            }
        }
    }

    let per_pair: Vec<CaptionPairScore> = pairs
        .par_iter()
        .map(|(image_id, gold_caption, generated_caption)| {
            let processed;
            let candidate_text = if postprocess {
                processed = collapse_repetitions(generated_caption, DEFAULT_MAX_BLOCK);
                processed.as_str()
            } else {
                generated_caption
            };
            let cand = tokenize(candidate_text);
            let refs = tokenize(gold_caption);
            let bert = match &embeddings {
                Some(pair) => {
                    let (p, r, f) = bertscore_aggregate(
                        &pair.candidate[*image_id].vectors,
                        &pair.reference[*image_id].vectors,
                    )?;
                    Some(BertScore {
                        precision: p,
                        recall: r,
                        f1: f,
                    })
                }
                None => None,
            };
            Ok(CaptionPairScore {
                bleu1: bleu(&cand, &refs, 1),
                bleu2: bleu(&cand, &refs, 2),
                bleu3: bleu(&cand, &refs, 3),
                bleu4: bleu(&cand, &refs, 4),
                rouge1_f: rouge(&cand, &refs, RougeVariant::Rouge1).f1,
                rouge_l_f: rouge(&cand, &refs, RougeVariant::RougeL).f1,
                meteor: meteor(&cand, &refs),
                bert,
            })
        })
        .collect::<Result<_, MetricError>>()?;

    let n = per_pair.len();
    let mut sums = [0.0f64; 10];
    for s in &per_pair {
        sums[0] += s.bleu1;
        sums[1] += s.bleu2;
        sums[2] += s.bleu3;
        sums[3] += s.bleu4;
        sums[4] += s.rouge1_f;
        sums[5] += s.rouge_l_f;
        sums[6] += s.meteor;
        if let Some(b) = &s.bert {
            sums[7] += b.precision;
            sums[8] += b.recall;
            sums[9] += b.f1;
        }
    }
    let mean = |x: f64| x / n as f64;
    let corpus = CaptionPairScore {
        bleu1: mean(sums[0]),
        bleu2: mean(sums[1]),
        bleu3: mean(sums[2]),
        bleu4: mean(sums[3]),
        rouge1_f: mean(sums[4]),
        rouge_l_f: mean(sums[5]),
        meteor: mean(sums[6]),
        bert: embeddings.map(|_| BertScore {
            precision: mean(sums[7]),
            recall: mean(sums[8]),
            f1: mean(sums[9]),
        }),
    };
    Ok(CaptionEvalResult {
        per_pair,
        corpus,
        n_pairs: n,
    })
}
