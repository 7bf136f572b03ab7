//! Transcription search: greedy decoding, LM-fused prefix beam search,
//! an exhaustive small-instance oracle, word/character error rates, and
//! grid search over the fusion weights.

use std::collections::HashMap;

use crate::alphabet::{Alphabet, BLANK};
use crate::ctc::collapse;
use crate::error::{Error, Result};
use crate::lm::{NGramModel, SENTENCE_END, SENTENCE_START};
use crate::network::PosteriorGrid;

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    /// Language model weight.
    pub alpha: f64,
    /// Per-word insertion bonus.
    pub beta: f64,
    pub beam_width: usize,
    /// Per-frame characters below this probability are not expanded.
    pub prune_threshold: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            alpha: 1.0,
            beta: 1.5,
            beam_width: 2000,
            prune_threshold: 1e-4,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width < 1 {
            return Err(Error::BadConfig("beam width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::BadConfig("prune threshold must be in [0, 1)".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::BadConfig("alpha must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-frame argmax (ties to the lowest index) followed by CTC collapse.
pub fn greedy_decode(posteriors: &PosteriorGrid) -> String {
    let mut path = Vec::with_capacity(posteriors.frame_count());
    for row in posteriors.probs.rows() {
        let mut best = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    collapse(&path).text()
}

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

const LN_10: f64 = std::f64::consts::LN_10;

/// One beam entry. `lang_score` carries the accumulated LM and word-bonus
/// terms for the completed words of the prefix; the acoustic mass is kept
/// split by whether the contributing paths end in blank.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub prefix: Vec<usize>,
    pub log_p_blank: f64,
    pub log_p_nonblank: f64,
    /// Completed words, headed by the sentence-start token.
    pub lm_state: Vec<String>,
    /// alpha * ln P_lm + beta * word_count over completed words.
    pub lang_score: f64,
}

impl Hypothesis {
    fn ranking_score(&self) -> f64 {
        log_add(self.log_p_blank, self.log_p_nonblank) + self.lang_score
    }
}

/// The word currently being typed: characters after the last space.
fn trailing_word(prefix: &[usize]) -> String {
    let start = prefix
        .iter()
        .rposition(|&c| Alphabet.char_at(c) == Some(' '))
        .map_or(0, |i| i + 1);
    Alphabet.decode(&prefix[start..])
}

/// LM and bonus terms that close out a hypothesis: score the unfinished
/// word if any, then the sentence-end transition. Adding this to the
/// running score reproduces the whole-string objective
/// `ln P(c|x) + alpha ln P_lm(c) + beta word_count(c)` exactly.
fn closure_terms(hyp: &Hypothesis, lm: &NGramModel, alpha: f64, beta: f64) -> f64 {
    let mut state: Vec<&str> = hyp.lm_state.iter().map(String::as_str).collect();
    let tail = trailing_word(&hyp.prefix);
    let mut total = 0.0;
    if !tail.is_empty() {
        total += alpha * LN_10 * lm.score_word(&state, &tail) + beta;
        state.push(&tail);
    }
    total + alpha * LN_10 * lm.score_word(&state, SENTENCE_END)
}

/// Prefix beam search over the posterior grid, maximizing
/// `Q(c) = ln P(c|x) + alpha ln P_lm(c) + beta word_count(c)`.
///
/// The language model fires when a space completes a word and once more
/// at the end of the utterance; ties break toward the lexicographically
/// smaller string.
pub fn beam_search(
    posteriors: &PosteriorGrid,
    lm: &NGramModel,
    config: &DecoderConfig,
) -> Result<(String, f64)> {
    config.validate()?;
    let space = Alphabet.index_of(' ').expect("space in alphabet");

    let mut beam: Vec<Hypothesis> = vec![Hypothesis {
        prefix: Vec::new(),
        log_p_blank: 0.0,
        log_p_nonblank: NEG_INF,
        lm_state: vec![SENTENCE_START.to_owned()],
        lang_score: 0.0,
    }];

    for row in posteriors.probs.rows() {
        let mut next: HashMap<Vec<usize>, Hypothesis> = HashMap::new();
        for hyp in &beam {
            let total = log_add(hyp.log_p_blank, hyp.log_p_nonblank);
            for (k, &p) in row.iter().enumerate() {
                if p <= 0.0 || p < config.prune_threshold {
                    continue;
                }
                let lp = p.ln();
                if k == BLANK {
                    let entry = next
                        .entry(hyp.prefix.clone())
                        .or_insert_with(|| stay_entry(hyp));
                    entry.log_p_blank = log_add(entry.log_p_blank, total + lp);
                    continue;
                }
                if hyp.prefix.last() == Some(&k) {
                    // repeated character: staying on the same prefix only
                    // extends paths that end in the character itself
                    let entry = next
                        .entry(hyp.prefix.clone())
                        .or_insert_with(|| stay_entry(hyp));
                    entry.log_p_nonblank =
                        log_add(entry.log_p_nonblank, hyp.log_p_nonblank + lp);
                    // growing the prefix needs a separating blank
                    let grown = extend(hyp, k, space, lm, config);
                    let entry = next.entry(grown.prefix.clone()).or_insert(grown);
                    entry.log_p_nonblank =
                        log_add(entry.log_p_nonblank, hyp.log_p_blank + lp);
                } else {
                    let grown = extend(hyp, k, space, lm, config);
                    let entry = next.entry(grown.prefix.clone()).or_insert(grown);
                    entry.log_p_nonblank = log_add(entry.log_p_nonblank, total + lp);
                }
            }
        }
        let mut pool: Vec<Hypothesis> = next.into_values().collect();
        pool.sort_by(|a, b| {
            b.ranking_score()
                .partial_cmp(&a.ranking_score())
                .unwrap()
                .then_with(|| a.prefix.cmp(&b.prefix))
        });
        pool.truncate(config.beam_width);
        beam = pool;
    }

    let mut best: Option<(String, f64)> = None;
    for hyp in &beam {
        let score =
            hyp.ranking_score() + closure_terms(hyp, lm, config.alpha, config.beta);
        let text = Alphabet.decode(&hyp.prefix);
        let better = match &best {
            None => true,
            Some((bt, bs)) => score > *bs || (score == *bs && text < *bt),
        };
        if better {
            best = Some((text, score));
        }
    }
    best.ok_or_else(|| Error::BadConfig("empty beam".into()))
}

fn stay_entry(hyp: &Hypothesis) -> Hypothesis {
    Hypothesis {
        prefix: hyp.prefix.clone(),
        log_p_blank: NEG_INF,
        log_p_nonblank: NEG_INF,
        lm_state: hyp.lm_state.clone(),
        lang_score: hyp.lang_score,
    }
}

/// New hypothesis for prefix + `k`, applying the LM and word bonus when
/// `k` is a space that completes a nonempty word.
fn extend(
    hyp: &Hypothesis,
    k: usize,
    space: usize,
    lm: &NGramModel,
    config: &DecoderConfig,
) -> Hypothesis {
    let mut prefix = hyp.prefix.clone();
    prefix.push(k);
    let mut lm_state = hyp.lm_state.clone();
    let mut lang_score = hyp.lang_score;
    if k == space {
        let word = trailing_word(&hyp.prefix);
        if !word.is_empty() {
            let ctx: Vec<&str> = lm_state.iter().map(String::as_str).collect();
            lang_score += config.alpha * LN_10 * lm.score_word(&ctx, &word) + config.beta;
            lm_state.push(word);
        }
    }
    Hypothesis {
        prefix,
        log_p_blank: NEG_INF,
        log_p_nonblank: NEG_INF,
        lm_state,
        lang_score,
    }
}

/// Whole-string objective for a finished transcription.
pub fn string_objective(
    text: &str,
    log_p_acoustic: f64,
    lm: &NGramModel,
    alpha: f64,
    beta: f64,
) -> f64 {
    let words: Vec<&str> = text.split_whitespace().collect();
    log_p_acoustic + alpha * LN_10 * lm.score_sequence(&words) + beta * words.len() as f64
}

const EXHAUSTIVE_MAX_FRAMES: usize = 4;
const EXHAUSTIVE_MAX_SYMBOLS: usize = 5;

/// Oracle decoder: enumerate every path, pool path probabilities by
/// collapsed string, and maximize the exact objective. Only feasible on
/// tiny grids; larger instances are rejected.
pub fn exhaustive_decode(
    posteriors: &PosteriorGrid,
    lm: &NGramModel,
    alpha: f64,
    beta: f64,
) -> Result<(String, f64)> {
    let t_len = posteriors.frame_count();
    let support: Vec<usize> = (0..posteriors.probs.ncols())
        .filter(|&k| (0..t_len).any(|t| posteriors.probs[[t, k]] > 0.0))
        .collect();
    if t_len > EXHAUSTIVE_MAX_FRAMES || support.len() > EXHAUSTIVE_MAX_SYMBOLS {
        return Err(Error::OracleLimit(format!(
            "{} frames x {} symbols",
            t_len,
            support.len()
        )));
    }

    let mut mass: HashMap<String, f64> = HashMap::new();
    let mut path = vec![0usize; t_len];
    collect_paths(posteriors, &support, &mut path, 0, 1.0, &mut mass);

    let mut best: Option<(String, f64)> = None;
    for (text, p) in mass {
        let score = string_objective(&text, p.ln(), lm, alpha, beta);
        let better = match &best {
            None => true,
            Some((bt, bs)) => score > *bs || (score == *bs && text < *bt),
        };
        if better {
            best = Some((text, score));
        }
    }
    best.ok_or_else(|| Error::NoData("empty posterior grid".into()))
}

fn collect_paths(
    posteriors: &PosteriorGrid,
    support: &[usize],
    path: &mut Vec<usize>,
    depth: usize,
    prob: f64,
    mass: &mut HashMap<String, f64>,
) {
    if depth == path.len() {
        *mass.entry(collapse(path).text()).or_insert(0.0) += prob;
        return;
    }
    for &k in support {
        let p = posteriors.probs[[depth, k]];
        if p > 0.0 {
            path[depth] = k;
            collect_paths(posteriors, support, path, depth + 1, prob * p, mass);
        }
    }
}

/// An error rate; division by an empty reference is undefined rather
/// than infinite or zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Value(f64),
    Undefined,
}

impl Rate {
    pub fn value(self) -> Option<f64> {
        match self {
            Rate::Value(v) => Some(v),
            Rate::Undefined => None,
        }
    }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
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

#[derive(Debug, Clone, Copy)]
pub struct EditCounts {
    pub edits: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn rate(&self) -> Rate {
        if self.reference_len == 0 {
            if self.edits == 0 {
                Rate::Value(0.0)
            } else {
                Rate::Undefined
            }
        } else {
            Rate::Value(self.edits as f64 / self.reference_len as f64)
        }
    }
}

pub fn word_edits(reference: &str, hypothesis: &str) -> EditCounts {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    EditCounts {
        edits: edit_distance(&r, &h),
        reference_len: r.len(),
    }
}

pub fn char_edits(reference: &str, hypothesis: &str) -> EditCounts {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    EditCounts {
        edits: edit_distance(&r, &h),
        reference_len: r.len(),
    }
}

pub fn wer(reference: &str, hypothesis: &str) -> Rate {
    word_edits(reference, hypothesis).rate()
}

pub fn cer(reference: &str, hypothesis: &str) -> Rate {
    char_edits(reference, hypothesis).rate()
}

/// Corpus-level WER: total word edits over total reference words.
pub fn corpus_wer<'a, I>(pairs: I) -> Rate
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut edits = 0;
    let mut len = 0;
    for (reference, hypothesis) in pairs {
        let c = word_edits(reference, hypothesis);
        edits += c.edits;
        len += c.reference_len;
    }
    EditCounts { edits, reference_len: len }.rate()
}

/// Grid search over fusion weights, minimizing corpus WER on the dev
/// set. Ties prefer the smaller alpha, then the smaller beta.
pub fn tune_alpha_beta(
    dev_set: &[(PosteriorGrid, String)],
    lm: &NGramModel,
    alphas: &[f64],
    betas: &[f64],
    base: &DecoderConfig,
) -> Result<(f64, f64)> {
    if dev_set.is_empty() {
        return Err(Error::NoData("empty dev set".into()));
    }
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::BadConfig("empty tuning grid".into()));
    }
    let mut candidates: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    candidates.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let mut best: Option<((f64, f64), f64)> = None;
    for (alpha, beta) in candidates {
        let config = DecoderConfig { alpha, beta, ..base.clone() };
        let mut hyps = Vec::with_capacity(dev_set.len());
        for (grid, _) in dev_set {
            let (text, _) = beam_search(grid, lm, &config)?;
            hyps.push(text);
        }
        let rate = corpus_wer(
            dev_set
                .iter()
                .map(|(_, r)| r.as_str())
                .zip(hyps.iter().map(String::as_str)),
        );
        let Rate::Value(v) = rate else {
            return Err(Error::NoData("dev set has no reference words".into()));
        };
        if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some(((alpha, beta), v));
        }
    }
    Ok(best.unwrap().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::ALPHABET_SIZE;
    use crate::lm::{train_ngram, LmTrainConfig, Smoothing};
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: usize = 0;
    const B: usize = 1;
    const SPACE: usize = 26;

    fn one_hot_grid(path: &[usize]) -> PosteriorGrid {
        let mut probs = Array2::zeros((path.len(), ALPHABET_SIZE));
        for (t, &k) in path.iter().enumerate() {
            probs[[t, k]] = 1.0;
        }
        PosteriorGrid::from_probs(probs)
    }

    fn random_grid(rng: &mut ChaCha8Rng, t: usize, support: &[usize]) -> PosteriorGrid {
        let mut probs = Array2::zeros((t, ALPHABET_SIZE));
        for row in 0..t {
            let raw: Vec<f64> = support.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            for (i, &k) in support.iter().enumerate() {
                probs[[row, k]] = raw[i] / total;
            }
        }
        PosteriorGrid::from_probs(probs)
    }

    fn toy_lm(order: usize) -> NGramModel {
        let corpus = [
            "a b", "a b a", "b a", "ab a", "b ba", "a a b", "ba ab", "b b a",
        ];
        let config = LmTrainConfig {
            order,
            vocab_cap: 100,
            min_char_coverage: 0.95,
            smoothing: Smoothing::InterpolatedKneserNey,
        };
        train_ngram(corpus, &config).unwrap()
    }

    #[test]
    fn greedy_collapses_one_hot_frames() {
        let h = Alphabet.index_of('h').unwrap();
        let i = Alphabet.index_of('i').unwrap();
        assert_eq!(greedy_decode(&one_hot_grid(&[h, BLANK, i])), "hi");
        assert_eq!(greedy_decode(&one_hot_grid(&[BLANK, BLANK])), "");
    }

    #[test]
    fn greedy_ties_break_to_lowest_index() {
        let mut probs = Array2::zeros((1, ALPHABET_SIZE));
        probs[[0, A]] = 0.5;
        probs[[0, B]] = 0.5;
        let grid = PosteriorGrid::from_probs(probs);
        assert_eq!(greedy_decode(&grid), "a");
    }

    #[test]
    fn beam_matches_exhaustive_on_random_grids() {
        let lm = toy_lm(2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut config = DecoderConfig {
            alpha: 0.0,
            beta: 0.0,
            beam_width: 10_000,
            prune_threshold: 0.0,
        };
        for trial in 0..40 {
            let t = 1 + trial % 4;
            let grid = random_grid(&mut rng, t, &[A, B, SPACE, BLANK]);
            for (alpha, beta) in [(0.0, 0.0), (1.0, 0.0), (0.0, 0.5), (1.0, 0.5)] {
                config.alpha = alpha;
                config.beta = beta;
                let (bs_text, bs_score) = beam_search(&grid, &lm, &config).unwrap();
                let (ex_text, ex_score) =
                    exhaustive_decode(&grid, &lm, alpha, beta).unwrap();
                assert_eq!(bs_text, ex_text, "trial {trial} a={alpha} b={beta}");
                assert!(
                    (bs_score - ex_score).abs() < 1e-9,
                    "trial {trial}: {bs_score} vs {ex_score}"
                );
            }
        }
    }

    #[test]
    fn single_frame_degenerate_case() {
        let lm = toy_lm(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = DecoderConfig {
            alpha: 0.0,
            beta: 0.0,
            beam_width: 10_000,
            prune_threshold: 0.0,
        };
        for _ in 0..10 {
            let grid = random_grid(&mut rng, 1, &[A, B, BLANK]);
            let (text, _) = beam_search(&grid, &lm, &config).unwrap();
            let (oracle, _) = exhaustive_decode(&grid, &lm, 0.0, 0.0).unwrap();
            assert_eq!(text, oracle);
        }
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let lm = toy_lm(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wide = random_grid(&mut rng, 2, &[0, 1, 2, 3, 4, 5]);
        assert!(matches!(
            exhaustive_decode(&wide, &lm, 0.0, 0.0),
            Err(Error::OracleLimit(_))
        ));
        let long = random_grid(&mut rng, 5, &[A, BLANK]);
        assert!(matches!(
            exhaustive_decode(&long, &lm, 0.0, 0.0),
            Err(Error::OracleLimit(_))
        ));
    }

    fn boston_lm() -> NGramModel {
        let mut corpus: Vec<String> = Vec::new();
        for _ in 0..20 {
            corpus.push("what is the weather like in boston".to_owned());
            corpus.push("boston weather today".to_owned());
        }
        corpus.push("the weather is fine".to_owned());
        let config = LmTrainConfig {
            order: 2,
            vocab_cap: 100,
            min_char_coverage: 0.95,
            smoothing: Smoothing::InterpolatedKneserNey,
        };
        train_ngram(corpus.iter().map(String::as_str), &config).unwrap()
    }

    fn bostin_grid() -> PosteriorGrid {
        let word = "bostin";
        let mut probs = Array2::zeros((word.len(), ALPHABET_SIZE));
        for (t, c) in word.chars().enumerate() {
            probs[[t, Alphabet.index_of(c).unwrap()]] = 1.0;
        }
        // ambiguous fifth letter, acoustically leaning toward "i"
        let i = Alphabet.index_of('i').unwrap();
        let o = Alphabet.index_of('o').unwrap();
        probs[[4, i]] = 0.6;
        probs[[4, o]] = 0.4;
        PosteriorGrid::from_probs(probs)
    }

    #[test]
    fn language_model_repairs_bostin() {
        let lm = boston_lm();
        let grid = bostin_grid();
        assert_eq!(greedy_decode(&grid), "bostin");
        let config = DecoderConfig {
            alpha: 1.0,
            beta: 0.0,
            beam_width: 200,
            prune_threshold: 0.0,
        };
        let (text, _) = beam_search(&grid, &lm, &config).unwrap();
        assert_eq!(text, "boston");
    }

    #[test]
    fn huge_alpha_follows_the_language_model() {
        let corpus = ["b b b b", "b b", "a"];
        let config = LmTrainConfig {
            order: 1,
            vocab_cap: 100,
            min_char_coverage: 0.95,
            smoothing: Smoothing::InterpolatedKneserNey,
        };
        let lm = train_ngram(corpus, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = random_grid(&mut rng, 2, &[A, B, BLANK]);

        // independent enumeration of the realizable strings
        let mut realizable = std::collections::BTreeSet::new();
        for k0 in [A, B, BLANK] {
            for k1 in [A, B, BLANK] {
                realizable.insert(crate::ctc::collapse(&[k0, k1]).text());
            }
        }
        let best_by_lm = realizable
            .iter()
            .max_by(|x, y| {
                let sx = lm.score_sequence(&x.split_whitespace().collect::<Vec<_>>());
                let sy = lm.score_sequence(&y.split_whitespace().collect::<Vec<_>>());
                sx.partial_cmp(&sy).unwrap()
            })
            .unwrap();

        let (text, _) = exhaustive_decode(&grid, &lm, 1e6, 0.0).unwrap();
        assert_eq!(&text, best_by_lm);
    }

    #[test]
    fn beam_score_is_monotone_in_width() {
        let lm = toy_lm(2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..10 {
            let grid = random_grid(&mut rng, 4, &[A, B, SPACE, BLANK]);
            let mut last = f64::NEG_INFINITY;
            for width in [1, 2, 4, 16, 64, 1024] {
                let config = DecoderConfig {
                    alpha: 1.0,
                    beta: 0.3,
                    beam_width: width,
                    prune_threshold: 0.0,
                };
                let (_, score) = beam_search(&grid, &lm, &config).unwrap();
                assert!(
                    score >= last - 1e-12,
                    "trial {trial} width {width}: {score} < {last}"
                );
                last = score;
            }
        }
    }

    #[test]
    fn per_frame_scaling_preserves_the_argmax() {
        let lm = toy_lm(2);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let config = DecoderConfig {
            alpha: 1.0,
            beta: 0.2,
            beam_width: 10_000,
            prune_threshold: 0.0,
        };
        for _ in 0..10 {
            let grid = random_grid(&mut rng, 3, &[A, B, SPACE, BLANK]);
            let mut scaled = grid.probs.clone();
            for (t, mut row) in scaled.rows_mut().into_iter().enumerate() {
                let c = 0.5 + 0.4 * t as f64;
                row.mapv_inplace(|p| p * c);
            }
            let scaled = PosteriorGrid::from_probs(scaled);
            let (a, _) = beam_search(&grid, &lm, &config).unwrap();
            let (b, _) = beam_search(&scaled, &lm, &config).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(wer("the cat sat", "the cat sat"), Rate::Value(0.0));
        assert_eq!(wer("the cat sat", "the bat sat"), Rate::Value(1.0 / 3.0));
        assert_eq!(wer("a b", ""), Rate::Value(1.0));
        assert_eq!(wer("", ""), Rate::Value(0.0));
        assert_eq!(wer("", "x"), Rate::Undefined);
        assert_eq!(cer("abc", "abd"), Rate::Value(1.0 / 3.0));
        assert_eq!(cer("", "x"), Rate::Undefined);
    }

    #[test]
    fn wer_is_zero_on_identity_and_symmetric() {
        let samples = ["", "a", "a b c", "hello there world"];
        for s in samples {
            assert_eq!(wer(s, s), Rate::Value(0.0));
            for t in samples {
                let d1 = word_edits(s, t).edits;
                let d2 = word_edits(t, s).edits;
                assert_eq!(d1, d2);
            }
        }
    }

    #[test]
    fn corpus_wer_pools_edits() {
        let pairs = [("a b", "a b"), ("a b c", "a x c")];
        assert_eq!(corpus_wer(pairs), Rate::Value(1.0 / 5.0));
    }

    #[test]
    fn tuning_prefers_the_corrective_alpha() {
        let lm = boston_lm();
        let dev = vec![(bostin_grid(), "boston".to_owned())];
        let base = DecoderConfig {
            alpha: 0.0,
            beta: 0.0,
            beam_width: 200,
            prune_threshold: 0.0,
        };
        let (alpha, beta) =
            tune_alpha_beta(&dev, &lm, &[0.0, 1.0], &[0.0], &base).unwrap();
        assert_eq!((alpha, beta), (1.0, 0.0));
    }

    #[test]
    fn tuning_ties_resolve_to_smallest_candidates() {
        let lm = toy_lm(2);
        let dev = vec![(one_hot_grid(&[A, BLANK, B]), "ab".to_owned())];
        let base = DecoderConfig {
            alpha: 0.0,
            beta: 0.0,
            beam_width: 100,
            prune_threshold: 0.0,
        };
        let (alpha, beta) =
            tune_alpha_beta(&dev, &lm, &[0.0, 1.0], &[0.0, 0.5], &base).unwrap();
        assert_eq!((alpha, beta), (0.0, 0.0));
    }

    #[test]
    fn tuning_single_candidate_returns_it() {
        let lm = toy_lm(2);
        let dev = vec![(one_hot_grid(&[A]), "a".to_owned())];
        let base = DecoderConfig::default();
        let got = tune_alpha_beta(&dev, &lm, &[0.7], &[0.1], &base).unwrap();
        assert_eq!(got, (0.7, 0.1));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let lm = toy_lm(2);
        let grid = one_hot_grid(&[A]);
        let bad_width = DecoderConfig { beam_width: 0, ..DecoderConfig::default() };
        assert!(matches!(
            beam_search(&grid, &lm, &bad_width),
            Err(Error::BadConfig(_))
        ));
        let bad_prune = DecoderConfig {
            prune_threshold: 1.0,
            ..DecoderConfig::default()
        };
        assert!(beam_search(&grid, &lm, &bad_prune).is_err());
    }

    #[test]
    fn default_beam_width_is_in_the_conventional_range() {
        let config = DecoderConfig::default();
        assert!((1000..=8000).contains(&config.beam_width));
    }
}
