//! Backoff word n-gram language model: vocabulary capping with UNKNOWN
//! remapping, interpolated Kneser-Ney or absolute-discount Katz-style
//! smoothing, backoff scoring, and ARPA save/load.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use crate::alphabet::{normalize_text, Alphabet};
use crate::error::{Error, Result};

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    InterpolatedKneserNey,
    Katz,
}

#[derive(Debug, Clone)]
pub struct LmTrainConfig {
    pub order: usize,
    pub vocab_cap: usize,
    /// Minimum fraction of a phrase's characters that must be alphabet
    /// characters for the phrase to enter training.
    pub min_char_coverage: f64,
    pub smoothing: Smoothing,
}

impl LmTrainConfig {
    pub fn new(order: usize) -> Self {
        LmTrainConfig {
            order,
            vocab_cap: 500_000,
            min_char_coverage: 0.95,
            smoothing: Smoothing::InterpolatedKneserNey,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::BadConfig("n-gram order must be at least 1".into()));
        }
        if self.vocab_cap < 1 {
            return Err(Error::BadConfig("vocab cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Retained word set; everything else remaps to the UNKNOWN token.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: BTreeSet<String>,
}

impl Vocabulary {
    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Map a raw token to its modelled form.
    pub fn map<'a>(&'a self, word: &'a str) -> &'a str {
        if word == SENTENCE_START || word == SENTENCE_END || self.words.contains(word) {
            word
        } else {
            UNKNOWN
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

/// True if at least `min_coverage` of the phrase's characters are
/// alphabet characters (after lowercasing). Empty phrases fail.
pub fn phrase_passes_filter(phrase: &str, min_coverage: f64) -> bool {
    let lowered = phrase.to_lowercase();
    let total = lowered.chars().count();
    if total == 0 {
        return false;
    }
    let clean = lowered
        .chars()
        .filter(|&c| Alphabet.index_of(c).is_some())
        .count();
    clean as f64 / total as f64 >= min_coverage
}

fn tokenize(phrase: &str) -> Vec<String> {
    normalize_text(phrase)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Count words over the filtered corpus and keep the `cap` most frequent,
/// breaking count ties in favour of the lexicographically smaller word.
pub fn build_vocab<'a, I>(corpus: I, cap: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    build_vocab_with_coverage(corpus, cap, 0.95)
}

fn build_vocab_with_coverage<'a, I>(corpus: I, cap: usize, min_coverage: f64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut any = false;
    for phrase in corpus {
        if !phrase_passes_filter(phrase, min_coverage) {
            continue;
        }
        let tokens = tokenize(phrase);
        if tokens.is_empty() {
            continue;
        }
        any = true;
        for tok in tokens {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::NoData("empty corpus after filtering".into()));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cap);
    Ok(Vocabulary {
        words: ranked.into_iter().map(|(w, _)| w).collect(),
    })
}

type Gram = Vec<String>;

#[derive(Debug, Clone, Copy)]
struct Entry {
    log10_prob: f64,
    log10_bow: Option<f64>,
}

/// Trained backoff model. Stored probabilities are log10; per-order
/// tables hold an optional log10 backoff weight per entry, ARPA style.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    /// tables[n-1] maps n-grams to entries.
    tables: Vec<BTreeMap<Gram, Entry>>,
    vocab: Vocabulary,
}

/// Log10 probability assigned to the non-event sentence-start token.
const START_LOG10: f64 = -99.0;

/// Single absolute discount for one order, estimated from the
/// count-of-counts: n1 / (n1 + 2 n2), with a 0.5 fallback when the
/// statistic degenerates on tiny corpora.
fn estimate_discount(counts: &BTreeMap<Gram, u64>) -> f64 {
    let mut n1 = 0u64;
    let mut n2 = 0u64;
    for &c in counts.values() {
        if c == 1 {
            n1 += 1;
        } else if c == 2 {
            n2 += 1;
        }
    }
    if n1 == 0 || n2 == 0 {
        0.5
    } else {
        n1 as f64 / (n1 as f64 + 2.0 * n2 as f64)
    }
}

pub fn train_ngram<'a, I>(corpus: I, config: &LmTrainConfig) -> Result<NGramModel>
where
    I: IntoIterator<Item = &'a str>,
    I::IntoIter: Clone,
{
    config.validate()?;
    let corpus = corpus.into_iter();
    let vocab = build_vocab_with_coverage(corpus.clone(), config.vocab_cap, config.min_char_coverage)?;

    // raw window counts per order, over <s> ... </s> padded sentences
    let order = config.order;
    let mut raw: Vec<BTreeMap<Gram, u64>> = vec![BTreeMap::new(); order];
    for phrase in corpus {
        if !phrase_passes_filter(phrase, config.min_char_coverage) {
            continue;
        }
        let words = tokenize(phrase);
        if words.is_empty() {
            continue;
        }
        let mut sent = vec![SENTENCE_START.to_owned()];
        sent.extend(words.into_iter().map(|w| vocab.map(&w).to_owned()));
        sent.push(SENTENCE_END.to_owned());
        for n in 1..=order {
            for window in sent.windows(n) {
                *raw[n - 1].entry(window.to_vec()).or_insert(0) += 1;
            }
        }
    }

    // Effective counts per order. Kneser-Ney replaces lower-order counts
    // with continuation counts (distinct predecessor types), keeping raw
    // counts for grams anchored at the sentence start.
    let mut eff: Vec<BTreeMap<Gram, u64>> = raw.clone();
    if config.smoothing == Smoothing::InterpolatedKneserNey {
        for n in (1..order).rev() {
            let mut predecessors: BTreeMap<Gram, BTreeSet<String>> = BTreeMap::new();
            for gram in raw[n].keys() {
                predecessors
                    .entry(gram[1..].to_vec())
                    .or_default()
                    .insert(gram[0].clone());
            }
            for (gram, count) in eff[n - 1].iter_mut() {
                if gram[0] != SENTENCE_START {
                    *count = predecessors.get(gram).map_or(0, |s| s.len() as u64);
                }
            }
        }
    }

    let discounts: Vec<f64> = eff
        .iter()
        .map(|counts| {
            let non_start: BTreeMap<Gram, u64> = counts
                .iter()
                .filter(|(g, _)| g[0] != SENTENCE_START)
                .map(|(g, c)| (g.clone(), *c))
                .collect();
            estimate_discount(if non_start.is_empty() { counts } else { &non_start })
        })
        .collect();

    // predictable vocabulary: every token the model can emit
    let mut predictable: BTreeSet<String> = vocab.words.iter().cloned().collect();
    predictable.insert(SENTENCE_END.to_owned());
    predictable.insert(UNKNOWN.to_owned());
    let v_pred = predictable.len() as f64;

    let mut tables: Vec<BTreeMap<Gram, Entry>> = vec![BTreeMap::new(); order];

    // Unigram distribution: discounted counts interpolated with the
    // uniform distribution, so every predictable token has mass and the
    // distribution sums to one exactly.
    {
        let d1 = discounts[0];
        let mut total = 0.0;
        let mut seen_types = 0u64;
        for (gram, &c) in &eff[0] {
            if gram[0] != SENTENCE_START {
                total += c as f64;
                seen_types += 1;
            }
        }
        if total == 0.0 {
            return Err(Error::NoData("no countable words in corpus".into()));
        }
        let uniform_mass = d1 * seen_types as f64 / total / v_pred;
        for word in &predictable {
            let key = vec![word.clone()];
            let c = *eff[0].get(&key).unwrap_or(&0) as f64;
            let p = (c - d1).max(0.0) / total + uniform_mass;
            tables[0].insert(
                key,
                Entry {
                    log10_prob: p.log10(),
                    log10_bow: None,
                },
            );
        }
        tables[0].insert(
            vec![SENTENCE_START.to_owned()],
            Entry {
                log10_prob: START_LOG10,
                log10_bow: None,
            },
        );
    }

    // Higher orders, bottom up: group grams by context, discount, and
    // either interpolate with the lower-order score (Kneser-Ney) or keep
    // pure backoff probabilities (Katz mode).
    for n in 2..=order {
        let d = discounts[n - 1];
        let mut by_context: BTreeMap<Gram, Vec<(String, u64)>> = BTreeMap::new();
        for (gram, &c) in &eff[n - 1] {
            by_context
                .entry(gram[..n - 1].to_vec())
                .or_default()
                .push((gram[n - 1].clone(), c));
        }
        for (ctx, followers) in by_context {
            let total: f64 = followers.iter().map(|(_, c)| *c as f64).sum();
            let types = followers.len() as f64;
            let lambda = d * types / total;
            let lower_ctx: Vec<&str> = ctx[1..].iter().map(String::as_str).collect();

            let mut entries: Vec<(String, f64)> = Vec::with_capacity(followers.len());
            let mut seen_lower_mass = 0.0;
            for (word, c) in &followers {
                let p_low = 10f64.powf(backoff_score(&tables, &lower_ctx, word));
                seen_lower_mass += p_low;
                let p = match config.smoothing {
                    Smoothing::InterpolatedKneserNey => {
                        (*c as f64 - d).max(0.0) / total + lambda * p_low
                    }
                    Smoothing::Katz => (*c as f64 - d).max(0.0) / total,
                };
                entries.push((word.clone(), p));
            }

            let bow = match config.smoothing {
                Smoothing::InterpolatedKneserNey => lambda,
                Smoothing::Katz => {
                    let leftover = 1.0 - seen_lower_mass;
                    if leftover <= 1e-12 {
                        // every predictable word was observed after this
                        // context: fold the discounted mass back into the
                        // seen words and leave the backoff weight neutral
                        for (word, p) in entries.iter_mut() {
                            let p_low = 10f64.powf(backoff_score(&tables, &lower_ctx, word));
                            *p += lambda * p_low / seen_lower_mass;
                        }
                        1.0
                    } else {
                        lambda / leftover
                    }
                }
            };

            let ctx_entry = tables[n - 2]
                .get_mut(&ctx)
                .expect("context present at its own order");
            ctx_entry.log10_bow = Some(bow.log10());

            for (word, p) in entries {
                let mut gram = ctx.clone();
                gram.push(word);
                tables[n - 1].insert(
                    gram,
                    Entry {
                        log10_prob: p.log10(),
                        log10_bow: None,
                    },
                );
            }
        }
    }

    Ok(NGramModel {
        order,
        tables,
        vocab,
    })
}

/// Standard ARPA backoff query over built tables; tokens must already be
/// vocabulary-mapped. Returns log10 probability.
fn backoff_score(tables: &[BTreeMap<Gram, Entry>], context: &[&str], word: &str) -> f64 {
    let mut ctx = context;
    let mut penalty = 0.0;
    loop {
        let mut gram: Gram = ctx.iter().map(|s| (*s).to_owned()).collect();
        gram.push(word.to_owned());
        if let Some(entry) = tables[gram.len() - 1].get(&gram) {
            return penalty + entry.log10_prob;
        }
        if ctx.is_empty() {
            // unigram table covers the whole predictable vocabulary;
            // reaching this means the caller asked about a foreign token
            return penalty + START_LOG10;
        }
        let ctx_gram: Gram = ctx.iter().map(|s| (*s).to_owned()).collect();
        penalty += tables[ctx_gram.len() - 1]
            .get(&ctx_gram)
            .and_then(|e| e.log10_bow)
            .unwrap_or(0.0);
        ctx = &ctx[1..];
    }
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Every token the model assigns emission probability to.
    pub fn predictable_tokens(&self) -> impl Iterator<Item = &str> {
        self.tables[0]
            .keys()
            .map(|g| g[0].as_str())
            .filter(|w| *w != SENTENCE_START)
    }

    /// log10 P(word | context), with out-of-vocabulary tokens remapped
    /// to UNKNOWN and the context truncated to the model order.
    pub fn score_word(&self, context: &[&str], word: &str) -> f64 {
        let mapped_word = self.vocab.map(word);
        let keep = self.order.saturating_sub(1);
        let tail = &context[context.len().saturating_sub(keep)..];
        let mapped_ctx: Vec<&str> = tail.iter().map(|w| self.vocab.map(w)).collect();
        backoff_score(&self.tables, &mapped_ctx, mapped_word)
    }

    /// log10 probability of the whole word sequence, padded with
    /// sentence-start and terminated with sentence-end.
    pub fn score_sequence(&self, words: &[&str]) -> f64 {
        let mut history: Vec<&str> = vec![SENTENCE_START];
        let mut total = 0.0;
        for &w in words {
            total += self.score_word(&history, w);
            history.push(w);
        }
        total += self.score_word(&history, SENTENCE_END);
        total
    }

    pub fn save_arpa<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "\\data\\")?;
        for n in 1..=self.order {
            writeln!(sink, "ngram {}={}", n, self.tables[n - 1].len())?;
        }
        for n in 1..=self.order {
            writeln!(sink)?;
            writeln!(sink, "\\{n}-grams:")?;
            for (gram, entry) in &self.tables[n - 1] {
                let words = gram.join(" ");
                match entry.log10_bow {
                    Some(bow) => {
                        writeln!(sink, "{:.7}\t{}\t{:.7}", entry.log10_prob, words, bow)?
                    }
                    None => writeln!(sink, "{:.7}\t{}", entry.log10_prob, words)?,
                }
            }
        }
        writeln!(sink)?;
        writeln!(sink, "\\end\\")?;
        Ok(())
    }

    pub fn load_arpa<R: BufRead>(source: R) -> Result<NGramModel> {
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let lines: Vec<String> = source.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().enumerate().peekable();

        // header
        let mut declared: Vec<usize> = Vec::new();
        for (idx, line) in it.by_ref() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "\\data\\" {
                break;
            }
            return Err(parse_err(idx + 1, format!("expected \\data\\, found {line:?}")));
        }
        while let Some((idx, line)) = it.peek().copied() {
            let line = line.trim();
            if line.is_empty() {
                it.next();
                continue;
            }
            let Some(rest) = line.strip_prefix("ngram ") else {
                break;
            };
            let (n, count) = rest
                .split_once('=')
                .ok_or_else(|| parse_err(idx + 1, format!("bad ngram declaration {line:?}")))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("bad order in {line:?}")))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("bad count in {line:?}")))?;
            if n != declared.len() + 1 {
                return Err(parse_err(idx + 1, format!("out-of-order declaration {line:?}")));
            }
            declared.push(count);
            it.next();
        }
        if declared.is_empty() {
            return Err(parse_err(1, "no ngram declarations".into()));
        }
        let order = declared.len();
        let mut tables: Vec<BTreeMap<Gram, Entry>> = vec![BTreeMap::new(); order];

        let mut current: Option<usize> = None;
        for (idx, raw_line) in it {
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "\\end\\" {
                current = None;
                continue;
            }
            if let Some(rest) = line.strip_prefix('\\') {
                let n: usize = rest
                    .strip_suffix("-grams:")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(idx + 1, format!("unrecognized section {line:?}")))?;
                if n < 1 || n > order {
                    return Err(parse_err(idx + 1, format!("undeclared section {line:?}")));
                }
                current = Some(n);
                continue;
            }
            let n = current
                .ok_or_else(|| parse_err(idx + 1, "entry outside any section".into()))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(parse_err(idx + 1, format!("malformed entry {line:?}")));
            }
            let log10_prob: f64 = fields[0]
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("bad probability {:?}", fields[0])))?;
            let gram: Gram = fields[1].split(' ').map(str::to_owned).collect();
            if gram.len() != n {
                return Err(parse_err(
                    idx + 1,
                    format!("{}-gram section holds {}-word entry {:?}", n, gram.len(), fields[1]),
                ));
            }
            let log10_bow = match fields.get(2) {
                Some(f) => Some(
                    f.parse()
                        .map_err(|_| parse_err(idx + 1, format!("bad backoff weight {f:?}")))?,
                ),
                None => None,
            };
            tables[n - 1].insert(gram, Entry { log10_prob, log10_bow });
        }

        for (n, &count) in declared.iter().enumerate() {
            if tables[n].len() != count {
                return Err(parse_err(
                    1,
                    format!(
                        "\\{}-grams: section declares {} entries but holds {}",
                        n + 1,
                        count,
                        tables[n].len()
                    ),
                ));
            }
        }

        let words: BTreeSet<String> = tables[0]
            .keys()
            .map(|g| g[0].clone())
            .filter(|w| w != SENTENCE_START && w != SENTENCE_END && w != UNKNOWN)
            .collect();
        Ok(NGramModel {
            order,
            tables,
            vocab: Vocabulary { words },
        })
    }
}
