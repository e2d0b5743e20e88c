//! BLEU-4, METEOR and ROUGE-L for single-reference question generation.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROUGE_BETA: f64 = 1.2;
pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;
const PUNCTUATION: &[char] = &['?', ',', '.', '!', '\'', ';', ':', '"'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no hypotheses to score")]
    EmptyHypothesisSet,
    #[error("reference is empty")]
    EmptyReference,
    #[error("csv export: {0}")]
    Csv(String),
}

/// Lowercases, splits `?,.!';:"` off as their own tokens, then splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.to_lowercase().chars() {
        if PUNCTUATION.contains(&c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 on `(hypothesis, reference)` token lists, in `[0, 100]`.
///
/// Clipped n-gram matches and hypothesis n-gram totals are pooled over the
/// corpus before taking precisions; no smoothing. The brevity penalty is
/// `exp(1 - r/c)` when the pooled hypothesis length `c` is at most the
/// pooled reference length `r`.
pub fn bleu4<H, R>(pairs: &[(H, R)]) -> Result<f64, MetricError>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if pairs.is_empty() {
        return Err(MetricError::EmptyHypothesisSet);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        let (hyp, reference) = (hyp.as_ref(), reference.as_ref());
        c += hyp.len();
        r += reference.len();
        for n in 1..=4 {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(hyp, n) {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if c == 0 || (0..4).any(|i| matched[i] == 0) {
        return Ok(0.0);
    }
    let log_mean = (0..4)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(100.0 * bp * log_mean.exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with recall weighted by `beta = 1.2`, in `[0, 100]`.
pub fn rouge_l(hypothesis: &[String], reference: &[String]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let lcs = lcs_len(hypothesis, reference);
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / hypothesis.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok(100.0 * (1.0 + b2) * p * r / (r + b2 * p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Exact,
    Stem,
}

struct AlignSearch<'a> {
    hyp: &'a [String],
    reference: &'a [String],
    hyp_stems: Vec<String>,
    ref_stems: Vec<String>,
    need_exact: usize,
    need_stem: usize,
    used: Vec<bool>,
    current: Vec<(usize, usize)>,
    best: Option<(usize, Vec<(usize, usize)>)>,
    budget: usize,
}

fn count_chunks(matches: &[(usize, usize)]) -> usize {
    if matches.is_empty() {
        return 0;
    }
    1 + matches
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

fn multiset_overlap<'a>(a: impl Iterator<Item = &'a String>, b: impl Iterator<Item = &'a String>) -> (usize, HashMap<&'a String, isize>) {
    let mut counts: HashMap<&String, (usize, usize)> = HashMap::new();
    a.for_each(|t| counts.entry(t).or_default().0 += 1);
    b.for_each(|t| counts.entry(t).or_default().1 += 1);
    let overlap = counts.values().map(|(x, y)| (*x).min(*y)).sum();
    let surplus = counts.into_iter().map(|(k, (x, y))| (k, x as isize - y as isize)).collect();
    (overlap, surplus)
}

impl AlignSearch<'_> {
    fn run(&mut self, i: usize, exact: usize, stem: usize) {
        if self.budget == 0 {
            return;
        }
        self.budget -= 1;
        let chunks_so_far = count_chunks(&self.current);
        if let Some((best, _)) = &self.best {
            if chunks_so_far >= *best && !self.current.is_empty() {
                return;
            }
        }
        let remaining = self.hyp.len() - i;
        if exact + stem + remaining < self.need_exact + self.need_stem {
            return;
        }
        if i == self.hyp.len() {
            if exact == self.need_exact && stem == self.need_stem {
                let chunks = count_chunks(&self.current);
                if self.best.as_ref().is_none_or(|(b, _)| chunks < *b) {
                    self.best = Some((chunks, self.current.clone()));
                }
            }
            return;
        }
        // try continuing the current chunk first so good solutions come early
        let prefer = self.current.last().map(|&(_, j)| j + 1);
        let mut order: Vec<usize> = (0..self.reference.len()).collect();
        if let Some(p) = prefer.filter(|p| *p < self.reference.len()) {
            order.retain(|&j| j != p);
            order.insert(0, p);
        }
        for j in order {
            if self.used[j] {
                continue;
            }
            let stage = if self.hyp[i] == self.reference[j] {
                Stage::Exact
            } else if self.hyp_stems[i] == self.ref_stems[j] {
                Stage::Stem
            } else {
                continue;
            };
            let (e, s) = match stage {
                Stage::Exact if exact < self.need_exact => (exact + 1, stem),
                Stage::Stem if stem < self.need_stem => (exact, stem + 1),
                _ => continue,
            };
            self.used[j] = true;
            self.current.push((i, j));
            self.run(i + 1, e, s);
            self.current.pop();
            self.used[j] = false;
        }
        self.run(i + 1, exact, stem);
    }
}

/// Alignment statistics for METEOR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub exact: usize,
    pub stem: usize,
    pub chunks: usize,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.exact + self.stem
    }
}

/// Exact-then-stem alignment with the most matches at each stage and,
/// among those, the fewest chunks.
pub fn align(hypothesis: &[String], reference: &[String]) -> Alignment {
    let (need_exact, surplus) = multiset_overlap(hypothesis.iter(), reference.iter());
    // what is left after the exact stage, by stem
    let mut left_h: Vec<String> = Vec::new();
    let mut left_r: Vec<String> = Vec::new();
    for (tok, diff) in surplus {
        let stem = porter_stemmer::stem(tok);
        if diff > 0 {
            left_h.extend(std::iter::repeat_n(stem, diff as usize));
        } else if diff < 0 {
            left_r.extend(std::iter::repeat_n(stem, (-diff) as usize));
        }
    }
    let (need_stem, _) = multiset_overlap(left_h.iter(), left_r.iter());

    let mut search = AlignSearch {
        hyp: hypothesis,
        reference,
        hyp_stems: hypothesis.iter().map(|t| porter_stemmer::stem(t)).collect(),
        ref_stems: reference.iter().map(|t| porter_stemmer::stem(t)).collect(),
        need_exact,
        need_stem,
        used: vec![false; reference.len()],
        current: Vec::new(),
        best: None,
        budget: 200_000,
    };
    search.run(0, 0, 0);
    let chunks = search.best.map(|(c, _)| c).unwrap_or(need_exact + need_stem);
    Alignment { exact: need_exact, stem: need_stem, chunks }
}

/// METEOR with exact and Porter-stem matching, in `[0, 1]`.
pub fn meteor(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(hypothesis, reference);
    let m = a.matches();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hypothesis.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (a.chunks as f64 / m as f64).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub id: String,
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
    /// Sentence-level BLEU-4 (unsmoothed), `[0, 100]`.
    pub bleu4: f64,
    /// `[0, 1]`.
    pub meteor: f64,
    /// `[0, 100]`.
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub tokenizer: String,
    pub rouge_beta: f64,
    pub meteor_alpha: f64,
    pub meteor_beta: f64,
    pub meteor_gamma: f64,
    pub meteor_stages: Vec<String>,
    pub bleu: String,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            tokenizer: "lowercase; split ?,.!';:\" from words; whitespace".into(),
            rouge_beta: ROUGE_BETA,
            meteor_alpha: METEOR_ALPHA,
            meteor_beta: METEOR_BETA,
            meteor_gamma: METEOR_GAMMA,
            meteor_stages: vec!["exact".into(), "porter_stem".into()],
            bleu: "corpus, pooled counts, no smoothing".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    /// Mean METEOR ×100.
    pub meteor: f64,
    pub rouge_l: f64,
    pub count: usize,
    pub rows: Vec<ScoredPair>,
    pub config: MetricConfig,
}

/// Scores `(id, hypothesis, reference)` triples.
pub fn evaluate<I, H, R>(pairs: &[(I, H, R)]) -> Result<EvalReport, MetricError>
where
    I: AsRef<str>,
    H: AsRef<str>,
    R: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(MetricError::EmptyHypothesisSet);
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (id, hyp, reference) in pairs {
        let hypothesis = tokenize(hyp.as_ref());
        let reference = tokenize(reference.as_ref());
        let rouge = rouge_l(&hypothesis, &reference)?;
        rows.push(ScoredPair {
            id: id.as_ref().to_string(),
            bleu4: bleu4(&[(&hypothesis, &reference)])?,
            meteor: meteor(&hypothesis, &reference),
            rouge_l: rouge,
            hypothesis,
            reference,
        });
    }
    let token_pairs: Vec<(&Vec<String>, &Vec<String>)> = rows.iter().map(|r| (&r.hypothesis, &r.reference)).collect();
    let n = rows.len() as f64;
    Ok(EvalReport {
        bleu4: bleu4(&token_pairs)?,
        meteor: 100.0 * rows.iter().map(|r| r.meteor).sum::<f64>() / n,
        rouge_l: rows.iter().map(|r| r.rouge_l).sum::<f64>() / n,
        count: rows.len(),
        rows,
        config: MetricConfig::default(),
    })
}

impl EvalReport {
    /// Per-example rows as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| MetricError::Csv(e.to_string());
        w.write_record(["id", "hypothesis", "reference", "bleu4", "meteor", "rouge_l"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.hypothesis.join(" "),
                r.reference.join(" "),
                format!("{:.4}", r.bleu4),
                format!("{:.4}", r.meteor),
                format!("{:.4}", r.rouge_l),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| MetricError::Csv(e.to_string()))
    }
}
