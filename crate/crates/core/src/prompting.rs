//! Prompt assembly, demonstration ordering and answer extraction.
//!
//! Labels (`Input:`, `SubgraphN:`, `SubquestionN:`, `Question:`) are fixed;
//! the extractor depends on them.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Demonstration;
use crate::embed::{cosine, embed_text, EmbedError, EmbeddingProvider};
use crate::logic_form::{serialize, LogicalForm};

pub const INSTRUCTION_PREFIX: &str = "Let's engage in a step-by-step exercise of generating questions from logical forms. \
We have provided several examples, each comprising an 'Input' logical form and a corresponding 'Subquestion' that we aim to generate. \
By deconstructing the input logical form into basic components, we can generate questions iteratively until we get the final question. \
For each 'Subgraph', we can construct a relevant 'Subquestion' phrase to assist in generating the subsequent question in the sequence.";

/// Stops the model from inventing a further demonstration.
pub const STOP_SEQUENCE: &str = "\n\nInput:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Cot,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Fewest decomposition steps first; ties by form length.
    #[default]
    JumpsAsc,
    LengthAsc,
    Random,
    SimilarityDesc,
    /// Keep selection order.
    None,
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cot" => Ok(Self::Cot),
            "standard" => Ok(Self::Standard),
            other => Err(format!("unknown mode `{other}` (expected cot or standard)")),
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cot => "cot",
            Self::Standard => "standard",
        })
    }
}

impl FromStr for Ordering {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jumps_asc" => Ok(Self::JumpsAsc),
            "length_asc" => Ok(Self::LengthAsc),
            "random" => Ok(Self::Random),
            "similarity_desc" => Ok(Self::SimilarityDesc),
            "none" => Ok(Self::None),
            other => Err(format!(
                "unknown ordering `{other}` (expected jumps_asc, length_asc, random, similarity_desc or none)"
            )),
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::JumpsAsc => "jumps_asc",
            Self::LengthAsc => "length_asc",
            Self::Random => "random",
            Self::SimilarityDesc => "similarity_desc",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub ordering: Ordering,
    pub k: usize,
    pub instruction_prefix: String,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            mode: PromptMode::Cot,
            ordering: Ordering::JumpsAsc,
            k: crate::select::DEFAULT_K,
            instruction_prefix: INSTRUCTION_PREFIX.to_string(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub prompt_text: String,
    pub query_id: String,
    pub demo_ids: Vec<String>,
    pub config_snapshot: PromptConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("no demonstrations to order")]
    NoDemonstrations,
    #[error("similarity_desc ordering needs an embedding provider")]
    MissingEmbeddingProvider,
    #[error("demonstration `{id}` step {step} has no subquestion")]
    MissingRationale { id: String, step: usize },
    #[error("demonstration `{id}` has no question for standard prompting")]
    MissingQuestion { id: String },
    #[error("completion contains no Subquestion line")]
    NoQuestionFound,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Permutation of `0..demos.len()` in presentation order. Sorts are stable.
pub fn order_indices(
    demos: &[Demonstration],
    query: &LogicalForm,
    config: &PromptConfig,
    embedder: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<usize>, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::NoDemonstrations);
    }
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let len = |i: usize| serialize(&demos[i].logical_form).len();
    match config.ordering {
        Ordering::None => {}
        Ordering::JumpsAsc => order.sort_by_key(|&i| (demos[i].complexity, len(i))),
        Ordering::LengthAsc => order.sort_by_key(|&i| len(i)),
        Ordering::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed)),
        Ordering::SimilarityDesc => {
            let provider = embedder.ok_or(PromptError::MissingEmbeddingProvider)?;
            let q = embed_text(provider, &serialize(query))?;
            let scores = demos
                .iter()
                .map(|d| cosine(&q, &embed_text(provider, &serialize(&d.logical_form))?))
                .collect::<Result<Vec<f64>, EmbedError>>()?;
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        }
    }
    Ok(order)
}

pub fn order_demos(
    demos: &[Demonstration],
    query: &LogicalForm,
    config: &PromptConfig,
    embedder: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<Demonstration>, PromptError> {
    Ok(order_indices(demos, query, config, embedder)?
        .into_iter()
        .map(|i| demos[i].clone())
        .collect())
}

fn render_cot_demo(demo: &Demonstration, out: &mut String) -> Result<(), PromptError> {
    out.push_str("Input: ");
    out.push_str(&serialize(&demo.logical_form));
    for step in &demo.steps {
        out.push_str(&format!("\nSubgraph{}: {}", step.index, step.subgraph_text));
    }
    for step in &demo.steps {
        let q = step
            .subquestion
            .as_deref()
            .map(str::trim)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| PromptError::MissingRationale { id: demo.id.clone(), step: step.index })?;
        out.push_str(&format!("\nSubquestion{}: {}", step.index, q));
    }
    Ok(())
}

/// Renders demonstrations (already ordered) followed by the query block.
///
/// Chain-of-thought mode starts with the instruction prefix (if any); each
/// demonstration is its `Input:` line, all `SubgraphN:` lines, then all
/// `SubquestionN:` lines. Standard mode renders `Input:`/`Question:` pairs.
/// Blocks are separated by one blank line and the text ends with
/// `Input: <query>`.
pub fn build_prompt(
    demos: &[Demonstration],
    query_id: &str,
    query: &LogicalForm,
    config: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    let mut blocks: Vec<String> = Vec::with_capacity(demos.len() + 2);
    match config.mode {
        PromptMode::Cot => {
            if !config.instruction_prefix.trim().is_empty() {
                blocks.push(config.instruction_prefix.trim().to_string());
            }
            for demo in demos {
                let mut block = String::new();
                render_cot_demo(demo, &mut block)?;
                blocks.push(block);
            }
        }
        PromptMode::Standard => {
            for demo in demos {
                let question = demo
                    .question_text()
                    .ok_or_else(|| PromptError::MissingQuestion { id: demo.id.clone() })?;
                blocks.push(format!("Input: {}\nQuestion: {}", serialize(&demo.logical_form), question.trim()));
            }
        }
    }
    blocks.push(format!("Input: {}", serialize(query)));
    Ok(PromptBundle {
        prompt_text: blocks.join("\n\n"),
        query_id: query_id.to_string(),
        demo_ids: demos.iter().map(|d| d.id.clone()).collect(),
        config_snapshot: config.clone(),
    })
}

/// `SubquestionN: text` → `(N, text)`.
fn subquestion_line(line: &str) -> Option<(usize, &str)> {
    let rest = line.trim_start().strip_prefix("Subquestion")?;
    let digits_end = rest.find(|c: char| !c.is_ascii_digit())?;
    let n = rest[..digits_end].parse().ok()?;
    let text = rest[digits_end..].trim_start().strip_prefix(':')?;
    Some((n, text.trim()))
}

/// Final prediction from a completion.
///
/// Chain-of-thought: the text of the highest-numbered `SubquestionN:` line
/// (the last one on duplicates). Scanning stops at an `Input:` line seen
/// after the first subquestion, so a runaway extra example is ignored.
/// Standard: the first `Question:` line, else the first non-empty line.
pub fn extract_final_question(completion: &str, mode: PromptMode) -> Result<String, PromptError> {
    match mode {
        PromptMode::Cot => {
            let mut best: Option<(usize, &str)> = None;
            for line in completion.lines() {
                if best.is_some() && line.trim_start().starts_with("Input:") {
                    break;
                }
                if let Some((n, text)) = subquestion_line(line) {
                    if best.is_none_or(|(b, _)| n >= b) {
                        best = Some((n, text));
                    }
                }
            }
            match best {
                Some((_, text)) if !text.is_empty() => Ok(text.to_string()),
                _ => Err(PromptError::NoQuestionFound),
            }
        }
        PromptMode::Standard => {
            if let Some(q) = completion
                .lines()
                .find_map(|l| l.trim_start().strip_prefix("Question:"))
            {
                return Ok(q.trim().to_string());
            }
            completion
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .map(str::to_string)
                .ok_or(PromptError::NoQuestionFound)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Demonstration;
    use crate::logic_form::parse;

    fn demo(id: &str, form: &str) -> Demonstration {
        let mut d = Demonstration::from_form(id, parse(form).unwrap());
        for s in &mut d.steps {
            s.subquestion = Some(format!("{id} q{}", s.index));
        }
        d
    }

    #[test]
    fn jumps_ascending_with_stable_ties() {
        let demos = vec![
            demo("five", "(AND (JOIN a.b c) (JOIN d.e (JOIN f.g (JOIN h.i j))))"),
            demo("two", "(COUNT (JOIN a.b c))"),
            demo("one", "(JOIN a.b c)"),
            demo("two-b", "(COUNT (JOIN a.b x))"),
        ];
        assert_eq!(demos.iter().map(|d| d.complexity).collect::<Vec<_>>(), vec![5, 2, 1, 2]);
        let q = parse("(JOIN x.y z)").unwrap();
        let ordered = order_demos(&demos, &q, &PromptConfig::default(), None).unwrap();
        let ids: Vec<&str> = ordered.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["one", "two", "two-b", "five"]);
    }

    #[test]
    fn similarity_needs_provider() {
        let demos = vec![demo("a", "(JOIN a.b c)")];
        let cfg = PromptConfig { ordering: Ordering::SimilarityDesc, ..Default::default() };
        assert_eq!(
            order_indices(&demos, &parse("(JOIN a.b c)").unwrap(), &cfg, None),
            Err(PromptError::MissingEmbeddingProvider)
        );
        assert_eq!(
            order_indices(&[], &parse("(JOIN a.b c)").unwrap(), &cfg, None),
            Err(PromptError::NoDemonstrations)
        );
    }

    #[test]
    fn similarity_puts_the_closest_first() {
        let e = crate::embed::hash_embedder(384, 0).unwrap();
        let demos = vec![
            demo("far", "(ARGMAX astronomy.star astronomy.star.mass)"),
            demo("near", "(JOIN film.performance.character simon birch)"),
        ];
        let cfg = PromptConfig { ordering: Ordering::SimilarityDesc, ..Default::default() };
        let q = parse("(JOIN film.performance.character ian smith)").unwrap();
        assert_eq!(order_indices(&demos, &q, &cfg, Some(&e)).unwrap(), vec![1, 0]);
    }

    #[test]
    fn cot_prompt_layout() {
        let demos = vec![demo("d1", "(JOIN (R a.b) (JOIN c.d e f))")];
        let q = parse("(JOIN x.y z)").unwrap();
        let bundle = build_prompt(&demos, "q", &q, &PromptConfig::default()).unwrap();
        let expected = format!(
            "{INSTRUCTION_PREFIX}\n\nInput: (JOIN (R a.b) (JOIN c.d e f))\nSubgraph1: (JOIN c.d e f)\n\
             Subgraph2: (JOIN (R a.b) Subgraph1)\nSubquestion1: d1 q1\nSubquestion2: d1 q2\n\nInput: (JOIN x.y z)"
        );
        assert_eq!(bundle.prompt_text, expected);
        assert_eq!(bundle.demo_ids, vec!["d1"]);
    }

    #[test]
    fn standard_prompt_has_one_question_per_demo() {
        let demos = vec![demo("d1", "(JOIN a.b c)")];
        let cfg = PromptConfig { mode: PromptMode::Standard, ..Default::default() };
        let bundle = build_prompt(&demos, "q", &parse("(JOIN x.y z)").unwrap(), &cfg).unwrap();
        assert_eq!(bundle.prompt_text, "Input: (JOIN a.b c)\nQuestion: d1 q1\n\nInput: (JOIN x.y z)");
        assert_eq!(bundle.prompt_text.matches("Question:").count(), 1);
    }

    #[test]
    fn missing_rationale() {
        let mut d = demo("d1", "(COUNT (JOIN a.b c))");
        d.steps[1].subquestion = Some("  ".into());
        let err = build_prompt(&[d], "q", &parse("(JOIN x.y z)").unwrap(), &PromptConfig::default()).unwrap_err();
        assert_eq!(err, PromptError::MissingRationale { id: "d1".into(), step: 2 });
    }

    #[test]
    fn extraction() {
        let table10 = "Subgraph1: (JOIN music.genre.albums confessions tour)\n\
            Subgraph2: (JOIN (R music.genre.parent_genre) Subgraph1)\n\
            Subgraph3: (AND music.genre Subgraph2)\n\
            Subquestion1: the music genre albums confessions tour\n\
            Subquestion2: the albums confessions tour is part of what parent genre\n\
            Subquestion3: The albums confessions tour is part of what parent genre of a musical genre?";
        assert_eq!(
            extract_final_question(table10, PromptMode::Cot).unwrap(),
            "The albums confessions tour is part of what parent genre of a musical genre?"
        );
        assert_eq!(extract_final_question("Subquestion1: foo ?", PromptMode::Cot).unwrap(), "foo ?");
        assert_eq!(extract_final_question("no labels here", PromptMode::Cot), Err(PromptError::NoQuestionFound));
        assert_eq!(
            extract_final_question("Subquestion1: a\nSubquestion2: b\n\nInput: (JOIN x y)\nSubquestion3: c", PromptMode::Cot)
                .unwrap(),
            "b"
        );
        assert_eq!(extract_final_question("Question: who ?\nmore", PromptMode::Standard).unwrap(), "who ?");
        assert_eq!(extract_final_question("\n  what is it ?\n", PromptMode::Standard).unwrap(), "what is it ?");
    }
}
