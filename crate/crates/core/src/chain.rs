//! Nested subgraph decomposition of logical forms and the human rationale
//! scaffold built on top of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic_form::{
    parse, parse_step, placeholder_index, serialize, substitute_entities, AtomKind, EntityNames, LogicalForm,
    Operator, ParseError,
};
use crate::select::PoolEntry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphStep {
    pub index: usize,
    pub subgraph_text: String,
    pub subquestion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    /// Surface-name form shown in prompts.
    pub logical_form: LogicalForm,
    pub steps: Vec<SubgraphStep>,
    pub complexity: usize,
    /// Gold question for standard prompting. Falls back to the final
    /// subquestion when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

impl Demonstration {
    /// Builds a demonstration with empty rationale slots.
    pub fn from_form(id: impl Into<String>, logical_form: LogicalForm) -> Self {
        let steps = decompose(&logical_form);
        Self {
            id: id.into(),
            complexity: steps.len(),
            logical_form,
            steps,
            question: None,
        }
    }

    pub fn question_text(&self) -> Option<&str> {
        self.question
            .as_deref()
            .or_else(|| self.steps.last().and_then(|s| s.subquestion.as_deref()))
            .filter(|q| !q.trim().is_empty())
    }

    /// First step whose subquestion is missing or blank.
    pub fn first_missing_rationale(&self) -> Option<usize> {
        self.steps
            .iter()
            .find(|s| s.subquestion.as_deref().is_none_or(|q| q.trim().is_empty()))
            .map(|s| s.index)
    }
}

/// Post-order, left-to-right numbering of every composite node except
/// `(R ...)` wrappers, which stay inline in their parent. Children that
/// already have a number are written as `SubgraphN`. The root is last.
pub fn decompose(lf: &LogicalForm) -> Vec<SubgraphStep> {
    fn visit(node: &LogicalForm, steps: &mut Vec<SubgraphStep>) -> String {
        match node {
            LogicalForm::Atom(a) => a.text.clone(),
            LogicalForm::Op(Operator::R, _) => serialize(node),
            LogicalForm::Op(op, args) => {
                let mut text = format!("({op}");
                for arg in args {
                    text.push(' ');
                    text.push_str(&visit(arg, steps));
                }
                text.push(')');
                let index = steps.len() + 1;
                steps.push(SubgraphStep { index, subgraph_text: text, subquestion: None });
                format!("Subgraph{index}")
            }
        }
    }
    let mut steps = Vec::new();
    if let LogicalForm::Atom(a) = lf {
        steps.push(SubgraphStep { index: 1, subgraph_text: a.text.clone(), subquestion: None });
    } else {
        visit(lf, &mut steps);
    }
    steps
}

pub fn complexity(demo: &Demonstration) -> usize {
    demo.steps.len()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("step {index}: {source}")]
    StepParse { index: usize, source: ParseError },
    #[error("step {index} references Subgraph{reference}, which is not an earlier step")]
    ForwardReference { index: usize, reference: usize },
    #[error("steps are not numbered 1..n (found {found} at position {position})")]
    BadNumbering { position: usize, found: usize },
    #[error("no steps to inline")]
    NoSteps,
    #[error("entry `{id}`: {source}")]
    FormParse { id: String, source: ParseError },
    #[error("entry `{id}` step {step}: subquestion is empty")]
    IncompleteScaffold { id: String, step: usize },
    #[error("entry `{id}` step {step}: subgraph `{found}` does not match the decomposition `{expected}`")]
    StepMismatch {
        id: String,
        step: usize,
        expected: String,
        found: String,
    },
}

/// Inlines placeholders recursively and returns the logical form that the
/// final step stands for.
pub fn inline_steps(steps: &[SubgraphStep]) -> Result<LogicalForm, ChainError> {
    let mut resolved: Vec<LogicalForm> = Vec::with_capacity(steps.len());
    for (position, step) in steps.iter().enumerate() {
        if step.index != position + 1 {
            return Err(ChainError::BadNumbering { position, found: step.index });
        }
        let parsed = parse_step(&step.subgraph_text)
            .map_err(|source| ChainError::StepParse { index: step.index, source })?;
        resolved.push(substitute_placeholders(&parsed, &resolved, step.index)?);
    }
    resolved.pop().ok_or(ChainError::NoSteps)
}

fn substitute_placeholders(
    node: &LogicalForm,
    earlier: &[LogicalForm],
    index: usize,
) -> Result<LogicalForm, ChainError> {
    match node {
        LogicalForm::Atom(a) if a.kind == AtomKind::Placeholder => {
            let reference = placeholder_index(&a.text).unwrap_or(0);
            if reference == 0 || reference >= index {
                return Err(ChainError::ForwardReference { index, reference });
            }
            Ok(earlier[reference - 1].clone())
        }
        LogicalForm::Atom(_) => Ok(node.clone()),
        LogicalForm::Op(op, args) => Ok(LogicalForm::Op(
            *op,
            args.iter()
                .map(|a| substitute_placeholders(a, earlier, index))
                .collect::<Result<_, _>>()?,
        )),
    }
}

/// Editable rationale document: one entry per selected demonstration.
pub type ScaffoldDoc = Vec<ScaffoldEntry>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldEntry {
    pub id: String,
    pub logical_form: String,
    pub steps: Vec<ScaffoldStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldStep {
    pub index: usize,
    pub subgraph: String,
    #[serde(default)]
    pub subquestion: String,
}

/// Scaffold plus any machine ids that had no surface name.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaffold {
    pub doc: ScaffoldDoc,
    pub missing_names: Vec<(String, Vec<String>)>,
}

/// Emits surface-name forms with their decomposition and blank subquestion
/// slots for a human to fill in.
pub fn scaffold(entries: &[PoolEntry], names: &EntityNames) -> Scaffold {
    let mut missing_names = Vec::new();
    let doc = entries
        .iter()
        .map(|entry| {
            let sub = substitute_entities(&entry.logical_form, names);
            if !sub.missing.is_empty() {
                missing_names.push((entry.id.clone(), sub.missing.clone()));
            }
            scaffold_entry(&entry.id, &sub.form)
        })
        .collect();
    Scaffold { doc, missing_names }
}

pub fn scaffold_entry(id: &str, form: &LogicalForm) -> ScaffoldEntry {
    ScaffoldEntry {
        id: id.to_string(),
        logical_form: serialize(form),
        steps: decompose(form)
            .into_iter()
            .map(|s| ScaffoldStep { index: s.index, subgraph: s.subgraph_text, subquestion: String::new() })
            .collect(),
    }
}

/// Validates a filled scaffold: forms parse, steps match the
/// decomposition, and every subquestion is non-empty.
pub fn ingest_scaffold(doc: &[ScaffoldEntry]) -> Result<Vec<Demonstration>, ChainError> {
    doc.iter().map(|entry| ingest_entry(entry, true)).collect()
}

/// Like [`ingest_scaffold`] but accepts blank subquestions (they become
/// `None`). Useful for standard prompting, where only a question is needed.
pub fn ingest_scaffold_lenient(doc: &[ScaffoldEntry]) -> Result<Vec<Demonstration>, ChainError> {
    doc.iter().map(|entry| ingest_entry(entry, false)).collect()
}

fn ingest_entry(entry: &ScaffoldEntry, require_complete: bool) -> Result<Demonstration, ChainError> {
    let form = parse(&entry.logical_form).map_err(|source| ChainError::FormParse { id: entry.id.clone(), source })?;
    let expected = decompose(&form);
    if expected.len() != entry.steps.len() {
        return Err(ChainError::StepMismatch {
            id: entry.id.clone(),
            step: entry.steps.len().min(expected.len()) + 1,
            expected: format!("{} steps", expected.len()),
            found: format!("{} steps", entry.steps.len()),
        });
    }
    let mut steps = Vec::with_capacity(expected.len());
    for (want, got) in expected.into_iter().zip(&entry.steps) {
        if want.index != got.index || want.subgraph_text != got.subgraph.split_whitespace().collect::<Vec<_>>().join(" ") {
            return Err(ChainError::StepMismatch {
                id: entry.id.clone(),
                step: want.index,
                expected: want.subgraph_text,
                found: got.subgraph.clone(),
            });
        }
        let q = got.subquestion.trim();
        if q.is_empty() && require_complete {
            return Err(ChainError::IncompleteScaffold { id: entry.id.clone(), step: want.index });
        }
        steps.push(SubgraphStep {
            index: want.index,
            subgraph_text: want.subgraph_text,
            subquestion: (!q.is_empty()).then(|| q.to_string()),
        });
    }
    Ok(Demonstration {
        id: entry.id.clone(),
        complexity: steps.len(),
        logical_form: form,
        steps,
        question: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(form: &str) -> Vec<String> {
        decompose(&parse(form).unwrap()).into_iter().map(|s| s.subgraph_text).collect()
    }

    #[test]
    fn single_step_forms() {
        assert_eq!(
            texts("(ARGMIN base.exoplanetology.exoplanet astronomy.astronomical_discovery.discovery_date)"),
            vec!["(ARGMIN base.exoplanetology.exoplanet astronomy.astronomical_discovery.discovery_date)"]
        );
        assert_eq!(texts("(JOIN (R a.b) c d)"), vec!["(JOIN (R a.b) c d)"]);
    }

    #[test]
    fn count_wraps_its_body() {
        assert_eq!(texts("(COUNT (JOIN a.b c))"), vec!["(JOIN a.b c)", "(COUNT Subgraph1)"]);
    }

    #[test]
    fn inline_round_trip() {
        let form = "(AND a.b (JOIN (R c.d) (JOIN e.f g h)))";
        let lf = parse(form).unwrap();
        assert_eq!(serialize(&inline_steps(&decompose(&lf)).unwrap()), form);
    }

    #[test]
    fn inline_rejects_forward_references() {
        let steps = vec![
            SubgraphStep { index: 1, subgraph_text: "(JOIN a.b Subgraph2)".into(), subquestion: None },
            SubgraphStep { index: 2, subgraph_text: "(JOIN c.d e)".into(), subquestion: None },
        ];
        assert_eq!(inline_steps(&steps), Err(ChainError::ForwardReference { index: 1, reference: 2 }));
        assert_eq!(inline_steps(&[]), Err(ChainError::NoSteps));
    }

    #[test]
    fn scaffold_validation() {
        let lf = parse("(JOIN (R a.b) (JOIN c.d m.01))").unwrap();
        let names = EntityNames::from([("m.01".to_string(), "o holy night".to_string())]);
        let mut entry = scaffold_entry("q1", &substitute_entities(&lf, &names).form);
        assert_eq!(entry.logical_form, "(JOIN (R a.b) (JOIN c.d o holy night))");
        assert_eq!(entry.steps.len(), 2);
        assert!(entry.steps.iter().all(|s| s.subquestion.is_empty()));

        let err = ingest_scaffold(std::slice::from_ref(&entry)).unwrap_err();
        assert_eq!(err, ChainError::IncompleteScaffold { id: "q1".into(), step: 1 });
        assert_eq!(ingest_scaffold_lenient(std::slice::from_ref(&entry)).unwrap()[0].first_missing_rationale(), Some(1));

        entry.steps[0].subquestion = "o holy night 's c".into();
        entry.steps[1].subquestion = "What is the a of o holy night 's c ?".into();
        let demos = ingest_scaffold(std::slice::from_ref(&entry)).unwrap();
        assert_eq!(demos[0].complexity, 2);
        assert_eq!(demos[0].question_text(), Some("What is the a of o holy night 's c ?"));

        entry.steps[1].subgraph = "(JOIN (R a.b) Subgraph9)".into();
        assert!(matches!(ingest_scaffold(&[entry]), Err(ChainError::StepMismatch { step: 2, .. })));
    }
}
