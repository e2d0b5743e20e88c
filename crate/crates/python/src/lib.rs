//! Python bindings: parsing, decomposition, embedding, selection,
//! prompting and scoring.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use kqgcot::chain::{self, Demonstration, SubgraphStep};
use kqgcot::embed::{self, EmbeddingProvider};
use kqgcot::logic_form;
use kqgcot::metrics;
use kqgcot::prompting::{self, PromptConfig, PromptMode};
use kqgcot::select::{self, SelectionConfig, SelectionStrategy};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A parsed logical form.
#[pyclass(name = "LogicalForm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLogicalForm {
    inner: logic_form::LogicalForm,
}

#[pymethods]
impl PyLogicalForm {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { inner: logic_form::parse(text).map_err(value_err)? })
    }

    fn serialize(&self) -> String {
        logic_form::serialize(&self.inner)
    }

    fn skeleton(&self) -> String {
        logic_form::skeletonize(&self.inner)
    }

    /// Subgraph texts in execution order.
    fn decompose(&self) -> Vec<String> {
        chain::decompose(&self.inner).into_iter().map(|s| s.subgraph_text).collect()
    }

    /// `(kind, text)` for every atom, left to right.
    fn atoms(&self) -> Vec<(String, String)> {
        self.inner.atoms().into_iter().map(|a| (format!("{:?}", a.kind).to_lowercase(), a.text.clone())).collect()
    }

    fn substitute(&self, names: std::collections::BTreeMap<String, String>) -> Self {
        Self { inner: logic_form::substitute_entities(&self.inner, &names).form }
    }

    fn __str__(&self) -> String {
        self.serialize()
    }

    fn __repr__(&self) -> String {
        format!("LogicalForm({:?})", self.serialize())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyfunction]
fn parse(text: &str) -> PyResult<PyLogicalForm> {
    PyLogicalForm::new(text)
}

#[pyfunction]
fn skeletonize(text: &str) -> PyResult<String> {
    Ok(PyLogicalForm::new(text)?.skeleton())
}

#[pyfunction]
fn decompose(text: &str) -> PyResult<Vec<String>> {
    Ok(PyLogicalForm::new(text)?.decompose())
}

/// Inverse of `decompose`: inlines `SubgraphN` placeholders.
#[pyfunction]
fn inline_steps(steps: Vec<String>) -> PyResult<String> {
    let steps: Vec<SubgraphStep> = steps
        .into_iter()
        .enumerate()
        .map(|(i, text)| SubgraphStep { index: i + 1, subgraph_text: text, subquestion: None })
        .collect();
    Ok(logic_form::serialize(&chain::inline_steps(&steps).map_err(value_err)?))
}

/// Feature-hashing text embedder.
#[pyclass(name = "HashEmbedder", frozen)]
struct PyHashEmbedder {
    inner: embed::HashEmbedder,
}

#[pymethods]
impl PyHashEmbedder {
    #[new]
    #[pyo3(signature = (dim = embed::DEFAULT_DIM, seed = 0))]
    fn new(dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: embed::hash_embedder(dim, seed).map_err(value_err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.embed(text).map_err(value_err)?.values().to_vec())
    }
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    embed::cosine_raw(&a, &b).map_err(value_err)
}

/// Returns `(assignment, inertia)`.
#[pyfunction]
#[pyo3(signature = (points, k, seed = 0))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Vec<usize>, f64)> {
    let c = select::kmeans(&points, k, seed).map_err(value_err)?;
    Ok((c.assignment, c.inertia))
}

/// Selects `k` ids from `(id, logical_form)` pairs.
#[pyfunction]
#[pyo3(signature = (forms, k = select::DEFAULT_K, seed = 0, strategy = "kqg", structure_encoding = true, dim = embed::DEFAULT_DIM))]
fn select_demonstrations(
    forms: Vec<(String, String)>,
    k: usize,
    seed: u64,
    strategy: &str,
    structure_encoding: bool,
    dim: usize,
) -> PyResult<Vec<String>> {
    let parsed = forms
        .into_iter()
        .map(|(id, text)| Ok((id, logic_form::parse(&text).map_err(value_err)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let embedder = embed::hash_embedder(dim, 0).map_err(value_err)?;
    let pool = select::build_pool(&parsed, &embedder).map_err(value_err)?;
    let strategy: SelectionStrategy = strategy.parse().map_err(PyValueError::new_err)?;
    let config = SelectionConfig { k, seed, strategy, structure_encoding };
    let picked = select::select_indices(&pool, &config).map_err(value_err)?;
    Ok(picked.into_iter().map(|i| pool[i].id.clone()).collect())
}

/// Orders demonstrations and renders a prompt. Each demonstration is
/// `(id, logical_form, subquestions)`; the last subquestion doubles as the
/// question in standard mode.
#[pyfunction]
#[pyo3(signature = (demos, query, mode = "cot", ordering = "jumps_asc", seed = 0))]
fn build_prompt(
    demos: Vec<(String, String, Vec<String>)>,
    query: &str,
    mode: &str,
    ordering: &str,
    seed: u64,
) -> PyResult<String> {
    let demos = demos
        .into_iter()
        .map(|(id, text, subquestions)| {
            let mut demo = Demonstration::from_form(id, logic_form::parse(&text).map_err(value_err)?);
            if subquestions.len() != demo.steps.len() {
                return Err(value_err(format!(
                    "{}: {} subquestions for {} steps",
                    demo.id,
                    subquestions.len(),
                    demo.steps.len()
                )));
            }
            for (step, q) in demo.steps.iter_mut().zip(subquestions) {
                step.subquestion = Some(q);
            }
            Ok(demo)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let query = logic_form::parse(query).map_err(value_err)?;
    let config = PromptConfig {
        mode: mode.parse().map_err(PyValueError::new_err)?,
        ordering: ordering.parse().map_err(PyValueError::new_err)?,
        k: demos.len(),
        seed,
        ..PromptConfig::default()
    };
    let embedder = embed::hash_embedder(embed::DEFAULT_DIM, 0).map_err(value_err)?;
    let ordered = prompting::order_demos(&demos, &query, &config, Some(&embedder)).map_err(value_err)?;
    Ok(prompting::build_prompt(&ordered, "query", &query, &config).map_err(value_err)?.prompt_text)
}

#[pyfunction]
#[pyo3(signature = (completion, mode = "cot"))]
fn extract_final_question(completion: &str, mode: &str) -> PyResult<String> {
    let mode: PromptMode = mode.parse().map_err(PyValueError::new_err)?;
    prompting::extract_final_question(completion, mode).map_err(value_err)
}

/// Scores `(id, hypothesis, reference)` triples; returns corpus BLEU-4,
/// METEOR and ROUGE-L (all on a 0–100 scale) and the count.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, triples: Vec<(String, String, String)>) -> PyResult<Bound<'py, PyDict>> {
    let report = metrics::evaluate(&triples).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("bleu4", report.bleu4)?;
    out.set_item("meteor", report.meteor)?;
    out.set_item("rouge_l", report.rouge_l)?;
    out.set_item("count", report.count)?;
    Ok(out)
}

#[pyfunction]
fn meteor(hypothesis: &str, reference: &str) -> f64 {
    metrics::meteor(&metrics::tokenize(hypothesis), &metrics::tokenize(reference))
}

#[pyfunction]
fn rouge_l(hypothesis: &str, reference: &str) -> PyResult<f64> {
    metrics::rouge_l(&metrics::tokenize(hypothesis), &metrics::tokenize(reference)).map_err(value_err)
}

#[pymodule]
fn kqgcot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLogicalForm>()?;
    m.add_class::<PyHashEmbedder>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(skeletonize, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(inline_steps, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(select_demonstrations, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(extract_final_question, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add("INSTRUCTION_PREFIX", prompting::INSTRUCTION_PREFIX)?;
    Ok(())
}
