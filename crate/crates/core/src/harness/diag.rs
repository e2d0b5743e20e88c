use serde::{Deserialize, Serialize};

use crate::select::{avg_pairwise_similarity, select, PoolEntry, SelectionConfig, SelectionStrategy};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagStrategy {
    pub name: String,
    pub selection: SelectionStrategy,
    pub structure_encoding: bool,
}

impl DiagStrategy {
    pub fn new(selection: SelectionStrategy, structure_encoding: bool) -> Self {
        let name = match (selection, structure_encoding) {
            (SelectionStrategy::Random, _) => "random".to_string(),
            (SelectionStrategy::Kqg, true) => "kqg".to_string(),
            (SelectionStrategy::Kqg, false) => "kqg_no_skeleton".to_string(),
        };
        Self { name, selection, structure_encoding }
    }
}

impl std::str::FromStr for DiagStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::new(SelectionStrategy::Random, true)),
            "kqg" => Ok(Self::new(SelectionStrategy::Kqg, true)),
            "kqg_no_skeleton" => Ok(Self::new(SelectionStrategy::Kqg, false)),
            other => Err(format!("unknown strategy `{other}` (expected random, kqg or kqg_no_skeleton)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRow {
    pub strategy: String,
    pub k: usize,
    pub mean: f64,
    pub per_seed: Vec<f64>,
}

/// Mean pairwise similarity of the selected forms, per strategy, averaged
/// over seeds.
pub fn diag_similarity(
    strategies: &[DiagStrategy],
    pool: &[PoolEntry],
    k: usize,
    seeds: &[u64],
) -> Result<Vec<DiagRow>, HarnessError> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(HarnessError::EmptyDiagnostic);
    }
    strategies
        .iter()
        .map(|s| {
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let config = SelectionConfig { k, seed, strategy: s.selection, structure_encoding: s.structure_encoding };
                    Ok(avg_pairwise_similarity(&select(pool, &config)?)?)
                })
                .collect::<Result<Vec<f64>, HarnessError>>()?;
            Ok(DiagRow {
                strategy: s.name.clone(),
                k,
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            })
        })
        .collect()
}

pub fn format_diag_table(rows: &[DiagRow]) -> String {
    let width = rows.iter().map(|r| r.strategy.len()).max().unwrap_or(0).max("strategy".len());
    let mut out = format!("{:<width$}  {:>3}  {:>8}  {:>5}\n", "strategy", "k", "avg_sim", "seeds");
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>3}  {:>8.4}  {:>5}\n", r.strategy, r.k, r.mean, r.per_seed.len()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::hash_embedder;
    use crate::select::build_pool;
    use crate::synthetic::synthetic_pool;

    fn pool() -> Vec<PoolEntry> {
        let (records, _) = synthetic_pool(60, 5);
        let forms: Vec<_> = records.iter().map(|r| (r.id.clone(), r.form())).collect();
        build_pool(&forms, &hash_embedder(384, 0).unwrap()).unwrap()
    }

    #[test]
    fn one_strategy_one_seed_gives_one_row() {
        let rows = diag_similarity(&["kqg".parse().unwrap()], &pool(), 6, &[1]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].per_seed.len(), 1);
        assert_eq!(rows[0].mean, rows[0].per_seed[0]);
    }

    #[test]
    fn two_strategies_give_a_two_row_table() {
        let strategies: Vec<DiagStrategy> = ["random", "kqg"].iter().map(|s| s.parse().unwrap()).collect();
        let rows = diag_similarity(&strategies, &pool(), 6, &[1, 2, 3]).unwrap();
        let table = format_diag_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().starts_with("random"));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(diag_similarity(&[], &pool(), 6, &[1]), Err(HarnessError::EmptyDiagnostic)));
    }
}
