//! Seeded synthetic pools for tests, demos and diagnostics.
//!
//! Forms are drawn from twelve skeleton families over a small
//! Freebase-like vocabulary. Entities are machine ids with surface names.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::Demonstration;
use crate::harness::DatasetRecord;
use crate::logic_form::{serialize, substitute_entities, AtomKind, EntityNames, LogicalForm, Operator};

pub const FAMILIES: usize = 12;

const DOMAINS: [(&str, &str); 12] = [
    ("film", "performance"),
    ("music", "album"),
    ("people", "person"),
    ("location", "country"),
    ("sports", "team"),
    ("medicine", "drug"),
    ("book", "author"),
    ("tv", "program"),
    ("education", "university"),
    ("organization", "company"),
    ("astronomy", "star"),
    ("digicams", "camera"),
];

const PROPERTIES: [&str; 16] = [
    "genre", "founder", "release_date", "location", "member", "award", "language", "capital", "population",
    "weight", "director", "manufacturer", "ingredient", "height", "mass", "publisher",
];

const WORDS: [&str; 24] = [
    "silver", "river", "north", "crimson", "harbor", "maple", "quiet", "stone", "amber", "falcon", "winter",
    "golden", "echo", "meadow", "iron", "lunar", "coral", "summit", "velvet", "cedar", "azure", "ember", "willow",
    "orchid",
];

struct Gen {
    rng: ChaCha8Rng,
    names: EntityNames,
    next_entity: usize,
}

impl Gen {
    fn relation(&mut self) -> LogicalForm {
        let (domain, ty) = *DOMAINS.choose(&mut self.rng).expect("non-empty");
        let prop = PROPERTIES.choose(&mut self.rng).expect("non-empty");
        LogicalForm::atom(AtomKind::Relation, format!("{domain}.{ty}.{prop}"))
    }

    fn class(&mut self) -> LogicalForm {
        let (domain, ty) = *DOMAINS.choose(&mut self.rng).expect("non-empty");
        LogicalForm::atom(AtomKind::Class, format!("{domain}.{ty}"))
    }

    fn entity(&mut self) -> LogicalForm {
        let id = format!("m.0{:04x}", self.next_entity);
        self.next_entity += 1;
        let name = format!(
            "{} {}",
            WORDS.choose(&mut self.rng).expect("non-empty"),
            WORDS.choose(&mut self.rng).expect("non-empty")
        );
        self.names.insert(id.clone(), name);
        LogicalForm::atom(AtomKind::Entity, id)
    }

    fn literal(&mut self) -> LogicalForm {
        let value: u32 = self.rng.random_range(1..2000);
        LogicalForm::atom(
            AtomKind::Literal,
            format!("{value}.0^^http://www.w3.org/2001/XMLSchema#float"),
        )
    }

    fn reverse(&mut self) -> LogicalForm {
        let r = self.relation();
        LogicalForm::op(Operator::R, vec![r])
    }

    fn join(&mut self, rel: LogicalForm, value: LogicalForm) -> LogicalForm {
        LogicalForm::op(Operator::Join, vec![rel, value])
    }

    fn family(&mut self, family: usize) -> LogicalForm {
        use Operator::*;
        match family % FAMILIES {
            0 => {
                let (r, e) = (self.relation(), self.entity());
                self.join(r, e)
            }
            1 => {
                let c = self.class();
                let (r, e) = (self.relation(), self.entity());
                let j = self.join(r, e);
                LogicalForm::op(And, vec![c, j])
            }
            2 => {
                let (r, e) = (self.relation(), self.entity());
                let inner = self.join(r, e);
                let rr = self.reverse();
                self.join(rr, inner)
            }
            3 => {
                let (r, e) = (self.relation(), self.entity());
                let j = self.join(r, e);
                LogicalForm::op(Count, vec![j])
            }
            4 => {
                let c = self.class();
                let (r, e) = (self.relation(), self.entity());
                let inner = self.join(r, e);
                let rr = self.reverse();
                let outer = self.join(rr, inner);
                LogicalForm::op(And, vec![c, outer])
            }
            5 => {
                let (c, r) = (self.class(), self.relation());
                LogicalForm::op(ArgMax, vec![c, r])
            }
            6 => {
                let (c, r) = (self.class(), self.relation());
                LogicalForm::op(ArgMin, vec![c, r])
            }
            7 => {
                let c = self.class();
                let (r, l) = (self.relation(), self.literal());
                LogicalForm::op(And, vec![c, LogicalForm::op(Lt, vec![r, l])])
            }
            8 => {
                let c = self.class();
                let (r, l) = (self.relation(), self.literal());
                LogicalForm::op(And, vec![c, LogicalForm::op(Ge, vec![r, l])])
            }
            9 => {
                let c = self.class();
                let (r, e) = (self.relation(), self.entity());
                let j = self.join(r, e);
                LogicalForm::op(Count, vec![LogicalForm::op(And, vec![c, j])])
            }
            10 => {
                let (r1, e1) = (self.relation(), self.entity());
                let a = self.join(r1, e1);
                let (r2, e2) = (self.relation(), self.entity());
                let b = self.join(r2, e2);
                LogicalForm::op(And, vec![a, b])
            }
            _ => {
                let (r, e) = (self.relation(), self.entity());
                let inner = self.join(r, e);
                let rr = self.reverse();
                let mid = self.join(rr, inner);
                let rr2 = self.reverse();
                self.join(rr2, mid)
            }
        }
    }
}

/// A pool of `n` forms. The first twelve cover every family once; the rest
/// draw families uniformly. Also returns the combined name table.
pub fn synthetic_pool(n: usize, seed: u64) -> (Vec<DatasetRecord>, EntityNames) {
    let mut gen = Gen { rng: ChaCha8Rng::seed_from_u64(seed), names: EntityNames::new(), next_entity: 0 };
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let family = if i < FAMILIES { i } else { gen.rng.random_range(0..FAMILIES) };
        let form = gen.family(family);
        let own: EntityNames = form
            .atoms()
            .iter()
            .filter_map(|a| gen.names.get(&a.text).map(|name| (a.text.clone(), name.clone())))
            .collect();
        let substituted = substitute_entities(&form, &own).form;
        records.push(DatasetRecord {
            id: format!("syn-{i:04}"),
            logical_form: serialize(&form),
            question: Some(template_question(&substituted)),
            entity_names: Some(own),
        });
    }
    (records, gen.names)
}

fn phrase(text: &str) -> String {
    text.replace(['(', ')'], " ")
        .split_whitespace()
        .map(|w| {
            if w.contains("^^") {
                w.split("^^").next().unwrap_or(w).to_string()
            } else if w.contains('.') && !w.starts_with(|c: char| c.is_ascii_digit()) {
                w.rsplit('.').next().unwrap_or(w).replace('_', " ")
            } else {
                w.to_lowercase()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A deterministic stand-in for a human-written question.
pub fn template_question(form: &LogicalForm) -> String {
    format!("what is the {} ?", phrase(&serialize(form)))
}

/// Fills every rationale slot with a templated subquestion, standing in
/// for the manual annotation step.
pub fn annotate(demo: &Demonstration) -> Demonstration {
    let mut out = demo.clone();
    for step in &mut out.steps {
        step.subquestion = Some(format!("which {} ?", phrase(&step.subgraph_text)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic_form::{parse, skeletonize};
    use std::collections::BTreeSet;

    #[test]
    fn pool_is_deterministic_and_covers_every_family() {
        let (a, _) = synthetic_pool(200, 3);
        let (b, _) = synthetic_pool(200, 3);
        assert_eq!(a, b);
        let skeletons: BTreeSet<String> = a.iter().map(|r| skeletonize(&parse(&r.logical_form).unwrap())).collect();
        assert_eq!(skeletons.len(), FAMILIES);
    }

    #[test]
    fn every_entity_has_a_name() {
        let (pool, _) = synthetic_pool(50, 1);
        for r in &pool {
            let sub = crate::logic_form::substitute_entities(&r.form(), r.entity_names.as_ref().unwrap());
            assert!(sub.missing.is_empty(), "{}", r.logical_form);
        }
    }
}
