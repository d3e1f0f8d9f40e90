#![allow(dead_code)]

use std::collections::HashSet;

use palqa::backend::{Backend, ModelHandle, SyntheticBackend};
use palqa::dataset::{Dataset, QAInstance};

pub struct PalFixture {
    pub data: Dataset,
    pub backend: SyntheticBackend,
    pub model: ModelHandle,
    pub labeled: Vec<String>,
    pub pool: Vec<String>,
    pub sensitive: HashSet<String>,
}

/// Instances whose every sentence reads "The <attr> of <subj> is <value>.",
/// so any distractor repeats question words.
pub fn framed(n: usize) -> Dataset {
    const ATTRS: [&str; 5] = ["colour", "weight", "origin", "owner", "price"];
    const SUBJECTS: [&str; 6] = ["lamp", "kettle", "anchor", "violin", "saddle", "compass"];
    Dataset::new(
        (0..n)
            .map(|i| {
                let (attr, subj) = (ATTRS[i % 5], SUBJECTS[i % 6]);
                let other = ATTRS[(i + 2) % 5];
                let lead = format!("The {attr} of the {subj} is ");
                let answer = format!("item{i}");
                QAInstance {
                    id: format!("f{i:03}"),
                    question: format!("What is the {attr} of the {subj}?"),
                    context: format!("{lead}{answer}. The {other} of the {subj} is extra{i}."),
                    answer_start: lead.len(),
                    answer_text: answer,
                }
            })
            .collect(),
    )
    .unwrap()
}

/// 6 labeled, 60 candidates of which 50 were memorized. Only the 10 fresh
/// candidates react to an appended distractor.
pub fn pal_fixture(sensitive_every: usize) -> PalFixture {
    let data = framed(66);
    let mut backend = SyntheticBackend::with_seed(21);
    let ids: Vec<String> = data.instances().iter().map(|i| i.id.clone()).collect();
    let (labeled, pool) = (ids[..6].to_vec(), ids[6..].to_vec());
    let sensitive: HashSet<String> = pool.iter().step_by(sensitive_every).cloned().collect();
    let trained: Vec<QAInstance> = data
        .instances()
        .iter()
        .filter(|i| !sensitive.contains(&i.id))
        .cloned()
        .collect();
    let h = backend.handle().unwrap();
    let h = backend.fine_tune(&h, &trained).unwrap();
    PalFixture {
        data,
        backend,
        model: h,
        labeled,
        pool,
        sensitive,
    }
}
