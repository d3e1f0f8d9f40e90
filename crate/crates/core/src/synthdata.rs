//! Seeded generator for small SQuAD-format corpora.
//!
//! Each instance gets its own paragraph built from one topic vocabulary, so
//! contexts within a topic share most of their content words.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, QAInstance};
use crate::Result;

pub struct Topic {
    pub name: &'static str,
    pub subjects: &'static [&'static str],
    pub attributes: &'static [&'static str],
    pub values: &'static [&'static str],
    pub fillers: &'static [&'static str],
}

pub const TOPICS: [Topic; 4] = [
    Topic {
        name: "rivers",
        subjects: &[
            "Arno", "Danube", "Volga", "Rhone", "Tagus", "Elbe", "Oder", "Loire",
        ],
        attributes: &["source", "mouth", "delta", "basin", "tributary"],
        values: &[
            "Ravenna",
            "Sulina",
            "Astrakhan",
            "Geneva",
            "Lisbon",
            "Cuxhaven",
            "Szczecin",
            "Nantes",
        ],
        fillers: &[
            "barges carry grain downstream",
            "floods shaped the valley",
            "bridges span the current",
            "fishermen work the banks",
        ],
    },
    Topic {
        name: "composers",
        subjects: &[
            "Haydn", "Rameau", "Dvorak", "Grieg", "Sibelius", "Janacek", "Nielsen", "Albeniz",
        ],
        attributes: &["teacher", "patron", "publisher", "rival", "librettist"],
        values: &[
            "Porpora",
            "Esterhazy",
            "Simrock",
            "Gluck",
            "Hartmann",
            "Novak",
            "Carlsen",
            "Pedrell",
        ],
        fillers: &[
            "orchestras premiered the symphony",
            "choirs rehearsed the oratorio",
            "critics praised the quartet",
            "audiences cheered the overture",
        ],
    },
    Topic {
        name: "minerals",
        subjects: &[
            "quartz", "feldspar", "garnet", "olivine", "beryl", "topaz", "zircon", "calcite",
        ],
        attributes: &["hardness", "lustre", "cleavage", "habit", "streak"],
        values: &[
            "vitreous",
            "pearly",
            "prismatic",
            "conchoidal",
            "adamantine",
            "waxy",
            "fibrous",
            "granular",
        ],
        fillers: &[
            "crystals form in cooling magma",
            "miners polish the specimens",
            "geologists survey the outcrop",
            "pressure deforms the lattice",
        ],
    },
    Topic {
        name: "ships",
        subjects: &[
            "Endeavour",
            "Beagle",
            "Victory",
            "Resolution",
            "Discovery",
            "Erebus",
            "Terror",
            "Challenger",
        ],
        attributes: &["captain", "shipyard", "harbour", "cargo", "ensign"],
        values: &[
            "Cook",
            "FitzRoy",
            "Hardy",
            "Clerke",
            "Vancouver",
            "Ross",
            "Crozier",
            "Nares",
        ],
        fillers: &[
            "sailors hauled the rigging",
            "storms battered the hull",
            "charts recorded the soundings",
            "the crew rationed biscuit",
        ],
    },
];

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).copied().unwrap_or_default()
}

/// Generates `n` instances; topic `i % 4` for instance `i`. The same
/// `(n, seed)` always yields the same dataset.
pub fn generate(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let topic = &TOPICS[i % TOPICS.len()];
        let subject = pick(&mut rng, topic.subjects);
        let attribute = pick(&mut rng, topic.attributes);
        let value = pick(&mut rng, topic.values);
        let filler_a = pick(&mut rng, topic.fillers);
        let filler_b = pick(&mut rng, topic.fillers);
        let answer = format!("{value} {}", i + 1);

        let lead = format!(
            "{} records note that {filler_a}. The {attribute} of {subject} is ",
            capitalize(topic.name)
        );
        let context = format!(
            "{lead}{answer}. {} near {subject} in season {}.",
            capitalize(filler_b),
            rng.gen_range(1..=40)
        );
        instances.push(QAInstance {
            id: format!("{}-{i:05}", topic.name),
            question: format!("What is the {attribute} of {subject}?"),
            answer_start: lead.chars().count(),
            answer_text: answer,
            context,
        });
    }
    Dataset::new(instances)
}
