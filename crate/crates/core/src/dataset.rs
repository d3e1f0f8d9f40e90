//! SQuAD v1.1 ingestion, the one-pair-per-context subset, and the gold-answer
//! oracle.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::text::{char_len, char_slice};
use crate::{Error, Result};

/// How far (in chars) a misaligned `answer_start` may be from the real answer
/// before the instance is rejected.
const OFFSET_REPAIR_WINDOW: usize = 5;

/// One question/context/gold-answer triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answer_text: String,
    /// Offset of the answer in `context`, counted in Unicode scalar values.
    pub answer_start: usize,
}

impl QAInstance {
    /// Checks that the stated offset points at the answer text.
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: &str| Error::Validation {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.question.trim().is_empty() {
            return Err(invalid("empty question"));
        }
        if self.context.trim().is_empty() {
            return Err(invalid("empty context"));
        }
        if self.answer_text.is_empty() {
            return Err(invalid("empty answer"));
        }
        let end = self.answer_start + char_len(&self.answer_text);
        if end > char_len(&self.context) || self.answer_at(self.answer_start) != self.answer_text {
            return Err(invalid("answer_start does not point at the answer text"));
        }
        Ok(())
    }

    fn answer_at(&self, start: usize) -> &str {
        char_slice(&self.context, start, start + char_len(&self.answer_text))
    }

    /// Character span of the gold answer, `[start, end)`.
    pub fn answer_char_span(&self) -> (usize, usize) {
        (
            self.answer_start,
            self.answer_start + char_len(&self.answer_text),
        )
    }
}

/// The stored gold label returned by the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAnswer {
    pub text: String,
    pub char_start: usize,
}

/// An immutable, ordered collection of instances with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    instances: Vec<QAInstance>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(instances: Vec<QAInstance>) -> Result<Self> {
        let mut index = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            inst.validate()?;
            if index.insert(inst.id.clone(), i).is_some() {
                return Err(Error::Validation {
                    id: inst.id.clone(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(Self { instances, index })
    }

    pub fn instances(&self) -> &[QAInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QAInstance> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn require(&self, id: &str) -> Result<&QAInstance> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.instances.iter().map(|i| i.id.as_str())
    }

    /// Builds a new dataset from the instances with the given ids, in the
    /// order given.
    pub fn select(&self, ids: &[String]) -> Result<Dataset> {
        let picked = ids
            .iter()
            .map(|id| self.require(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(picked)
    }
}

/// Simulated annotator: returns the stored gold answer for `id`.
pub fn oracle_label(id: &str, dataset: &Dataset) -> Result<GoldAnswer> {
    let inst = dataset.require(id)?;
    Ok(GoldAnswer {
        text: inst.answer_text.clone(),
        char_start: inst.answer_start,
    })
}

/// Keeps only the first instance (in dataset order) for each distinct context.
pub fn subset_one_per_context(dataset: &Dataset) -> Dataset {
    let mut seen = HashSet::new();
    let kept: Vec<QAInstance> = dataset
        .instances
        .iter()
        .filter(|inst| seen.insert(inst.context.as_str()))
        .cloned()
        .collect();
    // Every kept instance was already valid and ids stay unique.
    Dataset::new(kept).expect("subset of a valid dataset is valid")
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default)]
    version: Option<String>,
    data: Vec<SquadArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: Option<String>,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Parses SQuAD v1.1 JSON. One instance per question, using its first answer.
///
/// Instance ids are `<article_index>-<paragraph_index>-<qa_id>`.
pub fn parse_squad(raw: &[u8]) -> Result<Dataset> {
    let file: SquadFile = serde_json::from_slice(raw).map_err(|e| Error::Parse {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut instances = Vec::new();
    for (a, article) in file.data.into_iter().enumerate() {
        for (p, para) in article.paragraphs.into_iter().enumerate() {
            for qa in para.qas {
                let id = format!("{a}-{p}-{}", qa.id);
                let answer = qa
                    .answers
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Validation {
                        id: id.clone(),
                        message: "question has no answers".into(),
                    })?;
                let mut inst = QAInstance {
                    id,
                    question: qa.question,
                    context: para.context.clone(),
                    answer_text: answer.text,
                    answer_start: answer.answer_start,
                };
                repair_offset(&mut inst);
                inst.validate()?;
                instances.push(inst);
            }
        }
    }
    Dataset::new(instances)
}

/// Moves `answer_start` to the nearest position within the repair window where
/// the answer text actually occurs. Leaves it alone when nothing matches so
/// validation reports the original offset.
fn repair_offset(inst: &mut QAInstance) {
    if inst.answer_text.is_empty() {
        return;
    }
    let stated = inst.answer_start;
    let ctx_len = char_len(&inst.context);
    let ans_len = char_len(&inst.answer_text);
    let fits = |s: usize| s + ans_len <= ctx_len;
    for delta in 0..=OFFSET_REPAIR_WINDOW {
        let before = stated.checked_sub(delta);
        let after = Some(stated + delta);
        for cand in [before, after].into_iter().flatten() {
            if fits(cand) && inst.answer_at(cand) == inst.answer_text {
                inst.answer_start = cand;
                return;
            }
        }
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = raw
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(line.saturating_sub(2))
        .map_or(0, |(i, _)| i + 1);
    let start = if line == 1 { 0 } else { line_start };
    (start + column.saturating_sub(1)).min(raw.len())
}

/// Serializes a dataset back into SQuAD v1.1 layout. Consecutive instances
/// with the same context share a paragraph; the full instance id is used as
/// the qa id.
pub fn to_squad_json(dataset: &Dataset) -> Result<String> {
    let mut paragraphs: Vec<SquadParagraph> = Vec::new();
    for inst in dataset.instances() {
        let qa = SquadQa {
            id: inst.id.clone(),
            question: inst.question.clone(),
            answers: vec![SquadAnswer {
                text: inst.answer_text.clone(),
                answer_start: inst.answer_start,
            }],
        };
        match paragraphs.last_mut() {
            Some(last) if last.context == inst.context => last.qas.push(qa),
            _ => paragraphs.push(SquadParagraph {
                context: inst.context.clone(),
                qas: vec![qa],
            }),
        }
    }
    let file = SquadFile {
        version: Some("1.1".into()),
        data: vec![SquadArticle {
            title: None,
            paragraphs,
        }],
    };
    Ok(serde_json::to_string(&file)?)
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str, line_no: usize) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(Error::Parse {
                    offset: line_no,
                    message: format!("line {line_no}: bad escape sequence \\{other:?}"),
                })
            }
        }
    }
    Ok(out)
}

/// Writes the tab-separated dump: `id, question, context, answer, char_start`.
pub fn write_dump<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for inst in dataset.instances() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            escape_field(&inst.id),
            escape_field(&inst.question),
            escape_field(&inst.context),
            escape_field(&inst.answer_text),
            inst.answer_start
        )?;
    }
    Ok(())
}

/// Reads the format produced by [`write_dump`].
pub fn read_dump<R: BufRead>(input: R) -> Result<Dataset> {
    let mut instances = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let line_no = n + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                offset: line_no,
                message: format!("line {line_no}: expected 5 fields, got {}", fields.len()),
            });
        }
        let answer_start = fields[4].parse().map_err(|_| Error::Parse {
            offset: line_no,
            message: format!("line {line_no}: bad char_start {:?}", fields[4]),
        })?;
        instances.push(QAInstance {
            id: unescape_field(fields[0], line_no)?,
            question: unescape_field(fields[1], line_no)?,
            context: unescape_field(fields[2], line_no)?,
            answer_text: unescape_field(fields[3], line_no)?,
            answer_start,
        });
    }
    Dataset::new(instances)
}
