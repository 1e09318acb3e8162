//! Paired-sentence bias datasets.
//!
//! A corpus is a flat list of [`SentenceRecord`]s. Records sharing a
//! `pair_id` form a [`SentencePair`]; a pair may hold several sentences per
//! side when paraphrases are linked to an original through `paraphrase_of`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Read;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

/// Category assigned to every record when the input has no category column.
pub const UNCATEGORIZED: &str = "uncategorized";

const REQUIRED: [&str; 5] = ["id", "pair_id", "group", "category", "text"];
const KNOWN: [&str; 6] = ["id", "pair_id", "group", "category", "text", "paraphrase_of"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: input is not valid UTF-8")]
    Utf8 { line: usize },
    #[error("line {line}: malformed row: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { field: String, line: usize },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: invalid group `{value}` (expected `base` or `stereotype`)")]
    InvalidGroup { value: String, line: usize },
    #[error("line {line}: record `{id}` is a paraphrase of unknown record `{target}`")]
    DanglingParaphrase { id: String, target: String, line: usize },
    #[error("paraphrase cycle: {}", .0.join(" -> "))]
    ParaphraseCycle(Vec<String>),
    #[error("unsupported dataset format `{0}`")]
    UnknownFormat(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Base,
    Stereotype,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Base => "base",
            Group::Stereotype => "stereotype",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        match value {
            "base" => Some(Group::Base),
            "stereotype" => Some(Group::Stereotype),
            _ => None,
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Group::Base => Group::Stereotype,
            Group::Stereotype => Group::Base,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

/// One benchmark sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub pair_id: String,
    pub group: Group,
    pub category: String,
    pub text: String,
    #[serde(default)]
    pub paraphrase_of: Option<String>,
    /// Metadata columns beyond the required ones, in input order.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub extra: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentencePair {
    pub pair_id: String,
    pub base_ids: Vec<String>,
    pub stereotype_ids: Vec<String>,
    pub category: String,
}

impl SentencePair {
    pub fn ids(&self, group: Group) -> &[String] {
        match group {
            Group::Base => &self.base_ids,
            Group::Stereotype => &self.stereotype_ids,
        }
    }

    pub fn members(&self) -> impl Iterator<Item = &String> {
        self.base_ids.iter().chain(self.stereotype_ids.iter())
    }
}

/// An immutable, indexed collection of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<SentenceRecord>,
    pairs: Vec<SentencePair>,
    categories: Vec<String>,
    columns: Vec<String>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, deriving pairs and categories. Fails only on duplicate ids;
    /// semantic problems are reported by [`validate`].
    pub fn new(records: Vec<SentenceRecord>, columns: Vec<String>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            if index.insert(record.id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId { id: record.id.clone(), line: i + 1 });
            }
        }

        let mut pairs: IndexMap<&str, SentencePair> = IndexMap::new();
        let mut categories: Vec<String> = Vec::new();
        for record in &records {
            if !categories.contains(&record.category) {
                categories.push(record.category.clone());
            }
            let pair = pairs.entry(record.pair_id.as_str()).or_insert_with(|| SentencePair {
                pair_id: record.pair_id.clone(),
                base_ids: Vec::new(),
                stereotype_ids: Vec::new(),
                category: record.category.clone(),
            });
            match record.group {
                Group::Base => pair.base_ids.push(record.id.clone()),
                Group::Stereotype => pair.stereotype_ids.push(record.id.clone()),
            }
        }
        let pairs = pairs.into_values().collect();

        Ok(Corpus { records, pairs, categories, columns, index })
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SentenceRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }

    /// Returns a copy with every record's group flipped.
    pub fn with_swapped_groups(&self) -> Corpus {
        let records = self
            .records
            .iter()
            .cloned()
            .map(|mut r| {
                r.group = r.group.swapped();
                r
            })
            .collect();
        Corpus::new(records, self.columns.clone()).expect("ids unchanged")
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusRepr {
    columns: Vec<String>,
    records: Vec<SentenceRecord>,
}

impl Serialize for Corpus {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CorpusRepr { columns: self.columns.clone(), records: self.records.clone() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Corpus {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = CorpusRepr::deserialize(deserializer)?;
        Corpus::new(repr.records, repr.columns).map_err(serde::de::Error::custom)
    }
}

/// Parses a dataset stream into a corpus.
pub fn parse_dataset<R: Read>(mut input: R, format: Format) -> Result<Corpus, DatasetError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let text = match String::from_utf8(bytes) {
        Ok(text) => text,
        Err(err) => {
            let valid = &err.as_bytes()[..err.utf8_error().valid_up_to()];
            let line = valid.iter().filter(|&&b| b == b'\n').count() + 1;
            return Err(DatasetError::Utf8 { line });
        }
    };
    let rows = match format {
        Format::Jsonl => jsonl_rows(&text)?,
        Format::Csv => csv_rows(&text)?,
    };
    build_corpus(rows)
}

pub fn parse_dataset_str(text: &str, format: Format) -> Result<Corpus, DatasetError> {
    parse_dataset(text.as_bytes(), format)
}

struct RawRow {
    line: usize,
    fields: IndexMap<String, String>,
    paraphrase_of: Option<String>,
}

fn jsonl_rows(text: &str) -> Result<Vec<RawRow>, DatasetError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| DatasetError::Malformed { line: line_no, message: e.to_string() })?;
        let Value::Object(map) = value else {
            return Err(DatasetError::Malformed { line: line_no, message: "expected a JSON object".into() });
        };
        let mut fields = IndexMap::new();
        let mut paraphrase_of = None;
        for (key, value) in map {
            if key == "paraphrase_of" {
                paraphrase_of = match value {
                    Value::Null => None,
                    Value::String(s) if s.is_empty() => None,
                    Value::String(s) => Some(s),
                    other => Some(other.to_string()),
                };
                continue;
            }
            let text = match value {
                Value::String(s) => s,
                Value::Null => continue,
                other => other.to_string(),
            };
            fields.insert(key, text);
        }
        rows.push(RawRow { line: line_no, fields, paraphrase_of });
    }
    Ok(rows)
}

fn csv_rows(text: &str) -> Result<Vec<RawRow>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut fields = IndexMap::new();
        let mut paraphrase_of = None;
        for (key, value) in headers.iter().zip(record.iter()) {
            if key == "paraphrase_of" {
                paraphrase_of = (!value.is_empty()).then(|| value.to_string());
            } else {
                fields.insert(key.to_string(), value.to_string());
            }
        }
        rows.push(RawRow { line, fields, paraphrase_of });
    }
    Ok(rows)
}

fn build_corpus(rows: Vec<RawRow>) -> Result<Corpus, DatasetError> {
    // An input with no category anywhere is treated as a single implicit category.
    let has_categories = rows.iter().any(|r| r.fields.contains_key("category"));

    let mut columns: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::with_capacity(rows.len());
    let mut lines = Vec::with_capacity(rows.len());

    for mut row in rows {
        for field in REQUIRED {
            if field == "category" && !has_categories {
                continue;
            }
            if !row.fields.contains_key(field) {
                return Err(DatasetError::MissingField { field: field.to_string(), line: row.line });
            }
        }
        let id = row.fields.shift_remove("id").unwrap_or_default();
        if seen.contains_key(&id) {
            return Err(DatasetError::DuplicateId { id, line: row.line });
        }
        seen.insert(id.clone(), row.line);
        let group_raw = row.fields.shift_remove("group").unwrap_or_default();
        let group = Group::parse(group_raw.trim())
            .ok_or(DatasetError::InvalidGroup { value: group_raw, line: row.line })?;
        let pair_id = row.fields.shift_remove("pair_id").unwrap_or_default();
        let category = row.fields.shift_remove("category").unwrap_or_else(|| UNCATEGORIZED.to_string());
        let text = row.fields.shift_remove("text").unwrap_or_default();
        let extra: IndexMap<String, String> =
            row.fields.into_iter().filter(|(k, _)| !KNOWN.contains(&k.as_str())).collect();
        for key in extra.keys() {
            if !columns.contains(key) {
                columns.push(key.clone());
            }
        }
        lines.push(row.line);
        records.push(SentenceRecord {
            id,
            pair_id,
            group,
            category,
            text,
            paraphrase_of: row.paraphrase_of,
            extra,
        });
    }

    for (record, &line) in records.iter().zip(&lines) {
        if let Some(target) = &record.paraphrase_of {
            if !seen.contains_key(target) {
                return Err(DatasetError::DanglingParaphrase {
                    id: record.id.clone(),
                    target: target.clone(),
                    line,
                });
            }
        }
    }

    Corpus::new(records, columns)
}

/// Serializes to the canonical JSON-lines form.
pub fn to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for record in corpus.records() {
        let mut map = serde_json::Map::new();
        map.insert("id".into(), Value::String(record.id.clone()));
        map.insert("pair_id".into(), Value::String(record.pair_id.clone()));
        map.insert("group".into(), Value::String(record.group.as_str().into()));
        map.insert("category".into(), Value::String(record.category.clone()));
        map.insert("text".into(), Value::String(record.text.clone()));
        map.insert(
            "paraphrase_of".into(),
            record.paraphrase_of.clone().map(Value::String).unwrap_or(Value::Null),
        );
        for (k, v) in &record.extra {
            map.insert(k.clone(), Value::String(v.clone()));
        }
        out.push_str(&Value::Object(map).to_string());
        out.push('\n');
    }
    out
}

pub fn to_csv(corpus: &Corpus) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = KNOWN.to_vec();
    header.extend(corpus.columns().iter().map(String::as_str));
    writer.write_record(&header).expect("in-memory write");
    for r in corpus.records() {
        let mut row: Vec<&str> = vec![
            &r.id,
            &r.pair_id,
            r.group.as_str(),
            &r.category,
            &r.text,
            r.paraphrase_of.as_deref().unwrap_or(""),
        ];
        for col in corpus.columns() {
            row.push(r.extra.get(col).map(String::as_str).unwrap_or(""));
        }
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn serialize(corpus: &Corpus, format: Format) -> String {
    match format {
        Format::Jsonl => to_jsonl(corpus),
        Format::Csv => to_csv(corpus),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub record_id: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn error(record_id: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, record_id: Some(record_id.into()), message: message.into() }
    }
}

/// Checks every record and pair invariant. An empty result means the corpus is valid.
pub fn validate(corpus: &Corpus) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    for record in corpus.records() {
        if record.text.trim().is_empty() {
            out.push(Diagnostic::error(&record.id, format!("record {} has empty text", record.id)));
        }
        if let Some(target) = &record.paraphrase_of {
            match corpus.get(target) {
                None => out.push(Diagnostic::error(
                    &record.id,
                    format!("record {} is a paraphrase of unknown record {target}", record.id),
                )),
                Some(original) => {
                    if original.pair_id != record.pair_id
                        || original.group != record.group
                        || original.category != record.category
                    {
                        out.push(Diagnostic::error(
                            &record.id,
                            format!(
                                "record {} is a paraphrase of {target} but differs in pair, group or category",
                                record.id
                            ),
                        ));
                    }
                }
            }
        }
    }

    if let Err(DatasetError::ParaphraseCycle(cycle)) = paraphrase_groups(corpus) {
        out.push(Diagnostic::error(&cycle[0], format!("paraphrase cycle: {}", cycle.join(" -> "))));
    }

    for pair in corpus.pairs() {
        let anchor = pair.members().next().cloned().unwrap_or_default();
        if pair.base_ids.is_empty() {
            out.push(Diagnostic::error(&anchor, format!("pair {} has no base sentence", pair.pair_id)));
        }
        if pair.stereotype_ids.is_empty() {
            out.push(Diagnostic::error(&anchor, format!("pair {} has no stereotype sentence", pair.pair_id)));
        }
        for id in pair.members() {
            if let Some(r) = corpus.get(id) {
                if r.category != pair.category {
                    out.push(Diagnostic::error(
                        id,
                        format!(
                            "record {id} has category {} but pair {} is {}",
                            r.category, pair.pair_id, pair.category
                        ),
                    ));
                }
            }
        }
    }
    out
}

/// Maps each original record to itself plus every record whose `paraphrase_of`
/// chain resolves to it. Keys follow corpus order; each group lists the
/// original first, then members in corpus order.
pub fn paraphrase_groups(corpus: &Corpus) -> Result<IndexMap<String, Vec<String>>, DatasetError> {
    let mut roots: HashMap<&str, &str> = HashMap::new();
    for record in corpus.records() {
        if roots.contains_key(record.id.as_str()) {
            continue;
        }
        let mut path: Vec<&str> = Vec::new();
        let mut on_path: HashSet<&str> = HashSet::new();
        let mut current = record.id.as_str();
        let root = loop {
            if let Some(&root) = roots.get(current) {
                break root;
            }
            if !on_path.insert(current) {
                let start = path.iter().position(|&p| p == current).unwrap_or(0);
                let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                cycle.push(current.to_string());
                return Err(DatasetError::ParaphraseCycle(cycle));
            }
            path.push(current);
            match corpus.get(current).and_then(|r| r.paraphrase_of.as_deref()) {
                Some(next) if corpus.contains(next) => current = next,
                _ => break current,
            }
        };
        for id in path {
            roots.insert(id, root);
        }
    }

    let mut groups: IndexMap<String, Vec<String>> = IndexMap::new();
    for record in corpus.records() {
        if roots[record.id.as_str()] == record.id {
            groups.insert(record.id.clone(), vec![record.id.clone()]);
        }
    }
    for record in corpus.records() {
        let root = roots[record.id.as_str()];
        if root != record.id {
            groups.get_mut(root).expect("root is a record").push(record.id.clone());
        }
    }
    Ok(groups)
}
