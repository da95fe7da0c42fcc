//! Typed-mention datasets, the type hierarchy, and clean/noisy bifurcation.
//!
//! Input is line-delimited JSON, one sentence per line:
//!
//! ```text
//! {"tokens": ["Trump", "directed", "it"],
//!  "mentions": [{"start": 0, "end": 1, "labels": ["/person/director"]}],
//!  "split": "train"}
//! ```
//!
//! `split` is optional; records without it take the split supplied by the
//! caller. Spans are half-open token ranges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TypeId = usize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{source_name}: empty dataset")]
    Empty { source_name: String },
    #[error("{}", format_line_errors(.0))]
    Malformed(Vec<LineError>),
    #[error("invalid type path {0:?}")]
    BadTypePath(String),
    #[error("mention {0} has no labels")]
    Unlabeled(usize),
    #[error("mention {0} is not a training mention")]
    NotTrain(usize),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A rejected input line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    pub source_name: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.source_name, self.line, self.message)
    }
}

fn format_line_errors(errors: &[LineError]) -> String {
    let mut out = format!("{} malformed record(s)", errors.len());
    for e in errors {
        out.push_str("\n  ");
        out.push_str(&e.to_string());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cleanliness {
    Clean,
    Noisy,
}

/// Parses `"/person/athlete"` into `["person", "athlete"]`.
pub fn parse_type_path(s: &str) -> Result<Vec<String>, CorpusError> {
    let rest = s
        .strip_prefix('/')
        .ok_or_else(|| CorpusError::BadTypePath(s.to_string()))?;
    let segs: Vec<String> = rest.split('/').map(str::to_string).collect();
    if segs.iter().any(|seg| seg.is_empty() || seg.trim() != seg) {
        return Err(CorpusError::BadTypePath(s.to_string()));
    }
    Ok(segs)
}

fn join_path(segs: &[String]) -> String {
    let mut s = String::new();
    for seg in segs {
        s.push('/');
        s.push_str(seg);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeLabel {
    pub id: TypeId,
    pub path: Vec<String>,
}

impl TypeLabel {
    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn name(&self) -> String {
        join_path(&self.path)
    }
}

impl fmt::Display for TypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A forest of slash-path types.
///
/// Ids follow lexicographic order of the segment lists, so every parent has
/// a smaller id than its children and the numbering does not depend on the
/// order in which labels were first seen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeHierarchy {
    types: Vec<TypeLabel>,
    parent: Vec<Option<TypeId>>,
    children: Vec<Vec<TypeId>>,
    roots: Vec<TypeId>,
    by_name: BTreeMap<String, TypeId>,
}

impl TypeHierarchy {
    /// Closes `paths` under prefixes and numbers the result. Returns the
    /// hierarchy and the names of prefix types that were not listed.
    pub fn from_paths<I>(paths: I) -> (Self, Vec<String>)
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let listed: BTreeSet<Vec<String>> = paths.into_iter().filter(|p| !p.is_empty()).collect();
        let mut all = listed.clone();
        for p in &listed {
            for k in 1..p.len() {
                all.insert(p[..k].to_vec());
            }
        }
        let synthesized = all
            .iter()
            .filter(|p| !listed.contains(*p))
            .map(|p| join_path(p))
            .collect();

        let types: Vec<TypeLabel> = all
            .into_iter()
            .enumerate()
            .map(|(id, path)| TypeLabel { id, path })
            .collect();
        let by_name: BTreeMap<String, TypeId> = types.iter().map(|t| (t.name(), t.id)).collect();
        let parent: Vec<Option<TypeId>> = types
            .iter()
            .map(|t| (t.depth() > 1).then(|| by_name[&join_path(&t.path[..t.depth() - 1])]))
            .collect();
        let mut children = vec![Vec::new(); types.len()];
        let mut roots = Vec::new();
        for (id, p) in parent.iter().enumerate() {
            match p {
                Some(p) => children[*p].push(id),
                None => roots.push(id),
            }
        }
        (
            Self {
                types,
                parent,
                children,
                roots,
                by_name,
            },
            synthesized,
        )
    }

    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self, CorpusError> {
        let paths = names
            .into_iter()
            .map(parse_type_path)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_paths(paths).0)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[TypeLabel] {
        &self.types
    }

    pub fn label(&self, id: TypeId) -> &TypeLabel {
        &self.types[id]
    }

    pub fn id_of(&self, name: &str) -> Option<TypeId> {
        self.by_name.get(name).copied()
    }

    pub fn parent(&self, id: TypeId) -> Option<TypeId> {
        self.parent[id]
    }

    pub fn children(&self, id: TypeId) -> &[TypeId] {
        &self.children[id]
    }

    pub fn roots(&self) -> &[TypeId] {
        &self.roots
    }

    pub fn depth(&self, id: TypeId) -> usize {
        self.types[id].depth()
    }

    pub fn max_depth(&self) -> usize {
        self.types.iter().map(TypeLabel::depth).max().unwrap_or(0)
    }

    /// Strict ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: TypeId) -> impl Iterator<Item = TypeId> + '_ {
        std::iter::successors(self.parent[id], move |&p| self.parent[p])
    }

    pub fn is_ancestor(&self, ancestor: TypeId, of: TypeId) -> bool {
        self.ancestors(of).any(|a| a == ancestor)
    }

    /// `labels` plus all their ancestors, sorted.
    pub fn closure(&self, labels: &[TypeId]) -> Vec<TypeId> {
        let mut set: BTreeSet<TypeId> = labels.iter().copied().collect();
        for &l in labels {
            set.extend(self.ancestors(l));
        }
        set.into_iter().collect()
    }

    pub fn names(&self, labels: &[TypeId]) -> Vec<String> {
        labels.iter().map(|&l| self.types[l].name()).collect()
    }
}

/// One annotated entity occurrence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: usize,
    /// Index of the sentence record the mention came from.
    pub record: usize,
    pub start: usize,
    pub end: usize,
    /// Sorted, deduplicated type ids.
    pub labels: Vec<TypeId>,
    pub split: Split,
}

impl Mention {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Y-dimensional 0/1 label vector.
    pub fn indicator(&self, type_count: usize) -> Vec<bool> {
        let mut v = vec![false; type_count];
        for &l in &self.labels {
            v[l] = true;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub tokens: Vec<String>,
    pub split: Split,
}

/// All loaded records and mentions, with the hierarchy they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub mentions: Vec<Mention>,
    pub hierarchy: TypeHierarchy,
}

impl Corpus {
    pub fn sentence(&self, mention: &Mention) -> &[String] {
        &self.records[mention.record].tokens
    }

    pub fn mention_tokens(&self, mention: &Mention) -> &[String] {
        &self.sentence(mention)[mention.start..mention.end]
    }

    pub fn type_count(&self) -> usize {
        self.hierarchy.len()
    }

    pub fn ids_in(&self, split: Split) -> Vec<usize> {
        self.mentions
            .iter()
            .filter(|m| m.split == split)
            .map(|m| m.id)
            .collect()
    }

    /// Cleanliness of every training mention, `None` for other splits.
    pub fn cleanliness(&self) -> Result<Vec<Option<Cleanliness>>, CorpusError> {
        self.mentions
            .iter()
            .map(|m| {
                if m.split == Split::Train {
                    bifurcate(m, &self.hierarchy).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    /// Percentage of clean mentions among training mentions.
    pub fn clean_percentage(&self) -> Result<f64, CorpusError> {
        let tags = self.cleanliness()?;
        let train = tags.iter().flatten().count();
        if train == 0 {
            return Ok(0.0);
        }
        let clean = tags
            .iter()
            .flatten()
            .filter(|t| **t == Cleanliness::Clean)
            .count();
        Ok(100.0 * clean as f64 / train as f64)
    }

    /// Percentage of labeled mentions in `split` whose labels form one chain.
    pub fn chain_percentage(&self, split: Split) -> f64 {
        let labeled: Vec<&Mention> = self
            .mentions
            .iter()
            .filter(|m| m.split == split && !m.labels.is_empty())
            .collect();
        if labeled.is_empty() {
            return 0.0;
        }
        let clean = labeled
            .iter()
            .filter(|m| chain_tag(&m.labels, &self.hierarchy) == Cleanliness::Clean)
            .count();
        100.0 * clean as f64 / labeled.len() as f64
    }

    /// Writes the corpus back out in the line-delimited input format.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        let mut by_record: Vec<Vec<&Mention>> = vec![Vec::new(); self.records.len()];
        for m in &self.mentions {
            by_record[m.record].push(m);
        }
        for (rec, mentions) in self.records.iter().zip(by_record) {
            let raw = RawRecord {
                tokens: rec.tokens.clone(),
                mentions: mentions
                    .into_iter()
                    .map(|m| RawMention {
                        start: m.start,
                        end: m.end,
                        labels: self.hierarchy.names(&m.labels),
                    })
                    .collect(),
                split: Some(rec.split.as_str().to_string()),
            };
            serde_json::to_writer(&mut w, &raw).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

const BUNDLE_MAGIC: [u8; 4] = *b"TFCB";

#[derive(Serialize, Deserialize)]
struct Bundle {
    records: Vec<Record>,
    mentions: Vec<Mention>,
    types: Vec<String>,
}

impl Corpus {
    /// Binary snapshot of the parsed corpus (magic `TFCB`, then bincode).
    pub fn write_bundle<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        w.write_all(&BUNDLE_MAGIC)?;
        let bundle = Bundle {
            records: self.records.clone(),
            mentions: self.mentions.clone(),
            types: self.hierarchy.types().iter().map(TypeLabel::name).collect(),
        };
        bincode::serialize_into(w, &bundle).map_err(bincode_io)
    }

    pub fn read_bundle<R: std::io::Read>(mut r: R) -> Result<Self, CorpusError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != BUNDLE_MAGIC {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "not a corpus bundle",
            )
            .into());
        }
        let bundle: Bundle = bincode::deserialize_from(r).map_err(bincode_io)?;
        let hierarchy = TypeHierarchy::from_names(bundle.types.iter().map(String::as_str))?;
        if hierarchy.len() != bundle.types.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "type list is not prefix-closed",
            )
            .into());
        }
        Ok(Self {
            records: bundle.records,
            mentions: bundle.mentions,
            hierarchy,
        })
    }
}

// `bincode::Error` is a boxed kind; the box comes with the type.
#[allow(clippy::boxed_local)]
fn bincode_io(e: bincode::Error) -> CorpusError {
    match *e {
        bincode::ErrorKind::Io(io) => CorpusError::Io(io),
        other => CorpusError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            other.to_string(),
        )),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawRecord {
    pub tokens: Vec<String>,
    pub mentions: Vec<RawMention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawMention {
    pub start: usize,
    pub end: usize,
    pub labels: Vec<String>,
}

struct PendingMention {
    record: usize,
    start: usize,
    end: usize,
    labels: Vec<Vec<String>>,
    split: Split,
}

/// Accumulates records from one or more sources; type ids are assigned once
/// every source has been read.
#[derive(Default)]
pub struct CorpusBuilder {
    records: Vec<Record>,
    pending: Vec<PendingMention>,
    errors: Vec<LineError>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads one source. Bad records are collected and reported by
    /// [`Self::finish`]; an empty source fails immediately.
    pub fn add_source<R: BufRead>(
        &mut self,
        source_name: &str,
        reader: R,
        default_split: Option<Split>,
    ) -> Result<&mut Self, CorpusError> {
        let mut seen = 0usize;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            seen += 1;
            let line_no = idx + 1;
            if let Err(message) = self.add_line(&line, default_split) {
                self.errors.push(LineError {
                    source_name: source_name.to_string(),
                    line: line_no,
                    message,
                });
            }
        }
        if seen == 0 {
            return Err(CorpusError::Empty {
                source_name: source_name.to_string(),
            });
        }
        Ok(self)
    }

    fn add_line(&mut self, line: &str, default_split: Option<Split>) -> Result<(), String> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| format!("bad record: {e}"))?;
        let split = match (&raw.split, default_split) {
            (Some(s), _) => s.parse::<Split>().map_err(|e| e.to_string())?,
            (None, Some(s)) => s,
            (None, None) => return Err("record has no split and none was given".into()),
        };
        let n = raw.tokens.len();
        let mut mentions = Vec::with_capacity(raw.mentions.len());
        for (k, m) in raw.mentions.iter().enumerate() {
            if !(m.start < m.end && m.end <= n) {
                return Err(format!(
                    "mention {k}: span [{}, {}) out of range for {n} tokens",
                    m.start, m.end
                ));
            }
            if split == Split::Train && m.labels.is_empty() {
                return Err(format!("mention {k}: training mention without labels"));
            }
            let labels = m
                .labels
                .iter()
                .map(|l| parse_type_path(l))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("mention {k}: {e}"))?;
            mentions.push((m.start, m.end, labels));
        }
        let record = self.records.len();
        self.records.push(Record {
            tokens: raw.tokens,
            split,
        });
        self.pending.extend(
            mentions
                .into_iter()
                .map(|(start, end, labels)| PendingMention {
                    record,
                    start,
                    end,
                    labels,
                    split,
                }),
        );
        Ok(())
    }

    /// Builds the hierarchy and assigns dense mention ids in input order.
    pub fn finish(self) -> Result<ParsedDataset, CorpusError> {
        if !self.errors.is_empty() {
            return Err(CorpusError::Malformed(self.errors));
        }
        let (hierarchy, synthesized) =
            TypeHierarchy::from_paths(self.pending.iter().flat_map(|m| m.labels.iter().cloned()));
        let warnings = synthesized
            .into_iter()
            .map(|name| format!("type {name} is implied by a label but never listed; added"))
            .collect::<Vec<_>>();
        for w in &warnings {
            log::warn!("{w}");
        }
        let mentions = self
            .pending
            .into_iter()
            .enumerate()
            .map(|(id, p)| {
                let mut labels: Vec<TypeId> = p
                    .labels
                    .iter()
                    .map(|path| hierarchy.id_of(&join_path(path)).expect("closed hierarchy"))
                    .collect();
                labels.sort_unstable();
                labels.dedup();
                Mention {
                    id,
                    record: p.record,
                    start: p.start,
                    end: p.end,
                    labels,
                    split: p.split,
                }
            })
            .collect();
        Ok(ParsedDataset {
            corpus: Corpus {
                records: self.records,
                mentions,
                hierarchy,
            },
            warnings,
        })
    }
}

#[derive(Debug)]
pub struct ParsedDataset {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

/// Parses a single line-delimited source.
pub fn parse_dataset<R: BufRead>(
    reader: R,
    default_split: Option<Split>,
) -> Result<ParsedDataset, CorpusError> {
    let mut b = CorpusBuilder::new();
    b.add_source("<input>", reader, default_split)?;
    b.finish()
}

/// Clean iff the labels, closed under ancestors, lie on one root-to-node path.
pub fn bifurcate(mention: &Mention, hierarchy: &TypeHierarchy) -> Result<Cleanliness, CorpusError> {
    if mention.split != Split::Train {
        return Err(CorpusError::NotTrain(mention.id));
    }
    if mention.labels.is_empty() {
        return Err(CorpusError::Unlabeled(mention.id));
    }
    Ok(chain_tag(&mention.labels, hierarchy))
}

pub(crate) fn chain_tag(labels: &[TypeId], hierarchy: &TypeHierarchy) -> Cleanliness {
    let deepest = *labels
        .iter()
        .max_by_key(|&&l| (hierarchy.depth(l), std::cmp::Reverse(l)))
        .expect("nonempty labels");
    let on_chain = labels
        .iter()
        .all(|&l| l == deepest || hierarchy.is_ancestor(l, deepest));
    if on_chain {
        Cleanliness::Clean
    } else {
        Cleanliness::Noisy
    }
}
