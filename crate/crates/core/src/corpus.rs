//! Case records, corpus ingestion and the summarise-and-extract-verdict
//! preprocessing protocol.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Preprocessing instruction; `[Case Description...]` is replaced by the case text.
pub const PREPROCESS_TEMPLATE: &str = include_str!("../templates/preprocess.txt");
pub const CASE_DESCRIPTION_SLOT: &str = "[Case Description...]";

pub const DETAIL_LABEL: &str = "Case Detail: ";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: duplicate case id {id:?} (first seen on line {first_line})")]
    DuplicateId { id: String, line: usize, first_line: usize },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PreprocessError {
    #[error("case detail is empty")]
    EmptyDetail,
    #[error("response is missing the {marker:?} marker: {response:?}")]
    MissingMarker { marker: &'static str, response: String },
    #[error("response has an empty summary: {response:?}")]
    EmptySummary { response: String },
    #[error("unmapped verdict label {0:?}")]
    UnmappedVerdict(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

/// Identifier of a case, unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CaseId(String);

impl CaseId {
    pub fn new(value: impl Into<String>) -> Result<Self, String> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err("case id must be non-empty".into());
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CaseId {
    type Error = String;
    fn try_from(value: String) -> Result<Self, String> {
        Self::new(value)
    }
}

impl From<CaseId> for String {
    fn from(id: CaseId) -> String {
        id.0
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    PlaintiffWin,
    DefendantWin,
    Settlement,
    CaseDismissal,
    Unsure,
}

impl Verdict {
    /// The four outcomes usable for training and judgment prediction.
    pub const OUTCOMES: [Verdict; 4] = [
        Verdict::PlaintiffWin,
        Verdict::DefendantWin,
        Verdict::Settlement,
        Verdict::CaseDismissal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Verdict::PlaintiffWin => "Plaintiff Wins",
            Verdict::DefendantWin => "Defendant Wins",
            Verdict::Settlement => "Settlement",
            Verdict::CaseDismissal => "Case Dismissal",
            Verdict::Unsure => "Unsure",
        }
    }

    pub fn is_outcome(self) -> bool {
        self != Verdict::Unsure
    }

    /// Position in [`Verdict::OUTCOMES`]; `None` for `Unsure`.
    pub fn outcome_index(self) -> Option<usize> {
        Self::OUTCOMES.iter().position(|v| *v == self)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        normalize_verdict(&text).map_err(serde::de::Error::custom)
    }
}

const VERDICT_KEYWORDS: [(&str, Verdict); 5] = [
    ("plaintiff", Verdict::PlaintiffWin),
    ("defendant", Verdict::DefendantWin),
    ("settle", Verdict::Settlement),
    ("dismiss", Verdict::CaseDismissal),
    ("unsure", Verdict::Unsure),
];

/// Every verdict whose keyword occurs in `text`, in precedence order.
pub fn verdict_keyword_matches(text: &str) -> Vec<Verdict> {
    let folded = text.trim().to_lowercase();
    VERDICT_KEYWORDS
        .iter()
        .filter(|(kw, _)| folded.contains(kw))
        .map(|(_, v)| *v)
        .collect()
}

/// Maps a free-form verdict label onto [`Verdict`]. The first keyword in
/// precedence order wins; text with no keyword is an error.
pub fn normalize_verdict(text: &str) -> Result<Verdict, PreprocessError> {
    verdict_keyword_matches(text)
        .first()
        .copied()
        .ok_or_else(|| PreprocessError::UnmappedVerdict(text.to_string()))
}

fn is_default<T: Default + PartialEq>(value: &T) -> bool {
    *value == T::default()
}

/// A case as exported from the source database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCase {
    pub id: CaseId,
    pub title: String,
    pub date: NaiveDate,
    #[serde(default)]
    pub judge: String,
    #[serde(default)]
    pub plaintiffs: Vec<String>,
    #[serde(default)]
    pub plaintiff_attorneys: Vec<String>,
    #[serde(default)]
    pub defendants: Vec<String>,
    #[serde(default)]
    pub defendant_attorneys: Vec<String>,
    pub case_detail: String,
    #[serde(default)]
    pub precedent_ids: Vec<CaseId>,
    /// Known outcome, read by the extractive preprocessor in place of a model.
    #[serde(default, skip_serializing_if = "is_default")]
    pub verdict: Option<Verdict>,
}

impl RawCase {
    pub fn validate(&self) -> Result<(), String> {
        if self.title.trim().is_empty() {
            return Err(format!("case {}: empty title", self.id));
        }
        check_precedents(&self.id, &self.precedent_ids)
    }
}

fn check_precedents(id: &CaseId, precedents: &[CaseId]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for p in precedents {
        if p == id {
            return Err(format!("case {id}: cites itself as precedent"));
        }
        if !seen.insert(p) {
            return Err(format!("case {id}: duplicate precedent {p}"));
        }
    }
    Ok(())
}

/// Line-level problem found while parsing a corpus. The line is skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ParsedCorpus {
    pub cases: Vec<RawCase>,
    pub errors: Vec<RecordError>,
}

pub fn parse_corpus(path: &Path) -> Result<ParsedCorpus, CorpusError> {
    let unreadable = |source| CorpusError::Unreadable { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(unreadable)?;
    parse_corpus_reader(std::io::BufReader::new(file))
        .map_err(|e| match e {
            ReadError::Io(source) => unreadable(source),
            ReadError::Corpus(e) => e,
        })
}

enum ReadError {
    Io(std::io::Error),
    Corpus(CorpusError),
}

fn parse_corpus_reader<R: BufRead>(reader: R) -> Result<ParsedCorpus, ReadError> {
    let mut out = ParsedCorpus::default();
    let mut first_seen: HashMap<CaseId, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(ReadError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let case: RawCase = match serde_json::from_str(&line) {
            Ok(case) => case,
            Err(e) => {
                out.errors.push(RecordError { line: line_no, message: e.to_string() });
                continue;
            }
        };
        if let Err(message) = case.validate() {
            out.errors.push(RecordError { line: line_no, message });
            continue;
        }
        if let Some(first_line) = first_seen.get(&case.id) {
            return Err(ReadError::Corpus(CorpusError::DuplicateId {
                id: case.id.to_string(),
                line: line_no,
                first_line: *first_line,
            }));
        }
        first_seen.insert(case.id.clone(), line_no);
        out.cases.push(case);
    }
    Ok(out)
}

/// Parses corpus text held in memory; same rules as [`parse_corpus`].
pub fn parse_corpus_str(text: &str) -> Result<ParsedCorpus, CorpusError> {
    parse_corpus_reader(text.as_bytes()).map_err(|e| match e {
        ReadError::Io(source) => CorpusError::Unreadable { path: "<memory>".into(), source },
        ReadError::Corpus(e) => e,
    })
}

pub fn serialize_corpus(cases: &[RawCase]) -> Vec<u8> {
    crate::io::to_jsonl(cases)
}

pub fn build_preprocess_prompt(raw: &RawCase) -> Result<String, PreprocessError> {
    if raw.case_detail.trim().is_empty() {
        return Err(PreprocessError::EmptyDetail);
    }
    Ok(PREPROCESS_TEMPLATE.replace(CASE_DESCRIPTION_SLOT, &raw.case_detail))
}

const ANSWER_1: &str = "Answer 1:";
const ANSWER_2: &str = "Answer 2:";

/// Splits a preprocessing response into `(summary, verdict)`.
pub fn parse_preprocess_response(response: &str) -> Result<(String, Verdict), PreprocessError> {
    let missing = |marker| PreprocessError::MissingMarker { marker, response: response.to_string() };
    let start = response.find(ANSWER_1).ok_or_else(|| missing(ANSWER_1))?;
    let body = &response[start + ANSWER_1.len()..];
    let split = body.find(ANSWER_2).ok_or_else(|| missing(ANSWER_2))?;
    let summary = body[..split].trim();
    if summary.is_empty() {
        return Err(PreprocessError::EmptySummary { response: response.to_string() });
    }
    let verdict = normalize_verdict(&body[split + ANSWER_2.len()..])?;
    Ok((summary.to_string(), verdict))
}

/// A case after summarisation, paired with its extracted verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedCase {
    pub id: CaseId,
    pub title: String,
    pub date: NaiveDate,
    #[serde(default)]
    pub judge: String,
    #[serde(default)]
    pub plaintiffs: Vec<String>,
    #[serde(default)]
    pub plaintiff_attorneys: Vec<String>,
    #[serde(default)]
    pub defendants: Vec<String>,
    #[serde(default)]
    pub defendant_attorneys: Vec<String>,
    pub case_summary: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub precedent_ids: Vec<CaseId>,
}

impl ProcessedCase {
    pub fn from_raw(raw: &RawCase, case_summary: String, verdict: Verdict) -> Self {
        Self {
            id: raw.id.clone(),
            title: raw.title.clone(),
            date: raw.date,
            judge: raw.judge.clone(),
            plaintiffs: raw.plaintiffs.clone(),
            plaintiff_attorneys: raw.plaintiff_attorneys.clone(),
            defendants: raw.defendants.clone(),
            defendant_attorneys: raw.defendant_attorneys.clone(),
            case_summary,
            verdict,
            precedent_ids: raw.precedent_ids.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.title.trim().is_empty() {
            return Err(format!("case {}: empty title", self.id));
        }
        if self.case_summary.trim().is_empty() {
            return Err(format!("case {}: empty summary", self.id));
        }
        check_precedents(&self.id, &self.precedent_ids)
    }
}

const LEAK_PHRASES: [&str; 4] = ["plaintiff win", "defendant win", "settlement", "case dismissal"];

/// Verdict phrases found verbatim (case-insensitively) in a summary.
pub fn verdict_leaks(summary: &str) -> Vec<&'static str> {
    let folded = summary.to_lowercase();
    LEAK_PHRASES.iter().copied().filter(|p| folded.contains(p)).collect()
}

/// Renders a case the way it appears inside prompts. Attorneys are kept in
/// the data model but never rendered; an empty judge drops the line.
pub fn render_case(case: &ProcessedCase, include_verdict: bool) -> String {
    render_case_with_detail(case, &case.case_summary, include_verdict)
}

pub fn render_case_with_detail(case: &ProcessedCase, detail: &str, include_verdict: bool) -> String {
    let mut lines = vec![
        format!("Case Title: {}", case.title),
        format!("Date: {}", case.date.format("%b %-d, %Y")),
    ];
    if !case.judge.trim().is_empty() {
        lines.push(format!("Judge: {}", case.judge));
    }
    lines.push(format!("Plaintiffs: {}", case.plaintiffs.join(", ")));
    lines.push(format!("Defendants: {}", case.defendants.join(", ")));
    lines.push(format!("{DETAIL_LABEL}{detail}"));
    if include_verdict {
        lines.push(format!("Verdict: {}", case.verdict.label()));
    }
    lines.join("\n")
}

/// Source of preprocessing responses (a language model or a stand-in).
pub trait Preprocessor: Sync {
    fn respond(&self, raw: &RawCase, prompt: &str) -> Result<String, PreprocessError>;
}

/// Offline stand-in for the summarising model: the first `sentences`
/// sentences become the summary and the verdict comes from the record's
/// `verdict` field (`unsure` when absent).
#[derive(Debug, Clone)]
pub struct ExtractivePreprocessor {
    pub sentences: usize,
}

impl Default for ExtractivePreprocessor {
    fn default() -> Self {
        Self { sentences: 4 }
    }
}

impl Preprocessor for ExtractivePreprocessor {
    fn respond(&self, raw: &RawCase, _prompt: &str) -> Result<String, PreprocessError> {
        let summary = first_sentences(&raw.case_detail, self.sentences.max(1));
        let verdict = raw.verdict.map(Verdict::label).unwrap_or("unsure");
        Ok(format!("{ANSWER_1} {summary}\n{ANSWER_2} {verdict}"))
    }
}

/// The first `n` sentences of `text`, whitespace-normalised.
pub fn first_sentences(text: &str, n: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    let chars: Vec<char> = text.chars().collect();
    let mut start = 0;
    for i in 0..chars.len() {
        let end_of_sentence = matches!(chars[i], '.' | '!' | '?')
            && chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if end_of_sentence {
            let sentence: String = chars[start..=i].iter().collect();
            push_words(&mut out, &sentence);
            start = i + 1;
            count += 1;
            if count == n {
                return out;
            }
        }
    }
    let rest: String = chars[start..].iter().collect();
    push_words(&mut out, &rest);
    out
}

fn push_words(out: &mut String, text: &str) {
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessIssue {
    pub id: CaseId,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub processed: usize,
    pub failures: Vec<PreprocessIssue>,
    /// Responses matching two or more verdict keywords, and summaries that
    /// contain a verdict phrase.
    pub warnings: Vec<PreprocessIssue>,
    pub verdict_counts: std::collections::BTreeMap<String, usize>,
}

/// Runs one case through prompt → response → parse.
pub fn preprocess_case(
    raw: &RawCase,
    preprocessor: &dyn Preprocessor,
) -> Result<(ProcessedCase, Vec<String>), PreprocessError> {
    let prompt = build_preprocess_prompt(raw)?;
    let response = preprocessor.respond(raw, &prompt)?;
    let (summary, verdict) = parse_preprocess_response(&response)?;
    let mut warnings = Vec::new();
    if let Some(idx) = response.find(ANSWER_2) {
        let hits = verdict_keyword_matches(&response[idx + ANSWER_2.len()..]);
        if hits.len() >= 2 {
            warnings.push(format!("verdict text matched {} keywords; took {}", hits.len(), verdict));
        }
    }
    let leaks = verdict_leaks(&summary);
    if !leaks.is_empty() {
        warnings.push(format!("summary mentions verdict phrase(s) {leaks:?}"));
    }
    Ok((ProcessedCase::from_raw(raw, summary, verdict), warnings))
}

/// Preprocesses a corpus in parallel; output keeps input order and failed
/// cases are listed in the report instead of aborting the run.
pub fn preprocess_corpus(
    raws: &[RawCase],
    preprocessor: &dyn Preprocessor,
) -> (Vec<ProcessedCase>, PreprocessReport) {
    let results: Vec<_> = raws.par_iter().map(|raw| preprocess_case(raw, preprocessor)).collect();
    let mut report = PreprocessReport::default();
    let mut cases = Vec::with_capacity(raws.len());
    for (raw, result) in raws.iter().zip(results) {
        match result {
            Ok((case, warnings)) => {
                for message in warnings {
                    report.warnings.push(PreprocessIssue { id: raw.id.clone(), message });
                }
                *report.verdict_counts.entry(case.verdict.label().to_string()).or_default() += 1;
                cases.push(case);
            }
            Err(e) => report.failures.push(PreprocessIssue { id: raw.id.clone(), message: e.to_string() }),
        }
    }
    report.processed = cases.len();
    (cases, report)
}
