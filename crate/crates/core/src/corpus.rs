//! Caption pool: ingestion of an image-caption corpus, noun extraction and
//! the constrained samplers that feed context construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use log::warn;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const STOPLIST: &str = include_str!("../data/stoplist.txt");

/// Captions whose first sentence has fewer whitespace tokens than this are dropped.
pub const MIN_CAPTION_TOKENS: usize = 3;

const POOL_MAGIC: &[u8; 4] = b"T3PL";
const POOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no usable captions in corpus ({skipped} records skipped)")]
    EmptyCorpus { skipped: usize },
    #[error("requested {requested} captions from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("only {eligible} eligible distractors, {requested} requested")]
    InsufficientDistractors { eligible: usize, requested: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

/// One raw corpus record before first-sentence truncation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub caption: String,
    #[serde(default)]
    pub source_id: String,
}

impl RawRecord {
    pub fn new(caption: impl Into<String>, source_id: impl Into<String>) -> Self {
        Self {
            caption: caption.into(),
            source_id: source_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub id: usize,
    pub text: String,
    pub nouns: BTreeSet<String>,
    pub source_id: String,
}

/// Anything that carries a noun set and may or may not live in the pool.
///
/// Relevant captions are often produced by a provider (attribute and
/// referring families) and therefore have no pool id.
pub trait NounBearing {
    fn nouns(&self) -> &BTreeSet<String>;
    fn pool_id(&self) -> Option<usize>;
    fn text(&self) -> &str;
}

impl NounBearing for Caption {
    fn nouns(&self) -> &BTreeSet<String> {
        &self.nouns
    }
    fn pool_id(&self) -> Option<usize> {
        Some(self.id)
    }
    fn text(&self) -> &str {
        &self.text
    }
}

impl<T: NounBearing + ?Sized> NounBearing for &T {
    fn nouns(&self) -> &BTreeSet<String> {
        (**self).nouns()
    }
    fn pool_id(&self) -> Option<usize> {
        (**self).pool_id()
    }
    fn text(&self) -> &str {
        (**self).text()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaptionPool {
    captions: Vec<Caption>,
    noun_index: BTreeMap<String, BTreeSet<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub pool: CaptionPool,
    /// Records dropped because they were blank or too short.
    pub warnings: usize,
}

fn stoplist() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPLIST
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stoplist().contains(word)
}

/// Lowercase alphabetic tokens of `text`, in order.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Strips a plural `s`/`es` ending. Applied identically on both sides of
/// every noun comparison, so only consistency matters.
pub fn singularize(word: &str) -> String {
    let n = word.len();
    if n <= 3 || !word.is_ascii() {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if n > 4 {
            return format!("{stem}y");
        }
    }
    for suffix in ["sses", "ches", "shes", "xes", "zes"] {
        if word.ends_with(suffix) {
            return word[..n - 2].to_string();
        }
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    match word.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => word.to_string(),
    }
}

/// Normalized form of a single token, or `None` if it is a stopword or too short.
pub fn noun_form(token: &str) -> Option<String> {
    if token.chars().count() < 2 || is_stopword(token) {
        return None;
    }
    let singular = singularize(token);
    if is_stopword(&singular) {
        return None;
    }
    Some(singular)
}

/// Conservative noun over-approximation: every alphabetic token that is not
/// on the shipped closed-class stoplist, singularized.
pub fn extract_nouns(text: &str) -> BTreeSet<String> {
    tokens(text).filter_map(|t| noun_form(&t)).collect()
}

/// Nouns of `text` in order of first appearance.
pub fn nouns_in_order(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    tokens(text)
        .filter_map(|t| noun_form(&t))
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

/// Nouns that name the picture itself rather than its content.
pub const FRAME_NOUNS: &[&str] = &["image", "photo", "picture", "scene", "frame", "view", "shot"];

/// First `n` content nouns of `text`, skipping words that name the picture.
pub fn content_nouns(text: &str, n: usize) -> Vec<String> {
    nouns_in_order(text)
        .into_iter()
        .filter(|w| !FRAME_NOUNS.contains(&w.as_str()))
        .take(n)
        .collect()
}

/// Deterministic short phrase naming a caption's subject: its first two
/// content nouns. Falls back to the caption without its terminator.
pub fn head_noun_phrase(text: &str) -> String {
    let nouns = content_nouns(text, 2);
    if nouns.is_empty() {
        return text.trim().trim_end_matches(['.', '!', '?']).to_string();
    }
    nouns.join(" ")
}

/// Text up to and including the first `.`, `!` or `?` that is followed by
/// whitespace or the end of the input.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            match chars.peek() {
                None => return text,
                Some((_, next)) if next.is_whitespace() => return &text[..i + c.len_utf8()],
                _ => {}
            }
        }
    }
    text
}

pub fn ingest<I>(records: I) -> Result<IngestReport, CorpusError>
where
    I: IntoIterator<Item = RawRecord>,
{
    let mut captions = Vec::new();
    let mut warnings = 0;
    for record in records {
        let sentence = first_sentence(&record.caption);
        if sentence.split_whitespace().count() < MIN_CAPTION_TOKENS {
            warnings += 1;
            continue;
        }
        captions.push(Caption {
            id: captions.len(),
            text: sentence.to_string(),
            nouns: extract_nouns(sentence),
            source_id: record.source_id,
        });
    }
    if captions.is_empty() {
        return Err(CorpusError::EmptyCorpus { skipped: warnings });
    }
    if warnings > 0 {
        warn!("skipped {warnings} blank or short caption records");
    }
    Ok(IngestReport {
        pool: CaptionPool::from_captions(captions),
        warnings,
    })
}

#[derive(Deserialize)]
struct CorpusLine {
    caption: String,
    #[serde(default)]
    id: Option<serde_json::Value>,
}

/// Reads the corpus JSONL export shape: one object per line with a
/// `caption` field and an optional `id`.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        let source_id = match rec.id {
            Some(serde_json::Value::String(s)) => s,
            Some(other) => other.to_string(),
            None => format!("line-{}", n + 1),
        };
        out.push(RawRecord::new(rec.caption, source_id));
    }
    Ok(out)
}

impl CaptionPool {
    /// Builds a pool from captions whose ids are already dense.
    fn from_captions(captions: Vec<Caption>) -> Self {
        let mut noun_index: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for c in &captions {
            for n in &c.nouns {
                noun_index.entry(n.clone()).or_default().insert(c.id);
            }
        }
        Self { captions, noun_index }
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn captions(&self) -> &[Caption] {
        &self.captions
    }

    pub fn get(&self, id: usize) -> Option<&Caption> {
        self.captions.get(id)
    }

    pub fn noun_index(&self) -> &BTreeMap<String, BTreeSet<usize>> {
        &self.noun_index
    }

    /// Ids of captions containing `noun`.
    pub fn lookup(&self, noun: &str) -> Option<&BTreeSet<usize>> {
        self.noun_index.get(noun)
    }

    /// Loads `.jsonl` pools, `.bin` pools, or raw corpus JSONL (objects with a
    /// `caption` field), which is ingested on the fly.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        if path.extension().is_some_and(|e| e == "bin") {
            let mut buf = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut buf))
                .map_err(io_err)?;
            return Self::decode_bin(&buf).map_err(|message| CorpusError::Format {
                path: path.display().to_string(),
                line: 0,
                message,
            });
        }
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut captions = Vec::new();
        let mut raw = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
                path: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
            if value.get("text").is_some() && value.get("nouns").is_some() {
                let c: Caption = serde_json::from_value(value).map_err(|e| CorpusError::Format {
                    path: path.display().to_string(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
                if c.id != captions.len() {
                    return Err(CorpusError::Format {
                        path: path.display().to_string(),
                        line: n + 1,
                        message: format!("caption id {} is not dense", c.id),
                    });
                }
                captions.push(c);
            } else if let Some(text) = value.get("caption").and_then(|v| v.as_str()) {
                let source_id = match value.get("id") {
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                    None => format!("line-{}", n + 1),
                };
                raw.push(RawRecord::new(text, source_id));
            } else {
                return Err(CorpusError::Format {
                    path: path.display().to_string(),
                    line: n + 1,
                    message: "expected a pool caption or a corpus record".into(),
                });
            }
        }
        if !raw.is_empty() && !captions.is_empty() {
            return Err(CorpusError::Format {
                path: path.display().to_string(),
                line: 0,
                message: "mixed pool and corpus records".into(),
            });
        }
        if !raw.is_empty() {
            return Ok(ingest(raw)?.pool);
        }
        if captions.is_empty() {
            return Err(CorpusError::EmptyCorpus { skipped: 0 });
        }
        Ok(Self::from_captions(captions))
    }

    /// Writes the pool as `.bin` or JSONL depending on the extension.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        if path.extension().is_some_and(|e| e == "bin") {
            w.write_all(&self.encode_bin()).map_err(io_err)?;
        } else {
            for c in &self.captions {
                let line = serde_json::to_string(c).expect("caption serializes");
                writeln!(w, "{line}").map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Binary layout: magic, version, count, then per caption a
    /// length-prefixed text and source id. Noun sets are recomputed on load.
    pub fn encode_bin(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(POOL_MAGIC);
        out.extend_from_slice(&POOL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.captions.len() as u64).to_le_bytes());
        for c in &self.captions {
            for s in [&c.text, &c.source_id] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        out
    }

    pub fn decode_bin(buf: &[u8]) -> Result<Self, String> {
        let mut cur = buf;
        let mut take = |n: usize| -> Result<&[u8], String> {
            if cur.len() < n {
                return Err("truncated pool file".into());
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != POOL_MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != POOL_VERSION {
            return Err(format!("unsupported pool version {version}"));
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut captions = Vec::with_capacity(count.min(1 << 24));
        for id in 0..count {
            let mut fields = [String::new(), String::new()];
            for f in &mut fields {
                let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
                *f = String::from_utf8(take(len)?.to_vec()).map_err(|e| e.to_string())?;
            }
            let [text, source_id] = fields;
            captions.push(Caption {
                id,
                nouns: extract_nouns(&text),
                text,
                source_id,
            });
        }
        Ok(Self::from_captions(captions))
    }
}

/// `k` distinct captions in sampled order.
pub fn sample_relevant<'p, R: Rng + ?Sized>(
    pool: &'p CaptionPool,
    k: usize,
    rng: &mut R,
) -> Result<Vec<&'p Caption>, CorpusError> {
    if k > pool.len() {
        return Err(CorpusError::PoolTooSmall {
            requested: k,
            available: pool.len(),
        });
    }
    Ok(index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| &pool.captions[i])
        .collect())
}

/// Ids of pool captions that share no noun with any relevant caption and
/// are not themselves relevant, in ascending order.
pub fn eligible_distractors<T: NounBearing>(pool: &CaptionPool, relevant: &[T]) -> Vec<usize> {
    let mut blocked = vec![false; pool.len()];
    for r in relevant {
        if let Some(id) = r.pool_id() {
            if id < blocked.len() {
                blocked[id] = true;
            }
        }
        for noun in r.nouns() {
            if let Some(ids) = pool.noun_index.get(noun) {
                for &id in ids {
                    blocked[id] = true;
                }
            }
        }
    }
    let relevant_texts: HashSet<&str> = relevant.iter().map(|r| r.text()).collect();
    (0..pool.len())
        .filter(|&i| !blocked[i] && !relevant_texts.contains(pool.captions[i].text.as_str()))
        .collect()
}

/// `n` distinct distractors sharing no noun with the relevant captions.
pub fn sample_distractors<'p, T: NounBearing, R: Rng + ?Sized>(
    pool: &'p CaptionPool,
    relevant: &[T],
    n: usize,
    rng: &mut R,
) -> Result<Vec<&'p Caption>, CorpusError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let eligible = eligible_distractors(pool, relevant);
    if eligible.len() < n {
        return Err(CorpusError::InsufficientDistractors {
            eligible: eligible.len(),
            requested: n,
        });
    }
    Ok(index::sample(rng, eligible.len(), n)
        .into_iter()
        .map(|i| &pool.captions[eligible[i]])
        .collect())
}
