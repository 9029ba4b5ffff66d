//! Structural verification, dataset statistics, validation splits and
//! multiple-choice formatting and scoring.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{extract_nouns, CaptionPool};
use crate::perm;
use crate::synth::{render_context, QaSample, Role, Slot, TaskFamily, TemplateTarget};

pub const ANSWER_SUFFIX: &str = "Answer the option only.";

/// Whitespace tokens are scaled by this to approximate subword counts.
pub const APPROX_TOKENS_PER_WORD: f64 = 1.3;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("sample {id} has no options")]
    NoOptions { id: String },
    #[error("family {family} has {available} samples; more than {requested} are needed")]
    TooFewSamples {
        family: String,
        available: usize,
        requested: usize,
    },
    #[error("tokenizer command failed: {0}")]
    Tokenizer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub sample_id: String,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: &str, outcome: Result<(), String>) {
        let (pass, detail) = match outcome {
            Ok(()) => (true, String::new()),
            Err(d) => (false, d),
        };
        self.0.push(Check {
            name: name.to_string(),
            pass,
            detail,
        });
    }
}

fn ensure(cond: bool, detail: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail())
    }
}

/// Runs every structural check on `sample`. With a pool, context entries
/// that claim a pool id are also checked against the pool text.
pub fn verify_sample(sample: &QaSample, pool: Option<&CaptionPool>) -> VerifyReport {
    let ctx = &sample.context;
    let family = sample.family;
    let mut checks = Checks(Vec::new());

    let ranks: Vec<usize> = ctx
        .entries
        .iter()
        .filter_map(|e| match e.role {
            Role::Relevant { rank } => Some(rank),
            Role::Distractor => None,
        })
        .collect();
    let k = ranks.len();
    checks.add(
        "rank_order",
        ensure(ranks.iter().enumerate().all(|(i, &r)| i == r), || {
            format!("ranks {ranks:?}")
        }),
    );

    let (lo, hi) = family.relevant_range();
    checks.add(
        "relevant_count",
        ensure((lo..=hi).contains(&k), || format!("{k} relevant, expected {lo}..={hi}")),
    );

    let distractors = ctx.entries.iter().filter(|e| e.role == Role::Distractor).count();
    let expected = family.band();
    let (blo, bhi) = if expected.target == 0 {
        (0, 0)
    } else {
        (
            expected.target.saturating_sub(expected.tolerance),
            expected.target + expected.tolerance,
        )
    };
    checks.add(
        "distractor_band",
        ensure(ctx.band == expected && (blo..=bhi).contains(&distractors), || {
            format!("{distractors} distractors, band [{blo}, {bhi}]")
        }),
    );

    let relevant_nouns: BTreeSet<String> = ctx
        .entries
        .iter()
        .filter(|e| e.role != Role::Distractor)
        .flat_map(|e| extract_nouns(&e.text))
        .collect();
    let clash = ctx.entries.iter().filter(|e| e.role == Role::Distractor).find_map(|e| {
        extract_nouns(&e.text)
            .intersection(&relevant_nouns)
            .next()
            .map(|n| format!("distractor {:?} shares {n:?}", e.text))
    });
    checks.add("noun_disjoint", clash.map_or(Ok(()), Err));

    let positions: Vec<usize> = ctx
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.role != Role::Distractor)
        .map(|(i, _)| i)
        .collect();
    let prov = &sample.provenance;
    let mut pointer = ensure(prov.relevant_positions == positions, || {
        format!("positions {:?} vs context {positions:?}", prov.relevant_positions)
    })
    .and_then(|_| {
        ensure(prov.relevant_ids.len() == k, || {
            format!("{} relevant ids for {k} captions", prov.relevant_ids.len())
        })
    })
    .and_then(|_| {
        ensure(
            positions
                .iter()
                .zip(&prov.relevant_ids)
                .all(|(&p, id)| ctx.entries[p].pool_id == *id),
            || "relevant ids disagree with context entries".to_string(),
        )
    });
    if let (Ok(()), Some(pool)) = (&pointer, pool) {
        pointer = ctx
            .entries
            .iter()
            .filter_map(|e| e.pool_id.map(|id| (id, e)))
            .try_for_each(|(id, e)| match pool.get(id) {
                Some(c) if c.text == e.text => Ok(()),
                Some(_) => Err(format!("entry text differs from pool caption {id}")),
                None => Err(format!("pool id {id} out of range")),
            })
            .and_then(|_| {
                ensure(
                    ctx.entries
                        .iter()
                        .all(|e| e.role != Role::Distractor || e.pool_id.is_some()),
                    || "distractor without pool id".to_string(),
                )
            });
    }
    checks.add("provenance_pointers", pointer);

    checks.add(
        "text_nonempty",
        ensure(
            !sample.question.trim().is_empty()
                && !sample.answer.trim().is_empty()
                && ctx.entries.iter().all(|e| !e.text.trim().is_empty()),
            || "empty question, answer or context entry".to_string(),
        ),
    );

    checks.add("options", check_options(sample));
    checks.add("answer_oracle", answer_oracle(sample));
    checks.add("slot_placement", slot_placement(sample, &positions));

    let pass = checks.0.iter().all(|c| c.pass);
    VerifyReport {
        sample_id: sample.id.clone(),
        checks: checks.0,
        pass,
    }
}

fn free_form_allowed(family: TaskFamily) -> bool {
    matches!(
        family,
        TaskFamily::OrderTemplate(TemplateTarget::Sentence) | TaskFamily::Referring
    )
}

fn check_options(sample: &QaSample) -> Result<(), String> {
    let Some(options) = &sample.options else {
        return ensure(free_form_allowed(sample.family), || {
            format!("{} samples need options", sample.family)
        });
    };
    ensure(options.len() >= 2, || format!("{} options", options.len()))?;
    let distinct: HashSet<&String> = options.iter().collect();
    ensure(distinct.len() == options.len(), || "duplicate options".to_string())?;
    let hits = options.iter().filter(|o| **o == sample.answer).count();
    ensure(hits == 1, || format!("answer matches {hits} options"))?;
    if let TaskFamily::OrderTemplate(t) = sample.family {
        let items = sample.provenance.items.as_deref().unwrap_or_default();
        let presentation = sample.provenance.presentation.as_deref().unwrap_or_default();
        for o in options {
            let parsed = match t {
                TemplateTarget::Phrase => parse_arrow_order(o, items),
                _ => parse_label_order(o, presentation),
            };
            ensure(parsed.is_some_and(|p| perm::is_permutation(&p, items.len())), || {
                format!("option {o:?} is not a permutation of the items")
            })?;
        }
    }
    Ok(())
}

/// Ranks named by an arrow-joined option.
fn parse_arrow_order(option: &str, items: &[String]) -> Option<Vec<usize>> {
    option
        .split(" → ")
        .map(|part| items.iter().position(|i| i == part))
        .collect()
}

/// Ranks named by a `(3)(1)(2)` option, where label i denotes the i-th
/// listed item and the listing follows `presentation`.
fn parse_label_order(option: &str, presentation: &[usize]) -> Option<Vec<usize>> {
    let inner = option.strip_prefix('(')?.strip_suffix(')')?;
    inner
        .split(")(")
        .map(|n| {
            let label: usize = n.parse().ok()?;
            presentation.get(label.checked_sub(1)?).copied()
        })
        .collect()
}

fn answer_oracle(sample: &QaSample) -> Result<(), String> {
    let prov = &sample.provenance;
    let relevant: Vec<&str> = sample
        .context
        .entries
        .iter()
        .filter(|e| e.role != Role::Distractor)
        .map(|e| e.text.as_str())
        .collect();
    match sample.family {
        TaskFamily::OrderTemplate(target) => {
            let items = prov.items.as_ref().ok_or("missing items")?;
            let presentation = prov.presentation.as_ref().ok_or("missing presentation")?;
            ensure(items.len() == relevant.len(), || {
                "item count differs from relevant count".into()
            })?;
            ensure(perm::is_permutation(presentation, items.len()), || {
                "presentation is not a permutation".into()
            })?;
            let expected = match target {
                TemplateTarget::Sentence => {
                    ensure(items.iter().zip(&relevant).all(|(a, b)| a == b), || {
                        "items are not the relevant captions".into()
                    })?;
                    relevant.join("\n")
                }
                TemplateTarget::Phrase => items.join(" → "),
                TemplateTarget::Prefix => (0..items.len())
                    .map(|rank| {
                        let label = presentation.iter().position(|&r| r == rank).unwrap() + 1;
                        format!("({label})")
                    })
                    .collect(),
            };
            ensure(sample.answer == expected, || {
                format!("answer {:?}, oracle {expected:?}", sample.answer)
            })?;
            // The question must list the items in presentation order.
            let mut cursor = 0;
            for (i, &r) in presentation.iter().enumerate() {
                let needle = match target {
                    TemplateTarget::Sentence => format!("{}. {}", i + 1, items[r]),
                    TemplateTarget::Phrase => items[r].clone(),
                    TemplateTarget::Prefix => format!("({}) {}", i + 1, items[r]),
                };
                let found = sample.question[cursor..]
                    .find(&needle)
                    .ok_or_else(|| format!("question does not list {needle:?} in order"))?;
                cursor += found + needle.len();
            }
            Ok(())
        }
        TaskFamily::Referring => {
            let slot = prov.slot.ok_or("missing slot")?;
            let answers = prov.items.as_ref().ok_or("missing answers")?;
            ensure(answers.len() == 3, || "need three answers".into())?;
            ensure(sample.answer == answers[slot_index(slot)], || {
                format!("answer {:?} is not the {slot:?} caption's", sample.answer)
            })?;
            ensure(sample.question.ends_with(&format!("{}?", slot_phrase(slot))), || {
                "question lacks the slot reference".into()
            })
        }
        TaskFamily::Grounding => {
            let slot = prov.slot.ok_or("missing slot")?;
            let statements = prov.items.as_ref().ok_or("missing statements")?;
            ensure(statements.len() == 3, || "need three statements".into())?;
            ensure(sample.answer == slot_option(slot), || {
                format!("answer {:?} for slot {slot:?}", sample.answer)
            })?;
            ensure(
                sample.options.as_deref()
                    == Some(
                        &[
                            "at the beginning".to_string(),
                            "in the middle".into(),
                            "at the end".into(),
                        ][..],
                    ),
                || "grounding options are not the slot set".into(),
            )?;
            ensure(sample.question.contains(statements[slot_index(slot)].as_str()), || {
                "question does not carry the slot's statement".into()
            })
        }
        _ => Ok(()),
    }
}

fn slot_index(slot: Slot) -> usize {
    match slot {
        Slot::Begin => 0,
        Slot::Middle => 1,
        Slot::End => 2,
    }
}

fn slot_phrase(slot: Slot) -> &'static str {
    match slot {
        Slot::Begin => "at the beginning of the video",
        Slot::Middle => "in the middle of the video",
        Slot::End => "at the end of the video",
    }
}

fn slot_option(slot: Slot) -> &'static str {
    match slot {
        Slot::Begin => "at the beginning",
        Slot::Middle => "in the middle",
        Slot::End => "at the end",
    }
}

fn slot_placement(sample: &QaSample, positions: &[usize]) -> Result<(), String> {
    if !matches!(sample.family, TaskFamily::Referring | TaskFamily::Grounding) {
        return Ok(());
    }
    let len = sample.context.entries.len();
    match positions {
        [first, mid, last] => ensure(*first == 0 && *last + 1 == len && mid.abs_diff(len / 2) <= 1, || {
            format!("positions {positions:?} in a context of {len}")
        }),
        _ => Err(format!("{} relevant captions", positions.len())),
    }
}

/// Context, question, lettered options and the answer-only instruction.
pub fn format_mc_prompt(sample: &QaSample) -> Result<String, QualityError> {
    let options = sample
        .options
        .as_ref()
        .ok_or_else(|| QualityError::NoOptions { id: sample.id.clone() })?;
    let mut out = render_context(&sample.context);
    out.push('\n');
    out.push_str(&sample.question);
    for (i, o) in options.iter().enumerate() {
        out.push_str(&format!("\n{}. {o}", option_letter(i)));
    }
    out.push('\n');
    out.push_str(ANSWER_SUFFIX);
    Ok(out)
}

fn option_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// The instruction side of a training pair: the multiple-choice prompt when
/// the sample has options, otherwise context and question.
pub fn human_turn(sample: &QaSample) -> String {
    match format_mc_prompt(sample) {
        Ok(s) => s,
        Err(_) => format!("{}\n{}", render_context(&sample.context), sample.question),
    }
}

pub trait TokenCounter {
    fn count(&self, texts: &[String]) -> Result<Vec<f64>, QualityError>;
    /// False for approximations.
    fn exact(&self) -> bool;
}

pub struct ApproxCounter;

impl TokenCounter for ApproxCounter {
    fn count(&self, texts: &[String]) -> Result<Vec<f64>, QualityError> {
        Ok(texts
            .iter()
            .map(|t| t.split_whitespace().count() as f64 * APPROX_TOKENS_PER_WORD)
            .collect())
    }
    fn exact(&self) -> bool {
        false
    }
}

/// External tokenizer: the shell command reads one JSON string per line on
/// stdin and writes one integer count per line on stdout.
pub struct CommandCounter {
    pub command: String,
}

impl TokenCounter for CommandCounter {
    fn count(&self, texts: &[String]) -> Result<Vec<f64>, QualityError> {
        let err = |m: String| QualityError::Tokenizer(format!("{}: {m}", self.command));
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| err(e.to_string()))?;
        let mut stdin = child.stdin.take().unwrap();
        let lines: Vec<String> = texts.iter().map(|t| serde_json::to_string(t).unwrap()).collect();
        // Feed stdin from another thread so a chatty tokenizer cannot deadlock us.
        let writer = std::thread::spawn(move || -> std::io::Result<()> {
            for l in lines {
                writeln!(stdin, "{l}")?;
            }
            Ok(())
        });
        let stdout = child.stdout.take().unwrap();
        let mut counts = Vec::with_capacity(texts.len());
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            counts.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| err(format!("not a count: {line:?}")))?,
            );
        }
        writer
            .join()
            .map_err(|_| err("writer panicked".into()))?
            .map_err(|e| err(e.to_string()))?;
        let status = child.wait().map_err(|e| err(e.to_string()))?;
        if !status.success() {
            return Err(err(format!("exited with {status}")));
        }
        if counts.len() != texts.len() {
            return Err(err(format!("{} counts for {} texts", counts.len(), texts.len())));
        }
        Ok(counts)
    }
    fn exact(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub dataset: String,
    pub samples: usize,
    pub relevant_min: usize,
    pub relevant_max: usize,
    pub distractor_min: usize,
    pub distractor_max: usize,
    /// Nominal band, e.g. `100±50`.
    pub distractor_band: String,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub modality: String,
    pub approximate_tokens: bool,
}

/// One row per family present, in family order.
pub fn dataset_stats(samples: &[QaSample], counter: &dyn TokenCounter) -> Result<Vec<StatsRow>, QualityError> {
    let mut by_family: BTreeMap<TaskFamily, Vec<&QaSample>> = BTreeMap::new();
    for s in samples {
        by_family.entry(s.family).or_default().push(s);
    }
    let mut rows = Vec::new();
    for (family, group) in by_family {
        let inputs: Vec<String> = group.iter().map(|s| human_turn(s)).collect();
        let outputs: Vec<String> = group.iter().map(|s| s.answer.clone()).collect();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let relevant: Vec<usize> = group.iter().map(|s| s.context.relevant_positions().len()).collect();
        let distractors: Vec<usize> = group.iter().map(|s| s.context.distractor_count()).collect();
        let band = family.band();
        rows.push(StatsRow {
            dataset: family.name(),
            samples: group.len(),
            relevant_min: *relevant.iter().min().unwrap(),
            relevant_max: *relevant.iter().max().unwrap(),
            distractor_min: *distractors.iter().min().unwrap(),
            distractor_max: *distractors.iter().max().unwrap(),
            distractor_band: format!("{}±{}", band.target, band.tolerance),
            mean_input_tokens: mean(counter.count(&inputs)?),
            mean_output_tokens: mean(counter.count(&outputs)?),
            modality: "Text".into(),
            approximate_tokens: !counter.exact(),
        });
    }
    Ok(rows)
}

/// Aligned plain-text rendering of stats rows.
pub fn stats_table(rows: &[StatsRow]) -> String {
    let header = [
        "Dataset",
        "#Samples",
        "#Relevant",
        "#Distractor",
        "Band",
        "#Input",
        "#Output",
        "Modality",
    ];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            let range = |a: usize, b: usize| if a == b { a.to_string() } else { format!("{a}~{b}") };
            let tilde = if r.approximate_tokens { "~" } else { "" };
            [
                r.dataset.clone(),
                r.samples.to_string(),
                range(r.relevant_min, r.relevant_max),
                range(r.distractor_min, r.distractor_max),
                r.distractor_band.clone(),
                format!("{tilde}{:.1}", r.mean_input_tokens),
                format!("{tilde}{:.1}", r.mean_output_tokens),
                r.modality.clone(),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(header.iter().map(|s| s.to_string()).collect())];
    out.extend(body.into_iter().map(|r| line(r.to_vec())));
    out.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
}

/// Moves exactly `per_task` samples of every family to validation. Both
/// halves keep the input order.
pub fn split_validation<T, F>(
    samples: Vec<T>,
    family_of: F,
    per_task: usize,
    seed: u64,
) -> Result<Split<T>, QualityError>
where
    F: Fn(&T) -> String,
{
    let mut by_family: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_family.entry(family_of(s)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut to_validation = vec![false; samples.len()];
    for (family, idx) in &by_family {
        if idx.len() <= per_task {
            return Err(QualityError::TooFewSamples {
                family: family.clone(),
                available: idx.len(),
                requested: per_task,
            });
        }
        for j in index::sample(&mut rng, idx.len(), per_task) {
            to_validation[idx[j]] = true;
        }
    }
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
    };
    for (s, v) in samples.into_iter().zip(to_validation) {
        if v {
            split.validation.push(s);
        } else {
            split.train.push(s);
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub correct: usize,
    pub total: usize,
    /// Replies that matched no option (or several).
    pub unmatched: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_family: BTreeMap<String, FamilyScore>,
    pub macro_accuracy: f64,
    /// Gold samples with no reply; scored as wrong.
    pub missing: usize,
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['.', '!'])
        .to_lowercase()
}

/// Index of the option a reply selects, if it selects exactly one.
pub fn match_option(reply: &str, options: &[String]) -> Option<usize> {
    let trimmed = reply.trim();
    let mut body = trimmed;
    for prefix in ["the answer is", "answer:", "answer is", "option"] {
        if body.len() >= prefix.len() && body[..prefix.len()].eq_ignore_ascii_case(prefix) {
            body = body[prefix.len()..].trim_start();
        }
    }
    // Letter forms: "B", "B.", "(B)", "B) text", "B: text".
    let letters = body.trim_start_matches('(');
    let mut chars = letters.chars();
    if let Some(c) = chars.next() {
        let rest = chars.as_str();
        let boundary = rest.is_empty() || rest.starts_with(['.', ')', ':', ' ', ',']);
        if c.is_ascii_uppercase() && boundary {
            let i = (c as u8 - b'A') as usize;
            if i < options.len() {
                return Some(i);
            }
        }
    }
    // Otherwise the reply must contain exactly one option, ignoring options
    // that are only matched as part of a longer matching option.
    let lower = trimmed.to_lowercase();
    let hits: Vec<usize> = (0..options.len())
        .filter(|&i| lower.contains(&options[i].to_lowercase()))
        .collect();
    let maximal: Vec<usize> = hits
        .iter()
        .copied()
        .filter(|&i| {
            !hits.iter().any(|&j| {
                j != i
                    && options[j].len() > options[i].len()
                    && options[j].to_lowercase().contains(&options[i].to_lowercase())
            })
        })
        .collect();
    match maximal.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// Per-family accuracy of `replies` (sample id → model reply) against `gold`.
pub fn score_mc(replies: &BTreeMap<String, String>, gold: &[QaSample]) -> ScoreReport {
    let mut report = ScoreReport::default();
    for s in gold {
        let entry = report.per_family.entry(s.family.name()).or_default();
        entry.total += 1;
        let Some(reply) = replies.get(&s.id) else {
            report.missing += 1;
            continue;
        };
        let correct = match &s.options {
            Some(options) => match match_option(reply, options) {
                Some(i) => options[i] == s.answer,
                None => {
                    entry.unmatched += 1;
                    false
                }
            },
            None => normalize(reply) == normalize(&s.answer),
        };
        if correct {
            entry.correct += 1;
        }
    }
    for f in report.per_family.values_mut() {
        f.accuracy = f.correct as f64 / f.total as f64;
    }
    if !report.per_family.is_empty() {
        report.macro_accuracy =
            report.per_family.values().map(|f| f.accuracy).sum::<f64>() / report.per_family.len() as f64;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest;
    use crate::demo::synthetic_corpus;
    use crate::provider::{MockProvider, PromptSet};
    use crate::synth::{generate_vec, GenerateOptions, Generator};

    fn samples(family: TaskFamily, n: usize) -> (CaptionPool, Vec<QaSample>) {
        let pool = ingest(synthetic_corpus(3000, 2)).unwrap().pool;
        let mock = MockProvider::new(0);
        let prompts = PromptSet::builtin();
        let g = Generator::new(&pool, &mock, &prompts);
        let (s, _) = generate_vec(&g, &GenerateOptions::new(family, n, 1)).unwrap();
        (pool, s)
    }

    #[test]
    fn fresh_samples_pass() {
        for family in [
            TaskFamily::OrderTemplate(TemplateTarget::Prefix),
            TaskFamily::OrderTemplate(TemplateTarget::Sentence),
            TaskFamily::Grounding,
        ] {
            let (pool, s) = samples(family, 10);
            for x in &s {
                let r = verify_sample(x, Some(&pool));
                assert!(r.pass, "{:?}", r.failed().collect::<Vec<_>>());
                assert_eq!(r, verify_sample(x, Some(&pool)));
            }
        }
    }

    #[test]
    fn injected_faults_are_caught() {
        let (pool, s) = samples(TaskFamily::OrderTemplate(TemplateTarget::Phrase), 1);
        let mut bad = s[0].clone();
        let rel = bad.provenance.relevant_positions[0];
        let noun = extract_nouns(&bad.context.entries[rel].text)
            .into_iter()
            .next()
            .unwrap();
        let d = bad
            .context
            .entries
            .iter()
            .position(|e| e.role == Role::Distractor)
            .unwrap();
        bad.context.entries[d].text = format!("A {noun} appears here.");
        let r = verify_sample(&bad, None);
        assert!(r.failed().any(|c| c.name == "noun_disjoint"));
        // The pool copy of that distractor no longer matches either.
        assert!(verify_sample(&bad, Some(&pool))
            .failed()
            .any(|c| c.name == "provenance_pointers"));

        let mut dup = s[0].clone();
        let opts = dup.options.as_mut().unwrap();
        opts[1] = opts[0].clone();
        assert!(verify_sample(&dup, None).failed().any(|c| c.name == "options"));

        let mut wrong = s[0].clone();
        let other = wrong
            .options
            .as_ref()
            .unwrap()
            .iter()
            .find(|o| **o != wrong.answer)
            .unwrap()
            .clone();
        wrong.answer = other;
        assert!(verify_sample(&wrong, None).failed().any(|c| c.name == "answer_oracle"));
    }

    #[test]
    fn mc_prompt_layout() {
        let (_, s) = samples(TaskFamily::OrderTemplate(TemplateTarget::Prefix), 1);
        let p = format_mc_prompt(&s[0]).unwrap();
        assert_eq!(p.lines().last().unwrap(), "Answer the option only.");
        for l in ['A', 'B', 'C', 'D'] {
            assert_eq!(p.lines().filter(|x| x.starts_with(&format!("{l}. "))).count(), 1);
        }
        let (_, free) = samples(TaskFamily::OrderTemplate(TemplateTarget::Sentence), 1);
        assert!(matches!(
            format_mc_prompt(&free[0]),
            Err(QualityError::NoOptions { .. })
        ));
    }

    #[test]
    fn option_matching_rules() {
        let opts: Vec<String> = ["(1)(2)(3)(4)", "(3)(2)(4)(1)", "(2)(1)(4)(3)"]
            .map(String::from)
            .to_vec();
        assert_eq!(match_option("B", &opts), Some(1));
        assert_eq!(match_option("(B)", &opts), Some(1));
        assert_eq!(match_option("Answer: C.", &opts), Some(2));
        assert_eq!(match_option("The answer is (3)(2)(4)(1)", &opts), Some(1));
        assert_eq!(match_option("no idea", &opts), None);
        let words: Vec<String> = ["dog", "hot dog"].map(String::from).to_vec();
        assert_eq!(match_option("I think hot dog", &words), Some(1));
        assert_eq!(match_option("dog or hot dog", &words), Some(1));
        let ambiguous: Vec<String> = ["cat", "dog"].map(String::from).to_vec();
        assert_eq!(match_option("cat and dog", &ambiguous), None);
    }

    #[test]
    fn three_of_four() {
        let (_, s) = samples(TaskFamily::Grounding, 4);
        let mut replies = BTreeMap::new();
        for (i, x) in s.iter().enumerate() {
            let letter = x.options.as_ref().unwrap().iter().position(|o| *o == x.answer).unwrap();
            let chosen = if i == 0 { (letter + 1) % 3 } else { letter };
            replies.insert(x.id.clone(), ((b'A' + chosen as u8) as char).to_string());
        }
        let r = score_mc(&replies, &s);
        assert_eq!(r.per_family["grounding"].accuracy, 0.75);
        assert_eq!(r.macro_accuracy, 0.75);
    }

    #[test]
    fn split_partitions() {
        let items: Vec<(String, usize)> = (0..30).map(|i| (format!("f{}", i % 3), i)).collect();
        let split = split_validation(items.clone(), |x| x.0.clone(), 4, 9).unwrap();
        assert_eq!(split.validation.len(), 12);
        assert_eq!(split.train.len(), 18);
        let mut all: Vec<_> = split.train.iter().chain(&split.validation).cloned().collect();
        all.sort_by_key(|x| x.1);
        assert_eq!(all, items);
        assert_eq!(split, split_validation(items.clone(), |x| x.0.clone(), 4, 9).unwrap());
        assert!(matches!(
            split_validation(items, |x| x.0.clone(), 10, 0),
            Err(QualityError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn stats_rows() {
        let (_, s) = samples(TaskFamily::Referring, 18);
        let rows = dataset_stats(&s, &ApproxCounter).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].relevant_min, rows[0].relevant_max), (3, 3));
        assert!(rows[0].approximate_tokens);
        assert!(dataset_stats(&[], &ApproxCounter).unwrap().is_empty());
        let exact = CommandCounter {
            command: "while read -r l; do echo 7; done".into(),
        };
        let rows = dataset_stats(&s, &exact).unwrap();
        assert_eq!(rows[0].mean_output_tokens, 7.0);
        assert!(!rows[0].approximate_tokens);
        assert!(stats_table(&rows).contains("referring"));
    }
}
