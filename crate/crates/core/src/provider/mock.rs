//! Offline backend that fabricates schema-valid replies from the content
//! embedded in each prompt.
//!
//! Replies are a pure function of (prompt, seed). The mock recognises which
//! template a prompt came from, recovers the placeholder values, and builds
//! an answer from them, so downstream parsing and verification run on
//! genuinely varied data rather than canned constants.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::payload;
use super::template::PromptSet;
use super::{PromptKind, Provider, ProviderError, BRIGHTNESS_LEVELS, FORMAT_ONLY_SUFFIX, JSON_ONLY_SUFFIX};
use crate::corpus::{content_nouns, head_noun_phrase, noun_form};
use crate::demo::SUBJECTS;
use crate::perm;

pub const ATTRIBUTE_TYPES: [&str; 5] = ["color", "light condition", "size & shape", "emotion", "posture"];

/// Element names as they appear in referring replies, with the short form
/// used to fill the referring-question prompt.
pub const REFERRING_ELEMENTS: [(&str, &str); 3] = [
    ("change_object", "object"),
    ("change_action", "action"),
    ("change_attribute", "attribute"),
];

const COLOR_PAIRS: &[(&str, &str)] = &[
    ("red", "green"),
    ("black", "white"),
    ("blue", "yellow"),
    ("brown", "gray"),
    ("pink", "purple"),
];
const SIZE_PAIRS: &[(&str, &str)] = &[
    ("small", "big"),
    ("tiny", "huge"),
    ("round", "square-shaped"),
    ("slim", "bulky"),
];
const EMOTION_PAIRS: &[(&str, &str)] = &[
    ("happy", "sad"),
    ("calm", "angry"),
    ("cheerful", "frightened"),
    ("relaxed", "nervous"),
];
const POSTURE_PAIRS: &[(&str, &str)] = &[("standing", "lying"), ("sitting", "crouching"), ("leaning", "kneeling")];
const LIGHT_PAIRS: &[(&str, &str)] = &[
    ("in bright sunlight", "in a dim, dark setting"),
    ("brightly lit by the sun", "barely visible in the darkness"),
    ("under a bright light", "in deep shadow"),
];
const BRIGHT_WORDS: &[&str] = &["bright", "brightly", "sunlight", "sunny", "illuminated"];
const DARK_WORDS: &[&str] = &["dim", "dark", "darkness", "shadow", "dimly"];

const ACTIONS: &[&str] = &[
    "sleeping", "running", "jumping", "eating", "playing", "walking", "dancing", "swimming", "climbing", "hiding",
];
const ADJECTIVES: &[&str] = &[
    "tall", "short", "strong", "tiny", "huge", "striped", "spotted", "shiny", "old", "young",
];

#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    prompts: PromptSet,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self::with_prompts(seed, PromptSet::builtin())
    }

    /// A mock that understands prompts rendered from `prompts` instead of
    /// the built-in templates.
    pub fn with_prompts(seed: u64, prompts: PromptSet) -> Self {
        Self { seed, prompts }
    }

    fn rng_for(&self, prompt: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(prompt.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(head) ^ self.seed)
    }

    /// Placeholder values recovered by matching the literal text around
    /// each placeholder of the template.
    fn fields(&self, kind: PromptKind, prompt: &str) -> Option<BTreeMap<String, String>> {
        let body = self.prompts.get(kind).body.trim_end();
        let re = placeholder_re();
        let mut literals = Vec::new();
        let mut names = Vec::new();
        let mut last = 0;
        for cap in re.captures_iter(body) {
            let m = cap.get(0).unwrap();
            literals.push(&body[last..m.start()]);
            names.push(cap[1].to_string());
            last = m.end();
        }
        literals.push(&body[last..]);

        let mut pos = literals[0].len();
        if !prompt.starts_with(literals[0]) {
            return None;
        }
        let mut out = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            let next = literals[i + 1];
            let end = if i + 1 == names.len() {
                if next.is_empty() {
                    prompt.len()
                } else {
                    prompt.rfind(next).filter(|&e| e >= pos)?
                }
            } else {
                pos + prompt[pos..].find(next)?
            };
            out.insert(name.clone(), prompt[pos..end].trim().to_string());
            pos = end + next.len();
        }
        Some(out)
    }

    fn reply(&self, prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        let kind = PromptKind::identify(prompt)?;
        let mut base = prompt;
        for suffix in [JSON_ONLY_SUFFIX, FORMAT_ONLY_SUFFIX] {
            base = base.strip_suffix(suffix).unwrap_or(base);
        }
        match kind {
            PromptKind::FrameCaptionFirst | PromptKind::FrameCaptionNext => {
                let (summary, level) = frame_descriptor(base);
                Some(frame_caption(&summary, level, kind == PromptKind::FrameCaptionNext))
            }
            PromptKind::FrameBrightness => {
                let (summary, level) = frame_descriptor(base);
                Some(
                    json!({
                        "brightness": level,
                        "description": format!("The image shows {summary} in a {level} setting."),
                    })
                    .to_string(),
                )
            }
            _ => {
                let f = self.fields(kind, base)?;
                let get = |k: &str| f.get(k).map(String::as_str).unwrap_or("");
                Some(match kind {
                    PromptKind::OrderQa => order_qas(&payload::parse_numbered(get("image_captions")), rng).to_string(),
                    PromptKind::AttributeCaptions => attribute_captions(get("original_caption"), rng).to_string(),
                    PromptKind::AttributeQa => {
                        attribute_qas(&payload::parse_caption_pairs(get("caption_pairs")), rng).to_string()
                    }
                    PromptKind::ReferringCaptions => referring_captions(get("original_caption"), rng).to_string(),
                    PromptKind::ReferringQa => {
                        referring_qa(get("element"), &payload::parse_numbered(get("captions"))).to_string()
                    }
                    PromptKind::GroundingStatements => {
                        let (q, answers) =
                            payload::parse_question_and_answers(get("question_and_answers")).unwrap_or_default();
                        statements(&q, &answers)
                    }
                    PromptKind::ExtractPhrase => json!({ "phrase": head_noun_phrase(get("caption")) }).to_string(),
                    _ => unreachable!(),
                })
            }
        }
    }
}

impl Provider for MockProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let mut rng = self.rng_for(prompt);
        Ok(self
            .reply(prompt, &mut rng)
            .unwrap_or_else(|| "I am not able to help with this request.".to_string()))
    }

    fn is_offline(&self) -> bool {
        true
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([a-z][a-z_]*)\]").unwrap())
}

pub(crate) fn brightness_level(mean: f64) -> &'static str {
    match mean {
        m if m >= 0.75 => BRIGHTNESS_LEVELS[0],
        m if m >= 0.5 => BRIGHTNESS_LEVELS[1],
        m if m >= 0.25 => BRIGHTNESS_LEVELS[2],
        _ => BRIGHTNESS_LEVELS[3],
    }
}

fn frame_descriptor(prompt: &str) -> (String, &'static str) {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"Frame description: (.*) \(mean brightness ([0-9.]+)\)\s*$").unwrap());
    match re.captures(prompt) {
        Some(c) => (
            c[1].trim_end_matches('.').to_string(),
            brightness_level(c[2].parse().unwrap_or(0.5)),
        ),
        None => ("an unidentified scene".to_string(), BRIGHTNESS_LEVELS[1]),
    }
}

fn frame_caption(summary: &str, level: &str, continued: bool) -> String {
    let light = match level {
        "bright" => "The lighting is bright and even.",
        "normal" => "The lighting is moderate.",
        "slightly dark" => "The scene is slightly dark.",
        _ => "The scene is very dark and details are hard to make out.",
    };
    if continued {
        format!("This frame shows {summary}, continuing from the preceding frame. {light}")
    } else {
        format!("This frame shows {summary}. {light}")
    }
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn bare(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric() && c != '-')
        .to_lowercase()
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn join_words(ws: &[String]) -> String {
    ws.join(" ")
}

/// Index of the first word whose noun form is the caption's first content noun.
fn subject_index(ws: &[String]) -> Option<(usize, String)> {
    let subject = content_nouns(&join_words(ws), 1).into_iter().next()?;
    let idx = ws
        .iter()
        .position(|w| noun_form(&bare(w)).as_deref() == Some(subject.as_str()))?;
    Some((idx, subject))
}

/// Inserts `word` before position `at`, repairing a directly preceding article.
fn insert_before(ws: &mut Vec<String>, at: usize, word: &str) {
    ws.insert(at, word.to_string());
    fix_article(ws, at);
}

fn fix_article(ws: &mut [String], at: usize) {
    if at == 0 {
        return;
    }
    let prev = ws[at - 1].clone();
    if matches!(prev.to_lowercase().as_str(), "a" | "an") {
        let art = article(&bare(&ws[at]));
        ws[at - 1] = if prev.starts_with(char::is_uppercase) {
            let mut c = art.chars();
            c.next().unwrap().to_uppercase().chain(c).collect()
        } else {
            art.to_string()
        };
    }
}

/// Appends a clause before the caption's final terminator.
fn append_clause(text: &str, clause: &str) -> String {
    let t = text.trim();
    let (stem, end) = match t.char_indices().last() {
        Some((i, '.' | '!' | '?')) => (&t[..i], &t[i..]),
        _ => (t, "."),
    };
    format!("{stem} {clause}{end}")
}

fn first_ing_after(ws: &[String], from: usize) -> Option<usize> {
    (from + 1..ws.len()).find(|&i| {
        let w = bare(&ws[i]);
        w.len() > 4 && w.ends_with("ing")
    })
}

/// Distinct, human-readable items for ordering questions.
fn distinct_items(captions: &[String]) -> Vec<String> {
    let phrases: Vec<String> = captions.iter().map(|c| head_noun_phrase(c)).collect();
    if phrases.iter().collect::<HashSet<_>>().len() == phrases.len() {
        return phrases;
    }
    let texts: Vec<String> = captions
        .iter()
        .map(|c| c.trim().trim_end_matches(['.', '!', '?']).to_string())
        .collect();
    if texts.iter().collect::<HashSet<_>>().len() == texts.len() {
        return texts;
    }
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{t} (scene {})", i + 1))
        .collect()
}

fn choice(question: String, mut options: Vec<String>, answer: String, rng: &mut ChaCha8Rng) -> Value {
    options.shuffle(rng);
    json!({ "question": question, "options": options, "answer": answer })
}

/// Correct order plus up to three wrong permutations, rendered by `show`.
fn order_options<F>(k: usize, rng: &mut ChaCha8Rng, show: F) -> (Vec<String>, String)
where
    F: Fn(&[usize]) -> String,
{
    let identity: Vec<usize> = (0..k).collect();
    let answer = show(&identity);
    let wrong = perm::all_permutations(k).len() - 1;
    let mut options = vec![answer.clone()];
    if let Ok(ws) = perm::sample_wrong_orders(k, wrong.min(3), rng) {
        options.extend(ws.iter().map(|p| show(p)));
    }
    if options.len() < 2 {
        options.push("the order cannot be determined".to_string());
    }
    (options, answer)
}

fn order_qas(captions: &[String], rng: &mut ChaCha8Rng) -> Value {
    let k = captions.len().min(perm::MAX_ITEMS);
    let items = distinct_items(&captions[..k]);
    let mut qas = Vec::with_capacity(5);

    // Prefix labels are assigned in a shuffled presentation order.
    let mut shown: Vec<usize> = (0..k).collect();
    shown.shuffle(rng);
    let label_of = |event: usize| shown.iter().position(|&e| e == event).unwrap() + 1;
    let listing = |sep: &str| {
        shown
            .iter()
            .enumerate()
            .map(|(i, &e)| format!("({}) {}", i + 1, items[e]))
            .collect::<Vec<_>>()
            .join(sep)
    };

    let (options, answer) = order_options(k, rng, |p| p.iter().map(|&e| format!("({})", label_of(e))).collect());
    qas.push(choice(
        format!(
            "Sort the events from the video by their chronological order. {}.",
            listing("; ")
        ),
        options,
        answer,
        rng,
    ));

    let (options, answer) = order_options(k, rng, |p| {
        p.iter().map(|&e| items[e].as_str()).collect::<Vec<_>>().join(" → ")
    });
    qas.push(choice(
        format!(
            "Organize the listed events from the video according to their time sequence: {}",
            listing(" ")
        ),
        options,
        answer,
        rng,
    ));

    let mut objects: Vec<String> = captions[..k]
        .iter()
        .map(|c| content_nouns(c, 1).into_iter().next().unwrap_or_default())
        .collect();
    if objects.iter().any(String::is_empty) || objects.iter().collect::<HashSet<_>>().len() != objects.len() {
        objects = items.clone();
    }
    let (options, answer) = order_options(k, rng, |p| {
        p.iter().map(|&e| objects[e].as_str()).collect::<Vec<_>>().join(", ")
    });
    qas.push(choice(
        "What is the correct order that objects appear in the video?".to_string(),
        options,
        answer,
        rng,
    ));

    if k >= 2 {
        let options = items.clone();
        let question = [
            "Which event happens first in the video?",
            "What is shown first in the video?",
        ]
        .choose(rng)
        .unwrap()
        .to_string();
        qas.push(choice(question, options, items[0].clone(), rng));

        let i = rng.random_range(0..k - 1);
        let j = rng.random_range(i + 1..k);
        let seq = |a: usize, b: usize| format!("{} appears followed by {}", items[a], items[b]);
        let mut options = vec![seq(i, j), seq(j, i)];
        for (a, b) in [(k - 1, 0), (k - 1, i)] {
            let o = seq(a, b);
            if a != b && !options.contains(&o) {
                options.push(o);
            }
        }
        qas.push(choice(
            "In what sequence do the events occur in the video?".to_string(),
            options,
            seq(i, j),
            rng,
        ));
    } else {
        for question in [
            "Which event happens first in the video?",
            "How many events occur in the video?",
        ] {
            let answer = items.first().cloned().unwrap_or_else(|| "a single event".to_string());
            let options = vec![answer.clone(), format!("none of the above ({question})")];
            qas.push(choice(question.to_string(), options, answer, rng));
        }
    }
    json!({ "qas": qas })
}

fn attribute_pair(base: &str, attribute: &str, rng: &mut ChaCha8Rng) -> Option<(String, String)> {
    let ws = words(base);
    let (subj, _) = subject_index(&ws)?;
    let present: HashSet<String> = ws.iter().map(|w| bare(w)).collect();
    let pick = |pairs: &[(&'static str, &'static str)], rng: &mut ChaCha8Rng| {
        let fresh: Vec<_> = pairs
            .iter()
            .filter(|(a, b)| !present.contains(*a) && !present.contains(*b))
            .collect();
        fresh.choose(rng).map(|p| **p)
    };
    let (a, b) = match attribute {
        "light condition" => {
            let (a, b) = pick(LIGHT_PAIRS, rng)?;
            (append_clause(base, a), append_clause(base, b))
        }
        "posture" => {
            let (a, b) = pick(POSTURE_PAIRS, rng)?;
            let make = |word: &str| {
                let mut w = ws.clone();
                match first_ing_after(&w, subj) {
                    Some(i) => w[i] = word.to_string(),
                    None => w.insert(subj + 1, word.to_string()),
                }
                join_words(&w)
            };
            (make(a), make(b))
        }
        _ => {
            let pairs = match attribute {
                "color" => COLOR_PAIRS,
                "size & shape" => SIZE_PAIRS,
                _ => EMOTION_PAIRS,
            };
            let (a, b) = pick(pairs, rng)?;
            let make = |word: &str| {
                let mut w = ws.clone();
                insert_before(&mut w, subj, word);
                join_words(&w)
            };
            (make(a), make(b))
        }
    };
    Some(if rng.random_bool(0.5) { (a, b) } else { (b, a) })
}

fn attribute_captions(base: &str, rng: &mut ChaCha8Rng) -> Value {
    let n = rng.random_range(2..=ATTRIBUTE_TYPES.len());
    let mut kinds = ATTRIBUTE_TYPES.to_vec();
    kinds.shuffle(rng);
    let mut captions = serde_json::Map::new();
    for attr in kinds.into_iter().take(n) {
        if let Some((a, b)) = attribute_pair(base, attr, rng) {
            captions.insert(attr.to_string(), json!([a, b]));
        }
    }
    if captions.is_empty() {
        // Nothing to anchor an edit on; fall back to a scene-level lighting contrast.
        let (a, b) = LIGHT_PAIRS[0];
        let fallback = if base.trim().is_empty() {
            "The image shows a scene."
        } else {
            base
        };
        captions.insert(
            "light condition".into(),
            json!([append_clause(fallback, a), append_clause(fallback, b)]),
        );
    }
    json!({ "captions": captions })
}

fn light_tone(ws: &[String]) -> Option<bool> {
    if ws.iter().any(|w| BRIGHT_WORDS.contains(&w.as_str())) {
        Some(true)
    } else if ws.iter().any(|w| DARK_WORDS.contains(&w.as_str())) {
        Some(false)
    } else {
        None
    }
}

fn attribute_qa(first: &str, second: &str, rng: &mut ChaCha8Rng) -> Value {
    let a: Vec<String> = words(first).iter().map(|w| bare(w)).collect();
    let b: Vec<String> = words(second).iter().map(|w| bare(w)).collect();
    let a_only: Vec<String> = a.iter().filter(|w| !b.contains(w)).cloned().collect();
    let b_only: Vec<String> = b.iter().filter(|w| !a.contains(w)).cloned().collect();

    if let (Some(ta), Some(tb)) = (light_tone(&a_only), light_tone(&b_only)) {
        let answer = match (ta, tb) {
            (true, false) => "turning darker",
            (false, true) => "turning brighter",
            _ => "remaining stable",
        };
        let options = ["remaining stable", "turning darker", "turning brighter"]
            .map(String::from)
            .to_vec();
        return choice(
            "How does the light condition change in the video?".to_string(),
            options,
            answer.to_string(),
            rng,
        );
    }

    let subject = content_nouns(first, 1)
        .into_iter()
        .next()
        .unwrap_or_else(|| "scene".to_string());
    let question = [
        format!("What change occurs to the {subject} in the video?"),
        format!("How does the {subject} change over the course of the video?"),
        format!("What happens to the {subject} in the video?"),
    ]
    .choose(rng)
    .unwrap()
    .clone();
    if a_only.is_empty() && b_only.is_empty() {
        let options = vec!["remaining unchanged".to_string(), "changing completely".to_string()];
        return choice(question, options, "remaining unchanged".to_string(), rng);
    }
    let x = if a_only.is_empty() {
        "its original look".to_string()
    } else {
        a_only.join(" ")
    };
    let y = if b_only.is_empty() {
        "its original look".to_string()
    } else {
        b_only.join(" ")
    };
    let answer = format!("changing from {x} to {y}");
    let options = vec![
        answer.clone(),
        format!("changing from {y} to {x}"),
        format!("remaining {x} throughout"),
        format!("remaining {y} throughout"),
    ];
    choice(question, options, answer, rng)
}

fn attribute_qas(pairs: &[(String, String)], rng: &mut ChaCha8Rng) -> Value {
    let mut qas = serde_json::Map::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        qas.insert(payload::pair_key(i), attribute_qa(a, b, rng));
    }
    if qas.is_empty() {
        qas.insert(
            payload::pair_key(0),
            json!({
                "question": "How does the video change?",
                "options": ["it does not change", "it changes"],
                "answer": "it does not change",
            }),
        );
    }
    json!({ "qas": qas })
}

fn referring_captions(base: &str, rng: &mut ChaCha8Rng) -> Value {
    let ws = words(base);
    let Some((subj, subject)) = subject_index(&ws) else {
        return json!({ "captions": { "change_attribute": [
            append_clause(base, "with a red tint"),
            append_clause(base, "with a green tint"),
            append_clause(base, "with a blue tint"),
        ]}});
    };
    let present: HashSet<String> = ws.iter().map(|w| bare(w)).collect();
    let mut captions = serde_json::Map::new();

    let objects: Vec<&str> = SUBJECTS
        .iter()
        .copied()
        .filter(|s| *s != subject && !present.contains(*s))
        .collect();
    let objects: Vec<&str> = objects.choose_multiple(rng, 3).copied().collect();
    let swapped: Vec<String> = objects
        .iter()
        .map(|o| {
            let mut w = ws.clone();
            w[subj] = o.to_string();
            fix_article(&mut w, subj);
            join_words(&w)
        })
        .collect();
    captions.insert("change_object".into(), json!(swapped));

    let actions: Vec<&str> = ACTIONS
        .iter()
        .copied()
        .filter(|a| !present.contains(*a))
        .collect::<Vec<_>>()
        .choose_multiple(rng, 3)
        .copied()
        .collect();
    let verb_at = first_ing_after(&ws, subj);
    let acted: Vec<String> = actions
        .iter()
        .map(|a| {
            let mut w = ws.clone();
            match verb_at {
                Some(i) => w[i] = a.to_string(),
                None => w.insert(subj + 1, a.to_string()),
            }
            join_words(&w)
        })
        .collect();
    captions.insert("change_action".into(), json!(acted));

    let adjectives: Vec<&str> = ADJECTIVES
        .iter()
        .copied()
        .filter(|a| !present.contains(*a))
        .collect::<Vec<_>>()
        .choose_multiple(rng, 3)
        .copied()
        .collect();
    let described: Vec<String> = adjectives
        .iter()
        .map(|a| {
            let mut w = ws.clone();
            insert_before(&mut w, subj, a);
            join_words(&w)
        })
        .collect();
    captions.insert("change_attribute".into(), json!(described));

    json!({ "captions": captions })
}

fn referring_qa(element: &str, captions: &[String]) -> Value {
    let tokenized: Vec<Vec<String>> = captions
        .iter()
        .map(|c| words(c).iter().map(|w| bare(w)).filter(|w| !w.is_empty()).collect())
        .collect();
    let mut answers: Vec<String> = tokenized
        .iter()
        .enumerate()
        .map(|(i, ws)| {
            let unique: Vec<&str> = ws
                .iter()
                .filter(|w| {
                    tokenized
                        .iter()
                        .enumerate()
                        .all(|(j, other)| j == i || !other.contains(w))
                })
                .map(String::as_str)
                .collect();
            let joined = unique.join(" ");
            if element == "object" && !joined.is_empty() {
                format!("{} {joined}", article(&joined))
            } else {
                joined
            }
        })
        .collect();
    answers.resize(3, String::new());
    answers.truncate(3);
    if answers.iter().any(String::is_empty) || answers.iter().collect::<HashSet<_>>().len() != 3 {
        answers = ["the first variant", "the second variant", "the third variant"]
            .map(String::from)
            .to_vec();
    }

    let shared = captions
        .first()
        .map(|c| content_nouns(c, usize::MAX))
        .unwrap_or_default()
        .into_iter()
        .find(|n| {
            tokenized
                .iter()
                .all(|ws| ws.iter().any(|w| noun_form(w).as_deref() == Some(n)))
        })
        .unwrap_or_else(|| "subject".to_string());
    let question = match element {
        "object" => "What object appears in the video?".to_string(),
        "action" => format!("What is the {shared} doing?"),
        _ => format!("What does the {shared} look like?"),
    };
    json!({ "question": question, "answers": answers })
}

/// Turns each answer into a short declarative statement.
pub(crate) fn declarative(question: &str, answer: &str) -> String {
    static RES: OnceLock<[Regex; 3]> = OnceLock::new();
    let res = RES.get_or_init(|| {
        [
            Regex::new(r"^What is the .+ of the (.+)\?$").unwrap(),
            Regex::new(r"^What is the (.+) doing\?$").unwrap(),
            Regex::new(r"^What does the (.+) look like\?$").unwrap(),
        ]
    });
    for re in res {
        if let Some(c) = re.captures(question.trim()) {
            return format!("the {} is {answer}", &c[1]);
        }
    }
    format!("{answer} is visible")
}

fn statements(question: &str, answers: &[String]) -> String {
    let answers: Vec<String> = if answers.is_empty() {
        vec!["something".into(); 3]
    } else {
        answers.to_vec()
    };
    answers
        .iter()
        .enumerate()
        .map(|(i, a)| format!("Declarative Statement {}: {}", i + 1, declarative(question, a)))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{parse_reply, payload};

    fn mock() -> MockProvider {
        MockProvider::new(7)
    }

    fn ask(kind: PromptKind, values: &[(&str, &str)]) -> Value {
        let prompt = PromptSet::builtin().render(kind, values).unwrap();
        let reply = mock().complete(&prompt).unwrap();
        parse_reply(&reply, &kind.schema()).unwrap_or_else(|e| panic!("{e}: {reply}"))
    }

    #[test]
    fn deterministic_per_prompt_and_seed() {
        let prompt = PromptSet::builtin()
            .render(
                PromptKind::OrderQa,
                &[("image_captions", "1. A dog.\n2. A cat.\n3. A cup.")],
            )
            .unwrap();
        assert_eq!(mock().complete(&prompt).unwrap(), mock().complete(&prompt).unwrap());
        assert_ne!(
            MockProvider::new(1).complete(&prompt).unwrap(),
            MockProvider::new(2).complete(&prompt).unwrap()
        );
    }

    #[test]
    fn order_prompt_yields_five_qas() {
        let caps = [
            "The image shows a person playing basketball.",
            "The image shows a dog running on the grass.",
            "The image is about a beautiful flower on the table.",
            "The image illustrates a bustling city street.",
        ];
        let v = ask(PromptKind::OrderQa, &[("image_captions", &payload::numbered(&caps))]);
        let qas = v["qas"].as_array().unwrap();
        assert_eq!(qas.len(), 5);
        for qa in qas {
            let options: Vec<&str> = qa["options"]
                .as_array()
                .unwrap()
                .iter()
                .map(|o| o.as_str().unwrap())
                .collect();
            assert!(options.contains(&qa["answer"].as_str().unwrap()));
        }
        // The first event named in the "which first" question is the first caption's phrase.
        assert_eq!(qas[3]["answer"], "person basketball");
    }

    #[test]
    fn placeholders_recovered_exactly() {
        let m = mock();
        let prompt = PromptSet::builtin()
            .render(
                PromptKind::ReferringQa,
                &[("element", "action"), ("captions", "1. a\n2. b\n3. c")],
            )
            .unwrap();
        let f = m.fields(PromptKind::ReferringQa, &prompt).unwrap();
        assert_eq!(f["element"], "action");
        assert_eq!(f["captions"], "1. a\n2. b\n3. c");
    }

    #[test]
    fn attribute_pair_order_drives_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bright = "The image shows a dog on the porch in bright sunlight.";
        let dim = "The image shows a dog on the porch in a dim, dark setting.";
        assert_eq!(attribute_qa(bright, dim, &mut rng)["answer"], "turning darker");
        assert_eq!(attribute_qa(dim, bright, &mut rng)["answer"], "turning brighter");
        let red = "The image shows a red apple on the table.";
        let green = "The image shows a green apple on the table.";
        assert_eq!(
            attribute_qa(red, green, &mut rng)["answer"],
            "changing from red to green"
        );
        assert_eq!(
            attribute_qa(green, red, &mut rng)["answer"],
            "changing from green to red"
        );
    }

    #[test]
    fn attribute_edits_keep_articles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = attribute_captions("The image shows an apple on the table.", &mut rng);
        for (_, pair) in v["captions"].as_object().unwrap() {
            for c in pair.as_array().unwrap() {
                let c = c.as_str().unwrap();
                assert!(!c.contains("an red") && !c.contains("a apple"), "{c}");
            }
        }
    }

    #[test]
    fn referring_captions_differ_in_one_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = referring_captions("The image shows a person sitting on the chair.", &mut rng);
        let objects = v["captions"]["change_object"].as_array().unwrap();
        assert_eq!(objects.len(), 3);
        for o in objects {
            assert!(o.as_str().unwrap().ends_with("sitting on the chair."));
            assert!(!o.as_str().unwrap().contains("person"));
        }
        let qa = referring_qa(
            "object",
            &objects
                .iter()
                .map(|o| o.as_str().unwrap().to_string())
                .collect::<Vec<_>>(),
        );
        assert_eq!(qa["answers"].as_array().unwrap().len(), 3);
        let actions: Vec<String> = v["captions"]["change_action"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_str().unwrap().to_string())
            .collect();
        let qa = referring_qa("action", &actions);
        assert_eq!(qa["question"], "What is the person doing?");
    }

    #[test]
    fn declarative_rules() {
        assert_eq!(
            declarative("What is the color of the cat?", "white"),
            "the cat is white"
        );
        assert_eq!(
            declarative("What is the person doing?", "running"),
            "the person is running"
        );
        assert_eq!(
            declarative("What object appears in the video?", "a cup"),
            "a cup is visible"
        );
    }

    #[test]
    fn unknown_prompt_is_not_json() {
        let reply = mock().complete("tell me a joke").unwrap();
        assert!(parse_reply(&reply, &PromptKind::ExtractPhrase.schema()).is_err());
        assert!(matches!(mock().complete("  "), Err(ProviderError::EmptyPrompt)));
    }
}
