//! The five QA families. Each generator handles one unit of work (one
//! relevant-caption draw or one base caption) and reports what it had to
//! throw away instead of failing.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde_json::Value;

use super::context::{ext_cont, ext_cont_avoiding, place_at_slots, ExtendedContext, RelevantCaption};
use super::family::{Scale, TaskFamily, TemplateTarget};
use super::sample::{grounding_options, Provenance, QaSample, Slot};
use crate::corpus::{head_noun_phrase, sample_relevant, CaptionPool, CorpusError};
use crate::perm;
use crate::provider::schema::check_choice;
use crate::provider::{
    payload, request_structured, PromptKind, PromptSet, Provider, ProviderError, REFERRING_ELEMENTS,
};

/// Renders one ordering of the relevant items as option text.
type OrderRenderer = Box<dyn Fn(&[usize]) -> String>;

pub const SENTENCE_TEMPLATES: &[&str] = &[
    "Reorder the following captions according to the above video.",
    "Arrange the following frame descriptions in the order in which they appear in the video.",
    "Sort the following captions by when they occur in the video.",
];

pub const PHRASE_TEMPLATES: &[&str] = &[
    "Sort the events from the video by their chronological order.",
    "Organize the listed events from the video according to their time sequence.",
    "In which order do the following events happen in the video?",
];

pub const GROUNDING_TEMPLATES: &[&str] = &[
    "In which part of the video can we see [X]?",
    "In which part of the video can we observe [X]?",
    "When in the video is it the case that [X]?",
];

pub const ORDER_SEPARATOR: &str = " → ";

/// Why a unit, or part of one, produced nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiscardReason {
    Provider,
    Parse,
    Options,
    Arity,
    DuplicateItems,
    Distractors,
    PoolTooSmall,
    Verify,
    /// The unit produced neither samples nor a specific failure.
    Empty,
}

impl DiscardReason {
    pub fn name(self) -> &'static str {
        match self {
            DiscardReason::Provider => "provider",
            DiscardReason::Parse => "parse",
            DiscardReason::Options => "options",
            DiscardReason::Arity => "arity",
            DiscardReason::DuplicateItems => "duplicate-items",
            DiscardReason::Distractors => "distractors",
            DiscardReason::PoolTooSmall => "pool-too-small",
            DiscardReason::Verify => "verify",
            DiscardReason::Empty => "empty",
        }
    }

    fn of_provider(e: &ProviderError) -> Self {
        match e {
            ProviderError::Parse(_) => DiscardReason::Parse,
            _ => DiscardReason::Provider,
        }
    }

    fn of_corpus(e: &CorpusError) -> Self {
        match e {
            CorpusError::InsufficientDistractors { .. } => DiscardReason::Distractors,
            _ => DiscardReason::PoolTooSmall,
        }
    }
}

#[derive(Debug, Default)]
pub struct UnitOutput {
    /// Samples without id or seed; the batch driver assigns both.
    pub samples: Vec<QaSample>,
    pub discards: Vec<DiscardReason>,
}

impl UnitOutput {
    fn discard(reason: DiscardReason) -> Self {
        Self {
            samples: Vec::new(),
            discards: vec![reason],
        }
    }
}

/// Shared inputs of every generator.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub pool: &'a CaptionPool,
    pub provider: &'a dyn Provider,
    pub prompts: &'a PromptSet,
}

fn draft(
    family: TaskFamily,
    context: ExtendedContext,
    question: String,
    options: Option<Vec<String>>,
    answer: String,
    provenance: Provenance,
) -> QaSample {
    QaSample {
        id: String::new(),
        family,
        context,
        question,
        options,
        answer,
        provenance,
        seed: 0,
    }
}

fn base_provenance(relevant: &[RelevantCaption], ctx: &ExtendedContext) -> Provenance {
    Provenance {
        relevant_ids: relevant.iter().map(|r| r.pool_id).collect(),
        relevant_positions: ctx.relevant_positions(),
        ..Provenance::default()
    }
}

fn strings(v: &Value) -> Option<Vec<String>> {
    v.as_array()?.iter().map(|x| x.as_str().map(str::to_string)).collect()
}

fn all_distinct(items: &[String]) -> bool {
    items.iter().collect::<HashSet<_>>().len() == items.len()
}

macro_rules! try_unit {
    ($expr:expr, $reason:expr) => {
        match $expr {
            Ok(v) => v,
            Err(e) => return UnitOutput::discard($reason(&e)),
        }
    };
}

impl<'a> Generator<'a> {
    pub fn new(pool: &'a CaptionPool, provider: &'a dyn Provider, prompts: &'a PromptSet) -> Self {
        Self {
            pool,
            provider,
            prompts,
        }
    }

    pub fn run<R: Rng>(&self, family: TaskFamily, rng: &mut R) -> UnitOutput {
        match family {
            TaskFamily::OrderGpt(scale) => self.order_gpt(scale, rng),
            TaskFamily::OrderTemplate(target) => self.order_template(target, rng),
            TaskFamily::Attribute(scale) => self.attribute(scale, rng),
            TaskFamily::Referring => self.referring(rng),
            TaskFamily::Grounding => self.grounding(rng),
        }
    }

    fn relevant<R: Rng>(&self, family: TaskFamily, rng: &mut R) -> Result<Vec<RelevantCaption>, CorpusError> {
        let (lo, hi) = family.relevant_range();
        let k = rng.random_range(lo..=hi);
        Ok(sample_relevant(self.pool, k, rng)?
            .into_iter()
            .map(RelevantCaption::from)
            .collect())
    }

    /// One shared context and up to five provider-written order questions.
    pub fn order_gpt<R: Rng>(&self, scale: Scale, rng: &mut R) -> UnitOutput {
        let family = TaskFamily::OrderGpt(scale);
        let relevant = try_unit!(self.relevant(family, rng), DiscardReason::of_corpus);
        let ctx = try_unit!(
            ext_cont(self.pool, &relevant, family.band(), rng),
            DiscardReason::of_corpus
        );
        let texts: Vec<&str> = relevant.iter().map(|r| r.text.as_str()).collect();
        let reply = try_unit!(
            self.prompts
                .render(PromptKind::OrderQa, &[("image_captions", &payload::numbered(&texts))])
                .map_err(ProviderError::from)
                .and_then(|p| request_structured(self.provider, &p, &PromptKind::OrderQa.schema())),
            DiscardReason::of_provider
        );
        let mut out = UnitOutput::default();
        for qa in reply["qas"].as_array().into_iter().flatten() {
            let options = qa["options"].as_array().cloned().unwrap_or_default();
            let answer = qa["answer"].as_str().unwrap_or_default();
            if check_choice(&options, answer).is_err() {
                out.discards.push(DiscardReason::Options);
                continue;
            }
            out.samples.push(draft(
                family,
                ctx.clone(),
                qa["question"].as_str().unwrap_or_default().to_string(),
                strings(&Value::Array(options)),
                answer.to_string(),
                base_provenance(&relevant, &ctx),
            ));
        }
        out
    }

    /// Provider-extracted noun phrase, falling back to the head-noun heuristic.
    fn phrase(&self, caption: &str) -> String {
        let attempt = self
            .prompts
            .render(PromptKind::ExtractPhrase, &[("caption", caption)])
            .map_err(ProviderError::from)
            .and_then(|p| request_structured(self.provider, &p, &PromptKind::ExtractPhrase.schema()));
        match attempt {
            Ok(v) => v["phrase"].as_str().unwrap_or_default().trim().to_string(),
            Err(e) => {
                log::debug!("phrase extraction fell back to heuristic: {e}");
                head_noun_phrase(caption)
            }
        }
    }

    pub fn order_template<R: Rng>(&self, target: TemplateTarget, rng: &mut R) -> UnitOutput {
        let family = TaskFamily::OrderTemplate(target);
        let relevant = try_unit!(self.relevant(family, rng), DiscardReason::of_corpus);
        let ctx = try_unit!(
            ext_cont(self.pool, &relevant, family.band(), rng),
            DiscardReason::of_corpus
        );
        let k = relevant.len();
        let mut presentation: Vec<usize> = (0..k).collect();
        presentation.shuffle(rng);
        let mut provenance = base_provenance(&relevant, &ctx);

        if target == TemplateTarget::Sentence {
            let template = SENTENCE_TEMPLATES.choose(rng).unwrap();
            let texts: Vec<String> = relevant.iter().map(|r| r.text.clone()).collect();
            let shown: Vec<&String> = presentation.iter().map(|&r| &texts[r]).collect();
            let question = format!("{template}\n{}", payload::numbered(&shown));
            let answer = texts.join("\n");
            provenance.items = Some(texts);
            provenance.presentation = Some(presentation);
            return UnitOutput {
                samples: vec![draft(family, ctx, question, None, answer, provenance)],
                discards: Vec::new(),
            };
        }

        let mut items: Vec<String> = relevant.iter().map(|r| self.phrase(&r.text)).collect();
        if !all_distinct(&items) || items.iter().any(String::is_empty) {
            items = relevant
                .iter()
                .map(|r| r.text.trim_end_matches(['.', '!', '?']).to_string())
                .collect();
        }
        if !all_distinct(&items) {
            return UnitOutput::discard(DiscardReason::DuplicateItems);
        }
        let wrong = match perm::sample_wrong_orders(k, 3, rng) {
            Ok(w) => w,
            Err(_) => return UnitOutput::discard(DiscardReason::Options),
        };
        let template = PHRASE_TEMPLATES.choose(rng).unwrap();
        let identity: Vec<usize> = (0..k).collect();

        let (listing, render): (Vec<String>, OrderRenderer) = match target {
            TemplateTarget::Phrase => {
                let items = items.clone();
                (
                    presentation.iter().map(|&r| items[r].clone()).collect(),
                    Box::new(move |p: &[usize]| {
                        p.iter()
                            .map(|&r| items[r].as_str())
                            .collect::<Vec<_>>()
                            .join(ORDER_SEPARATOR)
                    }),
                )
            }
            _ => {
                let labels = prefix_labels(&presentation);
                (
                    presentation
                        .iter()
                        .enumerate()
                        .map(|(i, &r)| format!("({}) {}", i + 1, items[r]))
                        .collect(),
                    Box::new(move |p: &[usize]| p.iter().map(|&r| format!("({})", labels[r])).collect()),
                )
            }
        };
        let question = format!("{template} {}", listing.join("; "));
        let answer = render(&identity);
        let mut options: Vec<String> = std::iter::once(answer.clone())
            .chain(wrong.iter().map(|p| render(p)))
            .collect();
        options.shuffle(rng);
        provenance.items = Some(items);
        provenance.presentation = Some(presentation);
        UnitOutput {
            samples: vec![draft(family, ctx, question, Some(options), answer, provenance)],
            discards: Vec::new(),
        }
    }

    /// One base caption, a contrasting pair per attribute, one question per pair.
    pub fn attribute<R: Rng>(&self, scale: Scale, rng: &mut R) -> UnitOutput {
        let family = TaskFamily::Attribute(scale);
        let base: RelevantCaption = match sample_relevant(self.pool, 1, rng) {
            Ok(v) => v[0].into(),
            Err(e) => return UnitOutput::discard(DiscardReason::of_corpus(&e)),
        };
        let reply = try_unit!(
            self.prompts
                .render(PromptKind::AttributeCaptions, &[("original_caption", &base.text)])
                .map_err(ProviderError::from)
                .and_then(|p| request_structured(self.provider, &p, &PromptKind::AttributeCaptions.schema())),
            DiscardReason::of_provider
        );
        let mut out = UnitOutput::default();
        let mut pairs: Vec<(String, (String, String))> = Vec::new();
        for (attr, pair) in reply["captions"].as_object().into_iter().flatten() {
            let texts = strings(pair).unwrap_or_default();
            match texts.as_slice() {
                [a, b] if a != b => pairs.push((attr.clone(), (a.clone(), b.clone()))),
                [_, _] => out.discards.push(DiscardReason::DuplicateItems),
                _ => out.discards.push(DiscardReason::Arity),
            }
        }
        if pairs.is_empty() {
            return out;
        }
        let plain: Vec<(String, String)> = pairs.iter().map(|(_, p)| p.clone()).collect();
        let qas = match self
            .prompts
            .render(
                PromptKind::AttributeQa,
                &[("caption_pairs", &payload::caption_pairs(&plain))],
            )
            .map_err(ProviderError::from)
            .and_then(|p| request_structured(self.provider, &p, &PromptKind::AttributeQa.schema()))
        {
            Ok(v) => v,
            Err(e) => {
                out.discards
                    .extend(std::iter::repeat_n(DiscardReason::of_provider(&e), pairs.len()));
                return out;
            }
        };
        for (i, (attr, (a, b))) in pairs.into_iter().enumerate() {
            let qa = &qas["qas"][payload::pair_key(i)];
            let (Some(question), Some(options), Some(answer)) =
                (qa["question"].as_str(), strings(&qa["options"]), qa["answer"].as_str())
            else {
                out.discards.push(DiscardReason::Parse);
                continue;
            };
            if check_choice(qa["options"].as_array().unwrap(), answer).is_err() {
                out.discards.push(DiscardReason::Options);
                continue;
            }
            let relevant = vec![RelevantCaption::generated(a), RelevantCaption::generated(b)];
            let ctx = match ext_cont_avoiding(self.pool, &relevant, std::slice::from_ref(&base), family.band(), rng) {
                Ok(c) => c,
                Err(e) => {
                    out.discards.push(DiscardReason::of_corpus(&e));
                    continue;
                }
            };
            let mut provenance = base_provenance(&relevant, &ctx);
            provenance.element = Some(attr);
            provenance.base_caption_id = base.pool_id;
            out.samples.push(draft(
                family,
                ctx,
                question.to_string(),
                Some(options),
                answer.to_string(),
                provenance,
            ));
        }
        out
    }

    /// Per element type: three variant captions placed at the beginning,
    /// middle and end of one context, plus the shared question and the
    /// per-caption answers.
    pub fn referring_bundle<R: Rng>(&self, rng: &mut R) -> (Vec<ReferringElement>, Vec<DiscardReason>) {
        let mut discards = Vec::new();
        let base: RelevantCaption = match sample_relevant(self.pool, 1, rng) {
            Ok(v) => v[0].into(),
            Err(e) => return (Vec::new(), vec![DiscardReason::of_corpus(&e)]),
        };
        let reply = match self
            .prompts
            .render(PromptKind::ReferringCaptions, &[("original_caption", &base.text)])
            .map_err(ProviderError::from)
            .and_then(|p| request_structured(self.provider, &p, &PromptKind::ReferringCaptions.schema()))
        {
            Ok(v) => v,
            Err(e) => return (Vec::new(), vec![DiscardReason::of_provider(&e)]),
        };
        let mut elements = Vec::new();
        for (key, element) in REFERRING_ELEMENTS {
            let Some(value) = reply["captions"].get(key) else {
                continue;
            };
            let captions = strings(value).unwrap_or_default();
            if captions.len() != 3 {
                discards.push(DiscardReason::Arity);
                continue;
            }
            if !all_distinct(&captions) {
                discards.push(DiscardReason::DuplicateItems);
                continue;
            }
            let qa = match self
                .prompts
                .render(
                    PromptKind::ReferringQa,
                    &[("element", element), ("captions", &payload::numbered(&captions))],
                )
                .map_err(ProviderError::from)
                .and_then(|p| request_structured(self.provider, &p, &PromptKind::ReferringQa.schema()))
            {
                Ok(v) => v,
                Err(e) => {
                    discards.push(DiscardReason::of_provider(&e));
                    continue;
                }
            };
            let answers = strings(&qa["answers"]).unwrap_or_default();
            if !all_distinct(&answers) {
                discards.push(DiscardReason::DuplicateItems);
                continue;
            }
            let three: [RelevantCaption; 3] = [
                RelevantCaption::generated(&captions[0]),
                RelevantCaption::generated(&captions[1]),
                RelevantCaption::generated(&captions[2]),
            ];
            let band = TaskFamily::Referring.band();
            let ctx = match place_at_slots(self.pool, &three, std::slice::from_ref(&base), band, rng) {
                Ok(c) => c,
                Err(e) => {
                    discards.push(DiscardReason::of_corpus(&e));
                    continue;
                }
            };
            elements.push(ReferringElement {
                element: element.to_string(),
                captions: three.to_vec(),
                question: qa["question"].as_str().unwrap_or_default().to_string(),
                answers,
                context: ctx,
                base_caption_id: base.pool_id,
            });
        }
        (elements, discards)
    }

    pub fn referring<R: Rng>(&self, rng: &mut R) -> UnitOutput {
        let (elements, discards) = self.referring_bundle(rng);
        let mut out = UnitOutput {
            samples: Vec::new(),
            discards,
        };
        for el in elements {
            for slot in Slot::ALL {
                let mut provenance = el.provenance();
                provenance.slot = Some(slot);
                provenance.items = Some(el.answers.clone());
                out.samples.push(draft(
                    TaskFamily::Referring,
                    el.context.clone(),
                    referring_question(&el.question, slot),
                    None,
                    el.answers[slot.index()].clone(),
                    provenance,
                ));
            }
        }
        out
    }

    /// Grounding reuses the referring bundle: each answer is restated as a
    /// declarative statement and the question asks where it holds.
    pub fn grounding<R: Rng>(&self, rng: &mut R) -> UnitOutput {
        let (elements, discards) = self.referring_bundle(rng);
        let mut out = UnitOutput {
            samples: Vec::new(),
            discards,
        };
        for el in elements {
            let statements = match self
                .prompts
                .render(
                    PromptKind::GroundingStatements,
                    &[(
                        "question_and_answers",
                        &payload::question_and_answers(&el.question, &el.answers),
                    )],
                )
                .map_err(ProviderError::from)
                .and_then(|p| request_structured(self.provider, &p, &PromptKind::GroundingStatements.schema()))
            {
                Ok(v) => strings(&v).unwrap_or_default(),
                Err(e) => {
                    out.discards.push(DiscardReason::of_provider(&e));
                    continue;
                }
            };
            let statements: Vec<String> = statements
                .iter()
                .map(|s| s.trim().trim_end_matches('.').to_string())
                .collect();
            if statements.len() != 3 {
                out.discards.push(DiscardReason::Arity);
                continue;
            }
            if !all_distinct(&statements) {
                out.discards.push(DiscardReason::DuplicateItems);
                continue;
            }
            for slot in Slot::ALL {
                let template = GROUNDING_TEMPLATES.choose(rng).unwrap();
                let mut provenance = el.provenance();
                provenance.slot = Some(slot);
                provenance.items = Some(statements.clone());
                out.samples.push(draft(
                    TaskFamily::Grounding,
                    el.context.clone(),
                    template.replace("[X]", &statements[slot.index()]),
                    Some(grounding_options()),
                    slot.option().to_string(),
                    provenance,
                ));
            }
        }
        out
    }
}

/// One element type's worth of referring material.
#[derive(Debug, Clone)]
pub struct ReferringElement {
    pub element: String,
    pub captions: Vec<RelevantCaption>,
    pub question: String,
    pub answers: Vec<String>,
    pub context: ExtendedContext,
    pub base_caption_id: Option<usize>,
}

impl ReferringElement {
    fn provenance(&self) -> Provenance {
        let mut p = base_provenance(&self.captions, &self.context);
        p.element = Some(self.element.clone());
        p.base_caption_id = self.base_caption_id;
        p
    }
}

/// Label shown before each rank's item when items are listed in
/// `presentation` order: rank r gets its 1-based listing position.
pub fn prefix_labels(presentation: &[usize]) -> Vec<usize> {
    let mut labels = vec![0; presentation.len()];
    for (i, &r) in presentation.iter().enumerate() {
        labels[r] = i + 1;
    }
    labels
}

/// Appends the slot reference to a location-free question.
pub fn referring_question(question: &str, slot: Slot) -> String {
    let q = question.trim().trim_end_matches('?').trim_end();
    let q = q.strip_suffix(" in the video").unwrap_or(q);
    format!("{q} {}?", slot.reference_phrase())
}
