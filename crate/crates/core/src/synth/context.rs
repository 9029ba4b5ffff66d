//! Extended contexts: relevant captions interleaved with noun-disjoint distractors.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_nouns, sample_distractors, Caption, CaptionPool, CorpusError, NounBearing};

/// A caption that takes part in a question, either drawn from the pool or
/// written by the provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevantCaption {
    pub text: String,
    pub nouns: BTreeSet<String>,
    pub pool_id: Option<usize>,
}

impl RelevantCaption {
    pub fn generated(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            nouns: extract_nouns(&text),
            text,
            pool_id: None,
        }
    }
}

impl From<&Caption> for RelevantCaption {
    fn from(c: &Caption) -> Self {
        Self {
            text: c.text.clone(),
            nouns: c.nouns.clone(),
            pool_id: Some(c.id),
        }
    }
}

impl NounBearing for RelevantCaption {
    fn nouns(&self) -> &BTreeSet<String> {
        &self.nouns
    }
    fn pool_id(&self) -> Option<usize> {
        self.pool_id
    }
    fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Role {
    Relevant { rank: usize },
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub text: String,
    /// Pool id for pool captions; absent for provider-written captions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_id: Option<usize>,
    pub role: Role,
}

pub const DEFAULT_TOLERANCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorBand {
    pub target: usize,
    pub tolerance: usize,
}

impl DistractorBand {
    pub fn new(target: usize) -> Self {
        Self {
            target,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    /// A zero target means no distractors at all rather than `[0, tolerance]`.
    pub fn bounds(&self) -> (usize, usize) {
        if self.target == 0 {
            (0, 0)
        } else {
            (self.target.saturating_sub(self.tolerance), self.target + self.tolerance)
        }
    }

    pub fn contains(&self, n: usize) -> bool {
        let (lo, hi) = self.bounds();
        (lo..=hi).contains(&n)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let (lo, hi) = self.bounds();
        rng.random_range(lo..=hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedContext {
    pub entries: Vec<ContextEntry>,
    pub band: DistractorBand,
    pub seed: u64,
}

impl ExtendedContext {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Positions of relevant entries, in sequence order.
    pub fn relevant_positions(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.role, Role::Relevant { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Ranks of relevant entries, in sequence order.
    pub fn relevant_ranks(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter_map(|e| match e.role {
                Role::Relevant { rank } => Some(rank),
                Role::Distractor => None,
            })
            .collect()
    }

    pub fn relevant_texts(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| matches!(e.role, Role::Relevant { .. }))
            .map(|e| e.text.as_str())
            .collect()
    }

    pub fn distractor_count(&self) -> usize {
        self.entries.iter().filter(|e| e.role == Role::Distractor).count()
    }
}

fn relevant_entry(r: &RelevantCaption, rank: usize) -> ContextEntry {
    ContextEntry {
        text: r.text.clone(),
        pool_id: r.pool_id,
        role: Role::Relevant { rank },
    }
}

fn distractor_entry(c: &Caption) -> ContextEntry {
    ContextEntry {
        text: c.text.clone(),
        pool_id: Some(c.id),
        role: Role::Distractor,
    }
}

/// Draws the distractor count and the distractors themselves. `blockers`
/// are extra captions (e.g. the base caption a variant was written from)
/// whose nouns and ids must also be avoided.
fn draw_distractors<'p>(
    pool: &'p CaptionPool,
    relevant: &[RelevantCaption],
    blockers: &[RelevantCaption],
    band: DistractorBand,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'p Caption>, CorpusError> {
    let n = band.draw(rng);
    let all: Vec<&RelevantCaption> = relevant.iter().chain(blockers).collect();
    sample_distractors(pool, &all, n, rng)
}

/// Interleaves `relevant` (in the given order) with distractors spread
/// uniformly over the k + 1 gaps.
pub fn ext_cont<R: Rng + ?Sized>(
    pool: &CaptionPool,
    relevant: &[RelevantCaption],
    band: DistractorBand,
    rng: &mut R,
) -> Result<ExtendedContext, CorpusError> {
    ext_cont_avoiding(pool, relevant, &[], band, rng)
}

pub fn ext_cont_avoiding<R: Rng + ?Sized>(
    pool: &CaptionPool,
    relevant: &[RelevantCaption],
    blockers: &[RelevantCaption],
    band: DistractorBand,
    rng: &mut R,
) -> Result<ExtendedContext, CorpusError> {
    assert!(!relevant.is_empty(), "ext_cont needs at least one relevant caption");
    let seed = rng.random::<u64>();
    let mut local = ChaCha8Rng::seed_from_u64(seed);
    let distractors = draw_distractors(pool, relevant, blockers, band, &mut local)?;
    let k = relevant.len();
    let total = k + distractors.len();
    // A uniformly random k-subset of positions is the same as placing the
    // distractors uniformly over the gaps around the relevant captions.
    let mut slots = index::sample(&mut local, total, k).into_vec();
    slots.sort_unstable();
    let mut entries = Vec::with_capacity(total);
    let (mut next_rel, mut next_dis) = (0, 0);
    for pos in 0..total {
        if next_rel < k && slots[next_rel] == pos {
            entries.push(relevant_entry(&relevant[next_rel], next_rel));
            next_rel += 1;
        } else {
            entries.push(distractor_entry(distractors[next_dis]));
            next_dis += 1;
        }
    }
    Ok(ExtendedContext { entries, band, seed })
}

/// Places three captions at the first, median and last positions, with the
/// distractors split into the two runs between them.
pub fn place_at_slots<R: Rng + ?Sized>(
    pool: &CaptionPool,
    three: &[RelevantCaption; 3],
    blockers: &[RelevantCaption],
    band: DistractorBand,
    rng: &mut R,
) -> Result<ExtendedContext, CorpusError> {
    let seed = rng.random::<u64>();
    let mut local = ChaCha8Rng::seed_from_u64(seed);
    let distractors = draw_distractors(pool, three, blockers, band, &mut local)?;
    let n = distractors.len();
    // With len = n + 3, the middle caption lands at 1 + ceil(n / 2) = floor(len / 2).
    let first_run = n.div_ceil(2);
    let mut entries = Vec::with_capacity(n + 3);
    entries.push(relevant_entry(&three[0], 0));
    entries.extend(distractors[..first_run].iter().map(|c| distractor_entry(c)));
    entries.push(relevant_entry(&three[1], 1));
    entries.extend(distractors[first_run..].iter().map(|c| distractor_entry(c)));
    entries.push(relevant_entry(&three[2], 2));
    Ok(ExtendedContext { entries, band, seed })
}

/// One `Frame i: caption` line per entry.
pub fn render_context(ctx: &ExtendedContext) -> String {
    ctx.entries
        .iter()
        .enumerate()
        .map(|(i, e)| format!("Frame {}: {}", i + 1, e.text))
        .collect::<Vec<_>>()
        .join("\n")
}
