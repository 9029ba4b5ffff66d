//! Extended-context construction and the five QA-generation families, plus
//! the deterministic batch driver.

mod context;
mod family;
mod gen;
mod sample;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use context::{
    ext_cont, ext_cont_avoiding, place_at_slots, render_context, ContextEntry, DistractorBand, ExtendedContext,
    RelevantCaption, Role, DEFAULT_TOLERANCE,
};
pub use family::{Scale, TaskFamily, TemplateTarget, UnknownFamily};
pub use gen::{
    prefix_labels, referring_question, DiscardReason, Generator, ReferringElement, UnitOutput, GROUNDING_TEMPLATES,
    ORDER_SEPARATOR, PHRASE_TEMPLATES, SENTENCE_TEMPLATES,
};
pub use sample::{grounding_options, sample_id, Provenance, QaSample, Slot};

use crate::quality::verify_sample;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("count must be at least 1")]
    ZeroCount,
    #[error(
        "aborted after {units} units: {discarded} discarded vs {accepted} accepted exceeds the {max_ratio} discard ratio ({reasons})"
    )]
    ExcessiveDiscards {
        units: u64,
        accepted: usize,
        discarded: usize,
        max_ratio: f64,
        reasons: String,
    },
    #[error("writing samples: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub family: TaskFamily,
    pub count: usize,
    pub seed: u64,
    /// First unit index to run; non-zero when resuming.
    pub start_unit: u64,
    /// Samples of `start_unit` with a smaller in-unit offset were already written.
    pub skip_in_first_unit: usize,
    /// Units per parallel wave. Fixed, so results never depend on the worker count.
    pub wave_size: usize,
    pub max_discard_ratio: f64,
    /// The discard ratio is only enforced once this many outcomes are in.
    pub min_outcomes: usize,
}

impl GenerateOptions {
    pub fn new(family: TaskFamily, count: usize, seed: u64) -> Self {
        Self {
            family,
            count,
            seed,
            start_unit: 0,
            skip_in_first_unit: 0,
            wave_size: 32,
            max_discard_ratio: 0.5,
            min_outcomes: 20,
        }
    }

    /// Continues after `existing`, the samples already written by an
    /// interrupted run with the same family and seed.
    pub fn resume_after(mut self, existing: &[QaSample]) -> Self {
        if let Some((unit, offset)) = existing.last().and_then(QaSample::unit_and_offset) {
            self.start_unit = unit;
            self.skip_in_first_unit = offset + 1;
            self.count = self.count.saturating_sub(existing.len());
        }
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerateReport {
    pub accepted: usize,
    pub discarded: usize,
    pub units: u64,
    pub discard_reasons: BTreeMap<String, usize>,
}

/// Per-unit seed, independent of scheduling.
pub fn unit_seed(master: u64, family: TaskFamily, unit: u64) -> u64 {
    let digest = Sha256::digest(format!("{master}/{family}/{unit}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn expected_yield(family: TaskFamily) -> usize {
    match family {
        TaskFamily::OrderGpt(_) => 5,
        TaskFamily::OrderTemplate(_) => 1,
        TaskFamily::Attribute(_) => 3,
        TaskFamily::Referring | TaskFamily::Grounding => 9,
    }
}

fn run_unit(generator: &Generator<'_>, opts: &GenerateOptions, unit: u64) -> UnitOutput {
    let seed = unit_seed(opts.seed, opts.family, unit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = generator.run(opts.family, &mut rng);
    let mut kept = Vec::with_capacity(out.samples.len());
    for (offset, mut s) in out.samples.into_iter().enumerate() {
        s.id = sample_id(opts.family, unit, offset);
        s.seed = seed;
        if verify_sample(&s, Some(generator.pool)).pass {
            kept.push(s);
        } else {
            log::debug!("sample {} failed verification", s.id);
            out.discards.push(DiscardReason::Verify);
        }
    }
    if kept.is_empty() && out.discards.is_empty() {
        out.discards.push(DiscardReason::Empty);
    }
    out.samples = kept;
    out
}

/// Generates `opts.count` verified samples, handing each to `sink` in
/// unit order. Units run in parallel waves on the current rayon pool.
pub fn generate<F>(generator: &Generator<'_>, opts: &GenerateOptions, mut sink: F) -> Result<GenerateReport, SynthError>
where
    F: FnMut(&QaSample) -> std::io::Result<()>,
{
    if opts.count == 0 {
        return Err(SynthError::ZeroCount);
    }
    let mut report = GenerateReport::default();
    let mut next_unit = opts.start_unit;
    while report.accepted < opts.count {
        let remaining = opts.count - report.accepted;
        let wave = remaining
            .div_ceil(expected_yield(opts.family))
            .clamp(1, opts.wave_size.max(1)) as u64;
        let outputs: Vec<UnitOutput> = (next_unit..next_unit + wave)
            .into_par_iter()
            .map(|u| run_unit(generator, opts, u))
            .collect();
        for (i, out) in outputs.into_iter().enumerate() {
            let unit = next_unit + i as u64;
            report.units += 1;
            for reason in out.discards {
                report.discarded += 1;
                *report.discard_reasons.entry(reason.name().to_string()).or_default() += 1;
            }
            let skip = if unit == opts.start_unit {
                opts.skip_in_first_unit
            } else {
                0
            };
            let fresh = out
                .samples
                .iter()
                .filter(|s| s.unit_and_offset().is_some_and(|(_, offset)| offset >= skip));
            for s in fresh {
                if report.accepted == opts.count {
                    break;
                }
                sink(s)?;
                report.accepted += 1;
            }
        }
        next_unit += wave;
        let outcomes = report.accepted + report.discarded;
        if report.accepted < opts.count
            && outcomes >= opts.min_outcomes
            && report.discarded as f64 > opts.max_discard_ratio * outcomes as f64
        {
            return Err(SynthError::ExcessiveDiscards {
                units: report.units,
                accepted: report.accepted,
                discarded: report.discarded,
                max_ratio: opts.max_discard_ratio,
                reasons: report
                    .discard_reasons
                    .iter()
                    .map(|(k, v)| format!("{k}: {v}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            });
        }
    }
    Ok(report)
}

/// Convenience wrapper collecting the samples in memory.
pub fn generate_vec(
    generator: &Generator<'_>,
    opts: &GenerateOptions,
) -> Result<(Vec<QaSample>, GenerateReport), SynthError> {
    let mut samples = Vec::with_capacity(opts.count);
    let report = generate(generator, opts, |s| {
        samples.push(s.clone());
        Ok(())
    })?;
    Ok((samples, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest, CaptionPool};
    use crate::demo::synthetic_corpus;
    use crate::provider::{MockProvider, PromptSet, Provider, ProviderError};

    fn pool() -> CaptionPool {
        ingest(synthetic_corpus(3000, 5)).unwrap().pool
    }

    #[test]
    fn exact_count_and_stable_ids() {
        let pool = pool();
        let mock = MockProvider::new(0);
        let prompts = PromptSet::builtin();
        let g = Generator::new(&pool, &mock, &prompts);
        let opts = GenerateOptions::new(TaskFamily::Referring, 1, 7);
        let (one, _) = generate_vec(&g, &opts).unwrap();
        assert_eq!(one.len(), 1);
        let opts = GenerateOptions::new(TaskFamily::Referring, 20, 7);
        let (a, report) = generate_vec(&g, &opts).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(report.accepted, 20);
        assert_eq!(a[0], one[0]);
        assert_eq!(a[0].id, "referring-0000000-0");
    }

    #[test]
    fn resume_continues_where_it_stopped() {
        let pool = pool();
        let mock = MockProvider::new(0);
        let prompts = PromptSet::builtin();
        let g = Generator::new(&pool, &mock, &prompts);
        let full = GenerateOptions::new(TaskFamily::OrderGpt(Scale::X1), 23, 3);
        let (all, _) = generate_vec(&g, &full).unwrap();
        let partial = GenerateOptions {
            count: 12,
            ..full.clone()
        };
        let (head, _) = generate_vec(&g, &partial).unwrap();
        let (tail, _) = generate_vec(&g, &full.clone().resume_after(&head)).unwrap();
        let joined: Vec<QaSample> = head.into_iter().chain(tail).collect();
        assert_eq!(joined, all);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let pool = pool();
        let mock = MockProvider::new(0);
        let prompts = PromptSet::builtin();
        let g = Generator::new(&pool, &mock, &prompts);
        let opts = GenerateOptions::new(TaskFamily::OrderTemplate(TemplateTarget::Prefix), 40, 9);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| generate_vec(&g, &opts).unwrap().0)
        };
        assert_eq!(run(1), run(4));
    }

    struct Down;
    impl Provider for Down {
        fn complete(&self, _: &str) -> Result<String, ProviderError> {
            Err(ProviderError::ProviderUnavailable {
                attempts: 1,
                message: "connection refused".into(),
            })
        }
    }

    #[test]
    fn failing_provider_aborts_with_diagnostics() {
        let pool = pool();
        let prompts = PromptSet::builtin();
        let g = Generator::new(&pool, &Down, &prompts);
        let opts = GenerateOptions::new(TaskFamily::OrderGpt(Scale::X1), 100, 0);
        match generate_vec(&g, &opts) {
            Err(SynthError::ExcessiveDiscards { reasons, accepted, .. }) => {
                assert_eq!(accepted, 0);
                assert!(reasons.contains("provider"));
            }
            other => panic!("{other:?}"),
        }
    }
}
