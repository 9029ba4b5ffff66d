//! Weighted dataset mixing and instruction-tuning (SFT) record emission.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::quality::{human_turn, ANSWER_SUFFIX};
use crate::synth::{ContextEntry, ExtendedContext, Provenance, QaSample, Role, TaskFamily, UnknownFamily};

#[derive(Debug, Error)]
pub enum MixError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("component {component}: source {source_path} has {available} records, {requested} requested")]
    SourceTooSmall {
        component: String,
        source_path: String,
        available: usize,
        requested: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MixError + '_ {
    move |source| MixError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub name: String,
    /// JSONL files; relative paths resolve against the recipe's directory.
    pub sources: Vec<PathBuf>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRecipe {
    pub components: Vec<Component>,
    pub total: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sample with replacement when a source is smaller than its share.
    #[serde(default)]
    pub with_replacement: bool,
    /// Split each component's share equally among its sources; otherwise
    /// proportionally to source sizes.
    #[serde(default)]
    pub balance_within: bool,
}

impl MixRecipe {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, MixError> {
        let recipe: MixRecipe = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| MixError::InvalidRecipe(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| MixError::InvalidRecipe(e.to_string()))?
        };
        recipe.validate()?;
        Ok(recipe)
    }

    /// Loads a recipe file, resolving relative source paths against its directory.
    pub fn load(path: &Path) -> Result<Self, MixError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut recipe = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for c in &mut recipe.components {
            for s in &mut c.sources {
                if s.is_relative() {
                    *s = base.join(&*s);
                }
            }
        }
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<(), MixError> {
        let bad = |m: String| Err(MixError::InvalidRecipe(m));
        if self.components.is_empty() {
            return bad("no components".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.components {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return bad(format!("component {} has weight {}", c.name, c.weight));
            }
            if c.sources.is_empty() {
                return bad(format!("component {} has no sources", c.name));
            }
            if !names.insert(&c.name) {
                return bad(format!("duplicate component {}", c.name));
            }
        }
        if self.total < self.components.len() {
            return bad(format!(
                "total {} is below the component count {}",
                self.total,
                self.components.len()
            ));
        }
        Ok(())
    }

    /// Per-component shares, summing to `total`.
    pub fn shares(&self) -> Vec<usize> {
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        largest_remainder(&weights, self.total)
    }
}

/// Apportions `total` proportionally to `weights`: floors first, then one
/// extra unit to the largest fractional remainders (earlier index on ties).
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut shares: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = shares.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    // Floating-point floors can overshoot by at most a unit per weight.
    if assigned > total {
        for &i in order.iter().rev().take(assigned - total) {
            shares[i] -= 1;
        }
    } else {
        for &i in order.iter().cycle().take(total - assigned) {
            shares[i] += 1;
        }
    }
    shares
}

fn derived_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Non-empty lines of a JSONL file, each checked to be valid JSON.
pub fn read_jsonl_lines(path: &Path) -> Result<Vec<String>, MixError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        serde_json::from_str::<serde_json::Value>(&line).map_err(|e| MixError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(line);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceDraw {
    pub component: String,
    pub source: String,
    pub available: usize,
    pub drawn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MixReport {
    pub total: usize,
    pub draws: Vec<SourceDraw>,
}

/// Draws each component's share from its sources and shuffles the union.
/// `load` maps a source path to its records.
pub fn mix_with<L>(recipe: &MixRecipe, seed: u64, mut load: L) -> Result<(Vec<String>, MixReport), MixError>
where
    L: FnMut(&Path) -> Result<Vec<String>, MixError>,
{
    recipe.validate()?;
    let mut out = Vec::with_capacity(recipe.total);
    let mut draws = Vec::new();
    for (component, share) in recipe.components.iter().zip(recipe.shares()) {
        let sources: Vec<Vec<String>> = component.sources.iter().map(|p| load(p)).collect::<Result<_, _>>()?;
        let weights: Vec<f64> = if recipe.balance_within {
            vec![1.0; sources.len()]
        } else {
            sources.iter().map(|s| s.len() as f64).collect()
        };
        let per_source = if weights.iter().sum::<f64>() > 0.0 {
            largest_remainder(&weights, share)
        } else {
            // Every source is empty; charge the whole share to the first.
            let mut v = vec![0; sources.len()];
            v[0] = share;
            v
        };
        for (k, ((path, lines), want)) in component.sources.iter().zip(&sources).zip(per_source).enumerate() {
            let source_name = path.display().to_string();
            // Keyed by position, not path, so moving the data keeps the mix.
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, &format!("{}/{k}", component.name)));
            if want > lines.len() && !(recipe.with_replacement && !lines.is_empty()) {
                return Err(MixError::SourceTooSmall {
                    component: component.name.clone(),
                    source_path: source_name,
                    available: lines.len(),
                    requested: want,
                });
            }
            if want <= lines.len() {
                let mut picked = index::sample(&mut rng, lines.len(), want).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|i| lines[i].clone()));
            } else {
                out.extend((0..want).map(|_| lines[rng.random_range(0..lines.len())].clone()));
            }
            draws.push(SourceDraw {
                component: component.name.clone(),
                source: source_name,
                available: lines.len(),
                drawn: want,
            });
        }
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(derived_seed(seed, "interleave")));
    Ok((
        out,
        MixReport {
            total: recipe.total,
            draws,
        },
    ))
}

/// Mixes JSONL sources from disk.
pub fn mix(recipe: &MixRecipe, seed: u64) -> Result<(Vec<String>, MixReport), MixError> {
    mix_with(recipe, seed, read_jsonl_lines)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SftFormat {
    #[default]
    Conversation,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMeta {
    pub family: TaskFamily,
    pub provenance: Provenance,
    pub seed: u64,
    /// Seed the context was drawn with.
    pub context_seed: u64,
    /// Pool id of every context entry, in order.
    pub context_ids: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    pub conversations: Vec<Turn>,
    pub meta: SftMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatRecord {
    pub input: String,
    pub output: String,
}

pub fn sft_record(sample: &QaSample) -> SftRecord {
    SftRecord {
        id: sample.id.clone(),
        conversations: vec![
            Turn {
                from: "human".into(),
                value: human_turn(sample),
            },
            Turn {
                from: "assistant".into(),
                value: sample.answer.clone(),
            },
        ],
        meta: SftMeta {
            family: sample.family,
            provenance: sample.provenance.clone(),
            seed: sample.seed,
            context_seed: sample.context.seed,
            context_ids: sample.context.entries.iter().map(|e| e.pool_id).collect(),
        },
    }
}

pub fn sft_line(sample: &QaSample, format: SftFormat) -> String {
    match format {
        SftFormat::Conversation => serde_json::to_string(&sft_record(sample)),
        SftFormat::Flat => serde_json::to_string(&FlatRecord {
            input: human_turn(sample),
            output: sample.answer.clone(),
        }),
    }
    .expect("record serializes")
}

/// Writes one record per line; returns the line count.
pub fn emit_sft<'a, I, W>(samples: I, format: SftFormat, sink: &mut W) -> io::Result<usize>
where
    I: IntoIterator<Item = &'a QaSample>,
    W: Write,
{
    let mut n = 0;
    for s in samples {
        writeln!(sink, "{}", sft_line(s, format))?;
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Error)]
pub enum SftParseError {
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown family: {0}")]
    Family(#[from] UnknownFamily),
    #[error("record {id}: {message}")]
    Layout { id: String, message: String },
}

/// Rebuilds the sample a conversation record was emitted from.
pub fn parse_sft_record(record: &SftRecord) -> Result<QaSample, SftParseError> {
    let layout = |message: &str| SftParseError::Layout {
        id: record.id.clone(),
        message: message.to_string(),
    };
    let [human, assistant] = record.conversations.as_slice() else {
        return Err(layout("expected exactly two turns"));
    };
    if human.from != "human" || assistant.from != "assistant" {
        return Err(layout("turns must be human then assistant"));
    }
    let ids = &record.meta.context_ids;
    let lines: Vec<&str> = human.value.split('\n').collect();
    if lines.len() < ids.len() + 1 {
        return Err(layout("human turn shorter than the context"));
    }
    let mut entries = Vec::with_capacity(ids.len());
    for (i, (line, pool_id)) in lines.iter().zip(ids).enumerate() {
        let text = line
            .strip_prefix(&format!("Frame {}: ", i + 1))
            .ok_or_else(|| layout("context line out of sequence"))?;
        entries.push(ContextEntry {
            text: text.to_string(),
            pool_id: *pool_id,
            role: Role::Distractor,
        });
    }
    for (rank, &p) in record.meta.provenance.relevant_positions.iter().enumerate() {
        entries
            .get_mut(p)
            .ok_or_else(|| layout("relevant position outside the context"))?
            .role = Role::Relevant { rank };
    }
    let mut rest = &lines[ids.len()..];
    let mut options = None;
    if rest.last() == Some(&ANSWER_SUFFIX) {
        rest = &rest[..rest.len() - 1];
        let mut opts = Vec::new();
        while let Some(line) = rest.last() {
            let letter = line.chars().next().unwrap_or(' ');
            if letter.is_ascii_uppercase() && line[1..].starts_with(". ") {
                opts.push((letter, line[3..].to_string()));
                rest = &rest[..rest.len() - 1];
                if letter == 'A' {
                    break;
                }
            } else {
                break;
            }
        }
        opts.reverse();
        let sequential = opts
            .iter()
            .enumerate()
            .all(|(i, (l, _))| *l == (b'A' + i as u8) as char);
        if opts.is_empty() || !sequential {
            return Err(layout("option lines out of sequence"));
        }
        options = Some(opts.into_iter().map(|(_, o)| o).collect());
    }
    if rest.is_empty() {
        return Err(layout("missing question"));
    }
    let family = record.meta.family;
    Ok(QaSample {
        id: record.id.clone(),
        family,
        context: ExtendedContext {
            entries,
            band: family.band(),
            seed: record.meta.context_seed,
        },
        question: rest.join("\n"),
        options,
        answer: assistant.value.clone(),
        provenance: record.meta.provenance.clone(),
        seed: record.meta.seed,
    })
}

pub fn parse_sft_line(line: &str) -> Result<QaSample, SftParseError> {
    parse_sft_record(&serde_json::from_str(line)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest;
    use crate::demo::synthetic_corpus;
    use crate::provider::{MockProvider, PromptSet};
    use crate::synth::{generate_vec, GenerateOptions, Generator, TemplateTarget};

    #[test]
    fn shares_from_ratios() {
        assert_eq!(largest_remainder(&[1.0, 2.0], 200_000), vec![66_667, 133_333]);
        assert_eq!(largest_remainder(&[1.0; 4], 22_000), vec![5_500; 4]);
        assert_eq!(largest_remainder(&[1.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[5.0], 7), vec![7]);
    }

    fn recipe(components: Vec<(&str, Vec<&str>, f64)>, total: usize) -> MixRecipe {
        MixRecipe {
            components: components
                .into_iter()
                .map(|(n, s, w)| Component {
                    name: n.into(),
                    sources: s.into_iter().map(PathBuf::from).collect(),
                    weight: w,
                })
                .collect(),
            total,
            seed: 0,
            with_replacement: false,
            balance_within: false,
        }
    }

    fn fake(path: &Path) -> Result<Vec<String>, MixError> {
        let n: usize = path
            .to_str()
            .unwrap()
            .trim_start_matches(|c: char| !c.is_ascii_digit())
            .parse()
            .unwrap();
        Ok((0..n)
            .map(|i| format!("{{\"src\":\"{}\",\"i\":{i}}}", path.display()))
            .collect())
    }

    #[test]
    fn mixing_draws_shares_and_is_seeded() {
        let r = recipe(vec![("t3", vec!["a40"], 1.0), ("orig", vec!["b90"], 2.0)], 60);
        let (lines, report) = mix_with(&r, 3, fake).unwrap();
        assert_eq!(lines.len(), 60);
        assert_eq!(lines.iter().filter(|l| l.contains("\"a40\"")).count(), 20);
        assert_eq!(report.draws[1].drawn, 40);
        assert_eq!(lines.iter().collect::<BTreeSet<_>>().len(), 60);
        assert_eq!(lines, mix_with(&r, 3, fake).unwrap().0);
        assert_ne!(lines, mix_with(&r, 4, fake).unwrap().0);

        let small = recipe(vec![("t3", vec!["a5"], 1.0)], 6);
        assert!(matches!(
            mix_with(&small, 0, fake),
            Err(MixError::SourceTooSmall {
                available: 5,
                requested: 6,
                ..
            })
        ));
        let lenient = MixRecipe {
            with_replacement: true,
            ..small
        };
        assert_eq!(mix_with(&lenient, 0, fake).unwrap().0.len(), 6);
    }

    #[test]
    fn single_component_is_a_shuffle() {
        let r = recipe(vec![("only", vec!["a30"], 1.0)], 30);
        let (mut lines, _) = mix_with(&r, 1, fake).unwrap();
        let mut all = fake(Path::new("a30")).unwrap();
        lines.sort();
        all.sort();
        assert_eq!(lines, all);
    }

    #[test]
    fn balanced_within_component() {
        let mut r = recipe(vec![("tc", vec!["a100", "b300", "c100", "d200"], 1.0)], 40);
        r.balance_within = true;
        let (_, report) = mix_with(&r, 0, fake).unwrap();
        assert!(report.draws.iter().all(|d| d.drawn == 10));
        r.balance_within = false;
        let (_, report) = mix_with(&r, 0, fake).unwrap();
        assert_eq!(
            report.draws.iter().map(|d| d.drawn).collect::<Vec<_>>(),
            vec![6, 17, 6, 11]
        );
    }

    #[test]
    fn recipe_validation() {
        assert!(MixRecipe::parse("total = 1\ncomponents = []").is_err());
        let text = "total = 1\n[[components]]\nname = \"a\"\nsources = [\"x\"]\nweight = 0.0\n";
        assert!(MixRecipe::parse(text).is_err());
        let text = "total = 1\n[[components]]\nname = \"a\"\nsources = [\"x\"]\nweight = 1\n\
                    [[components]]\nname = \"b\"\nsources = [\"y\"]\nweight = 1\n";
        assert!(MixRecipe::parse(text).is_err());
        let json = r#"{"total": 3, "components": [{"name": "a", "sources": ["x"], "weight": 2}]}"#;
        assert_eq!(MixRecipe::parse(json).unwrap().shares(), vec![3]);
    }

    #[test]
    fn emission_round_trips() {
        let pool = ingest(synthetic_corpus(2000, 4)).unwrap().pool;
        let mock = MockProvider::new(0);
        let prompts = PromptSet::builtin();
        let g = Generator::new(&pool, &mock, &prompts);
        for family in [
            TaskFamily::OrderTemplate(TemplateTarget::Sentence),
            TaskFamily::OrderTemplate(TemplateTarget::Prefix),
            TaskFamily::Referring,
        ] {
            let (samples, _) = generate_vec(&g, &GenerateOptions::new(family, 5, 2)).unwrap();
            let mut buf = Vec::new();
            assert_eq!(emit_sft(&samples, SftFormat::Conversation, &mut buf).unwrap(), 5);
            let text = String::from_utf8(buf).unwrap();
            let back: Vec<QaSample> = text.lines().map(|l| parse_sft_line(l).unwrap()).collect();
            assert_eq!(back, samples);
            if samples[0].options.is_some() {
                let rec = sft_record(&samples[0]);
                assert!(rec.conversations[0].value.ends_with("Answer the option only."));
            }
        }
    }
}
