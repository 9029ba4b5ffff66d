use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::schema::{ResponseSchema, Shape};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: missing value for placeholder [{name}]")]
    MissingPlaceholder { template: String, name: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

/// Prompt identities used by the generation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    FrameCaptionFirst,
    FrameCaptionNext,
    FrameBrightness,
    OrderQa,
    AttributeCaptions,
    AttributeQa,
    ReferringCaptions,
    ReferringQa,
    GroundingStatements,
    ExtractPhrase,
}

impl PromptKind {
    pub const ALL: [PromptKind; 10] = [
        PromptKind::FrameCaptionFirst,
        PromptKind::FrameCaptionNext,
        PromptKind::FrameBrightness,
        PromptKind::OrderQa,
        PromptKind::AttributeCaptions,
        PromptKind::AttributeQa,
        PromptKind::ReferringCaptions,
        PromptKind::ReferringQa,
        PromptKind::GroundingStatements,
        PromptKind::ExtractPhrase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::FrameCaptionFirst => "frame_caption_first",
            PromptKind::FrameCaptionNext => "frame_caption_next",
            PromptKind::FrameBrightness => "frame_brightness",
            PromptKind::OrderQa => "order_qa",
            PromptKind::AttributeCaptions => "attribute_captions",
            PromptKind::AttributeQa => "attribute_qa",
            PromptKind::ReferringCaptions => "referring_captions",
            PromptKind::ReferringQa => "referring_qa",
            PromptKind::GroundingStatements => "grounding_statements",
            PromptKind::ExtractPhrase => "extract_phrase",
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            PromptKind::FrameCaptionFirst => include_str!("../../prompts/frame_caption_first.txt"),
            PromptKind::FrameCaptionNext => include_str!("../../prompts/frame_caption_next.txt"),
            PromptKind::FrameBrightness => include_str!("../../prompts/frame_brightness.txt"),
            PromptKind::OrderQa => include_str!("../../prompts/order_qa.txt"),
            PromptKind::AttributeCaptions => include_str!("../../prompts/attribute_captions.txt"),
            PromptKind::AttributeQa => include_str!("../../prompts/attribute_qa.txt"),
            PromptKind::ReferringCaptions => include_str!("../../prompts/referring_captions.txt"),
            PromptKind::ReferringQa => include_str!("../../prompts/referring_qa.txt"),
            PromptKind::GroundingStatements => {
                include_str!("../../prompts/grounding_statements.txt")
            }
            PromptKind::ExtractPhrase => include_str!("../../prompts/extract_phrase.txt"),
        }
    }

    /// Phrase that appears in this prompt and in no other; used by the mock
    /// backend to recognise which template a prompt was rendered from.
    pub fn anchor(self) -> &'static str {
        match self {
            PromptKind::FrameCaptionFirst => "provided with the first frame extracted",
            PromptKind::FrameCaptionNext => "The caption of the preceding frame is provided below",
            PromptKind::FrameBrightness => "categorize its overall brightness level",
            PromptKind::OrderQa => "generate five multi-choice questions",
            PromptKind::AttributeCaptions => "create two distinct captions for each attribute",
            PromptKind::AttributeQa => "several pairs of image captions",
            PromptKind::ReferringCaptions => "modify this caption by changing the original elements",
            PromptKind::ReferringQa => "three similar image captions that differ only",
            PromptKind::GroundingStatements => "reformulate each answer into a simple declarative",
            PromptKind::ExtractPhrase => "Extract one short noun phrase",
        }
    }

    pub fn identify(prompt: &str) -> Option<PromptKind> {
        PromptKind::ALL.into_iter().find(|k| prompt.contains(k.anchor()))
    }

    pub fn schema(self) -> ResponseSchema {
        use Shape::*;
        let s = |x: &str| x.to_string();
        match self {
            PromptKind::FrameCaptionFirst | PromptKind::FrameCaptionNext => ResponseSchema::FreeText {
                must_begin: Some(s("This frame")),
            },
            PromptKind::FrameBrightness => ResponseSchema::Json(Record(vec![
                (
                    s("brightness"),
                    OneOf(super::BRIGHTNESS_LEVELS.iter().map(|l| s(l)).collect()),
                ),
                (s("description"), Str),
            ])),
            PromptKind::OrderQa => ResponseSchema::Json(Record(vec![(
                s("qas"),
                List {
                    item: Box::new(Record(vec![
                        (s("question"), Str),
                        (
                            s("options"),
                            List {
                                item: Box::new(Str),
                                min: 2,
                                max: usize::MAX,
                            },
                        ),
                        (s("answer"), Str),
                    ])),
                    min: 5,
                    max: 5,
                },
            )])),
            PromptKind::AttributeCaptions => ResponseSchema::Json(Record(vec![(
                s("captions"),
                Map {
                    value: Box::new(List {
                        item: Box::new(Str),
                        min: 2,
                        max: 2,
                    }),
                    min: 1,
                },
            )])),
            PromptKind::AttributeQa => ResponseSchema::Json(Record(vec![(
                s("qas"),
                Map {
                    value: Box::new(Choice),
                    min: 1,
                },
            )])),
            PromptKind::ReferringCaptions => ResponseSchema::Json(Record(vec![(
                s("captions"),
                Map {
                    value: Box::new(List {
                        item: Box::new(Str),
                        min: 1,
                        max: usize::MAX,
                    }),
                    min: 1,
                },
            )])),
            PromptKind::ReferringQa => ResponseSchema::Json(Record(vec![
                (s("question"), Str),
                (
                    s("answers"),
                    List {
                        item: Box::new(Str),
                        min: 3,
                        max: 3,
                    },
                ),
            ])),
            PromptKind::GroundingStatements => ResponseSchema::NumberedLines {
                label: s("Declarative Statement"),
                count: 3,
            },
            PromptKind::ExtractPhrase => ResponseSchema::Json(Record(vec![(s("phrase"), Str)])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub response_schema: ResponseSchema,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([a-z][a-z_]*)\]").unwrap())
}

impl PromptTemplate {
    pub fn builtin(kind: PromptKind) -> Self {
        Self {
            name: kind.name().to_string(),
            body: kind.builtin_body().to_string(),
            response_schema: kind.schema(),
        }
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in placeholder_re().captures_iter(&self.body) {
            let name = cap[1].to_string();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Substitutes every `[name]` placeholder in one pass; values are not re-scanned.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        for name in self.placeholders() {
            if !values.iter().any(|(k, _)| *k == name) {
                return Err(TemplateError::MissingPlaceholder {
                    template: self.name.clone(),
                    name,
                });
            }
        }
        let rendered = placeholder_re().replace_all(&self.body, |cap: &regex::Captures| {
            values
                .iter()
                .find(|(k, _)| *k == &cap[1])
                .map(|(_, v)| v.to_string())
                .unwrap_or_else(|| cap[0].to_string())
        });
        Ok(rendered.trim_end().to_string())
    }
}

/// The full set of prompts, optionally overridden from a `prompts/<name>.txt` directory.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: PromptKind::ALL
                .into_iter()
                .map(|k| (k, PromptTemplate::builtin(k)))
                .collect(),
        }
    }

    /// Built-in prompts with any `<dir>/<name>.txt` files taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for kind in PromptKind::ALL {
            let path = dir.join(format!("{}.txt", kind.name()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                set.templates.get_mut(&kind).unwrap().body = body;
            }
        }
        Ok(set)
    }

    pub fn get(&self, kind: PromptKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    pub fn render(&self, kind: PromptKind, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.get(kind).render(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_are_unique() {
        for kind in PromptKind::ALL {
            let body = kind.builtin_body();
            assert_eq!(PromptKind::identify(body), Some(kind), "{}", kind.name());
            for other in PromptKind::ALL {
                if other != kind {
                    assert!(
                        !body.contains(other.anchor()),
                        "{} contains {}",
                        kind.name(),
                        other.name()
                    );
                }
            }
        }
    }

    #[test]
    fn render_resolves_all_placeholders() {
        let set = PromptSet::builtin();
        for kind in PromptKind::ALL {
            let t = set.get(kind);
            let names = t.placeholders();
            let values: Vec<(&str, &str)> = names.iter().map(|n| (n.as_str(), "VALUE [x]")).collect();
            let out = t.render(&values).unwrap();
            for n in &names {
                assert!(!out.contains(&format!("[{n}]")));
            }
        }
    }

    #[test]
    fn missing_placeholder_is_reported() {
        let err = PromptSet::builtin().render(PromptKind::OrderQa, &[]).unwrap_err();
        assert_eq!(
            err,
            TemplateError::MissingPlaceholder {
                template: "order_qa".into(),
                name: "image_captions".into()
            }
        );
    }

    #[test]
    fn overrides_replace_bodies() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("extract_phrase.txt"), "Custom [caption]").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(
            set.render(PromptKind::ExtractPhrase, &[("caption", "x")]).unwrap(),
            "Custom x"
        );
        assert_eq!(
            set.get(PromptKind::OrderQa),
            &PromptTemplate::builtin(PromptKind::OrderQa)
        );
    }
}
