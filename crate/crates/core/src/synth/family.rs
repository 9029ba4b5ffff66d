use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::context::DistractorBand;

/// Context-length multiplier for the families whose band scales with N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scale {
    X1,
    X2,
    X4,
    X8,
}

impl Scale {
    pub const ALL: [Scale; 4] = [Scale::X1, Scale::X2, Scale::X4, Scale::X8];

    pub fn factor(self) -> usize {
        match self {
            Scale::X1 => 1,
            Scale::X2 => 2,
            Scale::X4 => 4,
            Scale::X8 => 8,
        }
    }

    fn from_factor(n: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.factor() == n)
    }
}

/// What an Order-Template question asks to reorder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateTarget {
    Sentence,
    Phrase,
    Prefix,
}

impl TemplateTarget {
    pub const ALL: [TemplateTarget; 3] = [TemplateTarget::Sentence, TemplateTarget::Phrase, TemplateTarget::Prefix];

    pub fn name(self) -> &'static str {
        match self {
            TemplateTarget::Sentence => "sentence",
            TemplateTarget::Phrase => "phrase",
            TemplateTarget::Prefix => "prefix",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskFamily {
    OrderGpt(Scale),
    OrderTemplate(TemplateTarget),
    Attribute(Scale),
    Referring,
    Grounding,
}

impl TaskFamily {
    pub fn all() -> Vec<TaskFamily> {
        let mut out: Vec<TaskFamily> = Scale::ALL.into_iter().map(TaskFamily::OrderGpt).collect();
        out.extend(TemplateTarget::ALL.into_iter().map(TaskFamily::OrderTemplate));
        out.extend(Scale::ALL.into_iter().map(TaskFamily::Attribute));
        out.push(TaskFamily::Referring);
        out.push(TaskFamily::Grounding);
        out
    }

    pub fn name(self) -> String {
        match self {
            TaskFamily::OrderGpt(s) => format!("order-gpt-{}x", s.factor()),
            TaskFamily::OrderTemplate(t) => format!("order-template-{}", t.name()),
            TaskFamily::Attribute(s) => format!("attribute-{}x", s.factor()),
            TaskFamily::Referring => "referring".into(),
            TaskFamily::Grounding => "grounding".into(),
        }
    }

    pub fn distractor_target(self) -> usize {
        match self {
            TaskFamily::OrderGpt(s) | TaskFamily::Attribute(s) => 100 * s.factor(),
            _ => 200,
        }
    }

    pub fn band(self) -> DistractorBand {
        DistractorBand::new(self.distractor_target())
    }

    /// Inclusive range of relevant captions per context.
    pub fn relevant_range(self) -> (usize, usize) {
        match self {
            TaskFamily::OrderGpt(_) => (2, 4),
            TaskFamily::OrderTemplate(_) => (3, 6),
            TaskFamily::Attribute(_) => (2, 2),
            TaskFamily::Referring | TaskFamily::Grounding => (3, 3),
        }
    }

    /// Sample count of the corresponding published subset.
    pub fn reference_size(self) -> usize {
        match self {
            TaskFamily::OrderGpt(Scale::X1) => 16_000,
            TaskFamily::Attribute(Scale::X1) => 34_000,
            TaskFamily::OrderGpt(_) | TaskFamily::Attribute(_) => 15_000,
            TaskFamily::OrderTemplate(_) => 30_000,
            TaskFamily::Referring | TaskFamily::Grounding => 22_000,
        }
    }

    /// Families whose gold answer is fully determined by the generation record.
    pub fn answer_by_construction(self) -> bool {
        matches!(
            self,
            TaskFamily::OrderTemplate(_) | TaskFamily::Referring | TaskFamily::Grounding
        )
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownFamily(pub String);

impl fmt::Display for UnknownFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = TaskFamily::all().into_iter().map(TaskFamily::name).collect();
        write!(f, "unknown family {:?} (expected one of {})", self.0, names.join(", "))
    }
}

impl std::error::Error for UnknownFamily {}

impl FromStr for TaskFamily {
    type Err = UnknownFamily;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let scaled = |rest: &str| {
            rest.strip_suffix('x')
                .and_then(|n| n.parse().ok())
                .and_then(Scale::from_factor)
        };
        let parsed = match s {
            "referring" => Some(TaskFamily::Referring),
            "grounding" => Some(TaskFamily::Grounding),
            _ => {
                if let Some(rest) = s.strip_prefix("order-gpt-") {
                    scaled(rest).map(TaskFamily::OrderGpt)
                } else if let Some(rest) = s.strip_prefix("attribute-") {
                    scaled(rest).map(TaskFamily::Attribute)
                } else if let Some(rest) = s.strip_prefix("order-template-") {
                    TemplateTarget::ALL
                        .into_iter()
                        .find(|t| t.name() == rest)
                        .map(TaskFamily::OrderTemplate)
                } else {
                    None
                }
            }
        };
        parsed.ok_or_else(|| UnknownFamily(s.to_string()))
    }
}

impl TryFrom<String> for TaskFamily {
    type Error = UnknownFamily;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TaskFamily> for String {
    fn from(f: TaskFamily) -> String {
        f.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        let all = TaskFamily::all();
        assert_eq!(all.len(), 13);
        for f in all {
            assert_eq!(f.name().parse::<TaskFamily>().unwrap(), f);
        }
        assert!("order-gpt-3x".parse::<TaskFamily>().is_err());
        assert!("order-template-word".parse::<TaskFamily>().is_err());
    }

    #[test]
    fn bands_per_family() {
        for s in Scale::ALL {
            let n = s.factor();
            assert_eq!(TaskFamily::OrderGpt(s).band().bounds(), (n * 100 - 50, n * 100 + 50));
            assert_eq!(TaskFamily::Attribute(s).relevant_range(), (2, 2));
        }
        assert_eq!(TaskFamily::Referring.band().bounds(), (150, 250));
        assert_eq!(TaskFamily::Grounding.relevant_range(), (3, 3));
        assert_eq!(
            TaskFamily::OrderTemplate(TemplateTarget::Prefix).relevant_range(),
            (3, 6)
        );
        assert_eq!(TaskFamily::OrderGpt(Scale::X1).relevant_range(), (2, 4));
    }
}
