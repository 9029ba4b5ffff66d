use serde::{Deserialize, Serialize};

use super::context::ExtendedContext;
use super::family::TaskFamily;

/// Temporal slot of a caption placed at the start, middle or end of a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Begin,
    Middle,
    End,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Begin, Slot::Middle, Slot::End];

    pub fn index(self) -> usize {
        match self {
            Slot::Begin => 0,
            Slot::Middle => 1,
            Slot::End => 2,
        }
    }

    /// Suffix appended to referring questions.
    pub fn reference_phrase(self) -> &'static str {
        match self {
            Slot::Begin => "at the beginning of the video",
            Slot::Middle => "in the middle of the video",
            Slot::End => "at the end of the video",
        }
    }

    /// Option text used by grounding questions.
    pub fn option(self) -> &'static str {
        match self {
            Slot::Begin => "at the beginning",
            Slot::Middle => "in the middle",
            Slot::End => "at the end",
        }
    }
}

/// The closed option set of every grounding question.
pub fn grounding_options() -> Vec<String> {
    Slot::ALL.iter().map(|s| s.option().to_string()).collect()
}

/// Everything needed to re-derive a sample's answer and audit its context.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// Pool ids of the relevant captions by rank; `None` for provider-written captions.
    pub relevant_ids: Vec<Option<usize>>,
    /// Context positions of the relevant captions by rank.
    pub relevant_positions: Vec<usize>,
    /// Attribute type (attribute family) or element type (referring, grounding).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<Slot>,
    /// Per-rank items: reorder targets, referring answers or grounding statements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<String>>,
    /// Ranks in the order the items are listed in the question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presentation: Option<Vec<usize>>,
    /// Pool caption the provider-written captions were derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_caption_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSample {
    pub id: String,
    pub family: TaskFamily,
    pub context: ExtendedContext,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: String,
    pub provenance: Provenance,
    pub seed: u64,
}

impl QaSample {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }

    /// Unit index and position within the unit, parsed from the id.
    pub fn unit_and_offset(&self) -> Option<(u64, usize)> {
        let mut parts = self.id.rsplitn(3, '-');
        let offset = parts.next()?.parse().ok()?;
        let unit = parts.next()?.parse().ok()?;
        Some((unit, offset))
    }
}

pub fn sample_id(family: TaskFamily, unit: u64, offset: usize) -> String {
    format!("{}-{unit:07}-{offset}", family.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_layout() {
        let id = sample_id(TaskFamily::Referring, 42, 3);
        assert_eq!(id, "referring-0000042-3");
        let s = QaSample {
            id,
            family: TaskFamily::Referring,
            context: ExtendedContext {
                entries: vec![],
                band: TaskFamily::Referring.band(),
                seed: 0,
            },
            question: String::new(),
            options: None,
            answer: String::new(),
            provenance: Provenance::default(),
            seed: 0,
        };
        assert_eq!(s.unit_and_offset(), Some((42, 3)));
        let back: QaSample = serde_json::from_str(&s.to_json_line()).unwrap();
        assert_eq!(back, s);
    }
}
