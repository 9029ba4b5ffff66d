//! Completion providers and the prompts they are driven with.

mod http;
mod mock;
pub mod payload;
pub mod schema;
pub mod template;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use http::HttpProvider;
pub use mock::{MockProvider, ATTRIBUTE_TYPES, REFERRING_ELEMENTS};
pub use schema::{parse_reply, ParseError, ResponseSchema, Shape};
pub use template::{PromptKind, PromptSet, PromptTemplate, TemplateError};

pub const BRIGHTNESS_LEVELS: [&str; 4] = ["bright", "normal", "slightly dark", "very dark"];

const JSON_ONLY_SUFFIX: &str = "\n\nRespond with valid JSON only.";
const FORMAT_ONLY_SUFFIX: &str = "\n\nRespond in exactly the requested format only.";

pub const ENV_API_KEY: &str = "T3KIT_API_KEY";
pub const ENV_ENDPOINT: &str = "T3KIT_ENDPOINT";
pub const ENV_MODEL: &str = "T3KIT_MODEL";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("provider unavailable after {attempts} attempts: {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// A text completion backend. Implementations must be shareable across
/// generation workers.
pub trait Provider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;

    /// True for backends that fabricate replies locally.
    fn is_offline(&self) -> bool {
        false
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt)
    }
    fn is_offline(&self) -> bool {
        (**self).is_offline()
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt)
    }
    fn is_offline(&self) -> bool {
        (**self).is_offline()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Http,
    #[default]
    Mock,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Never serialized back out.
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::mock(0)
    }
}

impl ProviderConfig {
    pub fn mock(seed: u64) -> Self {
        Self {
            backend: Backend::Mock,
            endpoint: None,
            model: None,
            auth_token: None,
            temperature: default_temperature(),
            max_retries: default_retries(),
            max_in_flight: default_in_flight(),
            initial_backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
            seed,
        }
    }

    pub fn http(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            backend: Backend::Http,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::mock(0)
        }
    }

    /// Fills unset endpoint, model and token from the environment.
    pub fn fill_from_env(&mut self) {
        let fill = |slot: &mut Option<String>, var: &str| {
            if slot.is_none() {
                *slot = std::env::var(var).ok().filter(|v| !v.is_empty());
            }
        };
        fill(&mut self.endpoint, ENV_ENDPOINT);
        fill(&mut self.model, ENV_MODEL);
        fill(&mut self.auth_token, ENV_API_KEY);
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_in_flight < 1 {
            return Err(ProviderError::Config("max_in_flight must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::Config("temperature must lie in [0, 2]".into()));
        }
        if self.backend == Backend::Http {
            if self.endpoint.is_none() {
                return Err(ProviderError::Config("http backend needs an endpoint".into()));
            }
            if self.model.is_none() {
                return Err(ProviderError::Config("http backend needs a model name".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Provider>, ProviderError> {
        self.validate()?;
        Ok(match self.backend {
            Backend::Mock => Arc::new(MockProvider::new(self.seed)),
            Backend::Http => Arc::new(HttpProvider::new(self)?),
        })
    }
}

/// Sends `prompt`, parses the reply against `schema`, and on a parse
/// failure retries once with a format reminder appended.
pub fn request_structured<P: Provider + ?Sized>(
    provider: &P,
    prompt: &str,
    schema: &ResponseSchema,
) -> Result<Value, ProviderError> {
    let reply = provider.complete(prompt)?;
    match parse_reply(&reply, schema) {
        Ok(v) => Ok(v),
        Err(first) => {
            let suffix = match schema {
                ResponseSchema::Json(_) => JSON_ONLY_SUFFIX,
                _ => FORMAT_ONLY_SUFFIX,
            };
            let reply = provider.complete(&format!("{prompt}{suffix}"))?;
            parse_reply(&reply, schema).map_err(|second| {
                log::debug!("discarding reply after retry: {first}; {second}");
                ProviderError::Parse(second)
            })
        }
    }
}

/// Textual stand-in for a video frame. Vision input is out of scope, so
/// the frame is passed to the provider as this description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub index: usize,
    pub summary: String,
    /// Mean pixel value in [0, 1].
    pub mean_brightness: f64,
}

impl FrameDescriptor {
    fn attachment(&self) -> String {
        format!(
            "\n\nFrame description: {} (mean brightness {:.3})",
            self.summary, self.mean_brightness
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrightnessCaption {
    pub brightness_level: String,
    pub description: String,
}

const FRAME_PREFIX: &str = "This frame";

/// Differential frame captioning: the first frame uses the first-frame
/// prompt, later frames inject the preceding caption.
pub fn caption_frame<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    frame: &FrameDescriptor,
    previous_caption: Option<&str>,
) -> Result<String, ProviderError> {
    let body = match previous_caption {
        None => prompts.render(PromptKind::FrameCaptionFirst, &[])?,
        Some(prev) => prompts.render(PromptKind::FrameCaptionNext, &[("previous_frame_caption", prev)])?,
    };
    let prompt = format!("{body}{}", frame.attachment());
    let mut reply = provider.complete(&prompt)?.trim().to_string();
    if !reply.starts_with(FRAME_PREFIX) {
        reply = provider.complete(&prompt)?.trim().to_string();
    }
    if !reply.starts_with(FRAME_PREFIX) {
        reply = format!("{FRAME_PREFIX} shows {reply}");
    }
    Ok(reply)
}

/// Captions every frame in order, feeding each caption into the next prompt.
pub fn caption_video<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    frames: &[FrameDescriptor],
) -> Result<Vec<String>, ProviderError> {
    let mut out: Vec<String> = Vec::with_capacity(frames.len());
    for frame in frames {
        let caption = caption_frame(provider, prompts, frame, out.last().map(String::as_str))?;
        out.push(caption);
    }
    Ok(out)
}

/// Chain-of-thought brightness captioning: level first, then description.
pub fn caption_frame_brightness<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    frame: &FrameDescriptor,
) -> Result<BrightnessCaption, ProviderError> {
    let prompt = format!(
        "{}{}",
        prompts.render(PromptKind::FrameBrightness, &[])?,
        frame.attachment()
    );
    let v = request_structured(provider, &prompt, &PromptKind::FrameBrightness.schema())?;
    Ok(BrightnessCaption {
        brightness_level: v["brightness"].as_str().unwrap().to_string(),
        description: v["description"].as_str().unwrap().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replays canned replies and records prompts.
    struct Scripted {
        replies: Mutex<Vec<String>>,
        prompts: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                prompts: Mutex::new(Vec::new()),
            }
        }
    }

    impl Provider for Scripted {
        fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
            self.prompts.lock().unwrap().push(prompt.to_string());
            Ok(self.replies.lock().unwrap().pop().unwrap_or_default())
        }
    }

    fn frame(i: usize, b: f64) -> FrameDescriptor {
        FrameDescriptor {
            index: i,
            summary: format!("a kitten on a white background, frame {i}"),
            mean_brightness: b,
        }
    }

    #[test]
    fn first_frame_begins_with_prefix() {
        let mock = MockProvider::new(1);
        let caption = caption_frame(&mock, &PromptSet::builtin(), &frame(0, 0.5), None).unwrap();
        assert!(caption.starts_with("This frame"));
    }

    #[test]
    fn previous_caption_is_injected_verbatim() {
        let p = Scripted::new(&["This frame shows a cat."]);
        let prev = "This frame shows a kitten playing with a purple toy.";
        caption_frame(&p, &PromptSet::builtin(), &frame(2, 0.5), Some(prev)).unwrap();
        let prompts = p.prompts.lock().unwrap();
        assert!(prompts[0].contains(prev));
        assert!(prompts[0].contains("The caption of the preceding frame"));
    }

    #[test]
    fn prefix_retried_once_then_forced() {
        let p = Scripted::new(&["A cat.", "Still a cat."]);
        let c = caption_frame(&p, &PromptSet::builtin(), &frame(0, 0.5), None).unwrap();
        assert_eq!(c, "This frame shows Still a cat.");
        assert_eq!(p.prompts.lock().unwrap().len(), 2);
        let p = Scripted::new(&["A cat.", "This frame shows a cat."]);
        let c = caption_frame(&p, &PromptSet::builtin(), &frame(0, 0.5), None).unwrap();
        assert_eq!(c, "This frame shows a cat.");
    }

    #[test]
    fn eight_frames_are_chained() {
        let p = MockProvider::new(4);
        let frames: Vec<_> = (0..8).map(|i| frame(i, 0.5)).collect();
        let recorder = Scripted::new(&[]);
        let caps = caption_video(&p, &PromptSet::builtin(), &frames).unwrap();
        assert_eq!(caps.len(), 8);
        drop(recorder);
        // Re-run through a recording wrapper to confirm each prompt carries its predecessor.
        struct Rec<'a>(&'a MockProvider, Mutex<Vec<String>>);
        impl Provider for Rec<'_> {
            fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
                self.1.lock().unwrap().push(prompt.to_string());
                self.0.complete(prompt)
            }
        }
        let rec = Rec(&p, Mutex::new(Vec::new()));
        let again = caption_video(&rec, &PromptSet::builtin(), &frames).unwrap();
        assert_eq!(again, caps);
        let prompts = rec.1.lock().unwrap();
        assert_eq!(prompts.len(), 8);
        assert!(prompts[0].contains("provided with the first frame"));
        for i in 1..8 {
            assert!(prompts[i].contains(&caps[i - 1]));
        }
    }

    #[test]
    fn dark_frame_is_very_dark() {
        let mock = MockProvider::new(0);
        let c = caption_frame_brightness(&mock, &PromptSet::builtin(), &frame(0, 0.05)).unwrap();
        assert_eq!(c.brightness_level, "very dark");
        assert!(!c.description.is_empty());
        let again = caption_frame_brightness(&mock, &PromptSet::builtin(), &frame(0, 0.05)).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn brightness_outside_closed_set() {
        let bad = r#"{"brightness": "dim", "description": "A room."}"#;
        let p = Scripted::new(&[bad, bad]);
        let err = caption_frame_brightness(&p, &PromptSet::builtin(), &frame(0, 0.1)).unwrap_err();
        assert!(matches!(err, ProviderError::Parse(ParseError::SchemaMismatch(_))));
    }

    #[test]
    fn structured_request_retries_with_suffix() {
        let p = Scripted::new(&["no json here", r#"{"phrase": "kite"}"#]);
        let v = request_structured(&p, "Give me a phrase", &PromptKind::ExtractPhrase.schema()).unwrap();
        assert_eq!(v["phrase"], "kite");
        let prompts = p.prompts.lock().unwrap();
        assert!(prompts[1].ends_with("Respond with valid JSON only."));
    }

    #[test]
    fn config_validation() {
        let mut c = ProviderConfig::mock(0);
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        let mut h = ProviderConfig::http("http://localhost:1", "m");
        assert!(h.validate().is_ok());
        h.endpoint = None;
        assert!(h.validate().is_err());
        let parsed: ProviderConfig = serde_json::from_str(r#"{"backend": "mock", "seed": 3}"#).unwrap();
        assert_eq!(parsed, ProviderConfig::mock(3));
    }
}
