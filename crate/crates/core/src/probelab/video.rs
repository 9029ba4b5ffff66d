//! Procedural contrast videos: concatenated event clips, blooming shapes and
//! brightness ramps.

use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::perm;
use crate::synth::Slot;

/// The three event clips composed by the order-style aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Person,
    Cat,
    Flower,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::Person, Tag::Cat, Tag::Flower];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Person => "person",
            Tag::Cat => "cat",
            Tag::Flower => "flower",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aspect {
    Order2,
    Order3,
    Shape,
    Brightness,
    /// Label = which clip occupies the slot.
    Referring(Slot),
    /// Label = which slot holds the clip.
    Grounding(Tag),
}

impl Aspect {
    pub fn all() -> Vec<Aspect> {
        let mut v = vec![Aspect::Order2, Aspect::Order3, Aspect::Shape, Aspect::Brightness];
        v.extend(Slot::ALL.map(Aspect::Referring));
        v.extend(Tag::ALL.map(Aspect::Grounding));
        v
    }

    pub fn name(self) -> String {
        match self {
            Aspect::Order2 => "order2".into(),
            Aspect::Order3 => "order3".into(),
            Aspect::Shape => "shape".into(),
            Aspect::Brightness => "brightness".into(),
            Aspect::Referring(s) => format!("referring-{}", slot_name(s)),
            Aspect::Grounding(t) => format!("grounding-{}", t.name()),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let chain = |p: &[usize]| p.iter().map(|&i| Tag::ALL[i].name()).collect::<Vec<_>>().join("->");
        match self {
            Aspect::Order2 => vec!["person->cat".into(), "cat->person".into()],
            Aspect::Order3 => perm::all_permutations(3).iter().map(|p| chain(p)).collect(),
            Aspect::Shape => vec!["blooming".into(), "unblooming".into()],
            Aspect::Brightness => vec!["brightening".into(), "darkening".into()],
            Aspect::Referring(_) => Tag::ALL.iter().map(|t| t.name().to_string()).collect(),
            Aspect::Grounding(_) => Slot::ALL.iter().map(|&s| slot_name(s).to_string()).collect(),
        }
    }

    pub fn class_count(self) -> usize {
        self.class_names().len()
    }

    /// Default training epochs per aspect.
    pub fn default_epochs(self) -> usize {
        match self {
            Aspect::Order2 => 15,
            Aspect::Shape | Aspect::Brightness => 80,
            _ => 120,
        }
    }

    /// What a video of `class` shows; `instance` picks among equivalent layouts.
    pub fn plan(self, class: usize, instance: usize) -> Result<Plan, ProbeError> {
        let classes = self.class_count();
        if class >= classes {
            return Err(ProbeError::InvalidClass {
                aspect: self.name(),
                class,
                classes,
            });
        }
        let tags = |p: &[usize]| p.iter().map(|&i| Tag::ALL[i]).collect();
        Ok(match self {
            Aspect::Order2 => Plan::Events(if class == 0 {
                vec![Tag::Person, Tag::Cat]
            } else {
                vec![Tag::Cat, Tag::Person]
            }),
            Aspect::Order3 => Plan::Events(tags(&perm::all_permutations(3)[class])),
            Aspect::Shape => Plan::Bloom { reverse: class == 1 },
            Aspect::Brightness => Plan::Brightness {
                direction: if class == 0 {
                    Direction::Brighten
                } else {
                    Direction::Darken
                },
            },
            Aspect::Referring(slot) => {
                let fits: Vec<Vec<usize>> = perm::all_permutations(3)
                    .into_iter()
                    .filter(|p| p[slot.index()] == class)
                    .collect();
                Plan::Events(tags(&fits[instance % fits.len()]))
            }
            Aspect::Grounding(tag) => {
                let fits: Vec<Vec<usize>> = perm::all_permutations(3)
                    .into_iter()
                    .filter(|p| p[class] == tag.index())
                    .collect();
                Plan::Events(tags(&fits[instance % fits.len()]))
            }
        })
    }
}

fn slot_name(s: Slot) -> &'static str {
    match s {
        Slot::Begin => "begin",
        Slot::Middle => "middle",
        Slot::End => "end",
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Aspect {
    type Err = ProbeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aspect::all()
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ProbeError::UnknownAspect(s.to_string()))
    }
}

impl Serialize for Aspect {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Aspect {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Brighten,
    Darken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plan {
    Events(Vec<Tag>),
    Bloom { reverse: bool },
    Brightness { direction: Direction },
}

/// Train and test videos differ in background (dark vs light) and, for
/// brightness ramps, in the family of base images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Train,
    Test,
}

impl Style {
    pub fn background(self) -> f32 {
        match self {
            Style::Train => 0.05,
            Style::Test => 0.45,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
        }
    }
}

/// Frames as `T × H × W × 3`, values in `[0, 1]`.
pub type Video = Array4<f32>;

/// Per-instance variation of a clip.
struct Jitter {
    dx: f32,
    dy: f32,
    phase: f32,
    scale: f32,
    tint: [f32; 3],
}

impl Jitter {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        Self {
            dx: rng.random_range(-4.0..4.0),
            dy: rng.random_range(-4.0..4.0),
            phase: rng.random_range(0.0..2.0 * PI),
            scale: rng.random_range(0.9..1.1),
            tint: [0; 3].map(|_| rng.random_range(-0.05..0.05)),
        }
    }
}

fn background<R: Rng>(h: usize, w: usize, style: Style, rng: &mut R) -> Array3<f32> {
    let base = style.background();
    Array3::from_shape_fn((h, w, 3), |_| (base + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0))
}

fn paint(frame: &mut Array3<f32>, mut shader: impl FnMut(f32, f32) -> Option<[f32; 3]>) {
    let (h, w, _) = frame.dim();
    // Shapes are laid out on a 64-pixel canvas and scaled to the frame.
    let (sy, sx) = (64.0 / h as f32, 64.0 / w as f32);
    for y in 0..h {
        for x in 0..w {
            if let Some(rgb) = shader((x as f32 + 0.5) * sx, (y as f32 + 0.5) * sy) {
                for c in 0..3 {
                    frame[[y, x, c]] = rgb[c].clamp(0.0, 1.0);
                }
            }
        }
    }
}

fn tinted(base: [f32; 3], j: &Jitter, shade: f32) -> [f32; 3] {
    [0, 1, 2].map(|c| (base[c] + j.tint[c]) * shade)
}

/// One frame of clip `tag` at step `tau` of its segment.
fn draw_tag(frame: &mut Array3<f32>, tag: Tag, tau: f32, j: &Jitter) {
    match tag {
        Tag::Person => {
            // Tall striped figure swaying sideways.
            let cx = 32.0 + j.dx + 6.0 * (j.phase + 0.6 * tau).sin();
            let cy = 32.0 + j.dy;
            let (ax, ay) = (12.0 * j.scale, 24.0 * j.scale);
            paint(frame, |x, y| {
                let (u, v) = ((x - cx) / ax, (y - cy) / ay);
                (u * u + v * v <= 1.0).then(|| {
                    let shade = 0.75 + 0.25 * (2.0 * PI * (x + 2.0 * tau) / 6.0).sin();
                    tinted([0.9, 0.35, 0.3], j, shade)
                })
            });
        }
        Tag::Cat => {
            // Wide checkered body bobbing up and down.
            let cx = 32.0 + j.dx;
            let cy = 36.0 + j.dy + 4.0 * (j.phase + 0.8 * tau).sin();
            let (ax, ay) = (26.0 * j.scale, 14.0 * j.scale);
            paint(frame, |x, y| {
                let (u, v) = ((x - cx) / ax, (y - cy) / ay);
                (u * u + v * v <= 1.0).then(|| {
                    let cell = ((x + tau) / 8.0).floor() as i32 + (y / 8.0).floor() as i32;
                    let shade = if cell % 2 == 0 { 1.0 } else { 0.7 };
                    tinted([0.35, 0.85, 0.35], j, shade)
                })
            });
        }
        Tag::Flower => draw_flower(frame, 1.0, tau, j),
    }
}

/// Five-petal rotating flower; `open` in `(0, 1]` scales its radius.
fn draw_flower(frame: &mut Array3<f32>, open: f32, tau: f32, j: &Jitter) {
    let (cx, cy) = (32.0 + j.dx, 32.0 + j.dy);
    let radius = 20.0 * j.scale * open;
    paint(frame, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let r = (dx * dx + dy * dy).sqrt();
        let theta = dy.atan2(dx);
        let edge = radius * (0.7 + 0.3 * (5.0 * theta + j.phase + 0.4 * tau).cos());
        (r <= edge).then(|| tinted([0.35, 0.45, 0.95], j, 1.0 - 0.4 * r / radius.max(1e-3)))
    });
}

/// Segment lengths for `k` clips over `frames` frames; earlier clips take the remainder.
pub fn segment_lengths(frames: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| frames / k + usize::from(i < frames % k)).collect()
}

/// Clips rendered in the given order, each with its own jitter.
pub fn synth_event_video<R: Rng>(tags: &[Tag], style: Style, geom: Geometry, rng: &mut R) -> Video {
    let mut video = Video::zeros((geom.frames, geom.height, geom.width, 3));
    let mut t = 0;
    for (&tag, len) in tags.iter().zip(segment_lengths(geom.frames, tags.len())) {
        let jitter = Jitter::draw(rng);
        for tau in 0..len {
            let mut frame = background(geom.height, geom.width, style, rng);
            draw_tag(&mut frame, tag, tau as f32, &jitter);
            video.index_axis_mut(Axis(0), t).assign(&frame);
            t += 1;
        }
    }
    video
}

/// A flower opening over the clip; `reverse` plays it backwards.
pub fn synth_bloom_video<R: Rng>(reverse: bool, style: Style, geom: Geometry, rng: &mut R) -> Video {
    let jitter = Jitter::draw(rng);
    let mut video = Video::zeros((geom.frames, geom.height, geom.width, 3));
    let last = (geom.frames.max(2) - 1) as f32;
    for t in 0..geom.frames {
        let mut frame = background(geom.height, geom.width, style, rng);
        draw_flower(&mut frame, 0.25 + 0.75 * t as f32 / last, t as f32, &jitter);
        video.index_axis_mut(Axis(0), t).assign(&frame);
    }
    if reverse {
        reverse_time(&video)
    } else {
        video
    }
}

pub fn reverse_time(video: &Video) -> Video {
    video.slice(s![..;-1, .., .., ..]).to_owned()
}

/// A static scene: boxy compositions for the train style, rounded ones for test.
pub fn synth_base_image<R: Rng>(style: Style, height: usize, width: usize, rng: &mut R) -> Array3<f32> {
    let mut img = Array3::from_elem((height, width, 3), rng.random_range(0.3..0.5f32));
    let shapes = rng.random_range(3..=5);
    for _ in 0..shapes {
        let color = [0; 3].map(|_| rng.random_range(0.1..1.0f32));
        let (cx, cy) = (rng.random_range(8.0..56.0f32), rng.random_range(8.0..56.0f32));
        let (ax, ay) = (rng.random_range(6.0..20.0f32), rng.random_range(6.0..20.0f32));
        paint(&mut img, |x, y| {
            let (u, v) = ((x - cx) / ax, (y - cy) / ay);
            let inside = match style {
                Style::Train => u.abs() <= 1.0 && v.abs() <= 1.0,
                Style::Test => u * u + v * v <= 1.0,
            };
            inside.then_some(color)
        });
    }
    img
}

/// Frame t is `clamp(base × s_t)`, with `s_t` ramping linearly between 0.2 and 1.0.
pub fn synth_brightness_video(
    base: &Array3<f32>,
    direction: Direction,
    frame_count: usize,
) -> Result<Video, ProbeError> {
    if frame_count < 2 {
        return Err(ProbeError::TooFewFrames(frame_count));
    }
    if base.iter().all(|&v| v == 0.0) {
        return Err(ProbeError::DegenerateImage);
    }
    let (h, w, c) = base.dim();
    let mut video = Video::zeros((frame_count, h, w, c));
    for t in 0..frame_count {
        // Darkening indexes the same ramp backwards so it is the exact reverse.
        let step = match direction {
            Direction::Brighten => t,
            Direction::Darken => frame_count - 1 - t,
        };
        let scale = 0.2 + 0.8 * (step as f32 / (frame_count - 1) as f32);
        video
            .index_axis_mut(Axis(0), t)
            .assign(&base.mapv(|v| (v * scale).clamp(0.0, 1.0)));
    }
    Ok(video)
}

/// Renders one video of `class` for `aspect`.
pub fn synth_video<R: Rng>(
    aspect: Aspect,
    class: usize,
    instance: usize,
    style: Style,
    geom: Geometry,
    rng: &mut R,
) -> Result<Video, ProbeError> {
    if geom.frames < 2 {
        return Err(ProbeError::TooFewFrames(geom.frames));
    }
    Ok(match aspect.plan(class, instance)? {
        Plan::Events(tags) => synth_event_video(&tags, style, geom, rng),
        Plan::Bloom { reverse } => synth_bloom_video(reverse, style, geom, rng),
        Plan::Brightness { direction } => {
            let base = synth_base_image(style, geom.height, geom.width, rng);
            synth_brightness_video(&base, direction, geom.frames)?
        }
    })
}
