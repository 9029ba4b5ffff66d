//! Synthetic contrast videos, feature downsampling and an LSTM classifier
//! probe trained with backpropagation through time.

pub mod features;
pub mod lstm;
pub mod tensor;
pub mod train;
pub mod video;

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use features::{extract_features, resample_1d, resample_bilinear, FEATURE_DIM, SEQ_LEN};
pub use lstm::{Fault, Params};
pub use train::{
    eval_probe, grad_check, train_probe, EvalReport, FeatureSequence, GradCheckReport, TrainConfig, TrainOutcome,
};
pub use video::{synth_video, Aspect, Direction, Geometry, Style, Tag, Video};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("class {class} is invalid for {aspect} ({classes} classes)")]
    InvalidClass {
        aspect: String,
        class: usize,
        classes: usize,
    },
    #[error("unknown aspect {0:?}")]
    UnknownAspect(String),
    #[error("base image is all zero")]
    DegenerateImage,
    #[error("at least 2 frames are needed, got {0}")]
    TooFewFrames(usize),
    #[error("feature width {found}, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {label} outside {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("labels span fewer than two classes")]
    SingleClass,
    #[error("non-finite features in {0}")]
    NonFiniteInput(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad tensor file: {0}")]
    Tensor(String),
    #[error("bad model file: {0}")]
    Model(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: String, message: String },
}

impl ProbeError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        ProbeError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn derived_seed(parts: &str) -> u64 {
    let digest = Sha256::digest(parts.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn style(self) -> Style {
        match self {
            Split::Train => Style::Train,
            Split::Test => Style::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub aspect: Aspect,
    pub geometry: Geometry,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// Desk-scale defaults: 200 train and 50 test videos per class.
    pub fn new(aspect: Aspect, seed: u64) -> Self {
        Self {
            aspect,
            geometry: Geometry::default(),
            train_per_class: 200,
            test_per_class: 50,
            seed,
        }
    }

    pub fn entries(&self) -> Vec<VideoEntry> {
        let names = self.aspect.class_names();
        let mut out = Vec::new();
        for (split, per_class) in [(Split::Train, self.train_per_class), (Split::Test, self.test_per_class)] {
            for instance in 0..per_class {
                for (class, name) in names.iter().enumerate() {
                    let n = out.iter().filter(|e: &&VideoEntry| e.split == split).count();
                    out.push(VideoEntry {
                        file: format!("{}/{n:06}.t3t", split.name()),
                        split,
                        label: class,
                        class_name: name.clone(),
                        instance,
                        seed: derived_seed(&format!(
                            "{}/{}/{}/{class}/{instance}",
                            self.seed,
                            self.aspect,
                            split.name()
                        )),
                    });
                }
            }
        }
        out
    }

    pub fn render(&self, entry: &VideoEntry) -> Result<Video, ProbeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(entry.seed);
        synth_video(
            self.aspect,
            entry.label,
            entry.instance,
            entry.split.style(),
            self.geometry,
            &mut rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    /// Path relative to the dataset directory.
    pub file: String,
    pub split: Split,
    pub label: usize,
    pub class_name: String,
    pub instance: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub classes: Vec<String>,
    pub videos: Vec<VideoEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Renders every video of `spec` into `dir` (frames as tensor files) and
/// writes the manifest.
pub fn write_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Manifest, ProbeError> {
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| ProbeError::io(&sub, e))?;
    }
    let entries = spec.entries();
    entries
        .par_iter()
        .try_for_each(|e| tensor::write_video(&dir.join(&e.file), &spec.render(e)?))?;
    let manifest = Manifest {
        spec: *spec,
        classes: spec.aspect.class_names(),
        videos: entries,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| ProbeError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, ProbeError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| ProbeError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| ProbeError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Frames in a per-video random order, destroying temporal structure.
pub fn shuffle_frames(video: &Video, seed: u64) -> Video {
    let mut order: Vec<usize> = (0..video.len_of(Axis(0))).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    video.select(Axis(0), &order)
}

/// How videos become probe inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub rows: usize,
    pub cols: usize,
    /// Shuffle frames before extraction (the temporal control).
    pub shuffle_time: bool,
    /// Remove each patch position's mean over frames.
    pub center_time: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            rows: SEQ_LEN,
            cols: FEATURE_DIM,
            shuffle_time: false,
            center_time: true,
        }
    }
}

fn to_sequence(video: &Video, entry: &VideoEntry, opts: FeatureOptions) -> FeatureSequence {
    let video = if opts.shuffle_time {
        shuffle_frames(video, derived_seed(&format!("{}/shuffle", entry.seed)))
    } else {
        video.clone()
    };
    FeatureSequence {
        features: extract_features(&video, opts.rows, opts.cols, opts.center_time),
        label: entry.label,
        source: entry.file.clone(),
    }
}

/// Renders and featurizes one split in memory, in manifest order.
pub fn build_features(
    spec: &DatasetSpec,
    split: Split,
    opts: FeatureOptions,
) -> Result<Vec<FeatureSequence>, ProbeError> {
    spec.entries()
        .into_par_iter()
        .filter(|e| e.split == split)
        .map(|e| Ok(to_sequence(&spec.render(&e)?, &e, opts)))
        .collect()
}

/// Featurizes one split of a dataset directory written by [`write_dataset`].
pub fn load_features(
    dir: &Path,
    split: Split,
    opts: FeatureOptions,
) -> Result<(Manifest, Vec<FeatureSequence>), ProbeError> {
    let manifest = read_manifest(dir)?;
    let data = manifest
        .videos
        .par_iter()
        .filter(|e| e.split == split)
        .map(|e| Ok(to_sequence(&tensor::read_video(&dir.join(&e.file))?, e, opts)))
        .collect::<Result<Vec<_>, ProbeError>>()?;
    Ok((manifest, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub aspect: Aspect,
    pub classes: Vec<String>,
    pub input: usize,
    pub hidden: usize,
    pub features: FeatureOptions,
}

const MODEL_MAGIC: &[u8; 4] = b"T3PM";

/// Model file: magic, u32 LE header length, JSON header, then the parameter
/// tensors as f32 LE in declaration order.
pub fn save_model(path: &Path, header: &ModelHeader, params: &Params<f32>) -> Result<(), ProbeError> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut buf = Vec::with_capacity(8 + json.len() + params.len() * 4);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| ProbeError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(ModelHeader, Params<f32>), ProbeError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ProbeError::io(path, e))?;
    let bad = |m: &str| ProbeError::Model(format!("{}: {m}", path.display()));
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(bad("missing header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header: ModelHeader = bytes
        .get(8..8 + n)
        .ok_or_else(|| bad("truncated header"))
        .and_then(|h| serde_json::from_slice(h).map_err(|e| bad(&e.to_string())))?;
    let mut params = Params::<f32>::zeros(header.input, header.hidden, header.classes.len());
    let body = &bytes[8 + n..];
    if body.len() != params.len() * 4 {
        return Err(bad("parameter size mismatch"));
    }
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().unwrap();
        }
    }
    Ok((header, params))
}

/// A random model and sequence in double precision for gradient checking.
pub fn gradcheck_fixture(
    input: usize,
    hidden: usize,
    classes: usize,
    steps: usize,
    seed: u64,
) -> (Params<f64>, Array2<f64>, usize) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = Params::<f64>::init(input, hidden, classes, &mut rng);
    let seq = Array2::from_shape_fn((steps, input), |_| rng.random_range(0.0..1.0));
    let label = rng.random_range(0..classes);
    (params, seq, label)
}

/// Mean probability vector, mostly useful for reporting.
pub fn mean_row(m: &Array2<f32>) -> Array1<f32> {
    m.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(m.ncols()))
}

/// Dataset directory location relative to a config file.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_balanced_and_seeded() {
        let spec = DatasetSpec {
            train_per_class: 3,
            test_per_class: 1,
            ..DatasetSpec::new(Aspect::Order3, 2)
        };
        let e = spec.entries();
        assert_eq!(e.len(), 24);
        assert_eq!(e.iter().filter(|x| x.split == Split::Test).count(), 6);
        assert_eq!(e[0].file, "train/000000.t3t");
        assert_eq!(e[18].file, "test/000000.t3t");
        assert_eq!(e, spec.entries());
    }

    #[test]
    fn dataset_on_disk_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            train_per_class: 2,
            test_per_class: 1,
            geometry: Geometry {
                frames: 4,
                height: 32,
                width: 32,
            },
            ..DatasetSpec::new(Aspect::Order2, 9)
        };
        let m = write_dataset(&spec, dir.path()).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        let opts = FeatureOptions {
            rows: 16,
            cols: 32,
            ..Default::default()
        };
        let (_, disk) = load_features(dir.path(), Split::Train, opts).unwrap();
        assert_eq!(disk, build_features(&spec, Split::Train, opts).unwrap());
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Params::<f32>::init(6, 4, 2, &mut rng);
        let header = ModelHeader {
            aspect: Aspect::Shape,
            classes: Aspect::Shape.class_names(),
            input: 6,
            hidden: 4,
            features: FeatureOptions::default(),
        };
        let path = dir.path().join("m.bin");
        save_model(&path, &header, &p).unwrap();
        assert_eq!(load_model(&path).unwrap(), (header, p));
    }

    #[test]
    fn shuffled_frames_keep_the_multiset() {
        let v = Video::from_shape_fn((6, 2, 2, 3), |(t, ..)| t as f32);
        let s = shuffle_frames(&v, 3);
        let mut firsts: Vec<f32> = (0..6).map(|t| s[[t, 0, 0, 0]]).collect();
        assert_ne!(firsts, (0..6).map(|t| t as f32).collect::<Vec<_>>());
        firsts.sort_by(f32::total_cmp);
        assert_eq!(firsts, (0..6).map(|t| t as f32).collect::<Vec<_>>());
    }
}
