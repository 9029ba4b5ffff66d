//! Procedural caption corpus used for offline runs and tests.
//!
//! Captions mimic the shape of model-generated image descriptions. Modifier
//! and verb vocabularies are drawn from the stoplist so that each caption
//! carries only a handful of nouns, which keeps the distractor pool large
//! enough for the widest context bands.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawRecord;

const OPENERS: &[&str] = &[
    "The image shows",
    "This photo shows",
    "The picture depicts",
    "The scene features",
    "There is",
    "We can see",
    "Here we see",
    "Shown here is",
];

const MODIFIERS: &[&str] = &[
    "big",
    "small",
    "large",
    "tiny",
    "tall",
    "short",
    "old",
    "young",
    "modern",
    "beautiful",
    "cute",
    "happy",
    "calm",
    "quiet",
    "busy",
    "bright",
    "dark",
    "soft",
    "smooth",
    "wet",
    "dry",
    "clean",
    "dirty",
    "shiny",
    "colorful",
    "fluffy",
    "wooden",
    "red",
    "yellow",
    "green",
    "blue",
    "purple",
    "pink",
    "brown",
    "black",
    "white",
    "gray",
];

const VERBS: &[&str] = &[
    "sitting",
    "standing",
    "lying",
    "resting",
    "placed",
    "located",
    "positioned",
    "waiting",
    "leaning",
    "perched",
    "hanging",
    "floating",
    "parked",
    "posing",
    "relaxing",
];

const PREPOSITIONS: &[&str] = &["on", "near", "beside", "behind", "under", "above", "inside", "along"];

pub const SUBJECTS: &[&str] = &[
    "dog",
    "cat",
    "horse",
    "cow",
    "sheep",
    "goat",
    "rabbit",
    "squirrel",
    "fox",
    "deer",
    "bear",
    "lion",
    "tiger",
    "zebra",
    "giraffe",
    "elephant",
    "monkey",
    "parrot",
    "pigeon",
    "duck",
    "swan",
    "owl",
    "eagle",
    "turtle",
    "frog",
    "lizard",
    "snake",
    "fish",
    "dolphin",
    "whale",
    "man",
    "woman",
    "boy",
    "girl",
    "child",
    "baby",
    "chef",
    "farmer",
    "doctor",
    "nurse",
    "teacher",
    "student",
    "soldier",
    "pilot",
    "sailor",
    "musician",
    "painter",
    "dancer",
    "athlete",
    "clown",
    "car",
    "truck",
    "bus",
    "bicycle",
    "motorcycle",
    "tractor",
    "boat",
    "canoe",
    "airplane",
    "helicopter",
    "train",
    "scooter",
    "wagon",
    "robot",
    "doll",
    "teddy",
    "guitar",
    "piano",
    "violin",
    "drum",
    "lamp",
    "vase",
    "bottle",
    "cup",
    "mug",
    "teapot",
    "basket",
    "backpack",
    "suitcase",
    "umbrella",
    "hat",
    "shoe",
    "clock",
    "camera",
    "laptop",
    "phone",
    "book",
    "candle",
    "pumpkin",
    "apple",
    "banana",
    "cake",
    "pizza",
    "sandwich",
    "bouquet",
    "cactus",
    "statue",
    "kite",
];

pub const PLACES: &[&str] = &[
    "table",
    "desk",
    "chair",
    "sofa",
    "bench",
    "bed",
    "shelf",
    "counter",
    "windowsill",
    "carpet",
    "rug",
    "floor",
    "roof",
    "porch",
    "balcony",
    "staircase",
    "doorway",
    "fence",
    "wall",
    "gate",
    "bridge",
    "pier",
    "dock",
    "beach",
    "shore",
    "river",
    "lake",
    "pond",
    "waterfall",
    "meadow",
    "field",
    "farm",
    "garden",
    "orchard",
    "vineyard",
    "forest",
    "jungle",
    "desert",
    "canyon",
    "cliff",
    "mountain",
    "hill",
    "valley",
    "glacier",
    "island",
    "street",
    "sidewalk",
    "alley",
    "highway",
    "parking",
    "plaza",
    "market",
    "harbor",
    "station",
    "airport",
    "stadium",
    "playground",
    "library",
    "museum",
    "church",
    "castle",
    "tower",
    "barn",
    "cabin",
    "tent",
    "kitchen",
    "bathroom",
    "bedroom",
    "office",
    "classroom",
    "restaurant",
    "cafe",
    "bakery",
    "shop",
    "warehouse",
    "factory",
    "hospital",
    "school",
    "rooftop",
    "fountain",
    "lawn",
    "hedge",
    "tree",
    "stump",
    "rock",
    "boulder",
    "log",
    "snowbank",
    "sand",
    "grass",
    "pavement",
    "driveway",
    "railing",
    "ladder",
    "crate",
    "pallet",
    "tray",
    "blanket",
    "pillow",
];

const EXTRAS: &[&str] = &[
    "flag", "lantern", "ribbon", "bucket", "shovel", "broom", "bowl", "plate", "fork", "spoon", "towel", "scarf",
    "glove", "necklace", "bracelet", "feather", "leaf", "flower", "mirror", "poster", "sign", "rope", "chain", "wheel",
    "helmet", "mask", "balloon", "ball", "toy", "box",
];

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn one_caption(rng: &mut ChaCha8Rng) -> String {
    let opener = OPENERS.choose(rng).unwrap();
    let modifier = MODIFIERS.choose(rng).unwrap();
    let subject = SUBJECTS.choose(rng).unwrap();
    let verb = VERBS.choose(rng).unwrap();
    let prep = PREPOSITIONS.choose(rng).unwrap();
    let place = PLACES.choose(rng).unwrap();
    let mut text = format!(
        "{opener} {} {modifier} {subject} {verb} {prep} the {place}",
        article(modifier)
    );
    if rng.random_bool(0.4) {
        let extra = EXTRAS.choose(rng).unwrap();
        text.push_str(&format!(" with {} {extra}", article(extra)));
    }
    text.push('.');
    text
}

/// `n` distinct captions, reproducible from `seed`.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let text = one_caption(&mut rng);
        if seen.insert(text.clone()) {
            out.push(RawRecord::new(text, format!("demo-{}", out.len())));
        }
    }
    out
}
