//! Seeded stand-ins for the image and text datasets: handwritten-style
//! digits in IDX format and English-like play text.

use std::f64::consts::PI;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::data_io::idx::{idx_paths, write_idx};
use crate::error::Result;
use crate::tensor::Rng;

pub const DIGIT_SIDE: usize = 28;

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, points: usize) -> Stroke {
    (0..=points)
        .map(|k| {
            let a = from + (to - from) * k as f64 / points as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Pen strokes of each digit in a unit box, y pointing down.
fn glyph(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.28, 0.42, 0.0, 2.0 * PI, 20)],
        1 => vec![vec![(0.36, 0.26), (0.54, 0.08), (0.54, 0.92)]],
        2 => vec![vec![
            (0.24, 0.3),
            (0.32, 0.14),
            (0.52, 0.08),
            (0.7, 0.16),
            (0.74, 0.34),
            (0.6, 0.55),
            (0.24, 0.9),
            (0.8, 0.9),
        ]],
        3 => vec![vec![
            (0.24, 0.14),
            (0.5, 0.08),
            (0.72, 0.2),
            (0.66, 0.4),
            (0.44, 0.48),
            (0.7, 0.58),
            (0.74, 0.78),
            (0.52, 0.92),
            (0.24, 0.86),
        ]],
        4 => vec![vec![(0.62, 0.92), (0.62, 0.08), (0.2, 0.64), (0.82, 0.64)]],
        5 => vec![vec![
            (0.76, 0.1),
            (0.32, 0.1),
            (0.28, 0.46),
            (0.52, 0.4),
            (0.72, 0.52),
            (0.74, 0.76),
            (0.54, 0.92),
            (0.24, 0.86),
        ]],
        6 => vec![
            vec![(0.7, 0.1), (0.46, 0.22), (0.3, 0.48), (0.28, 0.7)],
            ellipse(0.5, 0.7, 0.22, 0.2, PI, 3.0 * PI, 16),
        ],
        7 => vec![vec![(0.2, 0.1), (0.8, 0.1), (0.58, 0.5), (0.42, 0.92)]],
        8 => vec![
            ellipse(0.5, 0.28, 0.19, 0.19, 0.0, 2.0 * PI, 16),
            ellipse(0.5, 0.7, 0.24, 0.22, 0.0, 2.0 * PI, 16),
        ],
        _ => vec![
            ellipse(0.48, 0.32, 0.22, 0.22, 0.0, 2.0 * PI, 16),
            vec![(0.7, 0.32), (0.68, 0.62), (0.58, 0.92)],
        ],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one digit as 28x28 grayscale bytes with a random pose, pen width,
/// wobble and pixel noise.
pub fn render_digit(digit: u8, rng: &mut Rng) -> Vec<u8> {
    let side = DIGIT_SIDE as f64;
    let angle = rng.uniform(-0.22, 0.22, 1).expect("range")[0];
    let shear = rng.uniform(-0.25, 0.25, 1).expect("range")[0];
    let sx = 18.0 * rng.uniform(0.8, 1.1, 1).expect("range")[0];
    let sy = 20.0 * rng.uniform(0.85, 1.1, 1).expect("range")[0];
    let shift = rng.uniform(-2.0, 2.0, 2).expect("range");
    let pen = rng.uniform(0.8, 1.7, 1).expect("range")[0];
    let (sin, cos) = angle.sin_cos();
    let (cx, cy) = (side / 2.0 + shift[0], side / 2.0 + shift[1]);

    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(x, y)| {
                    let j = rng.uniform(-0.035, 0.035, 2).expect("range");
                    let (u, v) = (x + j[0] - 0.5, y + j[1] - 0.5);
                    let u = u + shear * v;
                    let (u, v) = (u * sx, v * sy);
                    (cx + cos * u - sin * v, cy + sin * u + cos * v)
                })
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, 0.06).expect("valid deviation");
    let mut out = Vec::with_capacity(DIGIT_SIDE * DIGIT_SIDE);
    for r in 0..DIGIT_SIDE {
        for c in 0..DIGIT_SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(|w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let ink = (pen + 0.5 - d).clamp(0.0, 1.0);
            let v = (ink + noise.sample(rng.inner_mut())).clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// `count` digits with labels cycling through 0..9 in shuffled order.
pub fn synthetic_digits(count: usize, rng: &mut Rng) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    rng.shuffle(&mut labels);
    let images = labels.iter().map(|&d| render_digit(d, rng)).collect();
    (images, labels)
}

/// Writes a train/test IDX quartet under `dir` with the usual file names.
pub fn write_synthetic_mnist(dir: &Path, train: usize, test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rng = Rng::new(seed);
    let [ti, tl, vi, vl] = idx_paths(dir);
    let (images, labels) = synthetic_digits(train, &mut rng);
    write_idx(&ti, &tl, &images, &labels, DIGIT_SIDE, DIGIT_SIDE)?;
    let (images, labels) = synthetic_digits(test, &mut rng);
    write_idx(&vi, &vl, &images, &labels, DIGIT_SIDE, DIGIT_SIDE)
}

const SPEAKERS: &[&str] = &[
    "KING", "QUEEN", "HAMLET", "OPHELIA", "ROMEO", "JULIET", "FOOL", "DUKE", "LADY", "GHOST",
];
const NOUNS: &[&str] = &[
    "king", "lord", "heart", "night", "love", "crown", "sword", "world", "soul", "death", "eyes", "blood",
    "day", "grave", "honour", "friend", "tongue", "heaven", "father", "mother", "son", "daughter", "time",
    "house", "hand", "name", "voice", "fortune", "star", "storm",
];
const ADJECTIVES: &[&str] = &[
    "noble", "gentle", "sweet", "cruel", "fair", "dark", "true", "poor", "old", "young", "proud", "dear",
    "bloody", "honest", "wretched",
];
const VERBS: &[&str] = &[
    "loves", "speaks", "fears", "hath", "knows", "seeks", "bears", "keeps", "yields", "follows", "remembers",
    "betrays", "serves", "calls", "forgets",
];
const ADVERBS: &[&str] = &["now", "still", "ever", "never", "soon", "here", "there", "thus"];
const OPENERS: &[&str] = &["O", "Alas,", "Nay,", "Good", "Come,", "What,", "Ay,", "Fie,"];

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    // Squaring skews toward the front of each list, giving a Zipf-like mix.
    let u = rng.unit();
    words[((u * u) * words.len() as f64) as usize % words.len()]
}

fn sentence(rng: &mut Rng) -> String {
    let mut words: Vec<String> = Vec::new();
    if rng.unit() < 0.3 {
        words.push(pick(rng, OPENERS).to_string());
    }
    let form = rng.index(4);
    let the = |rng: &mut Rng| if rng.unit() < 0.5 { "the" } else { "my" };
    match form {
        0 => {
            words.push(the(rng).into());
            words.push(pick(rng, ADJECTIVES).into());
            words.push(pick(rng, NOUNS).into());
            words.push(pick(rng, VERBS).into());
            words.push(the(rng).into());
            words.push(pick(rng, NOUNS).into());
        }
        1 => {
            words.push("I".into());
            words.push(pick(rng, VERBS).trim_end_matches('s').into());
            words.push("thee".into());
            words.push(pick(rng, ADVERBS).into());
        }
        2 => {
            words.push("thy".into());
            words.push(pick(rng, NOUNS).into());
            words.push("is".into());
            words.push(pick(rng, ADJECTIVES).into());
            words.push("and".into());
            words.push(pick(rng, ADJECTIVES).into());
        }
        _ => {
            words.push("what".into());
            words.push(pick(rng, NOUNS).into());
            words.push(pick(rng, VERBS).into());
            words.push("of".into());
            words.push(the(rng).into());
            words.push(pick(rng, NOUNS).into());
        }
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        s = first.to_uppercase() + &s[1..];
    }
    let end = [".", ".", ".", "!", "?", ";"][rng.index(6)];
    s + end
}

/// English-like play text of at least `min_bytes` bytes.
pub fn synthetic_corpus(min_bytes: usize, rng: &mut Rng) -> String {
    let mut out = String::with_capacity(min_bytes + 256);
    while out.len() < min_bytes {
        out.push_str(pick(rng, SPEAKERS));
        out.push_str(":\n");
        for _ in 0..1 + rng.index(3) {
            let mut line = String::new();
            for _ in 0..1 + rng.index(2) {
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&sentence(rng));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
