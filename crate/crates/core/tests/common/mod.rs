//! Independent reference implementations and corpus builders shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;

use aquavis::bbox::{format_bbox, BBox};
use aquavis::datagen::{CaptionRecord, CaptionScope, DetectionEntry, ImageAnnotation, QaRecord, Task};
use aquavis::eval::Prediction;
use aquavis::imaging::{DepthMap, RgbImage};
use aquavis::vfe::VfeParameters;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.gen_range(-1.0..1.0))
}

pub fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(h, w, |_, _, _| rng.gen()).unwrap()
}

pub fn random_depth(h: usize, w: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> DepthMap {
    DepthMap::new(h, w, (0..h * w).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

// ---------------------------------------------------------------- imaging

/// Unclamped image formation for one channel value.
pub fn formation(j: f64, z: f64, beta: f64, b: f64) -> f64 {
    j * (-beta * z).exp() + b
}

/// Darkest patch by direct scan: mean over the patch of each pixel's RGB
/// mean, strict comparison so the first minimum wins. Returns the index and
/// the per-channel means of that patch.
pub fn dark_patch_oracle(img: &RgbImage, p: usize) -> (usize, [f64; 3]) {
    let (rows, cols) = (img.height() / p, img.width() / p);
    let mut best = (usize::MAX, f64::INFINITY);
    for r in 0..rows {
        for c in 0..cols {
            let mut mean = 0.0;
            for y in r * p..(r + 1) * p {
                for x in c * p..(c + 1) * p {
                    mean += (img.get(y, x, 0) + img.get(y, x, 1) + img.get(y, x, 2)) / 3.0;
                }
            }
            mean /= (p * p) as f64;
            if mean < best.1 {
                best = (r * cols + c, mean);
            }
        }
    }
    let k = best.0;
    let (y0, x0) = ((k / cols) * p, (k % cols) * p);
    let mut ch = [0.0; 3];
    for (c, v) in ch.iter_mut().enumerate() {
        let mut s = 0.0;
        for y in y0..y0 + p {
            for x in x0..x0 + p {
                s += img.get(y, x, c);
            }
        }
        *v = s / (p * p) as f64;
    }
    (k, ch)
}

// ---------------------------------------------------------------- vfe

/// Single-query softmax attention evaluated with scalar loops.
pub fn attention_oracle(v: &Array2<f64>, p: &VfeParameters) -> Vec<f64> {
    let (n, d) = v.dim();
    let mut q_in = vec![0.0; d];
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..n {
            s += v[[i, j]];
        }
        q_in[j] = p.query_init[j] + s / n as f64;
    }
    let matvec = |x: &[f64], w: &Array2<f64>| -> Vec<f64> {
        (0..w.ncols())
            .map(|j| (0..x.len()).map(|i| x[i] * w[[i, j]]).sum())
            .collect()
    };
    let query = matvec(&q_in, &p.w_q);
    let mut scores = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|j| v[[i, j]]).collect();
        let key = matvec(&row, &p.w_k);
        scores.push(key.iter().zip(&query).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt());
        values.push(matvec(&row, &p.w_v));
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut ctx = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            ctx[j] += exps[i] / z * values[i][j];
        }
    }
    matvec(&ctx, &p.w_o)
}

/// Bilinear interpolation of a token grid with half-pixel cell centres and
/// edge clamping, evaluated point by point.
pub fn bilinear_oracle(tokens: &Array2<f64>, src: (usize, usize), dst: (usize, usize)) -> Array2<f64> {
    let e = tokens.ncols();
    let coord = |i: usize, s: usize, t: usize| -> (usize, usize, f64) {
        let mut x = (i as f64 + 0.5) * (s as f64 / t as f64) - 0.5;
        if x < 0.0 {
            x = 0.0;
        }
        if x > (s - 1) as f64 {
            x = (s - 1) as f64;
        }
        let lo = x.floor() as usize;
        let hi = if lo + 1 < s { lo + 1 } else { lo };
        (lo, hi, x - lo as f64)
    };
    let mut out = Array2::zeros((dst.0 * dst.1, e));
    for r in 0..dst.0 {
        let (y0, y1, ty) = coord(r, src.0, dst.0);
        for c in 0..dst.1 {
            let (x0, x1, tx) = coord(c, src.1, dst.1);
            for k in 0..e {
                let at = |y: usize, x: usize| tokens[[y * src.1 + x, k]];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[[r * dst.1 + c, k]] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

/// Two-layer ReLU MLP on one token, output clamped to `[-w_max, w_max]`.
pub fn mlp_oracle(x: &[f64], p: &VfeParameters) -> Vec<f64> {
    let h = p.mlp_b1.len();
    let d = p.mlp_b2.len();
    let mut hidden = vec![0.0; h];
    for (j, hj) in hidden.iter_mut().enumerate() {
        let mut s = p.mlp_b1[j];
        for (i, xi) in x.iter().enumerate() {
            s += xi * p.mlp_w1[[i, j]];
        }
        *hj = if s > 0.0 { s } else { 0.0 };
    }
    (0..d)
        .map(|j| {
            let mut s = p.mlp_b2[j];
            for (i, hi) in hidden.iter().enumerate() {
                s += hi * p.mlp_w2[[i, j]];
            }
            s.max(-p.w_max).min(p.w_max)
        })
        .collect()
}

pub fn absorption_oracle(
    depth: &Array2<f64>,
    src: (usize, usize),
    dst: (usize, usize),
    p: &VfeParameters,
) -> Array2<f64> {
    let r = bilinear_oracle(depth, src, dst);
    let d = p.mlp_b2.len();
    let mut w = Array2::zeros((r.nrows(), d));
    for i in 0..r.nrows() {
        let row: Vec<f64> = r.row(i).to_vec();
        for (j, x) in mlp_oracle(&row, p).into_iter().enumerate() {
            w[[i, j]] = x;
        }
    }
    w
}

/// Full enhancement from the staged oracles: `(v_i - (v_k - q)) * exp(W_i)`.
pub fn enhance_oracle(
    v: &Array2<f64>,
    grid: (usize, usize),
    k: usize,
    depth: &Array2<f64>,
    depth_grid: (usize, usize),
    p: &VfeParameters,
) -> Array2<f64> {
    let q = attention_oracle(v, p);
    let w = absorption_oracle(depth, depth_grid, grid, p);
    let (n, d) = v.dim();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let s = v[[k, j]] - q[j];
            out[[i, j]] = (v[[i, j]] - s) * w[[i, j]].exp();
        }
    }
    out
}

// ---------------------------------------------------------------- pipeline

pub fn sinusoid(i: usize, j: usize, d: usize) -> f64 {
    let angle = i as f64 / 10000f64.powf((j - j % 2) as f64 / d as f64);
    if j % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Patch embedding of an already divisible image with scalar loops; rows of
/// `w` follow (y, x, channel) order inside a patch.
pub fn encode_image_oracle(img: &RgbImage, p: usize, w: &Array2<f64>, b: &[f64]) -> Array2<f64> {
    let (rows, cols) = (img.height() / p, img.width() / p);
    let d = b.len();
    let mut out = Array2::zeros((rows * cols, d));
    for r in 0..rows {
        for c in 0..cols {
            let t = r * cols + c;
            for o in 0..d {
                let mut s = b[o] + sinusoid(t, o, d);
                for y in 0..p {
                    for x in 0..p {
                        for ch in 0..3 {
                            s += img.get(r * p + y, c * p + x, ch) * w[[(y * p + x) * 3 + ch, o]];
                        }
                    }
                }
                out[[t, o]] = s;
            }
        }
    }
    out
}

pub fn encode_depth_oracle(depth: &DepthMap, p: usize, w: &Array2<f64>, b: &[f64]) -> Array2<f64> {
    let (rows, cols) = (depth.height() / p, depth.width() / p);
    let e = b.len();
    let mut out = Array2::zeros((rows * cols, e));
    for r in 0..rows {
        for c in 0..cols {
            for o in 0..e {
                let mut s = b[o];
                for y in 0..p {
                    for x in 0..p {
                        s += depth.get(r * p + y, c * p + x) * w[[y * p + x, o]];
                    }
                }
                out[[r * cols + c, o]] = s;
            }
        }
    }
    out
}

pub fn gelu_oracle(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn projector_oracle(
    x: &Array2<f64>,
    w1: &Array2<f64>,
    b1: &[f64],
    w2: &Array2<f64>,
    b2: &[f64],
) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), b2.len()));
    for i in 0..x.nrows() {
        let hidden: Vec<f64> = (0..b1.len())
            .map(|j| gelu_oracle(b1[j] + (0..x.ncols()).map(|k| x[[i, k]] * w1[[k, j]]).sum::<f64>()))
            .collect();
        for j in 0..b2.len() {
            out[[i, j]] = b2[j] + hidden.iter().enumerate().map(|(k, h)| h * w2[[k, j]]).sum::<f64>();
        }
    }
    out
}

// ---------------------------------------------------------------- detection

/// Gold and predicted `(class, box)` lists of one image.
pub type OracleImage = (Vec<(String, [f64; 4])>, Vec<(String, [f64; 4])>);

fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Enumerates every injective assignment of predictions to golds at IoU
/// `>= tau` and keeps the one whose per-prediction keys (matched, IoU,
/// lower gold index), read in rank order, are lexicographically largest.
fn exhaustive_hits(pred: &[[f64; 4]], gold: &[[f64; 4]], tau: f64) -> Vec<bool> {
    type Key = (u8, f64, i64);
    fn rec(
        i: usize,
        pred: &[[f64; 4]],
        gold: &[[f64; 4]],
        tau: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<(Key, bool)>,
        best: &mut Option<Vec<(Key, bool)>>,
    ) {
        if i == pred.len() {
            let better = match best {
                None => true,
                Some(b) => {
                    let mut ord = std::cmp::Ordering::Equal;
                    for (x, y) in cur.iter().zip(b.iter()) {
                        ord = x.0.partial_cmp(&y.0).unwrap();
                        if ord != std::cmp::Ordering::Equal {
                            break;
                        }
                    }
                    ord == std::cmp::Ordering::Greater
                }
            };
            if better {
                *best = Some(cur.clone());
            }
            return;
        }
        cur.push(((0, 0.0, 0), false));
        rec(i + 1, pred, gold, tau, used, cur, best);
        cur.pop();
        for g in 0..gold.len() {
            let iou = oracle_iou(pred[i], gold[g]);
            if !used[g] && iou >= tau {
                used[g] = true;
                cur.push(((1, iou, -(g as i64)), true));
                rec(i + 1, pred, gold, tau, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut best = None;
    rec(0, pred, gold, tau, &mut vec![false; gold.len()], &mut Vec::new(), &mut best);
    best.unwrap().into_iter().map(|(_, h)| h).collect()
}

fn oracle_ap(hits: &[bool], num_gold: usize) -> f64 {
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut tp = 0;
    for (i, h) in hits.iter().enumerate() {
        if *h {
            tp += 1;
        }
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / num_gold as f64);
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let mut p = 0.0f64;
        for i in 0..hits.len() {
            if rec[i] >= r {
                p = p.max(prec[i]);
            }
        }
        total += p;
    }
    total / 101.0
}

/// `(map, map@0.5, map@0.75, ar@100)` by exhaustive matching. Classes are
/// those of the gold boxes after trimming and lowercasing; all predictions
/// share confidence 1 and rank by image then emission order.
pub fn detection_oracle(images: &[OracleImage]) -> [f64; 4] {
    let norm = |s: &str| s.trim().to_lowercase();
    let classes: BTreeSet<String> = images
        .iter()
        .flat_map(|(g, _)| g.iter().map(|(c, _)| norm(c)))
        .collect();
    if classes.is_empty() {
        return [0.0; 4];
    }
    let taus: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    let mut ap = vec![vec![0.0; classes.len()]; taus.len()];
    let mut ar = vec![vec![0.0; classes.len()]; taus.len()];
    for (ci, class) in classes.iter().enumerate() {
        for (ti, &tau) in taus.iter().enumerate() {
            let mut hits = Vec::new();
            let mut num_gold = 0;
            for (gold, pred) in images {
                let g: Vec<[f64; 4]> = gold.iter().filter(|(c, _)| norm(c) == *class).map(|(_, b)| *b).collect();
                let p: Vec<[f64; 4]> = pred
                    .iter()
                    .filter(|(c, _)| norm(c) == *class)
                    .map(|(_, b)| *b)
                    .take(100)
                    .collect();
                num_gold += g.len();
                hits.extend(exhaustive_hits(&p, &g, tau));
            }
            ap[ti][ci] = oracle_ap(&hits, num_gold);
            ar[ti][ci] = hits.iter().filter(|h| **h).count() as f64 / num_gold as f64;
        }
    }
    let mean = |rows: &[Vec<f64>]| {
        let all: Vec<f64> = rows.iter().flatten().copied().collect();
        all.iter().sum::<f64>() / all.len() as f64
    };
    [mean(&ap), mean(&ap[0..1]), mean(&ap[5..6]), mean(&ar)]
}

pub const ORACLE_CLASSES: [&str; 3] = ["fish", "turtle", "coral"];

fn random_box(rng: &mut impl Rng) -> [f64; 4] {
    let w = rng.gen_range(0.05..0.6);
    let h = rng.gen_range(0.05..0.6);
    let x = rng.gen_range(0.0..1.0 - w);
    let y = rng.gen_range(0.0..1.0 - h);
    [x, y, x + w, y + h]
}

fn nudge(b: [f64; 4], amount: f64, rng: &mut impl Rng) -> [f64; 4] {
    let mut out = b.map(|v| (v + rng.gen_range(-amount..amount)).clamp(0.0, 1.0));
    if out[2] <= out[0] + 0.01 {
        out = [b[0], out[1], b[2], out[3]];
    }
    if out[3] <= out[1] + 0.01 {
        out = [out[0], b[1], out[2], b[3]];
    }
    out
}

/// Small random detection instance: up to three images, at most three
/// classes and five gold / five predicted boxes per image. Predictions are a
/// mix of perturbed golds, random boxes, duplicates and case variants.
pub fn random_detection_instance(rng: &mut impl Rng) -> Vec<OracleImage> {
    let n_img = rng.gen_range(1..=3);
    (0..n_img)
        .map(|_| {
            let gold: Vec<(String, [f64; 4])> = (0..rng.gen_range(0..=5))
                .map(|_| (ORACLE_CLASSES.choose(rng).unwrap().to_string(), random_box(rng)))
                .collect();
            let mut pred = Vec::new();
            for _ in 0..rng.gen_range(0..=5) {
                let roll: f64 = rng.gen();
                if !gold.is_empty() && roll < 0.6 {
                    let (c, b) = gold.choose(rng).unwrap().clone();
                    let c = if rng.gen_bool(0.2) { format!(" {} ", c.to_uppercase()) } else { c };
                    pred.push((c, nudge(b, rng.gen_range(0.0..0.15), rng)));
                } else if roll < 0.9 {
                    pred.push((ORACLE_CLASSES.choose(rng).unwrap().to_string(), random_box(rng)));
                } else {
                    pred.push(("seaweed".to_string(), random_box(rng)));
                }
            }
            (gold, pred)
        })
        .collect()
}

// ---------------------------------------------------------------- captions

/// A caption corpus with metric values worked out by hand.
pub struct CaptionFixture {
    pub name: &'static str,
    pub candidates: Vec<&'static str>,
    pub references: Vec<Vec<&'static str>>,
    pub bleu4: Option<f64>,
    pub cider: Option<f64>,
    pub meteor_lite: Option<f64>,
}

pub fn caption_fixtures() -> Vec<CaptionFixture> {
    vec![
        // clipped precisions 7/8, 5/7, 3/6, 1/5 multiply to 1/16; equal
        // lengths give BP = 1, so BLEU = (1/16)^(1/4).
        // Alignment: 7 exact matches in chunks {0..3} and {5..7}, so
        // P = R = 7/8 and the penalty is 0.5 * (2/7)^3 = 4/343.
        CaptionFixture {
            name: "one-word substitution",
            candidates: vec!["a small fish swims near the coral reef"],
            references: vec![vec!["a small fish swims over the coral reef"]],
            bleu4: Some(0.5),
            cider: None,
            meteor_lite: Some(7.0 / 8.0 * (1.0 - 4.0 / 343.0)),
        },
        // every n-gram of the 4-token candidate occurs in the first
        // reference; the closest reference length is 5, so BP = e^(1 - 5/4).
        CaptionFixture {
            name: "brevity penalty with two references",
            candidates: vec!["a small fish swims"],
            references: vec![vec!["a small fish swims near the reef", "a tiny fish swims here"]],
            bleu4: Some((-0.25f64).exp()),
            cider: None,
            meteor_lite: None,
        },
        // every n-gram has document frequency 1 of 2, weight ln 2. Unigram
        // and bigram cosines are 1, tri- and 4-gram vectors are empty, the
        // length gaussian is 1: 10 * (1 + 1) / 4 = 5 per item.
        CaptionFixture {
            name: "exact captions over a two-item corpus",
            candidates: vec!["red fish", "blue coral"],
            references: vec![vec!["red fish"], vec!["blue coral"]],
            bleu4: None,
            cider: Some(5.0),
            meteor_lite: None,
        },
        // "fish" occurs in both reference sets, so its weight is 0. Item 1:
        // the unigram vector of the reference adds "swims" (ln 2), giving a
        // cosine of 1/sqrt(2); bigrams likewise 1/sqrt(2); the trigram
        // vector of the candidate is empty. Length differs by one, so the
        // gaussian is e^(-1/72): 10 * sqrt(2) * e^(-1/72) / 4.
        // Item 2 scores 5 as above.
        CaptionFixture {
            name: "shared word and length penalty",
            candidates: vec!["red fish", "blue fish"],
            references: vec![vec!["red fish swims"], vec!["blue fish"]],
            bleu4: None,
            cider: Some((2.5 * 2f64.sqrt() * (-1.0f64 / 72.0).exp() + 5.0) / 2.0),
            meteor_lite: None,
        },
        // exact: the, near, coral; stem: fishes~fish, swim~swims.
        // Pairs (0,0)(1,1)(2,2)(3,3)(4,5) form 2 chunks; P = 1, R = 5/6,
        // F = (5/6) / (0.9 + 0.1 * 5/6) = 50/59, penalty 0.5 * (2/5)^3.
        // The second reference shares only "the".
        CaptionFixture {
            name: "stem matches and fragmentation",
            candidates: vec!["the fishes swim near coral"],
            references: vec![vec!["the fish swims near the coral", "the octopus hides"]],
            bleu4: None,
            cider: None,
            meteor_lite: Some(50.0 / 59.0 * (1.0 - 0.5 * 0.4f64.powi(3))),
        },
    ]
}

// ---------------------------------------------------------------- corpus

pub const SOURCES: [&str; 4] = ["deepfish", "fishnet", "iocfish5k", "trashcan"];
pub const CLASSES: [&str; 7] = ["fish", "sea turtle", "jellyfish", "coral", "diver", "plastic bag", "starfish"];
pub const TAXA: [&str; 8] = [
    "Perciformes",
    "Tetraodontiformes",
    "Anguilliformes",
    "Scorpaeniformes",
    "Beloniformes",
    "Pleuronectiformes",
    "Carcharhiniformes",
    "Myliobatiformes",
];
pub const IMAGE_CAPTIONS: [&str; 4] = [
    "A school of silver fish swims above a rocky reef. Light filters down from the surface.",
    "A diver hovers near a wreck covered in soft coral.",
    "Murky green water with a single turtle in the distance.",
    "A sandy seabed with scattered shells and a small crab.",
];
pub const REGION_CAPTIONS: [&str; 5] = [
    "Description: a dark-colored fish with a long dorsal fin. It faces left.",
    "a yellow tang near the coral",
    "A plastic bag drifting in blue water! It is partly torn.",
    "the turtle's front flipper, raised mid-stroke",
    "A striped fish (possibly a wrasse) beside a rock. Its tail is blurred.",
];

fn corpus_box(rng: &mut impl Rng) -> BBox {
    let w = rng.gen_range(0.02..0.7);
    let h = rng.gen_range(0.02..0.7);
    let x = rng.gen_range(0.0..1.0 - w);
    let y = rng.gen_range(0.0..1.0 - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}

/// Random annotation file with every kind of input the generator accepts.
pub fn random_annotations(seed: u64, images: usize) -> Vec<ImageAnnotation> {
    let mut rng = rng(seed);
    (0..images)
        .map(|i| {
            let conditions: Vec<String> = aquavis::datagen::CONDITION_TAGS
                .iter()
                .filter(|_| rng.gen_bool(0.25))
                .map(|s| s.to_string())
                .collect();
            let detections = (0..rng.gen_range(0..5))
                .map(|_| DetectionEntry {
                    class_name: CLASSES.choose(&mut rng).unwrap().to_string(),
                    bbox: corpus_box(&mut rng),
                })
                .collect();
            let mut captions = Vec::new();
            if rng.gen_bool(0.6) {
                captions.push(CaptionRecord {
                    image_id: String::new(),
                    scope: CaptionScope::Image,
                    text: IMAGE_CAPTIONS.choose(&mut rng).unwrap().to_string(),
                    provider_id: "fixture".into(),
                });
            }
            for _ in 0..rng.gen_range(0..3) {
                captions.push(CaptionRecord {
                    image_id: String::new(),
                    scope: CaptionScope::Region {
                        bbox: corpus_box(&mut rng),
                    },
                    text: REGION_CAPTIONS.choose(&mut rng).unwrap().to_string(),
                    provider_id: "fixture".into(),
                });
            }
            ImageAnnotation {
                image_id: format!("img{i:05}"),
                source: SOURCES.choose(&mut rng).unwrap().to_string(),
                conditions,
                detections,
                count: rng.gen_bool(0.7).then(|| match rng.gen_range(0..3) {
                    0 => rng.gen_range(0..10),
                    1 => rng.gen_range(0..200),
                    _ => rng.gen_range(0..2000),
                }),
                taxonomic_class: rng.gen_bool(0.4).then(|| TAXA.choose(&mut rng).unwrap().to_string()),
                captions,
            }
        })
        .collect()
}

// ---------------------------------------------------------------- predictor

fn shift_box(b: [f64; 4], delta: f64) -> [f64; 4] {
    let axis = |lo: f64, hi: f64| {
        let d = if hi + delta <= 1.0 { delta } else { -delta };
        ((lo + d).clamp(0.0, 1.0), (hi + d).clamp(0.0, 1.0))
    };
    let (x1, x2) = axis(b[0], b[2]);
    let (y1, y2) = axis(b[1], b[3]);
    [x1, y1, x2, y2]
}

fn jitter_text(answer: &str, delta: f64) -> String {
    let parsed = aquavis::eval::parse::parse_detection_output(answer, None);
    parsed
        .entries
        .iter()
        .map(|e| {
            let b = BBox::try_from(shift_box(e.bbox.coords(), delta)).unwrap();
            format!("{}:{}", e.class_name, format_bbox(&b))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Deterministic stand-in for a model: mostly echoes the gold answer, with
/// fixed, position-dependent mistakes so that no metric is trivially 1.
/// With `jitter > 0` every detection and grounding box is shifted by that
/// amount on both axes.
pub fn scripted_predictions(gold: &[QaRecord], jitter: f64) -> Vec<Prediction> {
    gold.iter()
        .enumerate()
        .map(|(i, g)| {
            let text = match g.task {
                Task::Detection => {
                    let mut a = if jitter > 0.0 { jitter_text(&g.answer, jitter) } else { g.answer.clone() };
                    if i % 4 == 1 {
                        a.push_str(", diver:[0.000, 0.000, 0.100, 0.100]");
                    }
                    format!("Sure. {a}")
                }
                Task::Grounding => {
                    let b = aquavis::eval::parse::parse_bbox(&g.answer, None).unwrap();
                    let b = BBox::try_from(shift_box(b.coords(), jitter)).unwrap();
                    if i % 5 == 3 {
                        "I cannot find that region.".to_string()
                    } else {
                        format!("The region is at {}.", format_bbox(&b))
                    }
                }
                Task::CountingRegress => {
                    let n: u64 = g.answer.parse().unwrap();
                    format!("There are {} objects.", n + (i % 3) as u64)
                }
                Task::CountingChoice => {
                    if i % 3 == 0 {
                        "B".to_string()
                    } else {
                        g.answer.clone()
                    }
                }
                Task::CoarseCls | Task::FineCls => {
                    if i % 4 == 0 {
                        "fish".to_string()
                    } else {
                        format!(" {} ", g.answer.to_uppercase())
                    }
                }
                Task::ImageCaption | Task::RegionCaption | Task::Vqa => {
                    let words: Vec<&str> = g.answer.split_whitespace().collect();
                    words[..words.len().saturating_sub(i % 3)].join(" ")
                }
            };
            Prediction {
                id: g.id.clone(),
                task: g.task,
                output_text: text,
                image_size: None,
            }
        })
        .collect()
}
