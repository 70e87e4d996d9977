//! Procedural hand-gesture corpus for desk-scale runs.
//!
//! Each subject gets a skin tone, a striped background, and a hand scale;
//! each gesture fixes which fingers are extended plus an overall tilt. The
//! hand is painted from the same 21-point skeleton that is written to the
//! annotation file, so poses and pixels agree exactly.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::{write_atomic, Image};
use crate::pose::{write_annotations, HandPose, Keypoint, HAND_EDGES, NUM_KEYPOINTS};
use crate::raster::point_segment_distance_sq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub subjects: usize,
    pub gestures: usize,
    pub images_per_gesture: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            subjects: 4,
            gestures: 2,
            images_per_gesture: 1,
            image_size: 64,
            seed: 0,
        }
    }
}

/// Paths written by [`generate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub manifest: PathBuf,
    pub annotations: PathBuf,
}

/// Extended-finger masks, thumb in bit 0 through little finger in bit 4.
const GESTURE_MASKS: [u8; 10] = [
    0b00000, 0b00010, 0b00110, 0b01110, 0b11110, 0b11111, 0b00001, 0b10010, 0b10001, 0b00011,
];

/// Finger direction offsets from the palm axis, radians.
const FINGER_SPREAD: [f64; 5] = [-0.95, -0.32, -0.08, 0.15, 0.38];
const PALM_REACH: [f64; 5] = [0.10, 0.20, 0.21, 0.20, 0.18];
const BONE_LENGTHS: [[f64; 3]; 5] = [
    [0.08, 0.07, 0.06],
    [0.10, 0.07, 0.05],
    [0.11, 0.08, 0.05],
    [0.10, 0.07, 0.05],
    [0.08, 0.06, 0.04],
];

struct Subject {
    skin: [f32; 3],
    background: [[f32; 3]; 2],
    stripe_angle: f64,
    stripe_freq: f64,
    scale: f64,
}

fn subject(seed: u64, index: usize) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eed_0000 + index as u64));
    let skin = [
        rng.random_range(150.0..240.0),
        rng.random_range(100.0..190.0),
        rng.random_range(70.0..160.0),
    ];
    let mut bg = || [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
    let background = [bg(), bg()];
    Subject {
        skin,
        background,
        stripe_angle: rng.random_range(0.0..PI),
        stripe_freq: rng.random_range(0.15..0.5),
        scale: rng.random_range(0.9..1.1),
    }
}

/// Builds a pose for one image of `gesture` performed by `who`.
fn hand_pose(who: &Subject, gesture: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<HandPose> {
    let s = size as f64 * who.scale;
    let mask = GESTURE_MASKS[gesture % GESTURE_MASKS.len()];
    let tilt = 0.35 * (gesture / GESTURE_MASKS.len()) as f64 + rng.random_range(-0.08..0.08);
    let axis = -PI / 2.0 + tilt;
    let wrist = (
        size as f64 * 0.5 + rng.random_range(-0.04..0.04) * size as f64,
        size as f64 * 0.85 + rng.random_range(-0.03..0.03) * size as f64,
    );
    let mut kps = [Keypoint::new(wrist.0, wrist.1, 1.0); NUM_KEYPOINTS];
    kps[0].c = rng.random_range(0.6..1.0);
    for finger in 0..5 {
        let extended = mask & (1 << finger) != 0;
        let mut angle = axis + FINGER_SPREAD[finger];
        let base = 1 + 4 * finger;
        let mut at = (
            wrist.0 + PALM_REACH[finger] * s * angle.cos(),
            wrist.1 + PALM_REACH[finger] * s * angle.sin(),
        );
        kps[base] = Keypoint::new(at.0, at.1, rng.random_range(0.6..1.0));
        for joint in 0..3 {
            let (len, bend) = if extended {
                (BONE_LENGTHS[finger][joint], 0.0)
            } else {
                (BONE_LENGTHS[finger][joint] * 0.7, if finger == 0 { 0.9 } else { 1.3 })
            };
            // Curl toward the palm: clockwise for the thumb side.
            angle += if finger == 0 { bend } else { -bend } * if joint == 0 { 0.6 } else { 1.0 };
            at = (at.0 + len * s * angle.cos(), at.1 + len * s * angle.sin());
            kps[base + 1 + joint] = Keypoint::new(at.0, at.1, rng.random_range(0.5..1.0));
        }
    }
    HandPose::new(kps, size as u32, size as u32)
}

fn render(who: &Subject, pose: &HandPose, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::filled(3, size, size, 0.0);
    let (ca, sa) = (who.stripe_angle.cos(), who.stripe_angle.sin());
    for v in 0..size {
        for u in 0..size {
            let phase = (u as f64 * ca + v as f64 * sa) * who.stripe_freq;
            let band = usize::from(phase.sin() > 0.0);
            let grain: f32 = rng.random_range(-12.0..12.0);
            for c in 0..3 {
                img.set(c, v, u, (who.background[band][c] + grain).clamp(0.0, 255.0));
            }
        }
    }
    let kps = pose.keypoints();
    let palm_width = 0.13 * size as f64 * who.scale;
    let finger_width = 0.075 * size as f64 * who.scale;
    // Palm fan first, fingers on top.
    let mut strokes: Vec<((f64, f64), (f64, f64), f64, f32)> = [1usize, 5, 9, 13, 17]
        .iter()
        .map(|&j| ((kps[0].p, kps[0].q), (kps[j].p, kps[j].q), palm_width, 0.92))
        .collect();
    for bone in HAND_EDGES.iter().filter(|e| e.a != 0) {
        let shade = 1.0 - 0.03 * (bone.b % 4) as f32;
        strokes.push((
            (kps[bone.a].p, kps[bone.a].q),
            (kps[bone.b].p, kps[bone.b].q),
            finger_width,
            shade,
        ));
    }
    for (a, b, width, shade) in strokes {
        let half_sq = (width / 2.0) * (width / 2.0);
        for v in 0..size {
            for u in 0..size {
                if point_segment_distance_sq(u as f64, v as f64, a, b) <= half_sq {
                    for c in 0..3 {
                        img.set(c, v, u, (who.skin[c] * shade).clamp(0.0, 255.0));
                    }
                }
            }
        }
    }
    img
}

/// Writes `images/*.png`, `manifest.txt`, and `annotations.txt` under `out`.
pub fn generate(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticCorpus> {
    if spec.subjects == 0 || spec.gestures == 0 || spec.images_per_gesture == 0 || spec.image_size < 8 {
        return Err(Error::InvalidConfig(format!("degenerate synthetic corpus spec {spec:?}")));
    }
    let images_dir = out.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut manifest = String::new();
    let mut annotated = Vec::new();
    for s in 0..spec.subjects {
        let who = subject(spec.seed, s);
        for g in 0..spec.gestures {
            for k in 0..spec.images_per_gesture {
                let tag = ((s * spec.gestures + g) * spec.images_per_gesture + k) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(tag));
                let pose = hand_pose(&who, g, spec.image_size, &mut rng)?;
                let img = render(&who, &pose, spec.image_size, &mut rng);
                let id = format!("images/s{s:02}_g{g:02}_{k:02}.png");
                img.save_png(&out.join(&id))?;
                manifest.push_str(&format!("{id} subject{s:02} gesture{g:02}\n"));
                annotated.push((id, pose));
            }
        }
    }
    let manifest_path = out.join("manifest.txt");
    let annotations_path = out.join("annotations.txt");
    write_atomic(&manifest_path, manifest.as_bytes())?;
    let text = write_annotations(annotated.iter().map(|(id, p)| (id.as_str(), p)));
    write_atomic(&annotations_path, text.as_bytes())?;
    Ok(SyntheticCorpus {
        manifest: manifest_path,
        annotations: annotations_path,
    })
}
