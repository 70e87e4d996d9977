//! 21-point hand pose annotations in the OpenPose hand layout.
//!
//! Index 0 is the wrist, followed by four joints per finger moving away from
//! the palm: thumb 1–4, index 5–8, middle 9–12, ring 13–16, little 17–20.
//!
//! The annotation file format is line oriented:
//!
//! ```text
//! #width=640 height=480
//! img_0001.png 312.5 240 0.93 ... (21 × "p q c")
//! ```
//!
//! A `#width=W height=H` header applies to every record after it. Blank lines
//! and other `#` lines are ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 21;

/// A detected joint: image-space coordinates plus detector confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Horizontal pixel coordinate.
    pub p: f64,
    /// Vertical pixel coordinate.
    pub q: f64,
    /// Confidence in `[0, 1]`.
    pub c: f64,
}

impl Keypoint {
    pub fn new(p: f64, q: f64, c: f64) -> Self {
        Self { p, q, c }
    }
}

/// A bone of the hand tree. `b` is always the joint farther from the wrist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkeletonEdge {
    pub a: usize,
    pub b: usize,
}

const fn edge(a: usize, b: usize) -> SkeletonEdge {
    SkeletonEdge { a, b }
}

pub const HAND_EDGES: [SkeletonEdge; 20] = [
    edge(0, 1),
    edge(1, 2),
    edge(2, 3),
    edge(3, 4),
    edge(0, 5),
    edge(5, 6),
    edge(6, 7),
    edge(7, 8),
    edge(0, 9),
    edge(9, 10),
    edge(10, 11),
    edge(11, 12),
    edge(0, 13),
    edge(13, 14),
    edge(14, 15),
    edge(15, 16),
    edge(0, 17),
    edge(17, 18),
    edge(18, 19),
    edge(19, 20),
];

/// A hand pose in image coordinates.
///
/// Mirroring is recorded as a parity flag over the stored coordinates, so
/// flipping twice restores the original values bit for bit; `(W-1) - p`
/// computed twice in floating point generally does not.
#[derive(Debug, Clone)]
pub struct HandPose {
    keypoints: [Keypoint; NUM_KEYPOINTS],
    width: u32,
    height: u32,
    mirrored: bool,
}

impl PartialEq for HandPose {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.keypoints() == other.keypoints()
    }
}

impl HandPose {
    /// Builds a pose, validating confidences and coordinates.
    pub fn new(keypoints: [Keypoint; NUM_KEYPOINTS], width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "pose dimensions must be positive, got {width}x{height}"
            )));
        }
        for (joint, kp) in keypoints.iter().enumerate() {
            if !(0.0..=1.0).contains(&kp.c) {
                return Err(Error::InvalidConfig(format!(
                    "joint {joint}: confidence {} outside [0, 1]",
                    kp.c
                )));
            }
            if !kp.p.is_finite() || !kp.q.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "joint {joint}: non-finite coordinate"
                )));
            }
        }
        Ok(Self {
            keypoints,
            width,
            height,
            mirrored: false,
        })
    }

    pub fn keypoints(&self) -> [Keypoint; NUM_KEYPOINTS] {
        if !self.mirrored {
            return self.keypoints;
        }
        let max_p = f64::from(self.width) - 1.0;
        self.keypoints.map(|kp| Keypoint { p: max_p - kp.p, ..kp })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Left-right mirror about the pixel-center axis: `p' = (W - 1) - p`.
    pub fn flipped(&self) -> Self {
        Self {
            mirrored: !self.mirrored,
            ..self.clone()
        }
    }

    /// Rescales coordinates to a new image size; confidences are untouched.
    pub fn scaled(&self, new_width: u32, new_height: u32) -> Result<Self> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::InvalidConfig(format!(
                "target dimensions must be positive, got {new_width}x{new_height}"
            )));
        }
        if new_width == self.width && new_height == self.height {
            return Ok(self.clone());
        }
        let sx = f64::from(new_width) / f64::from(self.width);
        let sy = f64::from(new_height) / f64::from(self.height);
        let mut keypoints = self.keypoints();
        for kp in &mut keypoints {
            kp.p *= sx;
            kp.q *= sy;
        }
        Ok(Self {
            keypoints,
            width: new_width,
            height: new_height,
            mirrored: false,
        })
    }
}

pub fn flip_pose(pose: &HandPose) -> HandPose {
    pose.flipped()
}

pub fn scale_pose(pose: &HandPose, new_width: u32, new_height: u32) -> Result<HandPose> {
    pose.scaled(new_width, new_height)
}

fn parse_header(line: &str, record: usize) -> Result<Option<(u32, u32)>> {
    let Some(rest) = line.strip_prefix("#width=") else {
        return Ok(None);
    };
    let mut parts = rest.split_whitespace();
    let width = parts.next().and_then(|w| w.parse::<u32>().ok());
    let height = parts
        .next()
        .and_then(|h| h.strip_prefix("height="))
        .and_then(|h| h.parse::<u32>().ok());
    match (width, height, parts.next()) {
        (Some(w), Some(h), None) if w > 0 && h > 0 => Ok(Some((w, h))),
        _ => Err(Error::parse(
            record,
            format!("malformed dimension header `{line}`"),
        )),
    }
}

/// Parses an annotation file into `(image identifier, pose)` records in file
/// order. Errors carry the zero-based record index.
pub fn parse_annotations(source: &str) -> Result<Vec<(String, HandPose)>> {
    let mut dims: Option<(u32, u32)> = None;
    let mut out = Vec::new();
    for line in source.lines() {
        let line = line.trim();
        let record = out.len();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(d) = parse_header(line, record)? {
                dims = Some(d);
            }
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap_or_default().to_string();
        let values: Vec<&str> = fields.collect();
        if values.len() != 3 * NUM_KEYPOINTS {
            return Err(Error::parse(
                record,
                format!(
                    "expected {} keypoints ({} values), found {} values",
                    NUM_KEYPOINTS,
                    3 * NUM_KEYPOINTS,
                    values.len()
                ),
            ));
        }
        let (width, height) = dims.ok_or_else(|| {
            Error::parse(record, "record precedes any `#width=W height=H` header")
        })?;
        let mut keypoints = [Keypoint::new(0.0, 0.0, 0.0); NUM_KEYPOINTS];
        for (joint, triple) in values.chunks_exact(3).enumerate() {
            let mut v = [0.0; 3];
            for (slot, text) in v.iter_mut().zip(triple) {
                *slot = text.parse::<f64>().map_err(|_| {
                    Error::parse(record, format!("joint {joint}: invalid number `{text}`"))
                })?;
            }
            let [p, q, c] = v;
            if !p.is_finite() || !q.is_finite() {
                return Err(Error::parse(
                    record,
                    format!("joint {joint}: non-finite coordinate"),
                ));
            }
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::parse(
                    record,
                    format!("joint {joint}: confidence {c} outside [0, 1]"),
                ));
            }
            keypoints[joint] = Keypoint::new(p, q, c);
        }
        let pose = HandPose::new(keypoints, width, height).map_err(|e| Error::parse(record, e.to_string()))?;
        out.push((id, pose));
    }
    Ok(out)
}

/// Serializes records in the format read by [`parse_annotations`]. Values use
/// the shortest representation that parses back to the same `f64`.
pub fn write_annotations<'a>(records: impl IntoIterator<Item = (&'a str, &'a HandPose)>) -> String {
    let mut out = String::new();
    let mut dims = None;
    for (id, pose) in records {
        if dims != Some((pose.width, pose.height)) {
            dims = Some((pose.width, pose.height));
            let _ = writeln!(out, "#width={} height={}", pose.width, pose.height);
        }
        out.push_str(id);
        for kp in pose.keypoints() {
            let _ = write!(out, " {} {} {}", kp.p, kp.q, kp.c);
        }
        out.push('\n');
    }
    out
}
