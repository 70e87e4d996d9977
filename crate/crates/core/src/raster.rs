//! Rendering of hand poses into single-channel conditioning maps.
//!
//! Keypoint maps stamp a closed disk `dx² + dy² ≤ r²` around each rounded
//! keypoint. Skeleton maps draw every bone as a capsule: all pixel centers
//! within `width / 2` of the segment. Overlaps resolve by taking the maximum,
//! so values stay in `[0, 1]` and untouched pixels are exactly 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::pose::{HandPose, HAND_EDGES};

pub const DEFAULT_RADIUS: u32 = 4;
pub const DEFAULT_LINE_WIDTH: u32 = 4;

/// Which of the four conditioning encodings to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Binary keypoint disks.
    K,
    /// Keypoint disks filled with joint confidence.
    Khat,
    /// Binary skeleton lines.
    S,
    /// Skeleton lines filled with the confidence of the outer joint.
    Shat,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::K, Variant::Khat, Variant::S, Variant::Shat];

    pub fn name(self) -> &'static str {
        match self {
            Variant::K => "K",
            Variant::Khat => "Khat",
            Variant::S => "S",
            Variant::Shat => "Shat",
        }
    }

    pub fn confidence_weighted(self) -> bool {
        matches!(self, Variant::Khat | Variant::Shat)
    }

    pub fn is_skeleton(self) -> bool {
        matches!(self, Variant::S | Variant::Shat)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown conditioning variant `{s}`; expected one of {{K, Khat, S, Shat}}"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterParams {
    pub radius: u32,
    pub line_width: u32,
}

impl Default for RasterParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            line_width: DEFAULT_LINE_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningMap {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    variant: Variant,
    params: RasterParams,
}

impl ConditioningMap {
    fn blank(width: usize, height: usize, variant: Variant, params: RasterParams) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
            variant,
            params,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> RasterParams {
        self.params
    }

    /// Row-major pixel values.
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.pixels[v * self.width + u]
    }

    fn stamp(&mut self, u: usize, v: usize, value: f32) {
        let px = &mut self.pixels[v * self.width + u];
        if value > *px {
            *px = value;
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v != 0.0).count()
    }

    /// Horizontal mirror image.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for (src, dst) in self
            .pixels
            .chunks_exact(self.width)
            .zip(out.pixels.chunks_exact_mut(self.width))
        {
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
        out
    }

    /// Single-channel image with the same values.
    pub fn to_image(&self) -> crate::image_tensor::Image {
        crate::image_tensor::Image::new(1, self.height, self.width, self.pixels.clone())
            .expect("pixel buffer matches map size")
    }

    /// 8-bit export: `round(255 · value)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Squared Euclidean distance from `(x, y)` to the segment `a`–`b`.
pub fn point_segment_distance_sq(x: f64, y: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((x - a.0) * dx + (y - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (x - cx) * (x - cx) + (y - cy) * (y - cy)
}

/// Clips the real interval `[lo, hi]` to pixel indices `0..len`.
fn pixel_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let lo = lo.ceil().max(0.0);
    let hi = hi.floor().min(len as f64 - 1.0);
    (lo <= hi).then(|| (lo as usize, hi as usize))
}

pub fn rasterize_keypoints(pose: &HandPose, confidence_weighted: bool, radius: u32) -> ConditioningMap {
    let params = RasterParams {
        radius,
        ..RasterParams::default()
    };
    let variant = if confidence_weighted { Variant::Khat } else { Variant::K };
    let (w, h) = (pose.width() as usize, pose.height() as usize);
    let mut map = ConditioningMap::blank(w, h, variant, params);
    let r = f64::from(radius);
    let r_sq = r * r;
    for kp in pose.keypoints() {
        let value = if confidence_weighted { kp.c as f32 } else { 1.0 };
        let (cx, cy) = (kp.p.round(), kp.q.round());
        let (Some((u0, u1)), Some((v0, v1))) =
            (pixel_span(cx - r, cx + r, w), pixel_span(cy - r, cy + r, h))
        else {
            continue;
        };
        for v in v0..=v1 {
            let dy = v as f64 - cy;
            for u in u0..=u1 {
                let dx = u as f64 - cx;
                if dx * dx + dy * dy <= r_sq {
                    map.stamp(u, v, value);
                }
            }
        }
    }
    map
}

pub fn rasterize_skeleton(pose: &HandPose, confidence_weighted: bool, line_width: u32) -> ConditioningMap {
    let params = RasterParams {
        line_width,
        ..RasterParams::default()
    };
    let variant = if confidence_weighted { Variant::Shat } else { Variant::S };
    let (w, h) = (pose.width() as usize, pose.height() as usize);
    let mut map = ConditioningMap::blank(w, h, variant, params);
    let half = f64::from(line_width) / 2.0;
    let half_sq = half * half;
    let kps = pose.keypoints();
    for bone in HAND_EDGES {
        let (a, b) = (&kps[bone.a], &kps[bone.b]);
        let value = if confidence_weighted { b.c as f32 } else { 1.0 };
        let (pa, pb) = ((a.p, a.q), (b.p, b.q));
        let spans = (
            pixel_span(a.p.min(b.p) - half, a.p.max(b.p) + half, w),
            pixel_span(a.q.min(b.q) - half, a.q.max(b.q) + half, h),
        );
        let (Some((u0, u1)), Some((v0, v1))) = spans else {
            continue;
        };
        for v in v0..=v1 {
            for u in u0..=u1 {
                if point_segment_distance_sq(u as f64, v as f64, pa, pb) <= half_sq {
                    map.stamp(u, v, value);
                }
            }
        }
    }
    map
}

/// Renders the requested variant at the pose's own resolution.
pub fn rasterize(pose: &HandPose, variant: Variant, params: RasterParams) -> ConditioningMap {
    match variant {
        Variant::K | Variant::Khat => {
            rasterize_keypoints(pose, variant.confidence_weighted(), params.radius)
        }
        Variant::S | Variant::Shat => {
            rasterize_skeleton(pose, variant.confidence_weighted(), params.line_width)
        }
    }
}
