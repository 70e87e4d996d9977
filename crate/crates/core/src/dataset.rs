//! Same-subject, different-gesture training pairs.
//!
//! A corpus is a manifest of `<image-path> <subject-id> <gesture-label>`
//! lines plus an annotation file keyed by the same image paths. Image paths
//! are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::{write_atomic, Image};
use crate::pose::{parse_annotations, HandPose};
use crate::raster::{rasterize, ConditioningMap, RasterParams, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub image: String,
    pub subject: String,
    pub gesture: String,
    pub pose: HandPose,
}

/// Two images of one subject showing different gestures.
#[derive(Debug, Clone, PartialEq)]
pub struct GesturePair {
    pub source: CorpusRecord,
    pub target: CorpusRecord,
}

impl GesturePair {
    pub fn new(source: CorpusRecord, target: CorpusRecord) -> Result<Self> {
        if source.subject != target.subject || source.gesture == target.gesture {
            return Err(Error::InvalidConfig(format!(
                "`{}` → `{}` is not a same-subject, different-gesture pair",
                source.image, target.image
            )));
        }
        Ok(Self { source, target })
    }

    /// `source->target`, used as the pair's identifier in reports.
    pub fn id(&self) -> String {
        format!("{}->{}", self.source.image, self.target.image)
    }
}

/// Every ordered `(a, b)` with equal subject and different gesture, sorted
/// by `(a.image, b.image)`.
pub fn enumerate_pairs(records: &[CorpusRecord]) -> Vec<GesturePair> {
    let mut sorted: Vec<&CorpusRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image.cmp(&b.image));
    let mut pairs = Vec::new();
    for a in &sorted {
        for b in &sorted {
            if a.subject == b.subject && a.gesture != b.gesture {
                pairs.push(GesturePair {
                    source: (*a).clone(),
                    target: (*b).clone(),
                });
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

/// Indices into the canonical pair enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub universe: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn select<'a>(&self, pairs: &'a [GesturePair], indices: &[usize]) -> Result<Vec<&'a GesturePair>> {
        if pairs.len() != self.universe {
            return Err(Error::InvalidConfig(format!(
                "split was made for {} pairs, corpus yields {}",
                self.universe,
                pairs.len()
            )));
        }
        indices
            .iter()
            .map(|&i| {
                pairs
                    .get(i)
                    .ok_or_else(|| Error::InvalidConfig(format!("split index {i} out of range")))
            })
            .collect()
    }
}

/// Seeded shuffle of the pair indices; the first `test_pairs` form the test
/// set and the next `train_pairs` the training set.
pub fn split_pairs(pairs: &[GesturePair], spec: &SplitSpec) -> Result<Split> {
    if spec.train_pairs + spec.test_pairs > pairs.len() {
        return Err(Error::InvalidConfig(format!(
            "requested {} train + {} test pairs but only {} exist",
            spec.train_pairs,
            spec.test_pairs,
            pairs.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = order[..spec.test_pairs].to_vec();
    let train = order[spec.test_pairs..spec.test_pairs + spec.train_pairs].to_vec();
    Ok(Split {
        seed: spec.seed,
        universe: pairs.len(),
        train,
        test,
    })
}

/// One network-ready pair: images in `[-1, 1]` at a square size and the
/// conditioning maps of both poses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x: Image,
    pub y: Image,
    pub cond_x: ConditioningMap,
    pub cond_y: ConditioningMap,
}

#[derive(Debug)]
pub struct Corpus {
    root: PathBuf,
    records: Vec<CorpusRecord>,
    cache: Mutex<HashMap<(String, usize), Image>>,
}

impl Corpus {
    pub fn new(root: impl Into<PathBuf>, records: Vec<CorpusRecord>) -> Self {
        Self {
            root: root.into(),
            records,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn load(manifest: &Path, annotations: &Path) -> Result<Self> {
        let manifest_text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let annotation_text = fs::read_to_string(annotations).map_err(|e| Error::io(annotations, e))?;
        let poses: BTreeMap<String, HandPose> = parse_annotations(&annotation_text)?.into_iter().collect();
        let mut records = Vec::new();
        for line in manifest_text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let index = records.len();
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [image, subject, gesture] = fields[..] else {
                return Err(Error::parse(
                    index,
                    format!("manifest line needs `<image> <subject> <gesture>`, got `{line}`"),
                ));
            };
            let pose = poses
                .get(image)
                .cloned()
                .ok_or_else(|| Error::MissingAnnotation(image.to_string()))?;
            records.push(CorpusRecord {
                image: image.to_string(),
                subject: subject.to_string(),
                gesture: gesture.to_string(),
                pose,
            });
        }
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(root, records))
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn pairs(&self) -> Vec<GesturePair> {
        enumerate_pairs(&self.records)
    }

    pub fn record(&self, image: &str) -> Option<&CorpusRecord> {
        self.records.iter().find(|r| r.image == image)
    }

    /// The image resized to `size`×`size`, in `[-1, 1]`.
    pub fn image(&self, id: &str, size: usize) -> Result<Image> {
        let key = (id.to_string(), size);
        if let Some(img) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(img.clone());
        }
        let img = Image::load_rgb(&self.root.join(id))?
            .resize_area(size, size)?
            .to_signed();
        self.cache.lock().expect("cache lock").insert(key, img.clone());
        Ok(img)
    }

    /// Loads both images of `pair`, rescales both poses to the network size,
    /// optionally mirrors everything, and rasterizes the conditioning maps.
    pub fn load_example(
        &self,
        pair: &GesturePair,
        flip: bool,
        image_size: usize,
        variant: Variant,
        params: RasterParams,
    ) -> Result<TrainingExample> {
        let side = u32::try_from(image_size)
            .map_err(|_| Error::InvalidConfig(format!("image size {image_size} too large")))?;
        let mut x = self.image(&pair.source.image, image_size)?;
        let mut y = self.image(&pair.target.image, image_size)?;
        let mut pose_x = pair.source.pose.scaled(side, side)?;
        let mut pose_y = pair.target.pose.scaled(side, side)?;
        if flip {
            x = x.mirrored();
            y = y.mirrored();
            pose_x = pose_x.flipped();
            pose_y = pose_y.flipped();
        }
        Ok(TrainingExample {
            x,
            y,
            cond_x: rasterize(&pose_x, variant, params),
            cond_y: rasterize(&pose_y, variant, params),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Keypoint, NUM_KEYPOINTS};

    fn record(image: &str, subject: &str, gesture: &str) -> CorpusRecord {
        CorpusRecord {
            image: image.into(),
            subject: subject.into(),
            gesture: gesture.into(),
            pose: HandPose::new([Keypoint::new(1.0, 1.0, 1.0); NUM_KEYPOINTS], 8, 8).unwrap(),
        }
    }

    #[test]
    fn pairs_one_image_per_gesture() {
        let recs = [record("a", "s", "A"), record("b", "s", "B")];
        let pairs = enumerate_pairs(&recs);
        let ids: Vec<String> = pairs.iter().map(GesturePair::id).collect();
        assert_eq!(ids, ["a->b", "b->a"]);
    }

    #[test]
    fn pairs_two_images_per_gesture() {
        let recs = [
            record("a1", "s", "A"),
            record("a2", "s", "A"),
            record("b1", "s", "B"),
            record("b2", "s", "B"),
        ];
        assert_eq!(enumerate_pairs(&recs).len(), 8);
    }

    #[test]
    fn no_pairs_across_subjects() {
        let recs = [record("a", "s1", "A"), record("b", "s2", "B")];
        assert!(enumerate_pairs(&recs).is_empty());
        assert!(enumerate_pairs(&[]).is_empty());
    }

    #[test]
    fn pair_invariant_is_checked() {
        assert!(GesturePair::new(record("a", "s", "A"), record("b", "s", "A")).is_err());
        assert!(GesturePair::new(record("a", "s", "A"), record("b", "t", "B")).is_err());
    }

    fn ten_pairs() -> Vec<GesturePair> {
        // 5 gestures of one subject, and a second subject with 2 gestures: 20 + 2.
        let recs: Vec<CorpusRecord> = (0..5)
            .map(|g| record(&format!("s0_g{g}"), "s0", &format!("g{g}")))
            .collect();
        enumerate_pairs(&recs)[..10].to_vec()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let pairs = ten_pairs();
        let spec = SplitSpec {
            seed: 4,
            train_pairs: 7,
            test_pairs: 3,
        };
        let split = split_pairs(&pairs, &spec).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (7, 3));
        assert!(split.train.iter().all(|i| !split.test.contains(i)));
        assert_eq!(split_pairs(&pairs, &spec).unwrap(), split);
        let other = split_pairs(&pairs, &SplitSpec { seed: 5, ..spec }).unwrap();
        assert_ne!(other, split);
        assert!(split_pairs(&pairs, &SplitSpec { train_pairs: 8, ..spec }).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let pairs = ten_pairs();
        let split = split_pairs(
            &pairs,
            &SplitSpec {
                seed: 1,
                train_pairs: 6,
                test_pairs: 2,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        split.save(&path).unwrap();
        assert_eq!(Split::load(&path).unwrap(), split);
    }
}
