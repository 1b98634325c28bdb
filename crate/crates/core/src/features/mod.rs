//! Keypoints and 128-d descriptors extracted from BEV images.

mod external;
mod sift;

pub use external::{load_external_features, write_external_features, ExternalRecord};
pub use sift::{extract_sift, SiftParams};

pub const DESCRIPTOR_DIM: usize = 128;

pub type Descriptor = [f32; DESCRIPTOR_DIM];

/// Subpixel keypoint in raster coordinates (`u` along columns / +x,
/// `v` along rows / +y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    /// Scale in pixels.
    pub scale: f64,
    /// Radians, measured from +u towards +v.
    pub orientation: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    BuiltinSift,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    pub source: FeatureSource,
    /// World cell index of raster pixel (0, 0).
    pub origin: [i64; 2],
    pub resolution: f64,
}

impl FeatureSet {
    pub fn empty(source: FeatureSource, origin: [i64; 2], resolution: f64) -> Self {
        Self {
            keypoints: Vec::new(),
            descriptors: Vec::new(),
            source,
            origin,
            resolution,
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn world_position(&self, i: usize) -> [f64; 2] {
        let k = &self.keypoints[i];
        [
            (self.origin[0] as f64 + k.u + 0.5) * self.resolution,
            (self.origin[1] as f64 + k.v + 0.5) * self.resolution,
        ]
    }

    pub fn push(&mut self, keypoint: Keypoint, descriptor: Descriptor) {
        self.keypoints.push(keypoint);
        self.descriptors.push(descriptor);
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            keypoints: indices.iter().map(|&i| self.keypoints[i]).collect(),
            descriptors: indices.iter().map(|&i| self.descriptors[i]).collect(),
            source: self.source,
            origin: self.origin,
            resolution: self.resolution,
        }
    }
}

/// The `k` best-scoring keypoints, ties broken by `u` then `v` ascending.
pub fn select_top_k(fs: &FeatureSet, k: usize) -> FeatureSet {
    let mut order: Vec<usize> = (0..fs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (&fs.keypoints[a], &fs.keypoints[b]);
        kb.score
            .total_cmp(&ka.score)
            .then(ka.u.total_cmp(&kb.u))
            .then(ka.v.total_cmp(&kb.v))
    });
    order.truncate(k);
    fs.select(&order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_with_scores(scores: &[f64]) -> FeatureSet {
        let mut fs = FeatureSet::empty(FeatureSource::External, [0, 0], 0.33);
        for (i, &s) in scores.iter().enumerate() {
            let mut d = [0.0; DESCRIPTOR_DIM];
            d[0] = i as f32;
            fs.push(
                Keypoint {
                    u: i as f64,
                    v: 0.0,
                    scale: 1.0,
                    orientation: 0.0,
                    score: s,
                },
                d,
            );
        }
        fs
    }

    #[test]
    fn top_k_basic() {
        let fs = set_with_scores(&[3.0, 1.0, 2.0]);
        let top = select_top_k(&fs, 2);
        let scores: Vec<f64> = top.keypoints.iter().map(|k| k.score).collect();
        assert_eq!(scores, vec![3.0, 2.0]);
        assert_eq!(top.descriptors[1][0], 2.0);
    }

    #[test]
    fn top_k_edges() {
        let fs = set_with_scores(&[3.0, 1.0, 2.0]);
        assert!(select_top_k(&fs, 0).is_empty());
        let all = select_top_k(&fs, 10);
        assert_eq!(all.len(), 3);
        let mut a = all.keypoints.clone();
        let mut b = fs.keypoints.clone();
        a.sort_by(|x, y| x.u.total_cmp(&y.u));
        b.sort_by(|x, y| x.u.total_cmp(&y.u));
        assert_eq!(a, b);
    }

    #[test]
    fn top_k_tie_break() {
        let fs = set_with_scores(&[1.0, 1.0, 1.0]);
        let top = select_top_k(&fs, 2);
        assert_eq!(top.keypoints[0].u, 0.0);
        assert_eq!(top.keypoints[1].u, 1.0);
    }

    proptest! {
        #[test]
        fn top_k_non_increasing(scores in prop::collection::vec(0.0..10.0f64, 0..50), k in 0usize..60) {
            let top = select_top_k(&set_with_scores(&scores), k);
            prop_assert_eq!(top.len(), k.min(scores.len()));
            for w in top.keypoints.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
        }
    }
}
