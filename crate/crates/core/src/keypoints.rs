//! The keypoint JSON interchange format shared by dataset generation,
//! fitting, and the command-line tools.
//!
//! ```json
//! {"keypoints": [[x, y], ...], "visibility": [0|1, ...], "resolution": [w, h]}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::Keypoint;

#[derive(Debug, Error)]
pub enum KeypointError {
    #[error("keypoint/visibility length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid resolution {0}x{1}")]
    BadResolution(usize, usize),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct KeypointSet {
    pub keypoints: Vec<[f64; 2]>,
    pub visibility: Vec<u8>,
    pub resolution: [usize; 2],
}

impl KeypointSet {
    pub fn new(kps: &[Keypoint], width: usize, height: usize) -> Self {
        Self {
            keypoints: kps.iter().map(|k| [k.x, k.y]).collect(),
            visibility: kps.iter().map(|k| u8::from(k.visible)).collect(),
            resolution: [width, height],
        }
    }

    pub fn validate(&self) -> Result<(), KeypointError> {
        if self.keypoints.len() != self.visibility.len() {
            return Err(KeypointError::LengthMismatch(
                self.keypoints.len(),
                self.visibility.len(),
            ));
        }
        if self.resolution[0] < 1 || self.resolution[1] < 1 {
            return Err(KeypointError::BadResolution(
                self.resolution[0],
                self.resolution[1],
            ));
        }
        Ok(())
    }

    pub fn to_keypoints(&self) -> Vec<Keypoint> {
        self.keypoints
            .iter()
            .zip(self.visibility.iter())
            .map(|(&[x, y], &v)| Keypoint {
                x,
                y,
                visible: v != 0,
            })
            .collect()
    }

    pub fn num_visible(&self) -> usize {
        self.visibility.iter().filter(|&&v| v != 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape_matches_schema() {
        let ks = KeypointSet {
            keypoints: vec![[1.0, 2.0], [3.5, 4.5]],
            visibility: vec![1, 0],
            resolution: [64, 64],
        };
        let j = serde_json::to_value(&ks).unwrap();
        assert!(j["keypoints"].is_array());
        assert_eq!(j["visibility"][1], 0);
        assert_eq!(j["resolution"][0], 64);
        let back: KeypointSet = serde_json::from_value(j).unwrap();
        assert_eq!(back, ks);
    }

    #[test]
    fn validation_errors() {
        let ks = KeypointSet {
            keypoints: vec![[1.0, 2.0]],
            visibility: vec![1, 0],
            resolution: [64, 64],
        };
        assert!(ks.validate().is_err());
    }
}
