use std::fmt;

use serde::{Deserialize, Serialize};

/// A firmware image for a simulated node.
///
/// The bytes are opaque; `behavior` names the simulated program the node runs
/// once the image is installed.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeImage {
    pub image_id: String,
    pub version: u32,
    pub behavior: String,
    pub bytes: Vec<u8>,
}

impl NodeImage {
    pub fn new(
        image_id: impl Into<String>,
        version: u32,
        behavior: impl Into<String>,
        bytes: Vec<u8>,
    ) -> Self {
        NodeImage {
            image_id: image_id.into(),
            version,
            behavior: behavior.into(),
            bytes,
        }
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    pub fn checksum(&self) -> u32 {
        checksum(&self.bytes)
    }
}

impl fmt::Debug for NodeImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeImage")
            .field("image_id", &self.image_id)
            .field("version", &self.version)
            .field("behavior", &self.behavior)
            .field("size", &self.bytes.len())
            .finish()
    }
}

/// CRC-32 (IEEE) over image bytes.
pub fn checksum(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}
