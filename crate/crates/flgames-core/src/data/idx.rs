//! IDX binary image/label archives (big-endian), with transparent gzip.

use std::io::Read;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw grayscale images plus byte labels, as stored in the archives.
#[derive(Debug, Clone)]
pub struct RawImageSet {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub count: usize,
    pub height: usize,
    pub width: usize,
}

impl RawImageSet {
    pub fn image(&self, idx: usize) -> &[u8] {
        let px = self.height * self.width;
        &self.images[idx * px..(idx + 1) * px]
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip decode failed: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn read_u32_be(bytes: &[u8], pos: usize) -> Result<u32> {
    bytes
        .get(pos..pos + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses a pair of IDX streams (images + labels) into a [`RawImageSet`].
///
/// Image files must carry magic `0x00000803` (3-D unsigned byte), label
/// files `0x00000801` (1-D unsigned byte); payload lengths are validated
/// exactly against the header dimensions.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<RawImageSet> {
    let image_bytes = maybe_gunzip(image_bytes)?;
    let label_bytes = maybe_gunzip(label_bytes)?;

    let magic = read_u32_be(&image_bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&image_bytes, 4)? as usize;
    let height = read_u32_be(&image_bytes, 8)? as usize;
    let width = read_u32_be(&image_bytes, 12)? as usize;
    let payload = &image_bytes[16..];
    if payload.len() != count * height * width {
        return Err(Error::Format(format!(
            "image payload is {} bytes, header declares {}x{}x{} = {}",
            payload.len(),
            count,
            height,
            width,
            count * height * width
        )));
    }

    let magic = read_u32_be(&label_bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let label_count = read_u32_be(&label_bytes, 4)? as usize;
    let label_payload = &label_bytes[8..];
    if label_payload.len() != label_count {
        return Err(Error::Format(format!(
            "label payload is {} bytes, header declares {}",
            label_payload.len(),
            label_count
        )));
    }
    if label_count != count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }

    Ok(RawImageSet {
        images: payload.to_vec(),
        labels: label_payload.to_vec(),
        count,
        height,
        width,
    })
}

#[cfg(test)]
pub(crate) fn encode_idx_images(count: usize, height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(height as u32).to_be_bytes());
    out.extend_from_slice(&(width as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
pub(crate) fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
