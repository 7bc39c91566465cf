//! File formats: JSON documents, flat little-endian checkpoints, PPM images.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::scenes::ImageShape;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| LabError::io(path, e))?))
}

/// Write via a temporary sibling and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| LabError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| LabError::io(&tmp, e))?;
    f.sync_all().map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| LabError::json(path.display().to_string(), e))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::json(path.display().to_string(), e))
}

/// Sidecar describing a flat `.bin` parameter dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySidecar {
    pub kind: String,
    pub version: u32,
    pub len: usize,
    pub shape: serde_json::Value,
}

pub fn f64_to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(LabError::Validation(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Write `<stem>.bin` and `<stem>.json`.
pub fn write_array(dir: &Path, stem: &str, kind: &str, shape: serde_json::Value, values: &[f64]) -> Result<()> {
    write_atomic(&dir.join(format!("{stem}.bin")), &f64_to_le_bytes(values))?;
    let side = ArraySidecar {
        kind: kind.to_string(),
        version: CHECKPOINT_VERSION,
        len: values.len(),
        shape,
    };
    write_json(&dir.join(format!("{stem}.json")), &side)
}

pub fn read_array(dir: &Path, stem: &str) -> Result<(ArraySidecar, Vec<f64>)> {
    let side: ArraySidecar = read_json(&dir.join(format!("{stem}.json")))?;
    if side.version != CHECKPOINT_VERSION {
        return Err(LabError::Validation(format!("unsupported checkpoint version {}", side.version)));
    }
    let path = dir.join(format!("{stem}.bin"));
    let values = f64_from_le_bytes(&fs::read(&path).map_err(|e| LabError::io(&path, e))?)?;
    if values.len() != side.len {
        return Err(LabError::Validation(format!(
            "{} holds {} values but its sidecar says {}",
            path.display(),
            values.len(),
            side.len
        )));
    }
    Ok((side, values))
}

/// Encode an HWC image with values in `[0, 1]` as binary PPM. Single-channel
/// images are replicated to gray; extra channels beyond three are dropped.
pub fn encode_ppm(shape: ImageShape, pixels: &[f64]) -> Result<Vec<u8>> {
    crate::error::check_len("image", pixels.len(), shape.len())?;
    let mut out = format!("P6\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for px in pixels.chunks_exact(shape.channels) {
        for k in 0..3 {
            out.push(q(px[k.min(shape.channels - 1)]));
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, shape: ImageShape, pixels: &[f64]) -> Result<()> {
    write_atomic(path, &encode_ppm(shape, pixels)?)
}

/// Decode a binary PPM written by [`encode_ppm`] into `[0, 1]` RGB values.
pub fn decode_ppm(bytes: &[u8]) -> Result<(ImageShape, Vec<f64>)> {
    let bad = |m: &str| LabError::Validation(format!("malformed PPM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("expected P6 with maxval 255"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let shape = ImageShape { height, width, channels: 3 };
    let data = bytes.get(pos..pos + shape.len()).ok_or_else(|| bad("pixel data too short"))?;
    Ok((shape, data.iter().map(|b| *b as f64 / 255.0).collect()))
}

/// Tile equally sized images into a grid with `cols` columns.
pub fn contact_sheet(shape: ImageShape, images: &[Vec<f64>], cols: usize) -> Result<(ImageShape, Vec<f64>)> {
    if images.is_empty() || cols == 0 {
        return Err(LabError::Validation("contact sheet needs images and columns".into()));
    }
    let rows = images.len().div_ceil(cols);
    let sheet = ImageShape {
        height: rows * shape.height,
        width: cols * shape.width,
        channels: shape.channels,
    };
    let mut out = vec![1.0; sheet.len()];
    let c = shape.channels;
    for (n, img) in images.iter().enumerate() {
        crate::error::check_len("contact sheet tile", img.len(), shape.len())?;
        let (r0, c0) = ((n / cols) * shape.height, (n % cols) * shape.width);
        for i in 0..shape.height {
            let src = i * shape.width * c;
            let dst = ((r0 + i) * sheet.width + c0) * c;
            out[dst..dst + shape.width * c].copy_from_slice(&img[src..src + shape.width * c]);
        }
    }
    Ok((sheet, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let vals = vec![0.1, -3.5e-300, f64::MAX, 1.0 / 3.0];
        write_array(dir.path(), "x", "image", serde_json::json!({"n": 4}), &vals).unwrap();
        let (side, back) = read_array(dir.path(), "x").unwrap();
        assert_eq!(side.kind, "image");
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn truncated_array_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_array(dir.path(), "x", "image", serde_json::Value::Null, &[1.0, 2.0]).unwrap();
        std::fs::write(dir.path().join("x.bin"), [0u8; 8]).unwrap();
        assert!(read_array(dir.path(), "x").is_err());
    }

    #[test]
    fn ppm_roundtrip() {
        let shape = ImageShape { height: 2, width: 3, channels: 3 };
        let px: Vec<f64> = (0..18).map(|i| i as f64 / 17.0).collect();
        let (s, back) = decode_ppm(&encode_ppm(shape, &px).unwrap()).unwrap();
        assert_eq!(s, shape);
        for (a, b) in px.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn sheet_places_tiles() {
        let shape = ImageShape { height: 1, width: 1, channels: 1 };
        let (s, px) = contact_sheet(shape, &[vec![0.0], vec![0.2], vec![0.4]], 2).unwrap();
        assert_eq!((s.height, s.width), (2, 2));
        assert_eq!(px, vec![0.0, 0.2, 0.4, 1.0]);
    }
}
