use std::fs;
use std::path::Path;

use super::{EncoderWeights, View};
use crate::autodiff::Tensor;
use crate::error::{format_err, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DMWT";
const VERSION: u32 = 1;
const KIND: &str = "weights";

/// Layout: magic, u32 version, u8 view tag, u32 tensor count, then per
/// tensor u32 rows, u32 cols and little-endian `f32` values.
pub fn save_weights(weights: &EncoderWeights, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(13 + 4 * weights.n_params() + 8 * weights.tensors().len());
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(weights.view().tag());
    buf.extend_from_slice(&(weights.tensors().len() as u32).to_le_bytes());
    for t in weights.tensors() {
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| format_err(KIND, format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, requiring `expected` view when given. Tensor shapes
/// must match the view's architecture exactly.
pub fn load_weights(path: impl AsRef<Path>, expected: Option<View>) -> Result<EncoderWeights> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(format_err(KIND, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(KIND, format!("unsupported version {version}")));
    }
    let tag = r.take(1)?[0];
    let view = View::from_tag(tag).ok_or_else(|| format_err(KIND, format!("unknown view tag {tag}")))?;
    if let Some(want) = expected {
        if want != view {
            return Err(format_err(
                KIND,
                format!("checkpoint holds the {} encoder, expected {}", view.name(), want.name()),
            ));
        }
    }
    let count = r.u32()? as usize;
    let layout = view.layout();
    if count != layout.len() {
        return Err(format_err(
            KIND,
            format!("{count} tensors, the {} encoder has {}", view.name(), layout.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(count);
    for &(name, rows, cols) in layout {
        let (fr, fc) = (r.u32()? as usize, r.u32()? as usize);
        if (fr, fc) != (rows, cols) {
            return Err(format_err(
                KIND,
                format!("{name} is {fr}x{fc}, expected {rows}x{cols}"),
            ));
        }
        let data = r
            .take(4 * rows * cols)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(Tensor::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(format_err(KIND, "trailing bytes"));
    }
    EncoderWeights::from_tensors(view, tensors)
}
