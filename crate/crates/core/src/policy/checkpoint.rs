//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "DEAS"                      4-byte magic
//! u32 version                 currently 1
//! u32 height, width, filters, kernel, stride, actions
//! u8  has_adam                0 or 1
//! f64 conv_w[filters*k*k]     filter, kernel row, kernel col
//! f64 conv_b[filters]
//! f64 fc_w[flat*actions]      flat index (filter, out row, out col), then action
//! f64 fc_b[actions]
//! if has_adam:
//!   u64 step_count
//!   first moment, then second moment, each in the weight order above
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AdamState, ParamBlocks, PolicyLayout, PolicyParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DEAS";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_blocks<W: Write>(out: &mut W, b: &ParamBlocks) -> Result<()> {
    for v in b.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(params: &PolicyParams, adam: Option<&AdamState>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let l = &params.layout;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [l.height, l.width, l.filters, l.kernel, l.stride, l.actions] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&[u8::from(adam.is_some())])?;
    write_blocks(&mut out, &params.weights)?;
    if let Some(st) = adam {
        out.write_all(&st.step_count.to_le_bytes())?;
        write_blocks(&mut out, &st.first_moment)?;
        write_blocks(&mut out, &st.second_moment)?;
    }
    out.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("checkpoint is truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn blocks(&mut self, layout: &PolicyLayout) -> Result<ParamBlocks> {
        let mut b = ParamBlocks::zeros(layout);
        for block in b.blocks_mut() {
            for v in block.iter_mut() {
                *v = f64::from_le_bytes(self.bytes()?);
            }
        }
        Ok(b)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, Option<AdamState>)> {
    let mut r = Reader { inner: BufReader::new(File::open(path)?) };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a policy checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let [height, width, filters, kernel, stride, actions] = dims;
    let layout = PolicyLayout { height, width, filters, kernel, stride, actions };
    layout.validate().map_err(|_| Error::Format(format!("corrupt layout descriptor {layout}")))?;
    let has_adam = match r.bytes::<1>()?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
    };
    let weights = r.blocks(&layout)?;
    let adam = if has_adam {
        let step_count = u64::from_le_bytes(r.bytes()?);
        let first_moment = r.blocks(&layout)?;
        let second_moment = r.blocks(&layout)?;
        Some(AdamState { first_moment, second_moment, step_count })
    } else {
        None
    };
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", rest.len())));
    }
    Ok((PolicyParams { layout, weights }, adam))
}

/// Loads a checkpoint and checks it was written for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &PolicyLayout) -> Result<(PolicyParams, Option<AdamState>)> {
    let (params, adam) = load_checkpoint(path)?;
    if params.layout != *expected {
        return Err(Error::LayoutMismatch { expected: expected.to_string(), found: params.layout.to_string() });
    }
    Ok((params, adam))
}
