//! SKD1 dataset container.
//!
//! Layout (little-endian): magic `SKELDS01`, `u32` sample count, `u32`
//! class count, `u32` C, T, V, M, then per sample an `i32` label (-1 for
//! unlabelled) followed by C*T*V*M `f32` values in (C, T, V, M) order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array4;

use super::sequence::{Dataset, SkeletonSequence, Split};
use super::topology::SkeletonTopology;
use crate::error::{Error, Result};
use crate::tensor::io::Cursor;

pub const DATASET_MAGIC: &[u8; 8] = b"SKELDS01";

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let dims = ds.samples.first().map(|s| s.dims()).unwrap_or((3, 0, 0, 0));
    let per = dims.0 * dims.1 * dims.2 * dims.3;
    let mut buf = Vec::with_capacity(32 + ds.len() * (4 + 4 * per));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.class_count as u32).to_le_bytes());
    for d in [dims.0, dims.1, dims.2, dims.3] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in &ds.samples {
        let label = s.label().map(|l| l as i32).unwrap_or(-1);
        buf.extend_from_slice(&label.to_le_bytes());
        let coords = s.coords().as_standard_layout();
        for &v in coords.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_dataset(ds)?)?;
    f.flush()?;
    Ok(())
}

/// Parses an SKD1 buffer. Without an explicit topology, a preset with the
/// header's joint count is used.
pub fn decode_dataset(bytes: &[u8], topology: Option<Arc<SkeletonTopology>>, split: Split) -> Result<Dataset> {
    let mut cur = Cursor::new(bytes);
    if cur.take(8, "magic")? != DATASET_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, expected SKELDS01".into() });
    }
    let count = cur.u32("sample count")? as usize;
    let class_count = cur.u32("class count")? as usize;
    let mut dims = [0usize; 4];
    for (d, name) in dims.iter_mut().zip(["C", "T", "V", "M"]) {
        *d = cur.u32(name)? as usize;
    }
    let [c, t, v, m] = dims;
    let topology = match topology {
        Some(topo) if topo.joint_count() != v => {
            return Err(Error::ShapeMismatch(format!(
                "header has V = {v}, topology `{}` has {}",
                topo.name(),
                topo.joint_count()
            )))
        }
        Some(topo) => topo,
        None => Arc::new(SkeletonTopology::preset_for_joints(v).ok_or_else(|| {
            Error::ShapeMismatch(format!("no topology preset with {v} joints"))
        })?),
    };
    let per = c * t * v * m;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let at = cur.offset();
        let label = cur.i32("label")?;
        let label = match label {
            -1 => None,
            l if l >= 0 && (l as usize) < class_count => Some(l as usize),
            l => {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("sample {i} label {l} outside [0, {class_count})"),
                })
            }
        };
        let raw = cur.take(per * 4, "sample payload")?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let coords = Array4::from_shape_vec((c, t, v, m), values).expect("payload length matches header");
        let seq = SkeletonSequence::new(coords, topology.clone(), label)
            .map_err(|e| Error::Format { offset: at, msg: e.to_string() })?;
        samples.push(seq);
    }
    if cur.remaining() != 0 {
        return Err(Error::Format { offset: cur.offset(), msg: format!("{} trailing bytes", cur.remaining()) });
    }
    Dataset::new(samples, class_count, split)
}

pub fn load_dataset(path: impl AsRef<Path>, topology: Option<Arc<SkeletonTopology>>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?, topology, Split::Train)
}
