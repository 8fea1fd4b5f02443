use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array4};

use super::sequence::{Dataset, SkeletonSequence};
use crate::error::{Error, Result};

/// Input modality derived from joint coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Joint,
    Motion,
    Bone,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Joint, Stream::Motion, Stream::Bone];
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" | "j" => Ok(Stream::Joint),
            "motion" | "m" => Ok(Stream::Motion),
            "bone" | "b" => Ok(Stream::Bone),
            _ => Err(Error::UnknownStream(s.to_string())),
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Joint => "joint",
            Stream::Motion => "motion",
            Stream::Bone => "bone",
        })
    }
}

/// Joint: identity. Motion: `x[t+1] - x[t]`, final frame zero.
/// Bone: child minus parent for every edge, root joint zero.
pub fn derive_stream(seq: &SkeletonSequence, stream: Stream) -> SkeletonSequence {
    let x = seq.coords();
    let out = match stream {
        Stream::Joint => return seq.clone(),
        Stream::Motion => {
            let t = x.dim().1;
            let mut out = Array4::<f32>::zeros(x.raw_dim());
            if t > 1 {
                let diff = &x.slice(s![.., 1.., .., ..]) - &x.slice(s![.., ..t - 1, .., ..]);
                out.slice_mut(s![.., ..t - 1, .., ..]).assign(&diff);
            }
            out
        }
        Stream::Bone => {
            let mut out = Array4::<f32>::zeros(x.raw_dim());
            for &(parent, child) in seq.topology().edges() {
                let bone = &x.slice(s![.., .., child, ..]) - &x.slice(s![.., .., parent, ..]);
                out.slice_mut(s![.., .., child, ..]).assign(&bone);
            }
            out
        }
    };
    seq.with_coords(out)
}

pub fn derive_dataset_stream(ds: &Dataset, stream: Stream) -> Dataset {
    Dataset {
        samples: ds.samples.iter().map(|s| derive_stream(s, stream)).collect(),
        class_count: ds.class_count,
        split: ds.split,
    }
}
