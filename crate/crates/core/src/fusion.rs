//! Temporal scan fusion: non-overlapping triples of consecutive frames become
//! 3-channel samples. When the frame count is not a multiple of 3, at most two
//! frames are discarded: the first for a remainder of 1, the first and last
//! for a remainder of 2.

use crate::dataset::{ScanFrame, ScanSequence};
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};

/// Grouping geometry. This pipeline always feeds 3-channel encoders, so both
/// fields are fixed at 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionConfig {
    pub group_size: usize,
    pub stride: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            group_size: 3,
            stride: 3,
        }
    }
}

/// One fused triple: three consecutive scans stacked as channels, supervised
/// by the middle frame's mask.
#[derive(Debug, Clone)]
pub struct FusedSample {
    /// (3, N1, N2); channel order equals temporal order.
    pub channels: Array3<f64>,
    /// Middle frame's ground-truth mask.
    pub target: Array2<u8>,
    /// Frame indices of the three source scans, ascending.
    pub source_indices: [usize; 3],
}

/// The supervision mask for a fused triple: the middle frame's.
pub fn select_target<'a>(group: [&'a ScanFrame; 3]) -> Result<&'a Array2<u8>> {
    let dims = group[0].dims();
    for frame in &group[1..] {
        if frame.dims() != dims {
            return Err(Error::DimensionMismatch {
                context: format!("fusion group at frame index {}", frame.index),
                expected: dims,
                got: frame.dims(),
            });
        }
    }
    Ok(&group[1].mask)
}

/// Fuses a sequence into floor(M/3) samples using the default 3/3 geometry.
pub fn fuse_sequence(sequence: &ScanSequence) -> Result<Vec<FusedSample>> {
    fuse_sequence_with(sequence, FusionConfig::default())
}

pub fn fuse_sequence_with(
    sequence: &ScanSequence,
    config: FusionConfig,
) -> Result<Vec<FusedSample>> {
    if config.group_size != 3 || config.stride != 3 {
        return Err(Error::InvalidConfig(format!(
            "only group_size=3, stride=3 fusion is supported, got {}/{}",
            config.group_size, config.stride
        )));
    }
    let m = sequence.len();
    if m < 3 {
        return Err(Error::SequenceTooShort { len: m });
    }
    let remainder = m % 3;
    // remainder 1 drops the first frame; remainder 2 drops the first and last.
    let start = if remainder == 0 { 0 } else { 1 };
    let groups = m / 3;
    let (h, w) = sequence.dims();

    let mut samples = Vec::with_capacity(groups);
    for g in 0..groups {
        let base = start + 3 * g;
        let trio = [
            &sequence.frames[base],
            &sequence.frames[base + 1],
            &sequence.frames[base + 2],
        ];
        let mut channels = Array3::zeros((3, h, w));
        for (c, frame) in trio.iter().enumerate() {
            channels
                .index_axis_mut(ndarray::Axis(0), c)
                .assign(&frame.image);
        }
        let target = select_target(trio)?.clone();
        samples.push(FusedSample {
            channels,
            target,
            source_indices: [trio[0].index, trio[1].index, trio[2].index],
        });
    }
    Ok(samples)
}
