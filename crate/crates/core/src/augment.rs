//! Trajectory Mirror: reflections of a sample across the coordinate axes.
//!
//! Negating the x (or y) component of every position and velocity maps a
//! trajectory of either simulated system onto another valid trajectory of
//! the same system with the same interaction graph. Training on all four
//! reflections of each incoming sample gives the decoder four views of the
//! same relations for one adjacency update.

use serde::{Deserialize, Serialize};

use crate::physics::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorVariant {
    Identity,
    FlipX,
    FlipY,
    FlipBoth,
}

impl MirrorVariant {
    /// In the order used for batching; identity first.
    pub const ALL: [MirrorVariant; 4] = [
        MirrorVariant::Identity,
        MirrorVariant::FlipX,
        MirrorVariant::FlipY,
        MirrorVariant::FlipBoth,
    ];

    /// Whether the x and y axes are negated.
    pub fn flips(self) -> (bool, bool) {
        match self {
            MirrorVariant::Identity => (false, false),
            MirrorVariant::FlipX => (true, false),
            MirrorVariant::FlipY => (false, true),
            MirrorVariant::FlipBoth => (true, true),
        }
    }

    /// The variant equal to applying `self` then `other`.
    pub fn compose(self, other: MirrorVariant) -> MirrorVariant {
        let (ax, ay) = self.flips();
        let (bx, by) = other.flips();
        match (ax ^ bx, ay ^ by) {
            (false, false) => MirrorVariant::Identity,
            (true, false) => MirrorVariant::FlipX,
            (false, true) => MirrorVariant::FlipY,
            (true, true) => MirrorVariant::FlipBoth,
        }
    }

    /// Reflect a flat `[x, y, vx, vy]`-per-agent state in place.
    pub fn apply_in_place(self, state: &mut [f64]) {
        let (fx, fy) = self.flips();
        for agent in state.chunks_mut(4) {
            if fx {
                agent[0] = -agent[0];
                agent[2] = -agent[2];
            }
            if fy {
                agent[1] = -agent[1];
                agent[3] = -agent[3];
            }
        }
    }
}

/// Reflected copy of a sample. Truth graph and bookkeeping are shared.
pub fn mirror_sample(sample: &Sample, variant: MirrorVariant) -> Sample {
    let (fx, fy) = variant.flips();
    Sample {
        observation: sample.observation.flipped(fx, fy),
        target: sample.target.flipped(fx, fy),
        truth: sample.truth.clone(),
        segment_index: sample.segment_index,
        global_iteration: sample.global_iteration,
    }
}

/// The four reflections of `sample`, in [`MirrorVariant::ALL`] order.
pub fn expand_tm(sample: &Sample) -> [Sample; 4] {
    MirrorVariant::ALL.map(|v| mirror_sample(sample, v))
}
