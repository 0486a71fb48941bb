//! Canonical-space feature bank: the visibility-frequency-weighted running
//! mean over per-frame vertex features, plus coverage accounting and
//! snapshot serialization.

use crate::error::{Error, Result};
use crate::features::VertexFeatureSet;
use crate::raster::VisibilityMap;
use crate::tensor::{Tensor, TensorArchive};

/// The temporal context bank: per-vertex features S_can plus per-vertex
/// observation counts V_can.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalState {
    /// Row-major M x L.
    pub bank: Vec<f32>,
    pub vis_count: Vec<u32>,
    pub channels: usize,
    pub frames_fused: u64,
}

/// Creates an all-zero canonical state for M vertices and L channels.
pub fn init_canonical(m: usize, l: usize) -> Result<CanonicalState> {
    if m < 1 || l < 1 {
        return Err(Error::config(format!("canonical state needs M >= 1, L >= 1, got ({m}, {l})")));
    }
    Ok(CanonicalState {
        bank: vec![0.0; m * l],
        vis_count: vec![0; m],
        channels: l,
        frames_fused: 0,
    })
}

impl CanonicalState {
    pub fn vertex_count(&self) -> usize {
        self.vis_count.len()
    }

    /// Fraction of vertices observed at least once.
    pub fn coverage(&self) -> f64 {
        if self.vis_count.is_empty() {
            return 0.0;
        }
        self.vis_count.iter().filter(|&&c| c > 0).count() as f64 / self.vis_count.len() as f64
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        let m = self.vertex_count();
        a.insert("bank", Tensor::from_f32(vec![m, self.channels], self.bank.clone()).unwrap());
        a.insert("vis_count", Tensor::from_u32(vec![m], self.vis_count.clone()).unwrap());
        a.insert(
            "frames_fused",
            Tensor::from_u32(vec![1], vec![self.frames_fused as u32]).unwrap(),
        );
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<CanonicalState> {
        let bank_t = a.get("bank")?;
        let counts_t = a.get("vis_count")?;
        let frames_t = a.get("frames_fused")?;
        let shape = bank_t.shape();
        if shape.len() != 2 {
            return Err(Error::data("canonical bank tensor must be rank 2"));
        }
        let (m, l) = (shape[0], shape[1]);
        let counts = counts_t.as_u32()?.to_vec();
        if counts.len() != m {
            return Err(Error::data("vis_count length does not match bank rows"));
        }
        Ok(CanonicalState {
            bank: bank_t.as_f32()?.to_vec(),
            vis_count: counts,
            channels: l,
            frames_fused: frames_t.as_u32()?.first().copied().unwrap_or(0) as u64,
        })
    }
}

fn check_dims(state: &CanonicalState, s_t: &VertexFeatureSet, v_t: &VisibilityMap) -> Result<()> {
    let m = state.vertex_count();
    if s_t.channels != state.channels || s_t.rows.len() != m * state.channels {
        return Err(Error::config(format!(
            "feature set is {} values x {} channels, state wants {m} x {}",
            s_t.rows.len(),
            s_t.channels,
            state.channels
        )));
    }
    if v_t.values.len() != m {
        return Err(Error::config(format!(
            "visibility has {} entries for {m} vertices",
            v_t.values.len()
        )));
    }
    if let Some(bad) = v_t.values.iter().find(|&&v| v > 1) {
        return Err(Error::data(format!("per-frame visibility must be binary, found {bad}")));
    }
    Ok(())
}

/// Folds one frame into the canonical state:
/// `bank'[v] = (s_t[v]*v_t[v] + bank[v]*count[v]) / max(v_t[v]+count[v], 1)`,
/// then `count'[v] = count[v] + v_t[v]`. The running form (not a sum/count
/// pair) so unbounded streams cannot overflow an accumulator.
pub fn fuse_frame(
    state: &mut CanonicalState,
    s_t: &VertexFeatureSet,
    v_t: &VisibilityMap,
) -> Result<()> {
    check_dims(state, s_t, v_t)?;
    let l = state.channels;
    for v in 0..state.vertex_count() {
        let vt = v_t.values[v];
        let count = state.vis_count[v];
        let denom = (vt + count).max(1) as f32;
        let (vt_f, count_f) = (vt as f32, count as f32);
        for c in 0..l {
            let i = v * l + c;
            state.bank[i] = (s_t.rows[i] * vt_f + state.bank[i] * count_f) / denom;
        }
        state.vis_count[v] = count + vt;
    }
    state.frames_fused += 1;
    Ok(())
}

/// Batch-form oracle for the running fold: `bank[v] = Σ s_i[v]·v_i[v] /
/// max(Σ v_i[v], 1)`. Used by tests to pin the streaming update; kept in the
/// public API so external tooling can cross-check long streams.
pub fn fuse_batch_oracle(
    m: usize,
    l: usize,
    observations: &[(&VertexFeatureSet, &VisibilityMap)],
) -> Result<CanonicalState> {
    let mut state = init_canonical(m, l)?;
    let mut sums = vec![0.0f64; m * l];
    for (s_t, v_t) in observations {
        check_dims(&state, s_t, v_t)?;
        for v in 0..m {
            if v_t.values[v] == 1 {
                state.vis_count[v] += 1;
                for c in 0..l {
                    sums[v * l + c] += s_t.rows[v * l + c] as f64;
                }
            }
        }
        state.frames_fused += 1;
    }
    for v in 0..m {
        let denom = state.vis_count[v].max(1) as f64;
        for c in 0..l {
            state.bank[v * l + c] = (sums[v * l + c] / denom) as f32;
        }
    }
    Ok(state)
}
