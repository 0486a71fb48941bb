//! Renderer conditioning: the reposed-context image W_t, its compact
//! encoding G_context, the live-frame encoding G_live, and the desk-scale
//! latent codec standing in for a learned VAE (8x block average down,
//! nearest-neighbor up).
//!
//! Conditioning reaches the denoiser by channel concatenation
//! [Z_i | G_context | G_live] — the stand-in for spatial concatenation with
//! attention, and the largest architectural simplification in the crate.

use crate::error::{Error, Result};
use crate::fusion::CanonicalState;
use crate::projection::Camera;
use crate::raster::{interpolate_features, FeatureImage};
use crate::template::{pose_vertices, Pose, TemplateMesh};
use crate::tensor::Tensor;

/// Spatial downscale between image space and latent space.
pub const LATENT_SCALE: usize = 8;
/// Channels of a VAE-style latent.
pub const LATENT_CHANNELS: usize = 4;

/// A latent-space tensor: h x w x c at 1/8 the source resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major h x w x c.
    pub data: Vec<f32>,
    pub src_height: usize,
    pub src_width: usize,
}

impl Latent {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Latent {
        Latent {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            src_height: height * LATENT_SCALE,
            src_width: width * LATENT_SCALE,
        }
    }

    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.height, self.width, self.channels], self.data.clone()).unwrap()
    }

    pub fn from_tensor(t: &Tensor) -> Result<Latent> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::data(format!("latent tensor must be rank 3, got {s:?}")));
        }
        Ok(Latent {
            height: s[0],
            width: s[1],
            channels: s[2],
            data: t.as_f32()?.to_vec(),
            src_height: s[0] * LATENT_SCALE,
            src_width: s[1] * LATENT_SCALE,
        })
    }
}

/// The denoiser's two conditioning signals for one frame.
#[derive(Debug, Clone)]
pub struct ConditioningPair {
    pub context: Latent,
    pub live: Latent,
    pub frame_time: i64,
}

/// Fixed per-pixel linear channel map (the stand-in for learned projection
/// heads); identity by default, loadable from a CFTENSR tensor.
#[derive(Debug, Clone)]
pub struct ChannelMap {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Row-major out x in.
    pub weights: Vec<f32>,
}

impl ChannelMap {
    pub fn identity(channels: usize) -> ChannelMap {
        let mut weights = vec![0.0; channels * channels];
        for c in 0..channels {
            weights[c * channels + c] = 1.0;
        }
        ChannelMap { in_channels: channels, out_channels: channels, weights }
    }

    pub fn new(in_channels: usize, out_channels: usize, weights: Vec<f32>) -> Result<ChannelMap> {
        if weights.len() != in_channels * out_channels {
            return Err(Error::config(format!(
                "channel map needs {out_channels}x{in_channels} weights, got {}",
                weights.len()
            )));
        }
        Ok(ChannelMap { in_channels, out_channels, weights })
    }

    pub fn from_tensor(t: &Tensor) -> Result<ChannelMap> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::data("channel map tensor must be rank 2 (out x in)"));
        }
        ChannelMap::new(s[1], s[0], t.as_f32()?.to_vec())
    }

    fn apply_pixel(&self, input: &[f32], out: &mut [f32]) {
        for o in 0..self.out_channels {
            let row = &self.weights[o * self.in_channels..(o + 1) * self.in_channels];
            out[o] = row.iter().zip(input).map(|(w, x)| w * x).sum();
        }
    }
}

/// Renders the canonical bank into the novel view: Warp (repose the template
/// with the bank attached to vertices) then Interpolate. Output carries
/// L + 1 channels — the bank plus an "observed" indicator interpolated from
/// per-vertex `vis_count > 0` flags; uncovered pixels are zero-filled.
pub fn densify_context(
    state: &CanonicalState,
    pose: &Pose,
    mesh: &TemplateMesh,
    novel_cam: &Camera,
) -> Result<FeatureImage> {
    let m = mesh.vertex_count();
    if state.vertex_count() != m {
        return Err(Error::config(format!(
            "canonical state has {} vertices, mesh has {m}",
            state.vertex_count()
        )));
    }
    let l = state.channels;
    let mut rows = vec![0.0f32; m * (l + 1)];
    for v in 0..m {
        rows[v * (l + 1)..v * (l + 1) + l].copy_from_slice(&state.bank[v * l..(v + 1) * l]);
        rows[v * (l + 1) + l] = (state.vis_count[v] > 0) as u32 as f32;
    }
    let posed = pose_vertices(mesh, pose)?;
    interpolate_features(&posed, &mesh.faces, &rows, l + 1, novel_cam, 0.0)
}

fn check_divisible(w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 || w % LATENT_SCALE != 0 || h % LATENT_SCALE != 0 {
        return Err(Error::config(format!(
            "spatial dims ({w}, {h}) must be nonzero and divisible by {LATENT_SCALE}"
        )));
    }
    Ok(())
}

/// 8x average pool over all channels (no channel map).
fn block_average(img: &FeatureImage) -> Result<Latent> {
    check_divisible(img.width, img.height)?;
    let (h, w, c) = (img.height / LATENT_SCALE, img.width / LATENT_SCALE, img.channels);
    let mut out = Latent::zeros(h, w, c);
    out.src_height = img.height;
    out.src_width = img.width;
    let norm = 1.0 / (LATENT_SCALE * LATENT_SCALE) as f32;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..LATENT_SCALE {
                    for dx in 0..LATENT_SCALE {
                        acc += img.at(x * LATENT_SCALE + dx, y * LATENT_SCALE + dy, ch);
                    }
                }
                let i = out.idx(x, y, ch);
                out.data[i] = acc * norm;
            }
        }
    }
    Ok(out)
}

fn map_channels(z: &Latent, map: &ChannelMap) -> Result<Latent> {
    if map.in_channels != z.channels {
        return Err(Error::config(format!(
            "channel map expects {} input channels, latent has {}",
            map.in_channels, z.channels
        )));
    }
    let mut out = Latent::zeros(z.height, z.width, map.out_channels);
    out.src_height = z.src_height;
    out.src_width = z.src_width;
    let mut pixel_out = vec![0.0f32; map.out_channels];
    for y in 0..z.height {
        for x in 0..z.width {
            let start = z.idx(x, y, 0);
            map.apply_pixel(&z.data[start..start + z.channels], &mut pixel_out);
            let o = out.idx(x, y, 0);
            out.data[o..o + map.out_channels].copy_from_slice(&pixel_out);
        }
    }
    Ok(out)
}

/// Encodes the densified context image W_t into G_context: 8x average pool
/// then the fixed linear channel map.
pub fn encode_context(w_t: &FeatureImage, map: &ChannelMap) -> Result<Latent> {
    map_channels(&block_average(w_t)?, map)
}

/// VAE stand-in encoder: per-channel 8x block average of an RGB image plus a
/// fourth all-zero channel.
pub fn latent_encode(image: &FeatureImage) -> Result<Latent> {
    if image.channels != 3 {
        return Err(Error::config(format!(
            "latent_encode expects a 3-channel image, got {}",
            image.channels
        )));
    }
    let pooled = block_average(image)?;
    let mut out = Latent::zeros(pooled.height, pooled.width, LATENT_CHANNELS);
    out.src_height = pooled.src_height;
    out.src_width = pooled.src_width;
    for y in 0..pooled.height {
        for x in 0..pooled.width {
            for c in 0..3 {
                let i = out.idx(x, y, c);
                out.data[i] = pooled.data[pooled.idx(x, y, c)];
            }
        }
    }
    Ok(out)
}

/// VAE stand-in decoder: nearest-neighbor 8x upsample of the first 3
/// channels. Uncovered-ness does not survive the codec: the decoded image
/// has full coverage.
pub fn latent_decode(z: &Latent) -> Result<FeatureImage> {
    if z.channels < 3 {
        return Err(Error::config(format!(
            "latent_decode needs at least 3 channels, got {}",
            z.channels
        )));
    }
    let (w, h) = (z.width * LATENT_SCALE, z.height * LATENT_SCALE);
    let mut img = FeatureImage::filled(w, h, 3, 0.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let di = img.idx(x, y, c);
                img.data[di] = z.data[z.idx(x / LATENT_SCALE, y / LATENT_SCALE, c)];
            }
        }
    }
    img.coverage = vec![true; w * h];
    Ok(img)
}

/// Encodes the live frame I_t into G_live: VAE stand-in then channel map.
pub fn encode_live(image: &FeatureImage, map: &ChannelMap) -> Result<Latent> {
    map_channels(&latent_encode(image)?, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse_frame, init_canonical};
    use crate::math::{vec3, Mat3, Vec3};
    use crate::raster::VisibilityMap;

    fn rgb(w: usize, h: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> FeatureImage {
        let mut img = FeatureImage::filled(w, h, 3, 0.0);
        for y in 0..h {
            for x in 0..w {
                let v = f(x, y);
                for c in 0..3 {
                    let i = img.idx(x, y, c);
                    img.data[i] = v[c];
                }
                img.coverage[y * w + x] = true;
            }
        }
        img
    }

    #[test]
    fn latent_codec_constant_lossless() {
        let img = rgb(16, 16, |_, _| [0.3, 0.6, 0.9]);
        let z = latent_encode(&img).unwrap();
        assert_eq!((z.height, z.width, z.channels), (2, 2, 4));
        for y in 0..2 {
            for x in 0..2 {
                assert!((z.data[z.idx(x, y, 0)] - 0.3).abs() < 1e-6);
                assert_eq!(z.data[z.idx(x, y, 3)], 0.0);
            }
        }
        let back = latent_decode(&z).unwrap();
        for i in 0..back.data.len() {
            assert!((back.data[i] - img.data[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn block_aligned_checkerboard_exact() {
        let img = rgb(16, 16, |x, y| {
            if (x / 8 + y / 8) % 2 == 0 {
                [1.0, 0.0, 0.5]
            } else {
                [0.0, 1.0, 0.25]
            }
        });
        let z = latent_encode(&img).unwrap();
        assert_eq!(z.data[z.idx(0, 0, 0)], 1.0);
        assert_eq!(z.data[z.idx(1, 0, 0)], 0.0);
        assert_eq!(z.data[z.idx(1, 0, 1)], 1.0);
        assert_eq!(z.data[z.idx(1, 0, 2)], 0.25);
        assert_eq!(z.data[z.idx(1, 1, 2)], 0.5);
    }

    #[test]
    fn decode_then_encode_is_identity_on_rgb_channels() {
        let mut z = Latent::zeros(2, 3, 4);
        for (i, v) in z.data.iter_mut().enumerate() {
            *v = (i as f32) * 0.1 - 0.7;
        }
        let img = latent_decode(&z).unwrap();
        let z2 = latent_encode(&img).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                for c in 0..3 {
                    assert!((z2.data[z2.idx(x, y, c)] - z.data[z.idx(x, y, c)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn encode_context_pools_and_maps() {
        // one 8x8 block of value 2 on zero background pools to exactly 2
        let mut img = FeatureImage::filled(16, 16, 2, 0.0);
        for y in 0..8 {
            for x in 0..8 {
                let i = img.idx(x, y, 0);
                img.data[i] = 2.0;
                img.data[i + 1] = 4.0;
            }
        }
        let g = encode_context(&img, &ChannelMap::identity(2)).unwrap();
        assert_eq!(g.data[g.idx(0, 0, 0)], 2.0);
        assert_eq!(g.data[g.idx(0, 0, 1)], 4.0);
        assert_eq!(g.data[g.idx(1, 0, 0)], 0.0);
        // non-identity map: out = [ch0 + ch1]
        let map = ChannelMap::new(2, 1, vec![1.0, 1.0]).unwrap();
        let g2 = encode_context(&img, &map).unwrap();
        assert_eq!(g2.channels, 1);
        assert_eq!(g2.data[g2.idx(0, 0, 0)], 6.0);
    }

    #[test]
    fn encode_is_linear() {
        let a = rgb(16, 8, |x, y| [x as f32 * 0.01, y as f32 * 0.02, 0.3]);
        let b = rgb(16, 8, |x, y| [0.5, x as f32 * 0.03, y as f32 * 0.01]);
        let mut comb = rgb(16, 8, |_, _| [0.0; 3]);
        for i in 0..comb.data.len() {
            comb.data[i] = 1.5 * a.data[i] - 0.5 * b.data[i];
        }
        let map = ChannelMap::identity(4);
        let ga = encode_live(&a, &map).unwrap();
        let gb = encode_live(&b, &map).unwrap();
        let gc = encode_live(&comb, &map).unwrap();
        for i in 0..gc.data.len() {
            assert!((gc.data[i] - (1.5 * ga.data[i] - 0.5 * gb.data[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        let img = rgb(12, 16, |_, _| [0.0; 3]);
        assert!(matches!(latent_encode(&img), Err(Error::Config(_))));
    }

    fn tiny_rig() -> (TemplateMesh, Camera) {
        let mesh = TemplateMesh::new(
            vec![
                vec3(-1.0, -1.0, 2.0),
                vec3(1.0, -1.0, 2.0),
                vec3(0.0, 1.5, 2.0),
            ],
            vec![[0, 1, 2]],
            vec![0],
            vec![Vec3::ZERO],
            vec![1.0; 3],
        )
        .unwrap();
        let cam =
            Camera::new(40.0, 40.0, 15.5, 15.5, Mat3::IDENTITY, Vec3::ZERO, 32, 32).unwrap();
        (mesh, cam)
    }

    #[test]
    fn empty_state_gives_zero_observed_channel() {
        let (mesh, cam) = tiny_rig();
        let state = init_canonical(3, 2).unwrap();
        let w = densify_context(&state, &Pose::rest(1, 0), &mesh, &cam).unwrap();
        assert_eq!(w.channels, 3); // 2 bank + observed
        let mut covered = 0;
        for y in 0..32 {
            for x in 0..32 {
                if w.covered(x, y) {
                    covered += 1;
                    assert_eq!(w.at(x, y, 0), 0.0);
                    assert_eq!(w.at(x, y, 2), 0.0);
                }
            }
        }
        assert!(covered > 0);
    }

    #[test]
    fn observed_channel_follows_counts() {
        let (mesh, cam) = tiny_rig();
        let mut state = init_canonical(3, 1).unwrap();
        let feats = crate::features::VertexFeatureSet {
            rows: vec![0.8, 0.8, 0.8],
            channels: 1,
            frame_time: 0,
        };
        fuse_frame(&mut state, &feats, &VisibilityMap { values: vec![1, 1, 1] }).unwrap();
        let w = densify_context(&state, &Pose::rest(1, 0), &mesh, &cam).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if w.covered(x, y) {
                    assert!((w.at(x, y, 1) - 1.0).abs() < 1e-5);
                    assert!((w.at(x, y, 0) - 0.8).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn densify_ignores_live_image_by_construction() {
        // pure function of (state, pose, mesh, camera): same inputs, same
        // output bits
        let (mesh, cam) = tiny_rig();
        let state = init_canonical(3, 1).unwrap();
        let a = densify_context(&state, &Pose::rest(1, 0), &mesh, &cam).unwrap();
        let b = densify_context(&state, &Pose::rest(1, 0), &mesh, &cam).unwrap();
        assert_eq!(a.data, b.data);
    }
}
