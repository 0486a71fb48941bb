//! Per-frame multi-scale features and bilinear sampling at projected
//! vertices.
//!
//! The pyramid is a deterministic stand-in for a learned extractor: three
//! levels at 1/2, 1/4, 1/8 resolution, each a binomial-blurred ([1 4 6 4 1]/16,
//! clamp-to-edge) 2x downsample of the previous, carrying its 3 blurred color
//! channels plus horizontal/vertical gradient-magnitude channels (central
//! differences of luminance, clamp-to-edge). Channel total L = 3 + 3*(3+2).
//! `raw_rgb` mode keeps just the full-resolution image (L = 3).

use crate::error::{Error, Result};
use crate::projection::ProjectedPoints;
use crate::raster::{FeatureImage, VisibilityMap};

/// Which feature extractor the pipeline runs per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Pyramid,
    RawRgb,
}

/// Channels at every pyramid level past the base (3 color + 2 gradient).
const LEVEL_CHANNELS: usize = 5;
const LEVELS: usize = 3;

/// Multi-scale per-frame features F_t.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub mode: FeatureMode,
    /// Full-resolution input (3 channels).
    pub base: FeatureImage,
    /// Levels 1..=3 in pyramid mode (5 channels each); empty in raw_rgb mode.
    pub levels: Vec<FeatureImage>,
    /// Total channels a sampled vertex row carries.
    pub channels: usize,
}

impl FeatureMode {
    pub fn channel_count(self) -> usize {
        match self {
            FeatureMode::Pyramid => 3 + LEVELS * LEVEL_CHANNELS,
            FeatureMode::RawRgb => 3,
        }
    }
}

/// Vertex-aligned feature rows S_t. Invisible vertices hold all-zero rows.
#[derive(Debug, Clone)]
pub struct VertexFeatureSet {
    /// Row-major M x L.
    pub rows: Vec<f32>,
    pub channels: usize,
    pub frame_time: i64,
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable binomial blur, clamp-to-edge, all channels.
fn blur(img: &FeatureImage) -> FeatureImage {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut horiz = vec![0.0f32; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &k) in K.iter().enumerate() {
                    let sx = clamp_idx(x as isize + t as isize - 2, w);
                    acc += k * img.at(sx, y, ch);
                }
                horiz[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = FeatureImage::filled(w, h, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &k) in K.iter().enumerate() {
                    let sy = clamp_idx(y as isize + t as isize - 2, h);
                    acc += k * horiz[(sy * w + x) * c + ch];
                }
                let i = out.idx(x, y, ch);
                out.data[i] = acc;
            }
        }
    }
    out.coverage = img.coverage.clone();
    out
}

/// Keeps even-indexed rows/columns; output is ceil(n/2) per axis.
fn downsample(img: &FeatureImage) -> FeatureImage {
    let (w, h, c) = (img.width.div_ceil(2), img.height.div_ceil(2), img.channels);
    let mut out = FeatureImage::filled(w, h, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let i = out.idx(x, y, ch);
                out.data[i] = img.at(x * 2, y * 2, ch);
            }
            out.coverage[y * w + x] = img.covered(x * 2, y * 2);
        }
    }
    out
}

/// Luminance central-difference gradient magnitudes: channel 0 horizontal,
/// channel 1 vertical.
fn gradient_channels(rgb: &FeatureImage) -> FeatureImage {
    let (w, h) = (rgb.width, rgb.height);
    let lum = |x: usize, y: usize| (rgb.at(x, y, 0) + rgb.at(x, y, 1) + rgb.at(x, y, 2)) / 3.0;
    let mut out = FeatureImage::filled(w, h, 2, 0.0);
    for y in 0..h {
        for x in 0..w {
            let xm = clamp_idx(x as isize - 1, w);
            let xp = clamp_idx(x as isize + 1, w);
            let ym = clamp_idx(y as isize - 1, h);
            let yp = clamp_idx(y as isize + 1, h);
            let i = out.idx(x, y, 0);
            out.data[i] = (0.5 * (lum(xp, y) - lum(xm, y))).abs();
            out.data[i + 1] = (0.5 * (lum(x, yp) - lum(x, ym))).abs();
        }
    }
    out
}

fn concat_channels(a: &FeatureImage, b: &FeatureImage) -> FeatureImage {
    debug_assert_eq!((a.width, a.height), (b.width, b.height));
    let mut out = FeatureImage::filled(a.width, a.height, a.channels + b.channels, 0.0);
    for y in 0..a.height {
        for x in 0..a.width {
            for c in 0..a.channels {
                let i = out.idx(x, y, c);
                out.data[i] = a.at(x, y, c);
            }
            for c in 0..b.channels {
                let i = out.idx(x, y, a.channels + c);
                out.data[i] = b.at(x, y, c);
            }
            out.coverage[y * a.width + x] = a.covered(x, y);
        }
    }
    out
}

/// Builds the per-frame feature stack from a 3-channel image.
pub fn build_pyramid(image: &FeatureImage, mode: FeatureMode) -> Result<FeaturePyramid> {
    if image.channels != 3 {
        return Err(Error::config(format!(
            "build_pyramid expects a 3-channel image, got {}",
            image.channels
        )));
    }
    match mode {
        FeatureMode::RawRgb => Ok(FeaturePyramid {
            mode,
            base: image.clone(),
            levels: Vec::new(),
            channels: mode.channel_count(),
        }),
        FeatureMode::Pyramid => {
            let mut levels = Vec::with_capacity(LEVELS);
            let mut current = image.clone();
            for _ in 0..LEVELS {
                current = downsample(&blur(&current));
                levels.push(concat_channels(&current, &gradient_channels(&current)));
            }
            Ok(FeaturePyramid {
                mode,
                base: image.clone(),
                levels,
                channels: mode.channel_count(),
            })
        }
    }
}

/// Plain bilinear sample with clamp-to-edge, one channel.
fn bilinear(img: &FeatureImage, x: f32, y: f32, c: usize) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (wx, wy) = (x - x0, y - y0);
    let xi = [clamp_idx(x0 as isize, img.width), clamp_idx(x0 as isize + 1, img.width)];
    let yi = [clamp_idx(y0 as isize, img.height), clamp_idx(y0 as isize + 1, img.height)];
    let w = [(1.0 - wx) * (1.0 - wy), wx * (1.0 - wy), (1.0 - wx) * wy, wx * wy];
    w[0] * img.at(xi[0], yi[0], c)
        + w[1] * img.at(xi[1], yi[0], c)
        + w[2] * img.at(xi[0], yi[1], c)
        + w[3] * img.at(xi[1], yi[1], c)
}

/// Bilinear sample that ignores uncovered pixels, renormalizing the
/// remaining footprint weights. Prevents background bleed when sampling a
/// rendered image at silhouette vertices; returns 0 when the whole footprint
/// is uncovered.
fn bilinear_covered(img: &FeatureImage, x: f32, y: f32, c: usize) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (wx, wy) = (x - x0, y - y0);
    let xi = [clamp_idx(x0 as isize, img.width), clamp_idx(x0 as isize + 1, img.width)];
    let yi = [clamp_idx(y0 as isize, img.height), clamp_idx(y0 as isize + 1, img.height)];
    let w = [(1.0 - wx) * (1.0 - wy), wx * (1.0 - wy), (1.0 - wx) * wy, wx * wy];
    let px = [(xi[0], yi[0]), (xi[1], yi[0]), (xi[0], yi[1]), (xi[1], yi[1])];
    let mut acc = 0.0;
    let mut total = 0.0;
    for (wi, (sx, sy)) in w.iter().zip(px) {
        if img.covered(sx, sy) {
            acc += wi * img.at(sx, sy, c);
            total += wi;
        }
    }
    if total > 0.0 {
        acc / total
    } else {
        0.0
    }
}

/// Maps a base-resolution coordinate to level coordinates
/// (align-corners = false: pixel centers stay proportionally placed).
fn to_level(x: f32, base: usize, level: usize) -> f32 {
    (x + 0.5) / base as f32 * level as f32 - 0.5
}

/// Samples every pyramid level at each visible vertex's projected position
/// and concatenates along channels; invisible vertices get zero rows.
///
/// The base image is sampled coverage-aware (uncovered pixels excluded from
/// the bilinear footprint); coarser levels blend freely since blur has
/// already mixed their neighborhoods.
pub fn sample_vertices(
    pyramid: &FeaturePyramid,
    projected: &ProjectedPoints,
    visibility: &VisibilityMap,
    frame_time: i64,
) -> Result<VertexFeatureSet> {
    let m = projected.pixels.len();
    if visibility.values.len() != m {
        return Err(Error::config(format!(
            "visibility has {} entries for {m} projected vertices",
            visibility.values.len()
        )));
    }
    let l = pyramid.channels;
    let mut rows = vec![0.0f32; m * l];
    for v in 0..m {
        if visibility.values[v] == 0 {
            continue;
        }
        let (px, py) = projected.pixels[v];
        let row = &mut rows[v * l..(v + 1) * l];
        for c in 0..3 {
            row[c] = bilinear_covered(&pyramid.base, px, py, c);
        }
        let mut offset = 3;
        for level in &pyramid.levels {
            let lx = to_level(px, pyramid.base.width, level.width);
            let ly = to_level(py, pyramid.base.height, level.height);
            for c in 0..level.channels {
                row[offset + c] = bilinear(level, lx, ly, c);
            }
            offset += level.channels;
        }
    }
    Ok(VertexFeatureSet { rows, channels: l, frame_time })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_image(w: usize, h: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> FeatureImage {
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
    fn constant_image_stays_constant_with_zero_gradients() {
        let img = rgb_image(16, 12, |_, _| [0.5, 0.5, 0.5]);
        let p = build_pyramid(&img, FeatureMode::Pyramid).unwrap();
        assert_eq!(p.levels.len(), 3);
        assert_eq!(p.channels, 18);
        for (k, level) in p.levels.iter().enumerate() {
            assert_eq!(level.width, 16usize.div_ceil(1 << (k + 1)));
            assert_eq!(level.height, 12usize.div_ceil(1 << (k + 1)));
            for y in 0..level.height {
                for x in 0..level.width {
                    for c in 0..3 {
                        assert!((level.at(x, y, c) - 0.5).abs() < 1e-6);
                    }
                    assert_eq!(level.at(x, y, 3), 0.0);
                    assert_eq!(level.at(x, y, 4), 0.0);
                }
            }
        }
    }

    #[test]
    fn raw_rgb_mode_is_identity() {
        let img = rgb_image(9, 7, |x, y| [x as f32 * 0.1, y as f32 * 0.2, 0.3]);
        let p = build_pyramid(&img, FeatureMode::RawRgb).unwrap();
        assert!(p.levels.is_empty());
        assert_eq!(p.channels, 3);
        assert_eq!(p.base.data, img.data);
    }

    /// Independent non-separable convolution oracle for one pyramid level.
    fn oracle_level1(img: &FeatureImage) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let k1 = [1.0f32, 4.0, 6.0, 4.0, 1.0];
        let (w, h) = (img.width, img.height);
        let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        // full 5x5 outer-product kernel applied directly
        let mut blurred = vec![0.0f32; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in -2isize..=2 {
                        for dx in -2isize..=2 {
                            let kw = k1[(dy + 2) as usize] * k1[(dx + 2) as usize] / 256.0;
                            acc += kw
                                * img.at(clamp(x as isize + dx, w), clamp(y as isize + dy, h), c);
                        }
                    }
                    blurred[(y * w + x) * 3 + c] = acc;
                }
            }
        }
        let (dw, dh) = (w.div_ceil(2), h.div_ceil(2));
        let mut level = vec![0.0f32; dw * dh * 3];
        for y in 0..dh {
            for x in 0..dw {
                for c in 0..3 {
                    level[(y * dw + x) * 3 + c] = blurred[(y * 2 * w + x * 2) * 3 + c];
                }
            }
        }
        let lum =
            |buf: &[f32], x: usize, y: usize| (0..3).map(|c| buf[(y * dw + x) * 3 + c]).sum::<f32>() / 3.0;
        let mut gx = vec![0.0f32; dw * dh];
        let mut gy = vec![0.0f32; dw * dh];
        for y in 0..dh {
            for x in 0..dw {
                let xp = clamp(x as isize + 1, dw);
                let xm = clamp(x as isize - 1, dw);
                let yp = clamp(y as isize + 1, dh);
                let ym = clamp(y as isize - 1, dh);
                gx[y * dw + x] = (0.5 * (lum(&level, xp, y) - lum(&level, xm, y))).abs();
                gy[y * dw + x] = (0.5 * (lum(&level, x, yp) - lum(&level, x, ym))).abs();
            }
        }
        (level, gx, gy)
    }

    #[test]
    fn step_edge_matches_convolution_oracle() {
        let img = rgb_image(20, 14, |x, _| if x < 10 { [0.1; 3] } else { [0.9; 3] });
        let p = build_pyramid(&img, FeatureMode::Pyramid).unwrap();
        let (level, gx, gy) = oracle_level1(&img);
        let l1 = &p.levels[0];
        for y in 0..l1.height {
            for x in 0..l1.width {
                for c in 0..3 {
                    assert!((l1.at(x, y, c) - level[(y * l1.width + x) * 3 + c]).abs() < 1e-6);
                }
                assert!((l1.at(x, y, 3) - gx[y * l1.width + x]).abs() < 1e-6);
                assert!((l1.at(x, y, 4) - gy[y * l1.width + x]).abs() < 1e-6);
            }
        }
        // the horizontal gradient channel peaks at the edge column
        let edge_col = (0..l1.width)
            .max_by(|&a, &b| l1.at(a, 3, 3).partial_cmp(&l1.at(b, 3, 3)).unwrap())
            .unwrap();
        assert!((4..=6).contains(&edge_col), "peak at {edge_col}");
        assert!(l1.at(edge_col, 3, 3) > 0.05);
    }

    fn projected_at(points: Vec<(f32, f32)>) -> ProjectedPoints {
        let n = points.len();
        ProjectedPoints { pixels: points, depths: vec![1.0; n], in_front: vec![true; n] }
    }

    #[test]
    fn sample_at_pixel_center_is_exact() {
        let img = rgb_image(8, 8, |x, y| [(x + y) as f32, x as f32, y as f32]);
        let p = build_pyramid(&img, FeatureMode::RawRgb).unwrap();
        let proj = projected_at(vec![(3.0, 5.0)]);
        let vis = VisibilityMap { values: vec![1] };
        let s = sample_vertices(&p, &proj, &vis, 0).unwrap();
        assert_eq!(&s.rows[0..3], &[8.0, 3.0, 5.0]);
    }

    #[test]
    fn sample_midpoint_averages_four_pixels() {
        let mut img = rgb_image(2, 2, |_, _| [0.0; 3]);
        for (i, v) in [0.0f32, 1.0, 2.0, 3.0].iter().enumerate() {
            img.data[i * 3] = *v;
        }
        let p = build_pyramid(&img, FeatureMode::RawRgb).unwrap();
        let proj = projected_at(vec![(0.5, 0.5)]);
        let vis = VisibilityMap { values: vec![1] };
        let s = sample_vertices(&p, &proj, &vis, 0).unwrap();
        assert!((s.rows[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn invisible_vertex_gets_zero_row() {
        let img = rgb_image(8, 8, |_, _| [0.7; 3]);
        let p = build_pyramid(&img, FeatureMode::Pyramid).unwrap();
        let proj = projected_at(vec![(4.0, 4.0), (2.0, 2.0)]);
        let vis = VisibilityMap { values: vec![0, 1] };
        let s = sample_vertices(&p, &proj, &vis, 0).unwrap();
        assert!(s.rows[0..18].iter().all(|&v| v == 0.0));
        assert!(s.rows[18..21].iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn sampling_is_linear_in_the_image() {
        let a = rgb_image(10, 10, |x, y| [x as f32 * 0.05, y as f32 * 0.03, 0.2]);
        let b = rgb_image(10, 10, |x, y| [0.4, x as f32 * 0.01, y as f32 * 0.07]);
        let mut comb = rgb_image(10, 10, |_, _| [0.0; 3]);
        for i in 0..comb.data.len() {
            comb.data[i] = 2.0 * a.data[i] + 0.5 * b.data[i];
        }
        let proj = projected_at(vec![(3.3, 6.7), (0.1, 0.2), (8.9, 4.5)]);
        let vis = VisibilityMap { values: vec![1, 1, 1] };
        for mode in [FeatureMode::RawRgb, FeatureMode::Pyramid] {
            let sa = sample_vertices(&build_pyramid(&a, mode).unwrap(), &proj, &vis, 0).unwrap();
            let sb = sample_vertices(&build_pyramid(&b, mode).unwrap(), &proj, &vis, 0).unwrap();
            let sc =
                sample_vertices(&build_pyramid(&comb, mode).unwrap(), &proj, &vis, 0).unwrap();
            for i in 0..sc.rows.len() {
                let lin = 2.0 * sa.rows[i] + 0.5 * sb.rows[i];
                assert!((sc.rows[i] - lin).abs() < 1e-5, "channel {i}");
            }
        }
    }

    #[test]
    fn coverage_renormalization_excludes_background() {
        // right half uncovered and white; a vertex between the halves
        // must sample pure foreground
        let mut img = rgb_image(4, 4, |x, _| if x < 2 { [0.2; 3] } else { [1.0; 3] });
        for y in 0..4 {
            for x in 2..4 {
                img.coverage[y * 4 + x] = false;
            }
        }
        let p = build_pyramid(&img, FeatureMode::RawRgb).unwrap();
        let proj = projected_at(vec![(1.6, 1.0)]);
        let vis = VisibilityMap { values: vec![1] };
        let s = sample_vertices(&p, &proj, &vis, 0).unwrap();
        assert!((s.rows[0] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn non_rgb_input_is_config_error() {
        let img = FeatureImage::filled(4, 4, 2, 0.0);
        assert!(matches!(
            build_pyramid(&img, FeatureMode::Pyramid),
            Err(Error::Config(_))
        ));
    }
}
