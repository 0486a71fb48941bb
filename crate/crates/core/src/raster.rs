//! Software rasterizer: z-buffer rendering, per-vertex visibility, and
//! barycentric densification of sparse vertex features into dense images.
//!
//! Faces are rendered double-sided; a face with any vertex behind the near
//! epsilon is skipped entirely (no near-plane clipping — scenes keep the
//! subject in front of the camera). Depth ties keep the lower face index,
//! making output bit-identical across runs.

use crate::error::{Error, Result};
use crate::projection::{project, Camera, ProjectedPoints};
use crate::template::PosedVertices;

/// Marks empty pixels in [`DepthBuffer::face_id`].
pub const NO_FACE: u32 = u32::MAX;

/// Per-pixel result of [`rasterize`]: nearest-fragment depth, face id, and
/// perspective-correct barycentrics. `mask` ⇔ `face_id != NO_FACE` ⇔ finite
/// depth.
#[derive(Debug, Clone)]
pub struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
    pub face_id: Vec<u32>,
    /// Row-major H x W triples.
    pub barycentrics: Vec<[f32; 3]>,
}

impl DepthBuffer {
    fn empty(width: usize, height: usize) -> DepthBuffer {
        let n = width * height;
        DepthBuffer {
            width,
            height,
            depth: vec![f32::INFINITY; n],
            mask: vec![false; n],
            face_id: vec![NO_FACE; n],
            barycentrics: vec![[0.0; 3]; n],
        }
    }

    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Per-vertex visibility; binary for a single frame, counts when
/// accumulated over a stream.
#[derive(Debug, Clone)]
pub struct VisibilityMap {
    pub values: Vec<u32>,
}

/// Dense H x W x C raster with a coverage mask. `data` is row-major
/// (y, x, c); uncovered pixels hold the fill value used to create the image.
#[derive(Debug, Clone)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub coverage: Vec<bool>,
}

impl FeatureImage {
    pub fn filled(width: usize, height: usize, channels: usize, fill: f32) -> FeatureImage {
        FeatureImage {
            width,
            height,
            channels,
            data: vec![fill; width * height * channels],
            coverage: vec![false; width * height],
        }
    }

    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.idx(x, y, c)]
    }

    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.coverage[y * self.width + x]
    }
}

/// Signed edge function; the sign tells which side of directed edge a→b the
/// point p lies on. Shared verbatim with the brute-force oracle so impl and
/// oracle agree bit-exactly.
#[inline]
pub fn edge_function(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// One fragment test: is pixel-center `p` inside the projected triangle, and
/// if so at what perspective-correct depth/barycentrics? Double-sided.
/// Returns None outside or for degenerate projections.
#[inline]
pub fn fragment(
    p: (f64, f64),
    v: [(f64, f64); 3],
    z: [f64; 3],
) -> Option<(f64, [f64; 3])> {
    let area = edge_function(v[0], v[1], v[2]);
    if area == 0.0 {
        return None;
    }
    let w0 = edge_function(v[1], v[2], p);
    let w1 = edge_function(v[2], v[0], p);
    let w2 = edge_function(v[0], v[1], p);
    let inside =
        (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) || (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
    if !inside {
        return None;
    }
    let l = [w0 / area, w1 / area, w2 / area];
    let inv = l[0] / z[0] + l[1] / z[1] + l[2] / z[2];
    let depth = 1.0 / inv;
    let b = [l[0] / z[0] * depth, l[1] / z[1] * depth, l[2] / z[2] * depth];
    Some((depth, b))
}

const NEAR_EPS: f32 = 1e-6;

/// Renders the mesh into a depth buffer with the nearest fragment per pixel.
pub fn rasterize(
    verts: &PosedVertices,
    faces: &[[usize; 3]],
    camera: &Camera,
) -> Result<DepthBuffer> {
    let projected = project(verts, camera);
    rasterize_projected(&projected, faces, camera.width, camera.height)
}

/// [`rasterize`] over already-projected points (saves the re-projection when
/// the caller also needs [`ProjectedPoints`]).
pub fn rasterize_projected(
    projected: &ProjectedPoints,
    faces: &[[usize; 3]],
    width: usize,
    height: usize,
) -> Result<DepthBuffer> {
    let m = projected.pixels.len();
    let mut buf = DepthBuffer::empty(width, height);
    let mut best = vec![f64::INFINITY; width * height];
    for (fi, face) in faces.iter().enumerate() {
        if face.iter().any(|&vi| vi >= m) {
            return Err(Error::data(format!("face {fi} references vertex out of range")));
        }
        if face.iter().any(|&vi| !projected.in_front[vi]) {
            continue;
        }
        let v: [(f64, f64); 3] = [
            (projected.pixels[face[0]].0 as f64, projected.pixels[face[0]].1 as f64),
            (projected.pixels[face[1]].0 as f64, projected.pixels[face[1]].1 as f64),
            (projected.pixels[face[2]].0 as f64, projected.pixels[face[2]].1 as f64),
        ];
        let z = [
            projected.depths[face[0]] as f64,
            projected.depths[face[1]] as f64,
            projected.depths[face[2]] as f64,
        ];
        // integer pixel centers covered by the projected bbox
        let min_x = v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let max_x =
            v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor().min((width - 1) as f64);
        let min_y = v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let max_y = v
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min((height - 1) as f64);
        if max_x < 0.0 || max_y < 0.0 {
            continue;
        }
        for y in min_y..=(max_y as usize) {
            for x in min_x..=(max_x as usize) {
                let p = (x as f64, y as f64);
                if let Some((depth, b)) = fragment(p, v, z) {
                    let i = y * width + x;
                    if depth < best[i] {
                        best[i] = depth;
                        buf.depth[i] = depth as f32;
                        buf.mask[i] = true;
                        buf.face_id[i] = fi as u32;
                        buf.barycentrics[i] = [b[0] as f32, b[1] as f32, b[2] as f32];
                    }
                }
            }
        }
    }
    Ok(buf)
}

/// Per-frame binary visibility: a vertex is visible iff it is in front of
/// the camera, projects inside the image, and its depth is within
/// `eps_depth` of the minimum depth over its four surrounding pixels.
/// Neighbors off the image are skipped; empty pixels contribute +∞ (a vertex
/// on an uncovered silhouette pixel counts as visible).
pub fn vertex_visibility(
    verts: &PosedVertices,
    buffer: &DepthBuffer,
    projected: &ProjectedPoints,
    eps_depth: f32,
) -> VisibilityMap {
    debug_assert_eq!(verts.positions.len(), projected.pixels.len());
    let (w, h) = (buffer.width as isize, buffer.height as isize);
    let mut values = Vec::with_capacity(projected.pixels.len());
    for v in 0..projected.pixels.len() {
        let (px, py) = projected.pixels[v];
        let inside = px >= -0.5
            && (px as f64) < w as f64 - 0.5
            && py >= -0.5
            && (py as f64) < h as f64 - 0.5;
        if !projected.in_front[v] || !inside {
            values.push(0);
            continue;
        }
        let x0 = px.floor() as isize;
        let y0 = py.floor() as isize;
        let mut min_depth = f32::INFINITY;
        for (nx, ny) in [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)] {
            if nx >= 0 && nx < w && ny >= 0 && ny < h {
                min_depth = min_depth.min(buffer.depth[ny as usize * buffer.width + nx as usize]);
            }
        }
        values.push((projected.depths[v] <= min_depth + eps_depth) as u32);
    }
    VisibilityMap { values }
}

/// Densifies per-vertex features into a dense image using the buffer's
/// stored face ids and barycentrics.
pub fn densify(
    buffer: &DepthBuffer,
    faces: &[[usize; 3]],
    vertex_features: &[f32],
    channels: usize,
    fill: f32,
) -> Result<FeatureImage> {
    if channels == 0 || vertex_features.len() % channels != 0 {
        return Err(Error::config(format!(
            "vertex feature rows of {channels} channels cannot tile {} values",
            vertex_features.len()
        )));
    }
    let mut img = FeatureImage::filled(buffer.width, buffer.height, channels, fill);
    for y in 0..buffer.height {
        for x in 0..buffer.width {
            let i = buffer.idx(x, y);
            if !buffer.mask[i] {
                continue;
            }
            img.coverage[i] = true;
            let face = faces[buffer.face_id[i] as usize];
            let b = buffer.barycentrics[i];
            for c in 0..channels {
                let val = b[0] * vertex_features[face[0] * channels + c]
                    + b[1] * vertex_features[face[1] * channels + c]
                    + b[2] * vertex_features[face[2] * channels + c];
                let di = img.idx(x, y, c);
                img.data[di] = val;
            }
        }
    }
    Ok(img)
}

/// Densification: rasterizes `verts` through `camera`
/// and barycentrically interpolates `vertex_features` (M rows of `channels`
/// values) into a dense image; uncovered pixels hold `fill`.
pub fn interpolate_features(
    verts: &PosedVertices,
    faces: &[[usize; 3]],
    vertex_features: &[f32],
    channels: usize,
    camera: &Camera,
    fill: f32,
) -> Result<FeatureImage> {
    if channels == 0 || vertex_features.len() != verts.positions.len() * channels {
        return Err(Error::config(format!(
            "expected {} x {channels} vertex features, got {} values",
            verts.positions.len(),
            vertex_features.len()
        )));
    }
    let buffer = rasterize(verts, faces, camera)?;
    densify(&buffer, faces, vertex_features, channels, fill)
}
