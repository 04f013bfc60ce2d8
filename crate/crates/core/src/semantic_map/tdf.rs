use std::io::{Read, Write};

use super::{ClassSet, SemanticMap};
use crate::error::{Error, Result};

pub const DEFAULT_TRUNC_RADIUS: f32 = 50.0;

const CACHE_MAGIC: &[u8; 4] = b"CTDF";
const CACHE_VERSION: u32 = 1;
/// Stand-in for "no source" inside the squared transform; far above any
/// squared distance on a representable map.
const FAR: f64 = 1e20;

/// Per-class truncated Euclidean distance fields over a map grid, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTdf {
    width: usize,
    height: usize,
    n_classes: usize,
    trunc_radius: f32,
    /// `n_classes` row-major planes.
    planes: Vec<f32>,
    /// Pixel position of the metric map-frame origin, copied from the map.
    pub origin_px: [f64; 2],
}

/// Computes the truncated distance field of every class in `classes`.
///
/// Uses the exact separable squared-distance transform (lower envelope of
/// parabolas along columns, then rows), so each value equals the brute-force
/// nearest-source distance.
pub fn build_tdf(map: &SemanticMap, classes: &ClassSet, trunc_radius: f32) -> Result<ClassTdf> {
    if classes.n_classes() == 0 {
        return Err(Error::Config("cannot build distance fields for an empty class set".into()));
    }
    if !(trunc_radius > 0.0 && trunc_radius.is_finite()) {
        return Err(Error::Config(format!("trunc_radius must be positive, got {trunc_radius}")));
    }
    let (w, h) = (map.width(), map.height());
    let n = classes.n_classes();
    let mut planes = Vec::with_capacity(n * w * h);
    for c in 0..n {
        let sq = squared_edt(map.cells(), w, h, c as u8);
        planes.extend(sq.iter().map(|&d| (d.sqrt() as f32).min(trunc_radius)));
    }
    Ok(ClassTdf {
        width: w,
        height: h,
        n_classes: n,
        trunc_radius,
        planes,
        origin_px: map.origin_px,
    })
}

fn squared_edt(cells: &[u8], w: usize, h: usize, class: u8) -> Vec<f64> {
    let mut grid: Vec<f64> = cells
        .iter()
        .map(|&c| if c == class { 0.0 } else { FAR })
        .collect();
    let mut f = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    let mut v = vec![0usize; w.max(h)];
    let mut z = vec![0.0; w.max(h) + 1];

    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        lower_envelope(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        lower_envelope(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// One-dimensional squared distance transform of a sampled function.
fn lower_envelope(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates from -inf
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

impl ClassTdf {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn trunc_radius(&self) -> f32 {
        self.trunc_radius
    }

    pub fn plane(&self, class: usize) -> &[f32] {
        let len = self.width * self.height;
        &self.planes[class * len..(class + 1) * len]
    }

    /// Stored value at cell `(x, y)`.
    pub fn value(&self, class: usize, x: usize, y: usize) -> f32 {
        self.plane(class)[y * self.width + x]
    }

    /// Bilinearly interpolated distance at continuous pixel coordinates.
    /// Anything outside the span of cell centers reads as the truncation radius.
    #[inline]
    pub fn query(&self, class: usize, x: f64, y: f64) -> f32 {
        let (w, h) = (self.width, self.height);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return self.trunc_radius;
        }
        let x0 = (x as usize).min(w.saturating_sub(2));
        let y0 = (y as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let tx = (x - x0 as f64) as f32;
        let ty = (y - y0 as f64) as f32;
        let base = class * w * h;
        let p = &self.planes;
        let v00 = p[base + y0 * w + x0];
        let v10 = p[base + y0 * w + x1];
        let v01 = p[base + y1 * w + x0];
        let v11 = p[base + y1 * w + x1];
        let top = v00 + (v10 - v00) * tx;
        let bottom = v01 + (v11 - v01) * tx;
        top + (bottom - top) * ty
    }

    /// Serializes to the little-endian `CTDF` cache layout.
    pub fn write_cache<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(CACHE_MAGIC)?;
        for v in [CACHE_VERSION, self.width as u32, self.height as u32, self.n_classes as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.trunc_radius.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.planes.len() * 4);
        for v in &self.planes {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()
    }

    pub fn read_cache<R: Read>(mut input: R, context: &str) -> Result<ClassTdf> {
        let bad = |m: &str| Error::format(context, m);
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|_| bad("missing CTDF header"))?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic, expected CTDF"));
        }
        let mut word = [0u8; 4];
        let mut next = |input: &mut R| -> Result<[u8; 4]> {
            input
                .read_exact(&mut word)
                .map_err(|_| bad("truncated CTDF header"))?;
            Ok(word)
        };
        let version = u32::from_le_bytes(next(&mut input)?);
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported CTDF version {version}")));
        }
        let width = u32::from_le_bytes(next(&mut input)?) as usize;
        let height = u32::from_le_bytes(next(&mut input)?) as usize;
        let n_classes = u32::from_le_bytes(next(&mut input)?) as usize;
        let trunc_radius = f32::from_le_bytes(next(&mut input)?);
        if width == 0 || height == 0 || n_classes == 0 {
            return Err(bad("empty CTDF dimensions"));
        }
        let len = width * height * n_classes;
        let mut bytes = vec![0u8; len * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|_| bad("truncated CTDF planes"))?;
        let planes = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(ClassTdf {
            width,
            height,
            n_classes,
            trunc_radius,
            planes,
            origin_px: [0.0, 0.0],
        })
    }
}
