use super::volume::{Mask, Volume};
use crate::error::{Error, Result};

/// Per-axis lookup: lower index, upper index, fractional weight of the upper.
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    t: Vec<f64>,
}

impl AxisTaps {
    /// Output sample `o` reads source coordinate `(o + 0.5) * step - 0.5`,
    /// clamped to the valid index range.
    fn new(in_len: usize, out_len: usize, step: f64) -> Self {
        let max = (in_len - 1) as f64;
        let mut taps = AxisTaps { lo: Vec::with_capacity(out_len), hi: Vec::with_capacity(out_len), t: Vec::with_capacity(out_len) };
        for o in 0..out_len {
            let src = ((o as f64 + 0.5) * step - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.t.push(src - lo as f64);
        }
        taps
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // exact when a == b
    a + (b - a) * t
}

fn trilinear(v: &Volume, out_dims: [usize; 3], steps: [f64; 3], spacing: [f64; 3]) -> Result<Volume> {
    let in_dims = v.dims();
    let ax: Vec<AxisTaps> = (0..3).map(|a| AxisTaps::new(in_dims[a], out_dims[a], steps[a])).collect();
    let m = v.channels();
    let mut data = Vec::with_capacity(out_dims.iter().product::<usize>() * m);
    for z in 0..out_dims[2] {
        let (z0, z1, tz) = (ax[2].lo[z], ax[2].hi[z], ax[2].t[z]);
        for y in 0..out_dims[1] {
            let (y0, y1, ty) = (ax[1].lo[y], ax[1].hi[y], ax[1].t[y]);
            for x in 0..out_dims[0] {
                let (x0, x1, tx) = (ax[0].lo[x], ax[0].hi[x], ax[0].t[x]);
                for c in 0..m {
                    let c00 = lerp(v.get(x0, y0, z0, c), v.get(x1, y0, z0, c), tx);
                    let c10 = lerp(v.get(x0, y1, z0, c), v.get(x1, y1, z0, c), tx);
                    let c01 = lerp(v.get(x0, y0, z1, c), v.get(x1, y0, z1, c), tx);
                    let c11 = lerp(v.get(x0, y1, z1, c), v.get(x1, y1, z1, c), tx);
                    data.push(lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz));
                }
            }
        }
    }
    Volume::new(out_dims, spacing, m, data)
}

/// Resamples to isotropic `target` mm voxels by trilinear interpolation.
pub fn resample_isotropic(v: &Volume, target: f64) -> Result<Volume> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::NonPositiveTarget(target));
    }
    let dims = v.dims();
    let spacing = v.spacing();
    let mut out = [0usize; 3];
    let mut steps = [0.0; 3];
    for a in 0..3 {
        let extent = dims[a] as f64 * spacing[a] / target;
        out[a] = ((extent + 0.5).floor() as usize).max(1);
        steps[a] = target / spacing[a];
    }
    trilinear(v, out, steps, [target; 3])
}

/// Resizes to `target` voxel counts; spacing is rescaled to keep the
/// physical extent.
pub fn resize_trilinear(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    if target.iter().any(|&t| t == 0) {
        return Err(Error::ZeroTargetDim(target));
    }
    let dims = v.dims();
    let spacing = v.spacing();
    let mut steps = [0.0; 3];
    let mut out_spacing = [0.0; 3];
    for a in 0..3 {
        steps[a] = dims[a] as f64 / target[a] as f64;
        out_spacing[a] = spacing[a] * steps[a];
    }
    trilinear(v, target, steps, out_spacing)
}

/// Nearest-neighbour resize for masks, using the same sample placement as
/// [`resize_trilinear`].
pub fn resize_mask_nearest(m: &Mask, target: [usize; 3]) -> Result<Mask> {
    if target.iter().any(|&t| t == 0) {
        return Err(Error::ZeroTargetDim(target));
    }
    let dims = m.dims();
    let src = |a: usize, o: usize| -> usize {
        let step = dims[a] as f64 / target[a] as f64;
        let s = ((o as f64 + 0.5) * step - 0.5).clamp(0.0, (dims[a] - 1) as f64);
        (s + 0.5).floor() as usize
    };
    Mask::from_fn(target, |x, y, z| m.get(src(0, x), src(1, y), src(2, z)))
}

/// Inclusive bounding box `(min, max)` of nonzero mask voxels.
pub fn mask_bounding_box(m: &Mask) -> Option<([usize; 3], [usize; 3])> {
    let dims = m.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if m.get(x, y, z) {
                    any = true;
                    for (a, c) in [x, y, z].into_iter().enumerate() {
                        lo[a] = lo[a].min(c);
                        hi[a] = hi[a].max(c);
                    }
                }
            }
        }
    }
    any.then_some((lo, hi))
}

/// Bounding box of the mask grown by `margin` voxels and clipped to the grid.
pub fn crop_box(m: &Mask, margin: usize) -> Result<([usize; 3], [usize; 3])> {
    let (lo, hi) = mask_bounding_box(m).ok_or(Error::EmptyMask)?;
    let dims = m.dims();
    let mut out_lo = [0; 3];
    let mut out_hi = [0; 3];
    for a in 0..3 {
        out_lo[a] = lo[a].saturating_sub(margin);
        out_hi[a] = (hi[a] + margin).min(dims[a] - 1);
    }
    Ok((out_lo, out_hi))
}

/// Copies the inclusive box `[lo, hi]` out of `v`.
pub fn crop(v: &Volume, lo: [usize; 3], hi: [usize; 3]) -> Result<Volume> {
    let dims = v.dims();
    for a in 0..3 {
        if lo[a] > hi[a] || hi[a] >= dims[a] {
            return Err(Error::IndexOutOfRange { index: hi[a], extent: dims[a] });
        }
    }
    let out = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    Volume::from_fn(out, v.spacing(), v.channels(), |x, y, z, c| v.get(lo[0] + x, lo[1] + y, lo[2] + z, c))
}

pub fn crop_mask(m: &Mask, lo: [usize; 3], hi: [usize; 3]) -> Result<Mask> {
    let dims = m.dims();
    for a in 0..3 {
        if lo[a] > hi[a] || hi[a] >= dims[a] {
            return Err(Error::IndexOutOfRange { index: hi[a], extent: dims[a] });
        }
    }
    let out = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    Mask::from_fn(out, |x, y, z| m.get(lo[0] + x, lo[1] + y, lo[2] + z))
}

/// Crops `v` to the bounding box of `m`, grown by `margin` voxels.
pub fn crop_to_mask(v: &Volume, m: &Mask, margin: usize) -> Result<Volume> {
    if v.dims() != m.dims() {
        return Err(Error::DimsMismatch { left: v.dims(), right: m.dims() });
    }
    let (lo, hi) = crop_box(m, margin)?;
    crop(v, lo, hi)
}
