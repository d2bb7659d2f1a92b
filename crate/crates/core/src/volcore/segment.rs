use std::collections::VecDeque;

use super::volume::{Mask, Volume};
use crate::error::{Error, Result};

/// Threshold fallback used when no lung segmentation is supplied.
///
/// Keeps the largest 6-connected component of voxels (channel 0) below
/// `threshold`. Components touching all six faces of the grid at once are
/// treated as surrounding air and skipped. Ties go to the component found
/// first in storage order.
pub fn naive_lung_mask(v: &Volume, threshold: f64) -> Result<Mask> {
    let [dx, dy, dz] = v.dims();
    let n = dx * dy * dz;
    let dark: Vec<bool> = (0..n).map(|i| v.data()[i * v.channels()] < threshold).collect();
    let mut label = vec![0u32; n];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();

    for seed in 0..n {
        if !dark[seed] || label[seed] != 0 {
            continue;
        }
        next += 1;
        label[seed] = next;
        queue.push_back(seed);
        let mut size = 0usize;
        // -x, +x, -y, +y, -z, +z
        let mut faces = [false; 6];
        while let Some(i) = queue.pop_front() {
            size += 1;
            let x = i % dx;
            let y = (i / dx) % dy;
            let z = i / (dx * dy);
            faces[0] |= x == 0;
            faces[1] |= x == dx - 1;
            faces[2] |= y == 0;
            faces[3] |= y == dy - 1;
            faces[4] |= z == 0;
            faces[5] |= z == dz - 1;
            let mut visit = |j: usize| {
                if dark[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < dx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - dx);
            }
            if y + 1 < dy {
                visit(i + dx);
            }
            if z > 0 {
                visit(i - dx * dy);
            }
            if z + 1 < dz {
                visit(i + dx * dy);
            }
        }
        if faces.iter().all(|&f| f) {
            continue;
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
    }

    let (keep, _) = best.ok_or(Error::NoComponentFound)?;
    Mask::new(v.dims(), label.iter().map(|&l| u8::from(l == keep)).collect())
}
