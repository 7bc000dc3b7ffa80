use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mask, Volume};
use crate::error::{Error, Result};

/// A sub-block of a volume (and its labels) with its position in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: [usize; 3],
    pub volume: Volume,
    pub mask: Option<Mask>,
}

fn check_fit(dims: [usize; 3], patch: [usize; 3], stride: [usize; 3]) -> Result<()> {
    if patch.contains(&0) || stride.contains(&0) {
        return Err(Error::invalid(format!(
            "patch {patch:?} and stride {stride:?} must be positive"
        )));
    }
    if (0..3).any(|a| patch[a] > dims[a]) {
        return Err(Error::invalid(format!("patch {patch:?} is larger than volume {dims:?}")));
    }
    Ok(())
}

fn axis_starts(len: usize, p: usize, s: usize, cover_edges: bool) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=len - p).step_by(s).collect();
    if cover_edges && *v.last().expect("patch fits") != len - p {
        v.push(len - p);
    }
    v
}

/// Raster-order patch origins (depth slowest). With `cover_edges`, a final
/// window flush with the far edge is added on each axis so every voxel is
/// covered.
pub fn patch_origins(
    dims: [usize; 3],
    patch: [usize; 3],
    stride: [usize; 3],
    cover_edges: bool,
) -> Result<Vec<[usize; 3]>> {
    check_fit(dims, patch, stride)?;
    let zs = axis_starts(dims[0], patch[0], stride[0], cover_edges);
    let ys = axis_starts(dims[1], patch[1], stride[1], cover_edges);
    let xs = axis_starts(dims[2], patch[2], stride[2], cover_edges);
    let mut out = Vec::with_capacity(zs.len() * ys.len() * xs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([z, y, x]);
            }
        }
    }
    Ok(out)
}

fn crop<T: Copy>(src: &[T], dims: [usize; 3], origin: [usize; 3], patch: [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(patch.iter().product());
    for z in 0..patch[0] {
        for y in 0..patch[1] {
            let start = ((origin[0] + z) * dims[1] + origin[1] + y) * dims[2] + origin[2];
            out.extend_from_slice(&src[start..start + patch[2]]);
        }
    }
    out
}

/// Cuts one block out of a volume, and out of its mask when given.
pub fn crop_patch(volume: &Volume, mask: Option<&Mask>, origin: [usize; 3], patch: [usize; 3]) -> Patch {
    Patch {
        origin,
        volume: Volume {
            dims: patch,
            spacing: volume.spacing,
            voxels: crop(&volume.voxels, volume.dims, origin, patch),
        },
        mask: mask.map(|m| Mask {
            dims: patch,
            labels: crop(&m.labels, m.dims, origin, patch),
        }),
    }
}

/// Sliding-window patches in raster order.
pub fn extract_patches(
    volume: &Volume,
    mask: Option<&Mask>,
    patch: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<Patch>> {
    if let Some(m) = mask {
        if m.dims != volume.dims {
            return Err(Error::invalid(format!(
                "mask dims {:?} differ from volume dims {:?}",
                m.dims, volume.dims
            )));
        }
    }
    Ok(patch_origins(volume.dims, patch, stride, false)?
        .into_iter()
        .map(|o| crop_patch(volume, mask, o, patch))
        .collect())
}

/// Patch grid that covers a whole volume, for patchwise inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    pub dims: [usize; 3],
    pub patch: [usize; 3],
    pub origins: Vec<[usize; 3]>,
}

impl PatchLayout {
    pub fn covering(dims: [usize; 3], patch: [usize; 3], stride: [usize; 3]) -> Result<PatchLayout> {
        Ok(PatchLayout {
            dims,
            patch,
            origins: patch_origins(dims, patch, stride, true)?,
        })
    }
}

/// Places patch values back at their origins, averaging where patches
/// overlap. Voxels no patch covers are zero.
pub fn reassemble(layout: &PatchLayout, values: &[Vec<f64>]) -> Result<Volume> {
    let n: usize = layout.patch.iter().product();
    if values.len() != layout.origins.len() || values.iter().any(|v| v.len() != n) {
        return Err(Error::invalid(format!(
            "reassemble: expected {} patches of {n} values",
            layout.origins.len()
        )));
    }
    let dims = layout.dims;
    let total: usize = dims.iter().product();
    let mut sum = vec![0.0; total];
    let mut count = vec![0u32; total];
    let [pd, ph, pw] = layout.patch;
    for (o, v) in layout.origins.iter().zip(values) {
        for z in 0..pd {
            for y in 0..ph {
                let dst = ((o[0] + z) * dims[1] + o[1] + y) * dims[2] + o[2];
                let src = (z * ph + y) * pw;
                for x in 0..pw {
                    sum[dst + x] += v[src + x];
                    count[dst + x] += 1;
                }
            }
        }
    }
    let voxels = sum
        .into_iter()
        .zip(count)
        .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Volume::new(dims, [1.0; 3], voxels)
}

/// In-plane flips followed by a rotation of `rot_k · 90°` about the depth axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augmentation {
    /// Mirror along W.
    pub flip_h: bool,
    /// Mirror along H.
    pub flip_v: bool,
    pub rot_k: u8,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip_h: false,
        flip_v: false,
        rot_k: 0,
    };

    /// Independent fair coins for each flip and a uniform quarter-turn count.
    pub fn from_seed(seed: u64) -> Augmentation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Augmentation {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            rot_k: rng.random_range(0..4u8),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Augmentation::IDENTITY
    }

    /// Applies the transform to a `[D, H, W]` grid stored row-major.
    pub fn apply<T: Copy>(&self, src: &[T], dims: [usize; 3]) -> Result<Vec<T>> {
        let [d, h, w] = dims;
        if self.rot_k % 2 == 1 && h != w {
            return Err(Error::invalid(format!(
                "a quarter-turn rotation needs a square plane, got {h}x{w}"
            )));
        }
        let mut out = Vec::with_capacity(src.len());
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    // walk the transform backwards to find the source voxel
                    let (mut sy, mut sx) = match self.rot_k % 4 {
                        0 => (y, x),
                        1 => (x, h - 1 - y),
                        2 => (h - 1 - y, w - 1 - x),
                        _ => (w - 1 - x, y),
                    };
                    if self.flip_v {
                        sy = h - 1 - sy;
                    }
                    if self.flip_h {
                        sx = w - 1 - sx;
                    }
                    out.push(src[(z * h + sy) * w + sx]);
                }
            }
        }
        Ok(out)
    }

    pub fn apply_pair(&self, volume: &Volume, mask: &Mask) -> Result<(Volume, Mask)> {
        if volume.dims != mask.dims {
            return Err(Error::invalid(format!(
                "augment: volume {:?} and mask {:?} differ",
                volume.dims, mask.dims
            )));
        }
        Ok((
            Volume {
                dims: volume.dims,
                spacing: volume.spacing,
                voxels: self.apply(&volume.voxels, volume.dims)?,
            },
            Mask {
                dims: mask.dims,
                labels: self.apply(&mask.labels, mask.dims)?,
            },
        ))
    }
}

/// Random flip/rotation drawn from `seed`, applied identically to both grids.
pub fn augment(volume: &Volume, mask: &Mask, seed: u64) -> Result<(Volume, Mask)> {
    Augmentation::from_seed(seed).apply_pair(volume, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n = dims.iter().product::<usize>();
        Volume::new(dims, [1.0; 3], (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn depth_tiling_counts() {
        let v = ramp([10, 4, 4]);
        let p = extract_patches(&v, None, [5, 4, 4], [5, 4, 4]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].origin, [5, 0, 0]);
    }

    #[test]
    fn partition_reassembles_exactly() {
        let v = ramp([4, 6, 6]);
        let layout = PatchLayout::covering(v.dims, [2, 3, 3], [2, 3, 3]).unwrap();
        let vals: Vec<Vec<f64>> = layout
            .origins
            .iter()
            .map(|&o| crop_patch(&v, None, o, [2, 3, 3]).volume.voxels)
            .collect();
        assert_eq!(reassemble(&layout, &vals).unwrap().voxels, v.voxels);
    }

    #[test]
    fn quarter_turn_moves_corner() {
        let a = Augmentation {
            rot_k: 1,
            ..Augmentation::IDENTITY
        };
        // 2x2 plane [[0, 1], [2, 3]] turned counter-clockwise is [[1, 3], [0, 2]]
        assert_eq!(a.apply(&[0, 1, 2, 3], [1, 2, 2]).unwrap(), vec![1, 3, 0, 2]);
        let four = (0..4).try_fold(vec![0, 1, 2, 3], |acc, _| a.apply(&acc, [1, 2, 2])).unwrap();
        assert_eq!(four, vec![0, 1, 2, 3]);
    }

    #[test]
    fn odd_rotation_of_rectangle_rejected() {
        let a = Augmentation {
            rot_k: 3,
            ..Augmentation::IDENTITY
        };
        assert!(a.apply(&[0; 6], [1, 2, 3]).is_err());
        let b = Augmentation {
            rot_k: 2,
            flip_h: true,
            flip_v: false,
        };
        assert!(b.apply(&[0; 6], [1, 2, 3]).is_ok());
    }
}
