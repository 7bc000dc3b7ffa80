//! Volumes, label masks, their binary file formats, synthetic phantoms and
//! the patch pipeline that feeds training.

mod patches;
mod phantom;
mod split;
mod stream;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub use patches::{
    augment, crop_patch, extract_patches, patch_origins, reassemble, Augmentation, Patch, PatchLayout,
};
pub use phantom::{generate_phantom, Appearance, PhantomSpec};
pub use split::kfold_split;
pub use stream::{threads_from_env, Batch, PatchSampler, Prefetcher};

use crate::error::{Error, Result};
use crate::tensor::snapshot::{CountingReader, SnapshotError};

pub const VOLUME_MAGIC: &[u8; 5] = b"WDGV1";
pub const MASK_MAGIC: &[u8; 5] = b"WDGM1";

/// A 3D intensity grid in `D, H, W` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    /// Voxel size in millimetres along `D, H, W`.
    pub spacing: [f32; 3],
    pub voxels: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], voxels: Vec<f64>) -> Result<Volume> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("volume dims {dims:?} must be positive")));
        }
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid(format!("voxel spacing {spacing:?} must be positive")));
        }
        if voxels.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "volume {dims:?} needs {} voxels, got {}",
                dims.iter().product::<usize>(),
                voxels.len()
            )));
        }
        Ok(Volume { dims, spacing, voxels })
    }

    pub fn zeros(dims: [usize; 3]) -> Volume {
        Volume {
            dims,
            spacing: [1.0; 3],
            voxels: vec![0.0; dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    /// Zero mean and unit population variance over all voxels; a volume
    /// with standard deviation below `1e-8` maps to zeros.
    pub fn normalized(&self) -> Volume {
        let n = self.voxels.len() as f64;
        let mean = self.voxels.iter().sum::<f64>() / n;
        let var = self.voxels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let voxels = if std < 1e-8 {
            vec![0.0; self.voxels.len()]
        } else {
            self.voxels.iter().map(|v| (v - mean) / std).collect()
        };
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            voxels,
        }
    }

    /// Mean absolute voxel difference.
    pub fn mean_abs_diff(&self, other: &Volume) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::invalid(format!("volume dims {:?} vs {:?}", self.dims, other.dims)));
        }
        let s: f64 = self.voxels.iter().zip(&other.voxels).map(|(a, b)| (a - b).abs()).sum();
        Ok(s / self.voxels.len() as f64)
    }
}

/// Per-volume normalization to zero mean and unit variance.
pub fn normalize(v: &Volume) -> Volume {
    v.normalized()
}

/// A binary label grid (0 background, 1 foreground).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub dims: [usize; 3],
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn new(dims: [usize; 3], labels: Vec<u8>) -> Result<Mask> {
        if dims.contains(&0) || labels.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "mask {dims:?} needs {} labels, got {}",
                dims.iter().product::<usize>(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::invalid(format!("mask label {} at voxel {i} is not binary", labels[i])));
        }
        Ok(Mask { dims, labels })
    }

    pub fn foreground(&self) -> usize {
        self.labels.iter().map(|&l| l as usize).sum()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground() as f64 / self.labels.len() as f64
    }
}

fn io_err(path: &Path, e: SnapshotError) -> Error {
    match e {
        SnapshotError::Io(e) => Error::io(path, e),
        other => Error::Format(other),
    }
}

fn read_dims<R: Read>(r: &mut CountingReader<R>) -> std::result::Result<[usize; 3], SnapshotError> {
    let at = r.offset;
    let raw = [r.read_u32()?, r.read_u32()?, r.read_u32()?];
    let dims = raw.map(|d| d as usize);
    let ok = !dims.contains(&0)
        && dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .is_some_and(|n| n.checked_mul(8).is_some());
    if !ok {
        return Err(SnapshotError::BadExtents {
            offset: at,
            extents: raw.to_vec(),
        });
    }
    Ok(dims)
}

/// Encodes a volume. Voxels are stored as `f32` (dtype code 0) when every
/// value is exactly representable, otherwise as `f64` (code 1), so reading
/// back always reproduces the input bit for bit.
pub fn encode_volume<W: Write>(w: &mut W, v: &Volume) -> std::io::Result<()> {
    let exact_f32 = v.voxels.iter().all(|&x| (x as f32) as f64 == x || x.is_nan());
    w.write_all(VOLUME_MAGIC)?;
    w.write_all(&[if exact_f32 { 0 } else { 1 }])?;
    for d in v.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for s in v.spacing {
        w.write_all(&s.to_le_bytes())?;
    }
    if exact_f32 {
        for &x in &v.voxels {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    } else {
        for &x in &v.voxels {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_volume<R: Read>(r: R) -> std::result::Result<Volume, SnapshotError> {
    let mut r = CountingReader::new(r);
    r.expect_magic(VOLUME_MAGIC)?;
    let code_at = r.offset;
    let code = r.read_u8()?;
    if code > 1 {
        return Err(SnapshotError::BadDType { offset: code_at, code });
    }
    let dims = read_dims(&mut r)?;
    let mut spacing = [0f32; 3];
    for s in &mut spacing {
        *s = f32::from_le_bytes(r.read_bytes(4)?.try_into().unwrap());
    }
    let n: usize = dims.iter().product();
    let voxels = if code == 0 {
        r.read_bytes(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    } else {
        r.read_bytes(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Ok(Volume { dims, spacing, voxels })
}

pub fn encode_mask<W: Write>(w: &mut W, m: &Mask) -> std::io::Result<()> {
    w.write_all(MASK_MAGIC)?;
    for d in m.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&m.labels)
}

fn decode_mask_raw<R: Read>(r: R) -> std::result::Result<([usize; 3], Vec<u8>), SnapshotError> {
    let mut r = CountingReader::new(r);
    r.expect_magic(MASK_MAGIC)?;
    let dims = read_dims(&mut r)?;
    let labels = r.read_bytes(dims.iter().product())?;
    Ok((dims, labels))
}

pub fn decode_mask<R: Read>(r: R) -> Result<Mask> {
    let (dims, labels) = decode_mask_raw(r)?;
    Mask::new(dims, labels)
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    encode_volume(&mut w, v)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_volume(BufReader::new(f)).map_err(|e| io_err(path, e))
}

pub fn write_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    encode_mask(&mut w, m)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let (dims, labels) = decode_mask_raw(BufReader::new(f)).map_err(|e| io_err(path, e))?;
    Mask::new(dims, labels).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// File names of case `i` inside a dataset directory.
pub fn case_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("case_{i:03}.vol")), dir.join(format!("case_{i:03}.mask")))
}

/// One scan with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub volume: Volume,
    pub mask: Option<Mask>,
}

/// Loads every `*.vol` file in `dir` in name order, with its `.mask` twin
/// when present.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Case>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let p = e.path();
        if p.extension().is_some_and(|x| x == "vol") {
            names.push(p);
        }
    }
    names.sort();
    let mut cases = Vec::with_capacity(names.len());
    for p in names {
        let volume = read_volume(&p)?;
        let mp = p.with_extension("mask");
        let mask = if mp.exists() {
            let m = read_mask(&mp)?;
            if m.dims != volume.dims {
                return Err(Error::invalid(format!(
                    "{}: mask dims {:?} differ from volume dims {:?}",
                    mp.display(),
                    m.dims,
                    volume.dims
                )));
            }
            Some(m)
        } else {
            None
        };
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        cases.push(Case { name, volume, mask });
    }
    Ok(cases)
}
