//! Little-endian binary layouts.
//!
//! Volume file (16-byte header, then payload):
//!
//! ```text
//! b"OCLSCENE"  u32 version  u32 reserved(0)
//! u32 nx  u32 ny  u32 nz  f32 voxel_size  f32 origin[3]
//! u8 class[nx·ny·nz]                    x-fastest
//! f32 occupancy[nx·ny·nz]               version 2 only
//! ```
//!
//! Version 1 holds ground truth; version 2 holds a prediction and appends
//! the per-voxel occupancy score.
//!
//! Depth map file:
//!
//! ```text
//! b"OCLDEPTH"  u32 version(1)  u32 reserved(0)
//! u32 width  u32 height  f32 depth[w·h]  u8 valid[w·h]   row-major
//! ```

use std::io::{Read, Write};

use crate::scalar::Real;
use crate::scenegen::{DepthMap, GroundTruthScene, SceneError};

pub const SCENE_MAGIC: &[u8; 8] = b"OCLSCENE";
pub const DEPTH_MAGIC: &[u8; 8] = b"OCLDEPTH";
pub const SCENE_VERSION: u32 = 1;
pub const PREDICTION_VERSION: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeFile {
    pub dims: [usize; 3],
    pub voxel_size: f32,
    pub origin: [f32; 3],
    pub classes: Vec<u8>,
    pub occupancy: Option<Vec<f32>>,
}

impl VolumeFile {
    pub fn from_scene<T: Real>(scene: &GroundTruthScene<T>) -> Self {
        let g = scene.grid();
        Self {
            dims: g.dims,
            voxel_size: g.voxel_size.to_f64_lossy() as f32,
            origin: g.origin.map(|v| v.to_f64_lossy() as f32),
            classes: scene.semantics().to_vec(),
            occupancy: None,
        }
    }
}

fn u32le(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn f32le(w: &mut impl Write, v: f32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, SceneError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32, SceneError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_header(r: &mut impl Read, magic: &[u8; 8]) -> Result<u32, SceneError> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(SceneError::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    let _reserved = read_u32(r)?;
    Ok(version)
}

fn to_u32(n: usize) -> Result<u32, SceneError> {
    u32::try_from(n).map_err(|_| SceneError::Format("dimension exceeds u32".into()))
}

pub fn write_volume(w: &mut impl Write, v: &VolumeFile) -> Result<(), SceneError> {
    let n = v.dims.iter().product::<usize>();
    if v.classes.len() != n || v.occupancy.as_ref().is_some_and(|o| o.len() != n) {
        return Err(SceneError::Format("payload length does not match dims".into()));
    }
    w.write_all(SCENE_MAGIC)?;
    u32le(w, if v.occupancy.is_some() { PREDICTION_VERSION } else { SCENE_VERSION })?;
    u32le(w, 0)?;
    for d in v.dims {
        u32le(w, to_u32(d)?)?;
    }
    f32le(w, v.voxel_size)?;
    for o in v.origin {
        f32le(w, o)?;
    }
    w.write_all(&v.classes)?;
    if let Some(occ) = &v.occupancy {
        for &o in occ {
            f32le(w, o)?;
        }
    }
    Ok(())
}

pub fn read_volume(r: &mut impl Read) -> Result<VolumeFile, SceneError> {
    let version = read_header(r, SCENE_MAGIC)?;
    if version != SCENE_VERSION && version != PREDICTION_VERSION {
        return Err(SceneError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = read_u32(r)? as usize;
    }
    let voxel_size = read_f32(r)?;
    let mut origin = [0f32; 3];
    for o in &mut origin {
        *o = read_f32(r)?;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| SceneError::Format("dims overflow".into()))?;
    let mut classes = vec![0u8; n];
    r.read_exact(&mut classes)?;
    let occupancy = if version == PREDICTION_VERSION {
        Some((0..n).map(|_| read_f32(r)).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    Ok(VolumeFile {
        dims,
        voxel_size,
        origin,
        classes,
        occupancy,
    })
}

pub fn write_depth_map<T: Real>(w: &mut impl Write, d: &DepthMap<T>) -> Result<(), SceneError> {
    w.write_all(DEPTH_MAGIC)?;
    u32le(w, 1)?;
    u32le(w, 0)?;
    u32le(w, to_u32(d.width)?)?;
    u32le(w, to_u32(d.height)?)?;
    for &v in &d.depth {
        f32le(w, v.to_f64_lossy() as f32)?;
    }
    let flags: Vec<u8> = d.valid.iter().map(|&v| u8::from(v)).collect();
    w.write_all(&flags)?;
    Ok(())
}

pub fn read_depth_map<T: Real>(r: &mut impl Read) -> Result<DepthMap<T>, SceneError> {
    let version = read_header(r, DEPTH_MAGIC)?;
    if version != 1 {
        return Err(SceneError::Format(format!("unsupported version {version}")));
    }
    let width = read_u32(r)? as usize;
    let height = read_u32(r)? as usize;
    let n = width * height;
    let depth = (0..n)
        .map(|_| read_f32(r).map(|v| T::lit(v as f64)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut flags = vec![0u8; n];
    r.read_exact(&mut flags)?;
    Ok(DepthMap {
        width,
        height,
        depth,
        valid: flags.iter().map(|&f| f != 0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, render_gt_depth, SceneSpec};

    #[test]
    fn scene_round_trip() {
        let s = generate_scene::<f64>(&SceneSpec::default(), 9).unwrap();
        let v = VolumeFile::from_scene(&s);
        let mut buf = Vec::new();
        write_volume(&mut buf, &v).unwrap();
        assert_eq!(&buf[..8], SCENE_MAGIC);
        assert_eq!(buf.len(), 16 + 28 + s.grid().len());
        assert_eq!(read_volume(&mut buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn prediction_round_trip() {
        let v = VolumeFile {
            dims: [2, 1, 2],
            voxel_size: 0.5,
            origin: [1.0, 2.0, 3.0],
            classes: vec![0, 1, 2, 0],
            occupancy: Some(vec![0.1, 0.9, 0.75, 0.0]),
        };
        let mut buf = Vec::new();
        write_volume(&mut buf, &v).unwrap();
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), PREDICTION_VERSION);
        assert_eq!(read_volume(&mut buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTSCENE\x01\0\0\0\0\0\0\0".to_vec();
        assert!(read_volume(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn depth_round_trip() {
        let s = generate_scene::<f64>(&SceneSpec::default(), 2).unwrap();
        let d = render_gt_depth(&s, 1).unwrap();
        let mut buf = Vec::new();
        write_depth_map(&mut buf, &d).unwrap();
        let back: DepthMap<f64> = read_depth_map(&mut buf.as_slice()).unwrap();
        assert_eq!(back.valid, d.valid);
        for (a, b) in back.depth.iter().zip(&d.depth) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }
}
