//! Binary rasters for depth, flow and label images.
//!
//! Every raster starts with the same little-endian header:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic (`DFDP` depth, `DFFL` flow, `DFLB` labels) |
//! | 4      | 4    | format version, `u32` (currently 1)      |
//! | 8      | 4    | width, `u32`                            |
//! | 12     | 4    | height, `u32`                           |
//! | 16     | 8    | near clip, `f64`                        |
//! | 24     | 8    | far clip, `f64`                         |
//! | 32     | 96   | pose, 12 x `f64` (row-major R, then t)  |
//! | 128    | 48   | intrinsics, 6 x `f64` (fx fy cx cy w h) |
//!
//! Payloads follow the 176-byte header:
//!
//! * depth: `width * height` x `f32` z-depth, row-major;
//! * flow: `width * height` x (`f32` du, `f32` dv) interleaved, then the
//!   validity plane packed LSB-first, `ceil(width * height / 8)` bytes;
//! * labels: `width * height` x `u8`.
//!
//! For flow the pose is the source pose.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics, DepthMap, Pose};
use crate::flow::FlowField;
use crate::scene::{LabelImage, Mask};

pub const RASTER_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 176;
pub const DEPTH_MAGIC: [u8; 4] = *b"DFDP";
pub const FLOW_MAGIC: [u8; 4] = *b"DFFL";
pub const LABEL_MAGIC: [u8; 4] = *b"DFLB";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported raster version {0}")]
    Version(u32),
    #[error("header: {0}")]
    Header(#[from] CameraError),
    #[error("header resolution {header:?} disagrees with intrinsics {intrinsics:?}")]
    Shape { header: (u32, u32), intrinsics: (u32, u32) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterHeader {
    pub magic: [u8; 4],
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl RasterHeader {
    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.magic)?;
        w.write_u32::<LittleEndian>(RASTER_VERSION)?;
        w.write_u32::<LittleEndian>(self.width)?;
        w.write_u32::<LittleEndian>(self.height)?;
        w.write_f64::<LittleEndian>(self.near)?;
        w.write_f64::<LittleEndian>(self.far)?;
        for x in self.pose.to_array() {
            w.write_f64::<LittleEndian>(x)?;
        }
        for x in self.intrinsics.to_array() {
            w.write_f64::<LittleEndian>(x)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R, expect: [u8; 4]) -> Result<Self, RasterError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != expect {
            return Err(RasterError::Magic(magic));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != RASTER_VERSION {
            return Err(RasterError::Version(version));
        }
        let width = r.read_u32::<LittleEndian>()?;
        let height = r.read_u32::<LittleEndian>()?;
        let near = r.read_f64::<LittleEndian>()?;
        let far = r.read_f64::<LittleEndian>()?;
        let mut pose = [0.0; 12];
        r.read_f64_into::<LittleEndian>(&mut pose)?;
        let mut k = [0.0; 6];
        r.read_f64_into::<LittleEndian>(&mut k)?;
        let intrinsics = CameraIntrinsics::from_array(k)?;
        if (intrinsics.width, intrinsics.height) != (width, height) {
            return Err(RasterError::Shape { header: (width, height), intrinsics: (intrinsics.width, intrinsics.height) });
        }
        Ok(Self { magic, width, height, near, far, pose: Pose::from_array(pose)?, intrinsics })
    }
}

pub fn write_depth<W: Write>(w: &mut W, depth: &DepthMap, pose: &Pose, k: &CameraIntrinsics) -> io::Result<()> {
    RasterHeader {
        magic: DEPTH_MAGIC,
        width: depth.width,
        height: depth.height,
        near: depth.near as f64,
        far: depth.far as f64,
        pose: *pose,
        intrinsics: *k,
    }
    .write(w)?;
    for &z in &depth.z {
        w.write_f32::<LittleEndian>(z)?;
    }
    Ok(())
}

pub fn read_depth<R: Read>(r: &mut R) -> Result<(DepthMap, RasterHeader), RasterError> {
    let h = RasterHeader::read(r, DEPTH_MAGIC)?;
    let mut z = vec![0f32; h.width as usize * h.height as usize];
    r.read_f32_into::<LittleEndian>(&mut z)?;
    Ok((DepthMap { width: h.width, height: h.height, near: h.near as f32, far: h.far as f32, z }, h))
}

pub fn depth_to_bytes(depth: &DepthMap, pose: &Pose, k: &CameraIntrinsics) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * depth.z.len());
    write_depth(&mut out, depth, pose, k).expect("writing to a Vec cannot fail");
    out
}

/// Flow is stored in single precision; the in-memory field keeps `f64`.
pub fn write_flow<W: Write>(
    w: &mut W,
    flow: &FlowField,
    near: f64,
    far: f64,
    pose_src: &Pose,
    k: &CameraIntrinsics,
) -> io::Result<()> {
    RasterHeader { magic: FLOW_MAGIC, width: flow.width, height: flow.height, near, far, pose: *pose_src, intrinsics: *k }
        .write(w)?;
    for d in &flow.displacement {
        w.write_f32::<LittleEndian>(d[0] as f32)?;
        w.write_f32::<LittleEndian>(d[1] as f32)?;
    }
    let valid = Mask { width: flow.width, height: flow.height, bits: flow.valid.clone() };
    w.write_all(&valid.pack())
}

pub fn read_flow<R: Read>(r: &mut R) -> Result<(FlowField, RasterHeader), RasterError> {
    let h = RasterHeader::read(r, FLOW_MAGIC)?;
    let n = h.width as usize * h.height as usize;
    let mut raw = vec![0f32; 2 * n];
    r.read_f32_into::<LittleEndian>(&mut raw)?;
    let mut packed = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut packed)?;
    let valid = Mask::unpack(h.width, h.height, &packed).expect("sized above").bits;
    let displacement = raw.chunks_exact(2).map(|c| [c[0] as f64, c[1] as f64]).collect();
    Ok((FlowField { width: h.width, height: h.height, displacement, valid }, h))
}

pub fn write_labels<W: Write>(
    w: &mut W,
    labels: &LabelImage,
    near: f64,
    far: f64,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> io::Result<()> {
    RasterHeader { magic: LABEL_MAGIC, width: labels.width, height: labels.height, near, far, pose: *pose, intrinsics: *k }
        .write(w)?;
    w.write_all(&labels.labels)
}

pub fn read_labels<R: Read>(r: &mut R) -> Result<(LabelImage, RasterHeader), RasterError> {
    let h = RasterHeader::read(r, LABEL_MAGIC)?;
    let mut labels = vec![0u8; h.width as usize * h.height as usize];
    r.read_exact(&mut labels)?;
    Ok((LabelImage { width: h.width, height: h.height, labels }, h))
}
