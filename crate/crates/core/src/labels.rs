//! Region-oriented attention labels.
//!
//! Each camera starts from an all-zero map at feature stride; every box that
//! projects into the camera adds 1 to each cell its rectangle covers, so
//! overlapping boxes accumulate. The binary variant clamps counts to {0, 1}.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{project_box, Box3D, Camera, Rect2D, DEFAULT_NEAR};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RegionType {
    #[default]
    Overlap,
    Binary,
}

impl FromStr for RegionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap" => Ok(RegionType::Overlap),
            "binary" => Ok(RegionType::Binary),
            other => Err(Error::Config(format!(
                "region type must be overlap|binary, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for RegionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegionType::Overlap => "overlap",
            RegionType::Binary => "binary",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelConfig {
    pub stride: usize,
    pub near: f64,
    pub region_type: RegionType,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            stride: 16,
            near: DEFAULT_NEAR,
            region_type: RegionType::Overlap,
        }
    }
}

/// Per-camera attention map at feature stride.
#[derive(Clone, Debug, PartialEq)]
pub struct RoaMap {
    pub camera_index: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl RoaMap {
    pub fn zeros(camera_index: usize, height: usize, width: usize) -> Self {
        RoaMap {
            camera_index,
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// 1×1×H×W tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.values.clone())
            .expect("map extents are positive")
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Cells `[floor(min/stride), ceil(max/stride))` along one axis, clipped to `cells`.
pub fn cell_span(min: f64, max: f64, stride: usize, cells: usize) -> (usize, usize) {
    let s = stride as f64;
    let lo = (min / s).floor().max(0.0) as usize;
    let hi = ((max / s).ceil().max(0.0) as usize).min(cells);
    (lo.min(hi), hi)
}

/// Adds 1 to every cell of `map` covered by `rect` (full-resolution pixels).
pub fn stamp(map: &mut RoaMap, rect: &Rect2D, stride: usize) {
    let (r0, r1) = cell_span(rect.v_min, rect.v_max, stride, map.height);
    let (c0, c1) = cell_span(rect.u_min, rect.u_max, stride, map.width);
    for r in r0..r1 {
        for v in &mut map.values[r * map.width + c0..r * map.width + c1] {
            *v += 1.0;
        }
    }
}

pub fn label_extent(camera: &Camera, stride: usize) -> Result<(usize, usize)> {
    let (w, h) = (camera.intrinsics.width as usize, camera.intrinsics.height as usize);
    for extent in [h, w] {
        if stride == 0 || extent % stride != 0 {
            return Err(Error::StrideMismatch { extent, stride });
        }
    }
    Ok((h / stride, w / stride))
}

/// One map per camera, in rig order.
pub fn rasterize_scene(boxes: &[Box3D], cameras: &[Camera], cfg: &LabelConfig) -> Result<Vec<RoaMap>> {
    cameras
        .iter()
        .enumerate()
        .map(|(index, cam)| {
            let (h, w) = label_extent(cam, cfg.stride)?;
            let mut map = RoaMap::zeros(index, h, w);
            for b in boxes {
                if let Some(rect) = project_box(b, &cam.extrinsics, &cam.intrinsics, cfg.near) {
                    stamp(&mut map, &rect, cfg.stride);
                }
            }
            Ok(match cfg.region_type {
                RegionType::Overlap => map,
                RegionType::Binary => binarize(&map),
            })
        })
        .collect()
}

pub fn binarize(map: &RoaMap) -> RoaMap {
    RoaMap {
        values: map
            .values
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect(),
        ..map.clone()
    }
}

/// Stacks per-camera maps into an N×1×H×W tensor.
pub fn stack_maps(maps: &[RoaMap]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::shape("stack_maps", "no maps"))?;
    let (h, w) = (first.height, first.width);
    if maps.iter().any(|m| m.height != h || m.width != w) {
        return Err(Error::shape("stack_maps", "maps differ in extent"));
    }
    let data = maps.iter().flat_map(|m| m.values.iter().copied()).collect();
    Tensor::new(&[maps.len(), 1, h, w], data)
}
