//! Scenes: a six-camera rig plus ego-frame boxes.
//!
//! Scene files are JSON:
//!
//! ```json
//! {
//!   "version": 1,
//!   "scenes": [{
//!     "id": "demo",
//!     "cameras": [{
//!       "name": "CAM_FRONT",
//!       "intrinsics": {"fx": 560.0, "fy": 560.0, "cx": 352.0, "cy": 128.0, "width": 704, "height": 256},
//!       "extrinsics": {"rotation": [[0,-1,0],[0,0,-1],[1,0,0]], "translation": [0.0, 1.6, -1.0]}
//!     }],
//!     "boxes": [{"center": [12.0, 1.0, 0.85], "size": [4.6, 1.9, 1.7], "yaw": 0.3, "class": "car"}]
//!   }]
//! }
//! ```
//!
//! Exactly six cameras per scene. Extrinsics map ego to camera; rotations
//! within 1e-3 of orthonormal are snapped to the nearest rotation.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_box, Box3D, Camera, Extrinsics, Intrinsics};
use crate::labels::{rasterize_scene, stack_maps, LabelConfig, RoaMap};
use crate::tensor::Tensor;

pub const SCENE_FILE_VERSION: u32 = 1;
pub const CAMERA_COUNT: usize = 6;

/// Orthonormality tolerance for rotations read from scene files.
pub const ROTATION_REPAIR_TOL: f64 = 1e-3;

pub const CAMERA_NAMES: [&str; CAMERA_COUNT] = [
    "CAM_FRONT",
    "CAM_FRONT_RIGHT",
    "CAM_BACK_RIGHT",
    "CAM_BACK",
    "CAM_BACK_LEFT",
    "CAM_FRONT_LEFT",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBox {
    pub bbox: Box3D,
    pub class: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub cameras: Vec<Camera>,
    pub boxes: Vec<SceneBox>,
}

impl Scene {
    pub fn boxes3d(&self) -> Vec<Box3D> {
        self.boxes.iter().map(|b| b.bbox).collect()
    }

    /// The rig as seen through images resized to `width × height`.
    pub fn resized_cameras(&self, width: u32, height: u32) -> Vec<Camera> {
        self.cameras.iter().map(|c| c.resized(width, height)).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    version: u32,
    scenes: Vec<SceneDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    id: String,
    cameras: Vec<CameraDoc>,
    #[serde(default)]
    boxes: Vec<BoxDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    intrinsics: Intrinsics,
    extrinsics: ExtrinsicsDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtrinsicsDoc {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxDoc {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<String>,
}

fn field_error(origin: &str, field: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{origin}: {field}"),
        message: message.into(),
    }
}

fn scene_from_doc(doc: SceneDoc, index: usize, origin: &str) -> Result<Scene> {
    let at = |f: &str| format!("scenes[{index}].{f}");
    if doc.cameras.len() != CAMERA_COUNT {
        return Err(field_error(
            origin,
            at("cameras"),
            format!("a scene needs exactly {CAMERA_COUNT} cameras, found {}", doc.cameras.len()),
        ));
    }
    let cameras = doc
        .cameras
        .into_iter()
        .enumerate()
        .map(|(ci, cam)| {
            cam.intrinsics
                .validate()
                .map_err(|e| field_error(origin, at(&format!("cameras[{ci}].intrinsics")), e.to_string()))?;
            let r = &cam.extrinsics.rotation;
            let rotation = Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            );
            let t = cam.extrinsics.translation;
            if !t.iter().all(|v| v.is_finite()) {
                return Err(field_error(origin, at(&format!("cameras[{ci}].extrinsics.translation")), "non-finite"));
            }
            let extrinsics = Extrinsics::orthonormalized(rotation, Vector3::from(t), ROTATION_REPAIR_TOL).map_err(|e| match e {
                Error::InvalidRotation(m) => Error::InvalidRotation(format!("{origin}: {}: {m}", at(&format!("cameras[{ci}].extrinsics.rotation")))),
                other => other,
            })?;
            Ok(Camera {
                intrinsics: cam.intrinsics,
                extrinsics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let boxes = doc
        .boxes
        .into_iter()
        .enumerate()
        .map(|(bi, b)| {
            let bbox = Box3D {
                center: b.center,
                size: b.size,
                yaw: b.yaw,
            };
            bbox.validate()
                .map_err(|e| field_error(origin, at(&format!("boxes[{bi}]")), e.to_string()))?;
            Ok(SceneBox { bbox, class: b.class })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        id: doc.id,
        cameras,
        boxes,
    })
}

/// Parses and validates a scene document. `origin` names the source in
/// error messages.
pub fn parse_scenes(text: &str, origin: &str) -> Result<Vec<Scene>> {
    let doc: FileDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("{origin}:{}:{}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if doc.version != SCENE_FILE_VERSION {
        return Err(field_error(
            origin,
            "version".into(),
            format!("unsupported version {} (expected {SCENE_FILE_VERSION})", doc.version),
        ));
    }
    doc.scenes
        .into_iter()
        .enumerate()
        .map(|(i, s)| scene_from_doc(s, i, origin))
        .collect()
}

pub fn parse_scene_file(path: &Path) -> Result<Vec<Scene>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenes(&text, &path.display().to_string())
}

pub fn scenes_to_json(scenes: &[Scene]) -> String {
    let doc = FileDoc {
        version: SCENE_FILE_VERSION,
        scenes: scenes
            .iter()
            .map(|s| SceneDoc {
                id: s.id.clone(),
                cameras: s
                    .cameras
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let r = c.extrinsics.rotation();
                        let t = c.extrinsics.translation();
                        CameraDoc {
                            name: CAMERA_NAMES.get(i).map(|n| n.to_string()),
                            intrinsics: c.intrinsics,
                            extrinsics: ExtrinsicsDoc {
                                rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
                                translation: [t.x, t.y, t.z],
                            },
                        }
                    })
                    .collect(),
                boxes: s
                    .boxes
                    .iter()
                    .map(|b| BoxDoc {
                        center: b.bbox.center,
                        size: b.bbox.size,
                        yaw: b.bbox.yaw,
                        class: b.class.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("scene documents serialize")
}

pub fn write_scene_file(path: &Path, scenes: &[Scene]) -> Result<()> {
    fs::write(path, scenes_to_json(scenes)).map_err(|e| Error::io(path, e))
}

/// Size priors `(class, probability, length, width, height)`.
const CLASS_PRIORS: [(&str, f64, [f64; 3]); 3] = [
    ("car", 0.6, [4.6, 1.9, 1.7]),
    ("truck", 0.15, [8.0, 2.6, 3.2]),
    ("pedestrian", 0.25, [0.7, 0.7, 1.75]),
];

pub const SYNTH_DISC_RADIUS: f64 = 50.0;
const SYNTH_MIN_RADIUS: f64 = 4.0;
const CAMERA_HEIGHT: f64 = 1.6;
const CAMERA_RADIUS: f64 = 1.0;

/// A nuScenes-like ring of six 704×256 cameras spaced 60° apart.
pub fn synthetic_rig() -> Vec<Camera> {
    let intrinsics = Intrinsics {
        fx: 560.0,
        fy: 560.0,
        cx: 352.0,
        cy: 128.0,
        width: 704,
        height: 256,
    };
    // front, front-right, back-right, back, back-left, front-left
    [0.0, -60.0, -120.0, 180.0, 120.0, 60.0]
        .iter()
        .map(|deg: &f64| {
            let yaw = deg.to_radians();
            let position = Vector3::new(CAMERA_RADIUS * yaw.cos(), CAMERA_RADIUS * yaw.sin(), CAMERA_HEIGHT);
            Camera {
                intrinsics,
                extrinsics: Extrinsics::looking_at_yaw(position, yaw),
            }
        })
        .collect()
}

/// Deterministic scene: boxes uniform over a 50 m disc around the ego,
/// resting on the ground, sized from car/truck/pedestrian priors.
pub fn gen_synthetic(seed: u64, n_boxes: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = (0..n_boxes)
        .map(|_| {
            let r = (SYNTH_MIN_RADIUS.powi(2)
                + rng.random::<f64>() * (SYNTH_DISC_RADIUS.powi(2) - SYNTH_MIN_RADIUS.powi(2)))
            .sqrt();
            let theta = rng.random_range(-PI..PI);
            let pick: f64 = rng.random();
            let mut acc = 0.0;
            let (class, _, prior) = CLASS_PRIORS
                .iter()
                .find(|(_, p, _)| {
                    acc += p;
                    pick < acc
                })
                .unwrap_or(&CLASS_PRIORS[0]);
            let size: [f64; 3] = std::array::from_fn(|i| prior[i] * rng.random_range(0.85..1.15));
            SceneBox {
                bbox: Box3D {
                    center: [r * theta.cos(), r * theta.sin(), size[2] / 2.0],
                    size,
                    yaw: rng.random_range(-PI..PI),
                },
                class: Some(class.to_string()),
            }
        })
        .collect();
    Scene {
        id: format!("synthetic-{seed}"),
        cameras: synthetic_rig(),
        boxes,
    }
}

fn class_color(class: Option<&str>) -> [f64; 3] {
    match class {
        Some("truck") => [0.15, 0.65, 0.3],
        Some("pedestrian") => [0.1, 0.3, 0.85],
        _ => [0.8, 0.25, 0.1],
    }
}

/// Renders a toy 6×3×H×W image batch: a sky/ground backdrop with faint
/// texture, plus each visible box's projected rectangle added in its class
/// colour (overlaps add up).
pub fn render_images(scene: &Scene, height: usize, width: usize) -> Tensor {
    let cams = scene.resized_cameras(width as u32, height as u32);
    let plane = height * width;
    let mut data = vec![0.0; cams.len() * 3 * plane];
    for (ci, cam) in cams.iter().enumerate() {
        let img = &mut data[ci * 3 * plane..][..3 * plane];
        let horizon = cam.intrinsics.cy;
        for y in 0..height {
            let base = if (y as f64 + 0.5) < horizon { [0.45, 0.55, 0.7] } else { [0.3, 0.3, 0.28] };
            for x in 0..width {
                let tex = 0.05 * ((0.31 * x as f64 + 0.17 * y as f64 + ci as f64).sin());
                for ch in 0..3 {
                    img[ch * plane + y * width + x] = base[ch] + tex;
                }
            }
        }
        for b in &scene.boxes {
            let Some(rect) = project_box(&b.bbox, &cam.extrinsics, &cam.intrinsics, crate::geometry::DEFAULT_NEAR) else {
                continue;
            };
            let color = class_color(b.class.as_deref());
            let cols = (rect.u_min.round() as usize)..(rect.u_max.round() as usize).min(width);
            let rows = (rect.v_min.round() as usize)..(rect.v_max.round() as usize).min(height);
            for y in rows {
                for x in cols.clone() {
                    for ch in 0..3 {
                        img[ch * plane + y * width + x] += 0.6 * color[ch];
                    }
                }
            }
        }
    }
    Tensor::new(&[cams.len(), 3, height, width], data).expect("render extents")
}

/// One training sample: rendered images and stride-16 labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub images: Tensor,
    pub labels: Tensor,
    pub maps: Vec<RoaMap>,
}

pub fn make_sample(scene: &Scene, height: usize, width: usize, cfg: &LabelConfig) -> Result<Sample> {
    let cams = scene.resized_cameras(width as u32, height as u32);
    let maps = rasterize_scene(&scene.boxes3d(), &cams, cfg)?;
    Ok(Sample {
        images: render_images(scene, height, width),
        labels: stack_maps(&maps)?,
        maps,
    })
}
