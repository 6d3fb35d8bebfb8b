//! On-disk formats: OBJ meshes, skeleton JSON, skinning weights as JSON lines,
//! scene and sequence manifests, run reports and traces.
//!
//! A scene directory holds a `scene.json` manifest:
//!
//! ```json
//! {
//!   "source_avatar": "source_avatar.obj",
//!   "target_avatar": "target_avatar.obj",
//!   "source_skeleton": "source_skeleton.json",
//!   "target_skeleton": "target_skeleton.json",
//!   "source_weights": "source_weights.jsonl",
//!   "target_weights": "target_weights.jsonl",
//!   "garments": [{ "name": "shirt", "mesh": "shirt.obj", "fit_region": null, "connected": false }],
//!   "config": "config.json"
//! }
//! ```
//!
//! `target_weights` and `config` are optional. Paths are relative to the
//! manifest.

pub mod obj;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bone_local::VertexWeights;
use crate::contact::FitLabel;
use crate::error::{RefitError, Result};
use crate::geometry::{Mesh, Topology, Vec3};
use crate::hierarchy::GarmentResult;
use crate::losses::LossReport;
use crate::optimizer::TraceRecord;
use crate::scene::{GarmentLayer, RefitConfig, Scene};
use crate::skeleton::{Bone, Skeleton};

pub use obj::{parse_obj, read_obj, write_obj};

pub const SCENE_MANIFEST: &str = "scene.json";
pub const SEQUENCE_MANIFEST: &str = "sequence.json";
pub const REPORT_FILE: &str = "report.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RefitError + '_ {
    move |source| RefitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path, e: serde_json::Error) -> RefitError {
    RefitError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = std::fs::remove_file(&tmp);
        return Err(io_err(path)(e));
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(&r).expect("serializable record"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_obj_file(path: &Path, mesh: &Mesh) -> Result<()> {
    write_atomic(path, write_obj(mesh).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BoneRecord {
    name: String,
    parent: Option<String>,
    head: [f64; 3],
    direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SkeletonFile {
    crotch_reference: [f64; 3],
    bones: Vec<BoneRecord>,
}

pub fn skeleton_to_json(skeleton: &Skeleton) -> String {
    let file = SkeletonFile {
        crotch_reference: skeleton.crotch_reference.into(),
        bones: skeleton
            .bones
            .iter()
            .map(|b| BoneRecord {
                name: b.name.clone(),
                parent: b.parent.map(|p| skeleton.bones[p].name.clone()),
                head: b.head.into(),
                direction: b.direction.into(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("serializable skeleton") + "\n"
}

/// Parses a skeleton file. Parents are referenced by name and must appear
/// before their children.
pub fn parse_skeleton(text: &str, path: &Path) -> Result<Skeleton> {
    let file: SkeletonFile = serde_json::from_str(text).map_err(|e| json_err(path, e))?;
    let mut bones: Vec<Bone> = Vec::with_capacity(file.bones.len());
    for r in file.bones {
        if bones.iter().any(|b| b.name == r.name) {
            return Err(RefitError::InvalidSkeleton(format!("duplicate bone name `{}`", r.name)));
        }
        let parent = match &r.parent {
            None => None,
            Some(p) => Some(bones.iter().position(|b| &b.name == p).ok_or_else(|| {
                RefitError::InvalidSkeleton(format!(
                    "bone `{}` names parent `{p}`, which is not defined before it",
                    r.name
                ))
            })?),
        };
        bones.push(Bone {
            name: r.name,
            parent,
            head: Vec3::from(r.head),
            direction: Vec3::from(r.direction),
        });
    }
    Skeleton::new(bones, Vec3::from(file.crotch_reference))
}

pub fn read_skeleton(path: &Path) -> Result<Skeleton> {
    parse_skeleton(&read_text(path)?, path)
}

/// One `{bone_name: weight}` object per vertex. Refitted weights may be
/// slightly negative, so any finite value is accepted on reading.
pub fn weights_to_jsonl(weights: &[VertexWeights], skeleton: &Skeleton) -> String {
    let mut text = String::new();
    for w in weights {
        let record: BTreeMap<&str, f64> = w.iter().map(|&(b, x)| (skeleton.bones[b].name.as_str(), x)).collect();
        text.push_str(&serde_json::to_string(&record).expect("serializable weights"));
        text.push('\n');
    }
    text
}

pub fn parse_weights(text: &str, skeleton: &Skeleton, path: &Path) -> Result<Vec<VertexWeights>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| RefitError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: BTreeMap<String, f64> = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let mut w = Vec::with_capacity(record.len());
        for (name, x) in record {
            let bone = skeleton
                .bone_index(&name)
                .ok_or_else(|| err(format!("unknown bone `{name}`")))?;
            if !x.is_finite() {
                return Err(err(format!("invalid weight {x} for bone `{name}`")));
            }
            w.push((bone, x));
        }
        w.sort_by_key(|e| e.0);
        out.push(w);
    }
    Ok(out)
}

pub fn read_weights(path: &Path, skeleton: &Skeleton) -> Result<Vec<VertexWeights>> {
    parse_weights(&read_text(path)?, skeleton, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentEntry {
    pub name: String,
    pub mesh: PathBuf,
    #[serde(default)]
    pub fit_region: Option<FitLabel>,
    #[serde(default)]
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub source_avatar: PathBuf,
    pub target_avatar: PathBuf,
    pub source_skeleton: PathBuf,
    pub target_skeleton: PathBuf,
    pub source_weights: PathBuf,
    #[serde(default)]
    pub target_weights: Option<PathBuf>,
    pub garments: Vec<GarmentEntry>,
    #[serde(default)]
    pub config: Option<PathBuf>,
}

/// A loaded scene directory.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    pub scene: Scene,
    pub config: Option<RefitConfig>,
}

pub fn read_config(path: &Path) -> Result<RefitConfig> {
    let config: RefitConfig = read_json(path)?;
    config.validate()?;
    Ok(config)
}

/// Loads and cross-validates the scene in `dir`.
pub fn load_scene(dir: &Path) -> Result<SceneBundle> {
    let manifest: SceneManifest = read_json(&dir.join(SCENE_MANIFEST))?;
    let p = |rel: &Path| dir.join(rel);
    let source_skeleton = read_skeleton(&p(&manifest.source_skeleton))?;
    let target_skeleton = read_skeleton(&p(&manifest.target_skeleton))?;
    source_skeleton.check_correspondence(&target_skeleton)?;
    let source_avatar = read_obj(&p(&manifest.source_avatar))?;
    let target_avatar = read_obj(&p(&manifest.target_avatar))?;
    let source_skinning = read_weights(&p(&manifest.source_weights), &source_skeleton)?;
    let target_skinning = match &manifest.target_weights {
        Some(w) => Some(read_weights(&p(w), &target_skeleton)?),
        None => None,
    };
    let mut garments = Vec::with_capacity(manifest.garments.len());
    for g in &manifest.garments {
        let mesh = read_obj(&p(&g.mesh))?;
        Topology::build(&mesh)?;
        garments.push(GarmentLayer {
            name: g.name.clone(),
            mesh,
            fit_region: g.fit_region,
            connected: g.connected,
        });
    }
    let scene = Scene {
        source_avatar,
        target_avatar,
        source_skeleton,
        target_skeleton,
        source_skinning,
        target_skinning,
        garments,
    };
    scene.validate()?;
    let config = match &manifest.config {
        Some(c) => Some(read_config(&p(c))?),
        None => None,
    };
    Ok(SceneBundle {
        dir: dir.to_path_buf(),
        manifest,
        scene,
        config,
    })
}

/// Writes `scene` (and optionally `config`) as a scene directory.
pub fn save_scene(dir: &Path, scene: &Scene, config: Option<&RefitConfig>) -> Result<SceneManifest> {
    create_dir(dir)?;
    let manifest = SceneManifest {
        source_avatar: "source_avatar.obj".into(),
        target_avatar: "target_avatar.obj".into(),
        source_skeleton: "source_skeleton.json".into(),
        target_skeleton: "target_skeleton.json".into(),
        source_weights: "source_weights.jsonl".into(),
        target_weights: scene.target_skinning.as_ref().map(|_| "target_weights.jsonl".into()),
        garments: scene
            .garments
            .iter()
            .map(|g| GarmentEntry {
                name: g.name.clone(),
                mesh: format!("{}.obj", g.name).into(),
                fit_region: g.fit_region,
                connected: g.connected,
            })
            .collect(),
        config: config.map(|_| "config.json".into()),
    };
    let p = |rel: &Path| dir.join(rel);
    write_obj_file(&p(&manifest.source_avatar), &scene.source_avatar)?;
    write_obj_file(&p(&manifest.target_avatar), &scene.target_avatar)?;
    write_atomic(&p(&manifest.source_skeleton), skeleton_to_json(&scene.source_skeleton).as_bytes())?;
    write_atomic(&p(&manifest.target_skeleton), skeleton_to_json(&scene.target_skeleton).as_bytes())?;
    write_atomic(
        &p(&manifest.source_weights),
        weights_to_jsonl(&scene.source_skinning, &scene.source_skeleton).as_bytes(),
    )?;
    if let (Some(path), Some(w)) = (&manifest.target_weights, &scene.target_skinning) {
        write_atomic(&p(path), weights_to_jsonl(w, &scene.target_skeleton).as_bytes())?;
    }
    for (g, entry) in scene.garments.iter().zip(&manifest.garments) {
        write_obj_file(&p(&entry.mesh), &g.mesh)?;
    }
    if let (Some(path), Some(c)) = (&manifest.config, config) {
        write_json(&p(path), c)?;
    }
    write_json(&dir.join(SCENE_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// `sequence.json`: scene directories of consecutive frames, relative to the
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub frames: Vec<PathBuf>,
    #[serde(default)]
    pub config: Option<PathBuf>,
}

pub fn save_sequence(dir: &Path, frames: &[Scene], config: Option<&RefitConfig>) -> Result<SequenceManifest> {
    create_dir(dir)?;
    let manifest = SequenceManifest {
        frames: (0..frames.len()).map(|i| format!("frame_{i:04}").into()).collect(),
        config: config.map(|_| "config.json".into()),
    };
    for (scene, rel) in frames.iter().zip(&manifest.frames) {
        save_scene(&dir.join(rel), scene, None)?;
    }
    if let (Some(path), Some(c)) = (&manifest.config, config) {
        write_json(&dir.join(path), c)?;
    }
    write_json(&dir.join(SEQUENCE_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Loads every frame; frames are returned in manifest order together with
/// the optional shared configuration.
pub fn load_sequence(dir: &Path) -> Result<(Vec<SceneBundle>, Option<RefitConfig>)> {
    let manifest: SequenceManifest = read_json(&dir.join(SEQUENCE_MANIFEST))?;
    let frames = manifest
        .frames
        .iter()
        .map(|f| load_scene(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let config = match &manifest.config {
        Some(c) => Some(read_config(&dir.join(c))?),
        None => None,
    };
    Ok((frames, config))
}

/// Per-garment summary stored in `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentReport {
    pub name: String,
    pub mesh: PathBuf,
    pub weights: PathBuf,
    pub trace: PathBuf,
    pub vertices: usize,
    pub faces: usize,
    pub epsilon: f64,
    pub fit_region: FitLabel,
    pub fit_region_vertices: usize,
    pub connections: usize,
    pub collision_faces: usize,
    pub max_weight_residual: f64,
    pub max_weight_sum_error: f64,
    pub final_report: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub garments: Vec<GarmentReport>,
}

/// Writes refitted meshes, final weights, traces and `report.json` to `dir`.
pub fn save_results(dir: &Path, results: &[GarmentResult], skeleton: &Skeleton) -> Result<RunReport> {
    create_dir(dir)?;
    let mut garments = Vec::with_capacity(results.len());
    for r in results {
        let report = GarmentReport {
            name: r.name.clone(),
            mesh: format!("{}.obj", r.name).into(),
            weights: format!("{}_weights.jsonl", r.name).into(),
            trace: format!("trace_{}.jsonl", r.name).into(),
            vertices: r.mesh.vertex_count(),
            faces: r.mesh.face_count(),
            epsilon: r.epsilon,
            fit_region: r.fit_region,
            fit_region_vertices: r.region.len(),
            connections: r.connections.len(),
            collision_faces: r.collision_faces,
            max_weight_residual: r.max_weight_residual,
            max_weight_sum_error: r.max_weight_sum_error,
            final_report: r.final_report,
        };
        write_obj_file(&dir.join(&report.mesh), &r.mesh)?;
        write_atomic(&dir.join(&report.weights), weights_to_jsonl(&r.weights, skeleton).as_bytes())?;
        write_jsonl(&dir.join(&report.trace), &r.trace)?;
        garments.push(report);
    }
    let report = RunReport { garments };
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RefitError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
