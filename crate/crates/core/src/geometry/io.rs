//! Wavefront-style ASCII meshes (`v x y z`, `f i j k`, 1-based) and the
//! per-jaw manifest that lists tooth files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JawModel, ToothLabel, ToothMesh, Vec3};
use crate::error::{Error, Result};

pub const JAW_MANIFEST: &str = "jaw.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JawManifestEntry {
    pub label: ToothLabel,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JawManifest {
    pub sample_id: String,
    pub patch_size: usize,
    /// Offset that was added to every vertex when the model was centered.
    pub normalization_offset: [f64; 3],
    pub teeth: Vec<JawManifestEntry>,
}

pub fn obj_string(mesh: &ToothMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 48 + mesh.faces.len() * 24);
    // f64 Display is the shortest representation that parses back exactly
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj(mesh: &ToothMesh, path: &Path) -> Result<()> {
    fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn parse_obj(text: &str, label: ToothLabel, patch_size: usize, path: &Path) -> Result<ToothMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let bad = |what: &str| Error::parse(path, format!("line {}: {what}", lineno + 1));
        match parts.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for x in &mut c {
                    *x = parts
                        .next()
                        .ok_or_else(|| bad("vertex needs 3 coordinates"))?
                        .parse()
                        .map_err(|_| bad("bad coordinate"))?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut f = [0usize; 3];
                for x in &mut f {
                    let tok = parts.next().ok_or_else(|| bad("face needs 3 indices"))?;
                    // tolerate `i/t/n` references
                    let idx: usize = tok.split('/').next().unwrap_or("").parse().map_err(|_| bad("bad face index"))?;
                    if idx == 0 {
                        return Err(bad("face indices are 1-based"));
                    }
                    *x = idx - 1;
                }
                if parts.next().is_some() {
                    return Err(bad("only triangles are supported"));
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    ToothMesh::new(label, vertices, faces, patch_size)
}

pub fn read_obj(path: &Path, label: ToothLabel, patch_size: usize) -> Result<ToothMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, label, patch_size, path)
}

/// Writes one `<fdi>.obj` per tooth plus `jaw.json` into `dir`.
pub fn write_jaw(model: &JawModel, dir: &Path, normalization_offset: Vec3) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut patch_size = super::DEFAULT_PATCH_SIZE;
    for (label, mesh) in &model.teeth {
        let file = format!("{label}.obj");
        write_obj(mesh, &dir.join(&file))?;
        patch_size = mesh.patch_size();
        entries.push(JawManifestEntry { label: *label, file });
    }
    let manifest = JawManifest {
        sample_id: model.sample_id.clone(),
        patch_size,
        normalization_offset: normalization_offset.into(),
        teeth: entries,
    };
    let path = dir.join(JAW_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_jaw(dir: &Path) -> Result<(JawModel, JawManifest)> {
    let path = dir.join(JAW_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: JawManifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    let teeth = manifest
        .teeth
        .iter()
        .map(|e| read_obj(&dir.join(&e.file), e.label, manifest.patch_size))
        .collect::<Result<Vec<_>>>()?;
    Ok((JawModel::new(manifest.sample_id.clone(), teeth)?, manifest))
}
