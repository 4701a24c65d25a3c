//! Rig files: JSON describing the rest mesh, an optional camera and the pose
//! model. Blendshape bases live in a side file of little-endian `f64`
//! values, row-major with the declared shape.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{AnimError, AnimModel, Blendshape, Bone, EndSite, JacobianField, SkeletalLBS, DEFAULT_EXPRESSION_SCALE};
use crate::mesh::{load_mesh, Camera, Mesh, Vec3};

pub const RIG_FORMAT: &str = "motionfit-rig";
pub const RIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub format: String,
    pub version: u32,
    /// Mesh path, relative to the rig file's directory.
    pub mesh: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Skeletal(SkeletonSpec),
    Blendshape {
        #[serde(default = "default_scale")]
        scale: f64,
        basis: BasisRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        skeleton: Option<SkeletonSpec>,
    },
    JacobianField,
}

fn default_scale() -> f64 {
    DEFAULT_EXPRESSION_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub bones: Vec<BoneSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub end_sites: Vec<EndSiteSpec>,
    /// One row per vertex, one column per bone.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneSpec {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    /// Rest-pose pivot (bone axes are world-aligned at rest).
    pub head: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndSiteSpec {
    pub bone: String,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRef {
    /// Relative to the rig file's directory.
    pub path: String,
    pub rows: usize,
    pub cols: usize,
}

/// A loaded rig.
#[derive(Debug, Clone)]
pub struct Rig {
    pub mesh: Mesh,
    pub camera: Option<Camera>,
    pub model: AnimModel,
}

impl SkeletonSpec {
    pub fn from_model(model: &SkeletalLBS) -> Self {
        let names: Vec<&str> = model.bones().iter().map(|b| b.name.as_str()).collect();
        let b = model.bone_count();
        SkeletonSpec {
            bones: model
                .bones()
                .iter()
                .map(|bone| BoneSpec { name: bone.name.clone(), parent: bone.parent.map(|p| names[p].to_string()), head: bone.head })
                .collect(),
            end_sites: model.end_sites().iter().map(|s| EndSiteSpec { bone: names[s.bone].to_string(), position: s.position }).collect(),
            weights: model.weights().chunks(b).map(|r| r.to_vec()).collect(),
        }
    }

    pub fn build(&self, rest: Mesh) -> Result<SkeletalLBS, AnimError> {
        let index = |name: &str| -> Result<usize, AnimError> {
            self.bones.iter().position(|b| b.name == name).ok_or_else(|| AnimError::InvalidRig(format!("unknown bone {name:?}")))
        };
        let mut bones = Vec::with_capacity(self.bones.len());
        for b in &self.bones {
            let parent = match &b.parent {
                Some(p) => Some(index(p)?),
                None => None,
            };
            bones.push(Bone { name: b.name.clone(), parent, head: b.head });
        }
        let end_sites = self.end_sites.iter().map(|s| Ok(EndSite { bone: index(&s.bone)?, position: s.position })).collect::<Result<Vec<_>, AnimError>>()?;
        let nb = bones.len();
        if self.weights.len() != rest.vertex_count() {
            return Err(AnimError::InvalidRig(format!("{} weight rows for {} vertices", self.weights.len(), rest.vertex_count())));
        }
        if let Some(i) = self.weights.iter().position(|r| r.len() != nb) {
            return Err(AnimError::InvalidRig(format!("weight row {i} has {} entries for {nb} bones", self.weights[i].len())));
        }
        SkeletalLBS::new(rest, bones, end_sites, self.weights.concat())
    }
}

impl RigFile {
    pub fn skeletal(mesh: impl Into<String>, camera: Option<Camera>, model: &SkeletalLBS) -> Self {
        RigFile { format: RIG_FORMAT.into(), version: RIG_VERSION, mesh: mesh.into(), camera, model: ModelSpec::Skeletal(SkeletonSpec::from_model(model)) }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), AnimError> {
        let path = path.as_ref();
        let io = |source| AnimError::Io { path: path.display().to_string(), source };
        let mut f = BufWriter::new(fs::File::create(path).map_err(io)?);
        serde_json::to_writer_pretty(&mut f, self).map_err(|e| AnimError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        f.write_all(b"\n").map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, AnimError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AnimError::Io { path: path.display().to_string(), source })?;
        let rig: RigFile = serde_json::from_str(&text).map_err(|e| AnimError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        if rig.format != RIG_FORMAT || rig.version != RIG_VERSION {
            return Err(AnimError::Parse {
                path: path.display().to_string(),
                message: format!("unsupported rig format {:?} version {}", rig.format, rig.version),
            });
        }
        Ok(rig)
    }
}

/// Reads a rig file together with the mesh and basis files it references.
pub fn load_rig(path: impl AsRef<Path>) -> Result<Rig, AnimError> {
    let path = path.as_ref();
    let file = RigFile::read(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mesh_path = dir.join(&file.mesh);
    let mesh = load_mesh(&mesh_path).map_err(|e| AnimError::Parse { path: mesh_path.display().to_string(), message: e.to_string() })?;
    let model = match &file.model {
        ModelSpec::Skeletal(s) => AnimModel::Skeletal(s.build(mesh.clone())?),
        ModelSpec::Blendshape { scale, basis, skeleton } => {
            let data = read_basis(dir.join(&basis.path), basis.rows, basis.cols)?;
            let skel = skeleton.as_ref().map(|s| s.build(mesh.clone())).transpose()?;
            AnimModel::Blendshape(Blendshape::new(mesh.clone(), data, basis.cols, *scale, skel)?)
        }
        ModelSpec::JacobianField => AnimModel::JacobianField(JacobianField::new(mesh.clone())?),
    };
    Ok(Rig { mesh, camera: file.camera, model })
}

pub fn read_basis(path: impl AsRef<Path>, rows: usize, cols: usize) -> Result<Vec<f64>, AnimError> {
    let path = path.as_ref();
    let io = |source| AnimError::Io { path: path.display().to_string(), source };
    let mut r = BufReader::new(fs::File::open(path).map_err(io)?);
    let count = rows.checked_mul(cols).ok_or_else(|| AnimError::InvalidRig("basis shape overflows".into()))?;
    let mut out = vec![0.0; count];
    r.read_f64_into::<LittleEndian>(&mut out).map_err(io)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(AnimError::Parse { path: path.display().to_string(), message: format!("{} trailing bytes after {rows}×{cols} basis", rest.len()) });
    }
    Ok(out)
}

pub fn write_basis(path: impl AsRef<Path>, data: &[f64]) -> Result<(), AnimError> {
    let path = path.as_ref();
    let io = |source| AnimError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for &x in data {
        w.write_f64::<LittleEndian>(x).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anim::random_orthonormal_basis;
    use crate::mesh::write_obj;
    use rand::SeedableRng;

    const EXAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/example_rig.json");

    #[test]
    fn example_rig_loads() {
        let rig = load_rig(EXAMPLE).unwrap();
        let AnimModel::Skeletal(s) = &rig.model else { panic!("expected a skeletal rig") };
        assert_eq!(s.bone_count(), 2);
        assert_eq!(s.joint_count(), 3);
        assert!(rig.camera.is_some());
        let p = rig.model.p_init();
        assert_eq!(rig.model.apply(&p).unwrap(), rig.mesh.vertices());
    }

    #[test]
    fn skeletal_round_trip() {
        let rig = load_rig(EXAMPLE).unwrap();
        let AnimModel::Skeletal(s) = &rig.model else { unreachable!() };
        let dir = tempfile::tempdir().unwrap();
        write_obj(&rig.mesh, fs::File::create(dir.path().join("m.obj")).unwrap()).unwrap();
        let file = RigFile::skeletal("m.obj", rig.camera.clone(), s);
        file.write(dir.path().join("r.json")).unwrap();
        assert_eq!(RigFile::read(dir.path().join("r.json")).unwrap(), file);
        let again = load_rig(dir.path().join("r.json")).unwrap();
        let AnimModel::Skeletal(t) = &again.model else { unreachable!() };
        assert_eq!(t.weights(), s.weights());
        assert_eq!(t.bones(), s.bones());
    }

    #[test]
    fn blendshape_and_jacobian_rigs() {
        let rig = load_rig(EXAMPLE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_obj(&rig.mesh, fs::File::create(dir.path().join("m.obj")).unwrap()).unwrap();
        let rows = 3 * rig.mesh.vertex_count();
        let basis = random_orthonormal_basis(rows, 2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        write_basis(dir.path().join("b.bin"), &basis).unwrap();
        let file = RigFile {
            format: RIG_FORMAT.into(),
            version: RIG_VERSION,
            mesh: "m.obj".into(),
            camera: None,
            model: ModelSpec::Blendshape { scale: 5.0, basis: BasisRef { path: "b.bin".into(), rows, cols: 2 }, skeleton: None },
        };
        file.write(dir.path().join("bs.json")).unwrap();
        let AnimModel::Blendshape(bs) = load_rig(dir.path().join("bs.json")).unwrap().model else { panic!() };
        assert_eq!(bs.basis(), basis.as_slice());
        let file = RigFile { model: ModelSpec::JacobianField, ..file };
        file.write(dir.path().join("jf.json")).unwrap();
        assert_eq!(load_rig(dir.path().join("jf.json")).unwrap().model.kind(), "jacobian_field");
    }

    #[test]
    fn bad_rigs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        fs::write(&p, r#"{"format":"other","version":1,"mesh":"m.obj","model":{"kind":"jacobian_field"}}"#).unwrap();
        assert!(matches!(RigFile::read(&p), Err(AnimError::Parse { .. })));
        fs::write(&p, "{").unwrap();
        assert!(matches!(RigFile::read(&p), Err(AnimError::Parse { .. })));
        let b = dir.path().join("b.bin");
        write_basis(&b, &[1.0, 2.0, 3.0]).unwrap();
        assert!(read_basis(&b, 2, 2).is_err());
        assert!(read_basis(&b, 1, 2).is_err());
        assert_eq!(read_basis(&b, 3, 1).unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
