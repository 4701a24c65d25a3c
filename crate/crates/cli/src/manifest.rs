//! Run manifests: the resolved invocation, its hash and the digests of
//! every input and output file.

use std::fs;
use std::path::{Path, PathBuf};

use motionfit::fitting::FitConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::SynthParams;
use crate::error::CliError;

pub const MANIFEST_FORMAT: &str = "motionfit-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// A command with every default and config file resolved and every input
/// path made absolute. Re-running it reproduces the recorded outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Synth(SynthParams),
    Fit {
        rig: PathBuf,
        features: PathBuf,
        camera: Option<PathBuf>,
        config: FitConfig,
    },
    Eval {
        rig: PathBuf,
        clip: PathBuf,
        gt: PathBuf,
    },
    Dump {
        rig: PathBuf,
        features: PathBuf,
        camera: Option<PathBuf>,
        clip: Option<PathBuf>,
        frame: Option<usize>,
        channels: Vec<usize>,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Synth(_) => "synth",
            Invocation::Fit { .. } => "fit",
            Invocation::Eval { .. } => "eval",
            Invocation::Dump { .. } => "dump",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Synth(p) => Some(p.seed),
            Invocation::Fit { config, .. } => Some(config.seed),
            _ => None,
        }
    }

    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Invocation::Synth(_) => Vec::new(),
            Invocation::Fit { rig, features, camera, .. } => {
                [Some(rig.as_path()), Some(features.as_path()), camera.as_deref()].into_iter().flatten().collect()
            }
            Invocation::Eval { rig, clip, gt } => vec![rig, clip, gt],
            Invocation::Dump { rig, features, camera, clip, .. } => {
                [Some(rig.as_path()), Some(features.as_path()), camera.as_deref(), clip.as_deref()].into_iter().flatten().collect()
            }
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("invocation serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub tool_version: String,
    pub core_version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub invocation: Invocation,
    pub inputs: Vec<FileRecord>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_record(path: &Path, name: &str) -> Result<FileRecord, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(FileRecord { path: name.to_string(), sha256: sha256_hex(&bytes) })
}

impl Manifest {
    /// Hashes the inputs of `invocation` and the named outputs in `dir`.
    pub fn new(invocation: &Invocation, dir: &Path, outputs: &[String]) -> Result<Self, CliError> {
        let inputs = invocation.inputs().into_iter().map(|p| file_record(p, &p.display().to_string())).collect::<Result<_, _>>()?;
        let outputs = outputs.iter().map(|name| file_record(&dir.join(name), name)).collect::<Result<_, _>>()?;
        Ok(Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: invocation.name().into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            core_version: motionfit::VERSION.into(),
            seed: invocation.seed(),
            config_hash: invocation.hash(),
            invocation: invocation.clone(),
            inputs,
            outputs,
        })
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}_manifest.json")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(Self::file_name(&self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Reads a manifest and checks that its hash matches its invocation.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(CliError::Usage(format!("{}: unsupported manifest {} v{}", path.display(), m.format, m.version)));
        }
        if m.invocation.hash() != m.config_hash {
            return Err(CliError::Usage(format!("{}: config hash does not match the recorded invocation", path.display())));
        }
        Ok(m)
    }

    /// Fails if any recorded input changed since the run.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for rec in &self.inputs {
            let now = file_record(Path::new(&rec.path), &rec.path).map_err(|e| CliError::Usage(e.to_string()))?;
            if now.sha256 != rec.sha256 {
                return Err(CliError::Usage(format!("input {} changed since the recorded run", rec.path)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn hash_tracks_every_setting() {
        let base = Invocation::Fit { rig: "/a/rig.json".into(), features: "/a/f.ftrv".into(), camera: None, config: FitConfig::default() };
        let mut config = FitConfig::default();
        config.w_smooth = 0.0;
        let changed = Invocation::Fit { rig: "/a/rig.json".into(), features: "/a/f.ftrv".into(), camera: None, config };
        assert_eq!(base.hash(), base.clone().hash());
        assert_ne!(base.hash(), changed.hash());
    }

    #[test]
    fn invocation_round_trips_through_json() {
        let inv = Invocation::Synth(SynthParams { seed: 7, bones: 2, vertices: 500, frames: 16, channels: 64, amplitude: 0.3, noise: 0.1 });
        let back: Invocation = serde_json::from_str(&serde_json::to_string(&inv).unwrap()).unwrap();
        assert_eq!(back, inv);
        assert_eq!(back.hash(), inv.hash());
    }

    #[test]
    fn tampered_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let inv = Invocation::Synth(SynthParams { seed: 1, bones: 2, vertices: 500, frames: 4, channels: 8, amplitude: 0.3, noise: 0.0 });
        let mut m = Manifest::new(&inv, dir.path(), &[]).unwrap();
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
        m.invocation = Invocation::Synth(SynthParams { seed: 2, bones: 2, vertices: 500, frames: 4, channels: 8, amplitude: 0.3, noise: 0.0 });
        m.write(dir.path()).unwrap();
        assert!(matches!(Manifest::read(&path), Err(CliError::Usage(_))));
    }
}
