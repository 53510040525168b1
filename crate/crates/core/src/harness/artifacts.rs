//! Versioned, content-addressed artifact documents and the run manifest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::adapters::AdapterEnsemble;
use crate::allocate::{HardSet, RlSet};
use crate::error::{Error, Result};
use crate::expand::{GateDirection, GpdParams};
use crate::metrics::DifficultyScore;
use crate::policy::Generalist;
use crate::world::Clip;

pub const FORMAT_VERSION: u32 = 1;
/// Schema version of each line of a clips file.
pub const CLIP_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `{format_version, kind, id, body}` where `id` is the SHA-256 of the
/// body's JSON encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact<T> {
    pub format_version: u32,
    pub kind: String,
    pub id: String,
    pub body: T,
}

impl<T: Serialize + DeserializeOwned> Artifact<T> {
    pub fn new(kind: &str, body: T) -> Result<Self> {
        let id = sha256_hex(&serde_json::to_vec(&body)?);
        Ok(Artifact {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            id,
            body,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// Parses and checks version, kind and content id.
    pub fn from_bytes(bytes: &[u8], kind: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
            kind: String,
        }
        let h: Header = serde_json::from_slice(bytes)?;
        if h.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                kind: h.kind,
                found: h.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if h.kind != kind {
            return Err(Error::Input(format!("expected a {kind} artifact, found {}", h.kind)));
        }
        let a: Artifact<T> = serde_json::from_slice(bytes)?;
        let actual = sha256_hex(&serde_json::to_vec(&a.body)?);
        if actual != a.id {
            return Err(Error::Integrity {
                artifact: kind.to_string(),
                expected: a.id,
                found: actual,
            });
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, kind)
    }
}

/// Fails unless `found` is the upstream id an artifact was built against.
pub fn check_link(artifact: &str, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Integrity {
            artifact: artifact.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

pub type GeneralistArtifact = Artifact<Generalist>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardSetBody {
    pub generalist_id: String,
    pub hard_set: HardSet,
    pub rl_set: RlSet,
    /// Difficulty of every training clip.
    pub scores: Vec<DifficultyScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptersBody {
    pub base_id: String,
    pub hard_set_id: String,
    pub ensemble: AdapterEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateBody {
    pub hard_set_id: String,
    pub ensemble_id: String,
    pub params: GpdParams,
    pub sigma: f64,
    pub direction: GateDirection,
    /// Hard-case uncertainties the tail was fitted to.
    pub samples: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClipLine {
    schema_version: u32,
    #[serde(flatten)]
    clip: Clip,
}

const CLIPS_HEADER: &str = "# clips v1: one Clip per line; positions m, headings rad (CCW from +x), speeds m/s, accelerations m/s², dt s";

/// JSON lines with a `#` header comment.
pub fn clips_to_bytes(clips: &[Clip]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "{CLIPS_HEADER}").expect("write to Vec");
    for clip in clips {
        serde_json::to_writer(
            &mut out,
            &ClipLine {
                schema_version: CLIP_SCHEMA_VERSION,
                clip: clip.clone(),
            },
        )?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_clips(path: &Path, clips: &[Clip]) -> Result<()> {
    std::fs::write(path, clips_to_bytes(clips)?).map_err(|e| Error::io(path, e))
}

pub fn read_clips(path: &Path) -> Result<Vec<Clip>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut clips = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rec: ClipLine = serde_json::from_str(t)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.schema_version != CLIP_SCHEMA_VERSION {
            return Err(Error::Version {
                kind: "clip".into(),
                found: rec.schema_version,
                expected: CLIP_SCHEMA_VERSION,
            });
        }
        clips.push(rec.clip);
    }
    Ok(clips)
}

/// Record of a run directory: the configuration, every derived seed and a
/// hash of each artifact written so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    /// File name → SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    /// Clip counts per split and scenario kind.
    pub kind_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn config_hash(config: &RunConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Manifest {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            config_hash: config_hash(config)?,
            seed: config.seed,
            derived_seeds: config.derived_seeds(),
            artifacts: BTreeMap::new(),
            kind_counts: BTreeMap::new(),
        })
    }

    /// Opens the manifest of `dir`, creating a fresh one if absent. An
    /// existing manifest written under a different configuration is rejected.
    pub fn open(dir: &Path, config: &RunConfig) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Self::new(config);
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                kind: "manifest".into(),
                found: m.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let hash = config_hash(config)?;
        check_link("manifest config", &m.config_hash, &hash)?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }
}

/// A run directory and its manifest. Files written through it are hashed
/// into the manifest, which is saved after each write.
pub struct RunDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    pub fn open(dir: &Path, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            manifest: Manifest::open(dir, config)?,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        self.manifest.save(&self.dir)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_artifact<T: Serialize + DeserializeOwned>(&mut self, name: &str, a: &Artifact<T>) -> Result<()> {
        self.write(name, &a.to_bytes()?)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn load<T: Serialize + DeserializeOwned>(&self, name: &str, kind: &str) -> Result<Artifact<T>> {
        Artifact::load(&self.path(name), kind)
    }
}
