//! On-disk synthetic datasets and per-frame re-triangulation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::body::{build_body, IdentitySpec};
use super::motion::{animate, MotionKind, MotionSpec};
use crate::error::{Error, Result};
use crate::mesh::{load_sequence, remesh, save_sequence, MotionSequence, RemeshVariant};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Re-triangulates every frame independently (random DS2 / US2 / VD per frame) so
/// frames no longer share connectivity.
pub fn unregister(sequence: &MotionSequence, seed: u64) -> Result<MotionSequence> {
    const CHOICES: [RemeshVariant; 3] = [RemeshVariant::Ds2, RemeshVariant::Us2, RemeshVariant::Vd];
    let frames = sequence
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let frame_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(t as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
            let variant = CHOICES[rng.gen_range(0..CHOICES.len())];
            remesh(f, variant, rng.gen())
        })
        .collect::<Result<Vec<_>>>()?;
    MotionSequence::new(frames)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train_identities: usize,
    pub test_identities: usize,
    pub motions: Vec<MotionKind>,
    pub frames: usize,
    pub level: u8,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_identities: 5,
            test_identities: 2,
            motions: vec![
                MotionKind::ArmRaise,
                MotionKind::KneeRaise,
                MotionKind::WalkCycle,
            ],
            frames: 30,
            level: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub identity: String,
    pub split: Split,
    pub motion: MotionKind,
    /// Directory of the frames, relative to the dataset root.
    pub path: String,
    pub frames: usize,
    pub identity_spec: IdentitySpec,
    pub motion_spec: MotionSpec,
    /// Hash over the content hashes of all frames.
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub sequences: Vec<SequenceEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::validation(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                m.format_version
            )));
        }
        m.root = root.to_path_buf();
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Hash of the manifest content (independent of where it lives on disk).
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn split(&self, split: Split) -> Vec<&SequenceEntry> {
        self.sequences.iter().filter(|s| s.split == split).collect()
    }

    pub fn sequence_dir(&self, entry: &SequenceEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load_sequence(&self, entry: &SequenceEntry) -> Result<MotionSequence> {
        let seq = load_sequence(self.sequence_dir(entry))?;
        if seq.len() != entry.frames {
            return Err(Error::validation(format!(
                "{}: expected {} frames, found {}",
                entry.path,
                entry.frames,
                seq.len()
            )));
        }
        Ok(seq)
    }

    /// Train and test identities must not overlap.
    pub fn check_disjoint(&self) -> Result<()> {
        let ids = |s: Split| -> BTreeSet<&str> {
            self.split(s).iter().map(|e| e.identity.as_str()).collect()
        };
        let train = ids(Split::Train);
        if let Some(shared) = ids(Split::Test).intersection(&train).next() {
            return Err(Error::validation(format!(
                "identity {shared} appears in both train and test splits"
            )));
        }
        Ok(())
    }
}

fn sequence_hash(seq: &MotionSequence) -> String {
    let mut h = Sha256::new();
    for f in &seq.frames {
        h.update(f.content_hash().as_bytes());
    }
    hex::encode(h.finalize())
}

/// Generates bodies and motions, writes every frame under `root`, and saves the manifest.
pub fn make_dataset(config: &DatasetConfig, root: impl AsRef<Path>) -> Result<DatasetManifest> {
    if config.train_identities == 0 || config.test_identities == 0 {
        return Err(Error::validation(
            "dataset needs at least one train and one test identity",
        ));
    }
    if config.motions.is_empty() {
        return Err(Error::validation("dataset needs at least one motion kind"));
    }
    let root = root.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sequences = Vec::new();
    let total = config.train_identities + config.test_identities;
    for id in 0..total {
        let split = if id < config.train_identities {
            Split::Train
        } else {
            Split::Test
        };
        let identity = format!("id{id:02}");
        let identity_spec = IdentitySpec::sample(rng.gen(), config.level);
        let body = build_body(&identity_spec)?;
        for &kind in &config.motions {
            let motion_spec = MotionSpec {
                amplitude: rng.gen_range(0.8..1.05),
                seed: rng.gen(),
                ..MotionSpec::new(kind, config.frames)
            };
            let seq = animate(&body, &motion_spec)?;
            let path = format!("{split}/{identity}/{kind}");
            save_sequence(&seq, root.join(&path), "obj")?;
            log::info!("wrote {path} ({} frames)", seq.len());
            sequences.push(SequenceEntry {
                identity: identity.clone(),
                split,
                motion: kind,
                path,
                frames: seq.len(),
                identity_spec: identity_spec.clone(),
                motion_spec,
                content_hash: sequence_hash(&seq),
            });
        }
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        config: config.clone(),
        sequences,
        root: root.to_path_buf(),
    };
    manifest.check_disjoint()?;
    manifest.save()?;
    Ok(manifest)
}
