//! Dataset directories and their manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gnn_linalg::fem::{self, gen_diffusion_dataset, gen_jacobi_dataset, Dataset, ProblemInstance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DataConfig, Kind};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: DataConfig,
    pub splits: Splits,
    /// Digest over every instance digest in split order.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<Entry>,
    pub val: Vec<Entry>,
    pub test: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub index: usize,
    pub dir: String,
    pub sha256: String,
}

impl Manifest {
    pub fn kind(&self) -> Kind {
        self.config.kind()
    }

    pub fn entries(&self) -> impl Iterator<Item = &Entry> {
        self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over `(name, length, bytes)` of every file in `dir`, by name.
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    let mut h = Sha256::new();
    for p in files {
        let bytes = fs::read(&p)?;
        let name = p.file_name().expect("file name").to_string_lossy();
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

pub fn generate(cfg: &DataConfig) -> Result<Dataset> {
    Ok(match cfg {
        DataConfig::Jacobi(c) => gen_jacobi_dataset(c)?,
        DataConfig::Diffusion(c) => gen_diffusion_dataset(c)?,
    })
}

fn write_split(root: &Path, split: &str, set: &[ProblemInstance]) -> Result<Vec<Entry>> {
    set.par_iter()
        .map(|inst| {
            let rel = format!("{split}/{}", fem::instance_dir_name(inst.meta.index()));
            let dir = root.join(&rel);
            inst.write_dir(&dir).with_context(|| format!("writing {}", dir.display()))?;
            Ok(Entry {
                index: inst.meta.index(),
                dir: rel,
                sha256: hash_dir(&dir)?,
            })
        })
        .collect()
}

/// Writes the dataset under `root` and returns its manifest, which is also
/// saved as `root/manifest.json`.
pub fn write(root: &Path, cfg: &DataConfig, ds: &Dataset, force: bool) -> Result<Manifest> {
    if root.exists() {
        if !force {
            bail!("{} already exists; pass --force to replace it", root.display());
        }
        fs::remove_dir_all(root).with_context(|| format!("removing {}", root.display()))?;
    }
    fs::create_dir_all(root)?;
    let splits = Splits {
        train: write_split(root, "train", &ds.train)?,
        val: write_split(root, "val", &ds.val)?,
        test: write_split(root, "test", &ds.test)?,
    };
    let mut h = Sha256::new();
    for e in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        h.update(e.dir.as_bytes());
        h.update(e.sha256.as_bytes());
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        splits,
        sha256: hex(&h.finalize()),
    };
    fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads a dataset written by [`write`], checking every instance digest.
pub fn load(root: &Path, kind: Kind) -> Result<(Manifest, Dataset)> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}; run gen-data first", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if manifest.version != MANIFEST_VERSION {
        bail!("{}: manifest version {} is not supported", path.display(), manifest.version);
    }
    if manifest.kind() != kind {
        bail!("{} holds a {} dataset, not {}", root.display(), manifest.kind().name(), kind.name());
    }
    let bad: Vec<&str> = manifest
        .entries()
        .collect::<Vec<_>>()
        .par_iter()
        .filter_map(|e| match hash_dir(&root.join(&e.dir)) {
            Ok(h) if h == e.sha256 => None,
            _ => Some(e.dir.as_str()),
        })
        .collect();
    if !bad.is_empty() {
        bail!("{} instance(s) differ from the manifest, first {}", bad.len(), bad[0]);
    }
    let ds = fem::read_dataset(root).with_context(|| format!("reading dataset {}", root.display()))?;
    Ok((manifest, ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gnn_linalg::fem::JacobiDataConfig;

    #[test]
    fn write_load_round_trip_and_tamper_detection() {
        let cfg = DataConfig::Jacobi(JacobiDataConfig { train: 2, val: 1, test: 1, ..JacobiDataConfig::desk(4) });
        let ds = generate(&cfg).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("data");
        let m = write(&root, &cfg, &ds, false).unwrap();
        assert!(write(&root, &cfg, &ds, false).is_err());
        assert_eq!(write(&root, &cfg, &ds, true).unwrap(), m);
        let (m2, back) = load(&root, Kind::Jacobi).unwrap();
        assert_eq!(m2, m);
        assert_eq!(back.train.len(), 2);
        assert_eq!(back.test[0].matrix, ds.test[0].matrix);
        assert!(load(&root, Kind::Diffusion).is_err());
        let meta = root.join(&m.splits.val[0].dir).join("coords.csv");
        let mut text = fs::read_to_string(&meta).unwrap();
        text.push('\n');
        fs::write(&meta, text).unwrap();
        assert!(load(&root, Kind::Jacobi).unwrap_err().to_string().contains("val/"));
    }
}
