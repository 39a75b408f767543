use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_sample, BiTemporalSample, SplitName};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.csv";

/// One tile record: where it came from and which split it belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub tile: String,
    pub source: String,
    pub tile_row: usize,
    pub tile_col: usize,
    pub split: SplitName,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

/// `A/`, `B/` and `label/` directories holding identically named rasters.
#[derive(Clone, Debug)]
pub struct DirectoryDataset {
    root: PathBuf,
    names: Vec<String>,
    splits: Option<Vec<SplitName>>,
}

impl DirectoryDataset {
    pub fn open(root: &Path) -> Result<Self> {
        let list = |sub: &str| -> Result<Vec<String>> {
            let dir = root.join(sub);
            let mut names = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .filter_map(|e| e.file_name().into_string().ok())
                .collect::<Vec<_>>();
            names.sort();
            Ok(names)
        };
        let names = list("A")?;
        for sub in ["B", "label"] {
            let other = list(sub)?;
            if other != names {
                return Err(Error::Validation(format!(
                    "{} does not hold the same files as {}",
                    root.join(sub).display(),
                    root.join("A").display()
                )));
            }
        }
        if names.is_empty() {
            return Err(Error::Empty(format!("no rasters under {}", root.join("A").display())));
        }
        let manifest = root.join(MANIFEST_FILE);
        let splits = if manifest.exists() {
            let rows = read_manifest(&manifest)?;
            let splits = names
                .iter()
                .map(|n| {
                    rows.iter().find(|r| &r.tile == n).map(|r| r.split).ok_or_else(|| Error::Format {
                        path: manifest.clone(),
                        reason: format!("no entry for {n}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(splits)
        } else {
            None
        };
        Ok(Self {
            root: root.to_path_buf(),
            names,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_manifest(&self) -> bool {
        self.splits.is_some()
    }

    /// Indices in `split`; without a manifest every item belongs to every split.
    pub fn indices(&self, split: SplitName) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..self.len()).filter(|&i| s[i] == split).collect(),
            None => (0..self.len()).collect(),
        }
    }

    pub fn load<T: Scalar>(&self, i: usize, normalize: bool) -> Result<BiTemporalSample<T>> {
        let name = &self.names[i];
        load_sample(
            &self.root.join("A").join(name),
            &self.root.join("B").join(name),
            &self.root.join("label").join(name),
            normalize,
        )
    }

    pub fn load_split<T: Scalar>(&self, split: SplitName, normalize: bool) -> Result<Vec<BiTemporalSample<T>>> {
        self.indices(split).into_iter().map(|i| self.load(i, normalize)).collect()
    }
}
