use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellRecord, Channel, Label, Provenance};
use crate::error::{Error, Result};
use crate::imaging;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_HEADER: [&str; 6] = [
    "cell_id",
    "label",
    "provenance",
    "bf_path",
    "dapi_path",
    "source_tag",
];

/// A validated collection of cell records plus the directory their image
/// paths are relative to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<CellRecord>,
    pub image_root: PathBuf,
    pub schema_version: u32,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    cell_id: String,
    label: String,
    provenance: String,
    bf_path: String,
    dapi_path: String,
    source_tag: String,
}

impl Manifest {
    /// Build a manifest from records without touching the filesystem.
    /// Checks the label/provenance pairing and id uniqueness.
    pub fn new(records: Vec<CellRecord>, image_root: impl Into<PathBuf>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.cell_id.is_empty() {
                return Err(Error::ManifestRow {
                    row: i + 2,
                    message: "empty cell_id".into(),
                });
            }
            if !r.provenance.allowed_for(r.label) {
                return Err(Error::ManifestRow {
                    row: i + 2,
                    message: format!(
                        "provenance {} is not valid for label {} (cell `{}`)",
                        r.provenance, r.label, r.cell_id
                    ),
                });
            }
            if index.insert(r.cell_id.clone(), i).is_some() {
                return Err(Error::DuplicateCellId(r.cell_id.clone()));
            }
        }
        Ok(Manifest {
            records,
            image_root: image_root.into(),
            schema_version: SCHEMA_VERSION,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, cell_id: &str) -> Option<&CellRecord> {
        self.index.get(cell_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, cell_id: &str) -> bool {
        self.index.contains_key(cell_id)
    }

    /// Absolute (or root-joined) path of a record's image for `channel`.
    pub fn resolve(&self, record: &CellRecord, channel: Channel) -> Option<PathBuf> {
        record.path(channel).map(|p| self.image_root.join(p))
    }

    pub fn count(&self, label: Label, provenance: Option<Provenance>) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == label && provenance.is_none_or(|p| r.provenance == p))
            .count()
    }

    /// Check that every referenced image exists and decodes.
    pub fn verify_images(&self) -> Result<()> {
        for r in &self.records {
            for ch in [Channel::Bf, Channel::Dapi] {
                if let Some(p) = self.resolve(r, ch) {
                    if !p.is_file() {
                        return Err(Error::Image {
                            path: p,
                            message: format!("unresolvable {ch} image for cell `{}`", r.cell_id),
                        });
                    }
                    imaging::load_gray(&p)?;
                }
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            w.serialize(Row {
                cell_id: r.cell_id.clone(),
                label: r.label.to_string(),
                provenance: r.provenance.to_string(),
                bf_path: path_str(&r.bf_path),
                dapi_path: r.dapi_path.as_deref().map(path_str).unwrap_or_default(),
                source_tag: r.source_tag.clone(),
            })
            .map_err(|e| csv_err(path, e))?;
        }
        if self.records.is_empty() {
            w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Load and validate a manifest CSV. Image paths are resolved against the
/// directory containing the manifest.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    load_manifest_with_root(path, &root)
}

pub fn load_manifest_with_root(path: &Path, image_root: &Path) -> Result<Manifest> {
    if !path.is_file() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "file not found".into(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != MANIFEST_HEADER {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: format!(
                "bad header `{}`, expected `{}`",
                names.join(","),
                MANIFEST_HEADER.join(",")
            ),
        });
    }

    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::ManifestRow {
            row: line,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::ManifestRow { row: line, message };
        let label: Label = row.label.parse().map_err(bad)?;
        let provenance: Provenance = row.provenance.parse().map_err(bad)?;
        if row.bf_path.is_empty() {
            return Err(bad("empty bf_path".into()));
        }
        records.push(CellRecord {
            cell_id: row.cell_id,
            label,
            provenance,
            bf_path: PathBuf::from(row.bf_path),
            dapi_path: (!row.dapi_path.is_empty()).then(|| PathBuf::from(row.dapi_path)),
            source_tag: row.source_tag,
        });
    }
    let manifest = Manifest::new(records, image_root)?;
    manifest.verify_images()?;
    Ok(manifest)
}
