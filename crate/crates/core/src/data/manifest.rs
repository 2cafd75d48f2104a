//! Dataset manifest: `subject_id,age,survival_days,t1,t1ce,t2,flair,seg`,
//! with volume paths relative to the manifest's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rvol::{read_rvol, read_rvol_header};
use crate::error::{Error, Result};
use crate::preprocess::{Modality, SubjectRecord, VolumeKind};

pub const MANIFEST_HEADER: [&str; 8] = ["subject_id", "age", "survival_days", "t1", "t1ce", "t2", "flair", "seg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub age: f64,
    pub survival_days: f64,
    pub t1: String,
    pub t1ce: String,
    pub t2: String,
    pub flair: String,
    pub seg: String,
}

impl ManifestRow {
    /// Modality paths in [`Modality::ALL`] order.
    pub fn modality_path(&self, m: Modality) -> &str {
        match m {
            Modality::T1 => &self.t1,
            Modality::T1ce => &self.t1ce,
            Modality::T2 => &self.t2,
            Modality::Flair => &self.flair,
        }
    }

    fn files(&self) -> [(&'static str, &str); 5] {
        [
            ("t1", &self.t1),
            ("t1ce", &self.t1ce),
            ("t2", &self.t2),
            ("flair", &self.flair),
            ("seg", &self.seg),
        ]
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses and validates the manifest without reading volume payloads.
/// Every problem found is reported together; row numbers count data rows
/// from 1.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest {
            path: path.to_path_buf(),
            problems: vec![format!("{other:?}")],
        },
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            problems: vec![format!("header is {header:?}, expected {MANIFEST_HEADER:?}")],
        });
    }
    let base = base_dir(path);
    let mut problems = Vec::new();
    let mut rows = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("row {row_no}: {e}"));
                continue;
            }
        };
        if row.subject_id.trim().is_empty() {
            problems.push(format!("row {row_no}: empty subject_id"));
        }
        if let Some(first) = seen.insert(row.subject_id.clone(), row_no) {
            problems.push(format!(
                "row {row_no}: duplicate subject_id `{}` (rows {first} and {row_no})",
                row.subject_id
            ));
        }
        if !(row.survival_days.is_finite() && row.survival_days > 0.0) {
            problems.push(format!(
                "row {row_no}: survival_days must be positive, got {}",
                row.survival_days
            ));
        }
        if !row.age.is_finite() || row.age < 0.0 {
            problems.push(format!("row {row_no}: invalid age {}", row.age));
        }
        let mut dims = None;
        for (col, rel) in row.files() {
            let full = base.join(rel);
            if !full.is_file() {
                problems.push(format!("row {row_no}: {col} file {} does not exist", full.display()));
                continue;
            }
            match read_rvol_header(&full) {
                Ok(h) => match dims {
                    None => dims = Some((col, h.dims)),
                    Some((first, d)) if d != h.dims => problems.push(format!(
                        "row {row_no}: {col} dims {:?} differ from {first} dims {d:?}",
                        h.dims
                    )),
                    _ => {}
                },
                Err(e) => problems.push(format!("row {row_no}: {col}: {e}")),
            }
        }
        rows.push(row);
    }
    if !problems.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            problems,
        });
    }
    if rows.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            problems: vec!["no subjects".into()],
        });
    }
    Ok(rows)
}

/// Reads the volumes of one manifest row.
pub fn load_subject(base: &Path, row: &ManifestRow) -> Result<SubjectRecord> {
    let read = |rel: &str, kind| read_rvol(&base.join(rel), kind);
    let rec = SubjectRecord {
        id: row.subject_id.clone(),
        age: row.age,
        survival_days: row.survival_days,
        volumes: [
            read(&row.t1, VolumeKind::Intensity)?,
            read(&row.t1ce, VolumeKind::Intensity)?,
            read(&row.t2, VolumeKind::Intensity)?,
            read(&row.flair, VolumeKind::Intensity)?,
        ],
        mask: read(&row.seg, VolumeKind::Mask)?,
    };
    rec.validate()?;
    Ok(rec)
}

/// Validates the manifest, then loads every subject in parallel. Payload
/// errors are also collected across all rows.
pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    let rows = read_manifest(path)?;
    let base = base_dir(path);
    let loaded: Vec<Result<SubjectRecord>> = rows.par_iter().map(|r| load_subject(&base, r)).collect();
    let mut problems = Vec::new();
    let mut records = Vec::with_capacity(rows.len());
    for (i, r) in loaded.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => problems.push(format!("row {}: {e}", i + 1)),
        }
    }
    if problems.is_empty() {
        Ok(records)
    } else {
        Err(Error::Manifest {
            path: path.to_path_buf(),
            problems,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rvol::write_rvol;
    use crate::preprocess::Volume3D;

    fn write_subject(dir: &Path, id: &str, dims: [usize; 3]) -> ManifestRow {
        let v = Volume3D::from_fn(dims, VolumeKind::Intensity, |_, _, _| 1.0).unwrap();
        let m = Volume3D::from_fn(dims, VolumeKind::Mask, |z, _, _| if z == 0 { 1.0 } else { 0.0 }).unwrap();
        let name = |s: &str| format!("{id}_{s}.rvol");
        for s in ["t1", "t1ce", "t2", "flair"] {
            write_rvol(&dir.join(name(s)), &v).unwrap();
        }
        write_rvol(&dir.join(name("seg")), &m).unwrap();
        ManifestRow {
            subject_id: id.into(),
            age: 50.0,
            survival_days: 400.0,
            t1: name("t1"),
            t1ce: name("t1ce"),
            t2: name("t2"),
            flair: name("flair"),
            seg: name("seg"),
        }
    }

    #[test]
    fn two_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![write_subject(dir.path(), "a", [2, 2, 2]), write_subject(dir.path(), "b", [2, 2, 2])];
        let p = dir.path().join("m.csv");
        write_manifest(&p, &rows).unwrap();
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("subject_id,age,survival_days,t1,t1ce,t2,flair,seg\n"));
        let recs = load_manifest(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].id, "b");
    }

    #[test]
    fn all_problems_reported_together() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_subject(dir.path(), "a", [2, 2, 2]);
        let mut dup = write_subject(dir.path(), "b", [2, 2, 2]);
        dup.subject_id = "a".into();
        let mut bad = write_subject(dir.path(), "c", [2, 2, 2]);
        bad.survival_days = 0.0;
        bad.flair = "missing.rvol".into();
        let mut odd = write_subject(dir.path(), "d", [2, 2, 2]);
        odd.t2 = write_subject(dir.path(), "e", [3, 2, 2]).t2;
        let p = dir.path().join("m.csv");
        write_manifest(&p, &[a, dup, bad, odd]).unwrap();
        match read_manifest(&p) {
            Err(Error::Manifest { problems, .. }) => {
                let all = problems.join("\n");
                assert!(all.contains("duplicate subject_id `a` (rows 1 and 2)"), "{all}");
                assert!(all.contains("row 3: survival_days"), "{all}");
                assert!(all.contains("row 3: flair file"), "{all}");
                assert!(all.contains("row 4: t2 dims [3, 2, 2]"), "{all}");
                assert_eq!(problems.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "id,age\nx,1\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Manifest { .. })));
    }
}
