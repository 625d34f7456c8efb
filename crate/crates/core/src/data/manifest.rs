//! JSON-lines dataset manifests: one `ClipRecord` object per line, paths
//! relative to the manifest's directory.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{ClipRecord, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Manifest {
    root: PathBuf,
    records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ClipRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&ClipRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn find(&self, id: &str) -> Option<&ClipRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Resolves a record-relative path against the manifest root.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

/// Loads and validates a manifest: well-formed lines, unique ids, and every
/// referenced file present on disk.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let disp = path.display().to_string();
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let file = File::open(path).map_err(|e| Error::io(disp.clone(), e))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(disp.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ClipRecord = serde_json::from_str(&line).map_err(|e| {
            Error::format(disp.clone(), format!("line {}", lineno + 1), e.to_string())
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::format(
                disp.clone(),
                format!("line {}", lineno + 1),
                format!("duplicate id '{}'", record.id),
            ));
        }
        for (field, rel) in [
            ("music_feature_path", &record.music_feature_path),
            ("dance_feature_path", &record.dance_feature_path),
            ("music_beat_path", &record.music_beat_path),
            ("dance_beat_path", &record.dance_beat_path),
        ] {
            let full = root.join(rel);
            if !full.is_file() {
                return Err(Error::format(
                    disp.clone(),
                    format!("record '{}' {field}", record.id),
                    format!("referenced file missing: {}", full.display()),
                ));
            }
        }
        records.push(record);
    }

    Ok(Manifest { root, records })
}

/// Writes records as JSON lines, one per record, in the given order.
pub fn save_manifest(path: impl AsRef<Path>, records: &[ClipRecord]) -> Result<()> {
    let path = path.as_ref();
    let disp = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(disp.clone(), e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n").map_err(|e| Error::io(disp.clone(), e))?;
    }
    w.flush().map_err(|e| Error::io(disp, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_u8;

    fn touch_files(dir: &Path, id: &str) -> ClipRecord {
        for suffix in ["mf", "df", "mb", "db"] {
            save_u8(dir.join(format!("{id}.{suffix}.bdtf")), &[4], &[0, 1, 0, 1]).unwrap();
        }
        ClipRecord {
            id: id.to_string(),
            music_feature_path: format!("{id}.mf.bdtf"),
            dance_feature_path: format!("{id}.df.bdtf"),
            music_beat_path: format!("{id}.mb.bdtf"),
            dance_beat_path: format!("{id}.db.bdtf"),
            split: Split::Train,
        }
    }

    #[test]
    fn split_partition_8_1_1() {
        let dir = tempfile::tempdir().unwrap();
        let mut records: Vec<ClipRecord> = (0..10)
            .map(|i| touch_files(dir.path(), &format!("clip{i}")))
            .collect();
        records[8].split = Split::Val;
        records[9].split = Split::Test;
        let path = dir.path().join("manifest.jsonl");
        save_manifest(&path, &records).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.split(Split::Train).len(), 8);
        assert_eq!(m.split(Split::Val).len(), 1);
        assert_eq!(m.split(Split::Test).len(), 1);
    }

    #[test]
    fn empty_manifest_is_fine() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, "").unwrap();
        let m = load_manifest(&path).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let r = touch_files(dir.path(), "dup");
        let path = dir.path().join("manifest.jsonl");
        save_manifest(&path, &[r.clone(), r]).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("dup"), "{err}");
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = touch_files(dir.path(), "a");
        r.music_feature_path = "nonexistent.bdtf".into();
        let path = dir.path().join("manifest.jsonl");
        save_manifest(&path, &[r]).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("nonexistent"), "{err}");
    }

    #[test]
    fn unknown_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"x","music_feature_path":"a","dance_feature_path":"b","music_beat_path":"c","dance_beat_path":"d","split":"holdout"}"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
