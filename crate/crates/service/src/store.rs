//! File-backed workspace: one JSON file per corpus and per session, each
//! replaced atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hltm_core::corpus::Corpus;
use hltm_core::model::Model;

use crate::wire::{HistoryEntry, SessionInfo};

#[derive(Debug, Clone, Deserialize)]
pub struct SessionFile {
    pub info: SessionInfo,
    pub model: Option<Model>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Serialize)]
struct SessionFileRef<'a> {
    info: &'a SessionInfo,
    model: Option<&'a Model>,
    history: &'a [HistoryEntry],
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("corpora"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn corpus_path(&self, id: &str) -> PathBuf {
        self.root.join("corpora").join(format!("{id}.json"))
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    pub fn save_corpus(&self, id: &str, corpus: &Corpus) -> std::io::Result<()> {
        write_atomic(&self.corpus_path(id), &serde_json::to_vec(corpus)?)
    }

    pub fn save_session(&self, info: &SessionInfo, model: Option<&Model>, history: &[HistoryEntry]) -> std::io::Result<()> {
        let bytes = serde_json::to_vec(&SessionFileRef { info, model, history })?;
        write_atomic(&self.session_path(&info.session_id), &bytes)
    }

    fn load_dir<T: DeserializeOwned>(&self, dir: &str) -> std::io::Result<Vec<(String, T)>> {
        let mut out = vec![];
        let mut entries: Vec<_> = fs::read_dir(self.root.join(dir))?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.extension().is_some_and(|x| x == "json") {
                let id = path.file_stem().expect("file name").to_string_lossy().into_owned();
                let value = serde_json::from_slice(&fs::read(&path)?)?;
                out.push((id, value));
            }
        }
        Ok(out)
    }

    pub fn load_corpora(&self) -> std::io::Result<Vec<(String, Corpus)>> {
        self.load_dir("corpora")
    }

    pub fn load_sessions(&self) -> std::io::Result<Vec<SessionFile>> {
        Ok(self.load_dir::<SessionFile>("sessions")?.into_iter().map(|(_, s)| s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stale_temp_file_leaves_old_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_atomic(&path, b"old").unwrap();
        // A crash after writing the temp file but before the rename.
        fs::write(path.with_extension("json.tmp"), b"half-writ").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"old");
        write_atomic(&path, b"new").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"new");
        assert!(!path.with_extension("json.tmp").exists());
    }

    #[test]
    fn temp_files_are_not_loaded() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        fs::write(ws.root().join("sessions").join("s-1.json.tmp"), b"{").unwrap();
        assert!(ws.load_sessions().unwrap().is_empty());
    }
}
