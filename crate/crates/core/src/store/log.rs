//! Append-only JSON-lines log with whole-file rewrite for compaction.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::StoreError;

pub const LOG_FILE: &str = "mappings.log";
pub const TMP_FILE: &str = "mappings.log.tmp";

/// Injected persistence faults, for crash-consistency tests.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The next append writes `keep` bytes, then reports an I/O error. The store rolls back.
    FailAppend { keep: usize },
    /// The next append writes `keep` bytes and the process dies. Nothing is rolled back.
    CrashAppend { keep: usize },
    /// The next rewrite writes `keep` bytes of the temp file and dies before the rename.
    CrashCompaction { keep: usize },
    /// The next rewrite dies right after the rename.
    CrashAfterRename,
}

#[derive(Debug)]
pub(crate) struct LogFile {
    dir: PathBuf,
    file: File,
    len: u64,
    fault: Option<Fault>,
    poisoned: bool,
}

fn injected(what: &str) -> StoreError {
    StoreError::Io(std::io::Error::other(format!("injected fault: {what}")))
}

impl LogFile {
    /// Opens (creating if needed) and returns complete lines with their 1-based numbers.
    /// A torn final record is cut off; a leftover temp file from an unfinished rewrite is removed.
    pub(crate) fn open(dir: &Path) -> Result<(Self, Vec<(usize, String)>), StoreError> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(TMP_FILE);
        if tmp.exists() {
            tracing::warn!(path = %tmp.display(), "removing temp file from an interrupted compaction");
            fs::remove_file(&tmp)?;
        }
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(dropped_bytes = bytes.len() - complete, "dropping torn final log record");
            file.set_len(complete as u64)?;
            file.sync_all()?;
        }
        let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| StoreError::Corrupt {
            line: 0,
            reason: format!("log is not UTF-8: {e}"),
        })?;
        let lines = text
            .split_terminator('\n')
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.to_string()))
            .collect();
        let log = Self {
            dir: dir.to_path_buf(),
            file,
            len: complete as u64,
            fault: None,
            poisoned: false,
        };
        Ok((log, lines))
    }

    pub(crate) fn inject(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    fn check(&self) -> Result<(), StoreError> {
        if self.poisoned {
            Err(StoreError::Poisoned)
        } else {
            Ok(())
        }
    }

    /// Appends `bytes` (whole records, newline-terminated) durably, or leaves the file as it was.
    pub(crate) fn append(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        self.check()?;
        match self.fault.take() {
            Some(Fault::FailAppend { keep }) => {
                let _ = self.file.write_all(&bytes[..keep.min(bytes.len())]);
                self.rollback();
                return Err(injected("append failed"));
            }
            Some(Fault::CrashAppend { keep }) => {
                let _ = self.file.write_all(&bytes[..keep.min(bytes.len())]);
                let _ = self.file.sync_data();
                self.poisoned = true;
                return Err(injected("crash during append"));
            }
            other => self.fault = other,
        }
        let result = self.file.write_all(bytes).and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += bytes.len() as u64;
                Ok(())
            }
            Err(e) => {
                self.rollback();
                Err(e.into())
            }
        }
    }

    fn rollback(&mut self) {
        if self.file.set_len(self.len).and_then(|_| self.file.sync_data()).is_err() {
            // The on-disk tail is unknown now; refuse further writes until reopened.
            self.poisoned = true;
        }
    }

    /// Atomically replaces the log with `content` via temp file, fsync, rename, dir fsync.
    pub(crate) fn rewrite(&mut self, content: &[u8]) -> Result<(), StoreError> {
        self.check()?;
        let tmp = self.dir.join(TMP_FILE);
        let path = self.dir.join(LOG_FILE);
        let fault = self.fault.take();
        if let Some(Fault::CrashCompaction { keep }) = fault {
            let mut f = File::create(&tmp)?;
            f.write_all(&content[..keep.min(content.len())])?;
            f.sync_all()?;
            self.poisoned = true;
            return Err(injected("crash during compaction"));
        }
        if !matches!(fault, Some(Fault::CrashAfterRename)) {
            self.fault = fault;
        }
        {
            let mut f = File::create(&tmp)?;
            f.write_all(content)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        if matches!(fault, Some(Fault::CrashAfterRename)) {
            self.poisoned = true;
            return Err(injected("crash after rename"));
        }
        File::open(&self.dir)?.sync_all()?;
        self.file = OpenOptions::new().read(true).append(true).open(&path)?;
        self.len = content.len() as u64;
        Ok(())
    }
}
