//! The run manifest, atomic artifact writes and the run-directory lock.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Split,
    Chunk,
    Prompts,
    Infer,
    Dbl,
    Select,
    Judge,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Split,
        Stage::Chunk,
        Stage::Prompts,
        Stage::Infer,
        Stage::Dbl,
        Stage::Select,
        Stage::Judge,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Chunk => "chunk",
            Stage::Prompts => "prompts",
            Stage::Infer => "infer",
            Stage::Dbl => "dbl",
            Stage::Select => "select",
            Stage::Judge => "judge",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Split => &[Stage::Ingest],
            Stage::Chunk => &[Stage::Ingest],
            Stage::Prompts => &[Stage::Ingest, Stage::Split],
            Stage::Infer => &[Stage::Ingest, Stage::Split, Stage::Chunk, Stage::Prompts],
            Stage::Dbl => &[Stage::Ingest, Stage::Split],
            Stage::Select => &[Stage::Ingest, Stage::Split, Stage::Infer, Stage::Dbl],
            Stage::Judge => &[Stage::Ingest, Stage::Select],
            Stage::Report => &[Stage::Judge],
        }
    }

    /// Stages that consume this one's artifacts, directly or not.
    pub fn downstream(self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        let mut frontier = vec![self];
        while let Some(s) = frontier.pop() {
            for t in Stage::ALL {
                if t.upstream().contains(&s) && !out.contains(&t) {
                    out.push(t);
                    frontier.push(t);
                }
            }
        }
        out.sort();
        out
    }

    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["corpus.json"],
            Stage::Split => &["split.json"],
            Stage::Chunk => &["chunks.jsonl"],
            Stage::Prompts => &["prompts.json", "prompt_ranking.csv"],
            Stage::Infer => &["candidates.jsonl"],
            Stage::Dbl => &["distributions.json"],
            Stage::Select => &["selections.jsonl"],
            Stage::Judge => &["judgments.csv"],
            Stage::Report => &["report.txt", "report.json"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageState {
    #[default]
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageStatus {
    pub state: StageState,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: u64,
    pub config_snapshot: Config,
    pub stage_status: BTreeMap<Stage, StageStatus>,
    pub artifact_paths: BTreeMap<Stage, Vec<String>>,
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: Config) -> Self {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default();
        Self {
            run_id: format!("run-{}-{}", now.as_millis(), std::process::id()),
            created_at: now.as_secs(),
            config_snapshot: config,
            stage_status: Stage::ALL
                .into_iter()
                .map(|s| (s, StageStatus::default()))
                .collect(),
            artifact_paths: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> io::Result<Option<Self>> {
        let path = run_dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(raw) => serde_json::from_str(&raw).map(Some).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, run_dir: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        write_atomic(&run_dir.join(MANIFEST_FILE), json.as_bytes())
    }

    pub fn state(&self, stage: Stage) -> StageState {
        self.stage_status
            .get(&stage)
            .map(|s| s.state)
            .unwrap_or_default()
    }

    pub fn mark(&mut self, stage: Stage, state: StageState, message: Option<String>) {
        let entry = self.stage_status.entry(stage).or_default();
        match state {
            StageState::Running => {
                entry.started_at = Some(now_secs());
                entry.finished_at = None;
            }
            StageState::Pending => {
                entry.started_at = None;
                entry.finished_at = None;
            }
            StageState::Done | StageState::Failed => entry.finished_at = Some(now_secs()),
        }
        entry.state = state;
        entry.message = message;
    }
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path.file_name().ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::InvalidInput,
            "artifact path has no file name",
        )
    })?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

impl RunLock {
    /// Fails with the holder's pid if another live process owns the directory.
    /// A lock left behind by a dead process is taken over.
    pub fn acquire(run_dir: &Path) -> Result<Self, String> {
        let path = run_dir.join(LOCK_FILE);
        for _ in 0..2 {
            match fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&path)
            {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).map_err(|e| e.to_string())?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let stale = holder
                        .trim()
                        .parse::<u32>()
                        .map(|pid| pid != std::process::id() && !pid_alive(pid))
                        .unwrap_or(false);
                    if stale {
                        log::warn!("removing stale lock held by dead process {}", holder.trim());
                        fs::remove_file(&path).ok();
                        continue;
                    }
                    return Err(holder.trim().to_string());
                }
                Err(e) => return Err(e.to_string()),
            }
        }
        Err("unknown".into())
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        fs::remove_file(&self.path).ok();
    }
}
