//! Stage directories and their manifests.
//!
//! Every stage writes into `<out>/<stage>/` and finishes by writing
//! `manifest.txt`, which records a fingerprint of the configuration the
//! stage depends on, the SHA-256 of every file it produced and the hash of
//! each upstream manifest it consumed. A stage without a manifest is
//! treated as missing, so an interrupted run never looks complete.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::CaseConfig;
use crate::error::{CliError, Result};

pub const STAGES: [&str; 7] = ["mesh", "hf", "pod", "supremizer", "offline", "online", "compare"];

const MANIFEST: &str = "manifest.txt";

/// Stage each stage reads from directly.
pub fn upstream(stage: &str) -> &'static [&'static str] {
    match stage {
        "hf" => &["mesh"],
        "pod" => &["mesh", "hf"],
        "supremizer" => &["mesh", "hf", "pod"],
        "offline" => &["mesh", "pod", "supremizer"],
        "online" => &["mesh", "hf", "pod", "supremizer", "offline"],
        "compare" => &["mesh", "hf", "pod", "supremizer", "online"],
        _ => &[],
    }
}

/// Configuration keys each stage adds to those of the stage before it.
fn own_keys(stage: &str) -> &'static [&'static str] {
    match stage {
        "mesh" => &["mesh"],
        "hf" => &[
            "velocity_bc",
            "pressure_bc",
            "initial",
            "hf",
            "online.viscosities",
            "online.horizon",
            "online.initial",
        ],
        "pod" => &["rom.n_velocity", "rom.n_pressure"],
        "supremizer" => &["rom.n_supremizer", "rom.enrichment", "rom.table_rows"],
        "offline" => &["rom.stabilisations"],
        "online" => &["online"],
        _ => &[],
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Hash of the configuration keys a stage and everything upstream of it
/// depend on.
pub fn fingerprint(config: &CaseConfig, stage: &str) -> String {
    let value = toml::Value::try_from(config).expect("configuration serialises");
    let mut text = String::new();
    for s in STAGES.iter().take_while(|s| **s != stage).chain(std::iter::once(&stage)) {
        for key in own_keys(s) {
            let mut v = Some(&value);
            for part in key.split('.') {
                v = v.and_then(|v| v.get(part));
            }
            let _ = writeln!(text, "{key} = {}", v.map(|v| v.to_string()).unwrap_or_default());
        }
    }
    sha256_hex(text.as_bytes())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub stage: String,
    pub fingerprint: String,
    pub upstream: BTreeMap<String, String>,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stage {}", self.stage);
        let _ = writeln!(s, "fingerprint {}", self.fingerprint);
        for (k, v) in &self.upstream {
            let _ = writeln!(s, "upstream {k} {v}");
        }
        for (k, v) in &self.files {
            let _ = writeln!(s, "file {k} {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Option<Manifest> {
        let mut m = Manifest::default();
        for line in text.lines() {
            let mut it = line.split_whitespace();
            match (it.next()?, it.next()?, it.next()) {
                ("stage", s, None) => m.stage = s.into(),
                ("fingerprint", s, None) => m.fingerprint = s.into(),
                ("upstream", k, Some(v)) => {
                    m.upstream.insert(k.into(), v.into());
                }
                ("file", k, Some(v)) => {
                    m.files.insert(k.into(), v.into());
                }
                _ => return None,
            }
        }
        (!m.stage.is_empty()).then_some(m)
    }
}

/// Output tree of one case.
pub struct Workspace {
    pub root: PathBuf,
    pub config: CaseConfig,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config: CaseConfig) -> Self {
        Workspace {
            root: root.into(),
            config,
        }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn path(&self, stage: &str, file: &str) -> PathBuf {
        self.dir(stage).join(file)
    }

    fn manifest_text(&self, stage: &str) -> Result<String> {
        std::fs::read_to_string(self.path(stage, MANIFEST)).map_err(|_| CliError::Missing { stage: stage.into() })
    }

    /// Checks a finished upstream stage against the current configuration
    /// and the bytes on disk.
    pub fn require(&self, stage: &str) -> Result<Manifest> {
        let stale = |reason: String| CliError::Stale {
            stage: stage.into(),
            reason,
        };
        let m = Manifest::parse(&self.manifest_text(stage)?).ok_or_else(|| stale("unreadable manifest".into()))?;
        if m.fingerprint != fingerprint(&self.config, stage) {
            return Err(stale("configuration changed".into()));
        }
        for (up, hash) in &m.upstream {
            let text = self.manifest_text(up)?;
            if &sha256_hex(text.as_bytes()) != hash {
                return Err(stale(format!("stage `{up}` was rerun since")));
            }
        }
        for (file, hash) in &m.files {
            let p = self.path(stage, file);
            if !p.exists() {
                return Err(stale(format!("{file} is missing")));
            }
            if &hash_file(&p)? != hash {
                return Err(stale(format!("{file} was modified")));
            }
        }
        Ok(m)
    }

    /// Validates the upstream stages and opens a fresh output directory.
    pub fn begin(&self, stage: &str) -> Result<StageWriter<'_>> {
        let mut upstream = BTreeMap::new();
        for up in self::upstream(stage) {
            self.require(up)?;
            upstream.insert(up.to_string(), sha256_hex(self.manifest_text(up)?.as_bytes()));
        }
        let dir = self.dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(StageWriter {
            ws: self,
            manifest: Manifest {
                stage: stage.into(),
                fingerprint: fingerprint(&self.config, stage),
                upstream,
                files: BTreeMap::new(),
            },
        })
    }
}

/// Collects the files of a running stage; `finish` seals the manifest.
pub struct StageWriter<'a> {
    ws: &'a Workspace,
    manifest: Manifest,
}

impl StageWriter<'_> {
    /// Registers `name` and returns the path to write it to.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.manifest.files.insert(name.into(), String::new());
        self.ws.path(&self.manifest.stage, name)
    }

    pub fn finish(mut self) -> Result<Manifest> {
        let stage = self.manifest.stage.clone();
        for (name, hash) in self.manifest.files.iter_mut() {
            *hash = hash_file(&self.ws.path(&stage, name))?;
        }
        std::fs::write(self.ws.path(&stage, MANIFEST), self.manifest.render())?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_case;

    fn cavity() -> CaseConfig {
        parse_case(include_str!("../cases/cavity.case"), None, &[]).unwrap()
    }

    #[test]
    fn manifest_round_trips() {
        let mut m = Manifest {
            stage: "pod".into(),
            fingerprint: "ab".into(),
            ..Manifest::default()
        };
        m.upstream.insert("hf".into(), "cd".into());
        m.files.insert("modes.bin".into(), "ef".into());
        assert_eq!(Manifest::parse(&m.render()), Some(m));
        assert_eq!(Manifest::parse("garbage"), None);
    }

    #[test]
    fn fingerprints_track_only_upstream_keys() {
        let a = cavity();
        let mut b = a.clone();
        b.online.timing_repeats = 5;
        assert_eq!(fingerprint(&a, "offline"), fingerprint(&b, "offline"));
        assert_ne!(fingerprint(&a, "online"), fingerprint(&b, "online"));
        b.mesh.n = Some(32);
        assert_ne!(fingerprint(&a, "mesh"), fingerprint(&b, "mesh"));
        assert_ne!(fingerprint(&a, "compare"), fingerprint(&b, "compare"));
    }

    #[test]
    fn detects_missing_modified_and_stale_stages() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path(), cavity());
        assert!(matches!(ws.require("mesh"), Err(CliError::Missing { .. })));
        let mut w = ws.begin("mesh").unwrap();
        std::fs::write(w.file("a.txt"), "x").unwrap();
        w.finish().unwrap();
        ws.require("mesh").unwrap();
        let mut w = ws.begin("hf").unwrap();
        std::fs::write(w.file("b.txt"), "y").unwrap();
        w.finish().unwrap();
        ws.require("hf").unwrap();

        std::fs::write(ws.path("mesh", "a.txt"), "z").unwrap();
        assert!(matches!(ws.require("mesh"), Err(CliError::Stale { ref stage, .. }) if stage == "mesh"));

        assert!(matches!(ws.begin("hf"), Err(CliError::Stale { .. })));

        let mut w = ws.begin("mesh").unwrap();
        std::fs::write(w.file("a.txt"), "other").unwrap();
        w.finish().unwrap();
        assert!(matches!(ws.require("hf"), Err(CliError::Stale { ref stage, .. }) if stage == "hf"));

        let mut changed = cavity();
        changed.hf.time_step = 1e-3;
        let ws2 = Workspace::new(dir.path(), changed);
        ws2.require("mesh").unwrap();
        assert!(matches!(ws2.require("hf"), Err(CliError::Stale { .. })));
    }
}
