//! On-disk store: `snapshot.txt` (state plus audit anchor) and `audit.log`.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ourbac::admin::Engine;
use ourbac::persist::{parse_audit, replay_audit, replay_prefix, Genesis, ReplayError, Snapshot};

pub const SNAPSHOT: &str = "snapshot.txt";
pub const AUDIT: &str = "audit.log";
const LOCK: &str = ".lock";

pub struct Store {
    dir: PathBuf,
    /// Held for the lifetime of a mutating command.
    _lock: Option<File>,
}

/// Audit errors name the file line: the header and genesis occupy lines
/// 1 and 2, record `seq` sits on line `seq + 2`.
fn audit_error(e: ReplayError) -> anyhow::Error {
    let line = if e.seq == 0 { 1 } else { e.seq + 2 };
    anyhow!("{AUDIT} line {line} (seq {}): {:?}", e.seq, e.cause)
}

impl Store {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Creates a new store. Fails if one already exists at `dir`.
    pub fn init(dir: &Path, genesis: Genesis) -> Result<Engine> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let store = Store::open(dir, true)?;
        if store.path(SNAPSHOT).exists() || store.path(AUDIT).exists() {
            bail!("store already initialized at {}", dir.display());
        }
        let engine = Engine::bootstrap(genesis.rbac_manager.clone(), genesis.config);
        fs::write(store.path(AUDIT), engine.log().to_text(engine.genesis()))
            .with_context(|| format!("writing {AUDIT}"))?;
        store.write_snapshot(&engine)?;
        Ok(engine)
    }

    /// Opens an existing store directory, taking the exclusive lock when
    /// `mutating`.
    pub fn open(dir: &Path, mutating: bool) -> Result<Self> {
        if !dir.is_dir() {
            bail!("store {} does not exist", dir.display());
        }
        let lock = if mutating {
            let f = OpenOptions::new()
                .create(true)
                .truncate(false)
                .write(true)
                .open(dir.join(LOCK))
                .with_context(|| format!("opening lock in {}", dir.display()))?;
            f.try_lock().map_err(|_| anyhow!("store {} is locked by another process", dir.display()))?;
            Some(f)
        } else {
            None
        };
        Ok(Store { dir: dir.to_path_buf(), _lock: lock })
    }

    pub fn read_snapshot(&self) -> Result<Snapshot> {
        let text = fs::read_to_string(self.path(SNAPSHOT)).with_context(|| format!("reading {SNAPSHOT}"))?;
        Snapshot::parse(&text).map_err(|e| anyhow!("{SNAPSHOT} {e}"))
    }

    pub fn read_audit_text(&self) -> Result<String> {
        fs::read_to_string(self.path(AUDIT)).with_context(|| format!("reading {AUDIT}"))
    }

    /// Loads the engine. A snapshot that lags the log (a crash between the
    /// two writes) is rebuilt by replay once it is shown to be a prefix.
    pub fn load(&self) -> Result<Engine> {
        let snapshot = self.read_snapshot()?;
        let (genesis, log) = parse_audit(&self.read_audit_text()?, None).map_err(audit_error)?;
        let head = log.anchor();
        if head == snapshot.anchor {
            return Ok(Engine::from_parts(genesis, log, snapshot.state));
        }
        let at = snapshot.anchor.seq as usize;
        let is_prefix = at < log.len() && (at == 0 || log.records()[at - 1].digest() == snapshot.anchor.head);
        if !is_prefix {
            bail!("{SNAPSHOT} anchor seq {} does not match {AUDIT} (seq {})", snapshot.anchor.seq, head.seq);
        }
        let prefix = replay_prefix(log.records(), &genesis, at).map_err(audit_error)?;
        if prefix != snapshot.state {
            bail!("{SNAPSHOT} disagrees with {AUDIT} at seq {at}");
        }
        let state = replay_audit(log.records(), &genesis).map_err(audit_error)?;
        let engine = Engine::from_parts(genesis, log, state);
        self.write_snapshot(&engine)?;
        Ok(engine)
    }

    /// Full check: chain, anchor, replay, and equality with the snapshot.
    pub fn verify(&self) -> Result<(u64, String)> {
        let snapshot = self.read_snapshot()?;
        let (genesis, log) = parse_audit(&self.read_audit_text()?, Some(&snapshot.anchor)).map_err(audit_error)?;
        let state = replay_audit(log.records(), &genesis).map_err(audit_error)?;
        if state != snapshot.state {
            bail!("{SNAPSHOT} differs from the state replayed from {AUDIT}");
        }
        let anchor = log.anchor();
        Ok((anchor.seq, anchor.head.to_hex()))
    }

    /// Appends records `from..` of the engine's log, then replaces the
    /// snapshot atomically.
    pub fn persist(&self, engine: &Engine, from: usize) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(self.path(AUDIT)).with_context(|| format!("opening {AUDIT}"))?;
        let mut text = String::new();
        for r in &engine.log().records()[from..] {
            text.push_str(&r.encode());
            text.push('\n');
        }
        f.write_all(text.as_bytes()).with_context(|| format!("appending to {AUDIT}"))?;
        f.sync_all()?;
        self.write_snapshot(engine)
    }

    fn write_snapshot(&self, engine: &Engine) -> Result<()> {
        let tmp = self.path(".snapshot.tmp");
        let mut f = File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        f.write_all(engine.snapshot().to_text().as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, self.path(SNAPSHOT)).with_context(|| format!("replacing {SNAPSHOT}"))
    }
}
