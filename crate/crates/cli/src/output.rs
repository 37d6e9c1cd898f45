use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;

/// Output directory that remembers every file written into it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Opens `name` for writing and runs `body` on a buffered handle.
    pub fn write<F>(&mut self, name: &str, body: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    {
        let path = self.root.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        body(&mut out)?;
        out.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            out.write_all(b"\n")?;
            Ok(())
        })
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seeds: &'a [u64],
    config: &'a RunConfig,
    outputs: &'a [String],
    exit_code: u8,
    started_unix: f64,
    wall_clock_seconds: f64,
}

/// Start time of a command, for the manifest.
pub struct Clock {
    wall: SystemTime,
    timer: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Clock {
            wall: SystemTime::now(),
            timer: Instant::now(),
        }
    }
}

/// Writes `manifest.json` listing the files produced so far.
pub fn write_manifest(
    out: &mut OutDir,
    command: &str,
    config: &RunConfig,
    seeds: &[u64],
    exit_code: u8,
    clock: &Clock,
) -> anyhow::Result<()> {
    let outputs = out.written.clone();
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seeds,
        config,
        outputs: &outputs,
        exit_code,
        started_unix: clock
            .wall
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
        wall_clock_seconds: clock.timer.elapsed().as_secs_f64(),
    };
    out.write_json("manifest.json", &manifest)
}
