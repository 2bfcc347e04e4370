use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Run `fill` against a temporary file next to `path` and rename it into
/// place only if `fill` succeeds. `-` writes straight to stdout.
pub fn write_atomic<T>(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<T>) -> Result<T> {
    if path == Path::new("-") {
        let stdout = io::stdout();
        let mut lock = BufWriter::new(stdout.lock());
        let value = fill(&mut lock)?;
        lock.flush().context("writing to stdout")?;
        return Ok(value);
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    let mut writer = BufWriter::new(tmp);
    let value = fill(&mut writer)?;
    let tmp = writer
        .into_inner()
        .map_err(|e| e.into_error())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("moving output into place at {}", path.display()))?;
    Ok(value)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    write_atomic(path, |w| Ok(genlink::jsonl::write_to(w, items)?))
}

/// Run settings stored next to an output file as `<out>.meta.json`.
#[derive(Debug, Serialize)]
pub struct RunMeta<'a, A: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: Option<u64>,
    pub settings: A,
}

pub fn write_meta<A: Serialize>(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    settings: A,
) -> Result<()> {
    if out == Path::new("-") {
        return Ok(());
    }
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    let meta = RunMeta {
        tool: "genlink",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        settings,
    };
    write_json(Path::new(&name), &meta)
}

pub fn create_reader(path: &Path) -> Result<io::BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(io::BufReader::new(f))
}
