use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Corpus, CorpusHeader, DataPoint};
use crate::error::{Error, Result};

/// `corpus.jsonl` -> `corpus.header.json`
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("header.json")
}

pub fn save_points(points: &[DataPoint], path: &Path) -> Result<()> {
    let ctx = || path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut out = BufWriter::new(file);
    for p in points {
        serde_json::to_writer(&mut out, p).map_err(|e| Error::json(ctx(), e))?;
        out.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn load_points(path: &Path) -> Result<Vec<DataPoint>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut points = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let point: DataPoint =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        points.push(point);
    }
    Ok(points)
}

pub(super) fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    save_points(corpus.points(), path)?;
    let hp = header_path(path);
    let file = File::create(&hp).map_err(|e| Error::io(hp.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &corpus.header()).map_err(|e| Error::json(hp.display().to_string(), e))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(hp.display().to_string(), e))
}

pub(super) fn load_corpus(path: &Path) -> Result<Corpus> {
    let hp = header_path(path);
    if !hp.exists() {
        return Err(Error::MissingPath(hp));
    }
    let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(hp.display().to_string(), e))?;
    let header: CorpusHeader = serde_json::from_str(&text).map_err(|e| Error::json(hp.display().to_string(), e))?;
    let points = load_points(path)?;
    if points.len() != header.n_points {
        return Err(Error::Data(format!(
            "{} holds {} points but its header declares {}",
            path.display(),
            points.len(),
            header.n_points
        )));
    }
    Corpus::new(points, header.registry, header.d_f, header.metadata)
}
