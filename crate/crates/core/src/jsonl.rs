//! Line-delimited JSON helpers shared by every file format in the crate.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

pub(crate) fn parse_line<T: DeserializeOwned>(
    path: &Path,
    line_no: usize,
    line: &str,
) -> Result<T, JsonlError> {
    serde_json::from_str(line).map_err(|e| JsonlError::Parse {
        path: path.display().to_string(),
        line: line_no,
        message: e.to_string(),
    })
}

/// Read every non-empty line of `path` as one `T`.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| parse_line(path, n, &line))
        .collect()
}

/// Write one JSON record per line.
pub fn write_records<'a, T, I>(path: &Path, records: I) -> Result<(), JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        write_record(&mut w, r).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub(crate) fn write_record<W: Write, T: Serialize>(w: &mut W, record: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}
