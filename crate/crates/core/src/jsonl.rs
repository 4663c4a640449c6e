//! Line-delimited JSON streams used between pipeline stages.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{source_name}:{line}: field `{field}`: {msg}")]
    Schema {
        source_name: String,
        line: usize,
        field: String,
        msg: String,
    },
    #[error("{source_name}:{line}: {source}")]
    Io {
        source_name: String,
        line: usize,
        source: io::Error,
    },
}

fn field_of(path: &str, msg: &str) -> String {
    if !path.is_empty() && path != "." {
        return path.to_string();
    }
    // "missing field `text`" and similar name the field in backticks
    msg.split('`').nth(1).unwrap_or("<record>").to_string()
}

/// Parses one JSON record, naming the offending field on failure.
pub fn parse_record<T: DeserializeOwned>(
    text: &str,
    source_name: &str,
    line: usize,
) -> Result<T, JsonlError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        JsonlError::Schema {
            source_name: source_name.to_string(),
            line,
            field: field_of(&path, &msg),
            msg,
        }
    })
}

/// Iterator over the records of a JSONL stream. Blank lines are skipped.
pub struct JsonlReader<R, T> {
    inner: R,
    source_name: String,
    line: usize,
    buf: String,
    _marker: PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonlReader<R, T> {
    pub fn new(inner: R, source_name: impl Into<String>) -> Self {
        JsonlReader {
            inner,
            source_name: source_name.into(),
            line: 0,
            buf: String::new(),
            _marker: PhantomData,
        }
    }
}

impl<T: DeserializeOwned> JsonlReader<BufReader<File>, T> {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let file = File::open(path).map_err(|source| JsonlError::Io {
            source_name: path.display().to_string(),
            line: 0,
            source,
        })?;
        Ok(Self::new(BufReader::new(file), path.display().to_string()))
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonlReader<R, T> {
    type Item = Result<T, JsonlError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) if self.buf.trim().is_empty() => continue,
                Ok(_) => return Some(parse_record(&self.buf, &self.source_name, self.line)),
                Err(source) => {
                    return Some(Err(JsonlError::Io {
                        source_name: self.source_name.clone(),
                        line: self.line,
                        source,
                    }))
                }
            }
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    JsonlReader::open(path)?.collect()
}

pub fn write_record<W: Write + ?Sized, T: Serialize>(w: &mut W, record: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// File written under a temporary name and renamed into place on `finish`.
pub struct AtomicFile {
    tmp: PathBuf,
    dest: PathBuf,
    writer: BufWriter<File>,
}

impl AtomicFile {
    pub fn create(dest: &Path) -> io::Result<Self> {
        let mut name = dest.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        let tmp = dest.with_file_name(name);
        let writer = BufWriter::new(File::create(&tmp)?);
        Ok(AtomicFile { tmp, dest: dest.to_path_buf(), writer })
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.writer.flush()?;
        self.writer.get_ref().sync_all()?;
        std::fs::rename(&self.tmp, &self.dest)
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.writer.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    let mut f = AtomicFile::create(path)?;
    for r in records {
        write_record(&mut f, r)?;
    }
    f.finish()
}
