use std::io::{self, BufRead, BufReader, Read};

use flate2::read::MultiGzDecoder;

use super::{Headers, RecordType, WarcError, WarcRecord};

/// Longest accepted header line.
const MAX_LINE: u64 = 64 * 1024;
/// Largest accepted record payload.
pub const MAX_PAYLOAD: u64 = 1 << 30;

/// Streams records out of a WARC archive in file order.
///
/// Malformed or truncated records are yielded as `Err` items carrying the
/// byte offset of the record; the reader then skips ahead to the next
/// `WARC/1.x` line and continues. I/O failures end the iteration after one
/// error item.
pub struct WarcReader<R> {
    inner: R,
    offset: u64,
    pending_version: Option<(u64, String)>,
    finished: bool,
}

/// Reads records from `archive`. With `gzip` set, the stream is decoded as a
/// sequence of gzip members (one per record or one for the whole file).
pub fn iter_warc_records<'a, R: Read + 'a>(
    archive: R,
    gzip: bool,
) -> WarcReader<Box<dyn BufRead + 'a>> {
    let mut archive = BufReader::new(archive);
    // an empty file is an empty archive, not a broken gzip stream
    let empty = archive.fill_buf().map(|b| b.is_empty()).unwrap_or(false);
    let inner: Box<dyn BufRead + 'a> = if gzip && !empty {
        Box::new(BufReader::new(MultiGzDecoder::new(archive)))
    } else {
        Box::new(BufReader::new(archive))
    };
    WarcReader::new(inner)
}

enum Line {
    Eof,
    Text { start: u64, text: String },
}

fn is_version_line(line: &str) -> bool {
    matches!(line, "WARC/1.0" | "WARC/1.1")
}

impl<R: BufRead> WarcReader<R> {
    pub fn new(inner: R) -> Self {
        WarcReader {
            inner,
            offset: 0,
            pending_version: None,
            finished: false,
        }
    }

    /// Bytes consumed from the (decompressed) stream so far.
    pub fn bytes_consumed(&self) -> u64 {
        self.offset
    }

    fn read_line(&mut self) -> io::Result<Line> {
        let start = self.offset;
        let mut buf = Vec::new();
        let n = (&mut self.inner).take(MAX_LINE).read_until(b'\n', &mut buf)?;
        self.offset += n as u64;
        if n == 0 {
            return Ok(Line::Eof);
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        Ok(Line::Text {
            start,
            text: String::from_utf8_lossy(&buf).into_owned(),
        })
    }

    /// Skips lines until the next version line, which is kept for the next record.
    fn resync(&mut self) -> io::Result<()> {
        loop {
            match self.read_line()? {
                Line::Eof => {
                    self.finished = true;
                    return Ok(());
                }
                Line::Text { start, text } if is_version_line(&text) => {
                    self.pending_version = Some((start, text));
                    return Ok(());
                }
                Line::Text { .. } => {}
            }
        }
    }

    fn fail(&mut self, err: WarcError) -> Option<Result<WarcRecord, WarcError>> {
        if let Err(e) = self.resync() {
            self.finished = true;
            return Some(Err(WarcError::Io(e)));
        }
        Some(Err(err))
    }

    fn next_record(&mut self) -> io::Result<Option<Result<WarcRecord, WarcError>>> {
        let (start, version) = match self.pending_version.take() {
            Some(v) => v,
            None => loop {
                match self.read_line()? {
                    Line::Eof => {
                        self.finished = true;
                        return Ok(None);
                    }
                    Line::Text { text, .. } if text.trim().is_empty() => continue,
                    Line::Text { start, text } => break (start, text),
                }
            },
        };
        if !is_version_line(&version) {
            return Ok(self.fail(WarcError::MalformedVersion { offset: start }));
        }

        let mut headers = Headers::default();
        loop {
            let text = match self.read_line()? {
                Line::Eof => {
                    self.finished = true;
                    return Ok(Some(Err(WarcError::TruncatedHeaders { offset: start })));
                }
                Line::Text { text, .. } => text,
            };
            if text.is_empty() {
                break;
            }
            if text.starts_with([' ', '\t']) && !headers.is_empty() {
                headers.extend_last(text.trim());
                continue;
            }
            let Some((name, value)) = text.split_once(':') else {
                return Ok(self.fail(WarcError::MalformedHeader {
                    offset: start,
                    line: text,
                }));
            };
            headers.push(name.trim(), value.trim());
        }

        let length = match headers.get("Content-Length").map(|v| v.parse::<u64>()) {
            Some(Ok(n)) if n <= MAX_PAYLOAD => n,
            Some(Ok(n)) => {
                return Ok(self.fail(WarcError::TooLarge {
                    offset: start,
                    length: n,
                }))
            }
            _ => {
                return Ok(self.fail(WarcError::MissingHeader {
                    offset: start,
                    name: "Content-Length",
                }))
            }
        };

        let mut payload = Vec::with_capacity(length.min(1 << 20) as usize);
        let got = (&mut self.inner).take(length).read_to_end(&mut payload)? as u64;
        self.offset += got;
        if got < length {
            self.finished = true;
            return Ok(Some(Err(WarcError::Truncated {
                offset: start,
                expected: length,
                got,
            })));
        }
        let Some(kind) = headers.get("WARC-Type") else {
            return Ok(Some(Err(WarcError::MissingHeader {
                offset: start,
                name: "WARC-Type",
            })));
        };
        let record_type = RecordType::from_header(kind);
        Ok(Some(Ok(WarcRecord {
            version,
            headers,
            record_type,
            content_length: length,
            payload,
        })))
    }
}

impl<R: BufRead> Iterator for WarcReader<R> {
    type Item = Result<WarcRecord, WarcError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.next_record() {
            Ok(item) => item,
            Err(e) => {
                self.finished = true;
                Some(Err(WarcError::Io(e)))
            }
        }
    }
}
