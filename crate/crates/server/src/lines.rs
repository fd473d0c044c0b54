//! Newline framing with a hard per-line limit.

use tokio::io::{AsyncBufRead, AsyncBufReadExt};

use panelguide_core::wire::MAX_LINE_BYTES;

#[derive(Debug, PartialEq, Eq)]
pub enum Frame {
    Line(String),
    /// A line longer than the limit; its bytes were discarded.
    TooLong,
}

/// Reads newline-terminated lines without buffering more than the limit.
pub struct LineReader<R> {
    inner: R,
    limit: usize,
    buf: Vec<u8>,
    overflow: bool,
}

impl<R: AsyncBufRead + Unpin> LineReader<R> {
    pub fn new(inner: R) -> Self {
        Self::with_limit(inner, MAX_LINE_BYTES)
    }

    pub fn with_limit(inner: R, limit: usize) -> Self {
        Self {
            inner,
            limit,
            buf: Vec::new(),
            overflow: false,
        }
    }

    /// Next frame, or `None` at end of stream. A trailing `\r` is dropped
    /// and invalid UTF-8 is replaced rather than rejected.
    pub async fn next_frame(&mut self) -> std::io::Result<Option<Frame>> {
        loop {
            let available = self.inner.fill_buf().await?;
            if available.is_empty() {
                // An unterminated tail at EOF still counts as a line.
                if self.overflow {
                    self.overflow = false;
                    return Ok(Some(Frame::TooLong));
                }
                if self.buf.is_empty() {
                    return Ok(None);
                }
                return Ok(Some(self.take_line()));
            }
            let (chunk, found) = match available.iter().position(|b| *b == b'\n') {
                Some(i) => (&available[..i], Some(i + 1)),
                None => (available, None),
            };
            if !self.overflow {
                if self.buf.len() + chunk.len() > self.limit {
                    self.overflow = true;
                    self.buf.clear();
                } else {
                    self.buf.extend_from_slice(chunk);
                }
            }
            let consumed = found.unwrap_or(available.len());
            self.inner.consume(consumed);
            if found.is_some() {
                if self.overflow {
                    self.overflow = false;
                    return Ok(Some(Frame::TooLong));
                }
                return Ok(Some(self.take_line()));
            }
        }
    }

    fn take_line(&mut self) -> Frame {
        if self.buf.last() == Some(&b'\r') {
            self.buf.pop();
        }
        let line = String::from_utf8_lossy(&self.buf).into_owned();
        self.buf.clear();
        Frame::Line(line)
    }
}
