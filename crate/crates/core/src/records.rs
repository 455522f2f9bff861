//! JSONL document records: the unit of every corpus stage.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub subset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl DocumentRecord {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        lang: impl Into<String>,
        subset: impl Into<String>,
    ) -> Self {
        DocumentRecord {
            id: id.into(),
            text: text.into(),
            lang: lang.into(),
            subset: subset.into(),
            url: None,
        }
    }
}

/// Iterator over JSONL lines; errors carry the 1-based line number.
pub struct JsonlReader<R> {
    reader: R,
    line: u64,
    buf: String,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(reader: R) -> Self {
        JsonlReader {
            reader,
            line: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<DocumentRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                continue;
            }
            return Some(parse_record(line, self.line));
        }
    }
}

fn parse_record(line: &str, lineno: u64) -> Result<DocumentRecord> {
    let rec: DocumentRecord = serde_json::from_str(line)
        .map_err(|e| Error::parse(format!("line {lineno}: {e}")))?;
    if rec.id.is_empty() {
        return Err(Error::parse(format!("line {lineno}: empty id")));
    }
    if rec.lang.is_empty() {
        return Err(Error::parse(format!("line {lineno}: empty lang")));
    }
    Ok(rec)
}

pub fn write_record(mut w: impl Write, rec: &DocumentRecord) -> Result<()> {
    serde_json::to_writer(&mut w, rec).map_err(|e| Error::data(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_optional_url() {
        let mut rec = DocumentRecord::new("d1", "szöveg", "hu", "news");
        let mut buf = Vec::new();
        write_record(&mut buf, &rec).unwrap();
        assert!(!String::from_utf8_lossy(&buf).contains("url"));

        rec.url = Some("https://example.hu".into());
        write_record(&mut buf, &rec).unwrap();

        let docs: Vec<_> = JsonlReader::new(buf.as_slice())
            .collect::<Result<Vec<_>>>()
            .unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].url.as_deref(), Some("https://example.hu"));
    }

    #[test]
    fn blank_lines_skipped_errors_numbered() {
        let input = "\n{\"id\":\"a\",\"text\":\"t\",\"lang\":\"hu\",\"subset\":\"s\"}\n\nnot json\n";
        let mut it = JsonlReader::new(input.as_bytes());
        assert!(it.next().unwrap().is_ok());
        let err = it.next().unwrap().unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn empty_id_rejected() {
        let input = r#"{"id":"","text":"t","lang":"hu","subset":"s"}"#;
        let err = JsonlReader::new(input.as_bytes()).next().unwrap().unwrap_err();
        assert!(err.to_string().contains("empty id"));
    }
}
