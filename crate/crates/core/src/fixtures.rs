//! Instruction, reply and OCR fixtures keyed by fixture id.
//!
//! On disk a fixture directory has three optional subdirectories:
//! `instructions/<id>.txt`, `replies/<id>.txt` and `ocr/<id>.txt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::{ingest_text, IngestError, InstructionDocument, ScriptedOcr, Source};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no instruction fixture named {0:?}")]
    UnknownInstruction(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Default)]
pub struct FixtureSet {
    pub instructions: BTreeMap<String, String>,
    pub replies: BTreeMap<String, String>,
    pub ocr_pages: BTreeMap<String, String>,
}

impl FixtureSet {
    /// The HVAC and pump tasks compiled into the binary.
    pub fn bundled() -> Self {
        let pairs = |items: &[(&str, &str)]| {
            items
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect::<BTreeMap<_, _>>()
        };
        FixtureSet {
            instructions: pairs(&[
                ("hvac", include_str!("../fixtures/instructions/hvac.txt")),
                ("pump", include_str!("../fixtures/instructions/pump.txt")),
            ]),
            replies: pairs(&[
                ("hvac", include_str!("../fixtures/replies/hvac.txt")),
                ("pump", include_str!("../fixtures/replies/pump.txt")),
            ]),
            ocr_pages: pairs(&[
                ("hvac", include_str!("../fixtures/ocr/hvac.txt")),
                ("pump", include_str!("../fixtures/ocr/pump.txt")),
            ]),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        if !dir.is_dir() {
            return Err(FixtureError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
        Ok(FixtureSet {
            instructions: read_txt_dir(&dir.join("instructions"))?,
            replies: read_txt_dir(&dir.join("replies"))?,
            ocr_pages: read_txt_dir(&dir.join("ocr"))?,
        })
    }

    pub fn instruction(&self, id: &str) -> Result<InstructionDocument, FixtureError> {
        let raw = self
            .instructions
            .get(id)
            .ok_or_else(|| FixtureError::UnknownInstruction(id.to_string()))?;
        let mut doc = ingest_text(raw, id)?;
        doc.source = Source::TextFile;
        Ok(doc)
    }

    /// Reply text with a single trailing line terminator removed.
    pub fn reply(&self, id: &str) -> Option<&str> {
        self.replies
            .get(id)
            .map(|r| r.strip_suffix('\n').unwrap_or(r))
            .map(|r| r.strip_suffix('\r').unwrap_or(r))
    }

    pub fn scripted_ocr(&self) -> ScriptedOcr {
        self.ocr_pages
            .iter()
            .fold(ScriptedOcr::new(), |ocr, (name, text)| {
                ocr.with_page(name, text.lines().map(str::to_string).collect())
            })
    }
}

fn read_txt_dir(dir: &Path) -> Result<BTreeMap<String, String>, FixtureError> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let io = |source| FixtureError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            let text = std::fs::read_to_string(&path).map_err(io)?;
            out.insert(crate::ingest::stem(&path), text);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_word_counts() {
        let f = FixtureSet::bundled();
        assert_eq!(f.instruction("hvac").unwrap().word_count, 491);
        assert_eq!(f.instruction("pump").unwrap().word_count, 489);
        assert!(matches!(
            f.instruction("nope"),
            Err(FixtureError::UnknownInstruction(_))
        ));
    }

    #[test]
    fn replies_lose_one_terminator() {
        let f = FixtureSet::bundled();
        assert_eq!(
            f.reply("hvac").unwrap(),
            "B_04, K_03, B_07, H_00, S_04, T_04, H_00, T_04"
        );
    }

    #[test]
    fn disk_layout_matches_bundle() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        let disk = FixtureSet::from_dir(&dir).unwrap();
        let bundled = FixtureSet::bundled();
        assert_eq!(disk.instructions, bundled.instructions);
        assert_eq!(disk.replies, bundled.replies);
    }
}
