use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusMode {
    /// Raw bytes; the vocabulary is the set of bytes present.
    Byte,
    /// Lower-cased letters and space, 27 symbols.
    Char,
}

impl FromStr for CorpusMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byte" => Ok(CorpusMode::Byte),
            "char" => Ok(CorpusMode::Char),
            other => Err(Error::Config(format!("unknown corpus mode `{other}`"))),
        }
    }
}

impl fmt::Display for CorpusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusMode::Byte => "byte",
            CorpusMode::Char => "char",
        })
    }
}

pub const CHAR_SYMBOLS: &[u8; 27] = b" abcdefghijklmnopqrstuvwxyz";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// A tokenised text with contiguous 90/5/5 train/dev/test regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub mode: CorpusMode,
    /// Symbol of each id.
    pub symbols: Vec<u8>,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Smallest tokenised length that leaves every split non-empty.
pub const MIN_CORPUS_TOKENS: usize = 20;

fn normalise_char(b: u8) -> Option<u8> {
    match b {
        b'a'..=b'z' | b' ' => Some(b),
        b'A'..=b'Z' => Some(b.to_ascii_lowercase()),
        b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => Some(b' '),
        _ => None,
    }
}

impl Corpus {
    pub fn from_bytes(bytes: &[u8], mode: CorpusMode) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Ingest("empty input".into()));
        }
        let (symbols, ids): (Vec<u8>, Vec<usize>) = match mode {
            CorpusMode::Byte => {
                let mut present = [false; 256];
                bytes.iter().for_each(|&b| present[b as usize] = true);
                let symbols: Vec<u8> = (0..=255u8).filter(|&b| present[b as usize]).collect();
                let mut index = [0usize; 256];
                for (i, &s) in symbols.iter().enumerate() {
                    index[s as usize] = i;
                }
                (symbols, bytes.iter().map(|&b| index[b as usize]).collect())
            }
            CorpusMode::Char => {
                let ids = bytes
                    .iter()
                    .filter_map(|&b| normalise_char(b))
                    .map(|b| if b == b' ' { 0 } else { (b - b'a') as usize + 1 })
                    .collect();
                (CHAR_SYMBOLS.to_vec(), ids)
            }
        };
        if ids.len() < MIN_CORPUS_TOKENS {
            return Err(Error::Ingest(format!(
                "{} tokens after normalisation, need at least {MIN_CORPUS_TOKENS}",
                ids.len()
            )));
        }
        let n = ids.len();
        let (a, b) = (n * 90 / 100, n * 95 / 100);
        Ok(Self {
            mode,
            symbols,
            train: ids[..a].to_vec(),
            dev: ids[a..b].to_vec(),
            test: ids[b..].to_vec(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn split(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Maps text to ids with the same normalisation as ingestion.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        match self.mode {
            CorpusMode::Char => Ok(text
                .bytes()
                .filter_map(normalise_char)
                .map(|b| if b == b' ' { 0 } else { (b - b'a') as usize + 1 })
                .collect()),
            CorpusMode::Byte => text
                .bytes()
                .map(|b| {
                    self.symbols.binary_search(&b).map_err(|_| Error::Vocabulary {
                        id: b as usize,
                        vocab: self.symbols.len(),
                    })
                })
                .collect(),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let bytes: Vec<u8> = ids.iter().filter_map(|&i| self.symbols.get(i).copied()).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Reads and tokenises a text file.
pub fn ingest(path: impl AsRef<Path>, mode: CorpusMode) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    Corpus::from_bytes(&bytes, mode)
}
