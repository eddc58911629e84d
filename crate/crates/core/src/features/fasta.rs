use std::fs;
use std::path::Path;

use super::{residue_index, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FastaRecord {
    /// First whitespace-delimited token of the header.
    pub id: String,
    pub description: String,
    /// Upper-case residues; ambiguity codes are mapped to `X`.
    pub sequence: String,
}

const AMBIGUOUS: &[u8] = b"BZJUO";

pub fn parse_fasta(text: &str, source: &str) -> Result<Vec<FastaRecord>> {
    let err = |line: usize, msg: String| Error::input(format!("{source}: line {line}: {msg}"));
    let mut out: Vec<(FastaRecord, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('>') {
            let h = h.trim();
            let id = h.split_whitespace().next().unwrap_or("");
            if id.is_empty() {
                return Err(err(line_no, "header without id".into()));
            }
            out.push((
                FastaRecord {
                    id: id.to_string(),
                    description: h[id.len()..].trim().to_string(),
                    sequence: String::new(),
                },
                line_no,
            ));
            continue;
        }
        let Some((rec, _)) = out.last_mut() else {
            return Err(err(line_no, "sequence data before the first '>' header".into()));
        };
        for c in line.bytes().filter(|c| !c.is_ascii_whitespace()) {
            let c = c.to_ascii_uppercase();
            if c == b'*' {
                continue;
            }
            if c == PAD || residue_index(c).is_some() {
                rec.sequence.push(c as char);
            } else if AMBIGUOUS.contains(&c) {
                log::warn!("{source}: line {line_no}: residue {:?} treated as X", c as char);
                rec.sequence.push(PAD as char);
            } else {
                return Err(err(line_no, format!("invalid residue {:?}", c as char)));
            }
        }
    }
    if out.is_empty() {
        return Err(err(1, "no FASTA records".into()));
    }
    for (rec, line) in &out {
        if rec.sequence.is_empty() {
            return Err(err(*line, format!("record {:?} has an empty sequence", rec.id)));
        }
    }
    Ok(out.into_iter().map(|(r, _)| r).collect())
}

pub fn read_fasta(path: impl AsRef<Path>) -> Result<Vec<FastaRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_fasta(&text, &path.display().to_string())
}
