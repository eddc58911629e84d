//! Tab-separated sample lists: header `id  window  label`, optionally
//! followed by `protein  position` columns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{residue_index, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    /// Peptide window centered on the candidate site.
    pub window: String,
    pub label: u8,
    /// Source protein id and 1-based position of the center residue.
    pub origin: Option<(String, usize)>,
}

impl SampleRecord {
    pub fn center_residue(&self) -> u8 {
        self.window.as_bytes()[self.window.len() / 2]
    }
}

/// Checks one window against the configured length and target residues.
pub(crate) fn check_window(window: &str, window_len: usize, targets: Option<&[u8]>) -> std::result::Result<(), String> {
    if window.len() != window_len {
        return Err(format!("window length {} differs from configured {window_len}", window.len()));
    }
    for (i, c) in window.bytes().enumerate() {
        if c != PAD && residue_index(c).is_none() {
            return Err(format!("invalid residue {:?} at window position {}", c as char, i + 1));
        }
    }
    let center = window.as_bytes()[window_len / 2];
    if center == PAD {
        return Err("window center is padding".into());
    }
    if let Some(t) = targets {
        if !t.contains(&center) {
            return Err(format!("center residue {:?} is not a target residue", center as char));
        }
    }
    Ok(())
}

/// Parses dataset text. Line numbers in errors count the header as line 1.
pub fn parse_dataset(text: &str, source: &str, window_len: usize, targets: Option<&[u8]>) -> Result<Vec<SampleRecord>> {
    if window_len.is_multiple_of(2) || window_len == 0 {
        return Err(Error::config(format!("window length must be odd, got {window_len}")));
    }
    let err = |line: usize, msg: String| Error::input(format!("{source}: line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r'),
        None => return Err(err(1, "empty file, expected header".into())),
    };
    let with_origin = match header {
        "id\twindow\tlabel" => false,
        "id\twindow\tlabel\tprotein\tposition" => true,
        _ => return Err(err(1, format!("bad header {header:?}, expected \"id\\twindow\\tlabel\""))),
    };
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let want = if with_origin { 5 } else { 3 };
        if fields.len() != want {
            return Err(err(line_no, format!("expected {want} fields, found {}", fields.len())));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(err(line_no, "empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(err(line_no, format!("duplicate id {id:?}")));
        }
        let window = fields[1].to_ascii_uppercase();
        check_window(&window, window_len, targets).map_err(|m| err(line_no, m))?;
        let label = match fields[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(line_no, format!("label must be 0 or 1, got {other:?}"))),
        };
        let origin = if with_origin {
            let pos: usize = fields[4]
                .parse()
                .ok()
                .filter(|&p| p >= 1)
                .ok_or_else(|| err(line_no, format!("bad position {:?}", fields[4])))?;
            Some((fields[3].to_string(), pos))
        } else {
            None
        };
        out.push(SampleRecord { id, window, label, origin });
    }
    if out.is_empty() {
        return Err(err(1, "no records".into()));
    }
    Ok(out)
}

pub fn read_dataset(path: impl AsRef<Path>, window_len: usize, targets: Option<&[u8]>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, &path.display().to_string(), window_len, targets)
}

pub fn write_dataset(records: &[SampleRecord]) -> String {
    let with_origin = records.iter().all(|r| r.origin.is_some()) && !records.is_empty();
    let mut s = String::from(if with_origin {
        "id\twindow\tlabel\tprotein\tposition\n"
    } else {
        "id\twindow\tlabel\n"
    });
    for r in records {
        let _ = write!(s, "{}\t{}\t{}", r.id, r.window, r.label);
        if with_origin {
            let (p, pos) = r.origin.as_ref().unwrap();
            let _ = write!(s, "\t{p}\t{pos}");
        }
        s.push('\n');
    }
    s
}
