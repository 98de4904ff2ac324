//! JSON-lines dataset formats and the synthetic benchmark generator.

mod synthetic;

pub use synthetic::{default_clusters, generate_synthetic, SynonymCluster, SyntheticData, SyntheticSpec};

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::augment::Event;
use crate::error::{Error, Result};
use crate::numerics::write_atomic;

/// A lexically divergent similar pair and a lexically overlapping dissimilar pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardPair {
    pub similar: (Event, Event),
    pub dissimilar: (Event, Event),
}

/// Two events with a human-style similarity grade in `[1, 7]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitivePair {
    pub event_a: Event,
    pub event_b: Event,
    pub gold_score: f64,
}

/// A context chain and five candidate continuations, one of them correct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McncInstance {
    pub context: Vec<Event>,
    pub candidates: Vec<Event>,
    pub gold_index: usize,
}

pub const MCNC_CANDIDATES: usize = 5;

fn schema(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Re-validates an event read from disk (normalization, non-empty parts).
fn check_event(e: &Event, path: &Path, line: usize) -> Result<Event> {
    Event::new(&e.subject, &e.predicate, &e.object).map_err(|err| schema(path, line, err.to_string()))
}

/// Reads one JSON value per non-blank line and converts it with `convert`.
///
/// Malformed JSON is a parse error; a well-formed line of the wrong shape is a
/// schema error. Both carry the 1-based line number.
fn load_jsonl<T, F>(path: &Path, mut convert: F) -> Result<Vec<T>>
where
    F: FnMut(serde_json::Value, usize) -> Result<T>,
{
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n,
            message: e.to_string(),
        })?;
        out.push(convert(value, n)?);
    }
    Ok(out)
}

fn typed<T: DeserializeOwned>(value: serde_json::Value, path: &Path, line: usize) -> Result<T> {
    serde_json::from_value(value).map_err(|e| schema(path, line, e.to_string()))
}

pub fn load_events(path: &Path) -> Result<Vec<Event>> {
    load_jsonl(path, |v, n| check_event(&typed(v, path, n)?, path, n))
}

pub fn load_hard_pairs(path: &Path) -> Result<Vec<HardPair>> {
    load_jsonl(path, |v, n| {
        let p: HardPair = typed(v, path, n)?;
        Ok(HardPair {
            similar: (check_event(&p.similar.0, path, n)?, check_event(&p.similar.1, path, n)?),
            dissimilar: (check_event(&p.dissimilar.0, path, n)?, check_event(&p.dissimilar.1, path, n)?),
        })
    })
}

pub fn load_transitive(path: &Path) -> Result<Vec<TransitivePair>> {
    load_jsonl(path, |v, n| {
        let p: TransitivePair = typed(v, path, n)?;
        if !(1.0..=7.0).contains(&p.gold_score) {
            return Err(Error::Range {
                path: path.to_path_buf(),
                line: n,
                message: format!("gold_score {} outside [1, 7]", p.gold_score),
            });
        }
        Ok(TransitivePair {
            event_a: check_event(&p.event_a, path, n)?,
            event_b: check_event(&p.event_b, path, n)?,
            gold_score: p.gold_score,
        })
    })
}

pub fn load_mcnc(path: &Path) -> Result<Vec<McncInstance>> {
    load_jsonl(path, |v, n| {
        let m: McncInstance = typed(v, path, n)?;
        if m.candidates.len() != MCNC_CANDIDATES {
            return Err(schema(
                path,
                n,
                format!("expected exactly {MCNC_CANDIDATES} candidates, found {}", m.candidates.len()),
            ));
        }
        if m.gold_index >= MCNC_CANDIDATES {
            return Err(Error::Range {
                path: path.to_path_buf(),
                line: n,
                message: format!("gold_index {} outside 0..{}", m.gold_index, MCNC_CANDIDATES - 1),
            });
        }
        let candidates = m
            .candidates
            .iter()
            .map(|e| check_event(e, path, n))
            .collect::<Result<Vec<_>>>()?;
        for (i, a) in candidates.iter().enumerate() {
            if candidates[..i].contains(a) {
                return Err(schema(path, n, format!("duplicate candidate {a}")));
            }
        }
        Ok(McncInstance {
            context: m
                .context
                .iter()
                .map(|e| check_event(e, path, n))
                .collect::<Result<Vec<_>>>()?,
            candidates,
            gold_index: m.gold_index,
        })
    })
}

/// Serializes `items` one per line and writes the file atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests;
