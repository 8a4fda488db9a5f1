//! Artifact files: versioned JSON checkpoints (model + optimizer moments),
//! line-delimited episode datasets, and CSV tables.
//!
//! Everything is plain text. Floats serialize as shortest-roundtrip decimal
//! and parse back to the identical bits, so checkpoints restore training
//! exactly and repeated runs produce byte-identical files.

use crate::adam::Adam;
use crate::adversarial::AdversarialCheater;
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::nn::PolicyNet;
use crate::scalar::Scalar;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Bumped whenever a checkpoint's layout changes incompatibly.
pub const CHECKPOINT_VERSION: u32 = 1;

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{what} checkpoint has version {found}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    Ok(())
}

/// Actor-critic snapshot: architecture, parameters, and (when saved
/// mid-training) the optimizer moments needed to resume exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyCheckpoint<T: Scalar> {
    pub version: u32,
    pub policy: PolicyNet<T>,
    pub optimizer: Option<Adam<T>>,
}

impl<T: Scalar> PolicyCheckpoint<T> {
    pub fn new(policy: PolicyNet<T>, optimizer: Option<Adam<T>>) -> Self {
        PolicyCheckpoint { version: CHECKPOINT_VERSION, policy, optimizer }
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        save_json(path, self)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let ck: Self = load_json(path)?;
        check_version(ck.version, "policy")?;
        Ok(ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DetectorCheckpoint<T: Scalar> {
    pub version: u32,
    pub model: DetectorModel<T>,
    pub optimizer: Option<Adam<T>>,
}

impl<T: Scalar> DetectorCheckpoint<T> {
    pub fn new(model: DetectorModel<T>, optimizer: Option<Adam<T>>) -> Self {
        DetectorCheckpoint { version: CHECKPOINT_VERSION, model, optimizer }
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        save_json(path, self)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let ck: Self = load_json(path)?;
        check_version(ck.version, "detector")?;
        Ok(ck)
    }
}

/// Snapshot of the adversarially trained player. The structured variant
/// embeds its frozen component networks, so the file is self-contained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CheaterCheckpoint<T: Scalar> {
    pub version: u32,
    pub cheater: AdversarialCheater<T>,
    pub optimizer: Option<Adam<T>>,
}

impl<T: Scalar> CheaterCheckpoint<T> {
    pub fn new(cheater: AdversarialCheater<T>, optimizer: Option<Adam<T>>) -> Self {
        CheaterCheckpoint { version: CHECKPOINT_VERSION, cheater, optimizer }
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        save_json(path, self)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let ck: Self = load_json(path)?;
        check_version(ck.version, "cheater")?;
        Ok(ck)
    }
}

/// Writes any serializable value as single-line JSON plus a trailing newline.
pub fn save_json<P: AsRef<Path>, V: Serialize>(path: P, value: &V) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<P: AsRef<Path>, V: DeserializeOwned>(path: P) -> Result<V> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// One JSON value per line, in input order.
pub fn write_jsonl<P: AsRef<Path>, V: Serialize>(path: P, items: &[V]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a line-delimited JSON file, skipping blank lines; a malformed line
/// reports its 1-based number.
pub fn read_jsonl<P: AsRef<Path>, V: DeserializeOwned>(path: P) -> Result<Vec<V>> {
    let r = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

/// Shortest-roundtrip decimal text for a table cell; equal values always
/// print identically, keeping CSV output reproducible byte for byte.
pub fn csv_float<T: Scalar>(v: T) -> String {
    format!("{}", v.to_f64_())
}

/// Plain comma-separated table with a header row and `\n` line endings.
/// Cells must not contain commas or newlines — the numeric/label tables this
/// crate emits never do, so no quoting dialect is involved.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_to(&mut w, header, rows)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(w: &mut W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "ragged CSV row");
        debug_assert!(
            row.iter().all(|c| !c.contains(',') && !c.contains('\n')),
            "cell needs quoting, which this writer does not do"
        );
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
