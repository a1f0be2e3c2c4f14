//! Dataset layout and split protocols.
//!
//! A dataset root holds `<identity>/<session>/<sample>.{pgm,png}`. Identity
//! and session directories, and samples within a session, are taken in
//! lexicographic order; identity `i` in that order is class `i`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

const FV300_SPLIT: [usize; 3] = [70, 12, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DatasetKind {
    /// 92 samples per identity: 70 train, 12 validation, 10 test.
    Fv300,
    /// Two sessions per identity: the first for fine-tuning, the second for
    /// testing.
    Sessions,
    /// Fixed per-identity counts, samples in session-then-name order.
    Split { train: usize, val: usize, test: usize },
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fv300" => Ok(Self::Fv300),
            "fv-usm" | "fv-polyu" | "sessions" => Ok(Self::Sessions),
            _ => {
                let counts = s
                    .strip_prefix("split:")
                    .map(|rest| rest.split(',').map(|p| p.trim().parse::<usize>()).collect::<Vec<_>>());
                match counts.as_deref() {
                    Some([Ok(train), Ok(val), Ok(test)]) => Ok(Self::Split { train: *train, val: *val, test: *test }),
                    _ => Err(Error::InvalidArgument(format!(
                        "unknown dataset kind `{s}` (expected fv300, fv-usm, fv-polyu, sessions or split:T,V,E)"
                    ))),
                }
            }
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fv300 => write!(f, "fv300"),
            Self::Sessions => write!(f, "sessions"),
            Self::Split { train, val, test } => write!(f, "split:{train},{val},{test}"),
        }
    }
}

impl TryFrom<String> for DatasetKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DatasetKind> for String {
    fn from(k: DatasetKind) -> String {
        k.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    /// Class index.
    pub identity: usize,
    /// Path relative to the dataset root.
    pub path: PathBuf,
}

/// Samples of one identity, grouped by session, all in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityListing {
    pub name: String,
    pub sessions: Vec<(String, Vec<String>)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub kind: DatasetKind,
    pub identities: Vec<String>,
    /// Training split; for session datasets, the fine-tuning session.
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl ProtocolSpec {
    pub fn num_identities(&self) -> usize {
        self.identities.len()
    }

    /// Genuine and impostor comparison counts for exhaustive claims:
    /// `I*P` and `I*(I-1)*P` for `P` probes per identity.
    pub fn score_counts(&self) -> (usize, usize) {
        crate::scores::score_counts(self.test.len(), self.identities.len())
    }
}

fn is_image(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".pgm") || lower.ends_with(".png")
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, bool)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry
            .file_name()
            .into_string()
            .map_err(|n| Error::Layout(format!("non-UTF-8 name {n:?} in {}", dir.display())))?;
        if name.starts_with('.') {
            continue;
        }
        let is_dir = entry.file_type().map_err(io_err(entry.path()))?.is_dir();
        out.push((name, is_dir));
    }
    out.sort();
    Ok(out)
}

/// Reads the directory tree. Files at the root are ignored; anything other
/// than directories under an identity, or subdirectories inside a session,
/// is a layout error.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Vec<IdentityListing>> {
    let root = root.as_ref();
    let mut identities = Vec::new();
    for (id, is_dir) in sorted_entries(root)? {
        if !is_dir {
            continue;
        }
        let id_dir = root.join(&id);
        let mut sessions = Vec::new();
        for (session, is_dir) in sorted_entries(&id_dir)? {
            if !is_dir {
                return Err(Error::Layout(format!(
                    "{}: expected only session directories, found file `{session}`",
                    id_dir.display()
                )));
            }
            let s_dir = id_dir.join(&session);
            let mut files = Vec::new();
            for (name, is_dir) in sorted_entries(&s_dir)? {
                if is_dir {
                    return Err(Error::Layout(format!("{}: unexpected subdirectory `{name}`", s_dir.display())));
                }
                if is_image(&name) {
                    files.push(name);
                }
            }
            sessions.push((session, files));
        }
        identities.push(IdentityListing { name: id, sessions });
    }
    if identities.is_empty() {
        return Err(Error::Layout(format!("{}: no identity directories", root.display())));
    }
    Ok(identities)
}

pub fn build_protocol(root: impl AsRef<Path>, kind: DatasetKind) -> Result<ProtocolSpec> {
    protocol_from_listing(&scan_dataset(root)?, kind)
}

pub fn protocol_from_listing(listing: &[IdentityListing], kind: DatasetKind) -> Result<ProtocolSpec> {
    let mut spec = ProtocolSpec {
        kind,
        identities: listing.iter().map(|l| l.name.clone()).collect(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (identity, l) in listing.iter().enumerate() {
        let sample = |session: &str, file: &str| Sample {
            identity,
            path: Path::new(&l.name).join(session).join(file),
        };
        match kind {
            DatasetKind::Sessions => {
                let [(s1, f1), (s2, f2)] = l.sessions.as_slice() else {
                    return Err(Error::Protocol(format!(
                        "identity `{}` has {} sessions; session datasets need exactly 2",
                        l.name,
                        l.sessions.len()
                    )));
                };
                if f1.is_empty() || f2.is_empty() {
                    return Err(Error::Protocol(format!("identity `{}` has an empty session", l.name)));
                }
                spec.train.extend(f1.iter().map(|f| sample(s1, f)));
                spec.test.extend(f2.iter().map(|f| sample(s2, f)));
            }
            DatasetKind::Fv300 | DatasetKind::Split { .. } => {
                let [tr, va, te] = match kind {
                    DatasetKind::Split { train, val, test } => [train, val, test],
                    _ => FV300_SPLIT,
                };
                let all: Vec<Sample> =
                    l.sessions.iter().flat_map(|(s, files)| files.iter().map(move |f| (s, f))).map(|(s, f)| sample(s, f)).collect();
                if all.len() != tr + va + te {
                    return Err(Error::Protocol(format!(
                        "identity `{}` has {} samples; {kind} needs exactly {}",
                        l.name,
                        all.len(),
                        tr + va + te
                    )));
                }
                let mut it = all.into_iter();
                spec.train.extend(it.by_ref().take(tr));
                spec.val.extend(it.by_ref().take(va));
                spec.test.extend(it);
            }
        }
    }
    Ok(spec)
}
