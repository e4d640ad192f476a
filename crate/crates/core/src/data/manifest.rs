//! Dataset manifests.
//!
//! A manifest is a UTF-8 text file:
//!
//! ```text
//! # artfusion-manifest v1
//! path	artist	style	split
//! images/a_000.ppm	Ada	ink	train
//! images/b_000.ppm	Bo	oil	-
//! ```
//!
//! Columns are tab-separated. `split` is `train`, `val`, `test`, or `-` / empty when
//! not yet assigned. Relative paths resolve against the manifest's directory. Blank
//! lines and further `#` lines are ignored.

use crate::error::{input_err, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const HEADER_LINE: &str = "# artfusion-manifest v1";
pub const COLUMNS: [&str; 4] = ["path", "artist", "style", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (expected train, val or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    /// Path as written in the manifest.
    pub path: String,
    pub artist: String,
    pub style: String,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<Record>,
    /// Sorted artist names; the index is the class id.
    pub artists: Vec<String>,
    pub styles: Vec<String>,
}

impl Manifest {
    /// Builds vocabularies and rejects duplicate paths.
    pub fn new(root: impl Into<PathBuf>, records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.path.as_str()) {
                return Err(input_err!("duplicate image path {:?} in manifest", r.path));
            }
        }
        let artists = records.iter().map(|r| r.artist.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let styles = records.iter().map(|r| r.style.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        Ok(Manifest { root: root.into(), records, artists, styles })
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == HEADER_LINE => {}
            _ => return Err(Error::Format(format!("manifest must start with {HEADER_LINE:?}"))),
        }
        let mut records = Vec::new();
        let mut saw_columns = false;
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !saw_columns {
                if fields != COLUMNS {
                    return Err(Error::Format(format!(
                        "line {lineno}: expected column header {:?}, got {fields:?}",
                        COLUMNS.join("\\t")
                    )));
                }
                saw_columns = true;
                continue;
            }
            if fields.len() < 3 || fields.len() > 4 {
                return Err(input_err!("line {lineno}: expected 3 or 4 tab-separated fields, got {}", fields.len()));
            }
            let nonempty = |s: &str, what: &str| {
                let s = s.trim();
                if s.is_empty() {
                    Err(input_err!("line {lineno}: empty {what}"))
                } else {
                    Ok(s.to_string())
                }
            };
            let split = match fields.get(3).map(|s| s.trim()) {
                None | Some("") | Some("-") => None,
                Some(s) => Some(s.parse::<Split>().map_err(|_| input_err!("line {lineno}: unknown split {s:?}"))?),
            };
            records.push(Record {
                path: nonempty(fields[0], "path")?,
                artist: nonempty(fields[1], "artist")?,
                style: nonempty(fields[2], "style")?,
                split,
            });
        }
        if !saw_columns {
            return Err(Error::Format("manifest has no column header".into()));
        }
        Manifest::new(root, records)
    }

    /// Reads a manifest and checks that every image path exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Manifest::parse(&text, root)?;
        for r in &m.records {
            let p = m.resolve(r);
            if !p.is_file() {
                return Err(input_err!("image {:?} listed in {} does not exist", p, path.display()));
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER_LINE}\n{}\n", COLUMNS.join("\t"));
        for r in &self.records {
            let split = r.split.map(Split::as_str).unwrap_or("-");
            out.push_str(&format!("{}\t{}\t{}\t{split}\n", r.path, r.artist, r.style));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        let p = Path::new(&r.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn num_classes(&self) -> usize {
        self.artists.len()
    }

    pub fn artist_id(&self, r: &Record) -> usize {
        self.artists.binary_search(&r.artist).expect("vocabulary built from records")
    }

    pub fn style_id(&self, r: &Record) -> usize {
        self.styles.binary_search(&r.style).expect("vocabulary built from records")
    }

    /// Record indices in `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == Some(split)).collect()
    }

    /// Per-artist sample counts within `split`.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for i in self.indices(split) {
            counts[self.artist_id(&self.records[i])] += 1;
        }
        counts
    }

    pub fn is_split(&self) -> bool {
        self.records.iter().all(|r| r.split.is_some())
    }
}
