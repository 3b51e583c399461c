use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.tsv";
const HEADER: &str = "# split\timage_id\timage_path\tmask_path\tlabel\tfully_negative";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    /// Subset of `Valid` whose masks may be read for model selection.
    ValidPixelLabeled,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Train,
        Split::Valid,
        Split::ValidPixelLabeled,
        Split::Test,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::ValidPixelLabeled => "valid_pixel_labeled",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexRecord {
    pub split: Split,
    pub image_id: u64,
    /// Relative to the index directory.
    pub image_path: String,
    pub mask_path: String,
    pub label: usize,
    pub fully_negative: bool,
}

/// Tab-separated dataset listing, one record per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    root: PathBuf,
    records: Vec<IndexRecord>,
}

impl DatasetIndex {
    pub fn new(root: PathBuf, records: Vec<IndexRecord>) -> Self {
        DatasetIndex { root, records }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &IndexRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.split, r.image_id, r.image_path, r.mask_path, r.label, r.fully_negative
            ));
        }
        out
    }

    pub fn save(&self) -> Result<()> {
        let path = self.path();
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn parse(root: PathBuf, text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| Error::Parse { offset: at, detail };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(bad(format!("expected 6 columns, found {}", cols.len())));
            }
            records.push(IndexRecord {
                split: cols[0].parse().map_err(|e: Error| bad(e.to_string()))?,
                image_id: cols[1]
                    .parse()
                    .map_err(|_| bad(format!("bad image id {:?}", cols[1])))?,
                image_path: cols[2].to_string(),
                mask_path: cols[3].to_string(),
                label: cols[4]
                    .parse()
                    .map_err(|_| bad(format!("bad label {:?}", cols[4])))?,
                fully_negative: cols[5]
                    .parse()
                    .map_err(|_| bad(format!("bad fully_negative flag {:?}", cols[5])))?,
            });
        }
        Ok(DatasetIndex { root, records })
    }

    /// Loads `index.tsv` from a dataset directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(dir.to_path_buf(), &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let idx = DatasetIndex::new(
            PathBuf::from("/tmp/x"),
            vec![IndexRecord {
                split: Split::ValidPixelLabeled,
                image_id: 7,
                image_path: "images/00007.ppm".into(),
                mask_path: "masks/00007.pgm".into(),
                label: 1,
                fully_negative: false,
            }],
        );
        let text = idx.to_text();
        assert!(
            text.contains("valid_pixel_labeled\t7\timages/00007.ppm\tmasks/00007.pgm\t1\tfalse")
        );
        assert_eq!(
            DatasetIndex::parse(PathBuf::from("/tmp/x"), &text).unwrap(),
            idx
        );
    }

    #[test]
    fn bad_lines_fail() {
        let err = DatasetIndex::parse(PathBuf::new(), "# h\ntrain\t1\ta\tb\t0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 4, .. }));
        assert!(DatasetIndex::parse(PathBuf::new(), "bogus\t1\ta\tb\t0\tfalse\n").is_err());
    }

    #[test]
    fn split_names() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!("validation".parse::<Split>().is_err());
    }
}
