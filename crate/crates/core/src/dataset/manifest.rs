//! JSON Lines manifests pairing feature vectors with captions and labels.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::fvecs::read_fvecs;
use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
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
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

/// One manifest line: a feature reference plus caption, label and split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    /// fvecs path, relative to the manifest's directory unless absolute.
    pub features: String,
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub caption: Option<String>,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<Split>,
}

const REQUIRED_KEYS: [&str; 4] = ["id", "features", "index", "label"];

/// A manifest as loaded from disk: the parsed records plus the raw text of
/// each line, so untouched records can be written back verbatim.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<PairRecord>,
    pub raw_lines: Vec<String>,
    pub base_dir: PathBuf,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PairRecord>, DatasetError> {
    Ok(read_manifest(path)?.records)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let (records, raw_lines) = parse_manifest(&text)?;
    Ok(Manifest {
        records,
        raw_lines,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

/// Parses JSON Lines text; blank lines are skipped, line numbers are 1-based.
pub fn parse_manifest(text: &str) -> Result<(Vec<PairRecord>, Vec<String>), DatasetError> {
    let mut records = Vec::new();
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DatasetError::ParseError { line: line_no, message };
        let obj: Map<String, Value> =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(key) = REQUIRED_KEYS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(DatasetError::MissingField {
                line: line_no,
                key: (*key).to_string(),
            });
        }
        let record: PairRecord =
            serde_json::from_value(Value::Object(obj)).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        records.push(record);
        raw.push(line.to_string());
    }
    Ok((records, raw))
}

pub fn manifest_line(record: &PairRecord) -> String {
    serde_json::to_string(record).expect("records always serialize")
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<(), DatasetError> {
    let lines: Vec<String> = records.iter().map(manifest_line).collect();
    write_lines(path, &lines)
}

pub(crate) fn write_lines(path: impl AsRef<Path>, lines: &[String]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |e| DatasetError::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for line in lines {
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

impl Manifest {
    /// Writes `records` (same ids and order as `self.records`), keeping the
    /// original line text of every record that did not change.
    pub fn write_updated(&self, path: impl AsRef<Path>, records: &[PairRecord]) -> Result<(), DatasetError> {
        let lines: Vec<String> = records
            .iter()
            .enumerate()
            .map(|(i, r)| match self.records.get(i) {
                Some(old) if old == r => self.raw_lines[i].clone(),
                _ => manifest_line(r),
            })
            .collect();
        write_lines(path, &lines)
    }
}

/// Sorted set of distinct labels.
pub fn class_names(records: &[PairRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// A record with its feature vector resolved into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: String,
    pub caption: Option<String>,
    pub split: Option<Split>,
    pub features: Vec<f64>,
}

/// Reads every referenced feature vector. Each fvecs file is read once.
pub fn resolve_features(
    records: &[PairRecord],
    base_dir: &Path,
) -> Result<Vec<Sample>, DatasetError> {
    let mut cache: HashMap<PathBuf, Vec<Vec<f32>>> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    let mut dim: Option<usize> = None;
    for r in records {
        let path = resolve_path(base_dir, &r.features);
        if !cache.contains_key(&path) {
            let vectors = read_fvecs(&path)?;
            cache.insert(path.clone(), vectors);
        }
        let vectors = &cache[&path];
        let v = vectors
            .get(r.index)
            .ok_or_else(|| DatasetError::UnresolvedFeature {
                id: r.id.clone(),
                path: path.display().to_string(),
                index: r.index,
                available: vectors.len(),
            })?;
        match dim {
            Some(d) if d != v.len() => {
                return Err(DatasetError::DimMismatch {
                    expected: d,
                    found: v.len(),
                    record: out.len(),
                })
            }
            _ => dim = Some(v.len()),
        }
        out.push(Sample {
            id: r.id.clone(),
            label: r.label.clone(),
            caption: r.caption.clone(),
            split: r.split,
            features: v.iter().map(|&x| x as f64).collect(),
        });
    }
    Ok(out)
}

pub fn resolve_path(base_dir: &Path, features: &str) -> PathBuf {
    let p = Path::new(features);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"a","features":"f.fvecs","index":0,"caption":"a star","label":"Star","split":"train"}
{"id":"b","features":"f.fvecs","index":1,"label":"Comet"}

{"id":"c","features":"f.fvecs","index":2,"label":"Planet","split":"test","extra":1}
"#;

    #[test]
    fn parses_in_order() {
        let (records, raw) = parse_manifest(GOOD).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(raw.len(), 3);
        assert_eq!(
            records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!(records[1].split, None);
        assert_eq!(records[1].caption, None);
        assert_eq!(records[2].split, Some(Split::Test));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"{"id":"a","features":"f","index":0,"label":"x"}
{"id":"a","features":"f","index":1,"label":"y"}"#;
        assert!(matches!(parse_manifest(text), Err(DatasetError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn missing_field_and_bad_json() {
        let text = r#"{"id":"a","features":"f","label":"x"}"#;
        assert!(matches!(
            parse_manifest(text),
            Err(DatasetError::MissingField { line: 1, key }) if key == "index"
        ));
        let text = "{\"id\":\"a\",\"features\":\"f\",\"index\":0,\"label\":\"x\"}\nnot json";
        assert!(matches!(parse_manifest(text), Err(DatasetError::ParseError { line: 2, .. })));
        let text = r#"{"id":"a","features":"f","index":0,"label":"x","split":"dev"}"#;
        assert!(matches!(parse_manifest(text), Err(DatasetError::ParseError { line: 1, .. })));
    }

    #[test]
    fn write_then_load_is_lossless() {
        let (records, _) = parse_manifest(GOOD).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &records).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), records);
    }

    #[test]
    fn resolves_relative_features() {
        let dir = tempfile::tempdir().unwrap();
        super::super::fvecs::write_fvecs(
            dir.path().join("f.fvecs"),
            &[vec![1.0f32, 0.5], vec![2.0, 0.25]],
        )
        .unwrap();
        let (records, _) = parse_manifest(
            r#"{"id":"a","features":"f.fvecs","index":1,"label":"x"}
{"id":"b","features":"f.fvecs","index":2,"label":"x"}"#,
        )
        .unwrap();
        let samples = resolve_features(&records[..1], dir.path()).unwrap();
        assert_eq!(samples[0].features, vec![2.0, 0.25]);
        assert!(matches!(
            resolve_features(&records, dir.path()),
            Err(DatasetError::UnresolvedFeature { index: 2, available: 2, .. })
        ));
    }
}
