//! Caption attachment through an external captioner process.
//!
//! The captioner is run as `sh -c <command>`. It receives one line per
//! uncaptioned record on stdin, `<feature path>\t<record index>`, and must
//! print exactly one caption line per input line, then exit 0.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;

use super::manifest::{resolve_path, PairRecord};
use super::DatasetError;

/// Fills in captions for records that lack one (or all, with `overwrite`).
pub fn attach_captions(
    records: &[PairRecord],
    base_dir: &Path,
    command: &str,
    overwrite: bool,
) -> Result<Vec<PairRecord>, DatasetError> {
    let pending: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| overwrite || r.caption.as_deref().is_none_or(str::is_empty))
        .map(|(i, _)| i)
        .collect();
    let mut out = records.to_vec();
    if pending.is_empty() {
        return Ok(out);
    }

    let input: String = pending
        .iter()
        .map(|&i| {
            let r = &records[i];
            format!("{}\t{}\n", resolve_path(base_dir, &r.features).display(), r.index)
        })
        .collect();
    let captions = run_captioner(command, input)?;
    if captions.len() != pending.len() {
        return Err(DatasetError::CaptionCountMismatch {
            expected: pending.len(),
            got: captions.len(),
        });
    }
    for (&i, caption) in pending.iter().zip(captions) {
        if caption.trim().is_empty() {
            return Err(DatasetError::EmptyCaption(out[i].id.clone()));
        }
        out[i].caption = Some(caption);
    }
    Ok(out)
}

fn run_captioner(command: &str, input: String) -> Result<Vec<String>, DatasetError> {
    let spawn_err = |e: std::io::Error| DatasetError::Io {
        path: "sh".into(),
        message: e.to_string(),
    };
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(spawn_err)?;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    // A captioner that exits early closes the pipe; its exit status is
    // reported below instead of the write error.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(input.as_bytes());
    });
    let stdout = child.stdout.take().expect("stdout is piped");
    let mut lines = Vec::new();
    for line in BufReader::new(stdout).lines() {
        let line = line.map_err(spawn_err)?;
        lines.push(line.trim_end_matches('\r').to_string());
    }
    let _ = writer.join();
    let status = child.wait().map_err(spawn_err)?;
    if !status.success() {
        return Err(DatasetError::CaptionerFailed(status.code().unwrap_or(-1)));
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, features: &str, caption: Option<&str>) -> PairRecord {
        PairRecord {
            id: id.into(),
            features: features.into(),
            index: 0,
            caption: caption.map(Into::into),
            label: "Star".into(),
            split: None,
        }
    }

    #[test]
    fn captioned_records_untouched() {
        let rs = vec![record("a", "x.fvecs", Some("one")), record("b", "y.fvecs", Some("two"))];
        let out = attach_captions(&rs, Path::new("."), "exit 3", false).unwrap();
        assert_eq!(out, rs);
    }

    #[test]
    fn stub_captioner_names_the_file_stem() {
        let rs = vec![record("a", "Comet.fvecs", None), record("b", "Nebula.fvecs", Some("kept"))];
        let stub = r#"while IFS="$(printf '\t')" read -r path idx; do n=$(basename "$path" .fvecs); echo "a photo of $n"; done"#;
        let out = attach_captions(&rs, Path::new("/data"), stub, false).unwrap();
        assert_eq!(out[0].caption.as_deref(), Some("a photo of Comet"));
        assert_eq!(out[1].caption.as_deref(), Some("kept"));

        let out = attach_captions(&rs, Path::new("/data"), stub, true).unwrap();
        assert_eq!(out[1].caption.as_deref(), Some("a photo of Nebula"));
    }

    #[test]
    fn failures() {
        let rs = vec![record("a", "x.fvecs", None)];
        assert!(matches!(
            attach_captions(&rs, Path::new("."), "cat >/dev/null; echo ''", false),
            Err(DatasetError::EmptyCaption(id)) if id == "a"
        ));
        assert!(matches!(
            attach_captions(&rs, Path::new("."), "definitely-not-a-captioner-binary", false),
            Err(DatasetError::CaptionerFailed(127))
        ));
        assert!(matches!(
            attach_captions(&rs, Path::new("."), "cat >/dev/null; echo a; echo b", false),
            Err(DatasetError::CaptionCountMismatch { expected: 1, got: 2 })
        ));
    }
}
