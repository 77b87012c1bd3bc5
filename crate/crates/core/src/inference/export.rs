//! Embedding export as TSV for external visualization.

use std::fs;
use std::path::Path;

use super::InferenceError;
use crate::alignment::AlignmentModel;
use crate::dataset::Sample;
use crate::numcore::Matrix;

/// Nine significant digits in scientific notation.
fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

fn check_field(kind: &str, value: &str) -> Result<(), InferenceError> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(InferenceError::InvalidField {
            field: kind.to_string(),
            value: value.to_string(),
        });
    }
    Ok(())
}

/// Renders the TSV text: a header `id label e0 .. e{n-1}` and one row per
/// sample with its joint-space image embedding.
pub fn embeddings_tsv(model: &AlignmentModel, samples: &[Sample]) -> Result<String, InferenceError> {
    let n = model.config.n;
    let mut out = String::from("id\tlabel");
    for j in 0..n {
        out.push_str(&format!("\te{j}"));
    }
    out.push('\n');
    if samples.is_empty() {
        return Ok(out);
    }
    for s in samples {
        check_field("id", &s.id)?;
        check_field("label", &s.label)?;
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let emb = model.embed_images(&Matrix::from_rows(&rows))?;
    for (s, row) in samples.iter().zip(emb.row_iter()) {
        out.push_str(&s.id);
        out.push('\t');
        out.push_str(&s.label);
        for &v in row {
            out.push('\t');
            out.push_str(&format_value(v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings(
    model: &AlignmentModel,
    samples: &[Sample],
    path: impl AsRef<Path>,
) -> Result<(), InferenceError> {
    let path = path.as_ref();
    let text = embeddings_tsv(model, samples)?;
    fs::write(path, text).map_err(|e| InferenceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub label: String,
    pub values: Vec<f64>,
}

/// Parses a file written by [`export_embeddings`].
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRow>, InferenceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| InferenceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_embeddings(&text)
}

pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingRow>, InferenceError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(InferenceError::BadTsv { line: 1 })?;
    let cols = header.split('\t').count();
    if cols < 2 || !header.starts_with("id\tlabel") {
        return Err(InferenceError::BadTsv { line: 1 });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != cols {
                return Err(InferenceError::BadTsv { line: i + 2 });
            }
            let values = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| InferenceError::BadTsv { line: i + 2 })?;
            Ok(EmbeddingRow {
                id: fields[0].to_string(),
                label: fields[1].to_string(),
                values,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::ModelConfig;
    use crate::dataset::Vocab;
    use crate::encoders::EncoderMode;
    use crate::numcore::dot;
    use crate::rng::{normal_vec, seeded};

    fn small_model(n: usize) -> AlignmentModel {
        let config = ModelConfig {
            d_in: 6,
            hidden: 8,
            d_v: 5,
            d_t: 5,
            n,
            image_mode: EncoderMode::Toy,
            text_mode: EncoderMode::Toy,
        };
        let vocab = Vocab::build(["a star"].iter().copied(), 16);
        AlignmentModel::new(config, vocab, vec![], &mut seeded(3)).unwrap()
    }

    fn samples(count: usize) -> Vec<Sample> {
        let mut rng = seeded(9);
        (0..count)
            .map(|i| Sample {
                id: format!("s{i}"),
                label: if i % 2 == 0 { "Star".into() } else { "Comet".into() },
                caption: None,
                split: None,
                features: normal_vec(&mut rng, 6, 1.0),
            })
            .collect()
    }

    #[test]
    fn two_rows_six_columns() {
        let text = embeddings_tsv(&small_model(4), &samples(2)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id\tlabel\te0\te1\te2\te3");
        assert_eq!(lines.len(), 3);
        assert!(lines[1..].iter().all(|l| l.split('\t').count() == 6));
    }

    #[test]
    fn empty_is_header_only() {
        let text = embeddings_tsv(&small_model(3), &[]).unwrap();
        assert_eq!(text, "id\tlabel\te0\te1\te2\n");
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_value(0.123456789123), "1.23456789e-1");
        assert_eq!(format_value(-1.0), "-1.00000000e0");
    }

    #[test]
    fn reimport_preserves_cosines() {
        let model = small_model(4);
        let s = samples(12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        export_embeddings(&model, &s, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        let rows: Vec<&[f64]> = s.iter().map(|x| x.features.as_slice()).collect();
        let exact = model.embed_images(&Matrix::from_rows(&rows)).unwrap();
        for i in 0..s.len() {
            assert_eq!(back[i].id, s[i].id);
            assert_eq!(back[i].label, s[i].label);
            for j in 0..s.len() {
                let c0 = dot(exact.row(i), exact.row(j));
                let c1 = dot(&back[i].values, &back[j].values);
                assert!((c0 - c1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_tab_in_id() {
        let mut s = samples(1);
        s[0].id = "a\tb".into();
        assert!(matches!(
            embeddings_tsv(&small_model(2), &s),
            Err(InferenceError::InvalidField { .. })
        ));
    }
}
