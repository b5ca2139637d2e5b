//! JSON-lines corpora: one record per line, UTF-8.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io_err, Error, Result};

/// Reads every non-blank line as one record. An empty file is an empty
/// corpus; a malformed line fails with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&text).map_err(|(line, source)| Error::Json {
        path: path.to_path_buf(),
        line,
        source,
    })
}

pub fn parse_jsonl<T: DeserializeOwned>(
    text: &str,
) -> std::result::Result<Vec<T>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use longconv_core::data::{gen_conversations, Conversation, GeneratorSpec};

    #[test]
    fn round_trip_truncation_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = gen_conversations(&GeneratorSpec {
            n_conversations: 5,
            ..Default::default()
        })
        .unwrap();
        write_jsonl(&path, &corpus).unwrap();
        assert_eq!(read_jsonl::<Conversation>(&path).unwrap(), corpus);

        let text = fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 20];
        fs::write(&path, cut).unwrap();
        match read_jsonl::<Conversation>(&path) {
            Err(Error::Json { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }

        fs::write(&path, "").unwrap();
        assert!(read_jsonl::<Conversation>(&path).unwrap().is_empty());
    }

    #[test]
    fn field_order_is_stable() {
        let c = Conversation {
            id: "a".into(),
            conv_label: 2,
            utterances: vec![longconv_core::data::Utterance {
                speaker: longconv_core::data::Speaker::Agent,
                tokens: vec![1, 2],
                labels: vec![],
            }],
        };
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"id":"a","conv_label":2,"utterances":[{"speaker":"agent","tokens":[1,2],"labels":[]}]}"#
        );
    }
}
