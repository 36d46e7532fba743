//! Transcript comparison against frozen golden files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use similar::{ChangeTag, TextDiff};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("golden transcript {0} does not exist")]
    MissingGolden(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Comparison {
    Same,
    /// `changed_lines` counts golden lines that were not reproduced, or
    /// extra lines, whichever is larger.
    Differs {
        diff: String,
        changed_lines: usize,
    },
}

/// Trailing whitespace on each line and trailing blank lines are ignored.
pub fn normalize(text: &str) -> String {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last() == Some(&"") {
        lines.pop();
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

pub fn compare_text(actual: &str, golden: &str) -> Comparison {
    let (actual, golden) = (normalize(actual), normalize(golden));
    if actual == golden {
        return Comparison::Same;
    }
    let diff = TextDiff::from_lines(&golden, &actual);
    let (mut removed, mut added) = (0, 0);
    for change in diff.iter_all_changes() {
        match change.tag() {
            ChangeTag::Delete => removed += 1,
            ChangeTag::Insert => added += 1,
            ChangeTag::Equal => {}
        }
    }
    Comparison::Differs {
        diff: diff.unified_diff().header("golden", "actual").to_string(),
        changed_lines: removed.max(added),
    }
}

pub fn compare_transcript(actual: &str, golden: &Path) -> Result<Comparison, GoldenError> {
    let text = fs::read_to_string(golden).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            GoldenError::MissingGolden(golden.to_path_buf())
        } else {
            GoldenError::Io {
                path: golden.to_path_buf(),
                source,
            }
        }
    })?;
    Ok(compare_text(actual, &text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_whitespace_is_ignored() {
        assert_eq!(compare_text("a  \nb\n\n", "a\nb"), Comparison::Same);
    }

    #[test]
    fn one_flip_is_one_line() {
        let golden = "x\n   Reading A ...  PASS!\ny\n";
        let actual = "x\n   Reading A ...  FAILED!\ny\n";
        match compare_text(actual, golden) {
            Comparison::Differs { changed_lines, diff } => {
                assert_eq!(changed_lines, 1);
                assert!(diff.contains("-   Reading A ...  PASS!"));
                assert!(diff.contains("+   Reading A ...  FAILED!"));
            }
            Comparison::Same => panic!("expected a diff"),
        }
    }

    #[test]
    fn missing_golden_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = compare_transcript("a", &dir.path().join("nope.txt")).unwrap_err();
        assert!(matches!(err, GoldenError::MissingGolden(_)));
    }
}
