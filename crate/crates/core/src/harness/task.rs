use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::Fields;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    Generation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Choice {
        options: Vec<String>,
        answer_idx: usize,
    },
    Reference(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub fields: Fields,
    pub target: Target,
}

impl Example {
    /// The gold answer text used when this example serves as a demonstration.
    pub fn gold_output(&self) -> &str {
        match &self.target {
            Target::Choice {
                options,
                answer_idx,
            } => &options[*answer_idx],
            Target::Reference(r) => r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub name: String,
    pub kind: TaskKind,
    pub examples: Vec<Example>,
    pub template_ref: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    fields: Fields,
    options: Option<Vec<String>>,
    answer_idx: Option<usize>,
    reference: Option<String>,
}

/// Reads a JSONL task file. The task is named after the file stem.
pub fn load_task(path: impl AsRef<Path>) -> Result<Task> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    parse_task(&name, &text, path)
}

pub fn parse_task(name: &str, text: &str, path: &Path) -> Result<Task> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let invalid = |line: usize, message: String| Error::Validation {
        path: PathBuf::from(path),
        line,
        message,
    };

    let mut examples = Vec::new();
    let mut kind: Option<TaskKind> = None;
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line =
            serde_json::from_str(raw).map_err(|e| parse_err(line_no, e.to_string()))?;
        let target = match (line.options, line.answer_idx, line.reference) {
            (Some(options), Some(answer_idx), None) => {
                if options.is_empty() {
                    return Err(invalid(line_no, "options must not be empty".into()));
                }
                if answer_idx >= options.len() {
                    return Err(invalid(
                        line_no,
                        format!(
                            "answer_idx {answer_idx} is out of range for {} options",
                            options.len()
                        ),
                    ));
                }
                Target::Choice {
                    options,
                    answer_idx,
                }
            }
            (None, None, Some(reference)) => {
                if reference.trim().is_empty() {
                    return Err(invalid(line_no, "reference must not be empty".into()));
                }
                Target::Reference(reference)
            }
            _ => {
                return Err(invalid(
                    line_no,
                    "expected either options + answer_idx or reference".into(),
                ))
            }
        };
        let this_kind = match target {
            Target::Choice { .. } => TaskKind::MultipleChoice,
            Target::Reference(_) => TaskKind::Generation,
        };
        match kind {
            None => kind = Some(this_kind),
            Some(k) if k != this_kind => {
                return Err(invalid(
                    line_no,
                    format!("{this_kind:?} example in a {k:?} task"),
                ))
            }
            Some(_) => {}
        }
        if !seen.insert(line.id.clone()) {
            return Err(invalid(
                line_no,
                format!("duplicate example id {:?}", line.id),
            ));
        }
        examples.push(Example {
            id: line.id,
            fields: line.fields,
            target,
        });
    }
    let kind = kind.ok_or_else(|| invalid(0, "task file has no examples".into()))?;
    Ok(Task {
        name: name.to_string(),
        kind,
        examples,
        template_ref: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Task> {
        parse_task("t", text, Path::new("t.jsonl"))
    }

    #[test]
    fn well_formed_file() {
        let text = r#"{"id":"a","fields":{"q":"1"},"options":["x","y"],"answer_idx":0}
{"id":"b","fields":{"q":"2"},"options":["x","y"],"answer_idx":1}

{"id":"c","fields":{"q":"3"},"options":["x","y"],"answer_idx":1}
"#;
        let task = parse(text).unwrap();
        assert_eq!(task.examples.len(), 3);
        assert_eq!(task.kind, TaskKind::MultipleChoice);
        assert_eq!(task.examples[1].gold_output(), "y");
    }

    #[test]
    fn generation_file() {
        let task = parse(r#"{"id":"a","fields":{"doc":"d"},"reference":"summary"}"#).unwrap();
        assert_eq!(task.kind, TaskKind::Generation);
        assert_eq!(task.examples[0].gold_output(), "summary");
    }

    #[test]
    fn answer_out_of_range_reports_line() {
        let text = r#"{"id":"a","fields":{},"options":["x","y"],"answer_idx":0}
{"id":"b","fields":{},"options":["x","y"],"answer_idx":5}"#;
        match parse(text) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids() {
        let text = r#"{"id":"a","fields":{},"reference":"r"}
{"id":"a","fields":{},"reference":"s"}"#;
        assert!(matches!(
            parse(text),
            Err(Error::Validation { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_line() {
        let text = "{\"id\":\"a\",\"fields\":{},\"reference\":\"r\"}\nnot json";
        assert!(matches!(parse(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn mixed_or_ambiguous_lines() {
        let text = r#"{"id":"a","fields":{},"reference":"r"}
{"id":"b","fields":{},"options":["x"],"answer_idx":0}"#;
        assert!(matches!(
            parse(text),
            Err(Error::Validation { line: 2, .. })
        ));
        let both = r#"{"id":"a","fields":{},"reference":"r","options":["x"],"answer_idx":0}"#;
        assert!(matches!(
            parse(both),
            Err(Error::Validation { line: 1, .. })
        ));
        assert!(matches!(parse(""), Err(Error::Validation { .. })));
        let empty_ref = r#"{"id":"a","fields":{},"reference":"  "}"#;
        assert!(matches!(
            parse(empty_ref),
            Err(Error::Validation { line: 1, .. })
        ));
    }
}
