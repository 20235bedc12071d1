//! Labeled and unlabeled text examples, CSV ingestion with a skipped-row
//! report, and the seeded synthetic corpus.

mod synth;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Sentiment;

pub use synth::{generate, lexicon, split, Splits, SynthConfig, SynthCorpus};

/// One text with an optional class label. Unlabeled examples carry `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: Option<usize>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }

    /// Sentiment encoded by a leading tag token, if the text carries one.
    pub fn sentiment_tag(&self) -> Option<Sentiment> {
        let first = self.text.split_whitespace().next()?;
        Sentiment::ALL.into_iter().find(|s| s.tag() == first)
    }
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub text_column: String,
    /// `None` reads every row as unlabeled.
    pub label_column: Option<String>,
    /// Row ids come from this column when the file has it, otherwise from
    /// the 1-based row number.
    pub id_column: Option<String>,
    /// Accept `4` as the positive class and store it as `1`.
    pub remap_four: bool,
    /// Empty label cells, or a missing label column, give unlabeled
    /// examples instead of skipped rows or a schema error.
    pub allow_missing_labels: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            text_column: "text".into(),
            label_column: Some("label".into()),
            id_column: Some("id".into()),
            remap_four: false,
            allow_missing_labels: false,
        }
    }
}

impl Schema {
    /// `text,label` with sentiment labels in `{0, 1}` or `{0, 4}`.
    pub fn sentiment() -> Self {
        Self {
            remap_four: true,
            ..Self::default()
        }
    }

    /// `text,label` with labels in `{0, 1}`.
    pub fn labeled() -> Self {
        Self::default()
    }

    /// `text` only.
    pub fn unlabeled() -> Self {
        Self {
            label_column: None,
            ..Self::default()
        }
    }

    /// `text` with an optional `label` column and optional label cells, as
    /// written by [`write_csv`].
    pub fn any() -> Self {
        Self {
            allow_missing_labels: true,
            ..Self::default()
        }
    }

    fn parse_label(&self, raw: &str) -> std::result::Result<Option<usize>, String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return if self.allow_missing_labels {
                Ok(None)
            } else {
                Err("missing label".into())
            };
        }
        match raw {
            "0" => Ok(Some(0)),
            "1" => Ok(Some(1)),
            "4" if self.remap_four => Ok(Some(1)),
            _ => Err(format!("label {raw:?} not in the accepted set")),
        }
    }
}

/// A row dropped during loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based line of the record in the file, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub loaded: usize,
    pub skipped: Vec<SkippedRow>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
}

/// Reads examples from CSV data with a header row. Rows with the wrong
/// number of fields, empty text or an invalid label are skipped and listed
/// in the report.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<(Vec<Example>, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let text_col = column(&headers, &schema.text_column)?;
    let label_col = match schema.label_column.as_deref() {
        Some(c) if schema.allow_missing_labels => column(&headers, c).ok(),
        Some(c) => Some(column(&headers, c)?),
        None => None,
    };
    let id_col = schema.id_column.as_deref().and_then(|c| column(&headers, c).ok());

    let mut examples = Vec::new();
    let mut report = LoadReport::default();
    for (i, record) in rdr.records().enumerate() {
        report.rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                report.skipped.push(SkippedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let mut skip = |reason: String| report.skipped.push(SkippedRow { line, reason });
        if record.len() != headers.len() {
            skip(format!("{} fields, expected {}", record.len(), headers.len()));
            continue;
        }
        let text = &record[text_col];
        if text.trim().is_empty() {
            skip("empty text".into());
            continue;
        }
        let label = match label_col.map(|c| schema.parse_label(&record[c])).transpose() {
            Ok(l) => l.flatten(),
            Err(reason) => {
                skip(reason);
                continue;
            }
        };
        let id = id_col.map_or_else(|| (i + 1).to_string(), |c| record[c].to_string());
        examples.push(Example {
            id,
            text: text.to_string(),
            label,
        });
    }
    report.loaded = examples.len();
    if examples.is_empty() {
        return Err(Error::Data(format!(
            "no usable rows ({} read, {} skipped)",
            report.rows,
            report.skipped.len()
        )));
    }
    Ok((examples, report))
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<(Vec<Example>, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema)
        .map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
}

/// Writes `id,text,label`; unlabeled rows leave the label cell empty.
pub fn write_csv_to<W: Write>(writer: W, examples: &[Example]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "text", "label"])?;
    for e in examples {
        let label = e.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([e.id.as_str(), e.text.as_str(), label.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv(path: &Path, examples: &[Example]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(std::io::BufWriter::new(file), examples)
}

/// Labels of all examples; errors on the first unlabeled one.
pub fn labels(examples: &[Example]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| Error::Data(format!("example {} has no label", e.id)))
        })
        .collect()
}
