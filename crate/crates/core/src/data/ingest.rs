use crate::data::RawInteraction;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Meaning of one delimited column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    User,
    Item,
    Rating,
    Time,
    Skip,
}

/// Column layout of a raw interaction file, e.g. `user,item,rating,time`.
/// Exactly one user, item, and time column; rating and skip columns are
/// read past (implicit binarization: presence is the signal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldOrder(Vec<Field>);

impl FieldOrder {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        let count = |f: Field| fields.iter().filter(|&&x| x == f).count();
        if count(Field::User) != 1 || count(Field::Item) != 1 || count(Field::Time) != 1 {
            return Err(Error::Config(
                "field order needs exactly one user, item, and time column".into(),
            ));
        }
        Ok(FieldOrder(fields))
    }

    /// Parses a descriptor like `"user,item,rating,time"`.
    pub fn parse(desc: &str) -> Result<Self> {
        let mut fields = Vec::new();
        for token in desc.split(',') {
            fields.push(match token.trim() {
                "user" => Field::User,
                "item" => Field::Item,
                "rating" => Field::Rating,
                "time" => Field::Time,
                "skip" => Field::Skip,
                other => {
                    return Err(Error::Config(format!(
                        "unknown field token {other:?} (expected user/item/rating/time/skip)"
                    )))
                }
            });
        }
        FieldOrder::new(fields)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn detect_delimiter(line: &str) -> &'static str {
    if line.contains('\t') {
        "\t"
    } else if line.contains("::") {
        // the common public MovieLens encoding
        "::"
    } else {
        ","
    }
}

/// Reads a delimited interaction log. Delimiter (tab, `::`, or comma) is
/// detected from the first data line; `#`-prefixed and blank lines are
/// skipped; ratings are discarded after parsing.
pub fn ingest(path: &Path, order: &FieldOrder) -> Result<Vec<RawInteraction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut out = Vec::new();
    let mut delimiter: Option<&'static str> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| detect_delimiter(line));
        let fields: Vec<&str> = line.split(delim).collect();
        if fields.len() < order.0.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "{} fields, layout needs {}",
                    fields.len(),
                    order.0.len()
                ),
            });
        }

        let mut user = None;
        let mut item = None;
        let mut time = None;
        for (&field, raw) in order.0.iter().zip(&fields) {
            let raw = raw.trim();
            match field {
                Field::User => user = Some(raw),
                Field::Item => item = Some(raw),
                Field::Time => time = Some(raw),
                Field::Rating | Field::Skip => {}
            }
        }
        let user = user.unwrap();
        let item = item.unwrap();
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        let timestamp: i64 = time.unwrap().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("timestamp {:?} is not an integer", time.unwrap()),
        })?;

        out.push(RawInteraction {
            user: user.to_string(),
            item: item.to_string(),
            timestamp,
        });
    }
    Ok(out)
}
