use crate::data::{Interaction, InteractionDataset};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const HEADER: &str = "user_idx\titem_idx\ttimestamp";
const FILES: [(&str, fn(&InteractionDataset) -> &[Interaction]); 3] = [
    ("train.tsv", |d| &d.train),
    ("valid.tsv", |d| &d.validation),
    ("test.tsv", |d| &d.test),
];

/// Writes the canonical dump: train.tsv, valid.tsv, test.tsv under `dir`,
/// tab-delimited with a `user_idx item_idx timestamp` header.
pub fn write_canonical(dataset: &InteractionDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, select) in FILES {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "{HEADER}")?;
            for rec in select(dataset) {
                writeln!(w, "{}\t{}\t{}", rec.user, rec.item, rec.timestamp)?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads a canonical dump back. Index spaces are reconstructed as the
/// maximum index + 1 over all three partitions; every id produced by the
/// splitter appears in some partition, so this is exact.
pub fn read_canonical(dir: &Path) -> Result<InteractionDataset> {
    let mut parts: Vec<Vec<Interaction>> = Vec::with_capacity(3);
    for (name, _) in FILES {
        let path = dir.join(name);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let reader = BufReader::new(file);
        let mut records = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io(&path, e))?;
            let line = line.trim_end_matches('\r');
            if line_no == 1 {
                if line != HEADER {
                    return Err(Error::Parse {
                        path: path.clone(),
                        line: 1,
                        message: format!("expected header {HEADER:?}, got {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: line_no,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<i64> {
                s.parse().map_err(|_| Error::Parse {
                    path: path.clone(),
                    line: line_no,
                    message: format!("{what} {s:?} is not an integer"),
                })
            };
            records.push(Interaction {
                user: parse(fields[0], "user index")? as usize,
                item: parse(fields[1], "item index")? as usize,
                timestamp: parse(fields[2], "timestamp")?,
            });
        }
        parts.push(records);
    }

    let num_users = parts
        .iter()
        .flatten()
        .map(|r| r.user + 1)
        .max()
        .unwrap_or(0);
    let num_items = parts
        .iter()
        .flatten()
        .map(|r| r.item + 1)
        .max()
        .unwrap_or(0);
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    InteractionDataset::from_partitions(num_users, num_items, train, validation, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{remap_and_split, RawInteraction};

    fn sample_dataset() -> InteractionDataset {
        let mut raw = Vec::new();
        for u in 0..4 {
            for i in 0..12 {
                raw.push(RawInteraction {
                    user: format!("u{u}"),
                    item: format!("i{}", (i * 7 + u) % 15),
                    timestamp: (i * 3 + u) as i64,
                });
            }
        }
        remap_and_split(&raw, (0.8, 0.1, 0.1)).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let ds = sample_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_canonical(&ds, dir.path()).unwrap();
        let back = read_canonical(dir.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn header_written_and_enforced() {
        let ds = sample_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_canonical(&ds, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("train.tsv")).unwrap();
        assert!(text.starts_with("user_idx\titem_idx\ttimestamp\n"));

        std::fs::write(dir.path().join("train.tsv"), "bad header\n0\t0\t0\n").unwrap();
        assert!(matches!(
            read_canonical(dir.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_canonical(dir.path()), Err(Error::Io { .. })));
    }
}
