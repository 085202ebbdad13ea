use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{duplicate_pairs, Fidelity, FidelityDataset, Sample};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["fidelity", "aoa_deg", "mach", "cl", "cm"];

/// Reads a `fidelity,aoa_deg,mach,cl,cm` file, one dataset per fidelity tag
/// found, ordered low to high.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<FidelityDataset>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<FidelityDataset>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::Empty("CSV file has no header".into())),
        Some(h) => h.map_err(|e| csv_error(1, e))?,
    };
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Csv {
            line: 1,
            message: format!("expected header `{}`, got `{}`", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut groups: BTreeMap<Fidelity, (Vec<Sample>, Vec<u64>)> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Csv { line, message: format!("expected 5 fields, got {}", rec.len()) });
        }
        let fidelity: Fidelity = rec[0]
            .parse()
            .map_err(|_| Error::Csv { line, message: format!("unknown fidelity tag `{}`", &rec[0]) })?;
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i].parse().map_err(|_| Error::Csv {
                line,
                message: format!("{}=`{}` is not a number", CSV_HEADER[i], &rec[i]),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Csv { line, message: format!("{} is not finite", CSV_HEADER[i]) })
            }
        };
        let sample = Sample { aoa: num(1)?, mach: num(2)?, cl: num(3)?, cm: num(4)? };
        let entry = groups.entry(fidelity).or_default();
        entry.0.push(sample);
        entry.1.push(line);
    }
    if groups.is_empty() {
        return Err(Error::Empty("CSV file has no data rows".into()));
    }

    groups
        .into_iter()
        .map(|(fidelity, (samples, lines))| {
            if let Some((a, b)) = duplicate_pairs(&samples).first() {
                return Err(Error::Csv {
                    line: lines[*b],
                    message: format!("duplicate {fidelity} (aoa, mach) pair, first seen on line {}", lines[*a]),
                });
            }
            FidelityDataset::new(fidelity, samples)
        })
        .collect()
}

fn csv_error(line: u64, e: csv::Error) -> Error {
    Error::Csv { line, message: e.to_string() }
}

/// Writes the datasets in order with LF line endings. Floats use Rust's
/// shortest round-trip formatting.
pub fn write_csv_to<W: Write>(writer: W, datasets: &[&FidelityDataset]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let io = |e: csv::Error| Error::Serialization(e.to_string());
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for ds in datasets {
        for s in &ds.samples {
            wtr.write_record([
                ds.fidelity.tag().to_string(),
                s.aoa.to_string(),
                s.mach.to_string(),
                s.cl.to_string(),
                s.cm.to_string(),
            ])
            .map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, datasets: &[&FidelityDataset]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(std::io::BufWriter::new(file), datasets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_well_formed_file() {
        let text = "fidelity,aoa_deg,mach,cl,cm\nlow,0,0.7,0,-0.05\nlow,1,0.7,0.1,-0.06\nlow,2,0.7,0.2,-0.07\n";
        let sets = read_csv(text.as_bytes()).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].fidelity, Fidelity::Low);
        assert_eq!(sets[0].len(), 3);
    }

    #[test]
    fn bad_number_names_its_line() {
        let text = "fidelity,aoa_deg,mach,cl,cm\nhigh,1,abc,0.1,0.0\n";
        match read_csv(text.as_bytes()).unwrap_err() {
            Error::Csv { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("mach"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_tag_and_empty_and_short_rows() {
        let unknown = "fidelity,aoa_deg,mach,cl,cm\nultra,1,0.7,0.1,0.0\n";
        assert!(matches!(read_csv(unknown.as_bytes()), Err(Error::Csv { line: 2, .. })));
        assert!(matches!(read_csv("".as_bytes()), Err(Error::Empty(_))));
        assert!(matches!(read_csv("fidelity,aoa_deg,mach,cl,cm\n".as_bytes()), Err(Error::Empty(_))));
        let short = "fidelity,aoa_deg,mach,cl,cm\nlow,1,0.7,0.1\n";
        assert!(read_csv(short.as_bytes()).is_err());
        let header = "fid,aoa,mach,cl,cm\nlow,1,0.7,0.1,0\n";
        assert!(matches!(read_csv(header.as_bytes()), Err(Error::Csv { line: 1, .. })));
    }

    #[test]
    fn duplicates_report_both_lines() {
        let text = "fidelity,aoa_deg,mach,cl,cm\nmid,1,0.7,0.1,0.0\nlow,1,0.7,0.1,0.0\nmid,1,0.7,0.2,0.0\n";
        match read_csv(text.as_bytes()).unwrap_err() {
            Error::Csv { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("line 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn groups_in_fidelity_order() {
        let text = "fidelity,aoa_deg,mach,cl,cm\nhigh,1,0.7,0.1,0.0\nlow,1,0.7,0.1,0.0\nmid,2,0.8,0.3,0.0\n";
        let sets = read_csv(text.as_bytes()).unwrap();
        let tags: Vec<_> = sets.iter().map(|s| s.fidelity).collect();
        assert_eq!(tags, vec![Fidelity::Low, Fidelity::Mid, Fidelity::High]);
    }
}
