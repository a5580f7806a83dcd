//! Delimited-text input and output with header rows.

use std::collections::BTreeMap;

use crate::calibrate::{Draw, ObsData};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::model::ComputerModel;

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// Reads the named numeric columns of a CSV table with a header row.
/// Missing columns are reported by name; extra columns are ignored.
pub fn read_columns(text: &str, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::Data("missing header row".into()));
    }
    let index: BTreeMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut cols = Vec::with_capacity(names.len());
    for n in names {
        match index.get(n.as_str()) {
            Some(i) => cols.push(*i),
            None => return Err(Error::Data(format!("missing column `{n}`"))),
        }
    }
    let mut rows = vec![];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = cols
            .iter()
            .zip(names)
            .map(|(&c, n)| {
                let cell = rec.get(c).unwrap_or("");
                cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!("row {}: column `{n}` is not a number: `{cell}`", r + 2))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {}: non-finite value", r + 2)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Ok(rows)
}

fn names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

/// Physical-experiment data: columns `x1..xp` and `y`.
pub fn read_observations(text: &str, p: usize) -> Result<ObsData> {
    let mut cols = names("x", p);
    cols.push("y".into());
    let rows = read_columns(text, &cols)?;
    let (x, y) = rows.into_iter().map(|mut r| {
        let y = r.pop().expect("y column");
        (r, y)
    }).unzip();
    ObsData::new(x, y)
}

/// Computer-experiment runs: columns `x1..xp`, `eta1..etaq` and `y`.
pub fn read_training(text: &str, p: usize, q: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut cols = names("x", p);
    cols.extend(names("eta", q));
    cols.push("y".into());
    let rows = read_columns(text, &cols)?;
    Ok(rows.into_iter().map(|mut r| {
        let y = r.pop().expect("y column");
        (r, y)
    }).unzip())
}

fn write_rows(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// Design table: physical `x1..xp`, unit `u1..up`, role, replicate group.
pub fn design_csv(design: &Design, model: &ComputerModel) -> String {
    let p = design.p;
    let mut header = names("x", p);
    header.extend(names("u", p));
    header.push("role".into());
    header.push("replicate_group".into());
    write_rows(
        header,
        design.points.iter().map(|pt| {
            let mut row: Vec<String> = model.to_physical(&pt.x).iter().map(|v| v.to_string()).collect();
            row.extend(pt.x.iter().map(|v| v.to_string()));
            row.push(pt.role.as_str().into());
            row.push(pt.group.to_string());
            row
        }),
    )
}

pub fn draws_csv(draws: &[Draw]) -> String {
    let q = draws.first().map_or(0, |d| d.eta.len());
    let mut header = names("eta", q);
    header.extend(["beta0", "beta1", "sigma2"].map(String::from));
    write_rows(
        header,
        draws.iter().map(|d| {
            let mut row: Vec<String> = d.eta.iter().map(|v| v.to_string()).collect();
            row.extend([d.beta0, d.beta1, d.sigma2].map(|v| v.to_string()));
            row
        }),
    )
}

/// Generic table writer for reports.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    write_rows(header.iter().map(|s| s.to_string()).collect(), rows.iter().cloned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observations_roundtrip() {
        let d = read_observations("x1,x2,y\n0.1,0.2,1.5\n0.3,0.4,2\n", 2).unwrap();
        assert_eq!(d.x, vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert_eq!(d.y, vec![1.5, 2.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let e = read_observations("x1,y\n0.1,1\n", 2).unwrap_err();
        assert!(e.to_string().contains("`x2`"), "{e}");
    }

    #[test]
    fn empty_inputs() {
        assert!(read_observations("", 2).is_err());
        assert!(read_observations("x1,x2,y\n", 2).is_err());
    }

    #[test]
    fn bad_cell() {
        let e = read_observations("x1,x2,y\n0.1,abc,1\n", 2).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
    }
}
