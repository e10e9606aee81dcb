//! CSV datasets.
//!
//! Regression file: a `y` column, then `c:<name>` (continuous) and
//! `b:<name>` (binary, 0/1) covariate columns. The design row is
//! `(1, c..., b...)`.
//!
//! Recurrent data comes as two files. Events: `subject_id`, `t`, one of
//! `log_gap` / `gap`, then `tv:<name>` time-varying covariates; occasions run
//! `1..m` and an optional row `m+1` with an empty gap cell carries the
//! covariates of the censored occasion. Subjects: `subject_id`, `tau`, then
//! `f:<name>` fixed-time regression covariates and `c:` / `b:` covariates for
//! the partition prior. `tau` and raw gaps share one time unit.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::conjugate::RegressionData;
use crate::covariates::{MetricChoice, MixedCovariateMatrix};
use crate::error::{Error, Result};
use crate::recurrent::{censor_bound, RecurrentDataset, Subject};

fn parse_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| parse_err(row, column, format!("`{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(row, column, format!("`{cell}` is not finite")));
    }
    Ok(v)
}

fn parse_binary(cell: &str, row: usize, column: &str) -> Result<u8> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::NonBinaryValue {
            row,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.iter().all(String::is_empty) {
        return Err(parse_err(1, "header", "file is empty"));
    }
    let records = reader
        .records()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| parse_err(i + 2, "record", e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| parse_err(1, name, "missing column"))
}

fn prefixed(header: &[String], prefix: &str) -> Vec<(usize, String)> {
    header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(prefix).map(|n| (i, n.to_string())))
        .collect()
}

fn covariates(continuous: &[Vec<f64>], n_cont: usize, binary: Vec<Vec<u8>>, metric: MetricChoice) -> Result<MixedCovariateMatrix> {
    let flat: Vec<f64> = continuous.iter().flatten().copied().collect();
    MixedCovariateMatrix::new(DMatrix::from_row_slice(continuous.len(), n_cont, &flat), binary, metric)
}

/// Raw contents of a regression file.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTable {
    pub continuous_names: Vec<String>,
    pub binary_names: Vec<String>,
    pub y: Vec<f64>,
    pub continuous: Vec<Vec<f64>>,
    pub binary: Vec<Vec<u8>>,
}

impl RegressionTable {
    pub fn n_items(&self) -> usize {
        self.y.len()
    }

    pub fn covariates(&self, metric: MetricChoice) -> Result<MixedCovariateMatrix> {
        covariates(&self.continuous, self.continuous_names.len(), self.binary.clone(), metric)
    }

    /// Design row `(1, c..., b...)` of item `i`.
    pub fn design_row(&self, i: usize) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.continuous[i].iter().copied())
            .chain(self.binary[i].iter().map(|&b| b as f64))
            .collect()
    }

    pub fn to_data(&self, metric: MetricChoice) -> Result<RegressionData> {
        let p = 1 + self.continuous_names.len() + self.binary_names.len();
        let rows: Vec<f64> = (0..self.n_items()).flat_map(|i| self.design_row(i)).collect();
        RegressionData::new(self.y.clone(), DMatrix::from_row_slice(self.n_items(), p, &rows), self.covariates(metric)?)
    }

    /// Rebuilds a table from a dataset whose design is `(1, c..., b...)`.
    pub fn from_data(data: &RegressionData, continuous_names: Vec<String>, binary_names: Vec<String>) -> Result<Self> {
        let x = &data.covariates;
        if continuous_names.len() != x.n_continuous() || binary_names.len() != x.n_binary() {
            return Err(Error::DimensionMismatch {
                expected: x.n_covariates(),
                found: continuous_names.len() + binary_names.len(),
            });
        }
        Ok(RegressionTable {
            continuous_names,
            binary_names,
            y: data.y.clone(),
            continuous: (0..data.n_items()).map(|i| x.continuous_row(i)).collect(),
            binary: (0..data.n_items()).map(|i| x.binary_row(i).to_vec()).collect(),
        })
    }
}

pub fn read_regression_table(path: &Path) -> Result<RegressionTable> {
    read_table(path, true)
}

/// Covariate rows for prediction: the regression schema with the `y` column
/// optional (responses read as NaN when absent or blank).
pub fn read_covariate_rows(path: &Path) -> Result<RegressionTable> {
    read_table(path, false)
}

fn read_table(path: &Path, need_y: bool) -> Result<RegressionTable> {
    let (header, records) = read_records(path)?;
    let y_col = if need_y { Some(column(&header, "y")?) } else { header.iter().position(|h| h == "y") };
    let cont = prefixed(&header, "c:");
    let bin = prefixed(&header, "b:");
    if let Some(h) = header.iter().enumerate().find(|(i, _)| Some(*i) != y_col && !cont.iter().chain(&bin).any(|(c, _)| c == i)) {
        return Err(parse_err(1, h.1, "unexpected column (use y, c:<name> or b:<name>)"));
    }
    if records.is_empty() {
        return Err(parse_err(2, "record", "no data rows"));
    }
    let mut table = RegressionTable {
        continuous_names: cont.iter().map(|(_, n)| n.clone()).collect(),
        binary_names: bin.iter().map(|(_, n)| n.clone()).collect(),
        y: Vec::new(),
        continuous: Vec::new(),
        binary: Vec::new(),
    };
    for (r, rec) in records.iter().enumerate() {
        let row = r + 2;
        table.y.push(match y_col {
            Some(c) if need_y || !rec[c].trim().is_empty() => parse_real(&rec[c], row, "y")?,
            _ => f64::NAN,
        });
        table.continuous.push(cont.iter().map(|(c, _)| parse_real(&rec[*c], row, &header[*c])).collect::<Result<_>>()?);
        table.binary.push(bin.iter().map(|(c, _)| parse_binary(&rec[*c], row, &header[*c])).collect::<Result<_>>()?);
    }
    Ok(table)
}

/// Response and covariates of a regression file, with the metric computed.
pub fn load_regression_csv(path: &Path, metric: MetricChoice) -> Result<(Vec<f64>, MixedCovariateMatrix)> {
    let table = read_regression_table(path)?;
    let x = table.covariates(metric)?;
    Ok((table.y, x))
}

pub fn write_regression_csv(path: &Path, table: &RegressionTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["y".to_string()];
    header.extend(table.continuous_names.iter().map(|n| format!("c:{n}")));
    header.extend(table.binary_names.iter().map(|n| format!("b:{n}")));
    w.write_record(&header)?;
    for i in 0..table.n_items() {
        let mut rec = vec![table.y[i].to_string()];
        rec.extend(table.continuous[i].iter().map(f64::to_string));
        rec.extend(table.binary[i].iter().map(u8::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One subject as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub tau: f64,
    pub log_gaps: Vec<f64>,
    /// `m + 1` rows
    pub x_time: Vec<Vec<f64>>,
    pub x_fixed: Vec<f64>,
    pub continuous: Vec<f64>,
    pub binary: Vec<u8>,
}

/// Raw contents of an events file and a subjects file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentTable {
    pub time_names: Vec<String>,
    pub fixed_names: Vec<String>,
    pub continuous_names: Vec<String>,
    pub binary_names: Vec<String>,
    pub subjects: Vec<SubjectRecord>,
}

impl RecurrentTable {
    pub fn to_dataset(&self, metric: MetricChoice) -> Result<RecurrentDataset> {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let bound = censor_bound(&s.log_gaps, s.tau).ok_or_else(|| Error::CensorBeforeLastEvent {
                    subject: s.id.clone(),
                    tau: s.tau,
                    last_event: s.log_gaps.iter().map(|y| y.exp()).sum(),
                })?;
                Ok(Subject {
                    id: s.id.clone(),
                    y: s.log_gaps.clone(),
                    censor_bound: bound,
                    x_fixed: s.x_fixed.clone(),
                    x_time: s.x_time.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cont: Vec<Vec<f64>> = self.subjects.iter().map(|s| s.continuous.clone()).collect();
        let bin = self.subjects.iter().map(|s| s.binary.clone()).collect();
        RecurrentDataset::new(subjects, covariates(&cont, self.continuous_names.len(), bin, metric)?)
    }

    /// Rebuilds a table from a dataset; `tau` is recovered as the last event
    /// time plus the censoring gap.
    pub fn from_dataset(data: &RecurrentDataset, names: RecurrentNames) -> Result<Self> {
        let x = data.covariates();
        if names.time.len() != data.p2()
            || names.fixed.len() != data.p1()
            || names.continuous.len() != x.n_continuous()
            || names.binary.len() != x.n_binary()
        {
            return Err(Error::Spec("column names do not match the dataset dimensions".into()));
        }
        Ok(RecurrentTable {
            time_names: names.time,
            fixed_names: names.fixed,
            continuous_names: names.continuous,
            binary_names: names.binary,
            subjects: data
                .subjects()
                .iter()
                .enumerate()
                .map(|(i, s)| SubjectRecord {
                    id: s.id.clone(),
                    tau: s.y.iter().map(|y| y.exp()).sum::<f64>() + s.censor_bound.exp(),
                    log_gaps: s.y.clone(),
                    x_time: s.x_time.clone(),
                    x_fixed: s.x_fixed.clone(),
                    continuous: x.continuous_row(i),
                    binary: x.binary_row(i).to_vec(),
                })
                .collect(),
        })
    }
}

/// Column names of the recurrent files, without their prefixes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecurrentNames {
    pub time: Vec<String>,
    pub fixed: Vec<String>,
    pub continuous: Vec<String>,
    pub binary: Vec<String>,
}

pub fn read_recurrent_table(events_path: &Path, subjects_path: &Path) -> Result<RecurrentTable> {
    let (sh, srecs) = read_records(subjects_path)?;
    let id_col = column(&sh, "subject_id")?;
    let tau_col = column(&sh, "tau")?;
    let fixed = prefixed(&sh, "f:");
    let cont = prefixed(&sh, "c:");
    let bin = prefixed(&sh, "b:");
    if srecs.is_empty() {
        return Err(parse_err(2, "subject_id", "no subjects"));
    }
    let mut subjects = Vec::with_capacity(srecs.len());
    let mut index = HashMap::new();
    for (r, rec) in srecs.iter().enumerate() {
        let row = r + 2;
        let id = rec[id_col].to_string();
        if index.insert(id.clone(), subjects.len()).is_some() {
            return Err(parse_err(row, "subject_id", format!("duplicate subject `{id}`")));
        }
        subjects.push(SubjectRecord {
            id,
            tau: parse_real(&rec[tau_col], row, "tau")?,
            log_gaps: Vec::new(),
            x_time: Vec::new(),
            x_fixed: fixed.iter().map(|(c, _)| parse_real(&rec[*c], row, &sh[*c])).collect::<Result<_>>()?,
            continuous: cont.iter().map(|(c, _)| parse_real(&rec[*c], row, &sh[*c])).collect::<Result<_>>()?,
            binary: bin.iter().map(|(c, _)| parse_binary(&rec[*c], row, &sh[*c])).collect::<Result<_>>()?,
        });
    }

    let (eh, erecs) = read_records(events_path)?;
    let eid = column(&eh, "subject_id")?;
    let t_col = column(&eh, "t")?;
    let (gap_col, raw) = match (eh.iter().position(|h| h == "log_gap"), eh.iter().position(|h| h == "gap")) {
        (Some(c), None) => (c, false),
        (None, Some(c)) => (c, true),
        (Some(_), Some(_)) => return Err(parse_err(1, "gap", "give either log_gap or gap, not both")),
        (None, None) => return Err(parse_err(1, "log_gap", "missing column")),
    };
    let tv = prefixed(&eh, "tv:");
    // (occasion, gap, covariates, row) per subject
    let mut occasions: Vec<Vec<(usize, Option<f64>, Vec<f64>, usize)>> = vec![Vec::new(); subjects.len()];
    for (r, rec) in erecs.iter().enumerate() {
        let row = r + 2;
        let s = *index
            .get(&rec[eid])
            .ok_or_else(|| parse_err(row, "subject_id", format!("subject `{}` is not in the subjects file", &rec[eid])))?;
        let t: usize = rec[t_col].trim().parse().map_err(|_| parse_err(row, "t", format!("`{}` is not an occasion number", &rec[t_col])))?;
        let gap = match rec[gap_col].trim() {
            "" => None,
            cell => {
                let v = parse_real(cell, row, &eh[gap_col])?;
                if raw {
                    if v <= 0.0 {
                        return Err(parse_err(row, "gap", "gap times must be positive"));
                    }
                    Some(v.ln())
                } else {
                    Some(v)
                }
            }
        };
        let x = tv.iter().map(|(c, _)| parse_real(&rec[*c], row, &eh[*c])).collect::<Result<Vec<_>>>()?;
        occasions[s].push((t, gap, x, row));
    }
    for (subject, mut occ) in subjects.iter_mut().zip(occasions) {
        occ.sort_by_key(|o| o.0);
        let contiguous = occ.iter().enumerate().all(|(k, o)| o.0 == k + 1);
        let gaps_first = occ.iter().skip_while(|o| o.1.is_some()).all(|o| o.1.is_none());
        let censored_rows = occ.iter().filter(|o| o.1.is_none()).count();
        if !contiguous || !gaps_first || censored_rows > 1 {
            return Err(Error::NonMonotoneOccasions { subject: subject.id.clone() });
        }
        if censored_rows == occ.len() {
            return Err(Error::Spec(format!("subject {} has no observed gap", subject.id)));
        }
        for (_, gap, x, _) in &occ {
            if let Some(g) = gap {
                subject.log_gaps.push(*g);
            }
            subject.x_time.push(x.clone());
        }
        if censored_rows == 0 {
            // the censored occasion keeps the covariates of the last event
            let last = subject.x_time.last().cloned().expect("at least one occasion");
            subject.x_time.push(last);
        }
        let elapsed: f64 = subject.log_gaps.iter().map(|y| y.exp()).sum();
        if subject.tau <= elapsed {
            return Err(Error::CensorBeforeLastEvent {
                subject: subject.id.clone(),
                tau: subject.tau,
                last_event: elapsed,
            });
        }
    }
    Ok(RecurrentTable {
        time_names: tv.into_iter().map(|(_, n)| n).collect(),
        fixed_names: fixed.into_iter().map(|(_, n)| n).collect(),
        continuous_names: cont.into_iter().map(|(_, n)| n).collect(),
        binary_names: bin.into_iter().map(|(_, n)| n).collect(),
        subjects,
    })
}

pub fn load_recurrent_csv(events_path: &Path, subjects_path: &Path, metric: MetricChoice) -> Result<RecurrentDataset> {
    read_recurrent_table(events_path, subjects_path)?.to_dataset(metric)
}

/// Writes both files; log gaps are written as `log_gap`, and the censored
/// occasion as a row with an empty gap.
pub fn write_recurrent_csv(events_path: &Path, subjects_path: &Path, table: &RecurrentTable) -> Result<()> {
    let mut w = csv::Writer::from_path(subjects_path)?;
    let mut header = vec!["subject_id".to_string(), "tau".to_string()];
    header.extend(table.fixed_names.iter().map(|n| format!("f:{n}")));
    header.extend(table.continuous_names.iter().map(|n| format!("c:{n}")));
    header.extend(table.binary_names.iter().map(|n| format!("b:{n}")));
    w.write_record(&header)?;
    for s in &table.subjects {
        let mut rec = vec![s.id.clone(), s.tau.to_string()];
        rec.extend(s.x_fixed.iter().map(f64::to_string));
        rec.extend(s.continuous.iter().map(f64::to_string));
        rec.extend(s.binary.iter().map(u8::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(events_path)?;
    let mut header = vec!["subject_id".to_string(), "t".to_string(), "log_gap".to_string()];
    header.extend(table.time_names.iter().map(|n| format!("tv:{n}")));
    w.write_record(&header)?;
    for s in &table.subjects {
        for (t, x) in s.x_time.iter().enumerate() {
            let gap = s.log_gaps.get(t).map_or_else(String::new, f64::to_string);
            let mut rec = vec![s.id.clone(), (t + 1).to_string(), gap];
            rec.extend(x.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Item labels, one `item,label` row each.
pub fn write_labels_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item", "label"])?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let (header, records) = read_records(path)?;
    let item = column(&header, "item")?;
    let label = column(&header, "label")?;
    let mut out = vec![None; records.len()];
    for (r, rec) in records.iter().enumerate() {
        let i: usize = rec[item].parse().map_err(|_| parse_err(r + 2, "item", "not an index"))?;
        let l: usize = rec[label].parse().map_err(|_| parse_err(r + 2, "label", "not a label"))?;
        match out.get_mut(i) {
            Some(slot @ None) => *slot = Some(l),
            _ => return Err(parse_err(r + 2, "item", format!("item {i} is out of range or repeated"))),
        }
    }
    Ok(out.into_iter().map(|l| l.expect("every slot filled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn regression_file() {
        let dir = tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "y,c:age,b:smoke\n1.5,30,0\n2.5,41,1\n-0.5,52,1\n");
        let (y, x) = load_regression_csv(&p, MetricChoice::Empirical).unwrap();
        assert_eq!(y, vec![1.5, 2.5, -0.5]);
        assert_eq!(x.n_items(), 3);
        assert_eq!(x.binary_row(1), &[1]);
        let table = read_regression_table(&p).unwrap();
        assert_eq!(table.design_row(2), vec![1.0, 52.0, 1.0]);

        let bad = write(dir.path(), "b.csv", "y,c:age,b:smoke\n1.5,30,0\n2.5,41,2\n");
        match load_regression_csv(&bad, MetricChoice::Empirical) {
            Err(Error::NonBinaryValue { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "b:smoke", "2"));
            }
            other => panic!("{other:?}"),
        }
        let empty = write(dir.path(), "e.csv", "");
        assert!(matches!(load_regression_csv(&empty, MetricChoice::Empirical), Err(Error::Parse { .. })));
        let text = write(dir.path(), "t.csv", "y,c:age\n1,abc\n");
        assert!(matches!(load_regression_csv(&text, MetricChoice::Empirical), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn recurrent_files() {
        let dir = tempdir().unwrap();
        let subjects = write(dir.path(), "s.csv", "subject_id,tau,f:male,c:age,b:smoke\na,400,1,30,0\nb,500,0,45,1\nc,300,1,50,1\n");
        let events = write(
            dir.path(),
            "e.csv",
            "subject_id,t,gap,tv:age\na,1,100,3.0\na,2,121,3.1\na,3,,3.2\nb,1,90,4.5\nc,2,80,5.1\nc,1,70,5.0\n",
        );
        let ds = load_recurrent_csv(&events, &subjects, MetricChoice::Empirical).unwrap();
        let a = ds.subject(0);
        assert!((a.censor_bound - 179f64.ln()).abs() < 1e-12);
        assert_eq!(a.x_time, vec![vec![3.0], vec![3.1], vec![3.2]]);
        // no censored row given: the last event's covariates are repeated
        assert_eq!(ds.subject(1).x_time, vec![vec![4.5], vec![4.5]]);
        assert_eq!(ds.subject(2).y, vec![70f64.ln(), 80f64.ln()]);
        assert_eq!(ds.horizon(), 3);
        assert_eq!(ds.p1(), 1);

        let late = write(dir.path(), "s2.csv", "subject_id,tau\na,200\n");
        let ev = write(dir.path(), "e2.csv", "subject_id,t,gap\na,1,100\na,2,121\n");
        assert!(matches!(load_recurrent_csv(&ev, &late, MetricChoice::Identity), Err(Error::CensorBeforeLastEvent { .. })));
        let ok = write(dir.path(), "s3.csv", "subject_id,tau\na,900\n");
        let skip = write(dir.path(), "e3.csv", "subject_id,t,gap\na,1,100\na,3,121\n");
        assert!(matches!(load_recurrent_csv(&skip, &ok, MetricChoice::Identity), Err(Error::NonMonotoneOccasions { .. })));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_labels_csv(&p, &[0, 1, 1, 2]).unwrap();
        assert_eq!(read_labels_csv(&p).unwrap(), vec![0, 1, 1, 2]);
    }
}
