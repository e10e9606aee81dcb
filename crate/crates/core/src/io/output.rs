//! Trace files, run manifest and summary tables.
//!
//! Reals are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces every value bit for bit and equal runs give equal
//! bytes.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conjugate::ConjClusterParams;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::recurrent::{RecClusterParams, RecExtra, RecurrentTrace, RegressionState};
use crate::summaries::{ClusterSummary, Lpml, PosteriorSimilarityMatrix};
use crate::trace::{Draw, TraceStore};

/// Generator of chain `chain`: the root seed with its own ChaCha stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn joined(values: &[f64]) -> String {
    values.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(";")
}

fn parse_joined(s: &str, row: usize, column: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                row,
                column: column.to_string(),
                message: format!("`{t}` is not a number"),
            })
        })
        .collect()
}

/// File names of one chain's trace inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFiles {
    /// iteration, u, k, allocations
    pub draws: PathBuf,
    /// iteration, block, parameters
    pub params: PathBuf,
    /// iteration, then one log-likelihood column per item
    pub log_lik: PathBuf,
    /// recurrent model only: iteration, regression state, imputed censored gaps
    pub regression: PathBuf,
}

impl TraceFiles {
    pub fn new(dir: &Path, chain: usize) -> Self {
        TraceFiles {
            draws: dir.join(format!("trace_chain{chain}.csv")),
            params: dir.join(format!("params_chain{chain}.csv")),
            log_lik: dir.join(format!("loglik_chain{chain}.csv")),
            regression: dir.join(format!("regression_chain{chain}.csv")),
        }
    }
}

fn write_common<P, E>(files: &TraceFiles, trace: &TraceStore<P, E>) -> Result<()> {
    let mut w = csv::Writer::from_path(&files.draws)?;
    w.write_record(["iteration", "u", "k", "allocations"])?;
    for d in &trace.draws {
        w.write_record([d.iteration.to_string(), fmt(d.u), d.partition.n_blocks().to_string(), d.partition.to_allocation_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(&files.log_lik)?;
    let n = trace.draws.first().map_or(0, |d| d.log_lik.len());
    let mut header = vec!["iteration".to_string()];
    header.extend((0..n).map(|i| format!("item{i}")));
    w.write_record(&header)?;
    for d in &trace.draws {
        let mut rec = vec![d.iteration.to_string()];
        rec.extend(d.log_lik.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_conjugate_trace(dir: &Path, chain: usize, trace: &TraceStore<ConjClusterParams>) -> Result<TraceFiles> {
    let files = TraceFiles::new(dir, chain);
    write_common(&files, trace)?;
    let mut w = csv::Writer::from_path(&files.params)?;
    w.write_record(["iteration", "block", "sigma2", "beta"])?;
    for d in &trace.draws {
        for (j, th) in d.params.iter().enumerate() {
            w.write_record([d.iteration.to_string(), j.to_string(), fmt(th.sigma2), joined(&th.beta)])?;
        }
    }
    w.flush()?;
    Ok(files)
}

pub fn write_recurrent_trace(dir: &Path, chain: usize, trace: &RecurrentTrace) -> Result<TraceFiles> {
    let files = TraceFiles::new(dir, chain);
    write_common(&files, trace)?;
    let mut w = csv::Writer::from_path(&files.params)?;
    w.write_record(["iteration", "block", "alpha", "psi", "sigma2"])?;
    for d in &trace.draws {
        for (j, th) in d.params.iter().enumerate() {
            w.write_record([d.iteration.to_string(), j.to_string(), fmt(th.alpha_c), fmt(th.psi), fmt(th.sigma2)])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(&files.regression)?;
    w.write_record(["iteration", "beta0", "beta_t", "xi2", "censored"])?;
    for d in &trace.draws {
        let r = &d.extra.regression;
        let beta_t = r.beta_t.iter().map(|b| joined(b)).collect::<Vec<_>>().join("|");
        w.write_record([d.iteration.to_string(), joined(&r.beta0), beta_t, joined(&r.xi2), joined(&d.extra.censored)])?;
    }
    w.flush()?;
    Ok(files)
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records().map(|x| x.map_err(Error::from)).collect()
}

fn parse_at<T: std::str::FromStr>(s: &str, row: usize, column: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{s}`"),
    })
}

/// Draws without parameters or extras, as read from the common files.
fn read_common(files: &TraceFiles) -> Result<Vec<Draw<(), ()>>> {
    let draws = records(&files.draws)?;
    let lls = records(&files.log_lik)?;
    if draws.len() != lls.len() {
        return Err(Error::SizeMismatch {
            expected: draws.len(),
            found: lls.len(),
        });
    }
    draws
        .iter()
        .zip(&lls)
        .enumerate()
        .map(|(r, (d, l))| {
            let row = r + 2;
            let partition = Partition::parse_allocation_string(&d[3]).map_err(|_| Error::Parse {
                row,
                column: "allocations".into(),
                message: "invalid allocation string".into(),
            })?;
            Ok(Draw {
                iteration: parse_at(&d[0], row, "iteration")?,
                u: parse_at(&d[1], row, "u")?,
                partition,
                params: Vec::new(),
                log_lik: l.iter().skip(1).map(|v| parse_at(v, row, "log_lik")).collect::<Result<_>>()?,
                extra: (),
            })
        })
        .collect()
}

/// Groups parameter rows (iteration first, then block) by draw.
fn attach<P>(common: Vec<Draw<(), ()>>, rows: Vec<(usize, P)>) -> Result<Vec<(Draw<(), ()>, Vec<P>)>> {
    let mut out: Vec<(Draw<(), ()>, Vec<P>)> = common.into_iter().map(|d| (d, Vec::new())).collect();
    let mut pos = 0;
    for (iteration, p) in rows {
        while pos < out.len() && out[pos].0.iteration != iteration {
            pos += 1;
        }
        let Some(slot) = out.get_mut(pos) else {
            return Err(Error::Parse {
                row: 0,
                column: "iteration".into(),
                message: format!("parameters for unknown iteration {iteration}"),
            });
        };
        slot.1.push(p);
    }
    for (d, p) in &out {
        if p.len() != d.partition.n_blocks() {
            return Err(Error::SizeMismatch {
                expected: d.partition.n_blocks(),
                found: p.len(),
            });
        }
    }
    Ok(out)
}

pub fn read_conjugate_trace(dir: &Path, chain: usize) -> Result<TraceStore<ConjClusterParams>> {
    let files = TraceFiles::new(dir, chain);
    let common = read_common(&files)?;
    let rows = records(&files.params)?
        .iter()
        .enumerate()
        .map(|(r, rec)| {
            let row = r + 2;
            Ok((
                parse_at::<usize>(&rec[0], row, "iteration")?,
                ConjClusterParams {
                    sigma2: parse_at(&rec[2], row, "sigma2")?,
                    beta: parse_joined(&rec[3], row, "beta")?,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceStore {
        draws: attach(common, rows)?
            .into_iter()
            .map(|(d, params)| Draw {
                iteration: d.iteration,
                partition: d.partition,
                u: d.u,
                params,
                log_lik: d.log_lik,
                extra: (),
            })
            .collect(),
        u_acceptance: f64::NAN,
    })
}

pub fn read_recurrent_trace(dir: &Path, chain: usize) -> Result<RecurrentTrace> {
    let files = TraceFiles::new(dir, chain);
    let common = read_common(&files)?;
    let rows = records(&files.params)?
        .iter()
        .enumerate()
        .map(|(r, rec)| {
            let row = r + 2;
            Ok((
                parse_at::<usize>(&rec[0], row, "iteration")?,
                RecClusterParams {
                    alpha_c: parse_at(&rec[2], row, "alpha")?,
                    psi: parse_at(&rec[3], row, "psi")?,
                    sigma2: parse_at(&rec[4], row, "sigma2")?,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let extras = records(&files.regression)?
        .iter()
        .enumerate()
        .map(|(r, rec)| {
            let row = r + 2;
            let beta_t = if rec[2].is_empty() {
                Vec::new()
            } else {
                rec[2].split('|').map(|b| parse_joined(b, row, "beta_t")).collect::<Result<_>>()?
            };
            Ok(RecExtra {
                regression: RegressionState {
                    beta0: parse_joined(&rec[1], row, "beta0")?,
                    beta_t,
                    xi2: parse_joined(&rec[3], row, "xi2")?,
                },
                censored: parse_joined(&rec[4], row, "censored")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let draws = attach(common, rows)?;
    if extras.len() != draws.len() {
        return Err(Error::SizeMismatch {
            expected: draws.len(),
            found: extras.len(),
        });
    }
    Ok(TraceStore {
        draws: draws
            .into_iter()
            .zip(extras)
            .map(|((d, params), extra)| Draw {
                iteration: d.iteration,
                partition: d.partition,
                u: d.u,
                params,
                log_lik: d.log_lik,
                extra,
            })
            .collect(),
        u_acceptance: f64::NAN,
    })
}

/// Flat `key = value` manifest of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text: String = self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub fn write_psm_csv(path: &Path, psm: &PosteriorSimilarityMatrix) -> Result<()> {
    let n = psm.n_items();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["item".to_string()];
    header.extend((0..n).map(|i| format!("item{i}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![i.to_string()];
        rec.extend((0..n).map(|j| fmt(psm.get(i, j))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cpo_csv(path: &Path, lpml: &Lpml) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item", "log_cpo"])?;
    for (i, v) in lpml.log_cpo.iter().enumerate() {
        w.write_record([i.to_string(), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cluster_summary_csv(path: &Path, summaries: &[ClusterSummary], continuous_names: &[String], binary_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cluster".to_string(), "size".to_string()];
    header.extend(continuous_names.iter().map(|n| format!("mean:{n}")));
    header.extend(binary_names.iter().map(|n| format!("freq:{n}")));
    w.write_record(&header)?;
    for (j, s) in summaries.iter().enumerate() {
        let mut rec = vec![j.to_string(), s.size.to_string()];
        rec.extend(s.continuous_mean.iter().map(|v| fmt(*v)));
        rec.extend(s.binary_frequency.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
