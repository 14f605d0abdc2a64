use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::trial::{run_trial, trial_seed, TrialOutcome, TrialRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "seed,algorithm,T,pnr_db,snr_db,nmse,se_bits_s_hz,outer_iters,wall_ms";

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// Point-major, then trial order.
    pub records: Vec<TrialRecord>,
    /// `(row index, message)` for every failed trial.
    pub failures: Vec<(usize, String)>,
}

/// Runs every `(point, trial)` pair of the configuration.
///
/// `threads` overrides the config's thread count. Rows come back in the
/// same order whatever the thread count.
pub fn sweep(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<SweepOutput> {
    cfg.validate()?;
    let points = cfg.points();
    let seeds: Vec<u64> = (0..cfg.trials as u64)
        .map(|i| trial_seed(cfg.seed, i))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(cfg.threads))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, seed)| run_trial(cfg, &points[p], seed))
            .collect::<Result<_>>()
    })?;
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        if let Some(msg) = o.failure {
            failures.push((i, msg));
        }
        records.push(o.record);
    }
    Ok(SweepOutput { records, failures })
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Writes the header and one line per record, LF-terminated.
pub fn write_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!(
            "unexpected CSV header `{}`",
            header.join(",")
        )));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Per-point aggregate over the trials of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub pnr_db: f64,
    pub snr_db: f64,
    pub trials: usize,
    pub failed: usize,
    pub nmse_median: f64,
    pub nmse_mean: f64,
    pub se_median: f64,
    pub se_mean: f64,
}

/// Groups consecutive rows into sweep points and aggregates each group.
///
/// A group ends when the point columns change or a seed repeats. The second
/// rule separates `K_hat` points, which share every CSV column except the
/// outcome. Failed trials are counted but left out of the statistics.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<Vec<&TrialRecord>> = Vec::new();
    for r in records {
        let same_point = groups.last().is_some_and(|g| {
            let h = g[0];
            h.algorithm == r.algorithm
                && h.t == r.t
                && h.pnr_db.to_bits() == r.pnr_db.to_bits()
                && h.snr_db.to_bits() == r.snr_db.to_bits()
                && g.iter().all(|x| x.seed != r.seed)
        });
        match groups.last_mut() {
            Some(g) if same_point => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let ok: Vec<&&TrialRecord> = g
                .iter()
                .filter(|r| r.nmse.is_finite() && r.se_bits_s_hz.is_finite())
                .collect();
            let nmse: Vec<f64> = ok.iter().map(|r| r.nmse).collect();
            let se: Vec<f64> = ok.iter().map(|r| r.se_bits_s_hz).collect();
            SummaryRow {
                algorithm: g[0].algorithm.clone(),
                t: g[0].t,
                pnr_db: g[0].pnr_db,
                snr_db: g[0].snr_db,
                trials: g.len(),
                failed: g.len() - ok.len(),
                nmse_median: median(&nmse),
                nmse_mean: mean(&nmse),
                se_median: median(&se),
                se_mean: mean(&se),
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Median of the values; NaN for an empty slice.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
