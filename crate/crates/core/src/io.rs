//! File formats: trajectory CSV, pair JSON-lines, treatment sidecar CSV.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{
    Cohort, ComparisonPair, Outcome, PatientId, SampleRef, SmoothnessPair, TimedSample, Trajectory,
};
use crate::error::{Error, Result};

/// Writes `patient_id,index,time,f0,...,f{d-1},outcome,outcome_time`.
pub fn write_dataset_csv<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = cohort.dim();
    let mut header = vec!["patient_id".to_string(), "index".into(), "time".into()];
    header.extend((0..d).map(|j| format!("f{j}")));
    header.push("outcome".into());
    header.push("outcome_time".into());
    w.write_record(&header)?;
    for t in cohort.trajectories() {
        for s in &t.samples {
            let mut rec = vec![
                t.patient_id.to_string(),
                s.index.to_string(),
                s.time.to_string(),
            ];
            rec.extend(s.features.iter().map(|v| v.to_string()));
            rec.push(t.outcome.as_str().to_string());
            rec.push(t.outcome_time.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidData(format!("cannot parse {what} '{field}'")))
}

/// Reads the dataset CSV. Rows of one patient must be contiguous; patients
/// keep their first-appearance order.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Cohort> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let n = cols.len();
    if n < 5 || cols[0] != "patient_id" || cols[1] != "index" || cols[2] != "time" {
        return Err(Error::InvalidData("unexpected dataset header".into()));
    }
    if cols[n - 2] != "outcome" || cols[n - 1] != "outcome_time" {
        return Err(Error::InvalidData(
            "dataset header must end with outcome,outcome_time".into(),
        ));
    }
    let d = n - 5;
    for (j, c) in cols[3..3 + d].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::InvalidData(format!(
                "expected column f{j}, found {c}"
            )));
        }
    }

    let mut trajectories: Vec<Trajectory> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let pid = PatientId(rec[0].to_string());
        let index: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidData(format!("bad index '{}'", &rec[1])))?;
        let time = parse_f64(&rec[2], "time")?;
        let features = (0..d)
            .map(|j| parse_f64(&rec[3 + j], "feature"))
            .collect::<Result<Vec<_>>>()?;
        let outcome = Outcome::parse(rec[n - 2].trim())?;
        let outcome_time = parse_f64(&rec[n - 1], "outcome_time")?;
        let sample = TimedSample {
            patient_id: pid.clone(),
            index,
            time,
            features,
        };
        match trajectories.last_mut() {
            Some(t) if t.patient_id == pid => t.samples.push(sample),
            _ => trajectories.push(Trajectory {
                patient_id: pid,
                samples: vec![sample],
                outcome,
                outcome_time,
                treatments: Vec::new(),
            }),
        }
    }
    Cohort::new(trajectories)
}

/// `patient_id,time` rows, one per treatment event.
pub fn write_treatments_csv<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "time"])?;
    for t in cohort.trajectories() {
        for &time in &t.treatments {
            w.write_record([t.patient_id.to_string(), time.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Attaches treatment events from the sidecar file to a cohort.
pub fn read_treatments_csv<R: Read>(input: R, cohort: Cohort) -> Result<Cohort> {
    let mut r = csv::Reader::from_reader(input);
    let mut events: BTreeMap<PatientId, Vec<f64>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        events
            .entry(PatientId(rec[0].to_string()))
            .or_default()
            .push(parse_f64(&rec[1], "treatment time")?);
    }
    let trajectories = cohort
        .into_trajectories()
        .into_iter()
        .map(|t| {
            let tr = events.remove(&t.patient_id).unwrap_or_default();
            t.with_treatments(tr)
        })
        .collect();
    if let Some(pid) = events.keys().next() {
        return Err(Error::InvalidData(format!(
            "treatment for unknown patient {pid}"
        )));
    }
    Cohort::new(trajectories)
}

#[derive(Serialize, Deserialize)]
struct RefRecord {
    patient: PatientId,
    index: usize,
}

impl From<&SampleRef> for RefRecord {
    fn from(r: &SampleRef) -> Self {
        RefRecord {
            patient: r.patient.clone(),
            index: r.index,
        }
    }
}

impl From<RefRecord> for SampleRef {
    fn from(r: RefRecord) -> Self {
        SampleRef {
            patient: r.patient,
            index: r.index,
        }
    }
}

fn write_jsonl<W: Write, T: Serialize>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// One `{"hi":{...},"lo":{...}}` object per line.
pub fn write_comparison_pairs<W: Write>(pairs: &[ComparisonPair], out: W) -> Result<()> {
    write_jsonl(pairs, out)
}

pub fn read_comparison_pairs<R: BufRead>(input: R) -> Result<Vec<ComparisonPair>> {
    read_jsonl(input)
}

/// One `{"a":{...},"b":{...},"dt":...}` object per line.
pub fn write_smoothness_pairs<W: Write>(pairs: &[SmoothnessPair], out: W) -> Result<()> {
    write_jsonl(pairs, out)
}

pub fn read_smoothness_pairs<R: BufRead>(input: R) -> Result<Vec<SmoothnessPair>> {
    read_jsonl(input)
}
