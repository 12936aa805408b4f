//! CSV writers and readers for density, scalar, trajectory and truncation tables.
//!
//! Floats are written with 17 significant digits, so reading a file back
//! reproduces the stored values bit for bit.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::observables::{DensitySeries, ScalarSeries};
use crate::trajectory::TrajectoryRecord;

pub const DENSITY_HEADER: [&str; 6] = ["engine", "realization", "layer", "site", "density", "stderr"];
pub const SCALAR_HEADER: [&str; 7] =
    ["engine", "layer", "observable", "value", "std_dev", "mean_abs_dev", "n_realizations"];
pub const TRAJECTORY_HEADER: [&str; 7] =
    ["realization", "trajectory", "layer", "site", "measured", "outcome", "feedback_applied"];
pub const TRUNCATION_HEADER: [&str; 6] =
    ["realization", "trajectory", "layer", "discarded_weight", "max_bond", "truncation_events"];

/// Realization label used for the realization-averaged rows.
pub const MEAN_LABEL: &str = "mean";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record
        .get(idx)
        .ok_or_else(|| Error::Parse(format!("line {line}: missing column {name}")))?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad value {raw:?} in column {name}")))
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "unexpected header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            expected.join(",")
        )));
    }
    Ok(())
}

/// One labelled density series inside a density table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSeries {
    /// Realization index, or `None` for the realization mean.
    pub realization: Option<usize>,
    pub series: DensitySeries,
}

pub fn write_densities<W: Write>(out: W, tables: &[LabelledSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DENSITY_HEADER).map_err(csv_err)?;
    for t in tables {
        let label = t.realization.map_or_else(|| MEAN_LABEL.to_string(), |r| r.to_string());
        for (i, (row, se)) in t.series.values.iter().zip(&t.series.stderr).enumerate() {
            for (x, (v, s)) in row.iter().zip(se).enumerate() {
                w.write_record([
                    t.series.engine.as_str(),
                    &label,
                    &i.to_string(),
                    &x.to_string(),
                    &fmt_f64(*v),
                    &fmt_f64(*s),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a density table back into its series, in file order. `realizations`
/// of each series is 1 for per-realization rows and the number of
/// per-realization tables for the mean.
pub fn read_densities<R: Read>(input: R) -> Result<Vec<LabelledSeries>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &DENSITY_HEADER)?;
    // (engine, label) → rows of (layer, site, value, stderr)
    let mut groups: Vec<(String, String, Vec<(usize, usize, f64, f64)>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let engine = rec.get(0).unwrap_or_default().to_string();
        let label = rec.get(1).unwrap_or_default().to_string();
        let row = (
            parse_field(&rec, 2, "layer")?,
            parse_field(&rec, 3, "site")?,
            parse_field(&rec, 4, "density")?,
            parse_field(&rec, 5, "stderr")?,
        );
        match groups.last_mut() {
            Some((e, l, rows)) if *e == engine && *l == label => rows.push(row),
            _ => groups.push((engine, label, vec![row])),
        }
    }
    let per_realization = groups.iter().filter(|g| g.1 != MEAN_LABEL).count();
    groups
        .into_iter()
        .map(|(engine, label, rows)| {
            let realization = if label == MEAN_LABEL {
                None
            } else {
                Some(label.parse().map_err(|_| Error::Parse(format!("bad realization label {label:?}")))?)
            };
            let layers = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
            let sites = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
            if rows.len() != layers * sites {
                return Err(Error::ShapeMismatch(format!(
                    "series {engine}/{label} has {} rows, expected {layers}×{sites}",
                    rows.len()
                )));
            }
            let mut values = vec![vec![f64::NAN; sites]; layers];
            let mut stderr = values.clone();
            for (i, x, v, s) in rows {
                values[i][x] = v;
                stderr[i][x] = s;
            }
            let count = if realization.is_none() { per_realization.max(1) } else { 1 };
            Ok(LabelledSeries { realization, series: DensitySeries::new(engine, values, stderr, count)? })
        })
        .collect()
}

pub fn write_scalars<W: Write>(out: W, engine: &str, series: &[&ScalarSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCALAR_HEADER).map_err(csv_err)?;
    for s in series {
        for i in 0..s.values.len() {
            w.write_record([
                engine,
                &i.to_string(),
                &s.name,
                &fmt_f64(s.values[i]),
                &fmt_f64(s.std_dev[i]),
                &fmt_f64(s.mean_abs_dev[i]),
                &s.n_realizations.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Returns `(engine, series)` pairs in file order.
pub fn read_scalars<R: Read>(input: R) -> Result<Vec<(String, ScalarSeries)>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &SCALAR_HEADER)?;
    let mut out: Vec<(String, ScalarSeries)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let engine = rec.get(0).unwrap_or_default().to_string();
        let name = rec.get(2).unwrap_or_default().to_string();
        let layer: usize = parse_field(&rec, 1, "layer")?;
        let n: usize = parse_field(&rec, 6, "n_realizations")?;
        let fresh = !matches!(out.last(), Some((e, s)) if *e == engine && s.name == name);
        if fresh {
            out.push((
                engine,
                ScalarSeries { name, values: vec![], std_dev: vec![], mean_abs_dev: vec![], n_realizations: n },
            ));
        }
        let s = &mut out.last_mut().expect("pushed above").1;
        if layer != s.values.len() {
            return Err(Error::Parse(format!("scalar {} skips to layer {layer}", s.name)));
        }
        s.values.push(parse_field(&rec, 3, "value")?);
        s.std_dev.push(parse_field(&rec, 4, "std_dev")?);
        s.mean_abs_dev.push(parse_field(&rec, 5, "mean_abs_dev")?);
    }
    Ok(out)
}

/// Flat trajectory-event row. `layer` counts from 1 (the first evolved layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRow {
    pub realization: usize,
    pub trajectory: usize,
    pub layer: usize,
    pub site: usize,
    pub measured: bool,
    pub outcome: Option<u8>,
    pub feedback_applied: bool,
}

pub fn event_rows(record: &TrajectoryRecord) -> impl Iterator<Item = EventRow> + '_ {
    record.events.iter().enumerate().flat_map(move |(i, layer)| {
        layer.iter().map(move |e| EventRow {
            realization: record.realization,
            trajectory: record.trajectory,
            layer: i + 1,
            site: e.site,
            measured: e.measured,
            outcome: e.outcome,
            feedback_applied: e.feedback_applied,
        })
    })
}

pub fn write_events<W: Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    let bit = |b: bool| if b { "1" } else { "0" };
    for row in records.iter().flat_map(event_rows) {
        w.write_record([
            row.realization.to_string().as_str(),
            &row.trajectory.to_string(),
            &row.layer.to_string(),
            &row.site.to_string(),
            bit(row.measured),
            &row.outcome.map_or(String::new(), |o| o.to_string()),
            bit(row.feedback_applied),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(input: R) -> Result<Vec<EventRow>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &TRAJECTORY_HEADER)?;
    let flag = |rec: &csv::StringRecord, idx: usize, name: &str| -> Result<bool> {
        Ok(parse_field::<u8>(rec, idx, name)? != 0)
    };
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let outcome = match rec.get(5) {
                Some("") | None => None,
                Some(_) => Some(parse_field(&rec, 5, "outcome")?),
            };
            Ok(EventRow {
                realization: parse_field(&rec, 0, "realization")?,
                trajectory: parse_field(&rec, 1, "trajectory")?,
                layer: parse_field(&rec, 2, "layer")?,
                site: parse_field(&rec, 3, "site")?,
                measured: flag(&rec, 4, "measured")?,
                outcome,
                feedback_applied: flag(&rec, 6, "feedback_applied")?,
            })
        })
        .collect()
}

/// Per-layer MPS truncation statistics of every trajectory that carries them.
pub fn write_truncation<W: Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRUNCATION_HEADER).map_err(csv_err)?;
    for rec in records {
        for (i, t) in rec.truncation.iter().flatten().enumerate() {
            w.write_record([
                rec.realization.to_string().as_str(),
                &rec.trajectory.to_string(),
                &(i + 1).to_string(),
                &fmt_f64(t.discarded_weight),
                &t.max_bond.to_string(),
                &t.truncation_events.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{SiteEvent, TruncationStats};
    use proptest::prelude::*;

    fn awkward(seed: u64, n: usize) -> Vec<f64> {
        let mut x = seed | 1;
        (0..n)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn density_round_trip() {
        let vals = awkward(5, 12);
        let values: Vec<Vec<f64>> = vals.chunks(4).map(<[f64]>::to_vec).collect();
        let stderr: Vec<Vec<f64>> = values.iter().map(|r| r.iter().map(|v| v * 1e-3).collect()).collect();
        let a = DensitySeries::new("mps", values.clone(), stderr.clone(), 1).unwrap();
        let mut mean = DensitySeries::new("mps", values, stderr, 2).unwrap();
        mean.values[1][2] = 1.0 / 3.0;
        let tables = vec![
            LabelledSeries { realization: Some(0), series: a.clone() },
            LabelledSeries { realization: Some(1), series: a },
            LabelledSeries { realization: None, series: mean },
        ];
        let mut buf = Vec::new();
        write_densities(&mut buf, &tables).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("engine,realization,layer,site,density,stderr\n"));
        assert_eq!(read_densities(buf.as_slice()).unwrap(), tables);
    }

    #[test]
    fn scalar_round_trip() {
        let s = ScalarSeries {
            name: "center_of_mass".into(),
            values: awkward(1, 4),
            std_dev: awkward(2, 4),
            mean_abs_dev: awkward(3, 4),
            n_realizations: 10,
        };
        let t = ScalarSeries { name: "polarization".into(), ..s.clone() };
        let mut buf = Vec::new();
        write_scalars(&mut buf, "markov", &[&s, &t]).unwrap();
        assert!(buf.starts_with(b"engine,layer,observable,value,std_dev,mean_abs_dev,n_realizations\n"));
        let back = read_scalars(buf.as_slice()).unwrap();
        assert_eq!(back, vec![("markov".to_string(), s), ("markov".to_string(), t)]);
    }

    #[test]
    fn event_round_trip() {
        let ev = |site, measured, outcome, fb| SiteEvent { site, measured, outcome, feedback_applied: fb };
        let rec = TrajectoryRecord {
            master_seed: 1,
            realization: 2,
            trajectory: 3,
            events: vec![vec![ev(0, false, None, false), ev(1, true, Some(0), true)], vec![ev(0, true, Some(1), false)]],
            densities: vec![],
            truncation: Some(vec![TruncationStats { discarded_weight: 1e-11, max_bond: 4, truncation_events: 0 }]),
        };
        let mut buf = Vec::new();
        write_events(&mut buf, std::slice::from_ref(&rec)).unwrap();
        assert!(buf.starts_with(b"realization,trajectory,layer,site,measured,outcome,feedback_applied\n"));
        let rows = read_events(buf.as_slice()).unwrap();
        assert_eq!(rows, event_rows(&rec).collect::<Vec<_>>());
        assert_eq!(rows[1].outcome, Some(0));
        let mut t = Vec::new();
        write_truncation(&mut t, &[rec]).unwrap();
        assert_eq!(String::from_utf8(t).unwrap().lines().count(), 2);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = "engine,realization,layer,site,value,stderr\n";
        assert!(matches!(read_densities(text.as_bytes()), Err(Error::Parse(_))));
    }

    proptest! {
        #[test]
        fn floats_survive_text(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
