//! Fairness metrics, trade-off tables and controlled resampling.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingDataset;
use crate::rng::rng_from;
use crate::{Error, Result};

/// Column order of `tradeoff.csv`.
pub const TRADEOFF_HEADER: &str = "step,y_acc_test,s_acc_test_max,s_acc_train_max,chance_y,chance_s,hsic_s,dim";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRecord {
    pub step: usize,
    pub y_acc_test: f64,
    pub s_acc_test_max: f64,
    pub s_acc_train_max: f64,
    pub chance_y: f64,
    pub chance_s: f64,
    pub hsic_s: f64,
    pub dim: usize,
}

/// Per-group rates `p(Ŷ = c | S = g)` behind a DP value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dp: f64,
    pub gap_rms: f64,
    /// Classes left out of Gap_rms for lack of samples in one group.
    pub skipped_classes: usize,
    /// `[class][group]` prediction rates.
    pub prediction_rates: Vec<[f64; 2]>,
    /// `[class][group]` true-positive rates, `None` for empty cells.
    pub true_positive_rates: Vec<[Option<f64>; 2]>,
}

fn check_binary(s: &[usize]) -> Result<[usize; 2]> {
    let mut sizes = [0usize; 2];
    for &g in s {
        if g > 1 {
            let groups = s.iter().max().map_or(0, |m| m + 1);
            return Err(Error::NonBinaryAttribute(groups));
        }
        sizes[g] += 1;
    }
    for (g, &size) in sizes.iter().enumerate() {
        if size == 0 {
            return Err(Error::EmptyGroup(g));
        }
    }
    Ok(sizes)
}

fn prediction_rates(preds: &[usize], s: &[usize], classes: usize) -> Result<Vec<[f64; 2]>> {
    if preds.len() != s.len() {
        return Err(Error::SampleCountMismatch { left: preds.len(), right: s.len() });
    }
    let sizes = check_binary(s)?;
    let mut counts = vec![[0usize; 2]; classes];
    for (&p, &g) in preds.iter().zip(s) {
        if p >= classes {
            return Err(Error::LabelOutOfRange { label: p, classes });
        }
        counts[p][g] += 1;
    }
    Ok(counts
        .iter()
        .map(|c| [c[0] as f64 / sizes[0] as f64, c[1] as f64 / sizes[1] as f64])
        .collect())
}

/// Mean over classes of `|p(Ŷ=c|S=0) − p(Ŷ=c|S=1)|`.
pub fn demographic_parity(preds: &[usize], s: &[usize], classes: usize) -> Result<f64> {
    if classes == 0 {
        return Err(Error::EmptyLabels);
    }
    let rates = prediction_rates(preds, s, classes)?;
    Ok(rates.iter().map(|r| (r[0] - r[1]).abs()).sum::<f64>() / classes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRms {
    pub value: f64,
    pub skipped_classes: usize,
}

fn tpr_table(preds: &[usize], y: &[usize], s: &[usize], classes: usize) -> Result<Vec<[Option<f64>; 2]>> {
    if preds.len() != y.len() || y.len() != s.len() {
        return Err(Error::SampleCountMismatch { left: preds.len(), right: y.len().min(s.len()) });
    }
    check_binary(s)?;
    let mut hits = vec![[0usize; 2]; classes];
    let mut totals = vec![[0usize; 2]; classes];
    for ((&p, &t), &g) in preds.iter().zip(y).zip(s) {
        if t >= classes || p >= classes {
            return Err(Error::LabelOutOfRange { label: t.max(p), classes });
        }
        totals[t][g] += 1;
        if p == t {
            hits[t][g] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| {
            let rate = |g: usize| (totals[c][g] > 0).then(|| hits[c][g] as f64 / totals[c][g] as f64);
            [rate(0), rate(1)]
        })
        .collect())
}

/// Root of the class-mean squared TPR gap between the two groups. Classes
/// with an empty (class, group) cell are skipped and counted.
pub fn gap_rms(preds: &[usize], y: &[usize], s: &[usize], classes: usize) -> Result<GapRms> {
    let table = tpr_table(preds, y, s, classes)?;
    let gaps: Vec<f64> = table
        .iter()
        .filter_map(|r| match r {
            [Some(a), Some(b)] => Some((a - b).powi(2)),
            _ => None,
        })
        .collect();
    if gaps.is_empty() {
        return Err(Error::NoValidCells);
    }
    Ok(GapRms {
        value: (gaps.iter().sum::<f64>() / gaps.len() as f64).sqrt(),
        skipped_classes: classes - gaps.len(),
    })
}

pub fn fairness_report(preds: &[usize], y: &[usize], s: &[usize], classes: usize) -> Result<FairnessReport> {
    let gap = gap_rms(preds, y, s, classes)?;
    Ok(FairnessReport {
        dp: demographic_parity(preds, s, classes)?,
        gap_rms: gap.value,
        skipped_classes: gap.skipped_classes,
        prediction_rates: prediction_rates(preds, s, classes)?,
        true_positive_rates: tpr_table(preds, y, s, classes)?,
    })
}

/// Mirror-skewed subsample: class `y = 1` keeps a fraction `split` of
/// `s = 1` samples, class `y = 0` a fraction `split` of `s = 0`. Every class
/// gets `class_size` samples, by default the smallest (y, s) cell count.
pub fn controlled_resample(
    dataset: &EmbeddingDataset,
    split: f64,
    class_size: Option<usize>,
    seed: u64,
) -> Result<EmbeddingDataset> {
    if !(0.5..=0.95).contains(&split) {
        return Err(Error::InvalidSplit(split));
    }
    let y = dataset
        .y
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("controlled resampling needs task labels".into()))?;
    if y.classes() != 2 {
        return Err(Error::InvalidArgument(format!("task labels must be binary, found {} classes", y.classes())));
    }
    check_binary(dataset.s.values())?;
    let mut cells: [[Vec<usize>; 2]; 2] = Default::default();
    for (i, (&yi, &si)) in y.values().iter().zip(dataset.s.values()).enumerate() {
        cells[yi][si].push(i);
    }
    let smallest = cells.iter().flatten().map(Vec::len).min().unwrap_or(0);
    let size = class_size.unwrap_or(smallest);
    let mut rng = rng_from(seed);
    let mut picked = Vec::with_capacity(2 * size);
    for yv in 0..2 {
        let major = (split * size as f64).round() as usize;
        // Class 1 is skewed towards s = 1, class 0 towards s = 0.
        let want = if yv == 1 { [size - major, major] } else { [major, size - major] };
        for sv in 0..2 {
            let cell = &mut cells[yv][sv];
            if cell.len() < want[sv] {
                return Err(Error::InsufficientCell { y: yv, s: sv, available: cell.len(), needed: want[sv] });
            }
            cell.shuffle(&mut rng);
            picked.extend_from_slice(&cell[..want[sv]]);
        }
    }
    picked.sort_unstable();
    Ok(dataset.select(&picked))
}

/// Trade-off curve with its random-chance origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffTable {
    pub chance_s: f64,
    pub chance_y: f64,
    pub records: Vec<TradeoffRecord>,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() { "NaN".into() } else { format!("{v}") }
}

impl TradeoffTable {
    /// CSV text: the header, an `origin` row at (chance_S, chance_Y), then
    /// one row per record.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRADEOFF_HEADER);
        out.push('\n');
        let _ = writeln!(
            out,
            "origin,{},{},{},{},{},0,0",
            fmt_value(self.chance_y),
            fmt_value(self.chance_s),
            fmt_value(self.chance_s),
            fmt_value(self.chance_y),
            fmt_value(self.chance_s)
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.step,
                fmt_value(r.y_acc_test),
                fmt_value(r.s_acc_test_max),
                fmt_value(r.s_acc_train_max),
                fmt_value(r.chance_y),
                fmt_value(r.chance_s),
                fmt_value(r.hsic_s),
                r.dim
            );
        }
        out
    }

    /// Y accuracy where the S-accuracy curve first falls to `s_level`,
    /// interpolated linearly between neighbouring records.
    pub fn utility_at_leakage(&self, s_level: f64) -> Option<f64> {
        let first = self.records.first()?;
        if first.s_acc_test_max <= s_level {
            return Some(first.y_acc_test);
        }
        for pair in self.records.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b.s_acc_test_max <= s_level {
                let span = a.s_acc_test_max - b.s_acc_test_max;
                let t = if span > 0.0 { (a.s_acc_test_max - s_level) / span } else { 1.0 };
                return Some(a.y_acc_test + t * (b.y_acc_test - a.y_acc_test));
            }
        }
        None
    }
}

/// Orders-checks the records and attaches the chance origin.
pub fn assemble_tradeoff(records: &[TradeoffRecord]) -> Result<TradeoffTable> {
    let first = records.first().ok_or(Error::EmptyLabels)?;
    for pair in records.windows(2) {
        if pair[1].step <= pair[0].step {
            return Err(Error::OutOfOrder(pair[1].step));
        }
    }
    Ok(TradeoffTable { chance_s: first.chance_s, chance_y: first.chance_y, records: records.to_vec() })
}

/// Per-step spread of several runs of the same configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: usize,
    pub runs: usize,
    pub y_acc_test: [f64; 3],
    pub s_acc_test_max: [f64; 3],
    pub s_acc_train_max: [f64; 3],
}

pub const AGGREGATE_HEADER: &str = "step,runs,y_acc_test_median,y_acc_test_min,y_acc_test_max,\
s_acc_test_max_median,s_acc_test_max_min,s_acc_test_max_max,\
s_acc_train_max_median,s_acc_train_max_min,s_acc_train_max_max";

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 { values[mid] } else { 0.5 * (values[mid - 1] + values[mid]) }
}

fn spread(mut values: Vec<f64>) -> [f64; 3] {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [median(&mut values), lo, hi]
}

/// Median/min/max per step across tables; a step counts the runs that
/// reached it.
pub fn aggregate_tradeoff(tables: &[TradeoffTable]) -> Vec<AggregateRow> {
    let mut steps: Vec<usize> = tables.iter().flat_map(|t| t.records.iter().map(|r| r.step)).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let rows: Vec<&TradeoffRecord> =
                tables.iter().filter_map(|t| t.records.iter().find(|r| r.step == step)).collect();
            AggregateRow {
                step,
                runs: rows.len(),
                y_acc_test: spread(rows.iter().map(|r| r.y_acc_test).collect()),
                s_acc_test_max: spread(rows.iter().map(|r| r.s_acc_test_max).collect()),
                s_acc_train_max: spread(rows.iter().map(|r| r.s_acc_train_max).collect()),
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let cols: Vec<String> = [r.y_acc_test, r.s_acc_test_max, r.s_acc_train_max]
            .iter()
            .flat_map(|a| a.iter().map(|&v| fmt_value(v)))
            .collect();
        let _ = writeln!(out, "{},{},{}", r.step, r.runs, cols.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize, y: f64, s: f64) -> TradeoffRecord {
        TradeoffRecord {
            step,
            y_acc_test: y,
            s_acc_test_max: s,
            s_acc_train_max: s,
            chance_y: 0.5,
            chance_s: 0.5,
            hsic_s: 0.0,
            dim: 4,
        }
    }

    #[test]
    fn dp_examples() {
        assert_eq!(demographic_parity(&[0, 0, 1, 1], &[0, 0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(demographic_parity(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap(), 0.0);
        assert!(matches!(demographic_parity(&[0, 1], &[0, 0], 2).unwrap_err(), Error::EmptyGroup(1)));
        assert!(matches!(demographic_parity(&[0, 1], &[0, 2], 2).unwrap_err(), Error::NonBinaryAttribute(3)));
    }

    #[test]
    fn gap_single_class() {
        // 10 samples per group of class 0; 9 vs 4 correct predictions.
        let y = vec![0; 20];
        let s: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let preds: Vec<usize> = (0..20).map(|i| if i < 9 || (10..14).contains(&i) { 0 } else { 1 }).collect();
        let g = gap_rms(&preds, &y, &s, 2).unwrap();
        assert!((g.value - 0.5).abs() < 1e-15);
        assert_eq!(g.skipped_classes, 1);
    }

    #[test]
    fn table_origin_and_order() {
        let t = assemble_tradeoff(&[record(1, 0.9, 0.7)]).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], TRADEOFF_HEADER);
        assert!(lines[1].starts_with("origin,0.5,0.5"));
        assert!(matches!(
            assemble_tradeoff(&[record(2, 0.9, 0.7), record(1, 0.8, 0.6)]).unwrap_err(),
            Error::OutOfOrder(1)
        ));
    }

    #[test]
    fn interpolated_checkpoint() {
        let t = assemble_tradeoff(&[record(0, 0.9, 0.9), record(1, 0.8, 0.7), record(2, 0.6, 0.5)]).unwrap();
        assert!((t.utility_at_leakage(0.6).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(t.utility_at_leakage(0.4), None);
    }
}
