//! Rendering of stream runs as JSON or CSV, with a per-strategy summary.

use serde::{Deserialize, Serialize};

use super::stream::{PerStrategy, RoundReport, Strategy, StreamRun};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: usize,
    pub mean_seconds: PerStrategy<f64>,
    pub median_seconds: PerStrategy<f64>,
    /// `mean(Single) / mean(Batch)`, when both ran.
    pub fold: Option<f64>,
    pub max_deviation: f64,
    pub predictions_agree: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn summarize(rounds: &[RoundReport]) -> Summary {
    let mut mean_seconds = PerStrategy::default();
    let mut median_seconds = PerStrategy::default();
    for s in [Strategy::Batch, Strategy::Single, Strategy::Refit] {
        let times: Vec<f64> = rounds.iter().filter_map(|r| r.seconds.get(s)).collect();
        if !times.is_empty() {
            mean_seconds.set(s, times.iter().sum::<f64>() / times.len() as f64);
            median_seconds.set(s, median(times));
        }
    }
    let fold = match (mean_seconds.single, mean_seconds.batch) {
        (Some(single), Some(batch)) if batch > 0.0 => Some(single / batch),
        _ => None,
    };
    Summary {
        rounds: rounds.len(),
        mean_seconds,
        median_seconds,
        fold,
        max_deviation: rounds.iter().map(|r| r.max_deviation).fold(0.0, f64::max),
        predictions_agree: rounds.iter().all(|r| r.predictions_agree),
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    run: &'a StreamRun,
    summary: Summary,
}

pub fn render(run: &StreamRun, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&JsonReport {
            run,
            summary: summarize(&run.rounds),
        })?),
        ReportFormat::Csv => render_csv(run),
    }
}

const STRATEGIES: [(Strategy, &str); 3] = [
    (Strategy::Batch, "batch"),
    (Strategy::Single, "single"),
    (Strategy::Refit, "refit"),
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Header, one row per round, then a `mean` trailer row carrying the mean
/// per-round seconds and the Batch-vs-Single fold.
fn render_csv(run: &StreamRun) -> Result<String> {
    let per = |field: &str| STRATEGIES.map(|(_, name)| format!("{name}_{field}"));
    let mut header = vec!["round".to_string(), "n".into()];
    for field in ["seconds", "cumulative_seconds", "log10_cumulative_seconds", "deviation", "accuracy"] {
        header.extend(per(field));
    }
    header.extend(["max_deviation", "predictions_agree", "fold"].map(String::from));

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in &run.rounds {
        let mut row = vec![r.round.to_string(), r.n.to_string()];
        for values in [
            &r.seconds,
            &r.cumulative_seconds,
            &r.log10_cumulative_seconds,
            &r.deviation,
            &r.accuracy,
        ] {
            row.extend(STRATEGIES.map(|(s, _)| opt(values.get(s))));
        }
        row.extend([r.max_deviation.to_string(), r.predictions_agree.to_string(), String::new()]);
        w.write_record(&row).map_err(csv_err)?;
    }
    let summary = summarize(&run.rounds);
    let mut trailer = vec!["mean".to_string(), String::new()];
    trailer.extend(STRATEGIES.map(|(s, _)| opt(summary.mean_seconds.get(s))));
    trailer.extend(std::iter::repeat_n(String::new(), 12));
    trailer.extend([
        summary.max_deviation.to_string(),
        summary.predictions_agree.to_string(),
        opt(summary.fold),
    ]);
    w.write_record(&trailer).map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::synthesize;
    use crate::harness::stream::{run_stream, ModelConfig, StreamPlan};
    use crate::KernelSpec;

    fn run(rounds: usize) -> StreamRun {
        let data = synthesize(60, 2, 1.0, 4).unwrap();
        let plan = StreamPlan {
            rounds,
            ..StreamPlan::default()
        };
        run_stream(&data, &plan, &ModelConfig::new(KernelSpec::polynomial(2).unwrap(), 0.5)).unwrap()
    }

    #[test]
    fn csv_has_header_rows_and_trailer() {
        let text = render(&run(3), ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3 + 2);
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[4].starts_with("mean,"));
    }

    #[test]
    fn fold_is_single_over_batch() {
        let r = run(3);
        let s = summarize(&r.rounds);
        let mean = |f: fn(&RoundReport) -> f64| r.rounds.iter().map(f).sum::<f64>() / 3.0;
        let single = mean(|x| x.seconds.single.unwrap());
        let batch = mean(|x| x.seconds.batch.unwrap());
        assert!((s.fold.unwrap() - single / batch).abs() <= 1e-12 * (single / batch));
    }

    #[test]
    fn json_has_rounds_and_summary() {
        let text = render(&run(2), ReportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["rounds"].as_array().unwrap().len(), 2);
        assert!(v["summary"]["fold"].is_number());
        assert!(v["initial_fit_seconds"].is_number());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
