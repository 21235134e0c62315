//! Result tables: one block per variant with a row per (scheme, dropout),
//! separately for the train and test splits.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::{aggregate, CellSummary, Metrics, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportSplit {
    Train,
    Test,
}

impl ReportSplit {
    pub fn name(self) -> &'static str {
        match self {
            ReportSplit::Train => "train",
            ReportSplit::Test => "test",
        }
    }
}

/// Rendered report: aligned text tables and a tab-separated data file.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub tsv: String,
}

pub const TSV_HEADER: &str = "split\tvariant\tscheme\tdropout\truns\tbest_repeat\taccuracy\tfp_rate\tloss\taccuracy_mean\taccuracy_std\tfp_rate_mean\tfp_rate_std\tbest_fp";

fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Best-run metrics with accuracy mean, accuracy std, fp mean and fp std.
type RowMetrics = (Metrics, f64, f64, f64, f64);

fn split_metrics(cell: &CellSummary, split: ReportSplit) -> Option<RowMetrics> {
    match split {
        ReportSplit::Train => Some((
            cell.best.train,
            cell.train_accuracy.mean,
            cell.train_accuracy.std,
            cell.train_fp_rate.mean,
            cell.train_fp_rate.std,
        )),
        ReportSplit::Test => {
            let (acc, fp) = (cell.test_accuracy?, cell.test_fp_rate?);
            Some((cell.best.test?, acc.mean, acc.std, fp.mean, fp.std))
        }
    }
}

/// Aggregates `records` per cell (best validation fp run, plus mean ± std
/// over repeats) and renders train and test tables. The lowest fp rate of
/// each variant block is flagged with `*`. Cells without test metrics are
/// left out of the test table.
pub fn render_report(records: &[RunRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no run records to report".into()));
    }
    let cells = aggregate(records)?;
    let mut text = String::new();
    let mut tsv = String::from(TSV_HEADER);
    tsv.push('\n');

    for split in [ReportSplit::Train, ReportSplit::Test] {
        let rows: Vec<(&CellSummary, RowMetrics)> =
            cells.iter().filter_map(|c| split_metrics(c, split).map(|m| (c, m))).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(text, "== {} set ==", split.name());
        let mut variants: Vec<_> = rows.iter().map(|(c, _)| c.variant).collect();
        variants.dedup();
        for variant in variants {
            let block: Vec<_> = rows.iter().filter(|(c, _)| c.variant == variant).collect();
            let best_fp = block.iter().map(|(_, m)| m.0.fp_rate).fold(f64::INFINITY, f64::min);
            let _ = writeln!(text, "\nmodel: {variant}");
            let _ = writeln!(
                text,
                "  {:<10} {:>7} {:>9} {:>9} {:>10} {:>17} {:>17} {:>4}",
                "wgted loss", "dropout", "accuracy", "fp rate", "loss", "acc mean±std", "fp mean±std", "runs"
            );
            for (cell, (m, acc_mean, acc_std, fp_mean, fp_std)) in block {
                let flag = m.fp_rate == best_fp;
                let _ = writeln!(
                    text,
                    "{} {:<10} {:>7} {:>9} {:>9} {:>10.2} {:>17} {:>17} {:>4}",
                    if flag { "*" } else { " " },
                    cell.scheme.name(),
                    cell.dropout,
                    percent(m.accuracy),
                    percent(m.fp_rate),
                    m.loss_sum,
                    format!("{}±{:.2}", percent(*acc_mean), 100.0 * acc_std),
                    format!("{}±{:.2}", percent(*fp_mean), 100.0 * fp_std),
                    cell.runs
                );
                let _ = writeln!(
                    tsv,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                    split.name(),
                    cell.variant,
                    cell.scheme.name(),
                    cell.dropout,
                    cell.runs,
                    cell.best.repeat,
                    m.accuracy,
                    m.fp_rate,
                    m.loss_sum,
                    acc_mean,
                    acc_std,
                    fp_mean,
                    fp_std,
                    u8::from(flag)
                );
            }
        }
        text.push('\n');
    }
    Ok(Report { text, tsv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Variant;
    use crate::train::{Grid, LossScheme, TrainConfig};

    fn metrics(fp_rate: f64, accuracy: f64) -> Metrics {
        Metrics {
            accuracy,
            fp_rate,
            loss_sum: 12.5,
            loss_mean: 0.125,
            tp: 80,
            fp: 3,
            tn: 7,
            fn_: 10,
        }
    }

    fn record(config: TrainConfig, repeat: usize, fp: f64) -> RunRecord {
        RunRecord {
            config,
            repeat,
            history: Vec::new(),
            best_epoch: 1,
            stopped_epoch: 51,
            train: metrics(fp / 2.0, 0.9),
            validation: metrics(fp, 0.85),
            test: Some(metrics(fp, 0.8)),
            wall_time_ms: 0,
        }
    }

    fn grid_records(grid: &Grid) -> Vec<RunRecord> {
        grid.configs(&TrainConfig::default())
            .into_iter()
            .enumerate()
            .map(|(i, (r, c))| record(c, r, 0.1 + (i % 7) as f64 / 100.0))
            .collect()
    }

    fn data_rows(tsv: &str, split: &str) -> usize {
        tsv.lines().skip(1).filter(|l| l.starts_with(&format!("{split}\t"))).count()
    }

    #[test]
    fn one_cell_one_row_per_table() {
        let r = render_report(&[record(TrainConfig::default(), 0, 0.2)]).unwrap();
        assert_eq!(data_rows(&r.tsv, "train"), 1);
        assert_eq!(data_rows(&r.tsv, "test"), 1);
        assert!(r.text.contains("20.00%"), "{}", r.text);
        assert!(r.text.contains("== train set ==") && r.text.contains("== test set =="));
    }

    #[test]
    fn full_grid_has_24_rows_per_table() {
        let records = grid_records(&Grid::full(2));
        let r = render_report(&records).unwrap();
        assert_eq!(data_rows(&r.tsv, "train"), 24);
        assert_eq!(data_rows(&r.tsv, "test"), 24);
        // every record lands in exactly one row group
        let runs: usize = r.tsv.lines().skip(1).filter(|l| l.starts_with("test\t")).map(|l| l.split('\t').nth(4).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(runs, records.len());
    }

    #[test]
    fn flags_lowest_fp_per_variant() {
        let base = TrainConfig::default();
        let records = vec![
            record(TrainConfig { dropout: 0.1, ..base.clone() }, 0, 0.30),
            record(TrainConfig { dropout: 0.3, ..base.clone() }, 0, 0.10),
            record(TrainConfig { variant: Variant::Baseline, scheme: LossScheme::SqrtRoot, ..base }, 0, 0.50),
        ];
        let r = render_report(&records).unwrap();
        let flagged: Vec<&str> = r.tsv.lines().filter(|l| l.starts_with("test\t") && l.ends_with("\t1")).collect();
        assert_eq!(flagged.len(), 2);
        assert!(flagged.iter().any(|l| l.contains("\tproposed\tbasic\t0.3\t")));
        assert!(flagged.iter().any(|l| l.contains("\tbaseline\tsqrt\t")));
    }

    #[test]
    fn percentages_use_two_decimals() {
        assert_eq!(percent(0.9162), "91.62%");
        assert_eq!(percent(1.0 / 3.0), "33.33%");
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(render_report(&[]), Err(Error::EmptyInput(_))));
    }
}
