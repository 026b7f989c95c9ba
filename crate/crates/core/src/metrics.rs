//! Per-epoch metrics, CSV time series, raster snapshots and replicate statistics.
//!
//! File formats:
//!
//! * `timeseries.csv`: header `epoch,coop_fraction,defect_fraction,mean_payoff,global_g`,
//!   reals with six decimals, `\n` line endings.
//! * `snap_{epoch}.pgm`: binary PGM (`P5`), one byte per cell, 255 for a
//!   cooperator and 0 for a defector, row 0 first.
//! * `heat_{epoch}.ppm`: binary PPM (`P6`) of the payoff field, min-max
//!   normalized per frame and colored with a five-anchor viridis ramp.
//! * `summary.csv`: header `param_value,n,mean,std,ci_low,ci_high`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{global_coop_rate, PayoffField, StrategyGrid};

pub const TIMESERIES_HEADER: &str = "epoch,coop_fraction,defect_fraction,mean_payoff,global_g";
pub const SUMMARY_HEADER: &str = "param_value,n,mean,std,ci_low,ci_high";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub coop_fraction: f64,
    pub defect_fraction: f64,
    pub mean_payoff: f64,
    pub global_g: f64,
}

pub fn record_epoch(grid: &StrategyGrid, field: &PayoffField, epoch: usize) -> MetricsRow {
    let coop = global_coop_rate(grid);
    let defect = (grid.len() - grid.cooperator_count()) as f64 / grid.len() as f64;
    MetricsRow {
        epoch,
        coop_fraction: coop,
        defect_fraction: defect,
        mean_payoff: field.mean(),
        global_g: coop,
    }
}

pub fn timeseries_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(48 * (rows.len() + 1));
    out.push_str(TIMESERIES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.coop_fraction, r.defect_fraction, r.mean_payoff, r.global_g
        );
    }
    out
}

pub fn write_timeseries_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_file(path, timeseries_csv(rows).as_bytes())
}

pub fn parse_timeseries_csv(text: &str) -> std::result::Result<Vec<MetricsRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(TIMESERIES_HEADER) => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("line {}: expected 5 fields", i + 2));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            Ok(MetricsRow {
                epoch: f[0].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
                coop_fraction: real(f[1])?,
                defect_fraction: real(f[2])?,
                mean_payoff: real(f[3])?,
                global_g: real(f[4])?,
            })
        })
        .collect()
}

pub fn read_timeseries_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_timeseries_csv(&text).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn snapshot_bytes(grid: &StrategyGrid) -> Vec<u8> {
    let l = grid.side();
    let mut out = format!("P5\n{l} {l}\n255\n").into_bytes();
    out.extend(grid.cells().iter().map(|s| if s.is_cooperator() { 255u8 } else { 0 }));
    out
}

pub fn write_snapshot(grid: &StrategyGrid, path: &Path) -> Result<()> {
    write_file(path, &snapshot_bytes(grid))
}

const HEAT_ANCHORS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Color at normalized position `t` in `[0, 1]`: purple at 0, yellow at 1.
/// Channels are interpolated linearly between anchors at 0, 0.25, 0.5,
/// 0.75 and 1, then rounded half down.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 4.0;
    let seg = (t.floor() as usize).min(3);
    let frac = t - seg as f64;
    let (a, b) = (HEAT_ANCHORS[seg], HEAT_ANCHORS[seg + 1]);
    std::array::from_fn(|c| {
        let v = a[c] + (b[c] - a[c]) * frac;
        (v - 0.5).ceil().clamp(0.0, 255.0) as u8
    })
}

pub fn heatmap_bytes(field: &PayoffField) -> Vec<u8> {
    let l = field.side();
    let values = field.values();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    let mut out = format!("P6\n{l} {l}\n255\n").into_bytes();
    for &v in values {
        let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
        out.extend_from_slice(&heat_color(t));
    }
    out
}

pub fn write_heatmap(field: &PayoffField, path: &Path) -> Result<()> {
    write_file(path, &heatmap_bytes(field))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Outcome of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub final_coop_fraction: f64,
    pub epochs_run: usize,
}

/// Replicate statistics with a normal-approximation 95% interval clipped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateStats {
    pub n: usize,
    pub mean: f64,
    pub sample_std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn aggregate_runs(summaries: &[RunSummary]) -> Result<AggregateStats> {
    let n = summaries.len();
    if n < 2 {
        return Err(Error::InsufficientReplicates(n));
    }
    let xs = summaries.iter().map(|s| s.final_coop_fraction);
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sample_std = var.sqrt();
    let half = 1.96 * sample_std / (n as f64).sqrt();
    Ok(AggregateStats {
        n,
        mean,
        sample_std,
        ci_low: (mean - half).clamp(0.0, 1.0),
        ci_high: (mean + half).clamp(0.0, 1.0),
    })
}

/// One line of a sweep summary. `stats` is `None` when fewer than two
/// replicates of the value succeeded; the row is still written with `NaN`s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub param_value: f64,
    pub n: usize,
    pub mean: f64,
    pub stats: Option<AggregateStats>,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let (std, lo, hi) = match r.stats {
            Some(s) => (s.sample_std, s.ci_low, s.ci_high),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.param_value, r.n, r.mean, std, lo, hi
        );
    }
    out
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    write_file(path, summary_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lattice::{init_lattice, payoff_field, InitMode, Strategy};

    fn summaries(values: &[f64]) -> Vec<RunSummary> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| RunSummary {
                seed: i as u64,
                final_coop_fraction: v,
                epochs_run: 10,
            })
            .collect()
    }

    #[test]
    fn record_examples() {
        let g = StrategyGrid::filled(6, Strategy::Cooperate);
        let row = record_epoch(&g, &payoff_field(&g, 4.0), 3);
        assert_eq!((row.coop_fraction, row.defect_fraction), (1.0, 0.0));
        assert_relative_eq!(row.mean_payoff, 15.0, epsilon = 1e-12);

        let g = StrategyGrid::filled(6, Strategy::Defect);
        let row = record_epoch(&g, &payoff_field(&g, 4.0), 0);
        assert_eq!(
            (row.coop_fraction, row.defect_fraction, row.mean_payoff),
            (0.0, 1.0, 0.0)
        );

        let g = init_lattice(6, InitMode::HalfHalf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let row = record_epoch(&g, &payoff_field(&g, 4.0), 0);
        assert_eq!(row.coop_fraction, 0.5);
        assert_eq!(row.global_g, row.coop_fraction);
    }

    #[test]
    fn csv_format() {
        assert_eq!(timeseries_csv(&[]), format!("{TIMESERIES_HEADER}\n"));
        let row = MetricsRow {
            epoch: 0,
            coop_fraction: 0.5,
            defect_fraction: 0.5,
            mean_payoff: 1.25,
            global_g: 0.5,
        };
        let text = timeseries_csv(&[row]);
        assert_eq!(text.lines().nth(1), Some("0,0.500000,0.500000,1.250000,0.500000"));
    }

    #[test]
    fn csv_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/timeseries.csv");
        let rows = vec![MetricsRow {
            epoch: 7,
            coop_fraction: 0.25,
            defect_fraction: 0.75,
            mean_payoff: -0.125,
            global_g: 0.25,
        }];
        write_timeseries_csv(&rows, &path).unwrap();
        assert_eq!(read_timeseries_csv(&path).unwrap(), rows);
    }

    #[test]
    fn csv_write_reports_path_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = write_timeseries_csv(&[], &blocker.join("timeseries.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("file"));
    }

    #[test]
    fn snapshot_layout() {
        let g = StrategyGrid::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let bytes = snapshot_bytes(&g);
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 0, 255]);

        let g = StrategyGrid::filled(3, Strategy::Defect);
        assert!(snapshot_bytes(&g)[11..].iter().all(|&b| b == 0));

        let g = init_lattice(4, InitMode::HalfHalf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let bytes = snapshot_bytes(&g);
        let payload = &bytes[bytes.len() - 16..];
        assert!(payload[..8].iter().all(|&b| b == 0));
        assert!(payload[8..].iter().all(|&b| b == 255));
    }

    #[test]
    fn heat_colors() {
        assert_eq!(heat_color(0.0), [68, 1, 84]);
        assert_eq!(heat_color(1.0), [253, 231, 37]);
        assert_eq!(heat_color(0.5), [33, 145, 140]);
        assert_eq!(heat_color(0.125), [63, 41, 111]);
    }

    #[test]
    fn heatmap_extremes_and_constant_field() {
        let g = StrategyGrid::filled(3, Strategy::Cooperate);
        let bytes = heatmap_bytes(&payoff_field(&g, 4.0));
        assert_eq!(&bytes[..11], b"P6\n3 3\n255\n");
        assert!(bytes[11..].chunks(3).all(|px| px == [33, 145, 140]));

        let mut g = StrategyGrid::filled(5, Strategy::Defect);
        g.set((2, 2).into(), Strategy::Cooperate);
        let field = payoff_field(&g, 4.0);
        let bytes = heatmap_bytes(&field);
        let px = |i: usize| &bytes[11 + 3 * i..14 + 3 * i];
        let (imin, imax) = extremes(field.values());
        assert_eq!(px(imin), [68, 1, 84]);
        assert_eq!(px(imax), [253, 231, 37]);
    }

    fn extremes(v: &[f64]) -> (usize, usize) {
        let imin = (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        let imax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        (imin, imax)
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate_runs(&summaries(&[1.0; 5])).unwrap();
        assert_eq!((s.mean, s.sample_std, s.ci_low, s.ci_high), (1.0, 0.0, 1.0, 1.0));

        let s = aggregate_runs(&summaries(&[0.0, 1.0])).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!((s.ci_low, s.ci_high), (0.0, 1.0));

        assert!(matches!(
            aggregate_runs(&summaries(&[0.5])),
            Err(Error::InsufficientReplicates(1))
        ));
    }

    #[test]
    fn aggregate_ci_width_for_tight_replicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let xs: Vec<f64> = (0..50)
            .map(|_| 0.41 + rand::Rng::random_range(&mut rng, -0.02..0.02))
            .collect();
        let s = aggregate_runs(&summaries(&xs)).unwrap();
        // Independent evaluation of 2 * 1.96 * s / sqrt(n).
        let mean = xs.iter().sum::<f64>() / 50.0;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
        assert_relative_eq!(s.ci_high - s.ci_low, 2.0 * 1.96 * sd / 50f64.sqrt(), epsilon = 1e-12);
        assert!(s.ci_high - s.ci_low < 0.05);
    }

    #[test]
    fn summary_format() {
        let stats = aggregate_runs(&summaries(&[0.25, 0.75])).unwrap();
        let text = summary_csv(&[
            SummaryRow {
                param_value: 4.6,
                n: 2,
                mean: stats.mean,
                stats: Some(stats),
            },
            SummaryRow {
                param_value: 0.04,
                n: 1,
                mean: 0.3,
                stats: None,
            },
        ]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert!(
            lines[1].starts_with("4.6,2,0.500000,0.353553,0.010000,0.990000"),
            "{}",
            lines[1]
        );
        assert_eq!(lines[2], "0.04,1,0.300000,NaN,NaN,NaN");
    }

    proptest! {
        #[test]
        fn csv_round_trip_at_six_decimals(
            raw in proptest::collection::vec((0usize..100_000, 0.0f64..=1.0, -100.0f64..100.0), 0..20)
        ) {
            let rows: Vec<MetricsRow> = raw
                .iter()
                .map(|&(epoch, c, m)| MetricsRow {
                    epoch,
                    coop_fraction: c,
                    defect_fraction: 1.0 - c,
                    mean_payoff: m,
                    global_g: c,
                })
                .collect();
            let parsed = parse_timeseries_csv(&timeseries_csv(&rows)).unwrap();
            prop_assert_eq!(parsed.len(), rows.len());
            for (p, r) in parsed.iter().zip(&rows) {
                prop_assert_eq!(p.epoch, r.epoch);
                prop_assert!((p.coop_fraction - r.coop_fraction).abs() <= 5e-7);
                prop_assert!((p.mean_payoff - r.mean_payoff).abs() <= 5e-7 + 1e-12 * r.mean_payoff.abs());
            }
            // Re-writing the parsed rows is a fixed point.
            prop_assert_eq!(timeseries_csv(&parsed), timeseries_csv(&rows));
        }

        #[test]
        fn ci_contains_mean_and_shrinks_with_n(xs in proptest::collection::vec(0.0f64..=1.0, 2..40)) {
            let s = aggregate_runs(&summaries(&xs)).unwrap();
            prop_assert!(s.ci_low <= s.mean + 1e-15 && s.mean <= s.ci_high + 1e-15);
            let doubled: Vec<f64> = xs.iter().chain(xs.iter()).copied().collect();
            let d = aggregate_runs(&summaries(&doubled)).unwrap();
            prop_assert!(d.ci_high - d.ci_low <= s.ci_high - s.ci_low + 1e-12);
        }
    }
}
