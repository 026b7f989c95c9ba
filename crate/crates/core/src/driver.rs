//! The epoch loop shared by every dynamics, and the sinks it reports to.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::baselines::{fermi_epoch, FermiConfig, QLearning};
use crate::error::{Error, Result};
use crate::grpo::{EpochReport, GrpoTrainer};
use crate::lattice::{payoff_field, PayoffField, StrategyGrid};
use crate::metrics::{record_epoch, write_heatmap, write_snapshot, MetricsRow, TIMESERIES_HEADER};

/// Something that maps the committed grid at `epoch` to the next one.
pub trait Dynamics {
    fn step(&mut self, grid: &StrategyGrid, epoch: usize) -> Result<(StrategyGrid, Option<EpochReport>)>;
}

impl Dynamics for GrpoTrainer {
    fn step(&mut self, grid: &StrategyGrid, epoch: usize) -> Result<(StrategyGrid, Option<EpochReport>)> {
        let (next, report) = self.train_epoch(grid, epoch)?;
        Ok((next, Some(report)))
    }
}

impl Dynamics for QLearning {
    fn step(&mut self, grid: &StrategyGrid, epoch: usize) -> Result<(StrategyGrid, Option<EpochReport>)> {
        Ok((self.q_epoch(grid, epoch)?, None))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FermiDynamics {
    pub r: f64,
    pub config: FermiConfig,
    pub seed: u64,
}

impl Dynamics for FermiDynamics {
    fn step(&mut self, grid: &StrategyGrid, epoch: usize) -> Result<(StrategyGrid, Option<EpochReport>)> {
        Ok((fermi_epoch(grid, self.r, &self.config, self.seed, epoch)?, None))
    }
}

/// Receives metrics as a run progresses.
pub trait Recorder {
    fn row(&mut self, row: &MetricsRow, report: Option<&EpochReport>) -> Result<()>;
    fn snapshot(&mut self, epoch: usize, grid: &StrategyGrid, field: &PayoffField) -> Result<()>;
    /// Flushes buffered output. Called on success and before an error is returned.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullRecorder;

impl Recorder for NullRecorder {
    fn row(&mut self, _: &MetricsRow, _: Option<&EpochReport>) -> Result<()> {
        Ok(())
    }

    fn snapshot(&mut self, _: usize, _: &StrategyGrid, _: &PayoffField) -> Result<()> {
        Ok(())
    }
}

pub const TRAINING_HEADER: &str = "epoch,coop_fraction,mean_loss,mean_kl,mean_adv_std,lr";

/// Writes `timeseries.csv`, `training.csv` (learning runs only) and the
/// snapshot and heatmap frames into one run directory.
#[derive(Debug)]
pub struct RunDirRecorder {
    dir: PathBuf,
    timeseries: BufWriter<File>,
    training: Option<BufWriter<File>>,
}

impl RunDirRecorder {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("timeseries.csv");
        let mut timeseries = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(timeseries, "{TIMESERIES_HEADER}").map_err(|e| Error::io(&path, e))?;
        // A stale file from an earlier run with another algorithm would
        // otherwise survive next to the new outputs.
        let training = dir.join("training.csv");
        if training.exists() {
            fs::remove_file(&training).map_err(|e| Error::io(&training, e))?;
        }
        Ok(RunDirRecorder {
            dir: dir.to_path_buf(),
            timeseries,
            training: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Recorder for RunDirRecorder {
    fn row(&mut self, r: &MetricsRow, report: Option<&EpochReport>) -> Result<()> {
        let path = self.dir.join("timeseries.csv");
        writeln!(
            self.timeseries,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.coop_fraction, r.defect_fraction, r.mean_payoff, r.global_g
        )
        .map_err(|e| Error::io(&path, e))?;
        if let Some(rep) = report {
            let path = self.dir.join("training.csv");
            if self.training.is_none() {
                let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
                writeln!(w, "{TRAINING_HEADER}").map_err(|e| Error::io(&path, e))?;
                self.training = Some(w);
            }
            let w = self.training.as_mut().expect("opened above");
            writeln!(
                w,
                "{},{:.6},{:.9},{:.9},{:.6},{:e}",
                rep.epoch + 1,
                rep.coop_fraction,
                rep.mean_loss,
                rep.mean_kl,
                rep.mean_adv_std,
                rep.lr
            )
            .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn snapshot(&mut self, epoch: usize, grid: &StrategyGrid, field: &PayoffField) -> Result<()> {
        write_snapshot(grid, &self.dir.join(format!("snap_{epoch}.pgm")))?;
        write_heatmap(field, &self.dir.join(format!("heat_{epoch}.ppm")))
    }

    fn finish(&mut self) -> Result<()> {
        let path = self.dir.join("timeseries.csv");
        self.timeseries.flush().map_err(|e| Error::io(&path, e))?;
        if let Some(w) = self.training.as_mut() {
            let path = self.dir.join("training.csv");
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Rows for `t = 0..=T` (row `t` describes the grid after `t` epochs),
/// the per-epoch learning reports, and the final grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRow>,
    pub reports: Vec<EpochReport>,
    pub final_grid: StrategyGrid,
}

impl MetricsSeries {
    pub fn final_coop_fraction(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.coop_fraction)
    }

    pub fn coop_at(&self, epoch: usize) -> Option<f64> {
        self.rows.get(epoch).map(|r| r.coop_fraction)
    }
}

/// Runs `epochs` steps from `initial`, recording the grid at `t = 0` and
/// after each step. Snapshots are taken at `t` in `snapshot_epochs`.
pub fn simulate(
    dynamics: &mut dyn Dynamics,
    initial: StrategyGrid,
    epochs: usize,
    r: f64,
    snapshot_epochs: &[usize],
    recorder: &mut dyn Recorder,
) -> Result<MetricsSeries> {
    let result = drive(dynamics, initial, epochs, r, snapshot_epochs, recorder);
    let flushed = recorder.finish();
    let series = result?;
    flushed?;
    Ok(series)
}

fn drive(
    dynamics: &mut dyn Dynamics,
    initial: StrategyGrid,
    epochs: usize,
    r: f64,
    snapshot_epochs: &[usize],
    recorder: &mut dyn Recorder,
) -> Result<MetricsSeries> {
    let mut rows = Vec::with_capacity(epochs + 1);
    let mut reports = Vec::new();
    let mut grid = initial;
    let mut observe = |t: usize, grid: &StrategyGrid, report: Option<&EpochReport>| -> Result<MetricsRow> {
        let field = payoff_field(grid, r);
        let row = record_epoch(grid, &field, t);
        recorder.row(&row, report)?;
        if snapshot_epochs.contains(&t) {
            recorder.snapshot(t, grid, &field)?;
        }
        Ok(row)
    };
    rows.push(observe(0, &grid, None)?);
    for epoch in 0..epochs {
        let (next, report) = dynamics.step(&grid, epoch)?;
        rows.push(observe(epoch + 1, &next, report.as_ref())?);
        reports.extend(report);
        grid = next;
    }
    Ok(MetricsSeries {
        rows,
        reports,
        final_grid: grid,
    })
}
