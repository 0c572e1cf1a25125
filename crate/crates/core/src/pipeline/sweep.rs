use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::stages::{Pipeline, StageOutcome};
use super::write_json;
use crate::error::{Error, Result};
use crate::manipulate::Manipulation;
use crate::metrics::{EvalReport, REPORT_HEADER};
use crate::util::{sha256_file, write_atomic};

/// One condition of the sweep and its reports, one per criterion. A failed
/// cell keeps its error text in `status` and has no reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub manipulation: Option<Manipulation>,
    pub config_sha256: String,
    pub status: String,
    pub reports: Vec<EvalReport>,
}

impl SweepCell {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn file_name(&self) -> String {
        let tag = match &self.manipulation {
            None => "baseline".to_string(),
            Some(m) => m.to_string().replace([':', '@'], "_"),
        };
        format!("{:03}_{tag}.json", self.index)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    pub stage: StageOutcome,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| !c.ok()).count()
    }
}

impl Pipeline {
    /// Baseline plus every configured manipulation, each noise crossed with
    /// every SNR level.
    pub fn sweep_grid(&self) -> Result<Vec<Option<Manipulation>>> {
        let s = &self.config.sweep;
        let bank = self.noise_bank()?;
        let mut cells: Vec<Option<Manipulation>> = vec![None];
        cells.extend(s.resample_offsets.iter().map(|&o| Some(Manipulation::Resample { offset_hz: o })));
        cells.extend(s.speed_rates.iter().map(|&r| Some(Manipulation::Speed { rate: r })));
        cells.extend(s.pitch_steps.iter().map(|&n| Some(Manipulation::Pitch { n_steps: n })));
        for id in bank.ids() {
            cells.extend(
                s.snr_levels.iter().map(|&db| Some(Manipulation::AddNoise { noise_id: id.to_string(), snr_db: db })),
            );
        }
        Ok(cells)
    }

    /// Scores the frozen backbone and detectors under every grid cell.
    /// Finished cells are stored one file each and reused when the config
    /// hash still matches; a failing cell is recorded and the sweep goes on.
    pub fn sweep(&self) -> Result<SweepOutcome> {
        let (manifest, base) = self.manifest()?;
        let backbone = self.backbone()?;
        let thresholds = self.optional_thresholds()?;
        let models = self.models()?;
        let bank = self.noise_bank()?;
        let records = self.test_records(&manifest);
        let frozen = self.frozen_paths();
        let before = hashes(&frozen)?;
        let hash = self.config.hash();
        let cell_dir = self.paths.sweep().join("cells");

        let grid = self.sweep_grid()?;
        let mut cells = Vec::with_capacity(grid.len());
        for (index, manipulation) in grid.into_iter().enumerate() {
            let mut cell = SweepCell { index, manipulation, config_sha256: hash.clone(), status: "ok".into(), reports: vec![] };
            let path = cell_dir.join(cell.file_name());
            if let Some(done) = cached(&path, &cell) {
                log::debug!("sweep cell {index} reused");
                cells.push(done);
                continue;
            }
            let m = cell.manipulation.as_ref();
            let result = self
                .traces(&backbone, &base, &records, m.map(|m| (m, &bank)))
                .and_then(|t| self.reports_from_traces(&records, &t, thresholds.as_ref(), &models, m));
            match result {
                Ok(r) => cell.reports = r,
                Err(e) => {
                    log::warn!("sweep cell {index} failed: {e}");
                    cell.status = format!("error: {e}");
                }
            }
            log::info!("sweep cell {index}: {}", describe(&cell));
            write_json(&path, &cell)?;
            cells.push(cell);
        }

        let after = hashes(&frozen)?;
        if before != after {
            return Err(Error::format("a frozen model file changed during the sweep".to_string()));
        }
        let wide = self.paths.sweep().join("sweep.csv");
        let long = self.paths.sweep().join("sweep_long.csv");
        write_atomic(&wide, wide_csv(&cells, &self.config.dataset).as_bytes())?;
        write_atomic(&long, long_csv(&cells).as_bytes())?;

        let mut notes = serde_json::Map::new();
        notes.insert("cells".into(), json!(cells.len()));
        notes.insert("failed".into(), json!(cells.iter().filter(|c| !c.ok()).count()));
        notes.insert("test_clips".into(), json!(records.len()));
        notes.insert("frozen_sha256".into(), json!(before));
        let mut outputs = vec![wide, long];
        outputs.extend(cells.iter().map(|c| cell_dir.join(c.file_name())));
        let stage = self.audit("sweep", &frozen, &outputs, notes)?;
        Ok(SweepOutcome { cells, stage })
    }

    fn frozen_paths(&self) -> Vec<PathBuf> {
        let mut v = vec![self.paths.backbone()];
        if self.paths.thresholds().exists() {
            v.push(self.paths.thresholds());
        }
        v.extend(self.config.criteria.iter().map(|&c| self.paths.detector(c)));
        v
    }
}

fn cached(path: &std::path::Path, fresh: &SweepCell) -> Option<SweepCell> {
    let text = std::fs::read_to_string(path).ok()?;
    let cell: SweepCell = serde_json::from_str(&text).ok()?;
    (cell.ok() && cell.config_sha256 == fresh.config_sha256 && cell.manipulation == fresh.manipulation).then_some(cell)
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<String>> {
    paths.iter().map(|p| sha256_file(p)).collect()
}

fn describe(cell: &SweepCell) -> String {
    if !cell.ok() {
        return cell.status.clone();
    }
    cell.reports.iter().map(|r| format!("{} auc {:.4}", r.criterion, r.auc)).collect::<Vec<_>>().join(", ")
}

fn cell_label(cell: &SweepCell) -> (String, String) {
    cell.manipulation.as_ref().map(|m| m.label()).unwrap_or_else(|| ("none".into(), "-".into()))
}

/// One row per (cell, criterion); failed cells get one row of empty metrics.
fn wide_csv(cells: &[SweepCell], dataset: &str) -> String {
    let mut s = format!("{REPORT_HEADER},status\n");
    for c in cells {
        if c.ok() {
            for r in &c.reports {
                s.push_str(&format!("{},ok\n", r.csv_row()));
            }
        } else {
            let (name, mag) = cell_label(c);
            s.push_str(&format!("{dataset},,{name},{mag},,,,,,,,\"{}\"\n", c.status.replace('"', "'")));
        }
    }
    s
}

fn long_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("dataset,criterion,manipulation,magnitude,metric,value\n");
    for r in cells.iter().flat_map(|c| &c.reports) {
        for (metric, value) in r.metric_values() {
            s.push_str(&format!("{},{},{},{},{metric},{value:?}\n", r.dataset, r.criterion, r.manipulation, r.magnitude));
        }
    }
    s
}
