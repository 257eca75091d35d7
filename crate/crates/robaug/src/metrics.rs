//! Segmentation scoring (mask GIoU) and behavior-score
//! normalization/aggregation for real-robot evaluation tables.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{check_dims, BinaryMask};

/// Plain intersection-over-union on mask pixel counts.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let i = pred.intersection(gt)?.count_set();
    let u = pred.count_set() + gt.count_set() - i;
    if u == 0 {
        return Err(Error::validation("iou undefined: both masks empty"));
    }
    Ok(i as f64 / u as f64)
}

/// Generalized IoU on masks: IoU minus the fraction of the joint
/// enclosing box C not covered by the union. Areas are pixel counts;
/// C is the tightest box around both supports. Range (-1, 1]. With
/// filled rectangles this degenerates to the standard box GIoU.
pub fn giou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let i = pred.intersection(gt)?.count_set();
    let u = pred.count_set() + gt.count_set() - i;
    let c = match (pred.bbox(), gt.bbox()) {
        (Some(a), Some(b)) => a.join(&b).area(),
        (Some(a), None) => a.area(),
        (None, Some(b)) => b.area(),
        (None, None) => {
            return Err(Error::validation("giou undefined: both masks empty"));
        }
    };
    Ok(i as f64 / u as f64 - (c - u) as f64 / c as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GIoUItem {
    pub id: String,
    pub giou: Option<f64>,
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GIoUReport {
    pub per_item: Vec<GIoUItem>,
    /// Arithmetic mean over evaluated items; absent when none evaluated.
    pub mean: Option<f64>,
    pub mean_iou: Option<f64>,
    pub evaluated: usize,
    pub failed: usize,
}

/// Score predictions against ground truths pairwise. An empty
/// prediction cannot be scored and becomes a per-item failure rather
/// than aborting the run.
pub fn mean_giou(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<GIoUReport> {
    let ids: Vec<String> = (0..preds.len()).map(|i| i.to_string()).collect();
    mean_giou_labeled(&ids, preds, gts)
}

pub fn mean_giou_labeled(
    ids: &[String],
    preds: &[BinaryMask],
    gts: &[BinaryMask],
) -> Result<GIoUReport> {
    if preds.len() != gts.len() || ids.len() != preds.len() {
        return Err(Error::validation(format!(
            "mean_giou inputs disagree: {} ids, {} predictions, {} ground truths",
            ids.len(),
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::validation("mean_giou needs at least one pair"));
    }

    let mut per_item = Vec::with_capacity(preds.len());
    let mut sum = 0.0;
    let mut sum_iou = 0.0;
    let mut evaluated = 0usize;
    for ((id, pred), gt) in ids.iter().zip(preds).zip(gts) {
        if pred.is_empty() {
            per_item.push(GIoUItem {
                id: id.clone(),
                giou: None,
                iou: None,
                error: Some("empty prediction".to_string()),
            });
            continue;
        }
        match (giou(pred, gt), iou(pred, gt)) {
            (Ok(g), Ok(i)) => {
                sum += g;
                sum_iou += i;
                evaluated += 1;
                per_item.push(GIoUItem {
                    id: id.clone(),
                    giou: Some(g),
                    iou: Some(i),
                    error: None,
                });
            }
            (Err(e), _) | (_, Err(e)) => per_item.push(GIoUItem {
                id: id.clone(),
                giou: None,
                iou: None,
                error: Some(e.to_string()),
            }),
        }
    }

    let failed = per_item.len() - evaluated;
    Ok(GIoUReport {
        per_item,
        mean: (evaluated > 0).then(|| sum / evaluated as f64),
        mean_iou: (evaluated > 0).then(|| sum_iou / evaluated as f64),
        evaluated,
        failed,
    })
}

/// Per-stage scoring rubric; a trial's finish score spans all stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRubric {
    pub stages: Vec<Stage>,
}

impl ScoreRubric {
    pub fn new(stages: Vec<Stage>) -> Result<ScoreRubric> {
        if stages.is_empty() {
            return Err(Error::validation("rubric needs at least one stage"));
        }
        for s in &stages {
            if !s.max.is_finite() || s.max <= 0.0 {
                return Err(Error::validation(format!(
                    "stage {:?} max must be positive",
                    s.name
                )));
            }
        }
        Ok(ScoreRubric { stages })
    }

    pub fn finish_max(&self) -> f64 {
        self.stages.iter().map(|s| s.max).sum()
    }
}

/// Mean of per-scene raw means divided by the maximum possible score.
pub fn normalize_cell(raw_scene_means: &[f64], max: f64) -> Result<f64> {
    if !max.is_finite() || max <= 0.0 {
        return Err(Error::validation("cell max must be positive"));
    }
    if raw_scene_means.is_empty() {
        return Err(Error::validation("cell has no scene scores"));
    }
    for &v in raw_scene_means {
        if !(0.0..=max).contains(&v) {
            return Err(Error::validation(format!(
                "raw score {v} outside [0, {max}]"
            )));
        }
    }
    let mean = raw_scene_means.iter().sum::<f64>() / raw_scene_means.len() as f64;
    Ok(mean / max)
}

/// Max-weighted aggregate over cells: sum of raw means over sum of
/// maxima, not the mean of normalized cells.
pub fn aggregate_average(cells: &[(f64, f64)]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::validation("aggregate needs at least one cell"));
    }
    let mut raw_sum = 0.0;
    let mut max_sum = 0.0;
    for &(raw_mean, max) in cells {
        if !max.is_finite() || max <= 0.0 {
            return Err(Error::validation("cell max must be positive"));
        }
        raw_sum += raw_mean;
        max_sum += max;
    }
    Ok(raw_sum / max_sum)
}

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 2.0;

/// Fraction of trials scoring at or above the threshold.
pub fn success_rate(per_trial_scores: &[f64], threshold: f64) -> Result<f64> {
    if per_trial_scores.is_empty() {
        return Err(Error::validation("success rate needs at least one trial"));
    }
    let hits = per_trial_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(hits as f64 / per_trial_scores.len() as f64)
}

/// One (method, task, stage) cell: per-scene raw means and the cell max.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCell {
    pub method: String,
    pub task: String,
    pub stage: String,
    pub scenes: Vec<(String, f64)>,
    pub max: f64,
}

impl RawCell {
    pub fn raw_mean(&self) -> f64 {
        self.scenes.iter().map(|(_, v)| v).sum::<f64>() / self.scenes.len() as f64
    }
}

/// Raw evaluation results, cells in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawScoreTable {
    pub cells: Vec<RawCell>,
}

impl RawScoreTable {
    /// Methods in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in &self.cells {
            if seen.insert(c.method.clone()) {
                out.push(c.method.clone());
            }
        }
        out
    }

    /// (task, stage) column keys in first-appearance order.
    pub fn columns(&self) -> Vec<(String, String)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in &self.cells {
            let key = (c.task.clone(), c.stage.clone());
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
        out
    }

    pub fn cell(&self, method: &str, task: &str, stage: &str) -> Option<&RawCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.task == task && c.stage == stage)
    }
}

const SCORE_COLUMNS: [&str; 6] = ["method", "task", "stage", "scene", "raw_mean", "max"];

/// Ingest rows of `method,task,stage,scene,raw_mean,max`. Rows of one
/// cell must agree on `max`; scores must lie in [0, max].
pub fn read_score_csv(reader: impl Read) -> Result<RawScoreTable> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::schema(format!("score table: {e}")))?
        .clone();
    for want in SCORE_COLUMNS {
        if !headers.iter().any(|h| h == want) {
            return Err(Error::schema(format!(
                "score table is missing column {want:?}"
            )));
        }
    }
    let idx = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (mi, ti, si, sci, ri, xi) = (
        idx("method"),
        idx("task"),
        idx("stage"),
        idx("scene"),
        idx("raw_mean"),
        idx("max"),
    );

    let mut table = RawScoreTable::default();
    for (line, record) in csv.records().enumerate() {
        let record = record.map_err(|e| Error::schema(format!("score table row {line}: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let parse = |i: usize, name: &str| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| {
                    Error::schema(format!(
                        "score table row {line}: {name} {:?} is not a number",
                        record.get(i).unwrap_or("")
                    ))
                })
        };
        let (method, task, stage, scene) = (field(mi), field(ti), field(si), field(sci));
        let raw = parse(ri, "raw_mean")?;
        let max = parse(xi, "max")?;
        if !max.is_finite() || max <= 0.0 {
            return Err(Error::validation(format!(
                "score table row {line}: max must be positive"
            )));
        }
        if !(0.0..=max).contains(&raw) {
            return Err(Error::validation(format!(
                "score table row {line}: raw_mean {raw} outside [0, {max}]"
            )));
        }

        match table
            .cells
            .iter_mut()
            .find(|c| c.method == method && c.task == task && c.stage == stage)
        {
            Some(cell) => {
                if cell.max != max {
                    return Err(Error::schema(format!(
                        "cell {method}/{task}/{stage} has conflicting max values {} and {max}",
                        cell.max
                    )));
                }
                if cell.scenes.iter().any(|(s, _)| *s == scene) {
                    return Err(Error::schema(format!(
                        "duplicate scene {scene:?} in cell {method}/{task}/{stage}"
                    )));
                }
                cell.scenes.push((scene, raw));
            }
            None => table.cells.push(RawCell {
                method,
                task,
                stage,
                scenes: vec![(scene, raw)],
                max,
            }),
        }
    }
    if table.cells.is_empty() {
        return Err(Error::schema("score table has no rows"));
    }
    Ok(table)
}

pub fn read_score_csv_file(path: impl AsRef<Path>) -> Result<RawScoreTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_score_csv(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCell {
    pub task: String,
    pub stage: String,
    pub raw_mean: f64,
    pub max: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub cells: Vec<NormalizedCell>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub methods: Vec<MethodScores>,
}

/// Normalize every cell and compute each method's max-weighted average.
pub fn normalize_table(table: &RawScoreTable) -> Result<ScoreReport> {
    let mut methods = Vec::new();
    for method in table.methods() {
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        for cell in table.cells.iter().filter(|c| c.method == method) {
            let raw: Vec<f64> = cell.scenes.iter().map(|(_, v)| *v).collect();
            let score = normalize_cell(&raw, cell.max)?;
            let raw_mean = cell.raw_mean();
            weights.push((raw_mean, cell.max));
            cells.push(NormalizedCell {
                task: cell.task.clone(),
                stage: cell.stage.clone(),
                raw_mean,
                max: cell.max,
                score,
            });
        }
        let average = aggregate_average(&weights)?;
        methods.push(MethodScores {
            method,
            cells,
            average,
        });
    }
    Ok(ScoreReport { methods })
}

/// Aligned text table: one row per method, one column per (task,
/// stage), final Average column, scores at two decimals.
pub fn render_score_table(report: &ScoreReport) -> String {
    let mut columns: Vec<(String, String)> = Vec::new();
    for m in &report.methods {
        for c in &m.cells {
            let key = (c.task.clone(), c.stage.clone());
            if !columns.contains(&key) {
                columns.push(key);
            }
        }
    }

    let mut header: Vec<String> = vec!["method".to_string()];
    header.extend(columns.iter().map(|(t, s)| format!("{t}/{s}")));
    header.push("average".to_string());

    let mut rows: Vec<Vec<String>> = vec![header];
    for m in &report.methods {
        let mut row = vec![m.method.clone()];
        for (task, stage) in &columns {
            match m.cells.iter().find(|c| &c.task == task && &c.stage == stage) {
                Some(c) => row.push(format!("{:.2}", c.score)),
                None => row.push("-".to_string()),
            }
        }
        row.push(format!("{:.2}", m.average));
        rows.push(row);
    }

    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap())
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{:<width$}", cell, width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
