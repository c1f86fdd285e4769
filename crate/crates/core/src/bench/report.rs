use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use super::scenarios::{ResultRow, ScenarioOutput};
use crate::error::{Error, Result};

pub const RESULTS_CSV: &str = "results.csv";
pub const TIMELINE_CSV: &str = "timeline.csv";
pub const EVENTS_CSV: &str = "events.csv";

/// Writes `results.csv`, and for co-run scenarios `timeline.csv` and
/// `events.csv`, into `dir`. Returns the files written.
pub fn write_outputs(dir: &Path, out: &ScenarioOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(RESULTS_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    for row in &out.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    written.push(path);

    if let Some((timeline, total)) = out.timeline() {
        let path = dir.join(TIMELINE_CSV);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["t_s", "alloc_high", "alloc_low", "total_slots"])?;
        for s in timeline {
            w.write_record([s.t.to_string(), s.alloc_high.to_string(), s.alloc_low.to_string(), total.to_string()])?;
        }
        w.flush()?;
        written.push(path);
    }

    if let Some(events) = out.events() {
        let path = dir.join(EVENTS_CSV);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["t_s", "app", "action", "node", "count", "priority", "version"])?;
        for e in events {
            w.write_record([
                format!("{:.6}", e.t),
                e.app.clone(),
                e.action.to_string(),
                e.node.0.to_string(),
                e.count.to_string(),
                e.priority.to_string(),
                e.version.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Reads every `results.csv` in `dir` and its immediate subdirectories.
pub fn read_results(dir: &Path) -> Result<Vec<ResultRow>> {
    let mut files = vec![dir.join(RESULTS_CSV)];
    if dir.is_dir() {
        let mut subs: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .map(|p| p.join(RESULTS_CSV))
            .collect();
        subs.sort();
        files.extend(subs);
    }
    let mut rows = Vec::new();
    for f in files.iter().filter(|f| f.is_file()) {
        for r in csv::Reader::from_path(f)?.deserialize() {
            rows.push(r?);
        }
    }
    if rows.is_empty() {
        return Err(Error::NoResults(dir.display().to_string()));
    }
    Ok(rows)
}

/// Per-scenario digest of a results set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub scenario: String,
    /// `(sweep_value, strategy, cost / max cost in the scenario)`.
    pub normalized_cost: Vec<(f64, String, f64)>,
    /// First sweep value where the fastest non-`DYN` strategy changes.
    pub crossover: Option<f64>,
    /// `(sweep_value, DYN completion / fastest other completion)`.
    pub dyn_ratio: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenarios: Vec<ScenarioSummary>,
}

/// Summarizes the results found in `dir`.
pub fn report(dir: &Path) -> Result<Summary> {
    Ok(summarize(&read_results(dir)?))
}

pub fn summarize(rows: &[ResultRow]) -> Summary {
    let mut by_scenario: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_scenario.entry(&r.scenario).or_default().push(r);
    }
    let scenarios = by_scenario
        .into_iter()
        .map(|(scenario, rows)| {
            let max_cost = rows.iter().map(|r| r.cost_slot_s).fold(0.0, f64::max);
            let normalized_cost = rows
                .iter()
                .map(|r| {
                    let norm = if max_cost > 0.0 { r.cost_slot_s / max_cost } else { 1.0 };
                    (r.sweep_value, r.strategy.clone(), norm)
                })
                .collect();

            let mut points: Vec<f64> = rows.iter().map(|r| r.sweep_value).collect();
            points.sort_by(f64::total_cmp);
            points.dedup();
            let mut fastest = Vec::new();
            let mut dyn_ratio = Vec::new();
            for &v in &points {
                let others = rows.iter().filter(|r| r.sweep_value == v && r.strategy != "DYN");
                let best = others.min_by(|a, b| {
                    a.completion_s.total_cmp(&b.completion_s).then_with(|| a.strategy.cmp(&b.strategy))
                });
                let Some(best) = best else { continue };
                fastest.push((v, best.strategy.as_str()));
                if let Some(d) = rows.iter().find(|r| r.sweep_value == v && r.strategy == "DYN") {
                    dyn_ratio.push((v, d.completion_s / best.completion_s));
                }
            }
            let crossover = fastest.windows(2).find(|w| w[0].1 != w[1].1).map(|w| w[1].0);
            ScenarioSummary {
                scenario: scenario.to_string(),
                normalized_cost,
                crossover,
                dyn_ratio,
            }
        })
        .collect();
    Summary { scenarios }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.scenarios {
            writeln!(f, "== {}", s.scenario)?;
            let mut line = String::new();
            let mut last = None;
            for (v, strategy, norm) in &s.normalized_cost {
                if last != Some(*v) {
                    if !line.is_empty() {
                        writeln!(f, "{line}")?;
                    }
                    line = format!("  {v:>8}  normalized cost:");
                    last = Some(*v);
                }
                let _ = write!(line, "  {strategy}={norm:.3}");
            }
            if !line.is_empty() {
                writeln!(f, "{line}")?;
            }
            match s.crossover {
                Some(v) => writeln!(f, "  crossover at {v}")?,
                None => writeln!(f, "  no crossover")?,
            }
            for (v, r) in &s.dyn_ratio {
                writeln!(f, "  {v:>8}  DYN/best static completion: {r:.3}")?;
            }
        }
        Ok(())
    }
}
