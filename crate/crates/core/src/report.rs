//! CSV rendering of experiment results: the raw metric table, the pivoted
//! quality/efficacy grid, robustness curves, and the selected-settings
//! table. Rows are sorted by their own coordinates, so the rendered bytes
//! do not depend on the order results were produced in.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::defenses::{Combine, DefenseConfig};
use crate::error::PersistError;
use crate::harness::SelectedSetting;
use crate::metrics::{MetricKind, MetricReport};

/// Compact comma-free identifier for one concrete defense configuration.
pub fn defense_tag(cfg: &DefenseConfig) -> String {
    match cfg {
        DefenseConfig::L1 { sigma } => format!("l1[sigma={sigma:?}]"),
        DefenseConfig::LStar { sigma, .. } => format!("lstar[sigma={sigma:?}]"),
        DefenseConfig::LPlus { sigma, .. } => format!("lplus[sigma={sigma:?}]"),
        DefenseConfig::Rpenn {
            lambda, m, combine, ..
        } => {
            let vote = match combine {
                Combine::Majority => "majority",
                Combine::Average => "average",
            };
            format!("rpenn[lambda={lambda:?};m={m};{vote}]")
        }
    }
}

/// The defense's parameter columns: (sigma, lambda, m, combine), empty where
/// not applicable.
fn parameter_columns(cfg: &DefenseConfig) -> (String, String, String, String) {
    match cfg {
        DefenseConfig::L1 { sigma }
        | DefenseConfig::LStar { sigma, .. }
        | DefenseConfig::LPlus { sigma, .. } => {
            (format!("{sigma:?}"), String::new(), String::new(), String::new())
        }
        DefenseConfig::Rpenn {
            lambda, m, combine, ..
        } => (
            String::new(),
            format!("{lambda:?}"),
            m.to_string(),
            match combine {
                Combine::Majority => "majority".into(),
                Combine::Average => "average".into(),
            },
        ),
    }
}

/// Ordering key shared by all renderers: defense kind, noise magnitude,
/// ensemble size. Positive finite floats order correctly by their bits.
fn defense_key(cfg: &DefenseConfig) -> (&'static str, u64, usize) {
    let m = match cfg {
        DefenseConfig::Rpenn { m, .. } => *m,
        _ => 0,
    };
    (cfg.kind_name(), cfg.noise_parameter().to_bits(), m)
}

/// The full metric table, one row per report.
pub fn render_metric_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for report in reports {
        out.push_str(&report.csv_row());
        out.push('\n');
    }
    out
}

pub const GRID_CSV_HEADER: &str = "defense,sigma,lambda,m,combine,attack,efficacy,quality";

/// Pivots sweep rows into one row per (defense grid point, attack) carrying
/// both metrics — the long-format data behind quality/efficacy heatmaps.
pub fn render_grid_csv(reports: &[MetricReport]) -> String {
    let mut cells: BTreeMap<((&'static str, u64, usize), &str), (DefenseConfig, Option<f64>, Option<f64>)> =
        BTreeMap::new();
    for report in reports {
        if report.n.is_some() {
            continue; // robustness rows live in their own table
        }
        let key = (defense_key(&report.defense), report.attack.as_str());
        let cell = cells
            .entry(key)
            .or_insert((report.defense.clone(), None, None));
        match report.kind {
            MetricKind::Efficacy => cell.1 = Some(report.value),
            MetricKind::Quality => cell.2 = Some(report.value),
            MetricKind::Robustness => {}
        }
    }
    let mut out = String::from(GRID_CSV_HEADER);
    out.push('\n');
    for ((_, attack), (cfg, eff, qual)) in &cells {
        let (sigma, lambda, m, combine) = parameter_columns(cfg);
        let fmt = |v: &Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{sigma},{lambda},{m},{combine},{attack},{},{}\n",
            cfg.kind_name(),
            fmt(eff),
            fmt(qual),
        ));
    }
    out
}

pub const ROBUSTNESS_CSV_HEADER: &str = "defense,attack,q,n,value";

/// Robustness curves in plottable long format, one row per
/// (defense configuration, attack, level, fleet size).
pub fn render_robustness_csv(reports: &[MetricReport]) -> String {
    let mut rows: Vec<&MetricReport> = reports
        .iter()
        .filter(|r| r.kind == MetricKind::Robustness && r.n.is_some() && r.q.is_some())
        .collect();
    rows.sort_by_key(|r| {
        (
            defense_key(&r.defense),
            r.attack.clone(),
            r.q.unwrap().to_bits(),
            r.n.unwrap(),
        )
    });
    let mut out = String::from(ROBUSTNESS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{:?},{},{:?}\n",
            defense_tag(&row.defense),
            row.attack,
            row.q.unwrap(),
            row.n.unwrap(),
            row.value,
        ));
    }
    out
}

pub const SELECTION_CSV_HEADER: &str =
    "defense,quality_floor,sigma,lambda,m,combine,worst_quality,worst_efficacy";

/// The chosen settings per defense and floor — the analogue of a published
/// settings table.
pub fn render_selection_csv(selected: &[SelectedSetting]) -> String {
    let mut rows: Vec<&SelectedSetting> = selected.iter().collect();
    rows.sort_by_key(|s| (s.quality_floor.to_bits(), defense_key(&s.defense)));
    let mut out = String::from(SELECTION_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let (sigma, lambda, m, combine) = parameter_columns(&row.defense);
        out.push_str(&format!(
            "{},{:?},{sigma},{lambda},{m},{combine},{:?},{:?}\n",
            row.defense.kind_name(),
            row.quality_floor,
            row.worst_quality,
            row.worst_efficacy,
        ));
    }
    out
}

/// Writes rendered text, wrapping failures with the offending path.
pub fn write_text(path: &Path, content: &str) -> Result<(), PersistError> {
    fs::write(path, content).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads back a table written by [`render_metric_csv`], restoring every row
/// exactly. `origin` names the file in parse errors.
pub fn parse_metric_csv(text: &str, origin: &Path) -> Result<Vec<MetricReport>, PersistError> {
    let err = |line: usize, field: usize, msg: String| PersistError::Parse {
        path: origin.display().to_string(),
        line,
        field,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == MetricReport::CSV_HEADER => {}
        _ => return Err(err(1, 0, "missing or unexpected header".into())),
    }
    let mut reports = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(err(lineno, 0, format!("expected 12 columns, got {}", cols.len())));
        }
        let float = |field: usize| -> Result<f64, PersistError> {
            cols[field - 1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, field, format!("bad float '{}'", cols[field - 1])))
        };
        let count = |field: usize| -> Result<usize, PersistError> {
            cols[field - 1]
                .parse::<usize>()
                .map_err(|_| err(lineno, field, format!("bad count '{}'", cols[field - 1])))
        };
        let kind = match cols[0] {
            "efficacy" => MetricKind::Efficacy,
            "quality" => MetricKind::Quality,
            "robustness" => MetricKind::Robustness,
            other => return Err(err(lineno, 1, format!("unknown metric kind '{other}'"))),
        };
        let value = float(2)?;
        let defense = match cols[2] {
            "l1" => DefenseConfig::l1(float(4)?),
            "lstar" => DefenseConfig::lstar(float(4)?),
            "lplus" => DefenseConfig::lplus(float(4)?),
            "rpenn" => {
                let combine = match cols[6] {
                    "majority" => Combine::Majority,
                    "average" => Combine::Average,
                    other => {
                        return Err(err(lineno, 7, format!("unknown combine rule '{other}'")))
                    }
                };
                DefenseConfig::rpenn(float(5)?, count(6)?, combine)
            }
            other => return Err(err(lineno, 3, format!("unknown defense '{other}'"))),
        };
        defense
            .validate()
            .map_err(|e| err(lineno, 3, e.to_string()))?;
        let n = if cols[8].is_empty() { None } else { Some(count(9)?) };
        let q = if cols[9].is_empty() { None } else { Some(float(10)?) };
        reports.push(MetricReport {
            kind,
            value,
            defense,
            attack: cols[7].to_string(),
            n,
            q,
            repetitions: count(11)?,
            seed_hash: cols[11].to_string(),
        });
    }
    Ok(reports)
}
