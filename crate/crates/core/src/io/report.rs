//! CSV reports with a fixed header and `#` summary lines.

use std::fmt::Write as _;

use crate::attacks::{AttackMethod, AttackOutcome};
use crate::certify::DualCertificate;
use crate::train::History;

pub const REPORT_HEADER: &str =
    "sample_index,true_label,predicted_label,method,radius_l2,radius_linf,abstain,clean_correct,attacked_correct,epsilon";

/// ℓ2 radii at which certified accuracy is summarized.
pub const RADIUS_GRID: [f64; 9] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.5, 0.75, 1.0];

/// One report line. Fields that do not apply to a run are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sample_index: usize,
    pub true_label: usize,
    /// `None` when the classifier abstains.
    pub predicted_label: Option<usize>,
    pub method: String,
    pub radius_l2: Option<f64>,
    pub radius_linf: Option<f64>,
    pub abstain: bool,
    pub clean_correct: Option<bool>,
    pub attacked_correct: Option<bool>,
    pub epsilon: Option<f64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ReportRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.sample_index,
            self.true_label,
            self.predicted_label.map_or("-1".to_string(), |p| p.to_string()),
            self.method,
            opt(self.radius_l2),
            opt(self.radius_linf),
            self.abstain,
            opt(self.clean_correct),
            opt(self.attacked_correct),
            opt(self.epsilon),
        )
    }
}

/// One row per sample carrying the chosen certificate.
pub fn certificate_rows(samples: &[(usize, usize, DualCertificate)]) -> Vec<ReportRow> {
    samples
        .iter()
        .map(|(i, y, d)| {
            let c = &d.chosen;
            ReportRow {
                sample_index: *i,
                true_label: *y,
                predicted_label: (!c.abstain).then_some(c.label),
                method: c.method.name().to_string(),
                radius_l2: Some(c.radius_l2),
                radius_linf: Some(c.radius_linf),
                abstain: c.abstain,
                clean_correct: Some(!c.abstain && c.label == *y),
                attacked_correct: None,
                epsilon: None,
            }
        })
        .collect()
}

pub fn attack_rows(outcomes: &[AttackOutcome], method: AttackMethod, epsilon: f64) -> Vec<ReportRow> {
    outcomes
        .iter()
        .map(|o| ReportRow {
            sample_index: o.index,
            true_label: o.label,
            predicted_label: Some(o.attacked_pred),
            method: method.name().to_string(),
            radius_l2: None,
            radius_linf: None,
            abstain: false,
            clean_correct: Some(o.clean_correct),
            attacked_correct: Some(o.attacked_correct),
            epsilon: Some(epsilon),
        })
        .collect()
}

/// Fraction of samples certified with the correct label at each grid radius, for the
/// randomized-smoothing branch, the margin branch and the chosen certificate.
pub fn certified_accuracy(samples: &[(usize, usize, DualCertificate)], grid: &[f64]) -> Vec<(f64, f64, f64, f64)> {
    let n = samples.len().max(1) as f64;
    grid.iter()
        .map(|&r| {
            let frac = |pick: fn(&DualCertificate) -> &crate::certify::Certificate| {
                samples.iter().filter(|(_, y, d)| pick(d).certifies(*y, r)).count() as f64 / n
            };
            (r, frac(|d| &d.rs), frac(|d| &d.lip), frac(|d| &d.chosen))
        })
        .collect()
}

/// Header, rows sorted by sample index, then each summary line prefixed with `# `.
pub fn write_report(rows: &[ReportRow], summary: &[String]) -> String {
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.sample_index);
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    for line in summary {
        let _ = writeln!(out, "# {line}");
    }
    out
}

pub fn history_csv(h: &History) -> String {
    let mut out = String::from("epoch,mean_loss,train_accuracy,max_kernel_norm,gate_defect,zeta,phi,nu,kappa\n");
    for e in &h.epochs {
        let w = e.learned_weights;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch, e.mean_loss, e.train_accuracy, e.max_kernel_norm, e.gate_defect, w[0], w[1], w[2], w[3]
        );
    }
    let _ = writeln!(out, "# gamma = {}", h.gamma);
    let _ = writeln!(out, "# lip_bound = {}", h.lip_bound);
    out
}
