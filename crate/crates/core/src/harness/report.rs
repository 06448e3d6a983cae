//! Report tables, JSON and aligned plain-text output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::gateway::SamplingParams;
use crate::metrics::StatTestResult;
use crate::session::ScenarioOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Generation,
    Scenario,
    BeforeAfter,
    NliAccuracy,
    Ablation,
}

impl ReportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Generation => "generation",
            ReportKind::Scenario => "scenario",
            ReportKind::BeforeAfter => "before-after",
            ReportKind::NliAccuracy => "nli-accuracy",
            ReportKind::Ablation => "ablation",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ReportKind::Generation => "Greedy matching F1 of supportive and unsupportive utterances",
            ReportKind::Scenario => "Acceptance and objection rates",
            ReportKind::BeforeAfter => "Accuracy before and after discussion",
            ReportKind::NliAccuracy => "NLI accuracy",
            ReportKind::Ablation => "Accuracy difference with noisy discussion examples (noisy - clean)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mark {
    /// Significant at the report's alpha.
    Significant,
    /// Best (or, for ablations, strongest) in its column.
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// In [0, 1] for scores and accuracies; signed for differences.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marks: Vec<Mark>,
}

impl Cell {
    pub fn new(value: Option<f64>) -> Self {
        Self { value, marks: Vec::new() }
    }

    pub fn mark(&mut self, m: Mark) {
        if !self.marks.contains(&m) {
            self.marks.push(m);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    /// Decimal places after scaling by 100.
    pub decimals: usize,
}

impl Table {
    pub fn new(columns: Vec<String>, decimals: usize) -> Self {
        Self { columns, rows: Vec::new(), decimals }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        assert_eq!(values.len(), self.columns.len(), "row width must match columns");
        self.rows.push(Row { label: label.into(), cells: values.into_iter().map(Cell::new).collect() });
    }

    pub fn cell_mut(&mut self, row: &str, column: &str) -> Option<&mut Cell> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter_mut().find(|r| r.label == row).map(|r| &mut r.cells[c])
    }

    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.label == row)?.cells[c].value
    }

    /// Mark the extreme value of every column: largest when `highest`,
    /// otherwise smallest.
    pub fn mark_column_extremes(&mut self, highest: bool) {
        for c in 0..self.columns.len() {
            let mut best: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if let Some(v) = row.cells[c].value {
                    let better = match best {
                        None => true,
                        Some((_, b)) => (highest && v > b) || (!highest && v < b),
                    };
                    if better {
                        best = Some((r, v));
                    }
                }
            }
            if let Some((r, _)) = best {
                self.rows[r].cells[c].mark(Mark::Best);
            }
        }
    }

    pub fn format_value(&self, v: Option<f64>) -> String {
        match v {
            Some(v) => format!("{:.*}", self.decimals, v * 100.0),
            None => "-".to_string(),
        }
    }

    /// Aligned columns; `^` follows significant cells and `*` best ones.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = std::iter::once(String::new()).chain(self.columns.iter().cloned()).collect();
        let mut grid = vec![header];
        for row in &self.rows {
            let mut line = vec![row.label.clone()];
            for cell in &row.cells {
                let mut s = self.format_value(cell.value);
                if cell.marks.contains(&Mark::Significant) {
                    s.push('^');
                }
                if cell.marks.contains(&Mark::Best) {
                    s.push('*');
                }
                line.push(s);
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &grid {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub row: String,
    pub column: String,
    /// What was compared, e.g. "supportive vs unsupportive".
    pub comparison: String,
    pub result: StatTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub backend: String,
    pub params: SamplingParams,
    pub modes: Vec<String>,
    /// Hash of every exemplar pack used, in mode order.
    pub exemplar_fingerprints: Vec<String>,
    pub items: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
}

/// Links one completion to its prompt and output by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub row: String,
    pub item: String,
    pub sample: usize,
    pub prompt: String,
    /// SHA-256 of the completion text; absent when the call failed.
    pub completion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationItem {
    pub row: String,
    pub problem_id: String,
    pub index: usize,
    pub tag: crate::transcript::ContributionTag,
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliItem {
    pub row: String,
    pub problem_id: String,
    pub column: String,
    pub gold: crate::corpus::NLILabel,
    pub predicted: Option<crate::corpus::NLILabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportItems {
    Generation(Vec<GenerationItem>),
    Scenario(Vec<(String, ScenarioOutcome)>),
    Nli(Vec<NliItem>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ReportKind,
    pub table: Table,
    pub significance: Vec<Significance>,
    pub metadata: RunMetadata,
    /// Reassignments, skips, and per-item failures, in item order.
    pub notes: Vec<String>,
    pub items: ReportItems,
    pub trace: Vec<TraceEntry>,
}

/// Column and row structure of a report, for comparison against fixtures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportShape {
    pub kind: ReportKind,
    pub columns: Vec<String>,
    pub rows: Vec<String>,
}

impl EvalReport {
    pub fn shape(&self) -> ReportShape {
        ReportShape {
            kind: self.kind,
            columns: self.table.columns.clone(),
            rows: self.table.rows.iter().map(|r| r.label.clone()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} [{}]", self.kind.title(), self.metadata.backend);
        out.push_str(&self.table.to_text());
        for s in &self.significance {
            let _ = writeln!(
                out,
                "{} / {}: {} {} statistic={:.4} p={:.6}{}",
                s.row,
                s.column,
                s.comparison,
                serde_json::to_value(s.result.test).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                s.result.statistic,
                s.result.p_value,
                if s.result.significant { " significant" } else { "" }
            );
        }
        if !self.notes.is_empty() {
            let _ = writeln!(out, "notes: {}", self.notes.len());
            for n in &self.notes {
                let _ = writeln!(out, "  {n}");
            }
        }
        out
    }
}
