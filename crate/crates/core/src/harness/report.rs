//! Evaluation reports: per-strategy accuracy summaries, per-item traces,
//! and deterministic markdown/CSV rendering (strategies as rows, the
//! dataset as the accuracy column, percentages with one decimal).

use serde::{Deserialize, Serialize};

/// Accuracy summary for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub extraction_failures: usize,
    pub fallbacks: usize,
    pub faults: usize,
}

/// One evaluated (query, strategy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub query_id: String,
    pub strategy: String,
    pub demonstration_ids: Vec<String>,
    pub raw_output: String,
    pub extracted: Option<String>,
    pub correct: bool,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_reason: Option<String>,
}

/// Full experiment result: summaries in strategy order, traces sorted by
/// (query id, strategy), and the config snapshot that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub strategies: Vec<StrategySummary>,
    pub traces: Vec<TraceRow>,
    pub config: serde_json::Value,
    pub created_at_ms: u64,
}

impl EvalReport {
    /// Count of trace rows flagged for faults or fallbacks; a non-zero
    /// count marks the run as partial.
    pub fn flagged_count(&self) -> usize {
        self.traces.iter().filter(|t| t.flagged).count()
    }

    /// Recomputes each strategy's accuracy from the trace. Used by tests
    /// and by the `report` subcommand to verify internal consistency.
    pub fn accuracy_from_trace(&self, strategy: &str) -> Option<(usize, usize)> {
        let rows: Vec<&TraceRow> = self
            .traces
            .iter()
            .filter(|t| t.strategy == strategy)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let correct = rows.iter().filter(|t| t.correct).count();
        Some((correct, rows.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

fn percent_cell(accuracy: f64) -> String {
    format!("{:.1}", accuracy * 100.0)
}

/// Renders the accuracy table. Markdown and CSV share the same row
/// structure; both are deterministic given the report.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!("| strategy | {} |\n", report.dataset));
            out.push_str("| --- | --- |\n");
            for s in &report.strategies {
                out.push_str(&format!("| {} | {} |\n", s.name, percent_cell(s.accuracy)));
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = String::new();
            out.push_str(&format!("strategy,{}\n", report.dataset));
            for s in &report.strategies {
                out.push_str(&format!("{},{}\n", s.name, percent_cell(s.accuracy)));
            }
            out
        }
    }
}
