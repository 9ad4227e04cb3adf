//! Plain-text and TSV rendering of run reports.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::lens::format_set;
use crate::sim::RunReport;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Tsv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "tsv" => Ok(ReportFormat::Tsv),
            other => Err(format!("unknown format {other:?} (expected text or tsv)")),
        }
    }
}

/// Renders a report deterministically. The TSV form has one row per
/// assertion (`assert <tick> <kind> <PASS|FAIL> <detail>`) followed by one
/// row per peer (`final <peer> <sorted elements>`).
pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Tsv => {
            for a in &report.asserts {
                let verdict = if a.passed { "PASS" } else { "FAIL" };
                writeln!(out, "assert\t{}\t{}\t{}\t{}", a.at, a.kind, verdict, a.detail)
                    .expect("writing to string");
            }
            for (peer, elements) in &report.finals {
                let joined: Vec<String> = elements.iter().map(|e| e.to_string()).collect();
                writeln!(out, "final\t{}\t{}", peer, joined.join(",")).expect("writing to string");
            }
        }
        ReportFormat::Text => {
            for a in &report.asserts {
                let verdict = if a.passed { "PASS" } else { "FAIL" };
                writeln!(out, "assert {} {} {} {}", a.at, a.kind, verdict, a.detail)
                    .expect("writing to string");
            }
            for (peer, elements) in &report.finals {
                writeln!(out, "final {} {}", peer, format_set(elements)).expect("writing to string");
            }
            writeln!(out, "messages {}", report.message_count).expect("writing to string");
            writeln!(out, "quiescent at tick {}", report.quiescence_tick)
                .expect("writing to string");
            writeln!(
                out,
                "result: {}",
                if report.all_passed() { "PASS" } else { "FAIL" }
            )
            .expect("writing to string");
        }
    }
    out
}

/// Renders the execution trace, one line per entry.
pub fn render_trace(report: &RunReport) -> String {
    let mut out = String::new();
    for entry in &report.trace {
        writeln!(out, "{entry}").expect("writing to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use crate::sim::{run, RunOptions};

    const STORY1: &str = include_str!("../../../scenarios/story1.ocds");

    #[test]
    fn tsv_rows_for_story_one() {
        let scenario = parse_scenario(STORY1).unwrap();
        let report = run(&scenario, &RunOptions::default()).unwrap();
        let tsv = render_report(&report, ReportFormat::Tsv);
        assert!(tsv.contains("assert\tEND\tstate\tPASS\tP got={1,2,3,4,6} want={1,2,3,4,6}"));
        assert!(tsv.contains("final\tP\t1,2,3,4,6"));
        assert!(tsv.contains("final\tQ\t2,3,6,9"));
    }

    #[test]
    fn text_report_summarizes() {
        let scenario = parse_scenario(STORY1).unwrap();
        let report = run(&scenario, &RunOptions::default()).unwrap();
        let text = render_report(&report, ReportFormat::Text);
        assert!(text.contains("final P {1,2,3,4,6}"));
        assert!(text.contains("result: PASS"));
        assert!(text.contains("messages 1"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let scenario = parse_scenario(STORY1).unwrap();
        let a = render_report(&run(&scenario, &RunOptions::default()).unwrap(), ReportFormat::Text);
        let b = render_report(&run(&scenario, &RunOptions::default()).unwrap(), ReportFormat::Text);
        assert_eq!(a, b);
    }
}
