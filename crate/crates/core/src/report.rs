//! Text reports over a roll-up.
//!
//! The innermost two levels form a table (`Component | Task | Cost | Σ` for
//! the default grouping); outer levels become section headings, each
//! closed by its own Σ line. Every number printed is a node total of the
//! [`Rollup`], so a report never disagrees with the aggregation engine.

use std::fmt::Write;

use crate::export::records_to_string;
use crate::ids::Unit;
use crate::ledger::{CostRecord, Rollup, RollupNode, Sum};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Table,
    Records,
}

/// Renders `records` either as the export format or as tables over `rollup`.
/// `unit_hint` names the unit of the grand total when there are no records.
pub fn render_report(rollup: &Rollup, records: &[CostRecord], layout: Layout, unit_hint: Option<&Unit>) -> String {
    match layout {
        Layout::Records => records_to_string(records),
        Layout::Table => render_tables(rollup, unit_hint),
    }
}

fn sum_text(total: &Option<Sum>) -> String {
    total.as_ref().map_or_else(|| "mixed units".to_string(), Sum::to_string)
}

pub fn render_tables(rollup: &Rollup, unit_hint: Option<&Unit>) -> String {
    let depth = rollup.levels.len();
    let inner = depth.min(2);
    let outer = depth - inner;
    let mut out = String::new();
    if outer > 0 && rollup.root.children.is_empty() {
        table(&mut out, rollup, &rollup.root);
    } else {
        sections(&mut out, rollup, &rollup.root, 0, outer, &mut Vec::new());
    }
    let total = match (&rollup.root.total, unit_hint) {
        (None, Some(unit)) if rollup.root.records == 0 => Some(Sum::new(Value::ZERO, unit.clone())),
        (t, _) => t.clone(),
    };
    if total.is_none() && rollup.root.records == 0 {
        let _ = writeln!(out, "Σ total: 0");
    } else {
        let _ = writeln!(out, "Σ total: {}", sum_text(&total));
    }
    out
}

fn sections<'a>(
    out: &mut String,
    rollup: &Rollup,
    node: &'a RollupNode,
    level: usize,
    outer: usize,
    path: &mut Vec<&'a RollupNode>,
) {
    if level == outer {
        if !path.is_empty() {
            let heading: Vec<String> = path
                .iter()
                .map(|n| format!("{} {}", n.level.map_or("", |l| l.title()), n.key))
                .collect();
            let _ = writeln!(out, "== {} ==", heading.join(" / "));
        }
        table(out, rollup, node);
        if let Some(last) = path.last() {
            let _ = writeln!(out, "Σ {} {}: {}\n", last.level.map_or("", |l| l.title()), last.key, sum_text(&node.total));
        }
        return;
    }
    for child in &node.children {
        path.push(child);
        sections(out, rollup, child, level + 1, outer, path);
        path.pop();
    }
}

/// One table for the innermost levels below `node`.
fn table(out: &mut String, rollup: &Rollup, node: &RollupNode) {
    let depth = rollup.levels.len();
    let levels = &rollup.levels[depth - depth.min(2)..];
    let mut header: Vec<String> = levels.iter().map(|l| l.title().to_string()).collect();
    header.push("Cost".to_string());
    if levels.len() == 2 {
        header.push("Σ".to_string());
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    match levels.len() {
        0 => {}
        1 => {
            for c in &node.children {
                rows.push(vec![c.key.clone(), sum_text(&c.total)]);
            }
        }
        _ => {
            for c in &node.children {
                for (n, g) in c.children.iter().enumerate() {
                    let (key, sum) = if n == 0 { (c.key.clone(), sum_text(&c.total)) } else { (String::new(), String::new()) };
                    rows.push(vec![key, g.key.clone(), sum_text(&g.total), sum]);
                }
            }
        }
    }
    if header.len() == 1 {
        return;
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> =
            cells.iter().zip(&widths).map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
        format!("| {} |", padded.join(" | "))
    };
    let rule = format!("|{}|", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
    let _ = writeln!(out, "{}", line(&header));
    let _ = writeln!(out, "{rule}");
    for r in &rows {
        let _ = writeln!(out, "{}", line(r));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{rollup, AggregationQuery, Level};

    fn rec(i: &str, c: &str, t: &str, v: i64) -> CostRecord {
        CostRecord::new(i.into(), c.into(), t.into(), "duration".into(), v.into(), "ms".into()).unwrap()
    }

    fn roll(records: &[CostRecord], levels: &[Level]) -> Rollup {
        rollup(records, &AggregationQuery::new(levels.iter().copied()).unwrap()).unwrap()
    }

    #[test]
    fn component_task_table() {
        let records = [rec("i", "1", "3", 2), rec("i", "1", "5", 8), rec("i", "3", "4", 1)];
        let text = render_tables(&roll(&records, &[Level::Component, Level::Task]), None);
        assert_eq!(
            text,
            "| Component | Task | Cost | Σ     |\n\
             |-----------|------|------|-------|\n\
             | 1         | 3    | 2 ms | 10 ms |\n\
             |           | 5    | 8 ms |       |\n\
             | 3         | 4    | 1 ms | 1 ms  |\n\
             Σ total: 11 ms\n"
        );
    }

    #[test]
    fn empty_ledger_gives_header_only() {
        let rollup = roll(&[], &[Level::Interaction, Level::Component, Level::Task]);
        let text = render_tables(&rollup, Some(&"ms".into()));
        assert_eq!(text, "| Component | Task | Cost | Σ |\n|-----------|------|------|---|\nΣ total: 0 ms\n");
        assert!(render_tables(&rollup, None).ends_with("Σ total: 0\n"));
    }

    #[test]
    fn outer_levels_become_sections() {
        let records = [rec("a", "1", "3", 3), rec("b", "1", "3", 4)];
        let text = render_tables(&roll(&records, &[Level::Interaction, Level::Component, Level::Task]), None);
        assert!(text.contains("== Interaction a ==") && text.contains("Σ Interaction b: 4 ms"), "{text}");
        assert!(text.ends_with("Σ total: 7 ms\n"));
    }
}
