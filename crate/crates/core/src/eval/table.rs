use super::{JudgmentReport, RetrievalReport, SweepRow};

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.clone()));
        out.push('\n');
    }
    out
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

const RETRIEVAL_HEADER: [&str; 6] = ["Task", "N", "Top-1", "Top-3", "Top-5", "Not Found"];

fn retrieval_row(r: &RetrievalReport) -> Vec<String> {
    vec![r.task.to_string(), r.n.to_string(), f3(r.top1), f3(r.top3), f3(r.top5), f3(r.not_found_rate)]
}

pub fn retrieval_table(reports: &[RetrievalReport]) -> String {
    aligned(&RETRIEVAL_HEADER, &reports.iter().map(retrieval_row).collect::<Vec<_>>())
}

pub fn retrieval_csv(reports: &[RetrievalReport]) -> String {
    csv(&RETRIEVAL_HEADER, &reports.iter().map(retrieval_row).collect::<Vec<_>>())
}

const JUDGMENT_HEADER: [&str; 4] = ["Mode", "N", "Accuracy", "F1"];

fn judgment_row(r: &JudgmentReport) -> Vec<String> {
    let mode = r.mode.map(|m| m.name()).unwrap_or("mixed");
    vec![mode.to_string(), r.n.to_string(), f3(r.accuracy), f3(r.macro_f1)]
}

pub fn judgment_table(reports: &[JudgmentReport]) -> String {
    aligned(&JUDGMENT_HEADER, &reports.iter().map(judgment_row).collect::<Vec<_>>())
}

pub fn judgment_csv(reports: &[JudgmentReport]) -> String {
    csv(&JUDGMENT_HEADER, &reports.iter().map(judgment_row).collect::<Vec<_>>())
}

const SWEEP_HEADER: [&str; 7] = ["Task", "Choices", "N", "Top-1", "Top-3", "Top-5", "Not Found"];

fn sweep_row(r: &SweepRow) -> Vec<String> {
    let mut row = vec![r.task.to_string(), r.choices.to_string()];
    match &r.report {
        Some(rep) => row.extend(retrieval_row(rep).into_iter().skip(1)),
        None => row.extend(["0", "skipped", "skipped", "skipped", "skipped"].map(String::from)),
    }
    row
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    aligned(&SWEEP_HEADER, &rows.iter().map(sweep_row).collect::<Vec<_>>())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    csv(&SWEEP_HEADER, &rows.iter().map(sweep_row).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;

    #[test]
    fn columns_line_up() {
        let r = RetrievalReport {
            task: Task::Scr,
            n: 12345,
            top1: 0.1,
            top3: 0.3,
            top5: 0.5,
            not_found_rate: 0.0,
            not_found: 0,
            hits: [1, 3, 5],
            denominators: [10; 3],
            backend_failures: 0,
        };
        let t = retrieval_table(&[r.clone()]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].len(), lines[2].len());
        assert!(lines[2].ends_with("0.000"));
        assert_eq!(retrieval_csv(&[r]).lines().nth(1), Some("SCR,12345,0.100,0.300,0.500,0.000"));
    }
}
