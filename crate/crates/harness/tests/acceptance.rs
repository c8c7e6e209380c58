//! Runs the full verification suite twice on the default configuration and
//! prints one pass/fail line per acceptance criterion. The determinism one also
//! requires the two rendered reports to be byte-identical.

use std::io::Write;

use gwtail_harness::config::ExperimentConfig;
use gwtail_harness::verify::{run_verify, Report};

fn criterion_line(report: &Report, n: u8) -> (bool, String) {
    let checks: Vec<_> = report.criterion(n).collect();
    let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
    let detail = checks
        .iter()
        .map(|c| format!("{}: measured {}; threshold {}", c.name, c.measured, c.threshold))
        .collect::<Vec<_>>()
        .join(" | ");
    (passed, detail)
}

#[test]
fn acceptance_criteria() {
    let cfg = ExperimentConfig::default();
    let first = run_verify(&cfg).expect("verification runs");
    let second = run_verify(&cfg).expect("verification runs");
    let (a, b) = (first.render(), second.render());

    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for n in 1..=13u8 {
        let (mut passed, mut detail) = criterion_line(&first, n);
        if n == 13 {
            let same = a == b;
            passed &= same;
            detail = format!(
                "{detail} | two full verification reports byte-identical: {same} ({} bytes)",
                a.len()
            );
        }
        if !passed {
            failed.push(n);
        }
        lines.push(format!(
            "{} criterion {n:02}: {detail}\n",
            if passed { "PASS" } else { "FAIL" }
        ));
    }
    // written directly so the lines appear even though libtest captures print!
    let mut out = std::io::stdout().lock();
    out.write_all(b"\nacceptance criteria\n").unwrap();
    for l in &lines {
        out.write_all(l.as_bytes()).unwrap();
    }
    for c in first.checks.iter().filter(|c| c.criterion.is_none() && c.id.ends_with("supplement")) {
        out.write_all(format!("{}\n", c.line()).as_bytes()).unwrap();
    }
    out.flush().unwrap();
    drop(out);

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
