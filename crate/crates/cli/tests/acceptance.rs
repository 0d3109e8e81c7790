//! The twelve acceptance criteria, one pass/fail line each. Run with
//! `--nocapture` to see the lines on success.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use vanroos_cli::verify::run_suite;

struct Criterion {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn suites(names: &[&str], seed: u64) -> (bool, String) {
    let mut reports = Vec::new();
    for name in names {
        reports.extend(run_suite(name, seed).unwrap_or_else(|e| panic!("{name}: {e}")));
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.properties
                .iter()
                .filter(|p| !p.passed)
                .map(move |p| format!("{}: {}", r.suite, p.name))
        })
        .collect();
    let total: usize = reports.iter().map(|r| r.properties.len()).sum();
    let detail = if failed.is_empty() {
        format!("{total} properties within bounds")
    } else {
        format!("failed: {}", failed.join("; "))
    };
    (failed.is_empty(), detail)
}

fn simulate(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .output()
        .unwrap()
}

fn deck(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("decks")
        .join(format!("{name}.toml"))
        .to_string_lossy()
        .into_owned()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn acceptance() {
    let seed = 20;
    let mut criteria = Vec::new();
    let mut push = |id, title, (passed, detail): (bool, String)| {
        criteria.push(Criterion {
            id,
            title,
            passed,
            detail,
        })
    };

    let start = Instant::now();
    let (ok, detail) = suites(&["kappa-lipschitz"], seed);
    let elapsed = start.elapsed().as_secs_f64();
    push(
        1,
        "kappa Lipschitz certificate",
        (ok && elapsed < 5.0, format!("{detail}; {elapsed:.2} s (limit 5 s)")),
    );
    push(2, "kappa branch values", suites(&["kappa-branches"], seed));
    push(3, "Fermi-Dirac integral", suites(&["fermi-dirac"], seed));
    push(4, "nonexpansiveness of S", suites(&["s-nonexpansive"], seed));
    push(5, "zero of S", suites(&["s-zero"], seed));
    push(
        6,
        "Newton/contraction agreement and cut-off independence",
        suites(&["s-agreement"], seed),
    );
    push(
        7,
        "MMS orders in space and time",
        suites(&["mms-poisson", "mms-time"], seed),
    );
    push(8, "conservation on shipped decks", suites(&["conservation"], seed));
    push(
        9,
        "equilibrium fixed point and built-in potential",
        suites(&["equilibrium"], seed),
    );

    let tmp = tempfile::tempdir().unwrap();
    let (ok, detail) = suites(&["positivity-blowup"], seed);
    let out = tmp.path().join("avalanche");
    let o = simulate(&["run", &deck("avalanche-runaway"), "--out", out.to_str().unwrap()]);
    let report: Option<serde_json::Value> = std::fs::read_to_string(out.join("blowup.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let increasing = report.as_ref().is_some_and(|r| r["strictly_increasing_tail"] == true);
    push(
        10,
        "positivity and blow-up semantics",
        (
            ok && o.status.code() == Some(3) && increasing,
            format!("{detail}; run exit {:?}, increasing tail {increasing}", o.status.code()),
        ),
    );
    push(11, "Gummel against monolithic oracle", suites(&["gummel-oracle"], seed));

    let mut same = true;
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("diode{i}"));
        let o = simulate(&["run", &deck("diode"), "--out", out.to_str().unwrap()]);
        same &= o.status.code() == Some(0);
        outputs.push(dir_contents(&out));
    }
    same &= outputs[0] == outputs[1] && !outputs[0].is_empty();
    for suite in ["kappa-lipschitz", "s-agreement"] {
        let a = simulate(&["verify", suite, "--seed", "11"]).stdout;
        let b = simulate(&["verify", suite, "--seed", "11"]).stdout;
        same &= a == b && !a.is_empty();
    }
    push(
        12,
        "determinism of run and verify",
        (
            same,
            format!("{} run files compared, 2 verify suites compared", outputs[0].len()),
        ),
    );

    for c in &criteria {
        println!(
            "criterion {:>2} {} {}: {}",
            c.id,
            if c.passed { "PASS" } else { "FAIL" },
            c.title,
            c.detail
        );
    }
    let failed: Vec<usize> = criteria.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
