//! Acceptance criteria: one PASS/FAIL line per criterion.
//!
//! Suites listed in `KNOWN_DEFECTS` fail for reasons recorded there; the run
//! exits non-zero only when some other suite fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use slrep::charmod::SeriesId;
use slrep::harness::{run_suite, CheckKind, RunReport, SuiteConfig, SuiteEntry};
use slrep::report::{Status, VerificationReport};

/// (criterion, suite, reason) of failures that follow from the models as given.
const KNOWN_DEFECTS: &[(u32, &str, &str)] = &[
    (
        4,
        "sl3r-complementary",
        "the fiber kernel |x1 - y1|^(sigma-1) is not invariant for a character that differs by 2 sigma between the Levi blocks; the invariant power is 2 sigma - 1",
    ),
    (4, "sl4c-stein", "|det(X - Y)|^(2 sigma - 4) is not locally integrable for sigma < 1"),
    (9, "sl4c-stein", "|det(X - Y)|^(2 sigma - 4) is not locally integrable for sigma < 1"),
];

const SEED: u64 = 20_261_014;

struct Outcome {
    unexpected: Vec<String>,
}

fn criterion(number: u32, title: &str, reports: &[VerificationReport], started: Instant, out: &mut Outcome) {
    let failing: Vec<&VerificationReport> = reports.iter().filter(|r| !r.passed() && r.status != Status::Skipped).collect();
    let max = reports.iter().filter_map(|r| r.measured_max_error).fold(0.0, f64::max);
    let status = if failing.is_empty() { "PASS" } else { "FAIL" };
    let names: Vec<&str> = failing.iter().map(|r| r.suite_name.as_str()).collect();
    let detail = if names.is_empty() { String::new() } else { format!("; failing: {}", names.join(", ")) };
    println!(
        "{status} criterion {number:>2} {title}: {}/{} suites pass, max error {max:.3e}, {:.1} s{detail}",
        reports.len() - failing.len(),
        reports.len(),
        started.elapsed().as_secs_f64()
    );
    for r in &failing {
        match KNOWN_DEFECTS.iter().find(|(c, s, _)| *c == number && *s == r.suite_name) {
            Some((_, _, why)) => println!("     known: {}: {why}", r.suite_name),
            None => {
                for d in r.details.iter().filter(|d| d.error.map_or(true, |e| e > r.tolerance)).take(3) {
                    println!("     {}: {} {:?} {}", r.suite_name, d.case, d.error, d.note.clone().unwrap_or_default());
                }
                out.unexpected.push(format!("criterion {number}: {}", r.suite_name));
            }
        }
    }
}

fn run(entries: Vec<SuiteEntry>) -> Vec<VerificationReport> {
    run_suite(&SuiteConfig::new(SEED, entries)).expect("valid configuration")
}

fn per_series(check: CheckKind, ids: impl IntoIterator<Item = SeriesId>, f: impl Fn(SuiteEntry) -> SuiteEntry) -> Vec<SuiteEntry> {
    ids.into_iter().map(|id| f(SuiteEntry::new(id.as_str(), check).series(id))).collect()
}

fn kernel_series() -> impl Iterator<Item = SeriesId> {
    SeriesId::ALL.into_iter().filter(|id| id.is_complementary())
}

fn determinism() -> Vec<VerificationReport> {
    let dir = std::env::temp_dir().join(format!("slrep-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = SuiteConfig::new(
        SEED,
        vec![
            SuiteEntry::new("compose", CheckKind::Compose).series(SeriesId::Sl3cPrincipal).trials(3),
            SuiteEntry::new("unitarity-mc", CheckKind::Unitarity).series(SeriesId::Sl3cComplementary).trials(1),
            SuiteEntry::new("haar", CheckKind::HaarInvariance).chart("sl4c-211").trials(20),
        ],
    );
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&config).unwrap()).unwrap();
    let outputs: Vec<RunReport> = (0..2)
        .map(|i| {
            let out = dir.join(format!("report{i}.json"));
            let status = Command::new(env!("CARGO_BIN_EXE_slrep"))
                .args(["verify", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .status()
                .expect("binary runs");
            assert!(status.success(), "verify exit status {status}");
            serde_json::from_str::<RunReport>(&std::fs::read_to_string(out).unwrap()).unwrap().without_timing()
        })
        .collect();
    let same = outputs[0] == outputs[1];
    let mut t = slrep::report::Tally::new();
    t.record_with_note("two runs", if same { 0.0 } else { 1.0 }, format!("{} reports each", outputs[0].reports.len()));
    let _ = std::fs::remove_dir_all(&dir);
    vec![t.finish("verify-rerun", 0.5, SEED)]
}

fn main() -> ExitCode {
    let mut out = Outcome { unexpected: Vec::new() };

    let t = Instant::now();
    let r = run(vec![SuiteEntry::new("closed-form-vs-oracle", CheckKind::DecompositionEquivalence).trials(1000)]);
    criterion(1, "closed form / oracle equivalence", &r, t, &mut out);

    let t = Instant::now();
    let r = run(vec![SuiteEntry::new("cocycle", CheckKind::Cocycle).trials(500)]);
    criterion(2, "cocycle and action compatibility", &r, t, &mut out);

    let t = Instant::now();
    let r = run(per_series(CheckKind::Compose, SeriesId::ALL, |e| e.trials(50).points(20)));
    criterion(3, "homomorphism", &r, t, &mut out);

    let t = Instant::now();
    let r = run(per_series(CheckKind::Unitarity, SeriesId::ALL, |e| e.trials(10)));
    criterion(4, "unitarity", &r, t, &mut out);

    let t = Instant::now();
    let r = run(vec![
        SuiteEntry::new("haar-invariance", CheckKind::HaarInvariance).trials(200),
        SuiteEntry::new("modular-ratio", CheckKind::ModularRatio).trials(200),
    ]);
    criterion(5, "Haar and modular consistency", &r, t, &mut out);

    let t = Instant::now();
    let r = run(per_series(CheckKind::CharacterAlgebra, SeriesId::ALL.into_iter().filter(|id| id.is_principal_type()), |e| e.trials(500)));
    criterion(6, "character algebra", &r, t, &mut out);

    let t = Instant::now();
    let r = run(vec![SuiteEntry::new("weyl-orbits", CheckKind::WeylOrbits).trials(10_000)]);
    criterion(7, "Weyl orbits and equivalence", &r, t, &mut out);

    let t = Instant::now();
    let r = run(per_series(
        CheckKind::HalfPlane,
        [SeriesId::Sl2rDiscrete, SeriesId::Sl2rLimitDiscrete, SeriesId::Sl3rGelfandGraev],
        |e| e.trials(10_000),
    ));
    criterion(8, "half-plane preservation", &r, t, &mut out);

    let t = Instant::now();
    let r = run(per_series(CheckKind::GramPsd, kernel_series(), |e| e.sigmas(&[0.25, 0.5, 0.75])));
    criterion(9, "kernel positivity", &r, t, &mut out);

    let t = Instant::now();
    let r = determinism();
    criterion(10, "determinism", &r, t, &mut out);

    if out.unexpected.is_empty() {
        println!("acceptance: no failures beyond the {} recorded defects", KNOWN_DEFECTS.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures: {}", out.unexpected.join(", "));
        ExitCode::FAILURE
    }
}
