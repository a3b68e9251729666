//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line straight to stderr, bypassing test output capture.
//! Criteria run in sequence inside a single test so that the timed gradient
//! suite never competes with training for cores.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use vortcast::ablation::{run_study, StudyConfig, StudyReport};
use vortcast::evaluate::theorem_bound;
use vortcast::model::Variant;
use vortcast::selftest::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn say(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
    let _ = err.flush();
}

struct Verdicts(Vec<(String, bool)>);

impl Verdicts {
    fn record(&mut self, label: &str, passed: bool, detail: &str) {
        say(&format!("{} {label}: {detail}", if passed { "PASS" } else { "FAIL" }));
        self.0.push((label.to_string(), passed));
    }
}

fn autodiff(v: &mut Verdicts) {
    let t = Instant::now();
    let ops = run_op_checks(&SEEDS).unwrap();
    let op_worst = ops.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    let op_fail: Vec<String> = ops.iter().filter(|c| !c.report.passed(OP_TOLERANCE)).map(|c| format!("{}@{}", c.op, c.seed)).collect();
    let mut composed_worst: f64 = 0.0;
    let mut composed_fail = Vec::new();
    for seed in SEEDS {
        let r = composed_model_check(seed).unwrap();
        composed_worst = composed_worst.max(r.max_rel_error);
        if !r.passed(MODEL_TOLERANCE) {
            composed_fail.push(seed);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let passed = op_fail.is_empty() && composed_fail.is_empty() && secs < 120.0;
    v.record(
        "criterion 1 autodiff soundness",
        passed,
        &format!(
            "{} op cases x {} seeds worst {op_worst:.2e} < 1e-4 (failing {op_fail:?}); composed model worst {composed_worst:.2e} < 1e-3 \
             (failing seeds {composed_fail:?}); {secs:.1}s < 120s",
            ops.len() / SEEDS.len(),
            SEEDS.len()
        ),
    );
}

fn solver(v: &mut Verdicts) {
    let tg = taylor_green_error(64, 1e-2, 1e-3, 1.0).unwrap();
    let (de, dz) = inviscid_drift(64, 200).unwrap();
    let ratio = rk4_error_ratio(32).unwrap();
    v.record(
        "criterion 2 solver correctness",
        tg < 1e-6 && de < 1e-5 && dz < 1e-5 && (13.0..=18.0).contains(&ratio),
        &format!(
            "taylor-green max error at t=1 {tg:.2e} < 1e-6; inviscid drift energy {de:.2e} enstrophy {dz:.2e} < 1e-5; rk4 ratio {ratio:.3} in [13, 18]"
        ),
    );
}

fn spectral(v: &mut Verdicts) {
    let parseval = parseval_error(64, 1).unwrap();
    let total = spectrum_total_error(64, 2).unwrap();
    let (idem, ortho) = projection_errors(64, 3).unwrap();
    v.record(
        "criterion 3 spectral bookkeeping",
        parseval < 1e-12 && total < 1e-6 && idem < 1e-10 && ortho < 1e-10,
        &format!("parseval {parseval:.2e} < 1e-12; totalization {total:.2e} < 1e-6; projection idempotence {idem:.2e} orthogonality {ortho:.2e} < 1e-10"),
    );
}

fn theorem(v: &mut Verdicts) {
    let check = constructed_bound_check(64, 1.2, 0.01, 50, 16.0, 0).unwrap();
    let violations = check.satisfied.iter().filter(|s| !**s).count();
    let closed = theorem_bound(2.0, 1.0, 0.0, 3);
    let mono = bound_monotonicity_violations(10_000, 2024);
    v.record(
        "criterion 6 theorem probe",
        check.eps0 == 0.0 && check.measured.len() == 50 && violations == 0 && closed == 7.0 && mono == 0,
        &format!(
            "constructed system G=1.2 delta=0.01 eps0={} M={}: {violations} violations; theorem_bound(2,1,0,3) = {closed} (== 7); \
             {mono} monotonicity violations in 40000 comparisons",
            check.eps0,
            check.measured.len()
        ),
    );
}

fn metrics(v: &mut Verdicts) {
    let checks = metric_unit_checks().unwrap();
    let detail: Vec<String> = checks.iter().map(|c| format!("{} = {}", c.name, c.value)).collect();
    v.record("criterion 8 metric unit cases", checks.iter().all(|c| c.passed), &detail.join("; "));
}

fn cli(args: &[&str]) -> i32 {
    vortcast::cli::dispatch(std::iter::once("vortcast").chain(args.iter().copied()))
}

fn pipeline(root: &Path) -> Vec<i32> {
    let (gen, run, eval) = (root.join("generate"), root.join("train"), root.join("eval"));
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    let ckpt = s(&run.join("best.ckpt"));
    vec![
        cli(&["generate", "--regime", "decaying", "--n", "64", "--trajectories", "3", "--seed", "42", "--out", &s(&gen)]),
        cli(&["train", "--data", &s(&gen), "--epochs", "2", "--seed", "42", "--set", "model.widths=4,8,16", "--out", &s(&run)]),
        cli(&["eval", "--checkpoint", &ckpt, "--data", &s(&gen), "--steps", "50", "--format", "csv,json", "--out", &s(&eval)]),
    ]
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(v: &mut Verdicts) {
    let base = tempfile::tempdir().unwrap();
    let live = base.path().join("run");
    let first_codes = pipeline(&live);
    let first = base.path().join("first");
    std::fs::rename(&live, &first).unwrap();
    let second_codes = pipeline(&live);
    let (a, b) = (tree(&first), tree(&live));
    let differing: Vec<String> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
    let same_names = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0);
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    v.record(
        "criterion 7 determinism",
        first_codes == [0, 0, 0] && second_codes == [0, 0, 0] && same_names && differing.is_empty() && !a.is_empty(),
        &format!(
            "generate/train/eval exit codes {first_codes:?} then {second_codes:?}; {} files ({bytes} bytes) per run, \
             identical file sets: {same_names}, differing files: {differing:?}",
            a.len()
        ),
    );
}

fn ablation(v: &mut Verdicts) -> StudyReport {
    let config = StudyConfig::default();
    say(&format!(
        "ablation study: {} trajectories x {} frames at n = {}, {} epochs, seeds {:?}, widths {:?}",
        config.trajectories, config.frames, config.n, config.train.epochs, config.seeds, config.model.widths
    ));
    let dir = tempfile::tempdir().unwrap();
    let report = run_study(&config, dir.path(), &mut |line| say(&format!("  {line}"))).unwrap();
    say(&format!("ablation results:\n{}", report.to_csv().trim_end()));

    let seeds = report.seeds();
    let val: Vec<bool> = seeds.iter().map(|&s| report.val_full_beats_no_hds(s).unwrap()).collect();
    let roll: Vec<bool> = seeds.iter().map(|&s| report.rollout_ordering_holds(s).unwrap()).collect();
    let roll_hits = roll.iter().filter(|&&b| b).count();
    let detail_roll: Vec<String> = seeds
        .iter()
        .map(|&s| {
            let r = |var| report.get(var, s).unwrap().rollout_mean_rel_l2;
            format!(
                "seed {s}: full {:.4} no_mg {:.4} high_only {:.4} low_only {:.4} no_hds {:.4}",
                r(Variant::Full),
                r(Variant::NoMg),
                r(Variant::HighOnly),
                r(Variant::LowOnly),
                r(Variant::NoHds)
            )
        })
        .collect();
    let detail_val: Vec<String> = seeds
        .iter()
        .map(|&s| {
            format!(
                "seed {s}: full {:.5} vs no_hds {:.5}",
                report.get(Variant::Full, s).unwrap().best_val_loss,
                report.get(Variant::NoHds, s).unwrap().best_val_loss
            )
        })
        .collect();
    v.record(
        "criterion 4 ablation ordering",
        val.iter().all(|&b| b) && roll_hits * 3 >= 2 * seeds.len(),
        &format!(
            "validation MSE full < no_hds on every seed: {val:?} ({}); rollout full < no_mg < each of high_only, low_only, no_hds \
             on {roll_hits}/{} seeds, need 2/3 ({})",
            detail_val.join(", "),
            seeds.len(),
            detail_roll.join("; ")
        ),
    );

    let minutes = report.total_secs / 60.0;
    if report.threads >= 8 {
        v.record("criterion 4 runtime budget", minutes < 60.0, &format!("{minutes:.1} min on {} worker threads < 60 min", report.threads));
    } else {
        say(&format!(
            "NOT ASSESSED criterion 4 runtime budget: {minutes:.1} min measured on {} worker thread(s); the 60 min budget is stated for 8 cores",
            report.threads
        ));
    }
    report
}

fn spectral_bias(v: &mut Verdicts, report: &StudyReport) {
    let seeds = report.seeds();
    let wins: Vec<bool> = seeds.iter().map(|&s| report.spectral_full_beats_no_hds(s).unwrap()).collect();
    let hits = wins.iter().filter(|&&b| b).count();
    let detail: Vec<String> = seeds
        .iter()
        .map(|&s| {
            format!(
                "seed {s}: full {:.4} vs no_hds {:.4}",
                report.get(Variant::Full, s).unwrap().spectral_error_high,
                report.get(Variant::NoHds, s).unwrap().spectral_error_high
            )
        })
        .collect();
    v.record(
        "criterion 5 spectral-bias diagnostic",
        hits * 3 >= 2 * seeds.len(),
        &format!(
            "mean |normalized spectral error| over k > n/4 at step 10, full < no_hds on {hits}/{} seeds, need 2/3 ({})",
            seeds.len(),
            detail.join(", ")
        ),
    );
}

#[test]
fn acceptance() {
    let mut v = Verdicts(Vec::new());
    autodiff(&mut v);
    solver(&mut v);
    spectral(&mut v);
    theorem(&mut v);
    metrics(&mut v);
    determinism(&mut v);
    let report = ablation(&mut v);
    spectral_bias(&mut v, &report);

    let failed: Vec<&str> = v.0.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
    say(&format!("acceptance: {} of {} assessed criteria passed", v.0.len() - failed.len(), v.0.len()));
    assert!(failed.is_empty(), "failed: {failed:?}");
}
