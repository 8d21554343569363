//! Acceptance suite: runs the bundled configs and library checks, printing
//! one pass/fail line per criterion. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use collapse_core::linalg::{HermitianOperator, StateVector, C64};
use collapse_core::sde::{coarsen_increments, cross_formulation, wiener_increments};
use collapse_lab::{load_config, run, Outcome, Overrides, Status};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MAIN_THREADS: usize = 4;
const REPEAT_THREADS: usize = 1;

struct Suite {
    scratch: tempfile::TempDir,
    runs: BTreeMap<String, (Outcome, f64)>,
}

impl Suite {
    fn configs() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    }

    fn run_with(&self, name: &str, threads: usize, tag: &str) -> Result<(Outcome, f64), String> {
        let cfg = load_config(&Self::configs().join(format!("{name}.toml"))).map_err(|e| e.to_string())?;
        let overrides = Overrides {
            threads: Some(threads),
            out: Some(self.scratch.path().join(tag).join(name)),
            quiet: true,
            ..Default::default()
        };
        let start = Instant::now();
        let outcome = run(&cfg, &overrides).map_err(|e| e.to_string())?;
        Ok((outcome, start.elapsed().as_secs_f64()))
    }

    /// Runs a config once at the main thread count and caches the outcome.
    fn get(&mut self, name: &str) -> Result<&(Outcome, f64), String> {
        if !self.runs.contains_key(name) {
            let r = self.run_with(name, MAIN_THREADS, "main")?;
            self.runs.insert(name.to_string(), r);
        }
        Ok(&self.runs[name])
    }
}

/// Pass if every named verdict exists and passed.
fn verdicts(outcome: &Outcome, names: &[&str]) -> Result<(), String> {
    for name in names {
        match outcome.verdicts.iter().find(|v| v.name == *name) {
            Some(v) if v.status == Status::Pass => {}
            Some(v) => return Err(format!("{name}: {:?} {}", v.status, v.detail)),
            None => return Err(format!("{name}: missing")),
        }
    }
    Ok(())
}

fn prefixed<'a>(outcome: &'a Outcome, prefix: &str) -> Vec<&'a str> {
    outcome
        .verdicts
        .iter()
        .filter(|v| v.name.starts_with(prefix))
        .map(|v| v.name.as_str())
        .collect()
}

fn detail(outcome: &Outcome, name: &str, key: &str) -> f64 {
    outcome
        .verdicts
        .iter()
        .find(|v| v.name == name)
        .and_then(|v| v.detail[key].as_f64())
        .unwrap_or(f64::NAN)
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(rec.iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

fn born_rule(s: &mut Suite) -> Result<String, String> {
    let (o, secs) = s.get("born_d3")?;
    verdicts(o, &["born", "classified_fraction"])?;
    let p = detail(o, "born", "p_value");
    if p.is_nan() || p <= 1e-3 {
        return Err(format!("chi-square p = {p}"));
    }
    let frac = detail(o, "classified_fraction", "fraction");
    if frac < 0.99 {
        return Err(format!("classified fraction {frac}"));
    }
    if *secs > 120.0 {
        return Err(format!("runtime {secs:.1} s"));
    }
    Ok(format!("chi-square p = {p:.3}, classified {frac}, {secs:.1} s"))
}

fn energy_martingale(s: &mut Suite) -> Result<String, String> {
    verdicts(&s.get("born_d3")?.0, &["martingale_H"]).map(|_| String::new())
}

fn projector_martingale(s: &mut Suite) -> Result<String, String> {
    let o = &s.get("born_d3")?.0;
    verdicts(o, &["martingale_Pi_0", "martingale_Pi_1", "martingale_Pi_2"]).map(|_| String::new())
}

fn variance_budget(s: &mut Suite) -> Result<String, String> {
    verdicts(&s.get("born_d3")?.0, &["variance_decay"]).map(|_| String::new())
}

fn lindblad_bridge(s: &mut Suite) -> Result<String, String> {
    let o = &s.get("lindblad_bridge")?.0;
    verdicts(o, &["lindblad_bridge"])?;
    Ok(format!("max |z| = {:.2}", detail(o, "lindblad_bridge", "max_z")))
}

fn offdiag_decay(s: &mut Suite) -> Result<String, String> {
    verdicts(&s.get("offdiag_decay_d4")?.0, &["analytic"])?;
    let o = &s.get("offdiag_decay_d2")?.0;
    let (header, rows) = read_csv(&o.out_dir.join("lindblad.csv"))?;
    let col = header.iter().position(|h| h == "offdiag_norm").ok_or("no offdiag_norm column")?;
    let at = |t: f64| {
        rows.iter()
            .find(|r| (r[0] - t).abs() < 1e-9)
            .map(|r| r[col])
            .ok_or(format!("no row at t = {t}"))
    };
    let ratio = at(8.0)? / at(0.0)?;
    let gap = (ratio - (-1.0f64).exp()).abs();
    if gap > 1e-8 {
        return Err(format!("d=2 ratio {ratio}, gap {gap:e}"));
    }
    Ok(format!("d=2 ratio {ratio:.10}"))
}

fn entropy(s: &mut Suite) -> Result<String, String> {
    let mut n = 0;
    for name in ["lindblad_bridge", "offdiag_decay_d4", "offdiag_decay_d2"] {
        verdicts(&s.get(name)?.0, &["entropy"]).map_err(|e| format!("{name}: {e}"))?;
        n += 1;
    }
    Ok(format!("{n} integrations"))
}

fn geometry(s: &mut Suite) -> Result<String, String> {
    let (o, secs) = s.get("geometry")?;
    let names = prefixed(o, "geometry_d");
    if names.len() != 4 {
        return Err(format!("expected 4 dimensions, got {}", names.len()));
    }
    verdicts(o, &names)?;
    if *secs > 60.0 {
        return Err(format!("runtime {secs:.1} s"));
    }
    Ok(format!("{secs:.1} s"))
}

fn cross_formulations(_: &mut Suite) -> Result<String, String> {
    let h = HermitianOperator::diagonal(&[0.0, 1.0]);
    let z = StateVector::new(vec![C64::new(0.8, 0.0), C64::new(0.0, 0.6)]).map_err(|e| e.to_string())?;
    let (mut coarse, mut fine, mut drift) = (0.0, 0.0, 0.0f64);
    for seed in 0..5 {
        let dw = wiener_increments(&mut ChaCha8Rng::seed_from_u64(seed), 5e-4, 10_000);
        let f = cross_formulation(&z, &h, 1.0, 5e-4, &dw).map_err(|e| e.to_string())?;
        let c = cross_formulation(&z, &h, 1.0, 1e-3, &coarsen_increments(&dw)).map_err(|e| e.to_string())?;
        coarse += c.max_gap;
        fine += f.max_gap;
        drift = drift.max(f.max_spectrum_drift).max(c.max_spectrum_drift);
    }
    let ratio = coarse / fine;
    if ratio < 1.3 || drift >= 1e-10 {
        return Err(format!("gap ratio {ratio:.3}, spectrum drift {drift:e}"));
    }
    Ok(format!("gap ratio {ratio:.3}, spectrum drift {drift:.1e}"))
}

fn composite(s: &mut Suite) -> Result<String, String> {
    let o = &s.get("eigenstate_persistence")?.0;
    verdicts(o, &["persistence_slot_0"])?;
    let purity = detail(o, "persistence_slot_0", "min_purity");
    let o = &s.get("superposition_entangles")?.0;
    verdicts(o, &["entangling_slot_0"])?;
    let frac = detail(o, "entangling_slot_0", "fraction");
    Ok(format!("min purity {purity}, entangled fraction {frac}"))
}

fn decorrelation(s: &mut Suite) -> Result<String, String> {
    verdicts(&s.get("decorrelation_d4")?.0, &["decorrelation"]).map(|_| String::new())
}

fn pointer(s: &mut Suite) -> Result<String, String> {
    verdicts(&s.get("pointer")?.0, &["born"]).map(|_| String::new())
}

fn estimates(s: &mut Suite) -> Result<String, String> {
    let o = &s.get("estimates")?.0;
    let names = prefixed(o, "estimate_");
    if names.len() < 4 {
        return Err(format!("only {} checked estimates", names.len()));
    }
    verdicts(o, &names)?;
    Ok(format!("{} estimates", names.len()))
}

fn reproducibility(s: &mut Suite) -> Result<String, String> {
    let names: Vec<String> = s.runs.keys().cloned().collect();
    let mut files = 0;
    for name in &names {
        let (repeat, _) = s.run_with(name, REPEAT_THREADS, "repeat")?;
        let main = &s.runs[name].0;
        for f in main.files.iter().filter(|f| f.ends_with(".csv")) {
            let a = std::fs::read(main.out_dir.join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(repeat.out_dir.join(f)).map_err(|e| format!("{name}/{f}: {e}"))?;
            if a != b {
                return Err(format!("{name}/{f} differs between {MAIN_THREADS} and {REPEAT_THREADS} threads"));
            }
            files += 1;
        }
    }
    Ok(format!("{files} CSV files across {} configs", names.len()))
}

type Check = fn(&mut Suite) -> Result<String, String>;

fn main() -> ExitCode {
    let checks: [(&str, Check); 14] = [
        ("born-rule collapse", born_rule),
        ("energy martingale", energy_martingale),
        ("projector martingale", projector_martingale),
        ("variance decay budget", variance_budget),
        ("lindblad bridge", lindblad_bridge),
        ("exact off-diagonal decay", offdiag_decay),
        ("entropy monotonicity", entropy),
        ("geometry identities", geometry),
        ("cross-formulation equivalence", cross_formulations),
        ("composite eigenstate persistence", composite),
        ("decorrelation", decorrelation),
        ("pointer collapse", pointer),
        ("estimates calculator", estimates),
        ("thread-count reproducibility", reproducibility),
    ];
    let mut suite = Suite {
        scratch: tempfile::tempdir().expect("temporary directory"),
        runs: BTreeMap::new(),
    };
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = check(&mut suite);
        let secs = start.elapsed().as_secs_f64();
        let (mark, note) = match result {
            Ok(note) => ("PASS", note),
            Err(why) => {
                failed += 1;
                ("FAIL", why)
            }
        };
        let note = if note.is_empty() { String::new() } else { format!(": {note}") };
        println!("criterion {:>2} {mark} {name} ({secs:.1} s){note}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
