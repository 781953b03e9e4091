//! Runs the component ablation and a three-point delta comparison over
//! several seeds and prints one line per seed.
//!
//! `SPEC` and `CONFIG` environment variables may hold JSON objects that
//! override fields of the default synthetic spec and pipeline config.

use nhac::pipeline::{ablation, delta_sweep, PipelineConfig};
use nhac::{generate, SyntheticSpec};
use serde_json::Value;

fn patched<T: serde::Serialize + serde::de::DeserializeOwned>(base: T, var: &str) -> T {
    let Ok(text) = std::env::var(var) else { return base };
    let mut v = serde_json::to_value(base).unwrap();
    let patch: Value = serde_json::from_str(&text).expect("patch is JSON");
    for (k, x) in patch.as_object().expect("patch is an object") {
        v[k] = x.clone();
    }
    serde_json::from_value(v).expect("patched value is valid")
}

fn main() -> nhac::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let (mut wins_full, mut wins_gtm, mut wins_delta) = (0, 0, 0);
    for seed in 0..seeds {
        let spec = patched(SyntheticSpec { seed, ..SyntheticSpec::default() }, "SPEC");
        let data = generate(&spec)?;
        let config = patched(PipelineConfig { seed, ..PipelineConfig::default() }, "CONFIG");
        let t = std::time::Instant::now();
        let reports = ablation(&config, &data)?;
        let f1: Vec<f64> = reports.iter().map(|r| r.final_row().pair_f1.unwrap_or(f64::NAN)).collect();
        let cells: Vec<String> = reports
            .iter()
            .zip(&f1)
            .map(|(r, f)| format!("{:.3}/{:.3}/{:.3}", f, r.rows[0].map.unwrap_or(f64::NAN), r.best_map().unwrap_or(f64::NAN)))
            .collect();
        wins_full += (f1[3] >= f1[0]) as u32;
        wins_gtm += (f1[1] >= f1[0]) as u32;
        let sweep = delta_sweep(&config, &data, &[0.1, 0.5, 0.9])?;
        let maps: Vec<f64> = sweep.iter().map(|s| s.best_map.unwrap_or(f64::NAN)).collect();
        wins_delta += (maps[1] >= maps[0] && maps[1] >= maps[2]) as u32;
        println!(
            "seed {seed}: {} | delta mAP {:.3} {:.3} {:.3} | {:.1}s",
            cells.join(" "),
            maps[0],
            maps[1],
            maps[2],
            t.elapsed().as_secs_f64()
        );
    }
    println!("full>=base {wins_full}/{seeds}  gtm>=base {wins_gtm}/{seeds}  delta0.5 best {wins_delta}/{seeds}");
    Ok(())
}
