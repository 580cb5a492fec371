//! Run the comparison roster on a synthetic preset and print the table.
//!
//! `cargo run --release --example roster -- [seed] [events]`

use delayfeed::harness::{generate_events, run_methods, ExperimentConfig, GeneratorConfig, MethodSpec, Preset};
use delayfeed::metrics::render_table;

fn main() -> delayfeed::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let events = generate_events(&GeneratorConfig::preset(Preset::CriteoLike).with_events(n).with_seed(seed))?;
    let cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
    let t = std::time::Instant::now();
    let runs = run_methods::<f32>(&cfg, &events, &MethodSpec::roster())?;
    let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
    print!("{}", render_table(&reports));
    for r in runs.iter().filter(|r| r.clamps.denominator + r.clamps.weight > 0) {
        eprintln!("{}: clamps {:?}", r.report.method, r.clamps);
    }
    eprintln!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
