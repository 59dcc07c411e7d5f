//! Runs the whole chain (data, pretraining, adapter training, evaluation) on
//! a tiny configuration. Progress and the summary go to stderr.
//!
//! The full-size run is `skadapter smoke`; this version finishes in well under
//! a minute, and at this size the IoU margin check is expected to fail.

use skadapter::config::RunConfig;
use skadapter::pipeline::run_smoke;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("feature_dim", "32"),
        ("n_blocks", "2"),
        ("n_samples", "48"),
        ("n_heldout", "8"),
        ("val_items", "4"),
        ("pretrain_epochs", "4"),
        ("adapter_epochs", "3"),
        ("steps", "20"),
    ] {
        cfg.set(k, v)?;
    }
    let dir = tempfile::tempdir()?;
    let outcome = run_smoke(&cfg, dir.path(), &mut std::io::stderr())?;
    println!("all checks passed: {} ({:.1} s)", outcome.passed(), outcome.elapsed_s);
    Ok(())
}
