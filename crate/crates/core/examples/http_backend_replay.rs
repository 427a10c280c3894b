//! Run an estimation grid against a chat-completion endpoint through a response cache. With
//! the checked-in cache every prompt is a hit, so this runs offline and prints the
//! resulting distributions; point `--endpoint` at a live server to fill a cold cache.
//!
//! cargo run --example http_backend_replay [ENDPOINT]

use std::path::PathBuf;

use hlv::cli::{cmd_estimate, RunConfig, TableSpec};
use hlv::estimator::read_mjd_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay");
    let work = std::env::temp_dir().join(format!("hlv-replay-{}", std::process::id()));
    std::fs::create_dir_all(&work)?;
    let cache = work.join("cache.jsonl");
    std::fs::copy(fixture.join("cache.jsonl"), &cache)?;

    let mut config = RunConfig::load(&fixture.join("run.toml"))?;
    config.output_dir = Some(work.join("out"));
    config.input = Some(TableSpec::new(fixture.join("items.jsonl"), "canonical"));
    config.backend.cache = Some(cache);
    if let Some(endpoint) = std::env::args().nth(1) {
        config.backend.http.endpoint = endpoint;
    }

    let outcome = cmd_estimate(&config)?;
    println!("{}", outcome.summary().trim_end());
    for cell in &outcome.manifest.cells {
        println!("{}", cell.label);
        for r in read_mjd_file(&outcome.output_dir.join(cell.mjd_file.as_ref().unwrap()))? {
            println!("  {r}");
        }
    }
    std::fs::remove_dir_all(&work)?;
    Ok(())
}
