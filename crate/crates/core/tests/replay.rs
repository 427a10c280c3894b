mod common;

use std::path::Path;

use common::{chat_response, dead_endpoint, fixture, TestServer};
use hlv::backend::parse_option_mapping;
use hlv::cli::{cmd_estimate, RunConfig, TableSpec};
use hlv::data::{load_dataset, DatasetFormat};
use hlv::prompting::{ChatMessage, OptionLetter, PromptText};
use sha2::{Digest, Sha256};

fn replay_config(out: &Path, cache: &Path, endpoint: &str) -> RunConfig {
    let mut c = RunConfig::load(&fixture("replay/run.toml")).unwrap();
    c.output_dir = Some(out.to_path_buf());
    c.input = Some(TableSpec::new(fixture("replay/items.jsonl"), "canonical"));
    c.backend.cache = Some(cache.to_path_buf());
    c.backend.http.endpoint = endpoint.to_string();
    c
}

/// Deterministic stand-in for a model: leans towards the item's human distribution, with a
/// small prompt-dependent wobble so every prompt gets distinct scores.
fn synthetic_answer(body: &serde_json::Value) -> String {
    let messages: Vec<ChatMessage> = serde_json::from_value(body["messages"].clone()).unwrap();
    let prompt = PromptText { messages };
    let mapping = parse_option_mapping(&prompt).expect("prompt lists the options");
    let items = load_dataset(&fixture("replay/items.jsonl"), DatasetFormat::Canonical).unwrap();
    let text = prompt.flat_text();
    let item = items.items().iter().find(|i| text.contains(&i.premise)).expect("known item");
    let human = items.distribution(&item.id).unwrap();
    let digest = Sha256::digest(prompt.digest().as_bytes());
    let mut top: Vec<(&str, f64)> = OptionLetter::ALL
        .iter()
        .map(|&l| {
            let wobble = (digest[l.index()] as f64 / 255.0 - 0.5) * 0.2;
            (l.as_str(), (0.9 * human.get(mapping.label(l)) + 0.03).ln() + wobble)
        })
        .collect();
    top.push((" A", -7.5));
    top.push(("The", -9.25));
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    chat_response(&top)
}

fn golden_name(label: &str) -> String {
    format!("golden/{}.jsonl", label.replace('/', "_"))
}

/// Re-records the response cache and golden outputs. Run with `--ignored` after an
/// intentional change to prompts or the record layout.
#[test]
#[ignore]
fn regenerate_replay_fixture() {
    let dir = fixture("replay");
    let cache = dir.join("cache.jsonl");
    let _ = std::fs::remove_file(&cache);
    let server = TestServer::start(|req, _| (200, synthetic_answer(&req.body)));
    let out = tempfile::tempdir().unwrap();
    let outcome = cmd_estimate(&replay_config(out.path(), &cache, &server.url)).unwrap();
    std::fs::create_dir_all(dir.join("golden")).unwrap();
    for cell in &outcome.manifest.cells {
        let src = out.path().join(cell.mjd_file.as_ref().unwrap());
        std::fs::copy(src, dir.join(golden_name(&cell.label))).unwrap();
    }
}

#[test]
fn recorded_cache_replays_offline_to_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache.jsonl");
    std::fs::copy(fixture("replay/cache.jsonl"), &cache).unwrap();
    let cache_before = std::fs::read(&cache).unwrap();

    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        let outcome = cmd_estimate(&replay_config(&out, &cache, &dead_endpoint())).unwrap();
        assert_eq!(outcome.network_calls, Some(0));
        assert_eq!(outcome.manifest.cells.len(), 2);
        for cell in &outcome.manifest.cells {
            assert_eq!(cell.records, 3);
            let got = std::fs::read_to_string(out.join(cell.mjd_file.as_ref().unwrap())).unwrap();
            let golden = std::fs::read_to_string(fixture(&format!("replay/{}", golden_name(&cell.label)))).unwrap();
            assert_eq!(got, golden, "cell {}", cell.label);
            outputs.push(got);
        }
    }
    assert_eq!(outputs[..2], outputs[2..]);
    assert_eq!(std::fs::read(&cache).unwrap(), cache_before, "replay must not append to the cache");
}

#[test]
fn replay_with_a_pruned_cache_is_a_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache.jsonl");
    let full = std::fs::read_to_string(fixture("replay/cache.jsonl")).unwrap();
    let kept: Vec<&str> = full.lines().skip(1).collect();
    std::fs::write(&cache, kept.join("\n") + "\n").unwrap();
    let out = tmp.path().join("out");
    let err = cmd_estimate(&replay_config(&out, &cache, &dead_endpoint())).unwrap_err();
    // one item of one cell misses its response: partial failure
    assert_eq!(err.exit_code(), hlv::cli::EXIT_PARTIAL, "{err}");
    assert!(common::temp_leftovers(&out).is_empty());
}
