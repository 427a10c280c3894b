mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{dead_endpoint, fixture, temp_leftovers};
use hlv::cli::{FinetuneMetrics, Manifest, SoftLabelRecord, SplitMetrics};
use hlv::data::{load_dataset, DatasetFormat};
use hlv::estimator::read_mjd_file;
use serde_json::Value;

fn hlv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlv")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hlv(args);
    assert!(
        out.status.success(),
        "hlv {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    hlv(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn items() -> PathBuf {
    fixture("replay/items.jsonl")
}

fn mock_estimate(out: &Path, backend: &str, modes: &[&str]) -> Manifest {
    let input = items();
    let mut args: Vec<String> = ["estimate", "--input", s(&input), "--backend", backend, "--out", s(out)]
        .into_iter()
        .map(String::from)
        .collect();
    args.extend(["--prompt-type".into(), "with-explanations".into()]);
    for m in modes {
        args.extend(["--mode".into(), m.to_string()]);
    }
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    Manifest::load(&out.join("manifest.json")).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["compare", "--bogus"]), 1);
}

#[test]
fn estimate_with_mock_writes_one_file_per_cell_and_is_rerunnable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let manifest = mock_estimate(&out, "mock-position-biased", &["parallel"]);
    assert_eq!(manifest.cells.len(), 1);
    let cell = &manifest.cells[0];
    let mjd_path = out.join(cell.mjd_file.as_ref().unwrap());
    let records = read_mjd_file(&mjd_path).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        // position bias cancels over the six mappings
        for p in r.mjd.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(r.flags.queries, 6 * 2);
    }
    assert!(out.join(cell.trace_file.as_ref().unwrap()).exists());
    assert!(out.join("resolved_config.toml").exists());
    let first = std::fs::read(&mjd_path).unwrap();
    let first_manifest = std::fs::read(out.join("manifest.json")).unwrap();

    mock_estimate(&out, "mock-position-biased", &["parallel"]);
    assert_eq!(std::fs::read(&mjd_path).unwrap(), first);
    assert_eq!(std::fs::read(out.join("manifest.json")).unwrap(), first_manifest);
    assert!(temp_leftovers(&out).is_empty());
}

#[test]
fn estimate_from_config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "output_dir = {:?}\n[input]\npath = {:?}\nformat = \"canonical\"\n[grid]\nprompt_types = [\"without-explanations\"]\n[backend]\nkind = \"mock-label-faithful\"\n[backend.mock]\nscores = [2.0, 1.0, 0.5]\n",
            s(&tmp.path().join("from-file")),
            s(&items())
        ),
    )
    .unwrap();
    let flagged = tmp.path().join("from-flag");
    ok(&["estimate", "--config", s(&cfg), "--out", s(&flagged)]);
    assert!(!tmp.path().join("from-file").exists());
    let manifest = Manifest::load(&flagged.join("manifest.json")).unwrap();
    assert_eq!(manifest.cells[0].label, "without-explanations/none/normalize");
    let resolved = std::fs::read_to_string(flagged.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("from-flag"));
    let records = read_mjd_file(&flagged.join(manifest.cells[0].mjd_file.as_ref().unwrap())).unwrap();
    let expect = [2.0 / 3.5, 1.0 / 3.5, 0.5 / 3.5];
    for r in records {
        for (a, b) in r.mjd.probs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    std::fs::write(tmp.path().join("bad.toml"), "[grid]\nprompt_tpyes = []\n").unwrap();
    assert_eq!(code(&["estimate", "--config", s(&tmp.path().join("bad.toml"))]), 1);
}

#[test]
fn unreachable_backend_with_cold_cache_exits_3_without_stray_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[backend.http]\nmodel = \"m\"\n[backend.http.retry]\nmax_attempts = 2\nbackoff_base_ms = 1\n").unwrap();
    let out = tmp.path().join("run");
    let c = code(&[
        "estimate",
        "--config",
        s(&cfg),
        "--input",
        s(&items()),
        "--out",
        s(&out),
        "--endpoint",
        &dead_endpoint(),
    ]);
    assert_eq!(c, 3);
    assert!(temp_leftovers(&out).is_empty());
    assert!(!out.join("mjd").exists());
    // anything that was written is complete
    if out.join("manifest.json").exists() {
        let m = Manifest::load(&out.join("manifest.json")).unwrap();
        assert!(m.cells.iter().all(|c| c.mjd_file.is_none()));
    }
}

#[test]
fn compare_identical_uniform_and_mismatched_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let line = ok(&["compare", "--reference", s(&items()), "--candidate", s(&items()), "--out", s(tmp.path())]);
    assert!(line.contains("n=3 KL=0.000 JSD=0.000 TVD=0.000 D.Corr=1.000"), "{line}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 3);
    let csv = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("# config_digest="));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let line = ok(&["compare", "--reference", s(&items()), "--candidate-format", "uniform"]);
    assert!(line.contains("D.Corr=0.000"), "{line}");

    let chaos = fixture("mini/chaos.jsonl");
    let c = code(&["compare", "--reference", s(&items()), "--candidate", s(&chaos), "--candidate-format", "chaos-nli"]);
    assert_eq!(c, 2);
    // the views of one file share ids
    let line = ok(&[
        "compare",
        "--reference",
        s(&chaos),
        "--reference-format",
        "chaos-nli",
        "--candidate",
        s(&chaos),
        "--candidate-format",
        "chaos-nli",
        "--candidate-view",
        "mnli-label",
        "--classify",
        "--epsilon",
        "1e-3",
    ]);
    assert!(line.starts_with("n=6 "), "{line}");
    assert_eq!(
        code(&["compare", "--reference", s(&items()), "--candidate", s(&items()), "--epsilon", "0.5"]),
        1
    );
}

#[test]
fn plot_scatter_zoom_and_error_lines() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["plot", "--out", s(&tmp.path().join("x.svg"))]), 1);

    let svg = tmp.path().join("scatter.svg");
    let csv = tmp.path().join("scatter.csv");
    let spec = format!("human={}", s(&items()));
    ok(&["plot", "--input", &spec, "--out", s(&svg), "--csv", s(&csv), "--zoom", "3.3"]);
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let points = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(points, 3);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);

    let svg2 = tmp.path().join("again.svg");
    ok(&["plot", "--input", &spec, "--out", s(&svg2), "--zoom", "3.3"]);
    assert_eq!(std::fs::read(&svg).unwrap(), std::fs::read(&svg2).unwrap());

    let run = tmp.path().join("run");
    let m = mock_estimate(&run, "mock-label-faithful", &["parallel"]);
    let model = format!("model={}", s(&run.join(m.cells[0].mjd_file.as_ref().unwrap())));
    let err_svg = tmp.path().join("errors.svg");
    ok(&["plot", "--input", &spec, "--input", &model, "--error-lines", "--out", s(&err_svg)]);
    let text = std::fs::read_to_string(&err_svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("error")).count(), 3);
    assert_eq!(code(&["plot", "--input", &spec, "--error-lines", "--out", s(&err_svg)]), 1);
}

#[test]
fn export_softlabels_passes_distributions_through_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let chaos = fixture("mini/chaos.jsonl");
    let out = tmp.path().join("train.jsonl");
    ok(&["export-softlabels", "--source", s(&chaos), "--source-format", "chaos-nli", "--out", s(&out)]);
    let ds = load_dataset(&chaos, DatasetFormat::ChaosNli(Default::default())).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let records: Vec<SoftLabelRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 6);
    for r in &records {
        assert_eq!(r.soft_label.probs().map(f64::to_bits), ds.distribution(&r.id).unwrap().probs().map(f64::to_bits));
        assert_eq!(r.premise, ds.item(&r.id).unwrap().premise);
    }
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);

    // one-hot view exports hard labels
    let hard = tmp.path().join("hard.jsonl");
    ok(&[
        "export-softlabels",
        "--source",
        s(&chaos),
        "--source-format",
        "chaos-nli",
        "--source-view",
        "mnli-label",
        "--out",
        s(&hard),
    ]);
    for l in std::fs::read_to_string(&hard).unwrap().lines() {
        let r: SoftLabelRecord = serde_json::from_str(l).unwrap();
        assert_eq!(r.soft_label.probs().iter().filter(|p| **p == 1.0).count(), 1);
    }

    // model distributions need item texts; ids without text are refused
    let run = tmp.path().join("run");
    let m = mock_estimate(&run, "mock-label-faithful", &["parallel"]);
    let mjd = run.join(m.cells[0].mjd_file.as_ref().unwrap());
    let soft = tmp.path().join("soft.jsonl");
    assert_eq!(code(&["export-softlabels", "--source", s(&mjd), "--out", s(&soft)]), 1);
    ok(&["export-softlabels", "--source", s(&mjd), "--items", s(&items()), "--out", s(&soft)]);
    let first: SoftLabelRecord = serde_json::from_str(std::fs::read_to_string(&soft).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(Some(first.source_digest), m.cells[0].mjd_digest);
    assert_eq!(
        code(&["export-softlabels", "--source", s(&mjd), "--items", s(&chaos), "--items-format", "chaos-nli", "--out", s(&soft)]),
        2
    );
}

fn finetune_file(dir: &Path, name: &str, source_digest: &str, kl: f64) -> PathBuf {
    let split = SplitMetrics {
        accuracy: 0.7,
        weighted_f1: 0.68,
        macro_f1: 0.66,
        kl,
        ce: 1.0 + kl,
    };
    let m = FinetuneMetrics {
        label: None,
        dev: Some(split.clone()),
        test: Some(split),
        selected_epoch: 2,
        config_digest: "cfg".into(),
        training_file_digest: "train".into(),
        source_digest: source_digest.into(),
    };
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    p
}

#[test]
fn report_joins_cells_and_finetune_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let m = mock_estimate(&run, "mock-label-faithful", &["serial", "parallel"]);
    assert_eq!(m.cells.len(), 2);
    let manifest = run.join("manifest.json");

    let table = ok(&["report", "--manifest", s(&manifest), "--reference", s(&items())]);
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("| with-")).collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(!table.contains("dev W-F1"));

    let digest = m.cells[1].mjd_digest.clone().unwrap();
    let ft = finetune_file(tmp.path(), "ft.json", &digest, 0.25);
    let human = finetune_file(tmp.path(), "human.json", "feedface", 0.2);
    let out = tmp.path().join("report");
    let table = ok(&[
        "report",
        "--manifest",
        s(&manifest),
        "--reference",
        s(&items()),
        "--finetune",
        s(&ft),
        "--finetune",
        s(&human),
        "--out",
        s(&out),
    ]);
    assert!(table.contains("dev W-F1"));
    assert!(table.lines().any(|l| l.starts_with(&format!("| {} ", m.cells[1].label)) && l.contains("0.250")), "{table}");
    assert!(table.contains("finetune:feedface"));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);
    assert!(out.join("report.csv").exists() && out.join("report.md").exists());

    let clash = finetune_file(tmp.path(), "clash.json", &digest, 0.9);
    assert_eq!(
        code(&["report", "--manifest", s(&manifest), "--reference", s(&items()), "--finetune", s(&ft), "--finetune", s(&clash)]),
        2
    );

    // a distribution file edited after the run no longer matches its recorded digest
    let mjd = run.join(m.cells[0].mjd_file.as_ref().unwrap());
    let original = std::fs::read_to_string(&mjd).unwrap();
    std::fs::write(&mjd, original.lines().take(2).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    assert_eq!(code(&["report", "--manifest", s(&manifest), "--reference", s(&items())]), 2);
    std::fs::write(&mjd, original).unwrap();

    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    doc["cells"] = Value::Array(vec![]);
    let empty = tmp.path().join("empty.json");
    std::fs::write(&empty, doc.to_string()).unwrap();
    assert_ne!(code(&["report", "--manifest", s(&empty), "--reference", s(&items())]), 0);
}

#[test]
fn ingest_aligns_filters_and_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let chaos = fixture("mini/chaos.jsonl");
    let varierr = fixture("mini/varierr.json");
    let out = tmp.path().join("aligned.jsonl");
    let rest = tmp.path().join("rest");
    let text = ok(&[
        "ingest",
        "--input",
        s(&chaos),
        "--format",
        "chaos-nli",
        "--align",
        s(&varierr),
        "--align-format",
        "varierr",
        "--explanation-count",
        "2",
        "--remainder-out-dir",
        s(&rest),
        "--split-seed",
        "7",
        "--out",
        s(&out),
    ]);
    assert!(text.contains("2 aligned items"), "{text}");
    let aligned = load_dataset(&out, DatasetFormat::Canonical).unwrap();
    assert_eq!(aligned.ids().collect::<Vec<_>>(), ["10001n", "10003n"]);
    // distributions come from the crowd file, explanations from the other side
    assert_eq!(aligned.distribution("10003n").unwrap().probs(), [0.38, 0.55, 0.07]);
    assert_eq!(aligned.explanation_set("10003n").unwrap().len(), 2);
    let provenance: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("aligned.jsonl.provenance.json")).unwrap()).unwrap();
    assert_eq!(provenance["items"], 2);
    assert_eq!(provenance["inputs"].as_object().unwrap().len(), 2);

    let dev = load_dataset(&rest.join("dev.jsonl"), DatasetFormat::Canonical).unwrap();
    let test = load_dataset(&rest.join("test.jsonl"), DatasetFormat::Canonical).unwrap();
    assert_eq!(dev.len() + test.len(), 4);
    assert!(dev.ids().chain(test.ids()).all(|id| aligned.item(id).is_none()));

    // same seed, same split
    let rest2 = tmp.path().join("rest2");
    ok(&[
        "ingest",
        "--input",
        s(&chaos),
        "--format",
        "chaos-nli",
        "--align",
        s(&varierr),
        "--align-format",
        "varierr",
        "--explanation-count",
        "2",
        "--remainder-out-dir",
        s(&rest2),
        "--split-seed",
        "7",
        "--out",
        s(&tmp.path().join("aligned2.jsonl")),
    ]);
    assert_eq!(std::fs::read(rest.join("dev.jsonl")).unwrap(), std::fs::read(rest2.join("dev.jsonl")).unwrap());

    assert_eq!(code(&["ingest", "--input", s(&chaos), "--format", "nope", "--out", s(&out)]), 1);
    assert_eq!(code(&["ingest", "--input", s(&varierr), "--out", s(&out)]), 2);
}
