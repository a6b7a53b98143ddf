use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_veilgate");
const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/fixture_corpus.json");

fn run(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .env_remove("VEILGATE_STORE_KEY")
        .env_remove("VEILGATE_LOG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str], stdin: &str) -> String {
    let out = run(args, stdin);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn extract_prints_items() {
    let out = ok(&["extract"], "call me at 13800138000, code 482913 expires soon");
    let items: Value = serde_json::from_str(&out).unwrap();
    let texts: Vec<&str> = items
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["original_text"].as_str().unwrap())
        .collect();
    assert!(texts.contains(&"13800138000"), "{texts:?}");
}

#[test]
fn sanitize_then_restore_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let input = dir.path().join("in.txt");
    let masked = dir.path().join("masked.txt");
    let restored = dir.path().join("restored.txt");
    let text = "Mail bob@example.com or call 13912345678.\nThanks!";
    std::fs::write(&input, text).unwrap();

    ok(
        &[
            "sanitize",
            "--user",
            "u1",
            "--store",
            p(&store),
            "--in",
            p(&input),
            "--out",
            p(&masked),
        ],
        "",
    );
    let m = std::fs::read_to_string(&masked).unwrap();
    assert_eq!(m, "Mail <EMAIL_1> or call <PHONE_NUMBER_1>.\nThanks!");

    ok(
        &[
            "restore",
            "--user",
            "u1",
            "--store",
            p(&store),
            "--in",
            p(&masked),
            "--out",
            p(&restored),
        ],
        "",
    );
    assert_eq!(std::fs::read_to_string(&restored).unwrap(), text);

    // Another user sees nothing of u1's mappings.
    let out = run(&["restore", "--user", "u2", "--store", p(&store)], &m);
    assert_eq!(String::from_utf8_lossy(&out.stdout), m);
}

#[test]
fn restore_reports_unresolved_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["restore", "--user", "u", "--store", p(dir.path())],
        "hi <EMAIL_4> and <EMAIL_4>",
    );
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "hi <EMAIL_4> and <EMAIL_4>");
    let records: Vec<Value> = String::from_utf8_lossy(&out.stderr)
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .filter(|v: &Value| v["event"] == "unresolved_placeholder")
        .collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["placeholder"], "<EMAIL_4>");
    assert_eq!(records[0]["user_id"], "u");
}

#[test]
fn sanitize_strategies_and_levels() {
    let text = "key sk-abcdef0123456789abcdef01 and phone 13800138000";
    assert_eq!(
        ok(&["sanitize", "--user", "u", "--strategy", "irreversible"], text),
        "key *** and phone ***"
    );
    assert_eq!(
        ok(&["sanitize", "--user", "u", "--strategy", "untyped"], text),
        "key <Mask_1> and phone <Mask_2>"
    );
    assert_eq!(ok(&["sanitize", "--user", "u", "--strategy", "none"], text), text);
    assert_eq!(
        ok(
            &[
                "sanitize",
                "--user",
                "u",
                "--strategy",
                "irreversible",
                "--mask-level",
                "PL4"
            ],
            text
        ),
        "key *** and phone 13800138000"
    );
}

#[test]
fn sanitize_refuses_placeholder_lookalikes() {
    let out = run(
        &["sanitize", "--user", "u", "--strategy", "irreversible"],
        "already <PHONE_NUMBER_2> here",
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("placeholder"));
}

#[test]
fn sanitize_json_record_lists_skipped_items() {
    let dir = tempfile::tempdir().unwrap();
    let items = dir.path().join("items.json");
    std::fs::write(
        &items,
        r#"[{"original_text": "Alice", "privacy_type": "Real Name", "privacy_level": "PL2"},
            {"original_text": "nowhere", "privacy_type": "Address", "privacy_level": "PL2"}]"#,
    )
    .unwrap();
    let out = run(
        &[
            "sanitize",
            "--user",
            "u",
            "--strategy",
            "untyped",
            "--items",
            p(&items),
            "--json",
        ],
        "Alice says hi",
    );
    assert!(out.status.success());
    let record: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["text"], "<Mask_1> says hi");
    assert_eq!(record["skipped"].as_array().unwrap().len(), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped_item"));
}

#[test]
fn score_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.json");
    let gold = dir.path().join("gold.json");
    let report = dir.path().join("report.json");
    std::fs::write(
        &pred,
        r#"[{"original_text": "13800138000", "privacy_type": "Phone Number", "privacy_level": "PL2"}]"#,
    )
    .unwrap();
    std::fs::write(
        &gold,
        r#"[{"original_text": "13800138000", "privacy_type": "Phone Number", "privacy_level": "PL2"},
            {"original_text": "482913", "privacy_type": "Verification Code", "privacy_level": "PL4"}]"#,
    )
    .unwrap();
    let table = ok(
        &["score", "--pred", p(&pred), "--gold", p(&gold), "--out", p(&report)],
        "",
    );
    assert!(table.contains("overall"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["overall"]["precision"], 1.0);
    assert_eq!(v["overall"]["recall"], 0.5);
    assert_eq!(v["per_level"]["PL4"]["recall"], 0.0);
    assert_eq!(v["per_type"]["Phone Number"]["f1"], 1.0);
}

#[test]
fn score_rejects_mismatched_message_counts() {
    let out = run(&["score", "--pred", FIXTURE, "--gold", FIXTURE], "");
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let two = dir.path().join("two.json");
    std::fs::write(&two, "[[], []]").unwrap();
    assert!(!run(&["score", "--pred", p(&two), "--gold", FIXTURE], "")
        .status
        .success());
}

#[test]
fn stats_on_fixture() {
    let v: Value = serde_json::from_str(&ok(&["stats", "--corpus", FIXTURE, "--json"], "")).unwrap();
    assert_eq!(v["n_users"], 8);
    assert_eq!(
        v["privacy_instances"],
        v["pl2"].as_u64().unwrap() + v["pl3"].as_u64().unwrap() + v["pl4"].as_u64().unwrap()
    );
    assert!(ok(&["stats", "--corpus", FIXTURE], "").contains("PL4"));
}

#[test]
fn simulate_and_bench_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.json");
    let table = ok(
        &[
            "simulate",
            "--corpus",
            FIXTURE,
            "--strategies",
            "none,typed",
            "--out",
            p(&sim),
        ],
        "",
    );
    assert!(table.contains("typed"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&sim).unwrap()).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 2);

    let bench = dir.path().join("bench.json");
    let table = ok(
        &[
            "bench-extract",
            "--corpus",
            FIXTURE,
            "--extractor",
            "gold",
            "--out",
            p(&bench),
        ],
        "",
    );
    assert!(table.contains("gold") || table.contains("F1"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&bench).unwrap()).unwrap();
    assert_eq!(v["scores"]["overall"]["f1"], 1.0);
    assert_eq!(v["n_failed"], 0);
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "mask_level = \"PL1\"\n").unwrap();
    let out = run(&["--config", p(&cfg), "stats", "--corpus", FIXTURE], "");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
