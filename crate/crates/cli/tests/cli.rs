use std::process::Command;

fn flowlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowlab"))
}

#[test]
fn extract_prints_header_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let page = dir.path().join("p.html");
    std::fs::write(&page, "<html><script>eval('x')</script></html>").unwrap();
    let out = flowlab().args(["extract", "--content-type", "text/html"]).arg(&page).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 59);
    assert_eq!(lines[1].split(',').count(), 59);
}

#[test]
fn generate_then_pipeline_and_train() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let gen = flowlab().args(["--seed", "3", "synthweb", "generate", "--dir"]).arg(&run).output().unwrap();
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let cfg = run.join("pipeline.toml");

    let out = flowlab().arg("--config").arg(&cfg).arg("pipeline").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["records"], summary["synth_requests"]);

    let model = dir.path().join("model.json");
    let out = flowlab().arg("--config").arg(&cfg).args(["train", "--model"]).arg(&model).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model.exists());
}

#[test]
fn pipeline_without_config_fails() {
    let out = flowlab().arg("pipeline").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}
