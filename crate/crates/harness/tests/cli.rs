use std::path::Path;
use std::process::{Command, Output};

fn mvdit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvdit")).args(args).current_dir(cwd).output().unwrap()
}

fn error_line(o: &Output) -> String {
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

#[test]
fn errors_are_single_categorized_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let line = error_line(&mvdit(&["--set", "no_such_key=1", "gen-scene"], d));
    assert!(line.starts_with("error: config: "), "{line}");
    assert!(line.contains("no_such_key"));

    let line = error_line(&mvdit(&["--set", "n_views=3", "gen-scene"], d));
    assert!(line.starts_with("error: scene: "), "{line}");

    std::fs::write(d.join("bad.bin"), b"NOTACKPT").unwrap();
    let line = error_line(&mvdit(&["--set", "checkpoint=bad.bin", "--set", "dataset=.", "sample"], d));
    assert!(line.starts_with("error: format: "), "{line}");

    let line = error_line(&mvdit(&["train"], d));
    assert!(line.starts_with("error: config: "), "{line}");

    std::fs::write(d.join("run.cfg"), "dim = 32\nthis line has no equals sign\n").unwrap();
    let line = error_line(&mvdit(&["--config", "run.cfg", "train"], d));
    assert!(line.starts_with("error: config: ") && line.contains('2'), "{line}");
}

#[test]
fn gen_scene_then_oracle_re() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = mvdit(&["--set", "n_views=6", "--set", "n_scenes=1", "--out", "scene", "gen-scene"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = mvdit(&["--out", "re", "eval-re", "scene"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("mean RE "), "{out}");
    assert!(d.join("re/re.csv").is_file());
}
