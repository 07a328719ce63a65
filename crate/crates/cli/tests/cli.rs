use std::{
    fs,
    path::{Path, PathBuf},
    process::{Command, Output},
};

fn toplink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toplink")).args(args).env_remove("TOPLINK_LOG").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_reports_the_graph() {
    let o = toplink(&["validate", scenarios().join("base6.tl").to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("6 nodes, 10 edges, strongly connected\n"), "{out}");
    assert!(out.contains("  n3: out 2 in 2"), "{out}");
}

#[test]
fn validate_rejects_bad_input_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "bad.tl", "nodes { a, b }\ntopology rnig;\n");
    let o = toplink(&["validate", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.tl:2"), "{err}");
    let o = toplink(&["validate", tmp.path().join("missing.tl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bpd_trace_on_a_ring() {
    let o = toplink(&["bpd-trace", scenarios().join("ring6.tl").to_str().unwrap(), "--thresh", "3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("threshold 3\n"));
    assert!(out.contains("as receiver (BoundedPath)"), "{out}");
    assert!(out.contains("(bounded)"), "{out}");
}

#[test]
fn bpd_trace_without_work() {
    // already within the default threshold of 1 for two peers
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "pair.tl", "topology ring;\nnodes { a, b }\n");
    let out = stdout(&toplink(&["bpd-trace", f.to_str().unwrap()]));
    assert!(out.contains("  no updates\n"), "{out}");
}

#[test]
fn bpd_trace_threshold_below_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "w.tl", "topology custom;\nnodes { a, b }\nlinks { a -> b weight 3; b -> a; }\n");
    let o = toplink(&["bpd-trace", f.to_str().unwrap(), "--thresh", "2"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("threshold") && err.contains('3'), "{err}");
}

#[test]
fn bpd_trace_heals_a_partition() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "d.tl", "topology custom;\nnodes { a, b, c, d }\nlinks { a -> b; b -> a; c -> d; d -> c; }\n");
    let o = toplink(&["bpd-trace", f.to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("(Partition)") && out.contains("(bounded)"), "{out}");
}

#[test]
fn run_writes_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = scenarios().join("crash1_bpd.scn");
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let o = toplink(&["run", scn.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("final mean_de 0.833333"), "{}", stdout(&o));
        runs.push(["rounds.csv", "nodes.csv", "summary.csv"].map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn run_rejects_bad_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let base = scenarios().join("base6.tl");
    let f = write(tmp.path(), "s.scn", &format!("topology = {}\nstrategy = bpd\nrounds = ten\n", base.display()));
    let o = toplink(&["run", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rounds"));
}

#[test]
fn manifest_lists_groups() {
    let out = stdout(&toplink(&["manifest", scenarios().join("base6.tl").to_str().unwrap()]));
    assert!(out.contains("g-n1"), "{out}");
}

#[test]
fn run_flags_a_disconnected_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "d.tl", "topology custom;\nnodes { a, b, c, d }\nlinks { a -> b; b -> a; c -> d; d -> c; }\n");
    let f = write(tmp.path(), "d.scn", "topology = d.tl\nstrategy = bpd\nrounds = 20\npartition_repair = off\n");
    let o = toplink(&["run", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    // outputs are still written next to the scenario
    assert!(tmp.path().join("d.out/summary.csv").exists());
}
