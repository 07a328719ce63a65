use std::{fs, path::Path};

use toplink_core::toplink::{build_graph, parse_toplink};

fn corpus(kind: &str) -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus").join(kind);
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "tl"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect()
}

/// `// expect: <Class> <line>` on the first line.
fn expectation(text: &str) -> (String, usize) {
    let first = text.lines().next().unwrap();
    let rest = first.strip_prefix("// expect:").expect("invalid corpus files start with an expectation");
    let mut words = rest.split_whitespace();
    (words.next().unwrap().to_string(), words.next().unwrap().parse().unwrap())
}

#[test]
fn valid_files_parse_and_build() {
    let files = corpus("valid");
    assert!(files.len() >= 12);
    for (name, text) in files {
        let spec = parse_toplink(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        build_graph(&spec, 1).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = parse_toplink(&spec.to_string()).unwrap();
        assert_eq!(again, spec, "{name} does not round-trip");
    }
}

#[test]
fn invalid_files_report_class_and_line() {
    let files = corpus("invalid");
    assert!(files.len() >= 8);
    for (name, text) in files {
        let (class, line) = expectation(&text);
        let err = parse_toplink(&text).expect_err(&name);
        assert_eq!((err.kind.class(), err.line), (class.as_str(), line), "{name}: {err}");
    }
}
