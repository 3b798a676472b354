//! The shipped configuration files.

use std::path::Path;

use vredge::sim::config::KEYS;
use vredge::sim::SimConfig;

fn read(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn reference_file_holds_the_defaults() {
    let parsed = SimConfig::parse(&read("reference.conf")).unwrap();
    assert_eq!(parsed, SimConfig::default());
}

#[test]
fn reference_file_documents_every_key() {
    let text = read("reference.conf");
    for key in KEYS {
        let mentioned = text.lines().any(|l| {
            let l = l.trim_start_matches('#').trim();
            l.starts_with(&format!("{key}="))
        });
        assert!(mentioned, "{key} is not documented");
    }
}

#[test]
fn small_file_is_valid() {
    let c = SimConfig::parse(&read("small.conf")).unwrap();
    c.validate().unwrap();
    assert_eq!(c.seed, Some(7));
}
