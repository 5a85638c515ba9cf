mod common;

use common::*;
use synprobe::data::{load_conllu, parse_conllu, to_conllu};
use synprobe::probes_param::attach_to_previous;

#[test]
fn fixture_treebank_is_valid_and_round_trips() {
    let bank = load_conllu(&fixture_path("sample.conllu")).unwrap();
    assert!(bank.len() >= 200);
    for s in &bank.sentences {
        s.validate().unwrap();
    }
    assert_eq!(parse_conllu(&to_conllu(&bank)).unwrap(), bank);
}

#[test]
fn previous_token_baseline_is_weak_on_fixture() {
    let bank = load_conllu(&fixture_path("sample.conllu")).unwrap();
    let u = attach_to_previous(&bank).unwrap();
    assert!(u > 0.0 && u < 0.5, "{u}");
}

#[test]
fn linear_parse_probe_beats_previous_token_baseline() {
    let v = criteria::probe_sanity();
    assert!(v.pass, "{}", v.detail);
}
