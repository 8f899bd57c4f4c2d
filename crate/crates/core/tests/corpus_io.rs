use std::fs;

use radsec_core::corpus::{generate_synthetic_corpus, load_labeled_corpus, write_jsonl, LabelMap, SyntheticTemplate};
use radsec_core::weak::{weak_labels, RuleSet};
use radsec_core::{Error, SectionLabel};

#[test]
fn jsonl_roundtrip_through_loader() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&[SyntheticTemplate::default_benchmark()], 25, 9);
    let path = dir.path().join("c.jsonl");
    write_jsonl(&path, &corpus).unwrap();
    let back = load_labeled_corpus(&path, &LabelMap::default()).unwrap();
    assert_eq!(back.len(), corpus.len());
    for (a, b) in corpus.iter().zip(&back) {
        assert_eq!(a.labels, b.labels);
        let texts = |r: &radsec_core::LabeledReport| r.report.sentences.iter().map(|s| s.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(a), texts(b));
    }
}

#[test]
fn brat_directory_with_spans() {
    let dir = tempfile::tempdir().unwrap();
    let text = "EXAM: CT head.\r\nFINDINGS: No bleed.\r\nIMPRESSION:\r\nNormal.";
    fs::write(dir.path().join("n1.txt"), text).unwrap();
    // offsets refer to the CRLF text
    fs::write(
        dir.path().join("n1.ann"),
        "T1\tTechnique 0 14\tEXAM: CT head.\nT2\tFindings 16 35\tFINDINGS: No bleed.\nT3\tImpression 37 57\tIMPRESSION: Normal.\n",
    )
    .unwrap();
    let c = load_labeled_corpus(dir.path(), &LabelMap::default()).unwrap();
    use SectionLabel::*;
    // a colon followed by whitespace ends a sentence, so headers split off
    assert_eq!(c[0].report.sentences[0].text, "EXAM:");
    assert_eq!(c[0].labels, vec![Technique, Technique, Findings, Findings, Impression, Impression]);
    // the mimic spelling covers EXAM, the mgb one does not
    assert_eq!(weak_labels(&c[0].report, &RuleSet::mimic_style())[0], Technique);
    assert_eq!(weak_labels(&c[0].report, &RuleSet::mgb_style())[0], Others);
}

#[test]
fn missing_and_empty_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_labeled_corpus(dir.path(), &LabelMap::default()),
        Err(Error::EmptyCorpus)
    ));
    assert!(matches!(
        load_labeled_corpus(&dir.path().join("nope.jsonl"), &LabelMap::default()),
        Err(Error::Io { .. })
    ));
}
