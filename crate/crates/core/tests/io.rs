use proptest::prelude::*;
use scrubkit::corpus::Split;
use scrubkit::io::{
    manifest_report, validate_manifest, ContainerHeader, ContainerReader, ContainerWriter, LabelManifest, ManifestRow,
};

fn row(id: String, speaker: String, gender: &str, split: Split) -> ManifestRow {
    ManifestRow {
        utterance_id: id,
        speaker_id: speaker,
        gender: gender.into(),
        split,
        transcript: String::new(),
    }
}

/// Ten utterances per speaker, with the given speaker counts per class.
fn shaped_manifest(train: (usize, usize), test: (usize, usize)) -> LabelManifest {
    let mut rows = Vec::new();
    for (split, (m, f)) in [(Split::Train, train), (Split::Test, test)] {
        for (gender, count) in [("male", m), ("female", f)] {
            for s in 0..count {
                let speaker = format!("{split}-{gender}-{s}");
                for u in 0..10 {
                    rows.push(row(format!("{speaker}-{u}"), speaker.clone(), gender, split));
                }
            }
        }
    }
    LabelManifest::new(rows, None).unwrap()
}

#[test]
fn timit_shaped_manifest_passes() {
    let m = shaped_manifest((326, 136), (112, 56));
    let ids: Vec<String> = m.rows().iter().map(|r| r.utterance_id.clone()).collect();
    let report = manifest_report(&m, ids.iter().map(String::as_str));
    assert!(report.ok());
    assert_eq!((report.n_train, report.n_test), (4620, 1680));
    assert_eq!(report.balance["train"]["male"].speakers, 326);
    assert_eq!(report.balance["train"]["female"].speakers, 136);
    assert_eq!(report.balance["test"]["male"].speakers, 112);
    assert_eq!(report.balance["test"]["female"].speakers, 56);
    assert!(report.summary().contains("test: female 560 utt / 56 spk, male 1120 utt / 112 spk"));
    // pure: same inputs, same report
    assert_eq!(report, manifest_report(&m, ids.iter().map(String::as_str)));
}

#[test]
fn validate_against_container() {
    let m = shaped_manifest((2, 2), (1, 1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.scrb");
    let mut ids: Vec<String> = m.rows().iter().map(|r| r.utterance_id.clone()).collect();
    ids.pop();
    ids.push("stray".into());
    let mut w = ContainerWriter::create(&path, ContainerHeader::new(2, 1, ids.len(), serde_json::json!({}))).unwrap();
    for id in &ids {
        w.write_raw(id, 0, &[0.5, -1.0]).unwrap();
    }
    w.finish().unwrap();
    let report = validate_manifest(&m, &path).unwrap();
    assert_eq!(report.missing_from_manifest, vec!["stray"]);
    assert_eq!(report.missing_from_container, vec!["test-female-0-9"]);
    assert!(!report.ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn container_round_trip(
        h in 1usize..10,
        layers in 1usize..4,
        utts in prop::collection::vec((1usize..12, "[a-z0-9_\\-]{1,12}"), 1..6),
        bits in prop::collection::vec(any::<u32>(), 1..64),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.scrb");
        let meta = serde_json::json!({ "model": "x", "layers": layers });
        let header = ContainerHeader::new(h, layers, utts.len(), meta.clone());
        let finite = |i: usize| {
            let v = f32::from_bits(bits[i % bits.len()] ^ i as u32);
            if v.is_finite() { v } else { i as f32 }
        };
        let mut expected = Vec::new();
        let mut w = ContainerWriter::create(&path, header.clone()).unwrap();
        let mut k = 0;
        for (u, (t, id)) in utts.iter().enumerate() {
            let id = format!("{id}{u}");
            for l in 0..layers {
                let data: Vec<f32> = (0..t * h).map(|_| { k += 1; finite(k) }).collect();
                w.write_raw(&id, l as u32, &data).unwrap();
                expected.push((id.clone(), l as u32, *t, data));
            }
        }
        w.finish().unwrap();

        let r = ContainerReader::open(&path).unwrap();
        prop_assert_eq!(r.header(), &header);
        let got: Vec<_> = r.map(|rec| rec.unwrap()).collect();
        prop_assert_eq!(got.len(), expected.len());
        for (rec, (id, l, t, data)) in got.iter().zip(&expected) {
            prop_assert_eq!(&rec.utterance_id, id);
            prop_assert_eq!(rec.layer, *l);
            prop_assert_eq!(rec.frames, *t);
            prop_assert!(rec.data.iter().zip(data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
