mod common;

use chrono::Duration;
use common::{article, dead_endpoint, registry_with, HttpFixture, TestEngine};
use stw_core::anchor::{to_base58_address, Amount, BatchStatus, JournalLedger};
use stw_core::diff::OpKind;
use stw_core::ingest::FetchStatus;
use stw_core::stampcore::{derive_stamp_hash, extend_chain, hash_text, GENESIS};
use stw_core::{CompareTarget, EngineError};

fn owner(t: &TestEngine) -> i64 {
    t.engine.store().ensure_system_user(t.engine.now()).unwrap().id
}

#[test]
fn stamp_seal_and_verify_five_pages() {
    let origin = HttpFixture::origin();
    let t = TestEngine::new(Default::default());
    let uid = owner(&t);
    let mut ids = Vec::new();
    for i in 0..5 {
        let path = format!("/story/{i}");
        origin.set_html(&path, &article(&format!("Story {i}"), &[&format!("Paragraph number {i} of a report on the harbour expansion plans and the council vote.")]));
        let out = t.engine.stamp_url(&origin.url(&path), uid, Some(format!("post {i}"))).unwrap();
        assert!(out.created);
        ids.push(out.record.id);
        t.clock.advance(Duration::minutes(1));
    }

    // Independent chain oracle over what was stored.
    let records = t.engine.store().all_stamps().unwrap();
    let mut prev = GENESIS;
    for r in &records {
        let text = t.engine.store().snapshot_text(r).unwrap();
        assert_eq!(hash_text(&text), r.core.content_hash);
        assert_eq!(derive_stamp_hash(&r.core.content_hash, r.core.stamped_at), r.core.stamp_hash);
        assert_eq!(r.core.prev_chain, prev);
        prev = extend_chain(&prev, &r.core.stamp_hash);
        assert_eq!(r.core.chain_hash, prev);
    }

    let sealed = t.engine.seal_pending().unwrap().sealed.expect("a batch");
    assert_eq!(sealed.leaves.len(), 5);
    assert_eq!(sealed.status, BatchStatus::Anchored);
    assert_eq!(to_base58_address(&sealed.merkle_root), sealed.anchor_address);

    let entries = JournalLedger::open(t.ledger_path()).unwrap().entries().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].amount, Amount::ONE_SATOSHI);
    assert_eq!(entries[0].amount.to_string(), "0.00000001");
    assert_eq!(entries[0].address, sealed.anchor_address);

    for id in ids {
        let (report, receipt) = t.engine.verify_record(id).unwrap();
        assert!(report.overall_valid, "{id}: {:?}", report.failed_checks());
        assert_eq!(report.anchored, Some(true));
        assert_eq!(report.signature_valid, Some(true));
        // The receipt stands alone once serialized.
        let json = serde_json::to_string(&receipt).unwrap();
        let back: stw_core::receipt::Receipt = serde_json::from_str(&json).unwrap();
        assert!(back.verify(None).overall_valid);
        let edited = format!("{} tampered", back.canonical_text);
        let bad = back.verify(Some(&edited));
        assert!(!bad.overall_valid);
        assert_eq!(bad.failed_checks(), vec!["content_hash_matches"]);
    }

    // Nothing pending: sealing again makes no batch or ledger entry.
    assert!(t.engine.seal_pending().unwrap().sealed.is_none());
    assert_eq!(JournalLedger::open(t.ledger_path()).unwrap().entries().unwrap().len(), 1);
}

#[test]
fn resubmitting_identical_content_is_deduplicated() {
    let origin = HttpFixture::origin();
    origin.set_html("/same", &article("Same", &["This exact text is submitted over and over by many different users."]));
    let t = TestEngine::new(Default::default());
    let uid = owner(&t);
    let first = t.engine.stamp_url(&origin.url("/same"), uid, None).unwrap();
    for _ in 0..10 {
        t.clock.advance(Duration::hours(1));
        let again = t.engine.stamp_url(&origin.url("/same"), uid, None).unwrap();
        assert!(!again.created);
        assert_eq!(again.record, first.record);
    }
    assert_eq!(t.engine.store().count_stamps().unwrap(), 1);
}

#[test]
fn upstream_failures_surface_as_errors() {
    let origin = HttpFixture::origin();
    let t = TestEngine::new(Default::default());
    let uid = owner(&t);
    match t.engine.stamp_url(&origin.url("/nope"), uid, None) {
        Err(EngineError::Upstream { status, .. }) => assert_eq!(status, FetchStatus::HttpError(404)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(t.engine.stamp_url("gopher://x", uid, None), Err(EngineError::Input(_))));
    assert_eq!(t.engine.store().count_stamps().unwrap(), 0);
}

#[test]
fn compare_against_record_current_and_country() {
    let origin = HttpFixture::origin();
    let proxy = HttpFixture::proxy_for(&origin);
    let v1 = article("Budget", &["The council approved the budget of four million on Monday evening."]);
    let v2 = article("Budget", &["The council rejected the budget of four million on Monday evening."]);
    origin.set_html("/b", &v1);
    proxy.set_html("/b", &v2);
    let t = TestEngine::new(registry_with(&[("CN", vec![proxy.endpoint()])]));
    let uid = owner(&t);
    let old = t.engine.stamp_url(&origin.url("/b"), uid, None).unwrap().record;

    let same = t.engine.compare(old.id, &CompareTarget::Current).unwrap();
    assert!(!same.changed);
    assert_eq!(same.left.marked().count(), 0);

    let country = t.engine.compare(old.id, &CompareTarget::Country("cn".into())).unwrap();
    assert!(country.changed);
    assert!(country.new_label.starts_with("CN"));
    let deleted: Vec<_> = country.left.marked().map(|r| r.text.as_str()).collect();
    let inserted: Vec<_> = country.right.marked().map(|r| r.text.as_str()).collect();
    assert_eq!(deleted, ["approved"]);
    assert_eq!(inserted, ["rejected"]);

    origin.set_html("/b", &v2);
    t.clock.advance(Duration::days(1));
    let new = t.engine.stamp_url(&origin.url("/b"), uid, None).unwrap().record;
    let view = t.engine.compare(old.id, &CompareTarget::Record(new.id)).unwrap();
    assert!(view.changed);
    assert!(view.right.rows.iter().any(|r| r.kind == OpKind::Insert && r.text == "rejected"));
    assert_eq!(t.engine.store().versions_of(&origin.url("/b")).unwrap().len(), 2);

    assert!(matches!(
        t.engine.compare(old.id, &CompareTarget::Country("BR".into())),
        Err(EngineError::Input(_))
    ));
    assert!(matches!(t.engine.compare(999, &CompareTarget::Current), Err(EngineError::NotFound(_))));
}

#[test]
fn block_check_records_one_verdict_per_country() {
    let origin = HttpFixture::origin();
    origin.set_html("/n", &article("News", &["Reachable from some places and not from others, depending on the filter."]));
    let open = HttpFixture::proxy_for(&origin);
    let t = TestEngine::new(registry_with(&[
        ("US", vec![open.endpoint()]),
        ("CN", vec![dead_endpoint(), dead_endpoint(), dead_endpoint()]),
        ("IR", vec![dead_endpoint(), open.endpoint()]),
    ]));
    let countries: Vec<String> = ["us", "CN", "IR"].map(String::from).to_vec();
    let results = t.engine.block_check(&origin.url("/n"), &countries).unwrap();
    let verdict = |cc: &str| results.iter().find(|r| r.country == cc).unwrap().blocked;
    assert!(!verdict("US"));
    assert!(verdict("CN"));
    assert!(!verdict("IR"));

    let map = t.engine.store().block_map(&origin.url("/n")).unwrap();
    assert_eq!(map.len(), 3);
    assert!(matches!(
        t.engine.block_check(&origin.url("/n"), &["DE".to_string(), "XX".to_string()]),
        Err(EngineError::Input(_))
    ));
}
