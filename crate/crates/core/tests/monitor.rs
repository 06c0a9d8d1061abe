mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::Duration;
use common::{article, dead_endpoint, registry_with, HttpFixture, TestEngine};
use stw_core::monitor::{
    drain_outbox, FileSink, Monitor, Notification, NotificationKind, NotificationSink, Outcome, SinkError,
};
use stw_core::store::{NewSchedule, ScheduleMode};

fn schedule(url: &str, freq: u32, mode: ScheduleMode, country: Option<&str>) -> NewSchedule {
    NewSchedule {
        url: url.to_string(),
        post_title: None,
        frequency_days: freq,
        email: Some("watcher@example.org".into()),
        country: country.map(String::from),
        mode,
    }
}

fn owner(t: &TestEngine) -> i64 {
    t.engine.store().ensure_system_user(t.engine.now()).unwrap().id
}

#[derive(Default)]
struct MemorySink {
    fail_after: Option<usize>,
    seen: Mutex<Vec<Notification>>,
    attempts: AtomicUsize,
}

impl NotificationSink for MemorySink {
    fn deliver(&self, n: &Notification) -> Result<(), SinkError> {
        let attempt = self.attempts.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|limit| attempt >= limit) {
            return Err(SinkError::Delivery("relay refused".into()));
        }
        self.seen.lock().unwrap().push(n.clone());
        Ok(())
    }
}

#[test]
fn frequency_three_over_ten_days_runs_three_times() {
    let origin = HttpFixture::origin();
    origin.set_html("/s", &article("Steady", &["Nothing about this page ever changes from one day to the next."]));
    let t = TestEngine::new(Default::default());
    let uid = owner(&t);
    let task = t.engine.create_schedule(&schedule(&origin.url("/s"), 3, ScheduleMode::Restamp, None), uid).unwrap();
    assert_eq!(task.last_run, Some(t.engine.now()));
    let start = t.engine.now();

    let monitor = Monitor::new(t.engine.clone());
    let mut run_days = Vec::new();
    for _ in 0..10 {
        t.clock.advance(Duration::days(1));
        let report = monitor.tick().unwrap();
        // Ticking twice at one instant never runs a task twice.
        assert!(monitor.run_due().unwrap().runs.is_empty());
        for run in report.runs {
            assert!(matches!(run.outcome, Outcome::Unchanged { .. }));
            run_days.push((run.at - start).num_days());
        }
    }
    assert_eq!(run_days, [3, 6, 9]);
    assert_eq!(t.engine.store().count_stamps().unwrap(), 1);
}

#[test]
fn content_flip_on_day_six_restamps_once_and_notifies_once() {
    let origin = HttpFixture::origin();
    let before = article("Policy", &["The ministry said the new rules would take effect in the spring."]);
    let after = article("Policy", &["The ministry said the new rules would be withdrawn entirely."]);
    origin.set_html("/p", &before);
    let t = TestEngine::new(Default::default());
    let uid = owner(&t);
    t.engine.create_schedule(&schedule(&origin.url("/p"), 1, ScheduleMode::Restamp, None), uid).unwrap();
    let baseline = t.engine.store().latest_version(&origin.url("/p")).unwrap().unwrap();

    let monitor = Monitor::new(t.engine.clone());
    let sink = MemorySink::default();
    let mut restamps = Vec::new();
    for day in 1..=10 {
        if day == 6 {
            origin.set_html("/p", &after);
        }
        t.clock.advance(Duration::days(1));
        for run in monitor.tick().unwrap().runs {
            if let Outcome::Restamped { old_record, new_record, notified } = run.outcome {
                assert_eq!(old_record, Some(baseline.id));
                assert!(notified);
                restamps.push((day, new_record));
            }
        }
        drain_outbox(t.engine.store(), &sink).unwrap();
    }
    assert_eq!(restamps.len(), 1);
    assert_eq!(restamps[0].0, 6);
    assert_eq!(t.engine.store().count_stamps().unwrap(), 2);

    let seen = sink.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    let n = &seen[0];
    assert_eq!(n.kind, NotificationKind::ContentChanged);
    assert_eq!(n.to, "watcher@example.org");
    assert!(n.subject.starts_with("[StampTheWeb] "));
    let link = format!("http://stw.test/compare?old={}&new={}", baseline.id, restamps[0].1);
    assert!(n.body.contains(&link), "{}", n.body);
    assert!(t.engine.store().queued_notifications().unwrap().is_empty());

    let task = &t.engine.store().list_schedules().unwrap()[0];
    assert_eq!(task.linked_post, Some(restamps[0].1));
}

#[test]
fn country_compare_reports_differences_and_blocking() {
    let origin = HttpFixture::origin();
    let proxy = HttpFixture::proxy_for(&origin);
    origin.set_html("/c", &article("Election", &["Official turnout figures were published by the commission today."]));
    proxy.set_html("/c", &article("Election", &["Figures were withheld by the commission today."]));
    let t = TestEngine::new(registry_with(&[
        ("CN", vec![proxy.endpoint()]),
        ("IR", vec![dead_endpoint(), dead_endpoint(), dead_endpoint()]),
    ]));
    let uid = owner(&t);
    t.engine.create_schedule(&schedule(&origin.url("/c"), 2, ScheduleMode::CountryCompare, Some("CN")), uid).unwrap();
    t.engine.create_schedule(&schedule(&origin.url("/c"), 2, ScheduleMode::CountryCompare, Some("IR")), uid).unwrap();

    let monitor = Monitor::new(t.engine.clone());
    t.clock.advance(Duration::days(1));
    assert!(monitor.run_due().unwrap().runs.is_empty());
    t.clock.advance(Duration::days(1));
    let report = monitor.run_due().unwrap();
    assert_eq!(report.runs.len(), 2);
    let cn = report.runs.iter().find_map(|r| match &r.outcome {
        Outcome::CountryDiffers { country, record, notified } if country == "CN" => Some((*record, *notified)),
        _ => None,
    });
    let (record, notified) = cn.expect("CN differs");
    assert!(notified);
    let stamped = t.engine.store().get_stamp(record.unwrap()).unwrap().unwrap();
    assert!(t.engine.store().snapshot_text(&stamped).unwrap().contains("Official turnout"));
    assert!(report.runs.iter().any(|r| matches!(&r.outcome, Outcome::Blocked { country, notified: true, .. } if country == "IR")));

    let kinds: Vec<_> = t.engine.store().queued_notifications().unwrap().into_iter().map(|(_, n)| n.kind).collect();
    assert_eq!(kinds.len(), 2);
    assert!(kinds.contains(&NotificationKind::CountryDiffers));
    assert!(kinds.contains(&NotificationKind::Blocked));

    // Matching views produce no notification.
    proxy.set_html("/c", &article("Election", &["Official turnout figures were published by the commission today."]));
    t.clock.advance(Duration::days(2));
    let report = monitor.run_due().unwrap();
    assert!(report.runs.iter().any(|r| matches!(&r.outcome, Outcome::CountriesMatch { country } if country == "CN")));
    assert_eq!(t.engine.store().queued_notifications().unwrap().len(), 3);
}

#[test]
fn block_watch_and_failure_isolation() {
    let origin = HttpFixture::origin();
    origin.set_html("/ok", &article("Fine", &["This page loads without any trouble from everywhere it is tried."]));
    let open = HttpFixture::proxy_for(&origin);
    let t = TestEngine::new(registry_with(&[
        ("US", vec![open.endpoint()]),
        ("RU", vec![dead_endpoint(), dead_endpoint(), dead_endpoint()]),
    ]));
    let uid = owner(&t);
    // The first task's page disappears before its first check.
    origin.set_html("/gone", &article("Gone", &["This page will be deleted right after the baseline stamp is taken."]));
    t.engine.create_schedule(&schedule(&origin.url("/gone"), 1, ScheduleMode::Restamp, None), uid).unwrap();
    origin.set("/gone", common::Page { status: 404, content_type: "text/plain".into(), body: b"no".to_vec() });
    t.engine.create_schedule(&schedule(&origin.url("/ok"), 1, ScheduleMode::BlockWatch, Some("US")), uid).unwrap();
    t.engine.create_schedule(&schedule(&origin.url("/ok"), 1, ScheduleMode::BlockWatch, Some("RU")), uid).unwrap();

    t.clock.advance(Duration::days(1));
    let report = Monitor::new(t.engine.clone()).run_due().unwrap();
    assert_eq!(report.runs.len(), 3);
    assert_eq!(report.failures(), 1);
    assert!(matches!(report.runs[0].outcome, Outcome::Skipped { .. }));
    assert!(matches!(&report.runs[1].outcome, Outcome::NotBlocked { country, .. } if country == "US"));
    assert!(matches!(&report.runs[2].outcome, Outcome::Blocked { country, notified: true, .. } if country == "RU"));
    // A skipped run still counts as a run for scheduling.
    assert!(t.engine.store().list_schedules().unwrap().iter().all(|s| s.last_run == Some(t.engine.now())));
}

#[test]
fn schedules_reject_bad_input() {
    let t = TestEngine::new(registry_with(&[("CN", vec![dead_endpoint()])]));
    let uid = owner(&t);
    for freq in [0, 31] {
        assert!(t.engine.create_schedule(&schedule("http://a.test/", freq, ScheduleMode::BlockWatch, Some("CN")), uid).is_err());
    }
    assert!(t.engine.create_schedule(&schedule("http://a.test/", 30, ScheduleMode::BlockWatch, None), uid).is_err());
    assert!(t.engine.create_schedule(&schedule("http://a.test/", 30, ScheduleMode::BlockWatch, Some("BR")), uid).is_err());
    let mut bad_mail = schedule("http://a.test/", 1, ScheduleMode::BlockWatch, Some("CN"));
    bad_mail.email = Some("nobody".into());
    assert!(t.engine.create_schedule(&bad_mail, uid).is_err());
    assert!(t.engine.create_schedule(&schedule("http://a.test/", 30, ScheduleMode::BlockWatch, Some("cn")), uid).is_ok());
}

#[test]
fn outbox_survives_failing_sink() {
    let origin = HttpFixture::origin();
    let t = TestEngine::new(registry_with(&[("CN", vec![dead_endpoint()])]));
    let uid = owner(&t);
    origin.set_html("/x", &article("X", &["A page that is blocked in one country and watched every day."]));
    t.engine.create_schedule(&schedule(&origin.url("/x"), 1, ScheduleMode::BlockWatch, Some("CN")), uid).unwrap();
    let monitor = Monitor::new(t.engine.clone());
    for _ in 0..3 {
        t.clock.advance(Duration::days(1));
        monitor.run_due().unwrap();
    }
    assert_eq!(t.engine.store().queued_notifications().unwrap().len(), 3);

    let flaky = MemorySink { fail_after: Some(1), ..Default::default() };
    assert_eq!(drain_outbox(t.engine.store(), &flaky).unwrap(), 1);
    assert_eq!(t.engine.store().queued_notifications().unwrap().len(), 2);

    let path = t.dir.path().join("outbox/mail.ndjson");
    let sink = FileSink::new(&path).unwrap();
    assert_eq!(drain_outbox(t.engine.store(), &sink).unwrap(), 2);
    assert!(t.engine.store().queued_notifications().unwrap().is_empty());
    let written = FileSink::read_all(&path).unwrap();
    assert_eq!(written.len(), 2);
    assert!(written.iter().all(|n| n.kind == NotificationKind::Blocked));
}

#[test]
fn tick_seals_once_per_interval() {
    let origin = HttpFixture::origin();
    origin.set_html("/a", &article("A", &["First page stamped so that the sealer has something to do."]));
    let t = TestEngine::new(Default::default());
    let uid = owner(&t);
    t.engine.stamp_url(&origin.url("/a"), uid, None).unwrap();
    let monitor = Monitor::new(t.engine.clone()).with_seal_interval(Duration::hours(24));
    assert_eq!(monitor.tick().unwrap().sealed_batch, Some(1));

    origin.set_html("/b", &article("B", &["Second page stamped a little later on the very same day."]));
    t.clock.advance(Duration::hours(2));
    t.engine.stamp_url(&origin.url("/b"), uid, None).unwrap();
    assert_eq!(monitor.tick().unwrap().sealed_batch, None);
    t.clock.advance(Duration::hours(22));
    assert_eq!(monitor.tick().unwrap().sealed_batch, Some(2));
}
