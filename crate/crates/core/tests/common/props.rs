//! Property checks, shared by the `properties` and `acceptance` targets.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use zeroshot_spam::corpus::{Category, EmailContent, GoldLabel};
use zeroshot_spam::metrics::{accuracy, balanced_accuracy, f1, precision, recall, ConfusionMatrix};
use zeroshot_spam::pipeline::{parse_label, Label};
use zeroshot_spam::prep::{sanitize_delimiters, truncate_body, Estimator, TruncationPolicy};

pub const CASES: u32 = 256;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn email(subject: String, body: String) -> EmailContent {
    EmailContent {
        id: "p".into(),
        category: Category::Spam,
        subject,
        body,
        gold_label: GoldLabel::Spam,
    }
}

/// Text heavy in whitespace and `#`, with some multi-byte scalars.
fn text(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            4 => prop::char::range('a', 'z'),
            2 => Just(' '),
            1 => Just('\n'),
            1 => Just('#'),
            1 => any::<char>(),
        ],
        0..max,
    )
    .prop_map(|v| v.into_iter().collect())
}

fn estimator() -> impl Strategy<Value = Estimator> {
    prop_oneof![Just(Estimator::CharsDiv4), Just(Estimator::WhitespaceWords)]
}

pub fn truncation_budget_safety(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(text(40), text(3000), 1usize..700, estimator()),
            |(s, b, budget, est)| {
                let policy = TruncationPolicy::new(budget, est.clone()).unwrap();
                let p = truncate_body(&email(s, b.clone()), &policy);
                let remaining = budget.saturating_sub(est.estimate(&p.subject));
                prop_assert!(est.estimate(&p.body) <= remaining);
                let clean = sanitize_delimiters(&b);
                prop_assert!(clean.starts_with(&p.body));
                prop_assert_eq!(p.truncated, p.body != clean);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn truncation_idempotence(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(text(40), text(3000), 1usize..700, estimator()),
            |(s, b, budget, est)| {
                let policy = TruncationPolicy::new(budget, est).unwrap();
                let once = truncate_body(&email(s, b), &policy);
                let twice = truncate_body(&email(once.subject.clone(), once.body.clone()), &policy);
                prop_assert_eq!(&twice.subject, &once.subject);
                prop_assert_eq!(&twice.body, &once.body);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn truncation_monotonicity(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(text(40), text(3000), 1usize..700, 0usize..200, estimator()),
            |(s, b, budget, extra, est)| {
                let small = TruncationPolicy::new(budget, est.clone()).unwrap();
                let large = TruncationPolicy::new(budget + extra, est).unwrap();
                let e = email(s, b);
                let a = truncate_body(&e, &small).body.chars().count();
                let z = truncate_body(&e, &large).body.chars().count();
                prop_assert!(
                    a <= z,
                    "budget {} gave {} scalars, +{} gave {}",
                    budget,
                    a,
                    extra,
                    z
                );
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn sanitize_delimiter_freedom(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&text(400), |t| {
            let once = sanitize_delimiters(&t);
            prop_assert!(!once.contains("###"));
            prop_assert_eq!(sanitize_delimiters(&once), once.clone());
            if !t.contains("###") {
                prop_assert_eq!(once, t);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn filler_word() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9]{1,8}".prop_filter("not a label", |w| {
        let l = w.to_lowercase();
        l != "spam" && l != "ham"
    })
}

fn noisy(word: &'static str) -> impl Strategy<Value = String> {
    let punct = "[.,!?\"'()*:]{0,3}";
    (
        punct,
        prop::collection::vec(any::<bool>(), word.len()),
        punct,
    )
        .prop_map(move |(pre, upper, post)| {
            let cased: String = word
                .chars()
                .zip(upper)
                .map(|(c, u)| if u { c.to_ascii_uppercase() } else { c })
                .collect();
            format!("{pre}{cased}{post}")
        })
}

pub fn parse_label_rules(cases: u32) -> Result<(), String> {
    let labelled = (
        prop::collection::vec(filler_word(), 0..6),
        prop_oneof![
            noisy("spam").prop_map(|w| (w, Label::Spam)),
            noisy("ham").prop_map(|w| (w, Label::Ham))
        ],
        prop::collection::vec(
            prop_oneof![
                filler_word(),
                Just("spam".to_string()),
                Just("ham".to_string())
            ],
            0..6,
        ),
        "[ \t\n]{1,3}",
    );
    runner(cases)
        .run(&labelled, |(pre, (word, want), post, sep)| {
            let mut words = pre;
            words.push(word);
            words.extend(post);
            let text = words.join(&sep);
            prop_assert_eq!(parse_label(&text), want, "{:?}", text);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let unlabelled = prop::collection::vec(filler_word(), 0..10).prop_map(|w| w.join(" "));
    runner(cases)
        .run(&unlabelled, |t| {
            prop_assert_eq!(parse_label(&t), Label::Unparseable);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // totality on arbitrary input
    runner(cases)
        .run(&any::<String>(), |t| {
            let _ = parse_label(&t);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn metric_bounds(cases: u32) -> Result<(), String> {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    runner(cases)
        .run(
            &(0u64..500, 0u64..500, 0u64..500, 0u64..500),
            |(tp, fp, tn, fn_)| {
                let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
                if let Ok(ac) = accuracy(&cm) {
                    prop_assert!(unit(ac));
                }
                if let Ok(ba) = balanced_accuracy(&cm) {
                    prop_assert!(unit(ba));
                    if tp * cm.negatives() == tn * cm.positives() {
                        prop_assert!((ba - accuracy(&cm).unwrap()).abs() < 1e-12);
                    }
                }
                let pr = precision(&cm);
                let re = recall(&cm).ok();
                if let Some(p) = pr {
                    prop_assert!(unit(p));
                }
                if let Some(r) = re {
                    prop_assert!(unit(r));
                }
                if let (Some(p), Some(r)) = (pr, re) {
                    let f = f1(p, r);
                    prop_assert!(unit(f));
                    prop_assert!(p.min(r) - 1e-12 <= f && f <= p.max(r) + 1e-12);
                    if p + r > 0.0 {
                        prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn all(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("truncation budget safety", truncation_budget_safety(cases)),
        ("truncation idempotence", truncation_idempotence(cases)),
        ("truncation monotonicity", truncation_monotonicity(cases)),
        (
            "sanitize_delimiters never emits ###",
            sanitize_delimiter_freedom(cases),
        ),
        (
            "parse_label totality and normalization",
            parse_label_rules(cases),
        ),
        ("metric bounds", metric_bounds(cases)),
    ]
}
