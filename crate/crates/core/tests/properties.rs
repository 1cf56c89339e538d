use std::collections::HashMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use commentscope_core::alerts::*;
use commentscope_core::analytics::{superfans, HistogramBucket};
use commentscope_core::model::CommentRecord;
use commentscope_core::sentiment::*;
use commentscope_core::themes::{ground_citation, prepare_candidates, MatchStatus, ThemeParams};
use commentscope_core::topics::{topic_table, ClusterAssignment};
use proptest::prelude::*;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn recursion_oracle(xs: &[f64], alpha: f64) -> f64 {
    let mut s = xs[0];
    for x in &xs[1..] {
        s = alpha * x + (1.0 - alpha) * s;
    }
    s
}

fn comment(id: usize, author: &str, days: i64, reply: bool) -> CommentRecord {
    CommentRecord {
        comment_id: format!("c{id:05}"),
        video_id: "v".into(),
        parent_id: reply.then(|| "c00000".into()),
        author_id: author.into(),
        author_display: author.to_uppercase(),
        text: format!("comment {id}"),
        published_at: t0() + Duration::days(days),
        like_count: 0,
    }
}

fn windows(counts: &[u64]) -> Vec<HistogramBucket> {
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| HistogramBucket { bucket_start: t0() + Duration::weeks(i as i64), count: *c })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn smoothing_matches_recursion(xs in prop::collection::vec(-1e4f64..1e4, 1..=50), alpha in 1e-6f64..=1.0) {
        let got = exp_smoothing_baseline(&xs, alpha).unwrap();
        prop_assert!((got - recursion_oracle(&xs, alpha)).abs() <= 1e-9);
        prop_assert_eq!(exp_smoothing_baseline(&xs, 1.0).unwrap(), *xs.last().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn volume_rule_is_monotone(history in prop::collection::vec(0u64..60, 1..12), x in 0u64..200, bump in 1u64..100) {
        let cfg = AlertConfig::default();
        let kinds = |cur: u64| {
            let mut w = history.clone();
            w.push(cur);
            volume_alerts("v", &windows(&w), &cfg).into_iter().map(|a| a.kind).collect::<Vec<_>>()
        };
        let (lo, hi) = (kinds(x), kinds(x + bump));
        if lo.contains(&AlertKind::VolumeHigh) {
            prop_assert!(hi.contains(&AlertKind::VolumeHigh));
        }
        if !lo.contains(&AlertKind::VolumeLow) {
            prop_assert!(!hi.contains(&AlertKind::VolumeLow));
        }
    }

    #[test]
    fn triples_and_scalars_are_bounded(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..40)) {
        for (a, b, c) in raw {
            let s = a + b + c;
            prop_assume!(s > 1e-9);
            let t = SentimentTriple::new(a / s, b / s, c / s).unwrap();
            prop_assert!((t.p_neg + t.p_neu + t.p_pos - 1.0).abs() <= TRIPLE_TOLERANCE);
            let x = t.to_scalar();
            prop_assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn lexicon_stub_is_one_hot(words in prop::collection::vec(
        prop::sample::select(vec!["great", "terrible", "love", "boring", "the", "video", "amazing", "awful", "2019"]), 1..12)) {
        let t = LexiconClassifier::bundled().classify(&words.join(" "));
        prop_assert!((t.p_neg + t.p_neu + t.p_pos - 1.0).abs() <= TRIPLE_TOLERANCE);
        prop_assert!([t.p_neg, t.p_neu, t.p_pos].iter().all(|p| *p == 0.0 || *p == 1.0));
    }

    #[test]
    fn monthly_series_decomposes_the_mean(points in prop::collection::vec((0i64..400, -1.0f64..=1.0), 1..200)) {
        let pts: Vec<(DateTime<Utc>, f64)> = points.iter().map(|(d, s)| (t0() + Duration::days(*d), *s)).collect();
        let series = monthly_sentiment_series(pts.iter().copied());
        let n: u64 = series.iter().map(|m| m.comment_count).sum();
        prop_assert_eq!(n as usize, pts.len());
        let recomposed = series.iter().map(|m| m.comment_count as f64 * m.mean_scalar).sum::<f64>() / n as f64;
        let direct = mean_sentiment(pts.iter().map(|p| p.1)).unwrap();
        prop_assert!((recomposed - direct).abs() <= 1e-9);
        prop_assert!(series.windows(2).all(|w| w[0].month < w[1].month));
    }

    #[test]
    fn weighted_baseline_equals_prior_mean(points in prop::collection::vec((0i64..400, -1.0f64..=1.0), 1..200), cut in 0i64..400) {
        let pts: Vec<(DateTime<Utc>, f64)> = points.iter().map(|(d, s)| (t0() + Duration::days(*d), *s)).collect();
        let window_start = t0() + Duration::days(cut);
        let got = monthly_weighted_sentiment_baseline(&pts, window_start, &AlertConfig::default());
        let want = mean_sentiment(pts.iter().filter(|p| p.0 < window_start).map(|p| p.1));
        match (got, want) {
            (Some(g), Some(w)) => prop_assert!((g - w).abs() <= 1e-9),
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn mean_is_permutation_invariant(mut xs in prop::collection::vec(-4i32..=4, 1..100), seed in any::<u64>()) {
        let a = mean_sentiment(xs.iter().map(|x| *x as f64 / 4.0)).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(xs.as_mut_slice(), &mut rng);
        let b = mean_sentiment(xs.iter().map(|x| *x as f64 / 4.0)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn superfans_match_brute_force(
        rows in prop::collection::vec((0usize..12, -4i32..=4, any::<bool>()), 0..400),
        min in 1u64..40,
        include_replies in any::<bool>(),
    ) {
        let mut comments = Vec::new();
        let mut scalars = HashMap::new();
        for (i, (a, s, reply)) in rows.iter().enumerate() {
            let c = comment(i, &format!("a{a:02}"), i as i64, *reply);
            scalars.insert(c.comment_id.clone(), *s as f64 / 4.0);
            comments.push(c);
        }
        let got = superfans(&comments, &scalars, min, usize::MAX, include_replies);

        let mut by: HashMap<&str, Vec<f64>> = HashMap::new();
        for c in &comments {
            if include_replies || c.parent_id.is_none() {
                by.entry(&c.author_id).or_default().push(scalars[&c.comment_id]);
            }
        }
        let mut want: Vec<(String, u64, f64)> = by
            .into_iter()
            .filter(|(_, v)| v.len() as u64 >= min)
            .map(|(a, v)| (a.to_string(), v.len() as u64, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        want.sort_by(|x, y| y.2.total_cmp(&x.2).then(y.1.cmp(&x.1)).then(x.0.cmp(&y.0)));

        prop_assert!(got.iter().all(|e| e.comment_count >= min));
        let got: Vec<(String, u64, f64)> = got.into_iter().map(|e| (e.author_id, e.comment_count, e.mean_sentiment)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn topic_shares_sum_to_100(labels in prop::collection::vec(-1i32..6, 1..500)) {
        let a: Vec<ClusterAssignment> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| ClusterAssignment { comment_id: format!("c{i}"), cluster_id: *l, membership_strength: 1.0 })
            .collect();
        let table = topic_table(&a, &[], &HashMap::new());
        let sum: f64 = table.iter().map(|r| r.share_pct).sum();
        prop_assert!((sum - 100.0).abs() <= 1e-6);
        prop_assert_eq!(table.iter().map(|r| r.member_count).sum::<usize>(), labels.len());
        prop_assert!(table.iter().any(|r| r.label == "Unclustered"));
    }

    #[test]
    fn verbatim_excerpts_ground_exactly(
        texts in prop::collection::vec("[a-z]{2,9}( [a-z]{2,9}){4,20}", 1..30),
        pick in any::<prop::sample::Index>(),
        start in any::<prop::sample::Index>(),
        len in 15usize..60,
    ) {
        let comments: Vec<CommentRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| CommentRecord { text: t.clone(), ..comment(i, "a", 0, false) })
            .collect();
        let src = &comments[pick.index(comments.len())];
        let chars: Vec<char> = src.text.chars().collect();
        prop_assume!(chars.len() >= 15);
        let len = len.min(chars.len());
        let s = start.index(chars.len() - len + 1);
        let excerpt: String = chars[s..s + len].iter().collect();
        prop_assume!(!excerpt.starts_with(' ') && !excerpt.ends_with(' '));
        let m = ground_citation(&excerpt, &prepare_candidates(&comments), &ThemeParams::default());
        prop_assert_eq!(m.status, MatchStatus::Exact);
        prop_assert_eq!(m.similarity, 1.0);
        let id = m.matched_comment_id.unwrap();
        let matched = comments.iter().find(|c| c.comment_id == id).unwrap();
        prop_assert!(matched.text.contains(&excerpt));
    }

    #[test]
    fn update_request_alerts_have_zero_baseline(flags in prop::collection::vec(any::<bool>(), 0..40), umin in 1u64..10) {
        let matcher = UpdateRequestMatcher::bundled();
        let comments: Vec<CommentRecord> = flags
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let text = if *f { "Please do an update on this story" } else { "great doc" };
                CommentRecord { text: text.into(), ..comment(i, "a", 0, false) }
            })
            .collect();
        let cfg = AlertConfig { update_request_min: umin, ..Default::default() };
        let hits = flags.iter().filter(|f| **f).count();
        match detect_update_requests("v", &comments, &matcher, t0(), &cfg) {
            Some(a) => {
                prop_assert_eq!(a.baseline, 0.0);
                prop_assert_eq!(a.supporting_comment_ids.len(), hits);
                prop_assert!(hits > 0 && hits as u64 >= umin);
                prop_assert_eq!(a.deviation, hits as f64);
            }
            None => prop_assert!((hits as u64) < umin || hits == 0),
        }
    }
}
