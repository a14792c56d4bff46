use mlsim::metrics::{
    aggregate, auc, average_series, compute_latency, fit, parse_line, parse_log, Action, Bucketing, FitModel, LogRecord,
    MetricsError, Series,
};
use proptest::prelude::*;

fn name() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_]{1,16}"
}

fn action() -> impl Strategy<Value = Action> {
    prop::sample::select(Action::ALL.to_vec())
}

prop_compose! {
    fn record()(
        group in name(),
        group_size in 1u32..100_000,
        actor in name(),
        action in action(),
        counterpart in prop::option::of(name()),
        size in any::<u64>(),
        timestamp_ns in any::<u64>(),
        cost_us in any::<u64>(),
    ) -> LogRecord {
        LogRecord {
            group,
            group_size,
            actor,
            action,
            counterpart,
            size_bytes: (action != Action::Process).then_some(size),
            timestamp_ns,
            cost_us,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn format_then_parse_is_identity(r in record()) {
        prop_assert_eq!(parse_line(&r.to_string()).unwrap(), r);
    }
}

proptest! {
    #[test]
    fn auc_scales_with_costs(cc in 0.0f64..1e6, cp in prop::collection::vec(0.0f64..1e6, 1..9), factor in 0.1f64..10.0) {
        let n = cp.len();
        let base = auc(cc, &cp, n).unwrap();
        let scaled: Vec<f64> = cp.iter().map(|c| c * factor).collect();
        let s = auc(cc * factor, &scaled, n).unwrap();
        prop_assert!((s - base * factor).abs() <= 1e-9 * s.abs().max(1.0));
        let mut doubled_one = cp.clone();
        doubled_one[0] += 1.0;
        let d = auc(cc, &doubled_one, n).unwrap();
        prop_assert!((d - base - 1.0 / n as f64).abs() < 1e-6);
    }

    #[test]
    fn r_squared_ignores_positive_y_scaling(
        ys in prop::collection::vec(0.0f64..1000.0, 5),
        k in 0.01f64..100.0,
    ) {
        let xs = [8.0, 16.0, 32.0, 64.0, 128.0];
        let s = Series::new("s", xs.iter().copied().zip(ys.iter().copied()).collect());
        let t = Series::new("t", xs.iter().copied().zip(ys.iter().map(|y| y * k)).collect());
        for model in [FitModel::Linear, FitModel::Logarithmic] {
            match (fit(&s, model), fit(&t, model)) {
                (Ok(a), Ok(b)) => prop_assert!((a.r_squared - b.r_squared).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    /// Interleaving the records of two groups differently does not change
    /// any group's latency samples.
    #[test]
    fn latency_ignores_interleaving_of_other_groups(
        a in prop::collection::vec((any::<bool>(), 1u64..50), 1..40),
        b in prop::collection::vec((any::<bool>(), 1u64..50), 1..40),
        picks in prop::collection::vec(any::<bool>(), 80),
    ) {
        let build = |g: &str, steps: &[(bool, u64)], offset: u64| {
            let mut t = offset;
            let mut out = Vec::new();
            for (i, &(is_commit, dt)) in steps.iter().enumerate() {
                t += dt * 2;
                out.push(LogRecord {
                    group: g.into(),
                    group_size: 4,
                    actor: if is_commit { format!("{g}c") } else { format!("{g}p{i}") },
                    action: if is_commit { Action::Update } else { Action::Process },
                    counterpart: (!is_commit).then(|| format!("{g}c")),
                    size_bytes: is_commit.then_some(10),
                    timestamp_ns: t,
                    cost_us: 1,
                });
            }
            out
        };
        let ga = build("a", &a, 0);
        let gb = build("b", &b, 1);
        let mut mixed = Vec::new();
        let (mut i, mut j) = (0, 0);
        for p in picks.iter().chain(std::iter::repeat(&true)) {
            if i == ga.len() && j == gb.len() { break; }
            if (*p && i < ga.len()) || j == gb.len() { mixed.push(ga[i].clone()); i += 1; } else { mixed.push(gb[j].clone()); j += 1; }
        }
        let key = |r: mlsim::metrics::LatencyReport| {
            let mut s = r.samples;
            s.sort_by(|x, y| (x.group.as_str(), x.commit_ts).cmp(&(y.group.as_str(), y.commit_ts)));
            s
        };
        let mut sep = ga.clone();
        sep.extend(gb.clone());
        prop_assert_eq!(key(compute_latency(&mixed)), key(compute_latency(&sep)));
    }
}

#[test]
fn published_trace_lines_parse() {
    let invite = parse_line("group_1 8 User_0d4341e0c0f4 Invite User_b3f20ed42c2a 1065 1739176120380282661 5885").unwrap();
    assert_eq!(invite.action, Action::Invite);
    assert_eq!(invite.group_size, 8);
    assert_eq!(invite.counterpart.as_deref(), Some("User_b3f20ed42c2a"));
    assert_eq!(invite.size_bytes, Some(1065));
    assert_eq!(invite.timestamp_ns, 1739176120380282661);
    assert_eq!(invite.cost_us, 5885);
    let process = parse_line("group_1 8 User_d13041578e84 Process User_0d4341e0c0f4 1739176120384444036 8599").unwrap();
    assert_eq!(process.action, Action::Process);
    assert_eq!(process.size_bytes, None);
    assert_eq!(process.counterpart.as_deref(), Some("User_0d4341e0c0f4"));
    assert_eq!(process.cost_us, 8599);
    assert!(matches!(parse_line("a b c"), Err(MetricsError::BadLine { .. })));
}

#[test]
fn bad_lines_report_their_line_number() {
    let text = "g 2 a Update - 10 1 1\ng 2 b Process a 5 1\ng 0 a Update - 10 1 1\n";
    match parse_log(text) {
        Err(MetricsError::BadLine { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn three_runs_average_pointwise() {
    let runs: Vec<Series> = [(4000.0, 100.0), (5000.0, 200.0), (6000.0, 300.0)]
        .iter()
        .map(|&(a, b)| aggregate("c", [(8, a), (16, b)], Bucketing::Exact))
        .collect();
    let avg = average_series("c", &runs);
    assert_eq!(avg.points, vec![(8.0, 5000.0), (16.0, 200.0)]);
}

#[test]
fn logarithmic_data_prefers_the_log_model() {
    let xs = [2.0f64, 4.0, 8.0, 16.0, 32.0];
    let s = Series::new("s", xs.iter().map(|&x| (x, 3.0 * x.ln())).collect());
    let log = fit(&s, FitModel::Logarithmic).unwrap();
    let lin = fit(&s, FitModel::Linear).unwrap();
    assert!((log.r_squared - 1.0).abs() < 1e-12);
    assert!((log.slope - 3.0).abs() < 1e-12);
    assert!(lin.r_squared < 1.0);
    // Closed form for the linear fit on these points.
    let n = xs.len() as f64;
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    assert!((lin.r_squared - sxy * sxy / (sxx * syy)).abs() < 1e-12);
}
