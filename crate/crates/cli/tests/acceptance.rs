//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resflow::autodiff::conv_same;
use resflow::dataset::{build_samples, chrono_split, SampleBuilder, Standardizer, WindowSpec};
use resflow::evalkit::{
    lag_correlation, mae_metric, mape_metric, pearson, Baseline, BaselineKind, CorrMode, YearMonth,
};
use resflow::fusion::{fuse, kernel_weights, FusionParams};
use resflow::net::{Model, ModelConfig, ModelInput, ParamStore};
use resflow::synthgen::{generate_attendance, generate_reservations, GeneratorConfig, ReservationLog};
use resflow::tensor::Mat;
use resflow::timegrid::{shift_date, SlotSeries};
use resflow::training::{train, train_search, Adam, SearchSpace, TrainConfig, Variant};
use resflow_cli::commands;
use resflow_cli::RunConfig;

const GRID_DAYS: [usize; 5] = [1, 3, 5, 7, 14];

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn default_data() -> (SlotSeries, ReservationLog) {
    let gen = GeneratorConfig::default();
    let entrance = generate_attendance(&gen).unwrap();
    let log = generate_reservations(&entrance, &gen).unwrap();
    (entrance, log)
}

fn gate_sum(m: &Mat<f64>) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().sum()).collect()
}

fn near_target(model: &Model<f64>, input: &ModelInput<f64>, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let yhat = model.predict(input).unwrap();
    Mat::from_fn(yhat.rows(), yhat.cols(), |i, j| {
        let off = rng.random_range(0.05..0.5);
        yhat.get(i, j) + if rng.random::<bool>() { off } else { -off }
    })
}

fn c1_gradients(r: &mut Report, entrance: &SlotSeries, log: &ReservationLog) {
    let base = ModelConfig::default();
    let samples = build_samples(entrance, log, &base.spec).unwrap();
    let st = Standardizer::fit(&samples[..100]).unwrap();
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut detail = Vec::new();
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        let start = Instant::now();
        let config = v.apply(&base);
        let model = Model::<f64>::new(config, 3407).unwrap();
        let input = ModelInput::prepare(&samples[40 + i].input, &st).unwrap();
        let y = near_target(&model, &input, &mut ChaCha8Rng::seed_from_u64(i as u64));
        let g = model.grad_check(&input, &y, 1e-5, 400, 17).unwrap();
        let secs = start.elapsed().as_secs_f64();
        assert_eq!(g.tensors_covered, model.params().len());
        worst = worst.max(g.max_rel_err);
        slowest = slowest.max(secs);
        detail.push(format!("{} {:.1e}", v.label(), g.max_rel_err));
    }
    r.record(
        1,
        "gradient check",
        worst < 1e-4 && slowest < 60.0,
        format!("max rel err {worst:.2e} (< 1e-4), slowest {slowest:.1}s (< 60s); {}", detail.join(", ")),
    );
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn c2_fusion(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut bad_b, mut bad_r, mut worst_k, mut bad_zero) = (0, 0, 0.0f64, 0);
    let cases = 10_000;
    for _ in 0..cases {
        let d = rng.random_range(2..12);
        let l = rng.random_range(1..40);
        let c_out = rng.random_range(1..3);
        let c_res = c_out * rng.random_range(1..3);
        let k = [1, 3, 5, 7][rng.random_range(0..4)];
        let s = rng.random_range(0.05..1.0);
        let mut p = FusionParams::zeros(d, c_res, c_out, k);
        for m in [
            &mut p.mlp_b.w1,
            &mut p.mlp_b.b1,
            &mut p.mlp_b.w2,
            &mut p.mlp_b.b2,
            &mut p.mlp_r.w1,
            &mut p.mlp_r.b1,
            &mut p.mlp_r.w2,
            &mut p.mlp_r.b2,
            &mut p.w_res,
        ] {
            *m = random_mat(&mut rng, m.rows(), m.cols(), -s, s);
        }
        p.kernel_logits = random_mat(&mut rng, 1, k, -5.0, 5.0);
        let o = random_mat(&mut rng, l, d, -3.0, 3.0);
        let x = random_mat(&mut rng, l, c_res, 0.0, 500.0);
        let out = fuse(&o, &x, &p).unwrap();
        bad_b += out.parts.baseline.as_slice().iter().filter(|&&b| b < 0.0).count();
        bad_r += out.parts.gate.as_slice().iter().filter(|&&g| !(g > 0.0 && g < 1.0)).count();
        let ksum: f64 = kernel_weights(p.kernel_logits.as_slice()).iter().sum();
        worst_k = worst_k.max((ksum - 1.0).abs());
        let zero = fuse(&o, &Mat::zeros(l, c_res), &p).unwrap();
        if zero.yhat != zero.parts.baseline {
            bad_zero += 1;
        }
    }
    r.record(
        2,
        "fusion invariants",
        bad_b == 0 && bad_r == 0 && worst_k <= 1e-12 && bad_zero == 0,
        format!(
            "{cases} cases: b<0 {bad_b}, r outside (0,1) {bad_r}, max |sum k - 1| {worst_k:.1e}, zero-reservation mismatches {bad_zero}"
        ),
    );
}

fn c3_oracles(r: &mut Report) {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut check = |a: f64, b: f64| {
        worst = worst.max((a - b).abs());
        count += 1;
    };

    // Convolution against a direct double loop, zero padding.
    let conv_cases: [(&[f64], &[f64]); 3] = [
        (&[0.0, 4.0, 0.0, 0.0], &[0.25, 0.5, 0.25]),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.1, 0.2, 0.4, 0.2, 0.1]),
        (&[7.0, -1.0, 3.5], &[1.0]),
    ];
    for (signal, kernel) in conv_cases {
        let got = conv_same(&Mat::from_vec(signal.len(), 1, signal.to_vec()).unwrap(), kernel);
        let half = (kernel.len() / 2) as i64;
        for h in 0..signal.len() as i64 {
            let mut want = 0.0;
            for u in -half..=half {
                let src = h - u;
                if (0..signal.len() as i64).contains(&src) {
                    want += kernel[(u + half) as usize] * signal[src as usize];
                }
            }
            check(got.get(h as usize, 0), want);
        }
    }

    // MAE, MAPE and Pearson against hand arithmetic.
    check(mae_metric(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 1.5);
    check(mae_metric(&[1.0, 5.0, -2.0], &[2.0, 2.0, 2.0]).unwrap(), 8.0 / 3.0);
    check(mae_metric(&[10.0, 10.0, 10.0, 10.0], &[9.0, 11.0, 10.0, 14.0]).unwrap(), 1.5);
    check(mape_metric(&[110.0], &[100.0]).unwrap().raw, 0.1);
    check(mape_metric(&[110.0], &[100.0]).unwrap().pct, 10.0);
    check(mape_metric(&[3.0, 7.0, 1.0], &[0.0, 5.0, 2.0]).unwrap().raw, 0.45);
    check(mape_metric(&[90.0, 60.0], &[100.0, 40.0]).unwrap().raw, 0.3);
    check(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap(), 5.0 / (2.0f64 * 38.0 / 3.0).sqrt());
    check(pearson(&[1.0, 2.0, 3.0, 4.0], &[8.0, 6.0, 4.0, 2.0]).unwrap(), -1.0);
    check(pearson(&[0.0, 1.0, 0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.0);

    // One Adam step from fresh moments.
    for (x0, g, lr) in [(1.0, -4.0, 0.1), (-2.0, 0.5, 1e-3), (0.3, 1e-6, 0.01)] {
        let mut p = ParamStore::<f64>::new();
        p.insert("x", Mat::filled(1, 1, x0)).unwrap();
        let mut grad = ParamStore::<f64>::new();
        grad.insert("x", Mat::filled(1, 1, g)).unwrap();
        let mut adam = Adam::new(&p, lr, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &grad).unwrap();
        let m_hat = 0.1 * g / (1.0 - 0.9);
        let v_hat = 0.001 * g * g / (1.0 - 0.999);
        check(p.get("x").unwrap().get(0, 0), x0 - lr * m_hat / (v_hat.sqrt() + 1e-8));
    }
    r.record(3, "hand oracles", worst <= 1e-9, format!("{count} comparisons, max abs diff {worst:.1e} (<= 1e-9)"));
}

fn c4_shapes(r: &mut Report, entrance: &SlotSeries, log: &ReservationLog) {
    let start = Instant::now();
    let issue = shift_date(entrance.start_date(), 30).unwrap();
    let mut bad = Vec::new();
    let mut cells = 0;
    for out_channels in [1, 2] {
        for &input_days in &GRID_DAYS {
            for &horizon_days in &GRID_DAYS {
                let spec = WindowSpec {
                    input_days,
                    horizon_days,
                    out_channels,
                    ..WindowSpec::default()
                };
                let config = ModelConfig {
                    spec: spec.clone(),
                    ..ModelConfig::default()
                };
                let input = SampleBuilder::new(entrance, log, &spec).unwrap().input(issue).unwrap();
                let sample = [resflow::dataset::ForecastSample {
                    y: Mat::zeros(spec.dec_len(), out_channels),
                    input: input.clone(),
                }];
                let st = Standardizer::fit(&sample).unwrap();
                let model = Model::<f64>::new(config, 1).unwrap();
                let yhat = model.predict(&ModelInput::prepare(&input, &st).unwrap()).unwrap();
                cells += 1;
                if yhat.shape() != (horizon_days * 14, out_channels) || !yhat.all_finite() {
                    bad.push(format!("IW{input_days}/H{horizon_days}/C{out_channels}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.record(
        4,
        "shape sweep",
        bad.is_empty() && secs < 30.0,
        format!("{cells} cells, {} wrong {bad:?}, {secs:.2}s (< 30s)", bad.len()),
    );
}

fn c5_leakage(r: &mut Report, entrance: &SlotSeries, log: &ReservationLog) {
    let mut checked = 0;
    let mut violations = 0;
    for out_channels in [1, 2] {
        for &input_days in &GRID_DAYS {
            for &horizon_days in &GRID_DAYS {
                let spec = WindowSpec {
                    input_days,
                    horizon_days,
                    out_channels,
                    ..WindowSpec::default()
                };
                for s in build_samples(entrance, log, &spec).unwrap() {
                    checked += 1;
                    let i = &s.input;
                    if i.enc_last_date > i.issue_date || i.dec_last_booking.is_some_and(|b| b > i.issue_date) {
                        violations += 1;
                    }
                }
            }
        }
    }
    // Independent recomputation of the default cell's features from raw events.
    let spec = WindowSpec::default();
    let t = spec.grid.slots_per_day;
    let mut recomputed = 0;
    for s in build_samples(entrance, log, &spec).unwrap() {
        let issue = s.input.issue_date;
        let mut want = Mat::<f64>::zeros(spec.dec_len(), spec.res_channels());
        for e in log.events() {
            let day = resflow::timegrid::days_between(issue, e.target_date) - 1;
            if !(0..spec.horizon_days as i64).contains(&day) {
                continue;
            }
            for (l, &lag) in spec.res_feature_lags.iter().enumerate() {
                if e.booking_date <= shift_date(issue, -(lag as i64)).unwrap() {
                    let row = day as usize * t + e.slot;
                    let col = e.gate * spec.res_feature_lags.len() + l;
                    *want.at_mut(row, col) += e.delta as f64;
                }
            }
        }
        let first_enc = shift_date(issue, 1 - spec.input_days as i64).unwrap();
        let enc_ok = (0..spec.enc_len()).all(|row| {
            let date = shift_date(first_enc, (row / t) as i64).unwrap();
            let d = entrance.day_index(date).unwrap();
            date <= issue && (0..2).all(|g| s.input.x_enc.get(row, g) == entrance.get(d, row % t, g))
        });
        if want != s.input.x_dec || !enc_ok {
            violations += 1;
        }
        recomputed += 1;
    }
    r.record(
        5,
        "leakage ban",
        violations == 0,
        format!("{checked} samples over 50 cells plus {recomputed} recomputed from raw events: {violations} violations"),
    );
}

fn c6_reservation_lags(r: &mut Report, entrance: &SlotSeries, log: &ReservationLog) {
    let start = Instant::now();
    let lags: Vec<usize> = (0..=10).collect();
    let m = lag_correlation(entrance, log, CorrMode::Reservations, &lags, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut ok = entrance.num_days() >= 120 && secs < 10.0;
    let mut detail = Vec::new();
    for (mi, month) in m.months.iter().enumerate() {
        let row: Vec<f64> = m.values[mi].iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let inversions = row.windows(2).filter(|w| !(w[1] <= w[0])).count();
        ok &= row[0] > 0.9 && inversions <= 1;
        detail.push(format!("{month} lag0 {:.3} inv {inversions}", row[0]));
    }
    r.record(
        6,
        "reservation lag profile",
        ok,
        format!("{} days, {secs:.2}s; {}", entrance.num_days(), detail.join(", ")),
    );
}

fn c7_weekly(r: &mut Report, entrance: &SlotSeries, log: &ReservationLog) {
    let months: Vec<YearMonth> = (5..=8).map(|month| YearMonth { year: 2025, month }).collect();
    let lags: Vec<usize> = (1..=10).collect();
    let m = lag_correlation(entrance, log, CorrMode::Visits, &lags, Some(&months)).unwrap();
    let mut wins = 0;
    let mut detail = Vec::new();
    for (mi, month) in months.iter().enumerate() {
        let at = |lag: usize| m.values[mi][lag - 1].unwrap_or(f64::NAN);
        let best_short = (2..=6).map(at).fold(f64::NEG_INFINITY, f64::max);
        if at(7) > best_short {
            wins += 1;
        }
        detail.push(format!("{month} lag7 {:.3} vs max lag2-6 {best_short:.3}", at(7)));
    }
    let weekend = GeneratorConfig::default().weekend_multiplier;
    r.record(
        7,
        "weekly visit lag",
        weekend >= 1.3 && wins >= 3,
        format!("weekend x{weekend}, {wins}/4 months; {}", detail.join(", ")),
    );
}

fn c8_learning(r: &mut Report, entrance: &SlotSeries, log: &ReservationLog) {
    let start = Instant::now();
    let model = ModelConfig::default();
    let split = chrono_split(build_samples(entrance, log, &model.spec).unwrap(), 0.8).unwrap();
    let naive = Baseline::fit(BaselineKind::SeasonalNaive, &split.train).unwrap();
    let base = TrainConfig::default();

    let score = |predict: &dyn Fn(&resflow::dataset::ForecastInput) -> Mat<f64>| {
        let (mut p, mut a, mut pt, mut at) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for s in &split.test {
            let yhat = predict(&s.input);
            p.extend_from_slice(yhat.as_slice());
            a.extend_from_slice(s.y.as_slice());
            pt.extend(gate_sum(&yhat));
            at.extend(gate_sum(&s.y));
        }
        (mae_metric(&p, &a).unwrap(), mae_metric(&pt, &at).unwrap())
    };
    let (naive_gate, naive_total) = score(&|i| naive.predict(i).unwrap().yhat);
    let found = train_search(&model, &split.train, &base, &SearchSpace::default()).unwrap();
    let (full_gate, full_total) = score(&|i| found.trained.predict(i).unwrap());
    let secs = start.elapsed().as_secs_f64();

    let defaults = train(&model, &split.train, &base).unwrap();
    let (def_gate, _) = score(&|i| defaults.predict(i).unwrap());

    let gain = 1.0 - full_gate / naive_gate;
    r.record(
        8,
        "learning efficacy",
        gain >= 0.10 && secs < 600.0,
        format!(
            "per-gate test MAE {full_gate:.3} vs seasonal naive {naive_gate:.3} ({:.1}% better, needs >= 10%); \
             gate-summed {full_total:.3} vs {naive_total:.3}; lr {} patience {} chosen on validation; {secs:.1}s",
            100.0 * gain,
            found.config.learning_rate,
            found.config.patience
        ),
    );
    println!(
        "INFO [8] default training (lr {}, patience {}) alone: per-gate test MAE {def_gate:.3} ({:+.1}% vs seasonal naive)",
        base.learning_rate,
        base.patience,
        100.0 * (1.0 - def_gate / naive_gate)
    );
}

fn c9_ablation(r: &mut Report, data_dir: &Path, out: &Path) {
    let config = RunConfig::default();
    let outcome = commands::cmd_ablate(&config, data_dir, out, 0).unwrap();
    let names: Vec<&str> = outcome.report.rows.iter().map(|row| row.variant.as_str()).collect();
    let finite = outcome.report.rows.iter().all(|row| row.mae.is_finite());
    let cells_ok = outcome.report.rows.iter().all(|row| row.input_days == 7 && row.horizon_days == 5);
    let detail: Vec<String> = outcome.report.rows.iter().map(|row| format!("{} {:.3}", row.variant, row.mae)).collect();
    r.record(
        9,
        "ablation harness",
        names == ["Full", "w/o Inv", "DecOnly", "w/o AF", "DecOnly w/o AF"] && finite && cells_ok,
        format!("{} rows at IW7/H5: {}", names.len(), detail.join(", ")),
    );
}

fn c10_determinism(r: &mut Report, data_dir: &Path, work: &Path) {
    let config = work.join("det.toml");
    fs::write(
        &config,
        "[grid]\ninput_days = [7]\nhorizon_days = [5]\nvariants = [\"full\", \"seasonal-naive\"]\njobs = 2\n",
    )
    .unwrap();
    let run = |tag: &str| -> Vec<Vec<u8>> {
        let dir = work.join(tag);
        let bin = env!("CARGO_BIN_EXE_resflow");
        let ck = dir.join("model.exfc");
        for args in [
            vec!["train", "--out", ck.to_str().unwrap()],
            vec!["evaluate", "--out", dir.to_str().unwrap()],
        ] {
            let out = Command::new(bin)
                .args(&args)
                .args(["--config", config.to_str().unwrap(), "--data", data_dir.to_str().unwrap()])
                .env("RESFLOW_SEED", "3407")
                .output()
                .unwrap();
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        }
        ["model.exfc", "train_log.csv", "report.csv", "predictions.csv"]
            .iter()
            .map(|f| fs::read(dir.join(f)).unwrap())
            .collect()
    };
    let (a, b) = (run("first"), run("second"));
    let rows = String::from_utf8_lossy(&a[2]).lines().count() - 1;
    r.record(
        10,
        "determinism",
        a == b,
        format!("checkpoint, train log, report ({rows} rows) and predictions byte-identical: {}", a == b),
    );
}

fn main() {
    let start = Instant::now();
    let mut r = Report { failures: 0 };
    let (entrance, log) = default_data();
    let work = tempfile::tempdir().unwrap();
    let data_dir = work.path().join("data");
    commands::cmd_generate(&RunConfig::default(), &data_dir).unwrap();

    c1_gradients(&mut r, &entrance, &log);
    c2_fusion(&mut r);
    c3_oracles(&mut r);
    c4_shapes(&mut r, &entrance, &log);
    c5_leakage(&mut r, &entrance, &log);
    c6_reservation_lags(&mut r, &entrance, &log);
    c7_weekly(&mut r, &entrance, &log);
    c8_learning(&mut r, &entrance, &log);
    c9_ablation(&mut r, &data_dir, &work.path().join("ablate"));
    c10_determinism(&mut r, &data_dir, work.path());

    println!(
        "acceptance: {} of 10 criteria passed in {:.1}s",
        10 - r.failures,
        start.elapsed().as_secs_f64()
    );
    if r.failures > 0 {
        std::process::exit(1);
    }
}
