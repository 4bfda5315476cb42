use resflow::dataset::{
    build_samples, chrono_split, load_entrance_csv, load_reservations_csv, write_entrance_csv, write_reservations_csv,
    CsvOptions,
};
use resflow::evalkit::{mae_metric, Baseline, BaselineKind};
use resflow::net::{ModelConfig, ModelInput};
use resflow::synthgen::{generate_attendance, generate_reservations, GeneratorConfig};
use resflow::training::{train, TrainConfig};
use resflow::{Forecaster, Matrix};

fn config(days: usize) -> GeneratorConfig {
    GeneratorConfig {
        num_days: days,
        shock_calendar: Vec::new(),
        ..GeneratorConfig::default()
    }
}

#[test]
fn csv_round_trip_keeps_samples_identical() {
    let gen = config(30);
    let entrance = generate_attendance(&gen).unwrap();
    let log = generate_reservations(&entrance, &gen).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_entrance_csv(&entrance, dir.path().join("e.csv")).unwrap();
    write_reservations_csv(&log, dir.path().join("r.csv")).unwrap();
    let opts = CsvOptions::default();
    let e2 = load_entrance_csv(dir.path().join("e.csv"), &opts).unwrap();
    let opts = CsvOptions {
        span: Some((e2.start_date(), e2.num_days())),
        ..opts
    };
    let l2 = load_reservations_csv(dir.path().join("r.csv"), &opts).unwrap();

    let spec = ModelConfig::default().spec;
    assert_eq!(build_samples(&entrance, &log, &spec).unwrap(), build_samples(&e2, &l2, &spec).unwrap());
}

#[test]
fn generated_samples_never_look_ahead() {
    let gen = config(60);
    let entrance = generate_attendance(&gen).unwrap();
    let log = generate_reservations(&entrance, &gen).unwrap();
    let spec = ModelConfig::default().spec;
    let samples = build_samples(&entrance, &log, &spec).unwrap();
    assert_eq!(samples.len(), 60 - 7 - 5 + 1);
    for s in &samples {
        assert!(s.input.enc_last_date <= s.input.issue_date);
        assert!(s.input.dec_last_booking.is_none_or(|b| b <= s.input.issue_date));
    }
}

#[test]
fn train_and_forecast_end_to_end() {
    let gen = config(45);
    let entrance = generate_attendance(&gen).unwrap();
    let log = generate_reservations(&entrance, &gen).unwrap();
    let model = ModelConfig {
        d_model: 8,
        ffn_dim: 16,
        ..ModelConfig::default()
    };
    let split = chrono_split(build_samples(&entrance, &log, &model.spec).unwrap(), 0.8).unwrap();
    let trained = train(
        &model,
        &split.train,
        &TrainConfig {
            max_epochs: 4,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(trained.report.best_epoch >= 1);

    let net: &Forecaster = &trained.model;
    let naive = Baseline::fit(BaselineKind::SeasonalNaive, &split.train).unwrap();
    for s in &split.test {
        let forecast = trained.forecast(&s.input).unwrap();
        let yhat: Matrix = forecast.yhat;
        assert_eq!(yhat.shape(), (5 * 14, 2));
        assert!(yhat.all_finite());
        let parts = forecast.parts.expect("fusion head active");
        assert!(parts.gate.as_slice().iter().all(|&r| r > 0.0 && r < 1.0));
        assert!(mae_metric(yhat.as_slice(), s.y.as_slice()).unwrap().is_finite());
        assert!(naive.predict(&s.input).unwrap().yhat.all_finite());

        // The single-precision path agrees with the double one to f32 accuracy.
        let input = ModelInput::prepare(&s.input, &trained.standardizer).unwrap();
        let narrow = resflow::net::Model::<f32>::from_parts(net.config().clone(), net.params().cast()).unwrap();
        let y32 = narrow.predict(&input.cast::<f32>()).unwrap().cast::<f64>();
        let scale = yhat.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        assert!(y32.max_abs_diff(&yhat) < 1e-4 * scale);
    }
}
