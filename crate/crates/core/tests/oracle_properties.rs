use adiabound::evolution::loglog_slope;
use adiabound::oracle::{
    brute_force_leakage, leakage_scaling, write_csv, DilationRate, LeakageOptions, OracleRow, CUTOFF_TOL,
};
use adiabound::schedule::AnnealParams;

fn params() -> AnnealParams {
    AnnealParams::new(10.0, 3.0, 1.0).unwrap()
}

fn time(p: &AnnealParams, m: f64) -> f64 {
    m * leakage_scaling(p).unwrap().trend / p.e_c
}

#[test]
fn leakage_is_converged_and_norm_preserving() {
    let p = params();
    let r = brute_force_leakage(&p, time(&p, 100.0), &LeakageOptions::default()).unwrap();
    assert!(r.norm_error < 1e-10, "{}", r.norm_error);
    assert!(r.cutoff_change.unwrap() < CUTOFF_TOL && !r.flagged());
    assert!(r.step_delta < 1e-4);
    let row = OracleRow::new(&p, &r).unwrap();
    assert!((0.3..3.0).contains(&row.scaled_constant), "{}", row.scaled_constant);
    // profile runs forward in s and ends on the reported value
    assert!(r.profile.windows(2).all(|w| w[0].s < w[1].s));
    let end = r.profile.last().unwrap();
    assert!((end.s - 1.0).abs() < 1e-12 && (end.delta_c - r.delta_c).abs() < 1e-15);
    assert!(r.omega_end > r.omega_start);
}

#[test]
fn leakage_falls_as_inverse_time() {
    let p = params();
    let opts = LeakageOptions { check_cutoff: false, ..Default::default() };
    let t = [time(&p, 100.0), time(&p, 400.0)];
    let d: Vec<f64> = t.iter().map(|&t_f| brute_force_leakage(&p, t_f, &opts).unwrap().delta_c).collect();
    let slope = loglog_slope(&t, &d);
    assert!((-1.15..=-0.85).contains(&slope), "slope {slope}");
}

#[test]
fn leakage_is_linear_in_the_dilation_rate() {
    let p = params();
    let t_f = time(&p, 400.0);
    let run = |rate| {
        brute_force_leakage(&p, t_f, &LeakageOptions { rate, check_cutoff: false, ..Default::default() })
            .unwrap()
            .delta_c
    };
    let ratio = run(DilationRate::Dilation) / run(DilationRate::Exact);
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
}

#[test]
fn rejects_bad_times() {
    let p = params();
    for t_f in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(brute_force_leakage(&p, t_f, &LeakageOptions::default()).is_err());
    }
}

#[test]
fn csv_is_fixed_format() {
    let p = params();
    let rows = vec![OracleRow { a: p.a, b: p.b_final, t_f: 2.5, m_max: 16, delta_c: 1e-3, scaled_constant: 0.75 }];
    let mut a = Vec::new();
    write_csv(&rows, &mut a).unwrap();
    let text = String::from_utf8(a).unwrap();
    assert_eq!(
        text,
        "A,B,t_f,m_max,delta_c_norm,scaled_constant\n\
         1.000000000000e1,3.000000000000e0,2.500000000000e0,16,1.000000000000e-3,7.500000000000e-1\n"
    );
}
