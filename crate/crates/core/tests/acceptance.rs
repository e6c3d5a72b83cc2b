//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported as FAIL but do not fail
//! the run; any other failure does, and so does a known failure that starts
//! passing (the list is then out of date).

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankmatch::asymptotics::{self, QuadratureConfig};
use rankmatch::experiments::{self, compare_methods, write_rows_csv, Distortion, RunConfig, RunResult};
use rankmatch::matcher::{correlate_grid, estimate_least_squares};
use rankmatch::{
    estimate, generate_signal, ks_distance, run_monte_carlo, wrap_distance, AsymptoticReport, Method, NoiseFamily,
    NoiseModel, RefineOpts, Template,
};

/// t3 column of the efficiency table: the computed values are about 1.83,
/// well outside ±0.005 of the reference values 2.008 / 1.992 / 2.008.
const KNOWN_FAILURES: &[u32] = &[1];

const SEED: u64 = 20_240_601;

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reports() -> &'static Vec<(String, NoiseFamily, AsymptoticReport)> {
    static REPORTS: OnceLock<Vec<(String, NoiseFamily, AsymptoticReport)>> = OnceLock::new();
    REPORTS.get_or_init(|| {
        let cfg = QuadratureConfig {
            error_estimate: false,
            ..QuadratureConfig::default()
        };
        let mut out = Vec::new();
        for t in Template::builtins() {
            for family in NoiseFamily::ALL {
                let noise = NoiseModel::new(family, 1.0).unwrap();
                let r = asymptotics::report_with(&t, &noise, &cfg).unwrap();
                out.push((t.id().to_string(), family, r));
            }
        }
        out
    })
}

fn desk_run(family: NoiseFamily) -> &'static RunResult {
    static RUNS: OnceLock<Vec<RunResult>> = OnceLock::new();
    let runs = RUNS.get_or_init(|| {
        NoiseFamily::ALL
            .iter()
            .map(|&f| {
                let cfg = RunConfig {
                    master_seed: SEED,
                    asymptotics: f == NoiseFamily::Gaussian,
                    ..RunConfig::new("A", NoiseModel::new(f, 1.0).unwrap())
                };
                run_monte_carlo(&cfg).unwrap()
            })
            .collect()
    });
    &runs[NoiseFamily::ALL.iter().position(|&f| f == family).unwrap()]
}

fn efficiency_table() -> Outcome {
    let reference = [
        ("A", NoiseFamily::Gaussian, 0.949),
        ("A", NoiseFamily::StudentT3, 2.008),
        ("B", NoiseFamily::Gaussian, 0.940),
        ("B", NoiseFamily::StudentT3, 1.992),
        ("C", NoiseFamily::Gaussian, 0.948),
        ("C", NoiseFamily::StudentT3, 2.008),
    ];
    let rows: Vec<_> = reports()
        .iter()
        .map(|(t, f, r)| asymptotics::TableRow {
            template: t.clone(),
            noise: f.table_label().into(),
            are: r.are,
        })
        .collect();
    let csv = asymptotics::table_csv(&rows);
    let mut pass = true;
    let mut notes = Vec::new();
    for (t, f, want) in reference {
        let got = reports()
            .iter()
            .find(|(id, fam, _)| id == t && *fam == f)
            .unwrap()
            .2
            .are;
        let ok = (got - want).abs() <= 0.005;
        pass &= ok;
        notes.push(format!(
            "{t}/{}={got:.4}{}{want}",
            f.table_label(),
            if ok { "~" } else { "!=" }
        ));
    }
    for t in ["A", "B", "C"] {
        let ok = csv.lines().any(|l| l == format!("{t},cauchy,inf"));
        pass &= ok;
        notes.push(format!("{t}/cauchy={}", if ok { "inf" } else { "missing" }));
    }
    outcome(pass, notes.join(" "))
}

fn population_maximum() -> Outcome {
    let cfg = QuadratureConfig::default();
    let mut pass = true;
    let mut worst_slope: f64 = 0.0;
    let mut notes = Vec::new();
    for t in Template::builtins() {
        for family in NoiseFamily::ALL {
            let noise = NoiseModel::new(family, 1.0).unwrap();
            let d = asymptotics::verify_local_max(&t, &noise, &cfg);
            let m2 = reports()
                .iter()
                .find(|(id, f, _)| id == t.id() && *f == family)
                .unwrap()
                .2
                .m_second;
            worst_slope = worst_slope.max(d.m_prime_at_0.abs());
            let ok = d.m_prime_at_0.abs() <= 1e-6 && m2 < 0.0 && d.is_global_max_on_grid && d.grid_argmax_theta == 0.0;
            if !ok {
                notes.push(format!(
                    "{}/{family}: M'={:e} M''={m2} argmax={}",
                    t.id(),
                    d.m_prime_at_0,
                    d.grid_argmax_theta
                ));
            }
            pass &= ok;
        }
    }
    notes.insert(
        0,
        format!("max |M'(0)|={worst_slope:.1e}, all M''<0, argmax 0 on 4096 grid"),
    );
    outcome(pass, notes.join("; "))
}

fn limit_law() -> Outcome {
    let run = desk_run(NoiseFamily::Gaussian);
    let s = run.summary(Method::Rank).unwrap();
    let avar = run.asymptotics.as_ref().unwrap().avar_rank;
    let ratio = s.var_sqrtn_err / avar;
    let ks = ks_distance(&run.sqrtn_errors(Method::Rank), avar.sqrt()).unwrap();
    outcome(
        (ratio - 1.0).abs() <= 0.2 && ks <= 0.1,
        format!(
            "empirical var {:.4} / predicted {avar:.4} = {ratio:.3}, KS {ks:.4}",
            s.var_sqrtn_err
        ),
    )
}

fn efficiency_ordering() -> Outcome {
    let are = |f| compare_methods(desk_run(f)).unwrap();
    let (g, t3, c) = (
        are(NoiseFamily::Gaussian),
        are(NoiseFamily::StudentT3),
        are(NoiseFamily::Cauchy),
    );
    outcome(
        g.are < 1.1 && t3.are > 1.4 && c.are >= 5.0,
        format!(
            "gaussian {:.3}±{:.3}, t3 {:.3}±{:.3}, cauchy {:.3e}",
            g.are, g.bootstrap_se, t3.are, t3.bootstrap_se, c.are
        ),
    )
}

fn random_template(rng: &mut ChaCha8Rng) -> Template {
    Template::builtins()[rng.random_range(0..3)].clone()
}

fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut notes = Vec::new();
    let mut pass = true;

    let mut worst_fft: f64 = 0.0;
    for _ in 0..100 {
        let t = random_template(&mut rng);
        let n = rng.random_range(2..=600);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fft = correlate_grid(&w, &t).unwrap();
        for (k, &c) in fft.iter().enumerate() {
            let direct: f64 = w
                .iter()
                .enumerate()
                .map(|(i, &wi)| wi * t.eval(((i + 1) as f64 - k as f64) / n as f64))
                .sum::<f64>()
                / n as f64;
            worst_fft = worst_fft.max((c - direct).abs());
        }
    }
    pass &= worst_fft <= 1e-10;
    notes.push(format!("fft {worst_fft:.1e}"));

    let mut same_argmax = 0;
    for case in 0..100 {
        let t = random_template(&mut rng);
        let n = rng.random_range(16..=400);
        let noise = NoiseModel::new(NoiseFamily::ALL[case % 3], rng.random_range(0.1..2.0)).unwrap();
        let s = generate_signal(&t, rng.random(), n, Some(&noise), rng.random()).unwrap();
        let p = estimate(&s, &t, Method::Pearson, RefineOpts::default()).unwrap();
        let ls = estimate_least_squares(&s, &t, RefineOpts::default()).unwrap();
        same_argmax += usize::from(p.grid_argmax == ls.grid_argmin);
    }
    pass &= same_argmax == 100;
    notes.push(format!("pearson=ls {same_argmax}/100"));

    let mut identical = 0;
    for seed in 0..20 {
        let t = random_template(&mut rng);
        let s = generate_signal(&t, rng.random(), 1000, Some(&NoiseModel::gaussian(0.7)), seed).unwrap();
        let base = estimate(&s, &t, Method::Rank, RefineOpts::default()).unwrap();
        for d in Distortion::ALL {
            let bent = estimate(&s.map(|y| d.apply(y)), &t, Method::Rank, RefineOpts::default()).unwrap();
            identical += usize::from(bent == base);
        }
    }
    pass &= identical == 60;
    notes.push(format!("monotone {identical}/60"));

    let mut worst_phi2: f64 = 0.0;
    for noise in [NoiseModel::gaussian(1.0), NoiseModel::cauchy(1.0)] {
        for i in 0..100 {
            let t = -10.0 + 20.0 * i as f64 / 99.0;
            worst_phi2 = worst_phi2.max((noise.phi2_by_quadrature(t) - noise.phi2(t)).abs());
        }
    }
    pass &= worst_phi2 <= 1e-8;
    notes.push(format!("phi2 {worst_phi2:.1e}"));

    let energy = (Template::builtin_c().deriv_energy() - 110_592.0 / 10_395.0).abs();
    pass &= energy <= 1e-8;
    notes.push(format!("energy(C) {energy:.1e}"));
    outcome(pass, notes.join(", "))
}

fn noiseless_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 6);
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for _ in 0..50 {
        let t = random_template(&mut rng);
        let n = rng.random_range(500..=5000);
        let theta: f64 = rng.random();
        let s = generate_signal(&t, theta, n, None, 0).unwrap();
        for m in Method::ALL {
            let e = estimate(&s, &t, m, RefineOpts::default()).unwrap();
            let err = wrap_distance(e.theta_hat, theta);
            worst = worst.max(err * n as f64);
            fails += usize::from(err > 1.0 / n as f64 + 1e-7);
        }
    }
    outcome(
        fails == 0,
        format!("worst error {worst:.3}/n over 100 estimates, {fails} outside 1/n + 1e-7"),
    )
}

fn determinism() -> Outcome {
    let csv = |workers| {
        let cfg = RunConfig {
            master_seed: SEED,
            workers,
            asymptotics: false,
            ..RunConfig::new("B", NoiseModel::student_t3(1.0))
        };
        let mut buf = Vec::new();
        write_rows_csv(&experiments::run_monte_carlo(&cfg).unwrap().rows, &mut buf).unwrap();
        buf
    };
    let (one, eight) = (csv(1), csv(8));
    outcome(
        one == eight,
        format!(
            "rows.csv {} bytes, workers 1 vs 8 identical: {}",
            one.len(),
            one == eight
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        (1, "efficiency table", efficiency_table),
        (2, "population criterion peaks at the truth", population_maximum),
        (3, "normal limit at desk scale", limit_law),
        (4, "empirical efficiency ordering", efficiency_ordering),
        (5, "oracle equivalences", oracle_equivalences),
        (6, "noiseless recovery", noiseless_recovery),
        (7, "determinism across workers", determinism),
    ];
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (o.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known failure)",
        };
        if o.pass == known {
            unexpected += 1;
        }
        println!(
            "{tag} [{id}] {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected result(s)");
        ExitCode::FAILURE
    }
}
