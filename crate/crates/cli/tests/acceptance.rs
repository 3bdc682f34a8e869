//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fhloc::channel::ChannelKind;
use fhloc::locator::{
    exact_tdoa, jacobian, range_differences, solve_ls_bf, solve_ls_bf_gn, solve_ml_grid, Algorithm, GnOptions,
    GridSpec, Position, SensorArray,
};
use fhloc::montecarlo::{run_campaigns, run_tdoa_diag, CampaignResult, Scenario};
use fhloc::signal::{generate_pulse_train, rms_bandwidth, FhssParams};
use fhloc::tdoa::{crlb_single_pulse, TdoaMeasurement};
use fhloc::SPEED_OF_LIGHT;
use fhloc_cli::cmd_tdoa_diag;
use fhloc_cli::config::preset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRGR_TRIALS: usize = 500;
const WLAN_TRIALS: usize = 300;
const AWGN_TRIALS: usize = 200;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, n: u32, pass: bool, detail: String, started: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {tag}  {detail}  ({:.1} s)", started.elapsed().as_secs_f64());
        if !pass {
            self.failed += 1;
        }
    }
}

fn scenario(name: &str, trials: usize) -> Scenario {
    let mut s = preset(name).unwrap().to_scenario().unwrap();
    s.num_trials = trials;
    s
}

fn random_geometry(rng: &mut ChaCha8Rng) -> (SensorArray, Position) {
    loop {
        let pts: Vec<(f64, f64)> =
            (0..4).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
        let min_sep = pts
            .iter()
            .enumerate()
            .flat_map(|(i, a)| pts[i + 1..].iter().map(move |b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()))
            .fold(f64::INFINITY, f64::min);
        // no three sensors close to collinear
        let mut min_area = f64::INFINITY;
        for i in 0..4 {
            for j in i + 1..4 {
                for k in j + 1..4 {
                    let (a, b, c) = (pts[i], pts[j], pts[k]);
                    let area = ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs() / 2.0;
                    min_area = min_area.min(area);
                }
            }
        }
        let x = Position::from_vec(vec![rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]);
        let near = pts.iter().any(|p| ((p.0 - x[0]).powi(2) + (p.1 - x[1]).powi(2)).sqrt() < 1.0);
        if min_sep > 20.0 && min_area > 300.0 && !near {
            return (SensorArray::from_xy(&pts).unwrap(), x);
        }
    }
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = GridSpec { x_min: 0.0, x_max: 100.0, y_min: 0.0, y_max: 100.0, resolution: 0.5 };
    let ml_bound = grid.resolution * 2f64.sqrt() / 2.0;
    let (mut bf, mut gn, mut ml) = (0.0f64, 0.0f64, 0.0f64);
    let mut ml_outside = 0;
    for _ in 0..1000 {
        let (s, x) = random_geometry(&mut rng);
        let m = exact_tdoa(&x, &s);
        bf = bf.max((solve_ls_bf(&s, &m).unwrap().position - &x).norm());
        gn = gn.max((solve_ls_bf_gn(&s, &m, &GnOptions::default()).unwrap().position - &x).norm());
        let e = (solve_ml_grid(&s, &m, &grid).unwrap().position - &x).norm();
        if e > ml_bound {
            ml_outside += 1;
        }
        ml = ml.max(e);
    }
    let pass = bf < 1e-6 && gn < 1e-9 && ml <= ml_bound;
    r.check(
        1,
        pass,
        format!(
            "max error LS-BF {bf:.2e} m, GN {gn:.2e} m, ML {ml:.3} m ({ml_outside} of 1000 beyond {ml_bound:.3} m)"
        ),
        t,
    );
}

/// Lowest-index minimum of the residual, scanned row by row.
fn exhaustive_scan(s: &SensorArray, m: &TdoaMeasurement, g: &GridSpec) -> usize {
    let nx = ((g.x_max - g.x_min) / g.resolution).round() as usize + 1;
    let ny = ((g.y_max - g.y_min) / g.resolution).round() as usize + 1;
    let v = s.positions();
    let dist = |x: f64, y: f64, p: &Position| ((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt();
    let mut best = (f64::INFINITY, 0);
    for iy in 0..ny {
        for ix in 0..nx {
            let x = g.x_min + ix as f64 * g.resolution;
            let y = g.y_min + iy as f64 * g.resolution;
            let r0 = dist(x, y, &v[0]);
            let cost: f64 =
                (1..v.len()).map(|j| ((dist(x, y, &v[j]) - r0) / SPEED_OF_LIGHT - m.values[j - 1]).powi(2)).sum();
            if cost < best.0 {
                best = (cost, iy * nx + ix);
            }
        }
    }
    best.1
}

fn criterion_2(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = GridSpec { x_min: 0.0, x_max: 50.0, y_min: 0.0, y_max: 50.0, resolution: 0.5 };
    let mut mismatches = 0;
    for i in 0..100 {
        let (s, m) = if i % 4 == 0 {
            // mirror-symmetric array with equal TDoAs: exact ties between x and 50 - x
            let s = SensorArray::from_xy(&[(25.0, 50.0), (0.0, 0.0), (50.0, 0.0)]).unwrap();
            let tau = rng.random_range(-40e-9..40e-9);
            (s, TdoaMeasurement::from_values(vec![tau, tau], 1))
        } else {
            let (s, x) = random_geometry(&mut rng);
            let mut m = exact_tdoa(&x, &s);
            for v in &mut m.values {
                *v += rng.random_range(-20e-9..20e-9);
            }
            (s, m)
        };
        let est = solve_ml_grid(&s, &m, &grid).unwrap();
        let k = exhaustive_scan(&s, &m, &grid);
        if est.position.as_slice() != grid.point(k) {
            mismatches += 1;
        }
    }
    r.check(2, mismatches == 0, format!("{mismatches} of 100 instances differ from the exhaustive scan"), t);
}

fn criterion_3(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut increases = 0;
    for _ in 0..100 {
        let (s, x) = random_geometry(&mut rng);
        let j = jacobian(&x, &s).unwrap();
        let mut fd = j.clone();
        for k in 0..2 {
            let mut e = Position::zeros(2);
            e[k] = h;
            let col = (range_differences(&(&x + &e), &s) - range_differences(&(&x - &e), &s)) / (2.0 * h);
            fd.set_column(k, &col);
        }
        worst = worst.max((&fd - &j).norm() / j.norm());

        let mut m = exact_tdoa(&x, &s);
        for v in &mut m.values {
            *v += rng.random_range(-15e-9..15e-9);
        }
        let est = solve_ls_bf_gn(&s, &m, &GnOptions::default()).unwrap();
        if est.residual_history.windows(2).any(|w| w[1] > w[0]) {
            increases += 1;
        }
    }
    let pass = worst < 1e-5 && increases == 0;
    r.check(3, pass, format!("max relative Jacobian error {worst:.2e}, {increases} runs with a residual increase"), t);
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn central_90_width(errors: &[f64]) -> f64 {
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.95) - quantile(&v, 0.05)
}

fn criterion_4(r: &mut Report, out: &Path) -> Vec<f64> {
    let t = Instant::now();
    let mut cfg = preset("fig4").unwrap();
    cfg.campaign.num_trials = TRGR_TRIALS;
    let rep = cmd_tdoa_diag(&cfg, out, 1.0).unwrap();
    let within = rep.summary.fraction_within_10ns;
    r.check(
        4,
        within >= 0.95,
        format!(
            "{:.2}% of {} per-pulse errors within ±10 ns ({:.2}% within ±8 ns)",
            100.0 * within,
            rep.summary.count,
            100.0 * rep.summary.fraction_within_8ns
        ),
        t,
    );
    rep.errors_ns
}

fn p90s(c: &CampaignResult) -> [f64; 3] {
    [Algorithm::Ml, Algorithm::LsBfGn, Algorithm::LsBf].map(|a| c.p90(a).unwrap_or(f64::NAN))
}

fn fmt3(v: [f64; 3]) -> String {
    format!("ML {:.2} / GN {:.2} / LS-BF {:.2} m", v[0], v[1], v[2])
}

fn within(v: f64, target: f64, rel: f64) -> bool {
    (v - target).abs() <= rel * target
}

fn criteria_5_6_9(r: &mut Report) {
    let t = Instant::now();
    let names = ["fig2_alpha0", "fig2_alpha10", "fig2_alpha20", "fig3"];
    let scenarios: Vec<Scenario> = names.iter().map(|n| scenario(n, TRGR_TRIALS)).collect();
    let results: Vec<CampaignResult> = run_campaigns(&scenarios).into_iter().map(|c| c.unwrap()).collect();
    let [a0, a10, a20, avg] = [0, 1, 2, 3].map(|i| p90s(&results[i]));

    let low =
        (0.5..=1.5).contains(&a0[0]) && (0.5..=1.5).contains(&a0[1]) && (0.9..=2.7).contains(&a0[2]) && a0[0] <= a0[2];
    let high = a20[0] <= a20[1]
        && a20[1] <= a20[2]
        && within(a20[0], 4.4, 0.5)
        && within(a20[1], 5.8, 0.5)
        && within(a20[2], 11.0, 0.5);
    r.check(5, low && high, format!("alpha 0: {}; alpha 20 ns: {}", fmt3(a0), fmt3(a20)), t);

    let lower = (0..3).all(|i| avg[i] < a20[i]);
    let ml_ok = (0.75..=2.25).contains(&avg[0]);
    r.check(6, lower && ml_ok, format!("alpha 20 ns, N_avg 20: {} (N_avg 1: {})", fmt3(avg), fmt3(a20)), t);

    let mono = (0..3).all(|i| a0[i] <= a10[i] && a10[i] <= a20[i]);
    r.check(9, mono, format!("alpha 10 ns: {}", fmt3(a10)), t);
}

fn criterion_7(r: &mut Report, out: &Path, trgr_errors_ns: &[f64]) {
    let t = Instant::now();
    let mut cfg = preset("fig6").unwrap();
    cfg.campaign.num_trials = WLAN_TRIALS;
    let diag = cmd_tdoa_diag(&cfg, out, 10.0).unwrap();
    let ratio = central_90_width(&diag.errors_ns) / central_90_width(trgr_errors_ns);

    let single = scenario("fig6", WLAN_TRIALS);
    let averaged = scenario("fig5", WLAN_TRIALS);
    let res: Vec<CampaignResult> = run_campaigns(&[single, averaged]).into_iter().map(|c| c.unwrap()).collect();
    let (one, twenty) = (p90s(&res[0]), p90s(&res[1]));

    let order = one[0] < one[1] && one[1] < one[2];
    let drop = (0..3).all(|i| twenty[i] < one[i]);
    let ten = within(twenty[0], 10.0, 0.5) && within(twenty[1], 10.0, 0.5);
    r.check(
        7,
        ratio >= 10.0 && order && drop && ten,
        format!("90% interval width ratio WLAN/TRGR {ratio:.1}; N_avg 1: {}; N_avg 20: {}", fmt3(one), fmt3(twenty)),
        t,
    );
}

fn criterion_8(r: &mut Report) {
    let t = Instant::now();
    let params = FhssParams { num_pulses: 1, pulse_period: 2e-3, ..FhssParams::default() };
    let (pulse, _) = generate_pulse_train(&params).unwrap();
    let b_rms = rms_bandwidth(&pulse);
    let mut base = Scenario::default();
    base.channel.kind = ChannelKind::Awgn;
    base.num_trials = AWGN_TRIALS;
    let std = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [5.0, 10.0, 20.0] {
        base.snr_db = snr;
        let diag = run_tdoa_diag(&base).unwrap();
        let single: Vec<f64> = diag.iter().flat_map(|d| d.pulse_errors()).map(|e| e.2).collect();
        let accumulated: Vec<f64> = diag
            .iter()
            .filter_map(|d| d.result.as_ref().ok())
            .flat_map(|m| m.measured.values.iter().zip(&m.truth).map(|(a, b)| a - b).collect::<Vec<_>>())
            .collect();
        let g = 10f64.powf(snr / 10.0);
        let bound = crlb_single_pulse(b_rms, base.fhss.signal_bandwidth(), base.fhss.pulse_width, g, g).unwrap();
        let ratio = std(&single) / bound;
        let gain = std(&single) / std(&accumulated);
        pass &= (0.5..=2.0).contains(&ratio) && within(gain, 10f64.sqrt(), 0.25);
        parts.push(format!("{snr} dB: std/CRLB {ratio:.2}, gain {gain:.2}"));
    }
    r.check(8, pass, parts.join("; "), t);
}

fn cli_outputs(threads: usize, dir: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_fhloc");
    let runs: [(&str, &str); 2] = [("run", "fig2_alpha10"), ("tdoa-diag", "fig6")];
    let mut files = Vec::new();
    for (cmd, p) in runs {
        let out = dir.join(format!("{cmd}-{threads}"));
        let status = Command::new(bin)
            .args(["--threads", &threads.to_string(), cmd, "--preset", p, "-o", "num_trials=24", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let mut names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for n in names {
            files.push((format!("{cmd}/{}", n.file_name().unwrap().to_string_lossy()), std::fs::read(&n).unwrap()));
        }
    }
    files
}

fn criterion_10(r: &mut Report, dir: &Path) {
    let t = Instant::now();
    let one = cli_outputs(1, dir);
    let four = cli_outputs(4, dir);
    let names: Vec<&str> = one.iter().map(|f| f.0.as_str()).collect();
    let pass = !one.is_empty() && one == four;
    r.check(10, pass, format!("{} files compared at 1 and 4 threads: {}", one.len(), names.join(", ")), t);
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Report { failed: 0 };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    let trgr = criterion_4(&mut r, &dir.path().join("trgr-diag"));
    criteria_5_6_9(&mut r);
    criterion_7(&mut r, &dir.path().join("wlan-diag"), &trgr);
    criterion_8(&mut r);
    criterion_10(&mut r, dir.path());
    println!("acceptance: {} failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
