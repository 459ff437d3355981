//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use viscal_cli::config::{ExperimentConfig, MvMethod};
use viscal_cli::pipeline::{Experiment, HistogramRow};
use viscal_cli::{run_experiment, with_workers};
use viscal_core::classifiers::Activation;
use viscal_core::mvconstruct::SampleMatrix;
use viscal_core::mvscore::{dependence_weights, energy_score, pre_rank, variogram_score, PreRankKind, WeightMatrix};
use viscal_core::uniscore::{RankHistogram, ScoreKind};
use viscal_core::{
    build_scale, crps_discrete, ecc, mlp_fit, polr_fit, reliability_index, schaake_shuffle, stationary_bootstrap_ci,
    stream, synth, verification_rank, BootstrapOptions, RollingWindow, MlpArchitecture, MlpModel, Pmf, SynthConfig, TrainOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Combines sub-checks; the detail lists the failing ones, or all when none fail.
fn combine(checks: Vec<(bool, String)>) -> Outcome {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1.as_str()).collect();
    if failed.is_empty() {
        outcome(true, checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; "))
    } else {
        outcome(false, failed.join("; "))
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

// ---------------------------------------------------------------- 1

fn scoring_oracles() -> Outcome {
    let start = Instant::now();
    let scale = build_scale();
    let mut rng = stream!(1, "acceptance", "oracles");
    let (mut crps_worst, mut es_worst, mut vs_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let sparsity: f64 = rng.random();
        let w: Vec<f64> = (0..84).map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random() }).collect();
        let w = if w.iter().all(|&v| v == 0.0) { vec![1.0; 84] } else { w };
        let pmf = Pmf::from_weights(w).unwrap();
        let y = rng.random_range(0..84);
        let mut first = 0.0;
        let mut second = 0.0;
        for k in 0..84 {
            first += pmf.prob(k) * (scale.value(k) - scale.value(y)).abs();
            for l in 0..84 {
                second += pmf.prob(k) * pmf.prob(l) * (scale.value(k) - scale.value(l)).abs();
            }
        }
        let oracle = first - 0.5 * second;
        let got = crps_discrete(&pmf, y, &scale);
        crps_worst = crps_worst.max(if oracle == 0.0 { got.abs() } else { rel_err(got, oracle) });

        let k = rng.random_range(1..60);
        let members: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..70_000.0)).collect();
        let obs = rng.random_range(0.0..70_000.0);
        let mut a = 0.0;
        let mut b = 0.0;
        for &x in &members {
            a += (x - obs).abs();
            for &z in &members {
                b += (x - z).abs();
            }
        }
        let kf = k as f64;
        let oracle = a / kf - b / (2.0 * kf * kf);
        let es = energy_score(&SampleMatrix::new(k, 1, members).unwrap(), &[obs]).unwrap();
        es_worst = es_worst.max(rel_err(es, oracle));

        let d = rng.random_range(2..8);
        let k = rng.random_range(1..30);
        let values: Vec<f64> = (0..k * d).map(|_| rng.random_range(0.0..70_000.0)).collect();
        let sample = SampleMatrix::new(k, d, values).unwrap();
        let obs: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..70_000.0)).collect();
        let mut wv = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let w = rng.random::<f64>();
                wv[i * d + j] = w;
                wv[j * d + i] = w;
            }
        }
        let weights = WeightMatrix::new(d, wv.clone()).unwrap();
        let p = 0.5;
        let mut oracle = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut m = 0.0;
                for r in 0..k {
                    m += (sample.get(r, i) - sample.get(r, j)).abs().powf(p);
                }
                let t = (obs[i] - obs[j]).abs().powf(p) - m / k as f64;
                oracle += wv[i * d + j] * t * t;
            }
        }
        let vs = variogram_score(&sample, &obs, &weights, p).unwrap();
        vs_worst = vs_worst.max(rel_err(vs, oracle));
    }
    let secs = start.elapsed().as_secs_f64();
    combine(vec![
        (crps_worst <= 1e-9, format!("CRPS max rel err {crps_worst:.2e}")),
        (es_worst <= 1e-9, format!("ES(D=1) max rel err {es_worst:.2e}")),
        (vs_worst <= 1e-10, format!("VS max rel err {vs_worst:.2e}")),
        (secs < 30.0, format!("{secs:.1} s")),
    ])
}

// ---------------------------------------------------------------- 2

fn degenerate_forms() -> Outcome {
    let scale = build_scale();
    let obs = [300.0, 4000.0, 12000.0];
    let one = SampleMatrix::from_rows(&[vec![1000.0, 1000.0, 16000.0]]).unwrap();
    let es1 = energy_score(&one, &obs).unwrap();
    let euclid = ((700.0f64).powi(2) + 3000.0f64.powi(2) + 4000.0f64.powi(2)).sqrt();
    let perfect = SampleMatrix::from_rows(&vec![obs.to_vec(); 51]).unwrap();
    let vs0 = variogram_score(&perfect, &obs, &WeightMatrix::unit(3), 0.5).unwrap();
    // zero up to rounding of the member mean, relative to the observation's own variogram
    let vs_scale: f64 = obs.iter().flat_map(|a| obs.iter().map(move |b| (a - b).abs())).sum();
    let crps0 = (0..84).map(|k| crps_discrete(&Pmf::point_mass(84, k), k, &scale)).fold(0.0f64, f64::max);
    let k = 51;
    let ri_uniform = reliability_index(&RankHistogram { counts: vec![10; k + 1], total: 10 * (k as u64 + 1) }).unwrap();
    let mut single = RankHistogram::new(k);
    for _ in 0..25 {
        single.add(7).unwrap();
    }
    let ri_one = reliability_index(&single).unwrap();
    let expected = 2.0 * k as f64 / (k as f64 + 1.0);
    combine(vec![
        (es1 == euclid, format!("ES(K=1) {es1} vs {euclid}")),
        (vs0.abs() <= 1e-12 * vs_scale, format!("VS(perfect) {vs0:.1e}")),
        (crps0 == 0.0, format!("CRPS(point mass at obs) {crps0}")),
        (ri_uniform == 0.0, format!("RI(uniform) {ri_uniform}")),
        ((ri_one - expected).abs() < 1e-12, format!("RI(one bin) {ri_one:.6} vs {expected:.6}")),
    ])
}

// ---------------------------------------------------------------- 3

fn spearman_is_one(a: &[f64], b: &[f64]) -> bool {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0usize; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos;
        }
        r
    };
    rank(a) == rank(b)
}

fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn reordering() -> Outcome {
    let mut rng = stream!(3, "acceptance", "reorder");
    let mut sorted_ok = true;
    let mut spearman_ok = true;
    let mut spearman_checked = 0;

    // ECC on continuous raw ensembles
    for _ in 0..250 {
        let d = rng.random_range(1..8);
        let k = rng.random_range(2..52);
        let samples: Vec<Vec<f64>> = (0..d)
            .map(|_| sorted(&(0..k).map(|_| rng.random_range(0.0..70_000.0)).collect::<Vec<_>>()))
            .collect();
        let raw = SampleMatrix::new(k, d, (0..k * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        let out = ecc(&samples, &raw, &mut rng).unwrap();
        for j in 0..d {
            sorted_ok &= sorted(&out.column(j)) == samples[j];
            spearman_ok &= spearman_is_one(&out.column(j), &raw.column(j));
            spearman_checked += 1;
        }
    }

    // Schaake shuffle on historical observations
    let cfg = SynthConfig { n_stations: 5, n_days: 400, lead_times: vec![6], ensemble_size: 11, ..SynthConfig::default() };
    let ds = synth::generate(&cfg).unwrap();
    let stations: Vec<usize> = (0..5).collect();
    let window = RollingWindow { length_days: 350 };
    let dates = ds.init_dates();
    for i in 0..250 {
        let date = dates[350 + i % 50];
        let k = rng.random_range(2..52);
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|_| sorted(&(0..k).map(|_| rng.random_range(0.0..70_000.0)).collect::<Vec<_>>()))
            .collect();
        let tod = chrono::NaiveTime::from_hms_opt(6, 0, 0).unwrap();
        let (out, template) = schaake_shuffle(&samples, &ds, &stations, window, date, tod, k, &mut rng).unwrap();
        for j in 0..5 {
            sorted_ok &= sorted(&out.column(j)) == samples[j];
            let t = template.matrix.column(j);
            if !has_ties(&t) {
                spearman_ok &= spearman_is_one(&out.column(j), &t);
                spearman_checked += 1;
            }
        }
    }

    // all-ties template column: the member receiving the smallest value is uniform
    let k = 6;
    let samples = vec![(1..=k).map(|v| v as f64).collect::<Vec<_>>()];
    let raw = SampleMatrix::new(k, 1, vec![500.0; k]).unwrap();
    let mut counts = vec![0u64; k];
    for _ in 0..10_000 {
        let out = ecc(&samples, &raw, &mut rng).unwrap();
        let pos = out.column(0).iter().position(|&v| v == 1.0).unwrap();
        counts[pos] += 1;
    }
    let p = chi_square_p(&counts);
    combine(vec![
        (sorted_ok, "sorted columns equal input samples (500 cases)".to_string()),
        (spearman_ok, format!("Spearman = 1 on {spearman_checked} tie-free columns")),
        (p > 0.001, format!("all-ties chi-square p = {p:.3}")),
    ])
}

// ---------------------------------------------------------------- 4

fn polr() -> Outcome {
    let mut rng = stream!(4, "acceptance", "polr");
    let n = 2000;
    let labels: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            20 + (u * u * 15.0) as usize
        })
        .collect();
    let x0 = vec![vec![0.0]; n];
    let opts = TrainOptions::polr();
    let m = polr_fit(&x0, &labels, &[false], &opts).unwrap();
    let cum = m.cumulative(&[0.0]).unwrap();
    let cdf_err = m
        .category_map
        .iter()
        .zip(&cum)
        .map(|(&c, p)| (p - labels.iter().filter(|&&l| l <= c).count() as f64 / n as f64).abs())
        .fold(0.0f64, f64::max);

    // feature pushing visibility down: its nonnegative coefficient must vanish
    let u: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let anti: Vec<usize> = u.iter().map(|&v| 40 - (10.0 * v + 3.0 * rng.random::<f64>()) as usize).collect();
    let x: Vec<Vec<f64>> = u.iter().map(|&v| vec![v]).collect();
    let fit = polr_fit(&x, &anti, &[true], &opts).unwrap();
    let beta = fit.coefficients[0];
    let mut c = BTreeMap::new();
    for &l in &anti {
        *c.entry(l).or_insert(0usize) += 1;
    }
    let oracle: f64 = -c.values().map(|&k| k as f64 * (k as f64 / n as f64).ln()).sum::<f64>() / n as f64;
    let nll = fit.neg_log_likelihood(&x, &anti).unwrap();
    combine(vec![
        (cdf_err <= 1e-6, format!("intercept-only CDF max err {cdf_err:.2e}")),
        (beta.abs() <= 1e-6, format!("masked anti-monotone coefficient {beta:.2e}")),
        ((nll - oracle).abs() <= 1e-8, format!("mean NLL {nll:.10} vs oracle {oracle:.10}")),
    ])
}

// ---------------------------------------------------------------- 5

fn mlp() -> Outcome {
    let mut rng = stream!(5, "acceptance", "mlp");
    let mut worst = 0.0f64;
    for net in 0..20 {
        let input = rng.random_range(1..6);
        let classes = rng.random_range(2..8);
        let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..7)).collect();
        let activation = if net % 4 == 3 { Activation::Relu } else { Activation::Tanh };
        let arch = MlpArchitecture { hidden, activation };
        let mut model = MlpModel::init(input, classes, &arch, &mut rng).unwrap();
        let params: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.set_params(&params);
        let x: Vec<Vec<f64>> = (0..8).map(|_| (0..input).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..classes)).collect();
        let mut grad = vec![0.0; params.len()];
        model.loss_and_gradient(&x, &y, &mut grad);
        let h = 1e-6;
        let mut fd = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            model.set_params(&p);
            let up = model.mean_loss(&x, &y);
            p[i] -= 2.0 * h;
            model.set_params(&p);
            let down = model.mean_loss(&x, &y);
            fd[i] = (up - down) / (2.0 * h);
        }
        model.set_params(&params);
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / norm);
    }

    let x: Vec<Vec<f64>> = (0..16).map(|i| vec![(i % 4) as f64 / 3.0, (i / 4) as f64 / 3.0]).collect();
    let y: Vec<usize> = (0..16).map(|i| 10 + i * 3).collect();
    let opts = TrainOptions { max_iter: 3000, validation_fraction: 0.0, batch_size: 16, seed: 5, ..TrainOptions::mlp() };
    let model = mlp_fit(&x, &y, &MlpArchitecture::default(), &opts).unwrap();
    let ce = model.mean_loss(&x, &y);
    combine(vec![
        (worst < 1e-5, format!("gradient max rel err {worst:.2e} over 20 nets")),
        (ce < 0.05, format!("toy overfit cross-entropy {ce:.4}")),
    ])
}

// ---------------------------------------------------------------- 6

/// Univariate histogram over the first `n` observed cases, and pre-rank
/// histograms over the first `n` complete station vectors, comparing the
/// truth with members mapped to the same category grid.
fn raw_histograms(cfg: &SynthConfig, n: usize) -> (RankHistogram, Vec<(PreRankKind, RankHistogram)>) {
    let ds = synth::generate(cfg).unwrap();
    let scale = ds.scale();
    let k = ds.ensemble_size();
    let mut rng = stream!(6, "acceptance", "calibration");
    let mut uni = RankHistogram::new(k);
    for c in ds.cases().take(n) {
        let members: Vec<f64> = c.ensemble.members().map(|v| scale.round_down(v).unwrap()).collect();
        let y = scale.value(c.observation.unwrap());
        uni.add(verification_rank(&members, y, &mut rng)).unwrap();
    }
    let weights = dependence_weights(ds.stations());
    let mut multi: Vec<(PreRankKind, RankHistogram)> = PreRankKind::ALL.iter().map(|&kd| (kd, RankHistogram::new(k))).collect();
    let n_st = ds.stations().len();
    let mut done = 0;
    'outer: for &lead in &ds.lead_times() {
        for date in ds.init_dates() {
            if done == n {
                break 'outer;
            }
            let cases: Vec<_> = (0..n_st).map(|s| ds.case(s, date, lead).unwrap()).collect();
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|m| cases.iter().map(|c| scale.round_down(c.ensemble.members().nth(m).unwrap()).unwrap()).collect())
                .collect();
            let sample = SampleMatrix::from_rows(&rows).unwrap();
            let obs: Vec<f64> = cases.iter().map(|c| scale.value(c.observation.unwrap())).collect();
            for (kind, h) in multi.iter_mut() {
                h.add(pre_rank(*kind, &sample, &obs, Some(&weights), &mut rng).unwrap()).unwrap();
            }
            done += 1;
        }
    }
    (uni, multi)
}

fn calibration() -> Outcome {
    let n = 5000;
    let calibrated = SynthConfig { n_days: 1700, ..SynthConfig::calibrated() };
    let (uni, multi) = raw_histograms(&calibrated, n);
    let mut checks = Vec::new();
    let p = chi_square_p(&uni.counts);
    checks.push((p > 0.001 && uni.total == n as u64, format!("univariate p = {p:.3}")));
    for (kind, h) in &multi {
        let p = chi_square_p(&h.counts);
        checks.push((p > 0.001 && h.total == n as u64, format!("{} p = {p:.3}", kind.as_str())));
    }
    let under = SynthConfig { dispersion: 0.5, ..calibrated };
    let (uni, _) = raw_histograms(&under, n);
    let expected = n as f64 / (uni.counts.len() as f64);
    let (first, last) = (uni.counts[0] as f64, *uni.counts.last().unwrap() as f64);
    checks.push((
        first >= 2.0 * expected && last >= 2.0 * expected,
        format!("dispersion 0.5 end bins {first}/{last} vs uniform {expected:.1}"),
    ));
    combine(checks)
}

// ---------------------------------------------------------------- 7

fn lookup(v: &viscal_cli::pipeline::Verification, model: &str, lead: u32, score: ScoreKind) -> f64 {
    v.scores
        .iter()
        .find(|r| r.model == model && r.lead_time_h == lead && r.score == score)
        .unwrap_or_else(|| panic!("no {score} for {model} at {lead} h"))
        .mean
}

fn ri(rows: &[HistogramRow], model: &str, kind: &str) -> f64 {
    rows.iter()
        .find(|r| r.model == model && r.lead_time_h.is_none() && r.kind == kind)
        .unwrap_or_else(|| panic!("no histogram {kind} for {model}"))
        .ri
}

fn synthetic_run(out: &Path) -> Outcome {
    let mut cfg = ExperimentConfig {
        schemes: vec!["POLR-L".into(), "POLR-L+aux".into(), "MLP-C".into()],
        mv_models: vec!["POLR-L".into()],
        mv_methods: vec![MvMethod::Naive, MvMethod::Ecc, MvMethod::Ssh, MvMethod::MvClim],
        references: vec!["raw".into(), "clim".into(), "POLR-L".into()],
        ..ExperimentConfig::default()
    };
    cfg.output_dir = out.to_path_buf();
    let start = Instant::now();
    let result = with_workers(Some(1), || {
        let exp = Experiment::new(cfg.clone())?;
        run_experiment(&exp, out)
    })
    .unwrap()
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let v = &result.verification;
    let leads = [6u32, 48, 120];
    let mut checks = Vec::new();

    for model in ["POLR-L", "MLP-C"] {
        for reference in ["raw", "clim"] {
            let beats: Vec<String> = leads
                .iter()
                .map(|&l| {
                    format!(
                        "{l}h {:.0}<{:.0}",
                        lookup(v, model, l, ScoreKind::Crps),
                        lookup(v, reference, l, ScoreKind::Crps)
                    )
                })
                .collect();
            let ok = leads.iter().all(|&l| lookup(v, model, l, ScoreKind::Crps) < lookup(v, reference, l, ScoreKind::Crps));
            checks.push((ok, format!("(a) {model} CRPS beats {reference}: {}", beats.join(", "))));
        }
    }

    let aux_ok = leads
        .iter()
        .all(|&l| lookup(v, "POLR-L+aux", l, ScoreKind::Crps) < lookup(v, "POLR-L", l, ScoreKind::Crps));
    checks.push((aux_ok, "(b) aux features reduce POLR-L CRPS at every lead".to_string()));
    let skill = result
        .report
        .iter()
        .find(|r| r.model == "POLR-L+aux" && r.lead_time_h == 6 && r.score == ScoreKind::Crps && r.reference.as_deref() == Some("POLR-L"))
        .expect("skill row");
    checks.push((
        skill.skill_lo > 0.0 || skill.skill_hi < 0.0,
        format!("(b) CRPSS {:.4} [{:.4}, {:.4}] at 6 h", skill.skill, skill.skill_lo, skill.skill_hi),
    ));

    for method in ["POLR-L:ECC", "POLR-L:SSh"] {
        for baseline in ["POLR-L:naive", "mvclim"] {
            let ok = leads.iter().all(|&l| lookup(v, method, l, ScoreKind::Vs) < lookup(v, baseline, l, ScoreKind::Vs));
            checks.push((ok, format!("(c) {method} VS beats {baseline}")));
        }
    }

    for kind in PreRankKind::ALL {
        let (e, n) = (ri(&v.histograms, "POLR-L:ECC", kind.as_str()), ri(&v.histograms, "POLR-L:naive", kind.as_str()));
        checks.push((e < n, format!("(d) RI {} ECC {e:.3} < naive {n:.3}", kind.as_str())));
    }
    checks.push((secs < 600.0, format!("{secs:.0} s single-threaded")));
    combine(checks)
}

// ---------------------------------------------------------------- 8

fn bootstrap_coverage() -> Outcome {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = stream!(8, "acceptance", "coverage");
    let trials = 500;
    let mut covered = 0;
    for t in 0..trials {
        let series: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let opts = BootstrapOptions { replicates: 2000, mean_block_length: Some(6.0), level: 0.95, seed: t };
        let ci = stationary_bootstrap_ci(&series, &opts).unwrap();
        if ci.lo <= 0.0 && 0.0 <= ci.hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    outcome((0.93..=0.97).contains(&rate), format!("coverage {:.1}% of {trials}", 100.0 * rate))
}

// ---------------------------------------------------------------- 9

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(root: &Path) -> Outcome {
    let mut cfg = ExperimentConfig {
        window_days: 60,
        references: vec!["raw".into(), "clim".into()],
        ..ExperimentConfig::default()
    };
    cfg.data.synth = SynthConfig { n_days: 75, ..SynthConfig::default() };
    cfg.bootstrap.replicates = 500;
    let run = |name: &str, workers: usize| {
        let out = root.join(name);
        with_workers(Some(workers), || {
            let exp = Experiment::new(cfg.clone())?;
            run_experiment(&exp, &out)
        })
        .unwrap()
        .unwrap();
        read_tree(&out)
    };
    let a = run("a", 1);
    let b = run("b", 1);
    let c = run("c", 4);
    let n_files = a.len();
    combine(vec![
        (a == b, format!("rerun identical ({n_files} files)")),
        (a == c, "1 vs 4 workers identical".to_string()),
    ])
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("scoring oracles", Box::new(scoring_oracles)),
        ("degenerate closed forms", Box::new(degenerate_forms)),
        ("reordering invariants", Box::new(reordering)),
        ("POLR", Box::new(polr)),
        ("MLP", Box::new(mlp)),
        ("calibration diagnostics", Box::new(calibration)),
        ("synthetic direction reproduction", Box::new(|| synthetic_run(&tmp.path().join("synthetic")))),
        ("bootstrap coverage", Box::new(bootstrap_coverage)),
        ("determinism", Box::new(|| determinism(&tmp.path().join("determinism")))),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let line = format!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        // bypass the harness capture so the summary always shows
        writeln!(std::io::stdout().lock(), "{line}").unwrap();
        if !o.pass {
            failed.push(line);
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
