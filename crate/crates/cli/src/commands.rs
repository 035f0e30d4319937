use mapfluct::fixedpoint::{eval_matrix_equation, solve_matrix_equation, FixedPointConfig};
use mapfluct::reflection::{
    reflect_one_sided_negative, reflect_one_sided_positive, reflect_two_sided, verify_barrier_identity,
};
use mapfluct::scale::{scale_matrices, verify_strong_markov};
use mapfluct::simulate::{simulate_first_passage, simulate_reflected, ReflectRequest, SimConfig};
use mapfluct::spectral::spectrum_report;
use mapfluct::{first_passage, DriftSign, Error, MapModel, SpectralConfig};
use nalgebra::{Complex, DMatrix};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::report::{self, rows, Failure, ModelInfo, RunReport};
use crate::{Command, Format, Mode};

const BUILTIN: &[(&str, &str)] = &[
    ("bm", include_str!("../../core/models/bm.json")),
    ("mmbm2_neg", include_str!("../../core/models/mmbm2_neg.json")),
    ("mmbm2_zero", include_str!("../../core/models/mmbm2_zero.json")),
    ("mmbm2_pos", include_str!("../../core/models/mmbm2_pos.json")),
    ("sub3", include_str!("../../core/models/sub3.json")),
    ("hyper2", include_str!("../../core/models/hyper2.json")),
];

/// Relative tolerance for the spectral and fixed-point routes to agree.
const AGREEMENT_TOL: f64 = 1e-7;

fn load_model(source: &str, info: &mut ModelInfo) -> Result<MapModel, Failure> {
    info.source = source.to_string();
    let text = match source.strip_prefix("builtin:") {
        Some(name) => BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| {
                let names: Vec<_> = BUILTIN.iter().map(|(n, _)| *n).collect();
                Failure::invalid(
                    "io",
                    format!("no bundled model {name:?}; available: {}", names.join(", ")),
                )
            })?,
        None => {
            std::fs::read_to_string(source).map_err(|e| Failure::invalid("io", format!("cannot read {source}: {e}")))?
        }
    };
    info.sha256 = Some(format!("{:x}", Sha256::digest(text.as_bytes())));
    let model = MapModel::from_json(&text)?;
    info.states = Some(model.dim());
    info.kappa = Some(model.kappa());
    info.drift_sign = Some(
        match model.drift_sign() {
            DriftSign::Negative => "negative",
            DriftSign::Zero => "zero",
            DriftSign::Positive => "positive",
        }
        .to_string(),
    );
    Ok(model)
}

fn tolerances(cfg: &SpectralConfig) -> Value {
    json!({ "cluster": cfg.cluster_tol, "rank": cfg.rank_tol })
}

fn check_tolerances(cfg: &SpectralConfig) -> Result<(), Failure> {
    for (name, t) in [("tol-cluster", cfg.cluster_tol), ("tol-rank", cfg.rank_tol)] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Failure::invalid(
                "invalid_argument",
                format!("--{name} must lie in (0, 1), got {t}"),
            ));
        }
    }
    Ok(())
}

/// Runs one command, filling `report`. Returns CSV text when that format was
/// requested.
pub fn run(command: &Command, report: &mut RunReport) -> Result<Option<String>, Failure> {
    let common = command.common();
    let cfg = common.spectral();
    report.config = json!({ "tolerances": tolerances(&cfg), "format": format!("{:?}", common.format).to_lowercase() });
    check_tolerances(&cfg)?;
    let model = load_model(&common.model, &mut report.model)?;
    let csv = common.format == Format::Csv;
    let out = match command {
        Command::Lambda { q, x, .. } => {
            report.config["q"] = json!(q);
            report.config["x"] = json!(x);
            lambda(&model, *q, *x, &cfg, report)?
        }
        Command::Spectrum { q, .. } => {
            report.config["q"] = json!(q);
            let r = spectrum_report(&model, *q, &cfg)?;
            report.results = serde_json::to_value(&r).expect("serializable");
            let header = ["re", "im", "multiplicity", "region"].map(String::from);
            report::csv(
                &header,
                r.eigenvalues.iter().map(|e| {
                    vec![
                        e.re.to_string(),
                        e.im.to_string(),
                        e.multiplicity.to_string(),
                        e.region.to_string(),
                    ]
                }),
            )
        }
        Command::ReflectOne {
            positive, x, points, ..
        } => {
            report.config["positive"] = json!(positive);
            report.config["x"] = json!(x);
            report.config["points"] = json!(points);
            reflect_one(&model, *positive, *x, *points, &cfg, report)?
        }
        Command::ReflectTwo { b, alpha, .. } => {
            report.config["b"] = json!(b);
            report.config["alpha"] = json!(alpha);
            reflect_two(&model, *b, alpha, &cfg, report)?
        }
        Command::Scale { q, a, b, .. } => {
            report.config["q"] = json!(q);
            report.config["a"] = json!(a);
            report.config["b"] = json!(b);
            let sm = scale_matrices(&model, *q, *a, *b, &cfg)?;
            let sim = verify_strong_markov(&model, &sm, &cfg)?;
            report.results = serde_json::to_value(sm.report(Some(sim))).expect("serializable");
            report::matrices_csv(&[("C", &sm.c), ("D", &sm.d)])
        }
        Command::Verify { q, .. } => {
            report.config["q"] = json!(q);
            report.config["agreement_tol"] = json!(AGREEMENT_TOL);
            verify(&model, *q, &cfg, report)?
        }
        Command::Simulate {
            mode,
            b,
            x,
            q,
            seed,
            paths,
            step,
            horizon,
            batches,
            burn_in,
            ..
        } => {
            let mut sim = match mode {
                Mode::Passage => SimConfig::default(),
                Mode::Reflect => SimConfig {
                    step: if b.is_some() { 0.01 } else { 0.05 },
                    paths: 20,
                    horizon: 20_000.0,
                    burn_in: 0.01,
                    batches: 10,
                    ..SimConfig::default()
                },
            };
            sim.seed = *seed;
            sim.paths = paths.unwrap_or(sim.paths);
            sim.step = step.unwrap_or(sim.step);
            sim.horizon = horizon.unwrap_or(sim.horizon);
            sim.batches = batches.unwrap_or(sim.batches);
            sim.burn_in = burn_in.unwrap_or(sim.burn_in);
            report.config["mode"] = json!(format!("{mode:?}").to_lowercase());
            report.config["q"] = json!(q);
            report.config["b"] = json!(b);
            report.config["x"] = json!(x);
            report.config["simulation"] = serde_json::to_value(sim).expect("serializable");
            report.config["threads"] = json!(rayon::current_num_threads());
            match mode {
                Mode::Passage => simulate_passage(&model, *q, x, &sim, &cfg, report)?,
                Mode::Reflect => simulate_reflect(&model, *b, x, &sim, &cfg, report)?,
            }
        }
    };
    Ok(csv.then_some(out))
}

fn lambda(
    model: &MapModel,
    q: f64,
    x: Option<f64>,
    cfg: &SpectralConfig,
    report: &mut RunReport,
) -> Result<String, Failure> {
    let fp = first_passage(model, q, cfg)?;
    report.results = serde_json::to_value(fp.report()).expect("serializable");
    if let Some(x) = x {
        report.results["passage"] = json!({
            "x": x,
            "from_plus": rows(&fp.passage_probability(x)?),
            "from_all": rows(&fp.passage_from_all(x)?),
        });
    }
    report.diagnostics = json!({
        "chain_consistency": fp.chain_consistency(),
        "spectrum": fp.system.report(model),
    });
    Ok(report::matrices_csv(&[("Lambda", &fp.lambda), ("Pi", &fp.pi)]))
}

fn grid(right: f64, points: usize) -> Result<Vec<f64>, Failure> {
    if !(right > 0.0 && right.is_finite()) || points < 2 {
        return Err(Failure::invalid(
            "invalid_argument",
            format!("grid needs a positive right end and at least 2 points, got {right} and {points}"),
        ));
    }
    Ok((0..points).map(|k| right * k as f64 / (points - 1) as f64).collect())
}

fn reflect_one(
    model: &MapModel,
    positive: bool,
    right: f64,
    points: usize,
    cfg: &SpectralConfig,
    report: &mut RunReport,
) -> Result<String, Failure> {
    let n = model.dim();
    if positive {
        let law = reflect_one_sided_positive(model, cfg)?;
        report.results = serde_json::to_value(law.report()).expect("serializable");
        report.diagnostics = json!({
            "ell_identity": (law.ell_plus() - law.ell_from_lambda()?).amax(),
            "kappa_identity": (law.ell.sum() - law.kappa).abs(),
        });
        let header = ["state", "ell"].map(String::from);
        return Ok(report::csv(
            &header,
            law.ell
                .iter()
                .enumerate()
                .map(|(i, l)| vec![i.to_string(), l.to_string()]),
        ));
    }
    let law = reflect_one_sided_negative(model, cfg)?;
    let xs = grid(right, points)?;
    let r = law.report(&xs)?;
    report.results = serde_json::to_value(&r).expect("serializable");
    report.results["stationary"] = json!(model.stationary().as_slice());
    report.diagnostics = json!({ "mass_residual": (law.mass() - model.stationary()).amax() });
    let mut header = vec!["x".to_string()];
    header.extend((1..=n).map(|i| format!("p_{i}")));
    Ok(report::csv(
        &header,
        r.density.iter().map(|(x, p)| {
            std::iter::once(x.to_string())
                .chain(p.iter().map(f64::to_string))
                .collect::<Vec<_>>()
        }),
    ))
}

fn reflect_two(
    model: &MapModel,
    b: f64,
    alphas: &[f64],
    cfg: &SpectralConfig,
    report: &mut RunReport,
) -> Result<String, Failure> {
    let law = reflect_two_sided(model, b, cfg)?;
    let barrier_identity = verify_barrier_identity(model, &law, cfg)?;
    report.results = serde_json::to_value(law.report(barrier_identity.residual)).expect("serializable");
    let mut transforms = Vec::new();
    for &alpha in alphas {
        let value = law.mgf(Complex::from(alpha))?;
        transforms.push(json!({ "alpha": alpha, "value": value.iter().map(|z| z.re).collect::<Vec<_>>() }));
    }
    if !transforms.is_empty() {
        report.results["transform"] = json!(transforms);
    }
    report.diagnostics = json!({ "barrier_identity": barrier_identity, "imaginary_residue": law.imaginary_residue });
    let header = ["state", "u", "l"].map(String::from);
    Ok(report::csv(
        &header,
        (0..model.dim()).map(|i| vec![i.to_string(), law.u[i].to_string(), law.ell[i].to_string()]),
    ))
}

fn verify(model: &MapModel, q: f64, cfg: &SpectralConfig, report: &mut RunReport) -> Result<String, Failure> {
    let fp = first_passage(model, q, cfg)?;
    let full = fp.lambda.nrows() == model.dim();
    let spectral_residual = if full {
        Some(eval_matrix_equation(model, q, &fp.lambda)?.amax())
    } else {
        None
    };
    let mut results = json!({
        "spectral": { "Lambda": rows(&fp.lambda), "residual": spectral_residual },
    });
    let mut matrices = vec![("spectral", fp.lambda.clone())];
    let mut max_residual = spectral_residual;
    let mut agree = true;
    let mut difference = 0.0;
    match solve_matrix_equation(model, q, &FixedPointConfig::default()) {
        Ok(sol) => {
            let diff = (&sol.m - &fp.lambda).amax();
            let scale = fp.lambda.amax().max(1.0);
            agree = diff <= AGREEMENT_TOL * scale;
            difference = diff;
            max_residual = Some(max_residual.map_or(sol.residual, |r| r.max(sol.residual)));
            results["fixed_point"] = json!({
                "M": rows(&sol.m),
                "class": sol.class,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "relative_residual": sol.residual / sol.scale,
                "trajectory": sol.trajectory,
            });
            results["max_difference"] = json!(diff);
            matrices.push(("fixed_point", sol.m));
        }
        Err(Error::Precondition(reason)) => {
            results["fixed_point"] = json!({ "skipped": reason });
        }
        Err(e) => return Err(e.into()),
    }
    results["max_residual"] = json!(max_residual);
    results["agree"] = json!(agree);
    report.results = results;
    report.diagnostics = json!({
        "chain_consistency": fp.chain_consistency(),
        "condition": fp.condition,
        "imaginary_residue": fp.imaginary_residue,
        "spectrum": fp.system.report(model),
    });
    if !agree {
        return Err(Failure::numerical(
            "disagreement",
            format!("spectral and fixed-point routes differ by {difference:e}"),
            report.diagnostics.clone(),
        ));
    }
    let named: Vec<(&str, &DMatrix<f64>)> = matrices.iter().map(|(n, m)| (*n, m)).collect();
    Ok(report::matrices_csv(&named))
}

fn simulate_passage(
    model: &MapModel,
    q: f64,
    levels: &[f64],
    sim: &SimConfig,
    cfg: &SpectralConfig,
    report: &mut RunReport,
) -> Result<String, Failure> {
    if levels.is_empty() {
        return Err(Failure::invalid(
            "invalid_argument",
            "passage mode needs at least one level in --x",
        ));
    }
    let est = simulate_first_passage(model, q, levels, sim)?;
    let fp = first_passage(model, q, cfg)?;
    let mut entries = Vec::new();
    let mut records = Vec::new();
    let mut worst: f64 = 0.0;
    for (&x, e) in levels.iter().zip(&est.estimates) {
        let exact = fp.passage_from_all(x)?;
        for i in 0..e.mean.nrows() {
            for j in 0..e.mean.ncols() {
                let (m, s, a) = (e.mean[(i, j)], e.stderr[(i, j)], exact[(i, j)]);
                if s > 0.0 {
                    worst = worst.max((m - a).abs() / s);
                }
                records.push(
                    [x, i as f64, est.plus_states[j] as f64, m, s, a]
                        .iter()
                        .map(f64::to_string)
                        .collect::<Vec<_>>(),
                );
            }
        }
        entries.push(json!({ "x": x, "mean": rows(&e.mean), "stderr": rows(&e.stderr), "analytic": rows(&exact) }));
    }
    report.results = json!({
        "q": q,
        "plus_states": est.plus_states,
        "levels": entries,
        "censored_at_horizon": est.unresolved,
    });
    report.diagnostics = json!({ "max_abs_z": worst });
    let header = ["x", "from", "to", "mean", "stderr", "analytic"].map(String::from);
    Ok(report::csv(&header, records))
}

fn simulate_reflect(
    model: &MapModel,
    b: Option<f64>,
    x: &[f64],
    sim: &SimConfig,
    cfg: &SpectralConfig,
    report: &mut RunReport,
) -> Result<String, Failure> {
    let right = x.first().copied().or(b).unwrap_or(5.0);
    let xs = grid(right, 21)?;
    let alphas: Vec<f64> = if b.is_some() { vec![-1.0, 1.0] } else { vec![-1.0] };
    let request = ReflectRequest {
        grid: xs.clone(),
        alphas: alphas.iter().map(|&a| Complex::from(a)).collect(),
    };
    let est = simulate_reflected(model, b, &request, sim)?;
    let n = model.dim();
    let mut worst: f64 = 0.0;
    let mut z = |m: f64, s: f64, a: f64| {
        if s > 0.0 {
            worst = worst.max((m - a).abs() / s);
        }
    };
    let mut analytic_cdf = None;
    let mut analytic_mgf = Vec::new();
    match b {
        None => {
            let law = reflect_one_sided_negative(model, cfg)?;
            let mut exact = DMatrix::zeros(n, xs.len());
            for (g, &x) in xs.iter().enumerate() {
                exact.set_column(g, &law.joint_cdf(x)?);
            }
            for i in 0..n {
                for g in 0..xs.len() {
                    z(est.cdf.mean[(i, g)], est.cdf.stderr[(i, g)], exact[(i, g)]);
                }
            }
            analytic_cdf = Some(exact);
        }
        Some(b) => {
            let law = reflect_two_sided(model, b, cfg)?;
            for (k, &alpha) in alphas.iter().enumerate() {
                let exact = law.mgf(Complex::from(alpha))?;
                for i in 0..n {
                    z(est.mgf.mean[(i, 2 * k)], est.mgf.stderr[(i, 2 * k)], exact[i].re);
                }
                analytic_mgf.push(exact.iter().map(|c| c.re).collect::<Vec<_>>());
            }
        }
    }
    let transforms: Vec<Value> = alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            json!({
                "alpha": alpha,
                "mean": (0..n).map(|i| est.mgf.mean[(i, 2 * k)]).collect::<Vec<_>>(),
                "stderr": (0..n).map(|i| est.mgf.stderr[(i, 2 * k)]).collect::<Vec<_>>(),
                "analytic": analytic_mgf.get(k),
            })
        })
        .collect();
    report.results = json!({
        "b": b,
        "grid": xs,
        "cdf": { "mean": rows(&est.cdf.mean), "stderr": rows(&est.cdf.stderr), "analytic": analytic_cdf.as_ref().map(rows) },
        "atoms": { "mean": rows(&est.atoms.mean), "stderr": rows(&est.atoms.stderr) },
        "transform": transforms,
        "occupation": { "mean": est.occupation.mean.as_slice(), "stderr": est.occupation.stderr.as_slice() },
        "mean_level": { "mean": est.mean_level.mean.as_slice(), "stderr": est.mean_level.stderr.as_slice() },
    });
    report.diagnostics = json!({ "max_abs_z": worst, "stationary": model.stationary().as_slice() });
    let header = ["x", "state", "cdf", "stderr", "analytic"].map(String::from);
    let records = xs.iter().enumerate().flat_map(|(g, x)| {
        let analytic_cdf = &analytic_cdf;
        let est = &est;
        (0..n).map(move |i| {
            vec![
                x.to_string(),
                i.to_string(),
                est.cdf.mean[(i, g)].to_string(),
                est.cdf.stderr[(i, g)].to_string(),
                analytic_cdf.as_ref().map(|m| m[(i, g)].to_string()).unwrap_or_default(),
            ]
        })
    });
    Ok(report::csv(&header, records))
}
