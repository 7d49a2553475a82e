use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use nblda::classifier::recommend_method;
use nblda::count_data::{load_counts_path, load_labels_path};
use nblda::rng::stream_rng;
use nblda::simulation::{linear_grid, run_study_with};
use nblda::{
    bss_wss_select, estimate_size_factors, evaluate_splits, fit_nblda, generate_scenario, model_to_json, predict,
    read_model, score_curve, shrink_dispersions, ClassifierMethod, CountMatrix, CurveMode, CurveSetting, Delimiter,
    DispersionSource, EvaluationOptions, FitOptions, LabeledDataset, SimScenario,
};

use crate::output::{emit, write_atomic, Table};
use crate::{
    Cli, Command, CountsArgs, CurveModeArg, DispersionArgs, DispersionChoice, EvaluateArgs, FitArgs, Format,
    PredictArgs, ScoreCurveArgs, SimulateArgs, TrainingArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.output.as_deref();
    let bytes = match &cli.command {
        Command::Fit(args) => fit(args)?,
        Command::Predict(args) => predict_cmd(args, cli.format)?,
        Command::Evaluate(args) => evaluate(args, cli.format, cli.seed)?,
        Command::EstimateDispersion(args) => estimate_dispersion(args, cli.format)?,
        Command::Simulate(args) => simulate(args, cli.format, cli.seed)?,
        Command::ScoreCurve(args) => curve(args, cli.format, cli.seed)?,
    };
    emit(out, &bytes)
}

fn num(x: f64) -> String {
    x.to_string()
}

fn json_bytes(value: &serde_json::Value) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn load_matrix(args: &CountsArgs) -> Result<CountMatrix> {
    let delimiter = args
        .delimiter
        .map(Delimiter::from)
        .unwrap_or_else(|| Delimiter::from_path(&args.counts));
    load_counts_path(&args.counts, args.layout.into(), delimiter)
        .with_context(|| format!("reading {}", args.counts.display()))
}

fn load_training(args: &TrainingArgs) -> Result<LabeledDataset> {
    let matrix = load_matrix(&args.counts)?;
    let labels = load_labels_path(&args.labels).with_context(|| format!("reading {}", args.labels.display()))?;
    Ok(LabeledDataset::from_sample_labels(matrix, &labels)?)
}

fn fit_options(args: &TrainingArgs) -> FitOptions {
    FitOptions {
        size_factor_method: args.size_factor.into(),
        quantile: args.quantile,
        dispersion: DispersionSource::Estimate,
    }
}

/// Restricts `data` to its top genes by BSS/WSS when requested.
fn filter_genes(data: LabeledDataset, args: &TrainingArgs) -> Result<LabeledDataset> {
    match args.top_genes {
        None => Ok(data),
        Some(top) => {
            let sf = estimate_size_factors(data.matrix(), args.size_factor.into(), args.quantile)?;
            let keep = bss_wss_select(&data, &sf.values, top)?;
            Ok(data.subset_genes(&keep)?)
        }
    }
}

/// Reads `gene_id, phi` lines (tab or comma, header optional).
fn read_phi_file(path: &Path) -> Result<HashMap<String, f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') { line.split('\t').collect() } else { line.split(',').collect() };
        if fields.len() != 2 {
            bail!("{} line {}: expected 2 fields, found {}", path.display(), i + 1, fields.len());
        }
        match fields[1].trim().parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => {
                out.insert(fields[0].trim().to_string(), v);
            }
            Ok(v) => bail!("{} line {}: dispersion {v} must be finite and nonnegative", path.display(), i + 1),
            Err(_) if out.is_empty() => continue,
            Err(_) => bail!("{} line {}: '{}' is not a number", path.display(), i + 1, fields[1].trim()),
        }
    }
    Ok(out)
}

fn dispersion_source(choice: &DispersionChoice, gene_ids: &[String]) -> Result<DispersionSource> {
    if let Some(phi) = choice.phi {
        if !(phi >= 0.0 && phi.is_finite()) {
            bail!("--phi must be finite and nonnegative, got {phi}");
        }
        return Ok(DispersionSource::Common(phi));
    }
    let Some(path) = &choice.phi_file else {
        return Ok(DispersionSource::Estimate);
    };
    let table = read_phi_file(path)?;
    let missing: Vec<&str> = gene_ids
        .iter()
        .filter(|g| !table.contains_key(g.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().copied().take(5).collect();
        bail!(
            "{} has no dispersion for {} gene(s): {}{}",
            path.display(),
            missing.len(),
            shown.join(", "),
            if missing.len() > 5 { ", ..." } else { "" }
        );
    }
    Ok(DispersionSource::PerGene(gene_ids.iter().map(|g| table[g.as_str()]).collect()))
}

fn fit(args: &FitArgs) -> Result<Vec<u8>> {
    let data = filter_genes(load_training(&args.training)?, &args.training)?;
    let mut options = fit_options(&args.training);
    options.dispersion = dispersion_source(&args.dispersion, data.matrix().gene_ids())?;
    let model = fit_nblda(&data, &options)?;
    let mut bytes = model_to_json(&model)?.into_bytes();
    bytes.push(b'\n');
    Ok(bytes)
}

fn predict_cmd(args: &PredictArgs, format: Format) -> Result<Vec<u8>> {
    let file = std::fs::File::open(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model = read_model(std::io::BufReader::new(file)).with_context(|| format!("loading {}", args.model.display()))?;
    let matrix = load_matrix(&args.counts)?;
    let predictions = predict(&model, &matrix, args.method.into())?;
    match format {
        Format::Tsv => {
            let mut header = vec!["sample_id".to_string(), "predicted_class".to_string()];
            header.extend((1..=model.n_classes()).map(|k| format!("posterior_{k}")));
            let mut t = Table::new(&header);
            for p in &predictions {
                let mut row = vec![p.sample_id.clone(), (p.class() + 1).to_string()];
                row.extend(p.scores.posteriors.iter().map(|&v| num(v)));
                t.row(&row);
            }
            Ok(t.into_bytes())
        }
        Format::Json => {
            let rows: Vec<_> = predictions
                .iter()
                .map(|p| {
                    json!({
                        "sample_id": p.sample_id,
                        "predicted_class": p.class() + 1,
                        "size_factor": p.size_factor,
                        "scores": p.scores.scores,
                        "posteriors": p.scores.posteriors,
                    })
                })
                .collect();
            json_bytes(&json!({ "method": ClassifierMethod::from(args.method).to_string(), "predictions": rows }))
        }
    }
}

fn evaluate(args: &EvaluateArgs, format: Format, seed: u64) -> Result<Vec<u8>> {
    let data = load_training(&args.training)?;
    let mut fit = fit_options(&args.training);
    fit.dispersion = dispersion_source(&args.dispersion, data.matrix().gene_ids())?;
    let options = EvaluationOptions {
        fit,
        method: args.method.into(),
        test_count: args.test_count,
        runs: args.runs,
        top_genes: args.training.top_genes,
        seed,
    };
    let r = evaluate_splits(&data, &options)?;
    match format {
        Format::Tsv => {
            let mut t = Table::new(&["method", "runs", "test_count", "mean_rate", "std_error"]);
            t.row(&[
                r.method.to_string(),
                r.runs.to_string(),
                r.test_count.to_string(),
                num(r.mean_rate),
                num(r.std_error),
            ]);
            Ok(t.into_bytes())
        }
        Format::Json => json_bytes(&serde_json::to_value(&r)?),
    }
}

fn estimate_dispersion(args: &DispersionArgs, format: Format) -> Result<Vec<u8>> {
    if !(args.threshold >= 0.0 && args.threshold.is_finite()) {
        bail!("--threshold must be finite and nonnegative, got {}", args.threshold);
    }
    let data = filter_genes(load_training(&args.training)?, &args.training)?;
    let sf = estimate_size_factors(data.matrix(), args.training.size_factor.into(), args.training.quantile)?;
    let est = shrink_dispersions(&data, &sf.values)?;
    let average = est.average();
    let recommended = recommend_method(average, args.threshold);
    let genes = data.matrix().gene_ids();
    match format {
        Format::Tsv => {
            let mut t = Table::new(&["gene_id", "phi_initial", "phi_shrunken"]);
            for (g, id) in genes.iter().enumerate() {
                t.row(&[id.clone(), num(est.initial[g]), num(est.shrunken[g])]);
            }
            t.comment(&format!(
                "delta={} xi={} average_dispersion={} threshold={} recommended={}",
                num(est.weight),
                num(est.target),
                num(average),
                num(args.threshold),
                recommended
            ));
            Ok(t.into_bytes())
        }
        Format::Json => {
            let rows: Vec<_> = genes
                .iter()
                .enumerate()
                .map(|(g, id)| json!({ "gene_id": id, "phi_initial": est.initial[g], "phi_shrunken": est.shrunken[g] }))
                .collect();
            json_bytes(&json!({
                "genes": rows,
                "delta": est.weight,
                "xi": est.target,
                "average_dispersion": average,
                "threshold": args.threshold,
                "recommended": recommended.to_string(),
            }))
        }
    }
}

fn simulate(args: &SimulateArgs, format: Format, seed: u64) -> Result<Vec<u8>> {
    let sc = SimScenario {
        genes: args.genes,
        samples: args.samples,
        classes: args.classes,
        de_proportion: args.de_proportion,
        sigma: args.sigma,
        phi: args.phi,
        seed,
    };
    let mut methods: Vec<ClassifierMethod> = Vec::new();
    for m in &args.methods {
        let m = ClassifierMethod::from(*m);
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let results = run_study_with(&sc, args.replicates, &methods, &FitOptions::default())?;

    if let Some(dir) = &args.dump_data {
        dump_first_replicate(&sc, dir)?;
    }
    if let Some(path) = &args.per_replicate {
        let mut t = Table::new(&["replicate", "method", "rate"]);
        for r in &results {
            for (&rep, &rate) in r.completed.iter().zip(&r.rates) {
                t.row(&[rep.to_string(), r.method.to_string(), num(rate)]);
            }
        }
        write_atomic(path, &t.into_bytes())?;
    }

    match format {
        Format::Tsv => {
            let mut t = Table::new(&["method", "mean_rate", "std_error", "replicates", "skipped"]);
            for r in &results {
                t.row(&[
                    r.method.to_string(),
                    num(r.mean_rate),
                    num(r.std_error),
                    r.replicates.to_string(),
                    r.skipped.to_string(),
                ]);
            }
            Ok(t.into_bytes())
        }
        Format::Json => {
            let rows: Vec<_> = results
                .iter()
                .map(|r| {
                    json!({
                        "method": r.method.to_string(),
                        "mean_rate": r.mean_rate,
                        "std_error": r.std_error,
                        "replicates": r.replicates,
                        "skipped": r.skipped,
                    })
                })
                .collect();
            json_bytes(&json!({ "scenario": sc, "results": rows }))
        }
    }
}

/// Writes replicate 0's training and test samples as one labeled table.
fn dump_first_replicate(sc: &SimScenario, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let data = generate_scenario(sc, &mut stream_rng(sc.seed, 0))?;
    let (train, test) = (data.train.matrix(), data.test.matrix());
    let rows: Vec<Vec<u64>> = (0..train.n_genes())
        .map(|g| train.gene_row(g).iter().chain(test.gene_row(g)).copied().collect())
        .collect();
    let sample_ids: Vec<String> = train.sample_ids().iter().chain(test.sample_ids()).cloned().collect();
    let combined = CountMatrix::from_rows(train.gene_ids().to_vec(), sample_ids.clone(), rows)?;

    let mut counts = Vec::new();
    combined.write(&mut counts, Delimiter::Tab)?;
    write_atomic(&dir.join("counts.tsv"), &counts)?;

    let mut labels = Table::new(&["sample_id", "class"]);
    for (id, k) in sample_ids.iter().zip(data.train.labels().iter().chain(data.test.labels())) {
        labels.row(&[id.clone(), (k + 1).to_string()]);
    }
    write_atomic(&dir.join("labels.tsv"), &labels.into_bytes())
}

fn curve(args: &ScoreCurveArgs, format: Format, seed: u64) -> Result<Vec<u8>> {
    let setting = CurveSetting {
        x_star: args.x_star,
        d: args.d,
        s_star: args.s_star,
        lambda: args.lambda,
        genes: args.genes,
    };
    let (mode, label, start, end, steps) = match args.mode {
        CurveModeArg::Common => (CurveMode::Common, "phi", 0.0, 20.0, 200),
        CurveModeArg::ChiSquared => (CurveMode::ChiSquared { seed }, "r", 0.1, 5.0, 49),
    };
    let grid = linear_grid(
        args.grid_start.unwrap_or(start),
        args.grid_end.unwrap_or(end),
        args.grid_steps.unwrap_or(steps),
    );
    let points = score_curve(&setting, &grid, mode)?;
    match format {
        Format::Tsv => {
            let mut t = Table::new(&[label, "nblda", "plda"]);
            for p in &points {
                t.row(&[num(p.x), num(p.nblda), num(p.plda)]);
            }
            Ok(t.into_bytes())
        }
        Format::Json => {
            let rows: Vec<_> = points
                .iter()
                .map(|p| json!({ label: p.x, "nblda": p.nblda, "plda": p.plda }))
                .collect();
            json_bytes(&json!({ "setting": setting, "points": rows }))
        }
    }
}
