use std::path::{Path, PathBuf};

use serde::Serialize;

use maha_core::ensemble::{
    self, detector_score, probe_accuracy, select_hyperparameters, train_detector, train_probe,
    Candidate, ProbeModel, SelectionMetric, TrainConfig, TrainReport,
};
use maha_core::estimator::{fit_conditional, fit_marginal};
use maha_core::featureio::model::{
    read_model, write_model, FittedModel, LayerModel, ModelFile, ModelKind,
};
use maha_core::featureio::scores::{
    group_columns, read_scores, write_scores, ScoreColumn, ScoreRecord,
};
use maha_core::featureio::{
    read_feature_set, split_indices, write_atomic, write_feature_set, FeatureSet, SplitIndices,
    OUT_SIDE_KEY,
};
use maha_core::metrics::{auroc, format_table, DetectionReport};
use maha_core::scorer::{
    conditional_score, euclidean_score, marginal_score, partial_score, Center, ComponentSelection,
    ScoreBatch,
};
use maha_core::synth::{AnomalySpec, SynthModel, SynthSpec};

use crate::failure::{Failure, Result};
use crate::manifest::{self, ManifestBuilder};
use crate::{
    EnsembleArgs, EvalArgs, FitArgs, Metric, Mode, ProbeArgs, ScoreArgs, ScoreKind, SelectArgs,
    SplitArgs, SynthArgs,
};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

fn finish(m: ManifestBuilder, primary: &Path) -> Result<()> {
    let path = manifest::write(&m.finish()?, primary)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

fn selected_layers<'a>(available: impl Iterator<Item = &'a str>, wanted: &[String]) -> Vec<String> {
    let all: Vec<String> = available.map(str::to_string).collect();
    if wanted.is_empty() {
        all
    } else {
        wanted.to_vec()
    }
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("fit");
    m.flag("mode", format!("{:?}", a.mode))
        .flag("floor_scale", a.floor_scale)
        .flag("layers", a.layers.join(","));
    m.input(&a.features).output(&a.out);

    let set = read_feature_set(&a.features)?;
    if a.mode == Mode::Conditional && set.is_ood() {
        return Err(Failure::usage(
            "cannot fit a conditional model on an out-of-distribution set",
        ));
    }
    let names = selected_layers(set.layers().iter().map(|l| l.name.as_str()), &a.layers);
    let mut layers = Vec::with_capacity(names.len());
    println!(
        "{:<24}  {:>6}  {:>4}  {:>14}  {:>14}  {:>10}",
        "layer", "d", "C", "lambda_1", "lambda_d", "floor_hits"
    );
    for name in names {
        let x = set
            .layer(&name)
            .ok_or_else(|| Failure::data(format!("feature set has no layer {name:?}")))?;
        let model = match a.mode {
            Mode::Conditional => FittedModel::Conditional(fit_conditional(
                x,
                set.labels(),
                set.num_classes() as usize,
                a.floor_scale,
            )?),
            Mode::Marginal => FittedModel::Marginal(fit_marginal(x, a.floor_scale)?),
        };
        let g = model.as_gaussian();
        let ev = g.spectrum().eigenvalues();
        println!(
            "{:<24}  {:>6}  {:>4}  {:>14.6e}  {:>14.6e}  {:>10}",
            name,
            g.dim(),
            g.means().len(),
            ev[0],
            ev[ev.len() - 1],
            g.spectrum().floor_hits()
        );
        layers.push(LayerModel { name, model });
    }
    let kind = match a.mode {
        Mode::Conditional => ModelKind::Conditional,
        Mode::Marginal => ModelKind::Marginal,
    };
    write_model(
        &ModelFile {
            kind,
            floor_scale: a.floor_scale,
            layers,
        },
        &a.out,
    )?;
    finish(m, &a.out)
}

fn score_layer(
    model: &FittedModel,
    kind: ScoreKind,
    selection: Option<&ComponentSelection>,
    x: &maha_core::FeatureMatrix,
) -> Result<ScoreBatch> {
    let g = model.as_gaussian();
    Ok(match (kind, model) {
        (ScoreKind::Conditional, FittedModel::Conditional(c)) => conditional_score(c, x)?.scores,
        (ScoreKind::Marginal, FittedModel::Marginal(mg)) => marginal_score(mg, x)?,
        (ScoreKind::Conditional | ScoreKind::Marginal, _) => {
            let want = if kind == ScoreKind::Conditional {
                "conditional"
            } else {
                "marginal"
            };
            return Err(Failure::usage(format!(
                "--score {want} needs a {want} model, but the model is {}; refit with --mode {want}",
                model.kind()
            )));
        }
        (ScoreKind::Partial, _) => {
            let sel = selection.expect("checked by caller");
            let batch = partial_score(g.spectrum(), Center::of(g), sel, x)?;
            batch.renamed(format!("{}_{sel}", model.kind()))
        }
        (ScoreKind::Euclidean, _) => euclidean_score(Center::of(g), x)?,
    })
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let selection = match (a.score, &a.components) {
        (ScoreKind::Partial, None) => {
            return Err(Failure::usage(
                "--score partial requires --components, e.g. --components 10-512",
            ))
        }
        (ScoreKind::Partial, Some(c)) => Some(ComponentSelection::parse(c)?),
        (_, Some(_)) => {
            return Err(Failure::usage(
                "--components only applies to --score partial",
            ))
        }
        (_, None) => None,
    };
    let mut m = ManifestBuilder::new("score");
    m.flag("score", format!("{:?}", a.score))
        .flag("components", a.components.clone().unwrap_or_default())
        .flag("layers", a.layers.join(","));
    m.input(&a.features).input(&a.model).output(&a.out);

    let model = read_model(&a.model)?;
    let set = read_feature_set(&a.features)?;
    let names = selected_layers(model.layers.iter().map(|l| l.name.as_str()), &a.layers);
    let mut records = Vec::new();
    for name in names {
        let fitted = model
            .layer(&name)
            .ok_or_else(|| Failure::data(format!("model has no layer {name:?}")))?;
        let x = set
            .layer(&name)
            .ok_or_else(|| Failure::data(format!("feature set has no layer {name:?}")))?;
        if let Some(sel) = &selection {
            sel.validate_for(fitted.as_gaussian().dim())?;
        }
        let batch = score_layer(fitted, a.score, selection.as_ref(), x)
            .map_err(|f| f.context(format!("layer {name:?}")))?;
        records.extend(
            batch
                .values()
                .iter()
                .enumerate()
                .map(|(i, &value)| ScoreRecord {
                    sample_index: i,
                    layer: name.clone(),
                    score_name: batch.name().to_string(),
                    value,
                }),
        );
    }
    write_scores(&a.out, &records)?;
    println!("wrote {} scores to {}", records.len(), a.out.display());
    finish(m, &a.out)
}

/// Score columns from one or more CSVs, each sorted by sample index and
/// all covering the same samples.
fn load_side(paths: &[PathBuf], what: &str) -> Result<Vec<ScoreColumn>> {
    let mut cols: Vec<ScoreColumn> = Vec::new();
    for p in paths {
        let recs = read_scores(p)?;
        if recs.is_empty() {
            return Err(Failure::data(format!("{}: no scores", p.display())));
        }
        for c in group_columns(&recs) {
            if cols.iter().any(|d| d.key() == c.key()) {
                return Err(Failure::data(format!(
                    "column {} appears twice in the {what} scores",
                    c.key()
                )));
            }
            cols.push(c);
        }
    }
    for c in &mut cols {
        let mut order: Vec<usize> = (0..c.values.len()).collect();
        order.sort_by_key(|&i| c.sample_index[i]);
        c.sample_index = order.iter().map(|&i| c.sample_index[i]).collect();
        c.values = order.iter().map(|&i| c.values[i]).collect();
        if c.sample_index.windows(2).any(|w| w[0] == w[1]) {
            return Err(Failure::data(format!(
                "column {} repeats a sample index",
                c.key()
            )));
        }
    }
    if let Some(first) = cols.first() {
        if let Some(bad) = cols.iter().find(|c| c.sample_index != first.sample_index) {
            return Err(Failure::data(format!(
                "{what} columns {} and {} cover different samples",
                first.key(),
                bad.key()
            )));
        }
    }
    Ok(cols)
}

#[derive(Serialize)]
struct EvalEntry {
    layer: String,
    score_name: String,
    #[serde(flatten)]
    report: DetectionReport,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("eval");
    m.input(&a.in_scores).input(&a.out_scores).output(&a.report);
    let ins = load_side(std::slice::from_ref(&a.in_scores), "in-distribution")?;
    let outs = load_side(std::slice::from_ref(&a.out_scores), "out-of-distribution")?;
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for c in &ins {
        let o = outs.iter().find(|o| o.key() == c.key()).ok_or_else(|| {
            Failure::data(format!(
                "{} has no column {}",
                a.out_scores.display(),
                c.key()
            ))
        })?;
        let report = DetectionReport::compute(&c.values, &o.values)?;
        rows.push((c.key(), report.clone()));
        entries.push(EvalEntry {
            layer: c.layer.clone(),
            score_name: c.score_name.clone(),
            report,
        });
    }
    print!("{}", format_table(&rows));
    write_json(&a.report, &entries)?;
    finish(m, &a.report)
}

fn split_pair(n_in: usize, n_out: usize, s: &SplitArgs) -> Result<(SplitIndices, SplitIndices)> {
    Ok((
        split_indices(n_in, s.n_train, s.n_val, s.seed, "in-distribution")?,
        split_indices(
            n_out,
            s.n_train,
            s.n_val,
            s.seed ^ OUT_SIDE_KEY,
            "out-of-distribution",
        )?,
    ))
}

fn pick(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

fn batches(cols: &[(String, Vec<f64>)], idx: &[usize]) -> Result<Vec<ScoreBatch>> {
    cols.iter()
        .map(|(n, v)| Ok(ScoreBatch::new(n.clone(), pick(v, idx))?))
        .collect()
}

#[derive(Serialize)]
struct FeatureSummary {
    name: String,
    validation_auroc: f64,
    test: DetectionReport,
}

#[derive(Serialize)]
struct EnsembleReport {
    n_train: usize,
    n_val: usize,
    seed: u64,
    training: TrainReport,
    validation_auroc: f64,
    test: DetectionReport,
    features: Vec<FeatureSummary>,
}

fn odin_column(path: &Path, what: &str, expected: &[usize]) -> Result<(String, Vec<f64>)> {
    let cols = load_side(&[path.to_path_buf()], what)?;
    let [col]: [ScoreColumn; 1] = cols.try_into().map_err(|c: Vec<ScoreColumn>| {
        Failure::data(format!(
            "{}: expected one ODIN column, found {}",
            path.display(),
            c.len()
        ))
    })?;
    if col.sample_index != expected {
        return Err(Failure::data(format!(
            "{}: ODIN scores cover different samples",
            path.display()
        )));
    }
    Ok(("odin".to_string(), col.values))
}

pub fn ensemble(a: &EnsembleArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("ensemble");
    m.flag("n_train", a.split.n_train)
        .flag("n_val", a.split.n_val)
        .flag("seed", a.split.seed)
        .flag("l2", a.l2)
        .flag("max_iterations", a.max_iterations)
        .flag("tolerance", a.tolerance);
    for p in a
        .in_scores
        .iter()
        .chain(&a.out_scores)
        .chain(&a.odin_in)
        .chain(&a.odin_out)
    {
        m.input(p);
    }
    m.output(&a.model_out).output(&a.report);

    let ins = load_side(&a.in_scores, "in-distribution")?;
    let outs = load_side(&a.out_scores, "out-of-distribution")?;
    let mut in_cols: Vec<(String, Vec<f64>)> = Vec::new();
    let mut out_cols: Vec<(String, Vec<f64>)> = Vec::new();
    for c in &ins {
        let o = outs.iter().find(|o| o.key() == c.key()).ok_or_else(|| {
            Failure::data(format!(
                "out-of-distribution scores lack column {}",
                c.key()
            ))
        })?;
        in_cols.push((c.key(), c.values.clone()));
        out_cols.push((c.key(), o.values.clone()));
    }
    if outs.len() != ins.len() {
        return Err(Failure::data(
            "out-of-distribution scores have columns the in-distribution scores lack",
        ));
    }
    if let (Some(oi), Some(oo)) = (&a.odin_in, &a.odin_out) {
        in_cols.push(odin_column(
            oi,
            "ODIN in-distribution",
            &ins[0].sample_index,
        )?);
        out_cols.push(odin_column(
            oo,
            "ODIN out-of-distribution",
            &outs[0].sample_index,
        )?);
    }

    let (si, so) = split_pair(ins[0].values.len(), outs[0].values.len(), &a.split)?;
    let config = TrainConfig {
        l2_strength: a.l2,
        max_iterations: a.max_iterations,
        tolerance: a.tolerance,
        ..TrainConfig::default()
    };
    let (model, training) = train_detector(
        &batches(&in_cols, &si.train)?,
        &batches(&out_cols, &so.train)?,
        &config,
    )?;
    let (val_in, val_out) = (batches(&in_cols, &si.val)?, batches(&out_cols, &so.val)?);
    let (test_in, test_out) = (batches(&in_cols, &si.test)?, batches(&out_cols, &so.test)?);
    let ens = |side: &[ScoreBatch]| detector_score(&model, side);
    let validation_auroc = auroc(ens(&val_in)?.values(), ens(&val_out)?.values())?;
    let test = DetectionReport::compute(ens(&test_in)?.values(), ens(&test_out)?.values())?;

    let mut features = Vec::new();
    let mut rows = Vec::new();
    for j in 0..in_cols.len() {
        let f = FeatureSummary {
            name: in_cols[j].0.clone(),
            validation_auroc: auroc(val_in[j].values(), val_out[j].values())?,
            test: DetectionReport::compute(test_in[j].values(), test_out[j].values())?,
        };
        rows.push((f.name.clone(), f.test.clone()));
        features.push(f);
    }
    rows.push(("ensemble".to_string(), test.clone()));
    println!(
        "test split ({} in, {} out); validation AUROC {:.2}",
        test.n_in,
        test.n_out,
        100.0 * validation_auroc
    );
    print!("{}", format_table(&rows));
    if !training.converged {
        log::warn!("ensemble training did not converge; see the report");
    }

    write_json(&a.model_out, &model)?;
    let report = EnsembleReport {
        n_train: a.split.n_train,
        n_val: a.split.n_val,
        seed: a.split.seed,
        training,
        validation_auroc,
        test,
        features,
    };
    write_json(&a.report, &report)?;
    finish(m, &a.model_out)
}

/// `eps{e}` or `eps{e}_T{t}`.
fn parse_grid_name(name: &str) -> Option<(f64, Option<f64>)> {
    let rest = name.strip_prefix("eps")?;
    let (e, t) = match rest.split_once("_T") {
        Some((e, t)) => (e, Some(t.parse().ok()?)),
        None => (rest, None),
    };
    Some((e.parse().ok()?, t))
}

fn single_column(cols: Vec<ScoreColumn>, key: Option<&str>, path: &Path) -> Result<ScoreColumn> {
    match key {
        Some(k) => cols
            .into_iter()
            .find(|c| c.key() == k)
            .ok_or_else(|| Failure::data(format!("{}: no column {k}", path.display()))),
        None if cols.len() == 1 => Ok(cols.into_iter().next().unwrap()),
        None => Err(Failure::usage(format!(
            "{} has {} columns; choose one with --score",
            path.display(),
            cols.len()
        ))),
    }
}

#[derive(Serialize)]
struct SelectRow {
    directory: String,
    epsilon: f64,
    temperature: Option<f64>,
    validation_metric: f64,
}

#[derive(Serialize)]
struct SelectReport {
    metric: String,
    chosen: String,
    epsilon: f64,
    temperature: Option<f64>,
    test: DetectionReport,
    candidates: Vec<SelectRow>,
}

pub fn select(a: &SelectArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("select");
    m.flag("score", a.score.clone().unwrap_or_default())
        .flag("metric", format!("{:?}", a.metric))
        .flag("n_train", a.split.n_train)
        .flag("n_val", a.split.n_val)
        .flag("seed", a.split.seed);
    m.input(&a.grid).output(&a.report);

    let mut dirs: Vec<(String, f64, Option<f64>)> = Vec::new();
    for entry in std::fs::read_dir(&a.grid)
        .map_err(|e| Failure::data(format!("{}: {e}", a.grid.display())))?
    {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !entry.file_type()?.is_dir() {
            continue;
        }
        match parse_grid_name(&name) {
            Some((e, t)) => dirs.push((name, e, t)),
            None => log::warn!("skipping {name:?}: not an eps{{e}}_T{{t}} directory"),
        }
    }
    dirs.sort_by(|x, y| x.0.cmp(&y.0));

    let mut candidates = Vec::new();
    let mut tests = Vec::new();
    for (name, epsilon, temperature) in &dirs {
        let dir = a.grid.join(name);
        let (pi, po) = (dir.join("in.csv"), dir.join("out.csv"));
        let ci = single_column(
            load_side(&[pi.clone()], "in-distribution")?,
            a.score.as_deref(),
            &pi,
        )?;
        let co = single_column(
            load_side(&[po.clone()], "out-of-distribution")?,
            a.score.as_deref(),
            &po,
        )?;
        let (si, so) =
            split_pair(ci.values.len(), co.values.len(), &a.split).map_err(|f| f.context(name))?;
        candidates.push(Candidate {
            epsilon: *epsilon,
            temperature: *temperature,
            val_in: pick(&ci.values, &si.val),
            val_out: pick(&co.values, &so.val),
        });
        tests.push((pick(&ci.values, &si.test), pick(&co.values, &so.test)));
    }
    let metric = match a.metric {
        Metric::Auroc => SelectionMetric::Auroc,
        Metric::TnrAtTpr95 => SelectionMetric::TnrAtTpr95,
    };
    let choice = select_hyperparameters(&candidates, metric).map_err(|e| match e {
        ensemble::EnsembleError::NoCandidates => Failure::usage(format!(
            "{}: no eps{{e}}_T{{t}} directories",
            a.grid.display()
        )),
        other => other.into(),
    })?;
    let best = choice.best;
    let test = DetectionReport::compute(&tests[best].0, &tests[best].1)?;

    println!(
        "{:<24}  {:>10}  {:>10}  {:>10}",
        "candidate", "epsilon", "T", "val"
    );
    for ((name, _, _), r) in dirs.iter().zip(&choice.table) {
        let t = r.temperature.map_or("-".to_string(), |t| t.to_string());
        let mark = if name == &dirs[best].0 { " *" } else { "" };
        println!(
            "{:<24}  {:>10}  {:>10}  {:>10.4}{mark}",
            name, r.epsilon, t, r.metric
        );
    }
    print!(
        "{}",
        format_table(&[(format!("{} (test)", dirs[best].0), test.clone())])
    );

    let report = SelectReport {
        metric: format!("{metric:?}"),
        chosen: dirs[best].0.clone(),
        epsilon: candidates[best].epsilon,
        temperature: candidates[best].temperature,
        test,
        candidates: dirs
            .iter()
            .zip(&choice.table)
            .map(|((name, _, _), r)| SelectRow {
                directory: name.clone(),
                epsilon: r.epsilon,
                temperature: r.temperature,
                validation_metric: r.metric,
            })
            .collect(),
    };
    write_json(&a.report, &report)?;
    finish(m, &a.report)
}

#[derive(Serialize)]
struct ProbeOutput {
    layer: String,
    selection: String,
    probe: ProbeModel,
    training: TrainReport,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
}

fn labelled(set: &FeatureSet, path: &Path) -> Result<()> {
    if set.is_ood() {
        return Err(Failure::usage(format!(
            "{}: a probe needs class labels, but the set is out-of-distribution",
            path.display()
        )));
    }
    Ok(())
}

pub fn probe(a: &ProbeArgs) -> Result<()> {
    let selection = ComponentSelection::parse(&a.components)?;
    let mut m = ManifestBuilder::new("probe");
    m.flag("components", &a.components)
        .flag("layer", a.layer.clone().unwrap_or_default())
        .flag("l2", a.l2);
    m.input(&a.features).input(&a.model);
    if let Some(t) = &a.test_features {
        m.input(t);
    }
    m.output(&a.model_out);

    let model = read_model(&a.model)?;
    let layer = match &a.layer {
        Some(l) => l.clone(),
        None if model.layers.len() == 1 => model.layers[0].name.clone(),
        None => {
            return Err(Failure::usage(
                "the model has several layers; choose one with --layer",
            ))
        }
    };
    let fitted = model
        .layer(&layer)
        .ok_or_else(|| Failure::data(format!("model has no layer {layer:?}")))?;
    let g = fitted.as_gaussian();
    selection.validate_for(g.dim())?;

    let train = read_feature_set(&a.features)?;
    labelled(&train, &a.features)?;
    let x = train
        .layer(&layer)
        .ok_or_else(|| Failure::data(format!("feature set has no layer {layer:?}")))?;
    let config = TrainConfig {
        l2_strength: a.l2,
        ..TrainConfig::default()
    };
    let mean = fitted.global_mean();
    let (probe, training) = train_probe(
        x,
        train.labels(),
        train.num_classes() as usize,
        g.spectrum(),
        &mean,
        &selection,
        &config,
    )?;
    let train_accuracy = probe_accuracy(&probe, x, train.labels())?;

    let test_accuracy = match &a.test_features {
        Some(p) => {
            let test = read_feature_set(p)?;
            labelled(&test, p)?;
            let tx = test
                .layer(&layer)
                .ok_or_else(|| Failure::data(format!("{}: no layer {layer:?}", p.display())))?;
            Some(probe_accuracy(&probe, tx, test.labels())?)
        }
        None => None,
    };
    println!(
        "layer {layer}, components {selection}: train accuracy {:.2}%",
        100.0 * train_accuracy
    );
    if let Some(t) = test_accuracy {
        println!("test accuracy {:.2}%", 100.0 * t);
    }
    if !training.converged {
        log::warn!(
            "probe training did not converge after {} iterations",
            training.iterations
        );
    }
    write_json(
        &a.model_out,
        &ProbeOutput {
            layer,
            selection: selection.to_string(),
            probe,
            training,
            train_accuracy,
            test_accuracy,
        },
    )?;
    finish(m, &a.model_out)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        d: a.d,
        classes: a.classes,
        n_per_class: a.n_per_class,
        head_k: a.head_k,
        head_variances: a.head_variances.clone(),
        tail_variance: a.tail_variance,
        class_separation: a.separation,
        seed: a.seed,
    };
    let mut m = ManifestBuilder::new("synth");
    m.flag("spec", serde_json::to_string(&spec)?).flag(
        "sample_seed",
        a.sample_seed.map_or(String::new(), |s| s.to_string()),
    );
    m.output(&a.out);

    let gen = SynthModel::new(spec.clone())?;
    let set = gen.sample_in(a.n_per_class, a.sample_seed.unwrap_or(a.seed))?;
    write_feature_set(&set, &a.out)?;
    println!(
        "wrote {} samples (d = {}, C = {}) to {}",
        set.len(),
        a.d,
        a.classes,
        a.out.display()
    );

    if let Some(dir) = &a.anomalies_out {
        let n = a.n_anomalies.unwrap_or(a.classes * a.n_per_class);
        let anomalies = AnomalySpec {
            base: spec,
            tail_inflation: a.tail_inflation,
            head_inflation: a.head_inflation,
            n,
            seed: a.anomaly_seed,
        };
        anomalies.validate()?;
        m.flag("tail_inflation", a.tail_inflation)
            .flag("head_inflation", a.head_inflation)
            .flag("n_anomalies", n)
            .flag("anomaly_seed", a.anomaly_seed)
            .output(dir);
        let out = gen.sample_anomalies(
            anomalies.tail_inflation,
            anomalies.head_inflation,
            n,
            anomalies.seed,
        )?;
        write_feature_set(&out, dir)?;
        println!("wrote {n} anomalies to {}", dir.display());
    }
    finish(m, &a.out)
}
