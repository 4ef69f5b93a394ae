use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use recourse_core::classifier::{train as fit_classifier, MlpClassifier, TrainConfig};
use recourse_core::data::{
    format_value, generate_synthetic, load_csv, partition, write_csv, Dataset, FeatureSchema, PartitionedData,
    SyntheticSpec,
};
use recourse_core::diagnostics::{summarize_scalar, ParamSummary};
use recourse_core::explain::{explain as sample_posterior, test_negatives, ExplainError, ExplainSetup, Explanation};
use recourse_core::metrics::{diversity, evaluate as score, robustness, DistanceContext, EvaluationInput, MetricsReport};
use recourse_core::model::{Hierarchy, ModelContext, ModelError, PriorConfig};
use recourse_core::sampler::{point_estimate_baseline, BaselineConfig, Init, MassMatrix, NutsConfig, SamplerError};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::samples::{SampleRow, SamplesFile};
use crate::{
    BaselineArgs, Classify, DataArgs, DiagnoseArgs, EvaluateArgs, ExplainArgs, Failure, MassArg, SynthArgs, TrainArgs,
};

const RHAT_WARN: f64 = 1.1;

type CmdResult<T = ()> = Result<T, Failure>;

fn usage_err(msg: String) -> Failure {
    Failure::Usage(anyhow!(msg))
}

fn out_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).runtime()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "unavailable".to_string(), |v| v.to_string())
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> CmdResult<PathBuf> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r).map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    Ok(path.to_path_buf())
}

/// Schema (with an optional group-feature override) and dataset.
fn load_data(args: &DataArgs, manifest: &mut RunManifest) -> CmdResult<(FeatureSchema, Dataset)> {
    let mut schema = FeatureSchema::load(&args.schema).usage()?;
    if let Some(g) = &args.group_feature {
        schema = FeatureSchema::with_options(
            schema.features.clone(),
            Some(g.clone()),
            schema.label.clone(),
            schema.smoothing,
            schema.split_seed,
        )
        .usage()?;
    }
    let data = load_csv(&args.data, &schema).usage()?;
    manifest.input(&args.schema).usage()?;
    manifest.input(&args.data).usage()?;
    manifest.schema_hash = Some(schema.hash());
    Ok((schema, data))
}

/// Classifier checked against the schema, and the dataset re-encoded with
/// the classifier's normalization.
fn load_classifier(path: &Path, data: Dataset, manifest: &mut RunManifest) -> CmdResult<(MlpClassifier, Dataset)> {
    let clf = MlpClassifier::load(path, Some(&data.schema.hash())).usage()?;
    manifest.input(path).usage()?;
    let data = data.with_normalizer(clf.normalizer.clone()).usage()?;
    Ok((clf, data))
}

fn load_prior(path: Option<&Path>, manifest: &mut RunManifest) -> CmdResult<PriorConfig> {
    match path {
        Some(p) => {
            manifest.input(p).usage()?;
            PriorConfig::load(p).usage()
        }
        None => Ok(PriorConfig::default()),
    }
}

/// Row index, comma-separated indices, or `neg:N`.
fn select_instances(selector: &str, data: &Dataset, clf: &MlpClassifier) -> CmdResult<Vec<usize>> {
    if let Some(n) = selector.strip_prefix("neg:") {
        let n: usize = n.parse().map_err(|_| usage_err(format!("bad selector '{selector}'")))?;
        let rows: Vec<usize> = test_negatives(data, clf).into_iter().take(n).collect();
        if rows.is_empty() {
            return Err(usage_err(format!("selector '{selector}' matches no instance")));
        }
        return Ok(rows);
    }
    selector
        .split(',')
        .map(|s| {
            let i: usize = s.trim().parse().map_err(|_| usage_err(format!("bad selector '{selector}'")))?;
            if i >= data.len() {
                return Err(usage_err(format!(
                    "selector '{selector}' matches no instance: row {i} of {}",
                    data.len()
                )));
            }
            Ok(i)
        })
        .collect()
}

fn classify_explain(e: ExplainError) -> Failure {
    match e {
        ExplainError::Model(m @ (ModelError::InvalidConfig(_) | ModelError::WidthMismatch { .. } | ModelError::EmptyLevel)) => {
            Failure::Usage(m.into())
        }
        ExplainError::Sampler(s @ SamplerError::InvalidConfig(_)) => Failure::Usage(s.into()),
        other => Failure::Runtime(other.into()),
    }
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    let t = Instant::now();
    let mut manifest = RunManifest::new("synth", args)?;
    manifest.seed("data", args.seed);
    let spec = SyntheticSpec {
        n: args.rows,
        d_cont: args.cont,
        d_cat: args.cat,
        k: args.groups,
        levels: args.levels,
        cluster_shift: args.cluster_shift,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, args.seed).usage()?;
    out_dir(&args.out)?;
    let schema_path = args.out.join("schema.toml");
    fs::write(&schema_path, data.schema.to_toml_string()).context("writing schema")?;
    let data_path = args.out.join("data.csv");
    write_csv(File::create(&data_path).context("creating data.csv")?, &data).runtime()?;
    manifest.schema_hash = Some(data.schema.hash());
    manifest.time("total", t);
    println!("wrote {} rows to {}", data.len(), data_path.display());
    manifest.finish(&args.out, &[schema_path, data_path])?;
    Ok(())
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let t = Instant::now();
    let mut manifest = RunManifest::new("train", args)?;
    manifest.seed("train", args.seed);
    let (_, data) = load_data(&args.data, &mut manifest)?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        hidden: args.hidden,
    };
    let (clf, report) = fit_classifier(&data, &config).usage()?;
    out_dir(&args.out)?;
    let clf_path = args.out.join("classifier.json");
    clf.save(&clf_path).runtime()?;
    let report_path = args.out.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n")
        .context("writing report")?;
    println!("train accuracy {:.4}", report.train_accuracy);
    println!("test accuracy {:.4}", report.test_accuracy);
    manifest.time("total", t);
    manifest.finish(&args.out, &[clf_path, report_path])?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    instance: usize,
    param: &'a str,
    mean: f64,
    median: f64,
    sd: f64,
    iqr: f64,
    level: f64,
    ci_low: f64,
    ci_high: f64,
    rhat: String,
    ess: String,
    mcse_mean: String,
    issues: String,
}

impl<'a> SummaryRow<'a> {
    fn new(instance: usize, s: &'a ParamSummary) -> Self {
        Self {
            instance,
            param: &s.name,
            mean: s.mean,
            median: s.median,
            sd: s.sd,
            iqr: s.iqr,
            level: s.level,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            rhat: fmt_opt(s.rhat.map(|r| r.value)),
            ess: fmt_opt(s.ess.map(|r| r.value)),
            mcse_mean: fmt_opt(s.mcse_mean),
            issues: s.issues.join("; "),
        }
    }
}

fn write_summaries(path: &Path, per_instance: &[(usize, &[ParamSummary])]) -> CmdResult<PathBuf> {
    let rows: Vec<SummaryRow> =
        per_instance.iter().flat_map(|(i, ss)| ss.iter().map(move |s| SummaryRow::new(*i, s))).collect();
    write_rows(path, &rows)
}

/// Table-1 style rows: the instance, then every decoded sample with its
/// predicted label.
fn write_counterfactuals(path: &Path, schema: &FeatureSchema, data: &Dataset, file: &SamplesFile) -> CmdResult<PathBuf> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["instance".to_string(), "source".into(), "chain".into(), "draw".into()];
    header.extend(schema.features.iter().map(|f| f.name.clone()));
    header.push(format!("{}_predicted", schema.label.name));
    header.push("prob".into());
    w.write_record(&header).map_err(anyhow::Error::from)?;
    for i in file.instances() {
        let mut rec = vec![i.to_string(), "original".into(), String::new(), String::new()];
        rec.extend(data.rows[i].iter().enumerate().map(|(j, v)| format_value(schema, j, v)));
        rec.push(data.labels[i].to_string());
        rec.push(String::new());
        w.write_record(&rec).map_err(anyhow::Error::from)?;
        for r in file.rows.iter().filter(|r| r.instance == i) {
            let mut rec = vec![i.to_string(), "sample".into(), r.chain.to_string(), r.draw.to_string()];
            rec.extend(r.decoded.iter().cloned());
            rec.push(u8::from(r.valid).to_string());
            rec.push(r.prob_discrete.to_string());
            w.write_record(&rec).map_err(anyhow::Error::from)?;
        }
    }
    w.flush().map_err(anyhow::Error::from)?;
    Ok(path.to_path_buf())
}

struct ExplainInputs<'a> {
    schema: &'a FeatureSchema,
    data: &'a Dataset,
    clf: &'a MlpClassifier,
    partition: Option<&'a PartitionedData>,
    instances: &'a [usize],
    level: f64,
}

/// Sample every selected instance and write samples, summaries and the
/// decoded table into `dir`. Returns the explanations and written files.
fn explain_into(
    inputs: &ExplainInputs<'_>,
    prior: &PriorConfig,
    nuts: &NutsConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> CmdResult<(Vec<(usize, Explanation)>, Vec<PathBuf>)> {
    out_dir(dir)?;
    let setup = ExplainSetup {
        schema: inputs.schema,
        classifier: inputs.clf,
        prior,
        partition: inputs.partition,
        nuts,
        init: Init::default(),
        level: inputs.level,
    };
    let mut file = SamplesFile {
        feature_names: inputs.schema.features.iter().map(|f| f.name.clone()).collect(),
        ..SamplesFile::default()
    };
    let mut done = Vec::with_capacity(inputs.instances.len());
    for &i in inputs.instances {
        let t = Instant::now();
        let e = sample_posterior(&setup, &inputs.data.encoded[i]).map_err(classify_explain)?;
        manifest.time(&format!("{}/instance_{i}", dir.display()), t);
        for err in &e.batch.failed {
            manifest.warn(format!("instance {i}: chain failed: {err}"));
        }
        let max_rhat = e
            .summaries
            .iter()
            .filter_map(|s| s.rhat.map(|r| r.value))
            .fold(f64::NEG_INFINITY, f64::max);
        if max_rhat >= RHAT_WARN {
            manifest.warn(format!("instance {i}: max R-hat {max_rhat:.3} ≥ {RHAT_WARN}"));
            manifest.converged = Some(false);
        } else if manifest.converged.is_none() && max_rhat.is_finite() {
            manifest.converged = Some(true);
        }
        println!(
            "instance {i}: valid {:.3}, divergences {:.4}, max R-hat {}, {:.1}s",
            e.valid_fraction(),
            e.batch.divergence_rate(),
            if max_rhat.is_finite() { format!("{max_rhat:.3}") } else { "unavailable".into() },
            t.elapsed().as_secs_f64()
        );
        file.param_names = e.param_names.clone();
        for (c, chain) in e.batch.chains.iter().enumerate() {
            for d in 0..chain.len() {
                let params = e.constrained[c][d].clone();
                let row = SampleRow::new(i, chain.id, d, chain.divergent[d], params, &e.samples[c][d], inputs.schema);
                file.rows.push(row);
            }
        }
        done.push((i, e));
    }
    let samples_path = dir.join("samples.csv");
    file.write(&samples_path)?;
    let summaries: Vec<(usize, &[ParamSummary])> = done.iter().map(|(i, e)| (*i, e.summaries.as_slice())).collect();
    let summary_path = write_summaries(&dir.join("summary.csv"), &summaries)?;
    let table_path = write_counterfactuals(&dir.join("counterfactuals.csv"), inputs.schema, inputs.data, &file)?;
    Ok((done, vec![samples_path, summary_path, table_path]))
}

#[derive(Debug, Clone, Copy)]
enum SweepKey {
    Samples,
    Sigma,
    WProx,
    Lambda,
}

fn parse_sweep(spec: &str) -> CmdResult<(SweepKey, String, Vec<f64>)> {
    let (key, values) = spec.split_once('=').ok_or_else(|| usage_err(format!("bad sweep '{spec}'")))?;
    let k = match key {
        "samples" => SweepKey::Samples,
        "sigma" => SweepKey::Sigma,
        "w_prox" => SweepKey::WProx,
        "lambda" => SweepKey::Lambda,
        _ => return Err(usage_err(format!("unknown sweep key '{key}' (samples, sigma, w_prox, lambda)"))),
    };
    let vals = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| usage_err(format!("bad sweep value '{v}'"))))
        .collect::<CmdResult<Vec<f64>>>()?;
    if vals.is_empty() {
        return Err(usage_err("empty sweep grid".into()));
    }
    Ok((k, key.to_string(), vals))
}

fn apply_sweep(key: SweepKey, v: f64, prior: &mut PriorConfig, nuts: &mut NutsConfig) -> CmdResult {
    match key {
        SweepKey::Samples => {
            if v < 1.0 || v.fract() != 0.0 {
                return Err(usage_err(format!("samples must be a positive integer, got {v}")));
            }
            nuts.n_samples = v as usize;
        }
        SweepKey::Sigma => {
            prior.sigma.scale = v;
            for p in [&mut prior.sigma_l1, &mut prior.sigma_l2, &mut prior.sigma_l3].into_iter().flatten() {
                p.scale = v;
            }
        }
        SweepKey::WProx => prior.w_prox = v,
        SweepKey::Lambda => prior.lambda = v,
    }
    prior.validate().usage()?;
    nuts.validate().usage()
}

#[derive(Serialize)]
struct SweepRow {
    key: String,
    value: f64,
    validity: f64,
    proximity: f64,
    sparsity: f64,
    diversity_mean: f64,
    cost_mean: f64,
    max_rhat: String,
}

pub fn explain(args: &ExplainArgs, threads: Option<usize>) -> CmdResult {
    let t = Instant::now();
    let mut manifest = RunManifest::new("explain", args)?;
    let (schema, data) = load_data(&args.data, &mut manifest)?;
    let (clf, data) = load_classifier(&args.classifier, data, &mut manifest)?;
    let mut prior = load_prior(args.priors.as_deref(), &mut manifest)?;
    if let Some(l) = args.levels {
        prior.levels = Hierarchy::try_from(l).map_err(usage_err)?;
    }
    prior.validate().usage()?;
    let nuts = NutsConfig {
        burn_in: args.burn_in,
        n_samples: args.samples,
        n_chains: args.chains,
        max_depth: args.max_depth,
        mass: match args.mass {
            MassArg::Identity => MassMatrix::Identity,
            MassArg::Diagonal => MassMatrix::Diagonal,
        },
        seed: args.seed,
        threads,
        ..NutsConfig::default()
    };
    nuts.validate().usage()?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(usage_err(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    let instances = select_instances(&args.instance, &data, &clf)?;
    manifest.seed("sampler", nuts.seed);
    manifest.seed("subsample", prior.subsample_seed);
    let partitioned = match prior.levels {
        Hierarchy::Flat => None,
        _ => Some(partition(&data, |x| clf.prob(x)).usage()?),
    };
    let inputs = ExplainInputs {
        schema: &schema,
        data: &data,
        clf: &clf,
        partition: partitioned.as_ref(),
        instances: &instances,
        level: args.level,
    };
    out_dir(&args.out)?;
    let prior_path = args.out.join("prior.toml");
    fs::write(&prior_path, prior.to_toml_string()).context("writing prior.toml")?;
    let mut outputs = vec![prior_path];

    match &args.sweep {
        None => {
            let (_, files) = explain_into(&inputs, &prior, &nuts, &args.out, &mut manifest)?;
            outputs.extend(files);
        }
        Some(spec) => {
            let (key, name, values) = parse_sweep(spec)?;
            let ctx = DistanceContext::from_dataset(&data);
            let mut rows = Vec::new();
            for v in values {
                let (mut p, mut n) = (prior.clone(), nuts.clone());
                apply_sweep(key, v, &mut p, &mut n)?;
                let dir = args.out.join(format!("{name}={v}"));
                let (done, files) = explain_into(&inputs, &p, &n, &dir, &mut manifest)?;
                outputs.extend(files);
                let xs: Vec<Vec<f64>> = done.iter().map(|(i, _)| data.encoded[*i].clone()).collect();
                let sets: Vec<Vec<Vec<f64>>> = done.iter().map(|(_, e)| e.encoded()).collect();
                let probs: Vec<Vec<f64>> = done.iter().map(|(_, e)| e.probs_discrete()).collect();
                let input = EvaluationInput {
                    instances: &xs,
                    sets: &sets,
                    probs: &probs,
                    reference: &[],
                    ks: &[],
                    groups: None,
                };
                let r = score(&input, &ctx).runtime()?;
                let max_rhat = done
                    .iter()
                    .filter_map(|(_, e)| e.max_perturbation_rhat())
                    .fold(f64::NEG_INFINITY, f64::max);
                rows.push(SweepRow {
                    key: name.clone(),
                    value: v,
                    validity: r.validity,
                    proximity: r.proximity,
                    sparsity: r.sparsity,
                    diversity_mean: r.diversity.mean,
                    cost_mean: r.cost.iter().sum::<f64>() / r.cost.len().max(1) as f64,
                    max_rhat: if max_rhat.is_finite() { max_rhat.to_string() } else { "unavailable".into() },
                });
            }
            outputs.push(write_rows(&args.out.join("sweep.csv"), &rows)?);
        }
    }
    manifest.time("total", t);
    manifest.finish(&args.out, &outputs)?;
    Ok(())
}

pub fn baseline(args: &BaselineArgs) -> CmdResult {
    let t = Instant::now();
    let mut manifest = RunManifest::new("baseline", args)?;
    manifest.seed("baseline", args.seed);
    let (schema, data) = load_data(&args.data, &mut manifest)?;
    let (clf, data) = load_classifier(&args.classifier, data, &mut manifest)?;
    let mut prior = load_prior(args.priors.as_deref(), &mut manifest)?;
    // The baseline optimizes the instance term only.
    prior.levels = Hierarchy::Flat;
    if args.baseline_restarts == 0 {
        return Err(usage_err("--baseline-restarts must be at least 1".into()));
    }
    let instances = select_instances(&args.instance, &data, &clf)?;
    let config = BaselineConfig {
        n_restarts: args.baseline_restarts,
        steps: args.steps,
        seed: args.seed,
        ..BaselineConfig::default()
    };
    let mut file = SamplesFile {
        feature_names: schema.features.iter().map(|f| f.name.clone()).collect(),
        ..SamplesFile::default()
    };
    for &i in &instances {
        let ctx = ModelContext::new(&schema, &clf, &prior, &data.encoded[i], None).usage()?;
        let names = ctx.layout.param_names();
        let idx = ctx.layout.perturbation_indices();
        file.param_names = idx.iter().map(|&j| names[j].clone()).collect();
        let points = point_estimate_baseline(&ctx, &config);
        let valid = points.iter().filter(|p| p.valid).count();
        println!("instance {i}: {valid}/{} restarts valid", points.len());
        for (r, p) in points.iter().enumerate() {
            let params: Vec<f64> = p.delta.iter().chain(p.eta.iter().flatten()).copied().collect();
            if params.len() != file.param_names.len() {
                return Err(Failure::Runtime(anyhow!("baseline parameter count mismatch")));
            }
            file.rows.push(SampleRow::new(i, 0, r, false, params, &p.to_sample(&ctx), &schema));
        }
    }
    out_dir(&args.out)?;
    let samples_path = args.out.join("samples.csv");
    file.write(&samples_path)?;
    let table_path = write_counterfactuals(&args.out.join("counterfactuals.csv"), &schema, &data, &file)?;
    manifest.time("total", t);
    manifest.finish(&args.out, &[samples_path, table_path])?;
    Ok(())
}

/// Samples file with its schema hash checked against `expected`.
fn read_samples(path: &Path, expected: &str, manifest: &mut RunManifest) -> CmdResult<SamplesFile> {
    let origin = RunManifest::beside(path).usage()?;
    match origin.schema_hash.as_deref() {
        Some(h) if h == expected => {}
        found => {
            return Err(usage_err(format!(
                "{}: schema hash mismatch (expected {expected}, found {})",
                path.display(),
                found.unwrap_or("none")
            )))
        }
    }
    let file = SamplesFile::read(path).usage()?;
    if file.rows.is_empty() {
        return Err(usage_err(format!("{}: empty samples file", path.display())));
    }
    manifest.input(path).usage()?;
    Ok(file)
}

/// Instances, sample sets and probabilities of a samples file.
fn sets_of(file: &SamplesFile, data: &Dataset) -> CmdResult<(Vec<usize>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
    let ids = file.instances();
    let mut xs = Vec::with_capacity(ids.len());
    let (mut sets, mut probs) = (Vec::new(), Vec::new());
    for &i in &ids {
        let x = data.encoded.get(i).ok_or_else(|| usage_err(format!("instance {i} is not in the dataset")))?;
        if x.len() != file.rows[0].encoded.len() {
            return Err(usage_err("samples width does not match the dataset encoding".into()));
        }
        xs.push(x.clone());
        let (s, p) = file.set_of(i);
        sets.push(s);
        probs.push(p);
    }
    Ok((ids, xs, sets, probs))
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    file: String,
    dataset: &'a str,
    n_instances: usize,
    validity: f64,
    sparsity: f64,
    proximity: f64,
    diversity_mean: f64,
    diversity_variance: f64,
    cost_mean: f64,
}

#[derive(Serialize)]
struct Table2Row<'a> {
    dataset: &'a str,
    validity: f64,
    sparsity: f64,
    proximity: f64,
}

#[derive(Serialize)]
struct RobustnessRow {
    file: String,
    k: usize,
    knn_mean: f64,
    lof_mean: f64,
    outlier_fraction: f64,
}

#[derive(Serialize)]
struct GroupRow {
    file: String,
    group: String,
    n: usize,
    mean: f64,
    sd: f64,
}

#[derive(Serialize)]
struct GapRow {
    file: String,
    a: String,
    b: String,
    gap: f64,
}

#[derive(Serialize)]
struct CostRow {
    file: String,
    instance: usize,
    group: String,
    cost: f64,
    deviation: f64,
}

#[derive(Serialize)]
struct DiversityRow {
    instance: usize,
    bayesian: f64,
    baseline: f64,
}

#[derive(Serialize)]
struct DiversityStats {
    method: &'static str,
    n: usize,
    mean: f64,
    variance: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

#[derive(Serialize)]
struct ReportEntry<'a> {
    file: String,
    report: &'a MetricsReport,
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult {
    let t = Instant::now();
    let mut manifest = RunManifest::new("evaluate", args)?;
    let (schema, data) = load_data(&args.data, &mut manifest)?;
    let (_, data) = load_classifier(&args.classifier, data, &mut manifest)?;
    let hash = schema.hash();
    let ctx = DistanceContext::from_dataset(&data);
    let reference: Vec<Vec<f64>> =
        data.train_idx.iter().filter(|&&i| data.labels[i] == 1).map(|&i| data.encoded[i].clone()).collect();
    let names = schema.group_names();
    let dataset_name = args.dataset_name.clone().unwrap_or_else(|| {
        args.data.data.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });

    let (mut metrics, mut table2, mut robust, mut groups, mut gaps, mut costs) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut reports = Vec::new();
    let mut first_sets = None;
    for path in &args.samples {
        let file = read_samples(path, &hash, &mut manifest)?;
        let (ids, xs, sets, probs) = sets_of(&file, &data)?;
        let member: Vec<usize> = ids.iter().map(|&i| data.groups[i]).collect();
        let input = EvaluationInput {
            instances: &xs,
            sets: &sets,
            probs: &probs,
            reference: &[],
            ks: &[],
            groups: (names.len() > 1).then_some((member.as_slice(), names.as_slice())),
        };
        let mut report = score(&input, &ctx).usage()?;
        if !args.ks.is_empty() {
            let points: Vec<Vec<f64>> = sets.iter().flatten().cloned().collect();
            report.robustness = robustness(&points, &reference, &args.ks, &ctx, args.lof_threshold).usage()?;
        }
        let label = path.display().to_string();
        let cost_mean = report.cost.iter().sum::<f64>() / report.cost.len().max(1) as f64;
        metrics.push(MetricsRow {
            file: label.clone(),
            dataset: &dataset_name,
            n_instances: report.n_instances,
            validity: report.validity,
            sparsity: report.sparsity,
            proximity: report.proximity,
            diversity_mean: report.diversity.mean,
            diversity_variance: report.diversity.variance,
            cost_mean,
        });
        table2.push(Table2Row {
            dataset: &dataset_name,
            validity: 100.0 * report.validity,
            sparsity: 100.0 * report.sparsity,
            proximity: report.proximity,
        });
        for r in &report.robustness {
            robust.push(RobustnessRow {
                file: label.clone(),
                k: r.k,
                knn_mean: r.knn_mean,
                lof_mean: r.lof_mean,
                outlier_fraction: r.outlier_fraction,
            });
        }
        if let Some(f) = &report.fairness {
            for g in &f.groups {
                groups.push(GroupRow { file: label.clone(), group: g.group.clone(), n: g.n, mean: g.mean, sd: g.sd });
            }
            for g in &f.gaps {
                gaps.push(GapRow { file: label.clone(), a: g.a.clone(), b: g.b.clone(), gap: g.gap });
            }
        }
        for (j, &i) in ids.iter().enumerate() {
            costs.push(CostRow {
                file: label.clone(),
                instance: i,
                group: names.get(data.groups[i]).cloned().unwrap_or_default(),
                cost: report.cost[j],
                deviation: report.fairness.as_ref().map_or(f64::NAN, |f| f.deviation[j]),
            });
        }
        println!(
            "{label}: validity {:.3}, sparsity {:.3}, proximity {:.3}, diversity {:.3}",
            report.validity, report.sparsity, report.proximity, report.diversity.mean
        );
        if first_sets.is_none() {
            first_sets = Some((ids.clone(), sets.clone()));
        }
        reports.push((label, report));
    }

    out_dir(&args.out)?;
    let mut outputs = vec![
        write_rows(&args.out.join("metrics.csv"), &metrics)?,
        write_rows(&args.out.join("table2.csv"), &table2)?,
        write_rows(&args.out.join("robustness.csv"), &robust)?,
        write_rows(&args.out.join("fairness.csv"), &groups)?,
        write_rows(&args.out.join("fairness_gaps.csv"), &gaps)?,
        write_rows(&args.out.join("cost.csv"), &costs)?,
    ];
    let entries: Vec<ReportEntry> = reports.iter().map(|(f, r)| ReportEntry { file: f.clone(), report: r }).collect();
    let json_path = args.out.join("metrics.json");
    fs::write(&json_path, serde_json::to_string_pretty(&entries).map_err(anyhow::Error::from)? + "\n")
        .context("writing metrics.json")?;
    outputs.push(json_path);

    if let (Some(path), Some((ids, sets))) = (&args.baseline, first_sets) {
        let base = read_samples(path, &hash, &mut manifest)?;
        let mut rows = Vec::new();
        for (i, set) in ids.iter().zip(&sets) {
            let (b, _) = base.set_of(*i);
            if b.is_empty() {
                continue;
            }
            rows.push(DiversityRow { instance: *i, bayesian: diversity(set, &ctx), baseline: diversity(&b, &ctx) });
        }
        if rows.is_empty() {
            return Err(usage_err("baseline file shares no instance with the samples".into()));
        }
        let (bm, bv) = mean_var(&rows.iter().map(|r| r.bayesian).collect::<Vec<_>>());
        let (pm, pv) = mean_var(&rows.iter().map(|r| r.baseline).collect::<Vec<_>>());
        let stats = [
            DiversityStats { method: "bayesian", n: rows.len(), mean: bm, variance: bv },
            DiversityStats { method: "baseline", n: rows.len(), mean: pm, variance: pv },
        ];
        println!("diversity: bayesian {bm:.3} vs baseline {pm:.3} over {} instances", rows.len());
        outputs.push(write_rows(&args.out.join("diversity.csv"), &rows)?);
        outputs.push(write_rows(&args.out.join("diversity_summary.csv"), &stats)?);
    }
    manifest.time("total", t);
    manifest.finish(&args.out, &outputs)?;
    Ok(())
}

#[derive(Serialize)]
struct HistRow<'a> {
    instance: usize,
    param: &'a str,
    chain: usize,
    bin: usize,
    count: usize,
}

pub fn diagnose(args: &DiagnoseArgs) -> CmdResult {
    let t = Instant::now();
    let mut manifest = RunManifest::new("diagnose", args)?;
    let file = SamplesFile::read(&args.samples).usage()?;
    if file.rows.is_empty() {
        return Err(usage_err(format!("{}: empty samples file", args.samples.display())));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(usage_err(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    manifest.input(&args.samples).usage()?;
    if let Ok(origin) = RunManifest::beside(&args.samples) {
        manifest.schema_hash = origin.schema_hash;
    }
    let mut summaries: Vec<(usize, Vec<ParamSummary>)> = Vec::new();
    for i in file.instances() {
        let chains = file.chains_of(i);
        let shortest = chains.iter().map(Vec::len).min().unwrap_or(0);
        if chains.iter().any(|c| c.len() != shortest) {
            manifest.warn(format!("instance {i}: chains differ in length; truncated to {shortest} draws"));
        }
        if chains.len() < 2 {
            manifest.warn(format!("instance {i}: single chain, R-hat unavailable"));
        }
        let mut out = Vec::with_capacity(file.param_names.len());
        for (j, name) in file.param_names.iter().enumerate() {
            let draws: Vec<Vec<f64>> = chains.iter().map(|c| c[..shortest].iter().map(|r| r.params[j]).collect()).collect();
            let mut s = summarize_scalar(name, &draws, args.level).runtime()?;
            if shortest < args.min_draws {
                s.rhat = None;
                s.ess = None;
                s.mcse_mean = None;
                s.issues.push(format!("InsufficientDraws: {shortest} per chain, need {}", args.min_draws));
            }
            out.push(s);
        }
        let max_rhat = out.iter().filter_map(|s| s.rhat.map(|r| r.value)).fold(f64::NEG_INFINITY, f64::max);
        println!(
            "instance {i}: {} chains × {shortest} draws, max R-hat {}",
            chains.len(),
            if max_rhat.is_finite() { format!("{max_rhat:.3}") } else { "unavailable".into() }
        );
        if max_rhat >= RHAT_WARN {
            manifest.warn(format!("instance {i}: max R-hat {max_rhat:.3} ≥ {RHAT_WARN}"));
            manifest.converged = Some(false);
        }
        summaries.push((i, out));
    }
    out_dir(&args.out)?;
    let refs: Vec<(usize, &[ParamSummary])> = summaries.iter().map(|(i, s)| (*i, s.as_slice())).collect();
    let diag_path = write_summaries(&args.out.join("diagnostics.csv"), &refs)?;
    let mut hist = Vec::new();
    for (i, ss) in &summaries {
        for s in ss {
            for (c, counts) in s.rank_hist.iter().enumerate() {
                for (b, &count) in counts.iter().enumerate() {
                    hist.push(HistRow { instance: *i, param: &s.name, chain: c, bin: b, count });
                }
            }
        }
    }
    let hist_path = write_rows(&args.out.join("rank_hist.csv"), &hist)?;
    manifest.time("total", t);
    manifest.finish(&args.out, &[diag_path, hist_path])?;
    Ok(())
}
