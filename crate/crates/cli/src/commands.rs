use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lifespan_core::eval::report::{file_sha256, fmt_mean_std, fmt_score, Report, RunManifest, Table};
use lifespan_core::eval::{
    all_quantile_bands, cross_apply, cross_validate, cross_validate_by_community, downsample, feature_subset_sweep,
    grid_search, importance_correlation, kfold_split, shuffle_labels, CrossApplyMatrix, GridEntry, GridSpec, Learner,
    ModelArtifact, QuantileBands, ScoreSummary, SubsetScore, Task, DECILES,
};
use lifespan_core::events::{
    class_counts, label_users, read_events, write_labels_csv, BinaryWindow, EventLog, ParseOptions,
};
use lifespan_core::features::{
    default_catalog, extract, load_matrix, save_matrix, FeatureMatrix, Subset, CATALOG_VERSION,
};
use lifespan_core::forest::{ForestParams, MaxFeatures};
use lifespan_core::synth::{self, GeneratorConfig, GeneratorMeta};
use lifespan_core::{seed, Error, Result};
use serde::{Deserialize, Serialize};

use crate::{Command, LogInput, MatrixInput, ModelOpts};

const DEFAULT_SEED: u64 = 1;

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

/// Manifest under construction for the current invocation.
struct Ctx {
    manifest: RunManifest,
}

impl Ctx {
    fn new(argv: Vec<String>) -> Self {
        Ctx {
            manifest: RunManifest {
                command_line: argv,
                master_seed: DEFAULT_SEED,
                input_hashes: BTreeMap::new(),
                catalog_version: CATALOG_VERSION.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_at: now(),
                finished_at: 0,
            },
        }
    }

    fn seed(&mut self, seed: Option<u64>) -> u64 {
        let s = seed.unwrap_or_else(|| {
            log::info!("no --seed given, using {DEFAULT_SEED}");
            DEFAULT_SEED
        });
        self.manifest.master_seed = s;
        s
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let hash = file_sha256(path)?;
        self.manifest.input_hashes.insert(path.display().to_string(), hash);
        Ok(())
    }

    fn finish(&self) -> RunManifest {
        RunManifest {
            finished_at: now(),
            ..self.manifest.clone()
        }
    }

    fn write_manifest(&self, artifact: &Path) -> Result<()> {
        write_json(&with_suffix(artifact, ".manifest.json"), &self.finish())
    }

    fn report<T: Serialize>(&self, kind: &str, body: &T, tables: Vec<Table>, out: &Path) -> Result<()> {
        let report = Report::new(kind, self.finish(), body, tables)?;
        for p in report.write(out)? {
            log::info!("wrote {}", p.display());
        }
        log::info!("{kind} body sha256 {}", report.body_sha256);
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Sidecar written next to a generated log.
#[derive(Serialize, Deserialize)]
struct LogSidecar {
    manifest: RunManifest,
    generator: GeneratorMeta,
}

/// A trained model with the manifest of the run that produced it.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    manifest: RunManifest,
    model: ModelArtifact,
}

fn parse_task(opts: &ModelOpts) -> Result<Task> {
    let window = || -> Result<BinaryWindow> {
        let w = opts
            .window
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("--task binary needs --window".into()))?;
        BinaryWindow::parse(w).ok_or_else(|| Error::InvalidInput(format!("unknown window `{w}`")))
    };
    match opts.task.as_str() {
        "reg" => Ok(Task::Regression),
        "clf" => Ok(Task::Multiclass),
        "binary" => Ok(Task::Binary(window()?)),
        other => Err(Error::InvalidInput(format!(
            "unknown task `{other}` (reg, clf, binary)"
        ))),
    }
}

fn parse_max_features(s: &str) -> Result<MaxFeatures> {
    match s {
        "all" => Ok(MaxFeatures::All),
        "sqrt" => Ok(MaxFeatures::Sqrt),
        _ => s
            .parse::<f64>()
            .map(MaxFeatures::Fraction)
            .map_err(|_| Error::InvalidInput(format!("bad --max-features `{s}`"))),
    }
}

fn forest_params(opts: &ModelOpts, task: Task, seed: u64) -> Result<ForestParams> {
    let p = ForestParams {
        n_estimators: opts.estimators,
        max_depth: opts.depth,
        max_features: parse_max_features(&opts.max_features)?,
        min_samples_leaf: opts.min_samples_leaf,
        bootstrap: true,
        seed,
        task: task.kind(),
    };
    p.validate()?;
    if opts.folds < 2 {
        return Err(Error::Config(vec![format!("folds must be >= 2, got {}", opts.folds)]));
    }
    Ok(p)
}

fn load_log(input: &LogInput, ctx: &mut Ctx) -> Result<EventLog> {
    ctx.input(&input.log)?;
    let mut observation_end = input.observation_end;
    let meta = with_suffix(&input.log, ".meta.json");
    if observation_end.is_none() && meta.exists() {
        let sidecar: LogSidecar = serde_json::from_reader(File::open(&meta)?)?;
        ctx.input(&meta)?;
        observation_end = Some(sidecar.generator.observation_end);
    }
    let mut log = read_events(&input.log, &ParseOptions { observation_end })?;
    if let Some(path) = &input.blocked {
        ctx.input(path)?;
        let ids: HashSet<String> = std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        log.mark_blocked(&ids);
        if input.exclude_blocked {
            log = log.without_blocked();
        }
    }
    log::info!(
        "{} users, {} events, observation end {}",
        log.users.len(),
        log.event_count(),
        log.observation_end
    );
    Ok(log)
}

fn load_data(input: &MatrixInput, ctx: &mut Ctx) -> Result<(FeatureMatrix, u64)> {
    // a missing matrix is a user error, a missing sidecar an incompatible artifact
    ctx.input(&input.matrix)?;
    let (mut m, _) = load_matrix(&input.matrix)?;
    ctx.input(&with_suffix(&input.matrix, ".json"))?;
    if let Some(s) = &input.subset {
        m = m.select_subset(Subset::parse(s)?)?;
    }
    if let Some(c) = &input.community {
        if !m.communities.iter().any(|x| x == c) {
            return Err(Error::InvalidInput(format!("no rows in community `{c}`")));
        }
        m = m.community(c);
    }
    ctx.manifest.catalog_version = m.catalog_version.clone();
    let seed = ctx.seed(input.seed);
    Ok((m, seed))
}

fn summary_cell(s: &ScoreSummary) -> String {
    fmt_mean_std(s.mean, s.stddev)
}

pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    let mut ctx = Ctx::new(argv);
    match command {
        Command::Generate {
            preset,
            config,
            seed,
            signal,
            out,
        } => generate(&mut ctx, preset, config, seed, signal, &out),
        Command::Label { input, out } => {
            let log = load_log(&input, &mut ctx)?;
            let labels = label_users(&log, input.churn_days);
            log::info!("class counts {:?}", class_counts(&labels));
            write_labels_csv(&labels, BufWriter::new(File::create(&out)?))?;
            ctx.write_manifest(&out)
        }
        Command::Extract { input, subset, out } => {
            let subset = Subset::parse(&subset)?;
            let log = load_log(&input, &mut ctx)?;
            if log.users.is_empty() {
                log::warn!("empty log: writing a header-only matrix");
            }
            let m = extract(&log, &default_catalog(), input.churn_days).select_subset(subset)?;
            let sidecar = save_matrix(&m, subset, &out)?;
            log::info!(
                "{} rows x {} columns ({} time-dependent)",
                sidecar.rows,
                m.n_cols(),
                sidecar.time_dependent
            );
            ctx.write_manifest(&out)
        }
        Command::Train { data, model, out } => train(&mut ctx, &data, &model, &out),
        Command::Gridsearch { data, model, grid, out } => gridsearch(&mut ctx, &data, &model, grid.as_deref(), &out),
        Command::Evaluate {
            data,
            model,
            draws,
            out,
        } => evaluate(&mut ctx, &data, &model, draws, &out),
        Command::Subsets { data, model, out } => subsets(&mut ctx, &data, &model, &out),
        Command::Crossapply {
            data,
            model,
            models,
            out,
        } => crossapply(&mut ctx, &data, &model, &models, &out),
        Command::Importance {
            data,
            model,
            control,
            out,
        } => importance(&mut ctx, &data, &model, control, &out),
        Command::Bands { data, out } => bands(&mut ctx, &data, &out),
        Command::Binary { data, model, out } => binary(&mut ctx, &data, &model, &out),
    }
}

fn generate(
    ctx: &mut Ctx,
    preset: Option<String>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    signal: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = match (preset, config) {
        (Some(name), None) => {
            let mut c = synth::preset(&name).map_err(|e| Error::Config(vec![e.to_string()]))?;
            c.seed = ctx.seed(seed);
            c
        }
        (None, Some(path)) => {
            ctx.input(&path)?;
            let text = std::fs::read_to_string(&path)?;
            let mut c: GeneratorConfig =
                toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
            if let Some(s) = seed {
                c.seed = s;
            }
            ctx.manifest.master_seed = c.seed;
            c
        }
        _ => return Err(Error::InvalidInput("give exactly one of --preset or --config".into())),
    };
    if let Some(s) = signal {
        cfg.signal_strength = s;
    }
    let log = synth::generate(&cfg)?;
    let mut w = BufWriter::new(File::create(out)?);
    log.write_jsonl(&mut w)?;
    w.flush()?;
    let meta = synth::metadata(&cfg, &log);
    log::info!("{} users, {} events", meta.users, meta.events);
    write_json(
        &with_suffix(out, ".meta.json"),
        &LogSidecar {
            manifest: ctx.finish(),
            generator: meta,
        },
    )
}

fn train(ctx: &mut Ctx, data: &MatrixInput, opts: &ModelOpts, out: &Path) -> Result<()> {
    let (m, seed) = load_data(data, ctx)?;
    let task = parse_task(opts)?;
    let params = forest_params(opts, task, seed)?;
    let id = data.community.clone().unwrap_or_else(|| "pooled".into());
    let model = ModelArtifact::train(&m, task, &params, &id)?;
    log::info!("training-set {} {:.4}", task.metric(), model.score(&m)?);
    let file = ModelFile {
        manifest: ctx.finish(),
        model,
    };
    let mut w = BufWriter::new(File::create(out)?);
    serde_json::to_writer(&mut w, &file)?;
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path, ctx: &mut Ctx) -> Result<ModelArtifact> {
    ctx.input(path)?;
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::Incompatible(format!("{}: {e}", path.display())))?;
    Ok(file.model)
}

#[derive(Serialize)]
struct GridBody {
    task: Task,
    metric: &'static str,
    folds: usize,
    grid: GridSpec,
    entries: Vec<GridEntry>,
}

fn default_grid() -> GridSpec {
    GridSpec {
        n_estimators: vec![32, 64],
        max_depth: vec![8, 16, 32],
        max_features: vec![MaxFeatures::Sqrt],
        min_samples_leaf: vec![1],
        bootstrap: vec![true],
    }
}

fn gridsearch(ctx: &mut Ctx, data: &MatrixInput, opts: &ModelOpts, grid: Option<&Path>, out: &Path) -> Result<()> {
    let (m, seed) = load_data(data, ctx)?;
    let task = parse_task(opts)?;
    forest_params(opts, task, seed)?;
    let spec = match grid {
        Some(path) => {
            ctx.input(path)?;
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?
        }
        None => default_grid(),
    };
    let points = spec.expand(task, seed)?;
    let plan = kfold_split(m.n_rows(), opts.folds, seed)?;
    let entries = grid_search(&m, task, &points, &plan)?;
    let mut t = Table::new(
        "Grid search",
        &[
            "rank",
            "estimators",
            "max_depth",
            "max_features",
            "min_samples_leaf",
            "bootstrap",
            task.metric(),
        ],
    );
    for (i, e) in entries.iter().enumerate() {
        let p = &e.params;
        t.push(vec![
            (i + 1).to_string(),
            p.n_estimators.to_string(),
            p.max_depth.to_string(),
            format!("{:?}", p.max_features).to_lowercase(),
            p.min_samples_leaf.to_string(),
            p.bootstrap.to_string(),
            summary_cell(&e.summary),
        ]);
    }
    let body = GridBody {
        task,
        metric: task.metric(),
        folds: opts.folds,
        grid: spec,
        entries,
    };
    ctx.report("gridsearch", &body, vec![t], out)
}

#[derive(Serialize)]
struct EvalRow {
    community: String,
    users: usize,
    model: ScoreSummary,
    baseline: ScoreSummary,
    /// Pooled model scored on this community's held-out rows.
    pooled_on_community: Option<ScoreSummary>,
    /// Pooled set downsampled to this community's size, one CV mean per draw.
    downsampled: Vec<f64>,
    downsampled_mean: Option<f64>,
}

#[derive(Serialize)]
struct EvalBody {
    task: Task,
    metric: &'static str,
    folds: usize,
    params: ForestParams,
    draws: usize,
    rows: Vec<EvalRow>,
    skipped: Vec<String>,
}

fn evaluate(ctx: &mut Ctx, data: &MatrixInput, opts: &ModelOpts, draws: usize, out: &Path) -> Result<()> {
    let (m, seed) = load_data(data, ctx)?;
    let task = parse_task(opts)?;
    let params = forest_params(opts, task, seed)?;
    let learner = Learner::Forest(params.clone());
    let k = opts.folds;
    let pooled_plan = kfold_split(m.n_rows(), k, seed)?;
    let pooled_by = cross_validate_by_community(&m, task, &learner, &pooled_plan)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (ci, c) in m.community_ids().iter().enumerate() {
        let d = m.community(c);
        if d.n_rows() < k {
            log::warn!("{c}: {} users is fewer than {k} folds, skipped", d.n_rows());
            skipped.push(c.clone());
            continue;
        }
        let plan = kfold_split(d.n_rows(), k, seed)?;
        let mut downsampled = Vec::with_capacity(draws);
        for r in 0..draws {
            let ds = downsample(&m, d.n_rows(), seed::derive(seed, &[ci as u64, r as u64]))?;
            downsampled.push(cross_validate(&ds, task, &learner, &plan)?.mean);
        }
        rows.push(EvalRow {
            community: c.clone(),
            users: d.n_rows(),
            model: cross_validate(&d, task, &learner, &plan)?,
            baseline: cross_validate(&d, task, &Learner::Baseline, &plan)?,
            pooled_on_community: pooled_by.get(c).cloned(),
            downsampled_mean: (!downsampled.is_empty())
                .then(|| downsampled.iter().sum::<f64>() / downsampled.len() as f64),
            downsampled,
        });
    }
    rows.push(EvalRow {
        community: "pooled".into(),
        users: m.n_rows(),
        model: cross_validate(&m, task, &learner, &pooled_plan)?,
        baseline: cross_validate(&m, task, &Learner::Baseline, &pooled_plan)?,
        pooled_on_community: None,
        downsampled: Vec::new(),
        downsampled_mean: None,
    });
    let mut t = Table::new(
        &format!("Cross-validated {} per community", task.metric()),
        &[
            "community",
            "users",
            "random forest",
            "baseline",
            "pooled model",
            "pooled, downsampled",
        ],
    );
    for r in &rows {
        t.push(vec![
            r.community.clone(),
            r.users.to_string(),
            summary_cell(&r.model),
            fmt_score(r.baseline.mean),
            r.pooled_on_community.as_ref().map(summary_cell).unwrap_or_default(),
            r.downsampled_mean.map(fmt_score).unwrap_or_default(),
        ]);
    }
    let body = EvalBody {
        task,
        metric: task.metric(),
        folds: k,
        params,
        draws,
        rows,
        skipped,
    };
    ctx.report("evaluate", &body, vec![t], out)
}

#[derive(Serialize)]
struct SubsetsBody {
    task: Task,
    metric: &'static str,
    folds: usize,
    params: ForestParams,
    datasets: BTreeMap<String, Vec<SubsetScore>>,
}

fn datasets(m: &FeatureMatrix, single: bool) -> Vec<(String, FeatureMatrix)> {
    let mut out = vec![("pooled".to_string(), m.clone())];
    if !single {
        out.extend(m.community_ids().into_iter().map(|c| {
            let d = m.community(&c);
            (c, d)
        }));
    }
    out
}

fn subsets(ctx: &mut Ctx, data: &MatrixInput, opts: &ModelOpts, out: &Path) -> Result<()> {
    let (m, seed) = load_data(data, ctx)?;
    let task = parse_task(opts)?;
    let params = forest_params(opts, task, seed)?;
    let learner = Learner::Forest(params.clone());
    let available: Vec<Subset> = Subset::ALL
        .into_iter()
        .filter(|s| m.select_subset(*s).is_ok_and(|x| x.n_cols() > 0))
        .collect();
    let mut headers = vec!["dataset", "users"];
    headers.extend(available.iter().map(|s| s.id()));
    let mut t = Table::new(&format!("{} by feature subset", task.metric()), &headers);
    let mut all = BTreeMap::new();
    for (id, d) in datasets(&m, data.community.is_some()) {
        if d.n_rows() < opts.folds {
            log::warn!("{id}: too few users, skipped");
            continue;
        }
        let plan = kfold_split(d.n_rows(), opts.folds, seed)?;
        let scores = feature_subset_sweep(&d, task, &available, &learner, &plan)?;
        let mut row = vec![id.clone(), d.n_rows().to_string()];
        row.extend(scores.iter().map(|s| fmt_score(s.summary.mean)));
        t.push(row);
        all.insert(id, scores);
    }
    let body = SubsetsBody {
        task,
        metric: task.metric(),
        folds: opts.folds,
        params,
        datasets: all,
    };
    ctx.report("subsets", &body, vec![t], out)
}

#[derive(Serialize)]
struct CrossApplyBody {
    task: Task,
    folds: usize,
    matrix: CrossApplyMatrix,
    /// Pooled model scored on each community's held-out rows.
    pooled: BTreeMap<String, ScoreSummary>,
}

fn crossapply(ctx: &mut Ctx, data: &MatrixInput, opts: &ModelOpts, paths: &[PathBuf], out: &Path) -> Result<()> {
    let (m, seed) = load_data(data, ctx)?;
    let (task, models, ids) = if paths.is_empty() {
        let task = parse_task(opts)?;
        let params = forest_params(opts, task, seed)?;
        let ids = m.community_ids();
        let models = ids
            .iter()
            .map(|c| ModelArtifact::train(&m.community(c), task, &params, c))
            .collect::<Result<Vec<_>>>()?;
        (task, models, ids)
    } else {
        let models = paths.iter().map(|p| load_model(p, ctx)).collect::<Result<Vec<_>>>()?;
        let task = models[0].task;
        if models.iter().any(|x| x.task != task) {
            return Err(Error::InvalidInput("models were trained for different tasks".into()));
        }
        let ids: Vec<String> = models.iter().map(|x| x.forest.meta.dataset_id.clone()).collect();
        (task, models, ids)
    };
    let mut diagonal = Vec::new();
    let mut communities = Vec::new();
    for (model, id) in models.iter().zip(&ids) {
        let d = m.community(id);
        if d.n_rows() == 0 {
            return Err(Error::InvalidInput(format!("no rows in community `{id}`")));
        }
        model.check(&d)?;
        let plan = kfold_split(d.n_rows(), opts.folds, seed)?;
        diagonal.push(cross_validate(&d, task, &Learner::Forest(model.forest.params.clone()), &plan)?.mean);
        communities.push(d);
    }
    let matrix = cross_apply(&ids, &models, &communities, &diagonal)?;
    let pooled_params = ForestParams {
        seed,
        ..models[0].forest.params.clone()
    };
    let plan = kfold_split(m.n_rows(), opts.folds, seed)?;
    let pooled = cross_validate_by_community(&m, task, &Learner::Forest(pooled_params), &plan)?;

    let mut headers = vec!["model \\ data".to_string()];
    headers.extend(ids.iter().cloned());
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut t = Table::new(&format!("Cross-application {}", task.metric()), &header_refs);
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(matrix.scores[i].iter().map(|&s| fmt_score(s)));
        t.push(row);
    }
    let mut row = vec!["pooled (held-out)".to_string()];
    row.extend(
        ids.iter()
            .map(|id| pooled.get(id).map(|s| fmt_score(s.mean)).unwrap_or_default()),
    );
    t.push(row);
    let body = CrossApplyBody {
        task,
        folds: opts.folds,
        matrix,
        pooled,
    };
    ctx.report("crossapply", &body, vec![t], out)
}

#[derive(Serialize)]
struct ImportanceBody {
    task: Task,
    params: ForestParams,
    features: Vec<String>,
    models: Vec<String>,
    /// `importance[model][feature]`
    importance: Vec<Vec<f64>>,
    /// Spearman rho between models; `None` when a vector is constant.
    spearman: Vec<Vec<Option<f64>>>,
}

fn importance(ctx: &mut Ctx, data: &MatrixInput, opts: &ModelOpts, control: bool, out: &Path) -> Result<()> {
    let (m, seed) = load_data(data, ctx)?;
    let task = parse_task(opts)?;
    let params = forest_params(opts, task, seed)?;
    let mut names = Vec::new();
    let mut vectors = Vec::new();
    for (i, (id, d)) in datasets(&m, data.community.is_some()).into_iter().enumerate() {
        vectors.push(ModelArtifact::train(&d, task, &params, &id)?.forest.importance);
        if control && id != "pooled" {
            let shuffled = shuffle_labels(&d, seed::derive(seed, &[i as u64]));
            vectors.push(ModelArtifact::train(&shuffled, task, &params, &id)?.forest.importance);
            names.push(id.clone());
            names.push(format!("shuffled:{id}"));
        } else {
            names.push(id);
        }
    }
    let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    let spearman = importance_correlation(&refs)?;

    let mut headers = vec!["feature"];
    headers.extend(names.iter().map(String::as_str));
    let mut imp = Table::new("MDI importance", &headers);
    for (f, name) in m.columns.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(vectors.iter().map(|v| fmt_score(v[f])));
        imp.push(row);
    }
    headers[0] = "model";
    let mut corr = Table::new("Spearman rank correlation of importance", &headers);
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(
            spearman[i]
                .iter()
                .map(|r| r.map(fmt_score).unwrap_or_else(|| "n/a".into())),
        );
        corr.push(row);
    }
    let body = ImportanceBody {
        task,
        params,
        features: m.columns.clone(),
        models: names,
        importance: vectors,
        spearman,
    };
    ctx.report("importance", &body, vec![imp, corr], out)
}

fn bands(ctx: &mut Ctx, data: &MatrixInput, out: &Path) -> Result<()> {
    let (m, _) = load_data(data, ctx)?;
    let bands: Vec<QuantileBands> = all_quantile_bands(&m);
    let mut headers = vec![
        "feature".to_string(),
        "bucket".into(),
        "users".into(),
        "low_confidence".into(),
    ];
    headers.extend(DECILES.iter().map(|q| format!("p{}", (q * 100.0).round())));
    let refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut t = Table::new("Scaled feature deciles by lifetime bucket", &refs);
    for b in &bands {
        for bucket in &b.buckets {
            let mut row = vec![
                b.feature.clone(),
                bucket.bucket.clone(),
                bucket.users.to_string(),
                bucket.low_confidence.to_string(),
            ];
            row.extend((0..DECILES.len()).map(|i| bucket.quantiles.get(i).map(|&q| fmt_score(q)).unwrap_or_default()));
            t.push(row);
        }
    }
    ctx.report("bands", &bands, vec![t], out)
}

#[derive(Serialize)]
struct BinaryRow {
    window: BinaryWindow,
    subset: Subset,
    binary: ScoreSummary,
    multiclass: ScoreSummary,
}

#[derive(Serialize)]
struct BinaryBody {
    folds: usize,
    estimators: usize,
    max_depth: usize,
    seed: u64,
    rows: Vec<BinaryRow>,
}

fn binary(ctx: &mut Ctx, data: &MatrixInput, opts: &ModelOpts, out: &Path) -> Result<()> {
    let (m, seed) = load_data(data, ctx)?;
    let windows = match &opts.window {
        Some(w) => vec![BinaryWindow::parse(w).ok_or_else(|| Error::InvalidInput(format!("unknown window `{w}`")))?],
        None => BinaryWindow::ALL.to_vec(),
    };
    let plan = kfold_split(m.n_rows(), opts.folds, seed)?;
    let mut rows = Vec::new();
    for w in windows {
        let subset = Subset::for_binary_window(w);
        let d = m.select_subset(subset)?;
        let bin = Task::Binary(w);
        let bp = forest_params(opts, bin, seed)?;
        let mp = forest_params(opts, Task::Multiclass, seed)?;
        rows.push(BinaryRow {
            window: w,
            subset,
            binary: cross_validate(&d, bin, &Learner::Forest(bp), &plan)?,
            multiclass: cross_validate(&d, Task::Multiclass, &Learner::Forest(mp), &plan)?,
        });
    }
    let mut t = Table::new(
        "Binary versus multiclass macro-F1",
        &["window", "subset", "binary", "multiclass"],
    );
    for r in &rows {
        t.push(vec![
            r.window.id().to_string(),
            r.subset.id().to_string(),
            summary_cell(&r.binary),
            summary_cell(&r.multiclass),
        ]);
    }
    let body = BinaryBody {
        folds: opts.folds,
        estimators: opts.estimators,
        max_depth: opts.depth,
        seed,
        rows,
    };
    ctx.report("binary", &body, vec![t], out)
}
