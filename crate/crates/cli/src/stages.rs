use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use log::info;
use rayon::prelude::*;
use serde_json::json;

use rsift::classifier::{self, checkpoint, TrainConfig};
use rsift::density::{build_target_field, Contributions, DirectionBins, TargetDensityField};
use rsift::engine::{
    assign_labels, default_subset_sizes, probe_min_subset_size, run_rsift_with_progress, Label, LabelSet,
    ProbeParams, RsiftConfig, Scope, VoteLedger,
};
use rsift::filter::sift_filter;
use rsift::phantom::{
    build_fp_experiment, build_redundancy_experiment, fp_total_for, generate_ground_truth, read_label_sidecar,
    save_label_sidecar, LabeledTractogram, PhantomSpec, TruthLabel,
};
use rsift::report::{self, ArBinTable};
use rsift::trackio::{load_track_file, save_track_file};
use rsift::tractogram::{NormalizationRecord, Tractogram};

use crate::config::{ConfigError, ExperimentKind};
use crate::predictions;
use crate::{ClassSet, Command, Context, StageReport};

struct Stage {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Stage {
    fn new() -> Stage {
        Stage { inputs: Vec::new(), outputs: Vec::new(), timings: BTreeMap::new(), clock: Instant::now() }
    }

    fn lap(&mut self, name: &str) {
        let ms = self.clock.elapsed().as_secs_f64() * 1e3;
        self.timings.insert(name.to_string(), ms);
        self.clock = Instant::now();
    }

    fn input(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn finish(self) -> StageReport {
        StageReport { inputs: self.inputs, outputs: self.outputs, timings_ms: self.timings }
    }

    /// Create `path` through a buffered writer, register it as an output.
    fn write_file(&mut self, path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }
}

fn or_default(p: &Option<PathBuf>, ctx: &Context, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| ctx.out_dir.join(name))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

pub fn run(command: &Command, ctx: &Context) -> Result<StageReport> {
    match command {
        Command::Phantom(a) => phantom(a, ctx),
        Command::Target(a) => target(a, ctx),
        Command::Filter(a) => filter(a, ctx),
        Command::Rsift(a) => rsift(a, ctx),
        Command::Label(a) => label(a, ctx),
        Command::Train(a) => train(a, ctx),
        Command::Predict(a) => predict(a, ctx),
        Command::Report(a) => report_stage(a, ctx),
        Command::ProbeMinSubset(a) => probe(a, ctx),
        Command::Replay(_) => bail!("replay is handled before stage dispatch"),
    }
}

fn phantom(a: &crate::PhantomArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let seeds = ctx.config.seeds();
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(st.input(p)).with_context(|| format!("reading {}", p.display()))?;
            let spec: PhantomSpec = toml::from_str(&text)
                .map_err(|e| ConfigError::Parse { path: p.display().to_string(), message: e.to_string() })?;
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            spec
        }
        None => ctx.config.phantom.clone(),
    };
    spec.rng_seed = seeds.phantom;
    let gt = generate_ground_truth(&spec)?;
    st.lap("ground_truth");
    let m = gt.len();
    let kind = a.experiment.unwrap_or(ctx.config.experiment.kind);
    let labeled = match kind {
        ExperimentKind::None => LabeledTractogram {
            tractogram: gt.clone(),
            labels: vec![TruthLabel::TruePositive; m],
            provenance: (0..m).collect(),
            dropped: Vec::new(),
        },
        ExperimentKind::Fp => {
            let total = ctx.config.experiment.fp_total.unwrap_or_else(|| fp_total_for(m));
            build_fp_experiment(&gt, total, seeds.experiment)?
        }
        ExperimentKind::Redundancy => build_redundancy_experiment(&gt)?,
    };
    st.lap("experiment");
    let out = or_default(&a.out, ctx, "phantom.tck");
    let gt_path = sibling(&out, ".gt.tck");
    let labels_path = sibling(&out, ".labels.csv");
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    save_track_file(&gt, &gt_path)?;
    save_track_file(&labeled.tractogram, &out)?;
    save_label_sidecar(&labeled, &labels_path)?;
    st.outputs.extend([out.clone(), gt_path, labels_path]);
    st.lap("write");
    info!(
        "phantom: {m} ground-truth streamlines, {} in the {kind:?} experiment -> {}",
        labeled.len(),
        out.display()
    );
    Ok(st.finish())
}

fn target(a: &crate::TargetArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let input = or_default(&a.tractogram, ctx, "phantom.gt.tck");
    let reference = load_track_file(st.input(&input))?;
    let bins = DirectionBins::new(ctx.config.target.direction_bins)?;
    let field = build_target_field(&reference, &bins)?;
    st.lap("build");
    let out = or_default(&a.out, ctx, "target.field");
    st.write_file(&out, |w| Ok(field.write(w)?))?;
    info!("target: {} cells from {} streamlines -> {}", field.n_cells(), reference.len(), out.display());
    Ok(st.finish())
}

struct Problem {
    tractogram: Tractogram,
    target: TargetDensityField,
    contributions: Contributions,
}

fn load_problem(st: &mut Stage, ctx: &Context, tractogram: &Option<PathBuf>, target: &Option<PathBuf>) -> Result<Problem> {
    let t_path = or_default(tractogram, ctx, "phantom.tck");
    let f_path = or_default(target, ctx, "target.field");
    let tractogram = load_track_file(st.input(&t_path))?;
    let target = TargetDensityField::load(st.input(&f_path))?;
    if tractogram.grid() != target.grid {
        return Err(rsift::Error::ShapeMismatch(format!(
            "tractogram grid {:?} differs from target grid {:?}",
            tractogram.grid(),
            target.grid
        ))
        .into());
    }
    let contributions = Contributions::compute(&tractogram, &target.bins)?;
    st.lap("load");
    Ok(Problem { tractogram, target, contributions })
}

fn filter(a: &crate::FilterArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let p = load_problem(&mut st, ctx, &a.tractogram, &a.target)?;
    let all: Vec<usize> = (0..p.tractogram.len()).collect();
    let outcome = sift_filter(&all, &p.contributions, &p.target, &ctx.config.filter)?;
    st.lap("filter");
    let out = or_default(&a.out, ctx, "filter.csv");
    st.write_file(&out, |w| Ok(outcome.write_csv(w)?))?;
    info!(
        "filter: kept {} of {} ({:?}, final cost {:.6e})",
        outcome.accepted.len(),
        all.len(),
        outcome.termination,
        outcome.final_cost
    );
    Ok(st.finish())
}

fn probe_params(ctx: &Context) -> ProbeParams {
    ProbeParams {
        survivor_fraction: ctx.config.probe.survivor_fraction,
        seed: ctx.config.seeds().probe,
        filter: ctx.config.filter,
    }
}

fn probe(a: &crate::ProbeArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let p = load_problem(&mut st, ctx, &a.tractogram, &a.target)?;
    let result = probe_min_subset_size(&p.contributions, &p.target, &probe_params(ctx))?;
    st.lap("probe");
    let out = or_default(&a.out, ctx, "probe.csv");
    st.write_file(&out, |w| {
        writeln!(w, "n,retained,satisfies")?;
        let required = (ctx.config.probe.survivor_fraction * result.full_retained as f64).ceil() as usize;
        for &(n, r) in &result.evaluations {
            writeln!(w, "{n},{r},{}", r >= required)?;
        }
        Ok(())
    })?;
    info!(
        "probe: n_min = {} of {} (full run retains {})",
        result.n_min,
        p.tractogram.len(),
        result.full_retained
    );
    Ok(st.finish())
}

fn rsift(a: &crate::RsiftArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let p = load_problem(&mut st, ctx, &a.tractogram, &a.target)?;
    let m = p.tractogram.len();
    let section = &ctx.config.rsift;
    let subset_sizes = match &a.subset_sizes {
        Some(s) => s.clone(),
        None if !section.subset_sizes.is_empty() => section.subset_sizes.clone(),
        None => {
            let n_min = match section.n_min {
                Some(n) => n,
                None => {
                    let r = probe_min_subset_size(&p.contributions, &p.target, &probe_params(ctx))?;
                    info!("rsift: probed n_min = {}", r.n_min);
                    st.lap("probe");
                    r.n_min
                }
            };
            default_subset_sizes(m, n_min)
        }
    };
    let config = RsiftConfig {
        subset_sizes,
        tau: a.tau.unwrap_or(section.tau),
        master_seed: ctx.config.seeds().rsift,
        filter: ctx.config.filter,
        max_retries: section.max_retries,
    };
    info!("rsift: M = {m}, subset sizes {:?}, τ = {}", config.subset_sizes, config.tau);
    let ledger = run_rsift_with_progress(&p.contributions, &p.target, &config, |done, total| {
        if done * 10 / total != (done - 1) * 10 / total || done == total {
            info!("rsift: {done}/{total} runs");
        }
    })?;
    st.lap("rsift");

    let ledger_path = or_default(&a.ledger, ctx, "ledger.csv");
    st.write_file(&ledger_path, |w| Ok(ledger.write_csv(w)?))?;
    let runs_dir = ledger_path.parent().unwrap_or(Path::new(".")).join("runs");
    clear_run_files(&runs_dir)?;
    for run in &ledger.runs {
        st.write_file(&runs_dir.join(run.file_name()), |w| Ok(run.write_csv(w)?))?;
    }
    st.write_file(&runs_dir.join("index.csv"), |w| {
        writeln!(w, "subset_size,run_index,attempt,seed,file")?;
        for r in &ledger.runs {
            writeln!(w, "{},{},{},{},{}", r.subset_size, r.run_index, r.attempt, r.seed, r.file_name())?;
        }
        Ok(())
    })?;
    st.lap("write");
    Ok(st.finish())
}

/// Remove run files left by an earlier invocation; nothing else is touched.
fn clear_run_files(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name == "index.csv" || (name.starts_with("run_n") && name.ends_with(".csv")) {
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}

fn label(a: &crate::LabelArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let ledger_path = or_default(&a.ledger, ctx, "ledger.csv");
    let ledger = VoteLedger::read_csv(open(&st.input(&ledger_path))?)?;
    let labels = assign_labels(&ledger);
    let out = or_default(&a.out, ctx, "labels.csv");
    st.write_file(&out, |w| Ok(labels.write_csv(w)?))?;
    info!(
        "label: {} plausible, {} implausible, {} inconclusive, {} unvoted",
        labels.count(Label::Plausible),
        labels.count(Label::Implausible),
        labels.count(Label::Inconclusive),
        labels.count(Label::Unvoted)
    );
    Ok(st.finish())
}

fn class_names(classes: ClassSet) -> Vec<String> {
    let names: &[&str] = match classes {
        ClassSet::Binary => &["implausible", "plausible"],
        ClassSet::Multi => &["plausible", "implausible", "inconclusive"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

fn class_of(label: Label, classes: ClassSet) -> Option<usize> {
    match (classes, label) {
        (ClassSet::Binary, Label::Implausible) => Some(0),
        (ClassSet::Binary, Label::Plausible) => Some(1),
        (ClassSet::Multi, Label::Plausible) => Some(0),
        (ClassSet::Multi, Label::Implausible) => Some(1),
        (ClassSet::Multi, Label::Inconclusive) => Some(2),
        _ => None,
    }
}

fn features(tractogram: &Tractogram, ids: &[usize], n_points: usize) -> Result<Vec<Vec<f64>>> {
    let record = NormalizationRecord::from_streamlines(tractogram.streamlines())?;
    let s = tractogram.streamlines();
    Ok(ids
        .par_iter()
        .map(|&id| classifier::preprocess(&s[id], &record, n_points))
        .collect::<rsift::Result<_>>()?)
}

fn train(a: &crate::TrainArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let t_path = or_default(&a.tractogram, ctx, "phantom.tck");
    let l_path = or_default(&a.labels, ctx, "labels.csv");
    let tractogram = load_track_file(st.input(&t_path))?;
    let labels = LabelSet::read_csv(open(&st.input(&l_path))?)?;
    if labels.labels.len() != tractogram.len() {
        bail!(rsift::Error::ShapeMismatch(format!(
            "{} labels for {} streamlines",
            labels.labels.len(),
            tractogram.len()
        )));
    }
    let names = class_names(a.classes);
    let (ids, ys): (Vec<usize>, Vec<usize>) = labels
        .labels
        .iter()
        .enumerate()
        .filter_map(|(id, &l)| class_of(l, a.classes).map(|c| (id, c)))
        .unzip();
    let config: TrainConfig = ctx.config.train.clone();
    let xs = features(&tractogram, &ids, config.n_points)?;
    st.lap("features");
    for (c, name) in names.iter().enumerate() {
        info!("train: {} {name} samples", ys.iter().filter(|&&y| y == c).count());
    }
    let cv = classifier::train_cv(&xs, &ys, names.len(), &config)?;
    st.lap("train");
    let selected = cv.selected_classifier();
    info!("train: mean fold accuracy {:.4}, selected fold {}", cv.mean_accuracy(), cv.selected);

    let prefix = or_default(&a.out, ctx, "model");
    let bin = prefix.with_extension("bin");
    let meta_path = prefix.with_extension("json");
    let meta = checkpoint::CheckpointMeta {
        format_version: checkpoint::FORMAT_VERSION,
        architecture: selected.model.architecture(),
        class_names: names.clone(),
        config: config.clone(),
        seed: config.seed,
        fold_metrics: cv.folds.iter().map(|f| f.metrics.clone()).collect(),
        selected_fold: Some(cv.selected),
        epoch_losses: selected.epoch_losses.clone(),
    };
    if let Some(dir) = bin.parent() {
        fs::create_dir_all(dir)?;
    }
    checkpoint::save(selected, &meta, &bin, &meta_path)?;
    st.outputs.extend([bin, meta_path]);
    st.write_file(&sibling(&prefix, ".folds.csv"), |w| {
        write!(w, "fold,n,accuracy")?;
        for n in &names {
            write!(w, ",recall_{n}")?;
        }
        writeln!(w, ",balance_gap,selected")?;
        for (i, f) in cv.folds.iter().enumerate() {
            write!(w, "{i},{},{:.6}", f.metrics.n, f.metrics.accuracy)?;
            for r in &f.metrics.recalls {
                write!(w, ",{r:.6}")?;
            }
            writeln!(w, ",{:.6},{}", f.metrics.balance_gap(), i == cv.selected)?;
        }
        Ok(())
    })?;
    Ok(st.finish())
}

fn predict(a: &crate::PredictArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let t_path = or_default(&a.tractogram, ctx, "phantom.tck");
    let model_path = or_default(&a.model, ctx, "model.bin");
    let meta_path = model_path.with_extension("json");
    let tractogram = load_track_file(st.input(&t_path))?;
    st.input(&model_path);
    st.input(&meta_path);
    let (clf, meta) = checkpoint::load(&model_path, &meta_path)?;
    let ids: Vec<usize> = (0..tractogram.len()).collect();
    let xs = features(&tractogram, &ids, meta.config.n_points)?;
    let threshold = a.threshold.unwrap_or(ctx.config.predict.threshold);
    let preds = classifier::predict(&clf.model, &xs, threshold)?;
    st.lap("predict");
    let out = or_default(&a.out, ctx, "predictions.csv");
    st.write_file(&out, |w| predictions::write(w, &ids, &preds, &meta.class_names))?;
    if a.embeddings {
        st.write_file(&sibling(&out, ".embeddings.csv"), |w| predictions::write_embeddings(w, &ids, &preds))?;
    }
    let mut counts = vec![0usize; meta.class_names.len()];
    for p in &preds {
        counts[p.label] += 1;
    }
    info!("predict: {} streamlines, per class {:?}", preds.len(), counts);
    Ok(st.finish())
}

fn truth_group(label: TruthLabel) -> String {
    match label {
        TruthLabel::Redundant(k) => format!("R{k}"),
        other => other.to_string(),
    }
}

fn write_table(st: &mut Stage, path: &Path, table: &ArBinTable) -> Result<()> {
    st.write_file(path, |w| Ok(table.write_csv(w)?))
}

fn report_stage(a: &crate::ReportArgs, ctx: &Context) -> Result<StageReport> {
    let mut st = Stage::new();
    let rc = &ctx.config.report;
    let t_path = or_default(&a.tractogram, ctx, "phantom.tck");
    let l_path = or_default(&a.ledger, ctx, "ledger.csv");
    let tractogram = load_track_file(st.input(&t_path))?;
    let ledger = VoteLedger::read_csv(open(&st.input(&l_path))?)?;
    let m = tractogram.len();
    if ledger.n_streamlines() > m {
        bail!(rsift::Error::ShapeMismatch(format!("ledger covers {} ids, tractogram has {m}", ledger.n_streamlines())));
    }
    let labels = match &a.labels {
        Some(p) => LabelSet::read_csv(open(&st.input(p))?)?,
        None => assign_labels(&ledger),
    };
    if labels.labels.len() != m {
        bail!(rsift::Error::ShapeMismatch(format!("{} labels for {m} streamlines", labels.labels.len())));
    }
    let out = or_default(&a.out, ctx, "report");
    fs::create_dir_all(&out)?;
    let mut summary = serde_json::Map::new();
    summary.insert("seeds".into(), serde_json::to_value(ctx.config.seeds())?);
    summary.insert("n_streamlines".into(), json!(m));
    summary.insert("subset_sizes".into(), json!(ledger.subset_sizes()));
    summary.insert(
        "label_counts".into(),
        json!({
            "plausible": labels.count(Label::Plausible),
            "implausible": labels.count(Label::Implausible),
            "inconclusive": labels.count(Label::Inconclusive),
            "unvoted": labels.count(Label::Unvoted),
        }),
    );

    let by_size = report::ar_distribution(&ledger, None)?;
    write_table(&mut st, &out.join("ar_by_subset_size.csv"), &by_size)?;
    summary.insert("ar_by_subset_size".into(), table_json(&by_size));

    for (name, scope) in ledger
        .subset_sizes()
        .iter()
        .map(|&n| (format!("n{n}"), Scope::SubsetSize(n)))
        .chain(std::iter::once(("overall".to_string(), Scope::Overall)))
    {
        let t = report::vote_combination_table(&ledger, None, scope, rc.exact_votes)?;
        st.write_file(&out.join(format!("vote_combinations_{name}.csv")), |w| Ok(t.write_csv(w)?))?;
    }

    let lengths = tractogram.lengths();
    let by_label: Vec<Option<String>> = labels
        .labels
        .iter()
        .map(|l| (*l != Label::Unvoted).then(|| l.as_str().to_string()))
        .collect();
    let hist = report::length_histograms(&lengths, &by_label, rc.bin_width_mm)?;
    st.write_file(&out.join("length_by_label.csv"), |w| Ok(hist.write_csv(w)?))?;
    if let (Some(p), Some(n)) = (hist.group_index("plausible"), hist.group_index("implausible")) {
        summary.insert("label_length_crossover_mm".into(), json!(hist.crossover(p, n)));
    }

    if let Some(truth_path) = &a.truth {
        let (truth, _) = read_label_sidecar(open(&st.input(truth_path))?)?;
        if truth.len() != m {
            bail!(rsift::Error::ShapeMismatch(format!("{} truth labels for {m} streamlines", truth.len())));
        }
        let groups: Vec<(String, Vec<usize>)> =
            report::group_ids(&truth).into_iter().map(|(k, ids)| (truth_group(k), ids)).collect();
        let overall = report::ar_distribution_by_group(&ledger, &groups, Scope::Overall)?;
        write_table(&mut st, &out.join("ar_by_truth.csv"), &overall)?;
        summary.insert("ar_by_truth".into(), table_json(&overall));
        for (name, ids) in &groups {
            let t = report::ar_distribution(&ledger, Some(ids))?;
            write_table(&mut st, &out.join(format!("ar_by_subset_size_{name}.csv")), &t)?;
        }
        let (scores, positive): (Vec<f64>, Vec<bool>) = labels
            .ar
            .iter()
            .zip(&truth)
            .filter_map(|(ar, t)| ar.map(|a| (a, t.is_plausible())))
            .unzip();
        summary.insert("ar_auc_truth".into(), json!(report::auc(&scores, &positive)));
        let mean_ar = |g: &[usize]| {
            let v: Vec<f64> = g.iter().filter_map(|&i| labels.ar[i]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let means: BTreeMap<String, Option<f64>> = groups.iter().map(|(n, ids)| (n.clone(), mean_ar(ids))).collect();
        summary.insert("mean_ar_by_truth".into(), json!(means));
    }

    if let Some(pred_path) = &a.predictions {
        let table = predictions::read(open(&st.input(pred_path))?)?;
        if table.ids.len() != m || table.ids.iter().enumerate().any(|(i, &id)| i != id) {
            bail!(rsift::Error::ShapeMismatch("predictions must list every streamline id in order".into()));
        }
        let pred_groups: Vec<Option<String>> = table.labels.iter().cloned().map(Some).collect();
        let hist = report::length_histograms(&lengths, &pred_groups, rc.bin_width_mm)?;
        st.write_file(&out.join("length_by_prediction.csv"), |w| Ok(hist.write_csv(w)?))?;
        if let (Some(p), Some(n)) = (hist.group_index("plausible"), hist.group_index("implausible")) {
            summary.insert("prediction_length_crossover_mm".into(), json!(hist.crossover(p, n)));
        }

        let names: Vec<String> = if table.score_columns.len() == 1 {
            vec!["implausible".into(), "plausible".into()]
        } else {
            table.score_columns.iter().map(|c| c.trim_start_matches("score_").to_string()).collect()
        };
        let index = |s: &str| names.iter().position(|n| n == s);
        let mut truth_idx = Vec::new();
        let mut pred_idx = Vec::new();
        for (id, l) in labels.labels.iter().enumerate() {
            if let (Some(t), Some(p)) = (index(l.as_str()), index(&table.labels[id])) {
                truth_idx.push(t);
                pred_idx.push(p);
            }
        }
        if !truth_idx.is_empty() {
            let cr = report::classification_report(&truth_idx, &pred_idx, &names)?;
            st.write_file(&out.join("confusion.csv"), |w| Ok(cr.write_csv(w)?))?;
            summary.insert("classification".into(), serde_json::to_value(&cr)?);
        }

        if table.score_columns.len() == 1 {
            let rows: Vec<(usize, f64, f64)> = (0..m)
                .filter(|&i| labels.labels[i] == Label::Inconclusive)
                .filter_map(|i| labels.ar[i].map(|ar| (i, table.scores[i][0], ar)))
                .collect();
            st.write_file(&out.join("score_vs_ar.csv"), |w| {
                writeln!(w, "id,score,AR")?;
                for (i, s, ar) in &rows {
                    writeln!(w, "{i},{s},{ar}")?;
                }
                Ok(())
            })?;
            let s: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let ar: Vec<f64> = rows.iter().map(|r| r.2).collect();
            summary.insert("score_ar_correlation_inconclusive".into(), json!(report::pearson(&s, &ar)));
        }
    }

    if a.summary {
        let path = out.join("summary.json");
        st.write_file(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, &serde_json::Value::Object(summary))?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    st.lap("report");
    info!("report: {} files in {}", st.outputs.len(), out.display());
    Ok(st.finish())
}

fn table_json(t: &ArBinTable) -> serde_json::Value {
    let mut cols = serde_json::Map::new();
    for (c, name) in t.columns.iter().enumerate() {
        let bins: serde_json::Map<String, serde_json::Value> = rsift::report::ArBin::ALL
            .iter()
            .map(|&b| (b.name().to_string(), json!(t.fraction(c, b))))
            .collect();
        cols.insert(name.clone(), serde_json::Value::Object(bins));
    }
    serde_json::Value::Object(cols)
}
