//! The four subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use signedcf::checkpoint::{load_checkpoint, read_header, save_checkpoint, save_embeddings};
use signedcf::dataset::PreparedDataset;
use signedcf::eval::{format_table, write_csv};
use signedcf::graph::parse_ratings;
use signedcf::recommend::write_dump;
use signedcf::trainer::{fit_fold, FoldFit};
use signedcf::{
    aggregate_folds, evaluate, recommend, recommend_all, EvalReport, Filter, Precision, Propagator,
    RecommendationList, Scalar, TrainConfig,
};

use crate::manifest::{
    sha256_dir, sha256_file, FileDigest, FoldArtifacts, PrepareManifest, RunManifest,
    PREPARE_MANIFEST_FILE,
};

pub fn prepare(input: &Path, out: &Path, config: &TrainConfig) -> Result<()> {
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let parsed = parse_ratings(BufReader::new(file), config.delimiter)?;
    if parsed.malformed > 0 {
        log::warn!("skipped {} malformed lines", parsed.malformed);
    }
    if parsed.duplicates > 0 {
        log::warn!(
            "{} duplicate (user, item) lines; the last rating of each was kept",
            parsed.duplicates
        );
    }
    let ds = PreparedDataset::prepare(&parsed.records, config)?;
    let written = ds.write(out)?;
    let files = written
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p
                    .file_name()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| p.clone()),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = PrepareManifest {
        version: crate::manifest::version_string(),
        input: input.to_path_buf(),
        input_sha256: sha256_file(input)?,
        seed: config.seed,
        config: config.clone(),
        malformed_lines: parsed.malformed,
        duplicate_lines: parsed.duplicates,
        files,
    };
    fs::write(
        out.join(PREPARE_MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    print!("{}", ds.stats().to_text());
    Ok(())
}

fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold_{fold}"))
}

fn train_fold<T: Scalar>(
    ds: &PreparedDataset,
    fold: usize,
    config: &TrainConfig,
    run: &Path,
) -> Result<FoldArtifacts> {
    let split = ds.split(fold)?;
    let fit: FoldFit<T> = fit_fold(&split, config)?;
    let rel = PathBuf::from(format!("fold_{fold}"));
    let dir = fold_dir(run, fold);
    fs::create_dir_all(&dir)?;

    let mut log = BufWriter::new(fs::File::create(dir.join("train.log"))?);
    for e in &fit.log {
        writeln!(log, "{}", e.line())?;
    }
    log.flush()?;
    save_checkpoint(&dir.join("best.ckpt"), &fit.best, config.layers)?;
    save_embeddings(
        &dir.join("embeddings.bin"),
        &fit.best.e0_user.value,
        &fit.best.e0_item.value,
        config.layers,
    )?;
    if let Some(epoch) = fit.best_epoch {
        log::info!(
            "fold {fold}: best Recall@10 {:.5} after epoch {epoch}",
            fit.best_recall
        );
    }
    Ok(FoldArtifacts {
        fold,
        checkpoint: rel.join("best.ckpt"),
        embeddings: rel.join("embeddings.bin"),
        log: rel.join("train.log"),
        best_epoch: fit.best_epoch,
        best_recall_at_10: fit.best_recall.is_finite().then_some(fit.best_recall),
        secs_per_epoch: fit.secs_per_epoch(),
    })
}

pub fn train(
    dataset: &Path,
    run: &Path,
    config: &TrainConfig,
    folds: Option<&[usize]>,
    threads: Option<usize>,
) -> Result<()> {
    let ds = PreparedDataset::load(dataset, config.delta)?;
    let all: Vec<usize> = (0..ds.folds.len().min(config.num_folds)).collect();
    let selected = folds.map(<[usize]>::to_vec).unwrap_or(all);
    for &f in &selected {
        if f >= ds.folds.len() {
            bail!(signedcf::Error::config(format!(
                "fold {f} not in dataset ({} folds)",
                ds.folds.len()
            )));
        }
    }
    fs::create_dir_all(run)?;
    fs::write(run.join("config.txt"), config.to_text())?;
    let mut manifest = RunManifest {
        version: crate::manifest::version_string(),
        seed: config.seed,
        config: config.clone(),
        dataset_dir: fs::canonicalize(dataset).unwrap_or_else(|_| dataset.to_path_buf()),
        dataset_sha256: sha256_dir(dataset, &[PREPARE_MANIFEST_FILE])?,
        threads,
        folds: Vec::new(),
    };
    for f in selected {
        log::info!("training fold {f}");
        let art = match config.precision {
            Precision::Single => train_fold::<f32>(&ds, f, config, run)?,
            Precision::Double => train_fold::<f64>(&ds, f, config, run)?,
        };
        manifest.folds.push(art);
        manifest.write(run)?;
    }
    manifest.write(run)
}

struct LoadedRun {
    dir: PathBuf,
    manifest: RunManifest,
    dataset: PreparedDataset,
}

impl LoadedRun {
    fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::read(dir)?;
        if manifest.folds.is_empty() {
            bail!(signedcf::Error::format(
                dir.display().to_string(),
                "run has no trained folds"
            ));
        }
        let dataset = PreparedDataset::load(&manifest.dataset_dir, manifest.config.delta)?;
        let digest = sha256_dir(&manifest.dataset_dir, &[PREPARE_MANIFEST_FILE])?;
        if digest != manifest.dataset_sha256 {
            log::warn!(
                "dataset at {} changed since training",
                manifest.dataset_dir.display()
            );
        }
        Ok(LoadedRun {
            dir: dir.to_path_buf(),
            manifest,
            dataset,
        })
    }

    fn fold(&self, fold: usize) -> Result<&FoldArtifacts> {
        self.manifest
            .folds
            .iter()
            .find(|f| f.fold == fold)
            .with_context(|| format!("fold {fold} was not trained in {}", self.dir.display()))
    }
}

fn final_embeddings<T: Scalar>(
    run: &LoadedRun,
    art: &FoldArtifacts,
    split: &signedcf::DatasetSplit,
) -> Result<signedcf::FinalEmbeddings<T>> {
    let path = RunManifest::resolve(&run.dir, &art.checkpoint);
    let (header, params) = load_checkpoint::<T>(&path)?;
    if params.num_users() != split.train.num_users()
        || params.num_items() != split.train.num_items()
    {
        bail!(signedcf::Error::format(
            path.display().to_string(),
            "checkpoint does not match the dataset"
        ));
    }
    let prop = Propagator::new(&split.train);
    Ok(params.forward(&prop, header.layers)?.finals)
}

fn evaluate_fold<T: Scalar>(
    run: &LoadedRun,
    art: &FoldArtifacts,
    ks: &[usize],
    filter: bool,
) -> Result<EvalReport> {
    let split = run.dataset.split(art.fold)?;
    let emb = final_embeddings::<T>(run, art, &split)?;
    let mode = if filter {
        run.manifest.config.filter()
    } else {
        Filter::Off
    };
    let mut r = evaluate(&emb, &split, ks, mode)?;
    r.secs_per_epoch = art.secs_per_epoch;
    Ok(r)
}

fn scalar_bytes(run: &LoadedRun, art: &FoldArtifacts) -> Result<u64> {
    let path = RunManifest::resolve(&run.dir, &art.checkpoint);
    Ok(read_header(&path)?.scalar_bytes)
}

fn evaluate_run(run: &LoadedRun, ks: &[usize], filter: bool) -> Result<EvalReport> {
    let mut reports = Vec::new();
    for art in &run.manifest.folds {
        let r = match scalar_bytes(run, art)? {
            4 => evaluate_fold::<f32>(run, art, ks, filter)?,
            _ => evaluate_fold::<f64>(run, art, ks, filter)?,
        };
        reports.push(r);
    }
    Ok(aggregate_folds(&reports)?)
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// `(name, run dir)` pairs; the main run comes first.
pub fn evaluate_cmd(
    run: &Path,
    variants: &[(String, PathBuf)],
    ks: Option<&[usize]>,
    out: Option<&Path>,
) -> Result<()> {
    let main = LoadedRun::open(run)?;
    let ks = ks
        .map(<[usize]>::to_vec)
        .unwrap_or_else(|| main.manifest.config.eval_ks.clone());
    if ks.is_empty() || ks.contains(&0) {
        bail!(signedcf::Error::config("cutoffs must be positive"));
    }
    let mut methods: Vec<(String, EvalReport)> = Vec::new();
    let main_filter = main.manifest.config.enable_filter;
    methods.push(("full".into(), evaluate_run(&main, &ks, main_filter)?));
    if main_filter {
        methods.push(("w/o filter".into(), evaluate_run(&main, &ks, false)?));
    }
    for (name, dir) in variants {
        let v = LoadedRun::open(dir)?;
        let filter = v.manifest.config.enable_filter;
        methods.push((name.clone(), evaluate_run(&v, &ks, filter)?));
    }
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.to_path_buf());
    fs::create_dir_all(&out)?;
    let table = format_table(&methods);
    fs::write(out.join("report.txt"), &table)?;
    let mut json = BTreeMap::new();
    for (name, report) in &methods {
        let f = fs::File::create(out.join(format!("report_{}.csv", slug(name))))?;
        write_csv(report, BufWriter::new(f))?;
        json.insert(name.clone(), report.clone());
    }
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&json)? + "\n",
    )?;
    print!("{table}");
    Ok(())
}

pub struct RecommendArgs<'a> {
    pub run: &'a Path,
    pub fold: usize,
    pub k: usize,
    pub users: Option<Vec<String>>,
    pub no_filter: bool,
    pub out: Option<&'a Path>,
    pub rejects: Option<&'a Path>,
}

fn recommend_lists<T: Scalar>(
    run: &LoadedRun,
    args: &RecommendArgs,
    users: Option<&[usize]>,
) -> Result<Vec<RecommendationList>> {
    let art = run.fold(args.fold)?;
    let split = run.dataset.split(args.fold)?;
    let emb = final_embeddings::<T>(run, art, &split)?;
    let filter = if args.no_filter {
        None
    } else {
        run.manifest.config.filter().size(args.k)
    };
    Ok(match users {
        None => recommend_all(&split.train, &emb, args.k, filter),
        Some(us) => us
            .iter()
            .map(|&u| recommend(u, &split.train, &emb, args.k, filter))
            .collect(),
    })
}

pub fn read_user_list(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_owned());
        }
    }
    Ok(out)
}

pub fn recommend_cmd(args: RecommendArgs) -> Result<()> {
    if args.k == 0 {
        bail!(signedcf::Error::config("k must be positive"));
    }
    let run = LoadedRun::open(args.run)?;
    let mut rejects = Vec::new();
    let users = args.users.as_ref().map(|tokens| {
        tokens
            .iter()
            .filter_map(|t| {
                let idx = run.dataset.users.get(t);
                if idx.is_none() {
                    rejects.push(t.clone());
                }
                idx
            })
            .collect::<Vec<_>>()
    });
    let art = run.fold(args.fold)?;
    let lists = match scalar_bytes(&run, art)? {
        4 => recommend_lists::<f32>(&run, &args, users.as_deref())?,
        _ => recommend_lists::<f64>(&run, &args, users.as_deref())?,
    };
    match args.out {
        Some(p) => write_dump(&lists, BufWriter::new(fs::File::create(p)?))?,
        None => write_dump(&lists, std::io::stdout().lock())?,
    }
    if !rejects.is_empty() {
        let path = args
            .rejects
            .map(Path::to_path_buf)
            .or_else(|| args.out.map(|p| p.with_extension("rejects")))
            .unwrap_or_else(|| PathBuf::from("recommend.rejects"));
        fs::write(&path, rejects.join("\n") + "\n")?;
        log::warn!(
            "{} unknown users listed in {}",
            rejects.len(),
            path.display()
        );
    }
    Ok(())
}
