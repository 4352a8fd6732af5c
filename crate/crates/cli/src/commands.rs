use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cloudwalker::analysis::{self, ComplexityStats};
use cloudwalker::config::RunConfig;
use cloudwalker::dataset::{self, PreparedShape};
use cloudwalker::inference::{self, Aggregation, GalleryItem, ShapePrediction};
use cloudwalker::neural::Checkpoint;
use cloudwalker::point_set::{self, LabeledDataset, ShapeKind};
use cloudwalker::rng::{self, Domain};
use cloudwalker::{gradcheck, trainer, walker, Error, Result};

/// Synthetic shape seeds: each root seed owns a block of this many, split
/// between the train, test and noisy sets.
const SEED_BLOCK: u64 = 10_000_000;
const SPLIT_STRIDE: u64 = 1_000_000;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn synth(
    cfg: &RunConfig,
    train_per_class: usize,
    test_per_class: usize,
    points: usize,
    noisy_fraction: f64,
    noise_sigma: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&noisy_fraction) {
        return Err(Error::ConfigValue(format!("noisy fraction {noisy_fraction} outside [0, 1]")));
    }
    let base = cfg
        .seed
        .checked_mul(SEED_BLOCK)
        .ok_or_else(|| Error::ConfigValue(format!("seed {} too large for synthetic data", cfg.seed)))?;
    let kinds = ShapeKind::ALL.len();
    for (split, per_class, offset) in [("train", train_per_class, 0), ("test", test_per_class, 1)] {
        let mut shapes = dataset::synth_set(per_class, points, base + offset * SPLIT_STRIDE)?;
        let noisy = (noisy_fraction * (per_class * kinds) as f64).round() as usize;
        shapes.extend(dataset::synth_noisy_set(noisy, points, base + (offset + 2) * SPLIT_STRIDE, noise_sigma)?);
        let dir = cfg.out_dir.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in &shapes {
            point_set::write_xyz(dir.join(format!("{}.xyz", s.id())), &s.cloud)?;
        }
        write_with(&cfg.out_dir.join(format!("{split}.csv")), |out| {
            writeln!(out, "path,label")?;
            for s in &shapes {
                writeln!(out, "{split}/{}.xyz,{}", s.id(), ShapeKind::ALL[s.label].name())?;
            }
            Ok(())
        })?;
        println!("{split}: {} shapes ({noisy} noisy)", shapes.len());
    }
    Ok(())
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    path.as_ref()
        .ok_or_else(|| Error::ConfigValue(format!("missing dataset path: set {key}")))
}

fn load_train(cfg: &RunConfig) -> Result<(LabeledDataset, Vec<PreparedShape>)> {
    let data = point_set::load_manifest(require(&cfg.train_manifest, "train_manifest")?)?;
    let shapes = dataset::prepare(&data)?;
    Ok((data, shapes))
}

/// Test shapes, labelled with the training manifest's class order when one is
/// configured.
fn load_test(cfg: &RunConfig) -> Result<Vec<PreparedShape>> {
    let mut data = point_set::load_manifest(require(&cfg.test_manifest, "test_manifest")?)?;
    if let Some(train) = &cfg.train_manifest {
        let names = point_set::load_manifest(train)?.class_names;
        data = data.with_class_names(&names)?;
    }
    dataset::prepare(&data)
}

pub fn walks(cfg: &RunConfig, manifest: Option<&Path>) -> Result<()> {
    cfg.validate(false)?;
    let path = match manifest {
        Some(p) => p.to_path_buf(),
        None => require(&cfg.train_manifest, "train_manifest")?.clone(),
    };
    let shapes = dataset::prepare(&point_set::load_manifest(&path)?)?;
    let mut all = Vec::new();
    for (i, s) in shapes.iter().enumerate() {
        let seed = rng::derive_seed(cfg.seed, Domain::EvalShape, i as u64);
        let wp = cfg.walk.params_for(s.cloud.len(), seed);
        all.extend(walker::generate_walks(&s.cloud, &s.tree, &wp, cfg.walk.walks)?);
    }
    let out = cfg.out_dir.join("walks.txt");
    write_with(&out, |w| walker::write_walks(w, &all))?;
    println!("{} walks over {} shapes -> {}", all.len(), shapes.len(), out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate(true)?;
    let (data, shapes) = load_train(cfg)?;
    let model = cfg.model_for(data.num_classes())?;
    let save = |iter: usize, params: &cloudwalker::neural::ModelParams| {
        let ckpt = Checkpoint { params: params.clone(), k: cfg.walk.k, length: cfg.walk.length, walks: cfg.walk.walks };
        let path = cfg.out_dir.join(format!("ckpt_{iter}.cw"));
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        ckpt.save(&path)
    };
    let outcome = trainer::train(&shapes, &model, &cfg.walk, &cfg.train, save)?;
    let total = cfg.train.total_iters;
    let every = cfg.train.checkpoint_every;
    if every == 0 || !total.is_multiple_of(every) {
        save(total, &outcome.params)?;
    }
    write_with(&cfg.out_dir.join("train_log.csv"), |w| trainer::write_log(w, &outcome.log))?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {total} iterations on {} shapes: loss {:.4}, running accuracy {:.3} -> {}",
            shapes.len(),
            last.loss,
            last.acc,
            cfg.out_dir.join(format!("ckpt_{total}.cw")).display()
        );
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, path: &Path, shapes: &[PreparedShape]) -> Result<Checkpoint> {
    cfg.validate(false)?;
    let ckpt = Checkpoint::load(path)?;
    let classes = ckpt.params.config.classes;
    if let Some(s) = shapes.iter().find(|s| s.label >= classes) {
        return Err(Error::ClassOutOfRange { index: s.label, classes });
    }
    Ok(ckpt)
}

fn predict(cfg: &RunConfig, ckpt: &Checkpoint, shapes: &[PreparedShape]) -> Result<Vec<ShapePrediction>> {
    inference::classify_all(&ckpt.params, shapes, &cfg.walk, cfg.seed, cfg.aggregation)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let shapes = load_test(cfg)?;
    let ckpt = load_model(cfg, checkpoint, &shapes)?;
    let preds = predict(cfg, &ckpt, &shapes)?;
    let labels: Vec<usize> = shapes.iter().map(|s| s.label).collect();
    let classes: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let ia = analysis::instance_accuracy(&classes, &labels)?;
    println!("instance accuracy ({}): {ia:.4}", cfg.aggregation.name());
    match analysis::class_accuracy(&classes, &labels, ckpt.params.config.classes) {
        Ok(ca) => println!("class accuracy: {ca:.4}"),
        Err(e) => println!("class accuracy: n/a ({e})"),
    }
    for method in Aggregation::ALL {
        let alt: Vec<usize> = preds.iter().map(|p| p.aggregate(method)).collect();
        println!("  {:<8} {:.4}", method.name(), analysis::instance_accuracy(&alt, &labels)?);
    }
    write_with(&cfg.out_dir.join("predictions.csv"), |w| inference::write_predictions(w, &preds))
}

pub fn retrieve(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let shapes = load_test(cfg)?;
    let ckpt = load_model(cfg, checkpoint, &shapes)?;
    let preds = predict(cfg, &ckpt, &shapes)?;
    let items: Vec<GalleryItem> = preds
        .iter()
        .zip(&shapes)
        .map(|(p, s)| GalleryItem { id: p.cloud_id.clone(), descriptor: p.descriptor.clone(), label: s.label })
        .collect();
    let report = analysis::retrieval_map(&items)?;
    println!("retrieval mAP: {:.4}", report.map);
    write_with(&cfg.out_dir.join("rankings.csv"), |w| analysis::write_rankings(w, &report))
}

fn stats(preds: &[ShapePrediction], shapes: &[PreparedShape]) -> Result<Vec<ComplexityStats>> {
    preds.iter().zip(shapes).map(|(p, s)| ComplexityStats::from_prediction(p, s.label)).collect()
}

pub fn complexity(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let (_, train_shapes) = load_train(cfg)?;
    let test_shapes = load_test(cfg)?;
    let ckpt = load_model(cfg, checkpoint, &train_shapes)?;
    load_model(cfg, checkpoint, &test_shapes)?;
    let train_stats = stats(&predict(cfg, &ckpt, &train_shapes)?, &train_shapes)?;
    let line = analysis::fit_indicator_line(&train_stats)?;
    let test_stats = stats(&predict(cfg, &ckpt, &test_shapes)?, &test_shapes)?;
    let (complex, simple) = analysis::error_rates_by_indicator(&test_stats, &line);
    let show = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!("indicator line: var_cw > {} * ce_mean + {}", line.a, line.b);
    println!("test error rate: f=1 {}, f=0 {}", show(complex), show(simple));
    write_with(&cfg.out_dir.join("complexity.csv"), |w| analysis::write_complexity(w, &test_stats, &line))
}

pub fn gradcheck(cfg: &RunConfig, cases: usize, tolerance: f64) -> Result<()> {
    let results = gradcheck::run_suite(cfg.seed, cases)?;
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let checked: usize = results.iter().map(|r| r.checked).sum();
    println!("{cases} models, {checked} parameters, max relative error {worst:.3e}");
    // negated so a NaN error fails the check
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(worst < tolerance) {
        return Err(Error::Numeric(format!("gradient check failed: {worst:.3e} >= {tolerance:e}")));
    }
    Ok(())
}
