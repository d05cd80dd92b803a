use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ferroscope::anomap::{self, MontageOrder, RenderOptions};
use ferroscope::imgrid::{self, format_tile_manifest, parse_tile_manifest, TileRecord};
use ferroscope::metrics::{confusion, Reduce, Stat};
use ferroscope::nets::{self, build_classifier, build_discriminator, build_generator};
use ferroscope::ocsvm::{self, OcsvmModel};
use ferroscope::synthdata::{self, CorpusConfig, DefectKind, MANIFEST_FILE};
use ferroscope::trainer::{self, CheckpointPaths};
use ferroscope::{io, ClassCatalog, FeatureVector, Network, RawImage, TilePolicy, UnitImage};
use serde::{Deserialize, Serialize};

use crate::config::{Overrides, PipelineConfig};
use crate::{CliError, Command, Order};

type Result<T> = std::result::Result<T, CliError>;

pub const TILE_MANIFEST: &str = "tiles.csv";
pub const GENERATOR_FILE: &str = "generator.fsck";
pub const DISCRIMINATOR_FILE: &str = "discriminator.fsck";

/// Required input paths and output paths of one invocation, checked before
/// any work starts.
struct Plan {
    inputs: Vec<(&'static str, PathBuf)>,
    outputs: Vec<(&'static str, PathBuf)>,
}

impl Plan {
    fn check(&self) -> Result<()> {
        for (name, p) in &self.inputs {
            if !p.exists() {
                return Err(CliError::Usage(format!("--{name} {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn describe(&self) -> String {
        let mut s = String::from("\n# resolved paths\n");
        for (name, p) in self.inputs.iter().chain(&self.outputs) {
            let abs = std::path::absolute(p).unwrap_or_else(|_| p.clone());
            let _ = writeln!(s, "# {name} = {}", abs.display());
        }
        s
    }
}

type Named<'a> = Vec<(&'static str, &'a PathBuf)>;

fn plan(cmd: &Command) -> Plan {
    let (inputs, outputs): (Named, Named) = match cmd {
        Command::Synth { out, .. } => (vec![], vec![("out", out)]),
        Command::Tile { input, out } => (vec![("input", input)], vec![("out", out)]),
        Command::TrainCls { corpus, out } | Command::TrainGan { corpus, out } => {
            (vec![("corpus", corpus)], vec![("out", out)])
        }
        Command::Features {
            discriminator,
            tiles,
            out,
            ..
        } => (vec![("discriminator", discriminator), ("tiles", tiles)], vec![("out", out)]),
        Command::FitSvm { features, out } => (vec![("features", features)], vec![("out", out)]),
        Command::Score {
            model, features, out, ..
        } => (vec![("model", model), ("features", features)], vec![("out", out)]),
        Command::Map {
            input,
            classifier,
            discriminator,
            model,
            out,
        } => (
            vec![
                ("input", input),
                ("classifier", classifier),
                ("discriminator", discriminator),
                ("model", model),
            ],
            vec![("out", out)],
        ),
        Command::Montage { scores, tiles, out, .. } => (vec![("scores", scores), ("tiles", tiles)], vec![("out", out)]),
        Command::Hist { scores, out } => (vec![("scores", scores)], vec![("out", out)]),
        Command::Eval { corpus, classifier, out } => {
            (vec![("corpus", corpus), ("classifier", classifier)], vec![("out", out)])
        }
    };
    let own = |v: Named| v.into_iter().map(|(n, p)| (n, p.clone())).collect();
    Plan {
        inputs: own(inputs),
        outputs: own(outputs),
    }
}

pub fn run(cmd: Command, overrides: &Overrides) -> Result<()> {
    let cfg = PipelineConfig::resolve(overrides)?;
    let plan = plan(&cmd);
    if overrides.dry_run {
        // a closed pipe (`| head`) is not an error here
        let text = format!("{}{}", cfg.to_toml(), plan.describe());
        let _ = std::io::Write::write_all(&mut std::io::stdout(), text.as_bytes());
        return Ok(());
    }
    plan.check()?;
    match cmd {
        Command::Synth {
            out,
            normal,
            per_defect,
            background,
            strips,
            strip_cols,
        } => synth(&cfg, &out, normal, per_defect, background, strips, strip_cols),
        Command::Tile { input, out } => tile(&cfg, &input, &out),
        Command::TrainCls { corpus, out } => train_cls(&cfg, &corpus, &out),
        Command::TrainGan { corpus, out } => train_gan(&cfg, &corpus, &out),
        Command::Features {
            discriminator,
            tiles,
            out,
            class,
        } => features(&cfg, &discriminator, &tiles, &out, class.as_deref()),
        Command::FitSvm { features, out } => fit_svm(&cfg, &features, &out),
        Command::Score {
            model,
            features,
            out,
            recalibrate,
        } => score(&model, &features, &out, recalibrate),
        Command::Map {
            input,
            classifier,
            discriminator,
            model,
            out,
        } => map(&cfg, &input, &classifier, &discriminator, &model, &out),
        Command::Montage {
            scores,
            tiles,
            out,
            k,
            order,
        } => montage(&cfg, &scores, &tiles, &out, k.unwrap_or(cfg.map.montage_k), order),
        Command::Hist { scores, out } => hist(&cfg, &scores, &out),
        Command::Eval { corpus, classifier, out } => eval(&cfg, &corpus, &classifier, &out),
    }
}

/// Distinct initialisation seeds per network, all derived from the run seed.
fn net_seed(seed: u64, which: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(which)
}

fn synth(
    cfg: &PipelineConfig,
    out: &Path,
    normal: Option<usize>,
    per_defect: Option<usize>,
    background: Option<usize>,
    strips: Option<usize>,
    strip_cols: Option<usize>,
) -> Result<()> {
    let mut counts = cfg.corpus.counts;
    if let Some(n) = normal {
        counts.normal = n;
    }
    if let Some(n) = per_defect {
        counts.rolled_in_scale = n;
        counts.scratch = n;
        counts.patch = n;
        counts.inclusion = n;
    }
    if let Some(n) = background {
        counts.background = n;
    }
    let corpus = CorpusConfig {
        tile_side: cfg.tiling.side,
        counts,
        seed: cfg.seed(),
        texture: cfg.corpus.texture.clone(),
        defects: cfg.corpus.defects.clone(),
    };
    let rows = synthdata::make_corpus(&corpus, out)?;
    println!("wrote {} tiles to {}", rows.len(), out.display());

    let n_strips = strips.unwrap_or(cfg.corpus.strips);
    let cols = strip_cols.unwrap_or(cfg.corpus.strip_cols).max(1);
    if n_strips > 0 {
        let dir = out.join("strips");
        let mut labels = String::from("strip,col,class\n");
        let names = ClassCatalog::steel_strip().names;
        for i in 0..n_strips {
            let mut defects = vec![((i * 3 + 1) % cols, DefectKind::ALL[i % 4])];
            let second = (i * 5 + 4) % cols;
            if second != defects[0].0 {
                defects.push((second, DefectKind::ALL[(i + 1) % 4]));
            }
            let (img, cls) = synthdata::gen_strip(&corpus, cols, &defects, i)?;
            let name = format!("strip_{i:05}");
            img.save_png(&dir.join(format!("{name}.png")))?;
            for (c, l) in cls.iter().enumerate() {
                let _ = writeln!(labels, "{name},{c},{}", names[*l]);
            }
        }
        io::write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;
        println!("wrote {n_strips} strips of {cols} tiles to {}", dir.display());
    }
    Ok(())
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no PNG images in {}", input.display())));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn tile_file_name(t: &UnitImage) -> String {
    format!("{}_r{:03}_c{:03}.png", t.source_id, t.row, t.col)
}

fn tile(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<()> {
    let mut records = Vec::new();
    for path in png_inputs(input)? {
        let img = RawImage::load_png(&path)?;
        let (grid, tiles) = imgrid::tile(&img, &stem(&path), cfg.tiling.side, cfg.tiling.policy)?;
        for t in &tiles {
            let name = tile_file_name(t);
            t.to_raw().save_png(&out.join(&name))?;
            records.push(TileRecord {
                source_id: t.source_id.clone(),
                row: t.row,
                col: t.col,
                relative_path: name,
            });
        }
        println!("{}: {}x{} grid", path.display(), grid.rows, grid.cols);
    }
    io::write_atomic(&out.join(TILE_MANIFEST), format_tile_manifest(&records).as_bytes())?;
    println!("wrote {} tiles to {}", records.len(), out.display());
    Ok(())
}

/// Tiles with stable ids and, for labelled corpora, class indices.
struct TileSet {
    tiles: Vec<UnitImage>,
    ids: Vec<String>,
    labels: Option<Vec<usize>>,
}

/// A labelled corpus (`manifest.csv`), a tile directory (`tiles.csv`) or a
/// bare directory of square PNGs.
fn load_tile_set(dir: &Path, catalog: &ClassCatalog) -> Result<TileSet> {
    if dir.join(MANIFEST_FILE).is_file() {
        let tiles = synthdata::load_corpus(dir, catalog)?;
        return Ok(TileSet {
            ids: tiles.iter().map(|t| t.tile.source_id.clone()).collect(),
            labels: Some(tiles.iter().map(|t| t.label).collect()),
            tiles: tiles.into_iter().map(|t| t.tile).collect(),
        });
    }
    let manifest = dir.join(TILE_MANIFEST);
    let records = if manifest.is_file() {
        parse_tile_manifest(&io::read_to_string(&manifest)?)?
    } else {
        png_inputs(dir)?
            .into_iter()
            .map(|p| TileRecord {
                source_id: stem(&p),
                row: 0,
                col: 0,
                relative_path: p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
            })
            .collect()
    };
    let mut set = TileSet {
        tiles: Vec::with_capacity(records.len()),
        ids: Vec::with_capacity(records.len()),
        labels: None,
    };
    for r in records {
        let path = dir.join(&r.relative_path);
        let mut t = UnitImage::from_raw(r.source_id.clone(), &RawImage::load_png(&path)?)?;
        t.row = r.row;
        t.col = r.col;
        set.ids.push(stem(Path::new(&r.relative_path)));
        set.tiles.push(t);
    }
    Ok(set)
}

fn train_cls(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<()> {
    let catalog = cfg.catalog()?;
    let tiles = synthdata::load_corpus(corpus, &catalog)?;
    let mut net = build_classifier(&cfg.tile_net_config()?, &catalog, net_seed(cfg.seed(), 1))?;
    let report = trainer::train_classifier(&mut net, &tiles, &cfg.train_cls, Some(out))?;
    net.save(out)?;
    report.save(&io::with_suffix(out, ".report.jsonl"))?;
    if let Some(rows) = &report.confusion {
        let cm = ferroscope::ConfusionMatrix::from_rows(rows)?;
        io::write_atomic(&io::with_suffix(out, ".confusion.csv"), cm.to_csv(&catalog.names).as_bytes())?;
        print!("{}", cm.to_table(&catalog.names));
    }
    println!(
        "classifier: {} train / {} test tiles, test accuracy {}",
        report.train_size,
        report.test_size,
        report.test_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn train_gan(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<()> {
    let catalog = cfg.catalog()?;
    let set = load_tile_set(corpus, &catalog)?;
    let normal = catalog.index_of("normal");
    let tiles: Vec<UnitImage> = match (&set.labels, normal) {
        (Some(labels), Some(n)) => set
            .tiles
            .into_iter()
            .zip(labels)
            .filter(|(_, &l)| l == n)
            .map(|(t, _)| t)
            .collect(),
        _ => set.tiles,
    };
    let nc = cfg.tile_net_config()?;
    let mut g = build_generator(&nc, net_seed(cfg.seed(), 2))?;
    let mut d = build_discriminator(&nc, net_seed(cfg.seed(), 3))?;
    let paths = CheckpointPaths {
        classifier: None,
        generator: Some(out.join(GENERATOR_FILE)),
        discriminator: Some(out.join(DISCRIMINATOR_FILE)),
    };
    let report = trainer::train_gan(&mut g, &mut d, &tiles, &cfg.train_gan, &paths)?;
    g.save(&out.join(GENERATOR_FILE))?;
    d.save(&out.join(DISCRIMINATOR_FILE))?;
    report.save(&out.join("gan.report.jsonl"))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    println!(
        "gan: {} normal tiles, {} epochs, final D {:.4} G {:.4}",
        tiles.len(),
        report.epochs.len(),
        report.epochs.last().and_then(|e| e.discriminator).unwrap_or(f64::NAN),
        report.epochs.last().map_or(f64::NAN, |e| e.loss)
    );
    Ok(())
}

fn ids_path(features: &Path) -> PathBuf {
    io::with_suffix(features, ".ids.csv")
}

#[derive(Debug, Serialize, Deserialize)]
struct IdRow {
    tile_id: String,
    label: String,
}

fn features(cfg: &PipelineConfig, disc: &Path, tiles: &Path, out: &Path, class: Option<&str>) -> Result<()> {
    let catalog = cfg.catalog()?;
    let d = Network::restore(disc)?;
    let mut set = load_tile_set(tiles, &catalog)?;
    if let Some(name) = class {
        let Some(labels) = &set.labels else {
            return Err(CliError::Usage(format!("--class needs a labelled corpus, {} has no manifest", tiles.display())));
        };
        let k = catalog.parse_subset(name).map_err(|e| CliError::Usage(e.to_string()))?;
        let keep: Vec<bool> = labels.iter().map(|l| k.contains(l)).collect();
        let labels = retain(labels.clone(), &keep);
        set.tiles = retain(set.tiles, &keep);
        set.ids = retain(set.ids, &keep);
        set.labels = Some(labels);
    }
    let feats = nets::extract_features(&d, &set.tiles)?;
    ocsvm::save_features(out, &feats)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, id) in set.ids.iter().enumerate() {
        let label = set.labels.as_ref().map_or(String::new(), |l| catalog.names[l[i]].clone());
        w.serialize(IdRow {
            tile_id: id.clone(),
            label,
        })
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    io::write_atomic(&ids_path(out), &bytes)?;
    println!("wrote {} features of dimension {} to {}", feats.len(), feats.first().map_or(0, |f| f.len()), out.display());
    Ok(())
}

fn retain<T>(v: Vec<T>, keep: &[bool]) -> Vec<T> {
    v.into_iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| x).collect()
}

fn read_ids(features: &Path, n: usize) -> Result<Vec<IdRow>> {
    let p = ids_path(features);
    if !p.is_file() {
        return Ok((0..n)
            .map(|i| IdRow {
                tile_id: i.to_string(),
                label: String::new(),
            })
            .collect());
    }
    let rows: Vec<IdRow> = csv::Reader::from_reader(io::read(&p)?.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    if rows.len() != n {
        return Err(CliError::Data(format!("{} lists {} ids for {n} features", p.display(), rows.len())));
    }
    Ok(rows)
}

fn fit_svm(cfg: &PipelineConfig, features: &Path, out: &Path) -> Result<()> {
    let feats = ocsvm::load_features(features)?;
    let mut model = ocsvm::fit(&feats, &cfg.svm)?;
    model.calibrate(&feats)?;
    model.save(out)?;
    println!(
        "ocsvm: {} training vectors, {} support vectors, rho {:.6}, {} iterations{}",
        model.n_train,
        model.support_vectors.len(),
        model.rho,
        model.iterations,
        if model.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    tile_id: String,
    raw_v: f64,
    eq1: f64,
    norm: f64,
}

fn score(model: &Path, features: &Path, out: &Path, recalibrate: bool) -> Result<()> {
    let mut m = OcsvmModel::load(model)?;
    let feats = ocsvm::load_features(features)?;
    let ids = read_ids(features, feats.len())?;
    if recalibrate {
        m.calibrate(&feats)?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (f, id) in feats.iter().zip(ids) {
        let s = m.score(f)?;
        w.serialize(ScoreRow {
            tile_id: id.tile_id,
            raw_v: s.raw_v,
            eq1: s.eq1_score,
            norm: s.norm_score,
        })
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    io::write_atomic(out, &bytes)?;
    println!("scored {} tiles into {}", feats.len(), out.display());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    csv::Reader::from_reader(io::read(path)?.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct AfRow {
    row: usize,
    col: usize,
    class: String,
    raw_v: f64,
    norm: f64,
    af: f64,
}

fn map(
    cfg: &PipelineConfig,
    input: &Path,
    classifier: &Path,
    disc: &Path,
    model: &Path,
    out: &Path,
) -> Result<()> {
    let catalog = cfg.catalog()?;
    cfg.tile_net_config()?;
    let cls = Network::restore(classifier)?;
    let d = Network::restore(disc)?;
    let m = OcsvmModel::load(model)?;
    let opts = RenderOptions {
        alpha: cfg.map.alpha,
        smooth: cfg.map.smooth,
    };
    let inputs = png_inputs(input)?;
    for path in &inputs {
        let id = stem(path);
        let img = RawImage::load_png(path)?;
        let (grid, tiles) = imgrid::tile(&img, &id, cfg.tiling.side, cfg.tiling.policy)?;
        let probs = nets::classify_batch(&cls, &tiles)?;
        let feats: Vec<FeatureVector> = nets::extract_features(&d, &tiles)?;
        let mut af = Vec::with_capacity(tiles.len());
        let mut rows = csv::Writer::from_writer(Vec::new());
        for ((t, p), f) in tiles.iter().zip(&probs).zip(&feats) {
            let s = m.score(f)?;
            let v = anomap::anomalous_feature(p, &s, &catalog)?;
            af.push(v);
            rows.serialize(AfRow {
                row: t.row,
                col: t.col,
                class: catalog.names[p.argmax()].clone(),
                raw_v: s.raw_v,
                norm: s.norm_score,
                af: v,
            })
            .map_err(|e| CliError::Data(e.to_string()))?;
        }
        let background = probs.iter().map(|p| catalog.background.contains(&p.argmax())).collect();
        let amap = anomap::build_map(&grid, &af, id.clone())?.with_background(background)?;
        let base = match cfg.tiling.policy {
            TilePolicy::ScaleUp => imgrid::scale_to_multiple(&img, cfg.tiling.side)?,
            TilePolicy::DropPartial => img.crop(0, 0, grid.effective_height, grid.effective_width)?,
        };
        let heat = anomap::render(
            &amap,
            &RenderOptions {
                alpha: 1.0,
                smooth: opts.smooth,
            },
            None,
        )?;
        heat.save_png(&out.join(format!("{id}_heatmap.png")))?;
        anomap::render(&amap, &opts, Some(&base))?.save_png(&out.join(format!("{id}_overlay.png")))?;
        let bytes = rows.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        io::write_atomic(&out.join(format!("{id}_af.csv")), &bytes)?;
        println!("{}: {}x{} map", path.display(), grid.rows, grid.cols);
    }
    anomap::colorbar(256, 16)?.save_png(&out.join("legend.png"))?;
    let mut legend = String::from("t,label\n");
    for (t, label) in anomap::legend_labels(5, anomap::DISPLAY_SCALE) {
        let _ = writeln!(legend, "{t},{label}");
    }
    io::write_atomic(&out.join("legend.csv"), legend.as_bytes())?;
    Ok(())
}

fn montage(cfg: &PipelineConfig, scores: &Path, tiles: &Path, out: &Path, k: usize, order: Order) -> Result<()> {
    let rows = read_scores(scores)?;
    let set = load_tile_set(tiles, &cfg.catalog()?)?;
    let by_id: HashMap<&str, &UnitImage> = set.ids.iter().map(String::as_str).zip(&set.tiles).collect();
    let picked: Vec<UnitImage> = rows
        .iter()
        .map(|r| {
            by_id
                .get(r.tile_id.as_str())
                .map(|t| (*t).clone())
                .ok_or_else(|| CliError::Data(format!("scored tile `{}` not found in {}", r.tile_id, tiles.display())))
        })
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = rows.iter().map(|r| r.norm).collect();
    let order = match order {
        Order::MostAnomalous => MontageOrder::MostAnomalous,
        Order::MostNormal => MontageOrder::MostNormal,
    };
    let img = anomap::montage(&picked, &norms, k, order, None)?;
    img.save_png(out)?;
    let mut listing = String::from("rank,tile_id,norm\n");
    for (rank, i) in anomap::rank(&picked, &norms, k, order)?.into_iter().enumerate() {
        let _ = writeln!(listing, "{rank},{},{}", rows[i].tile_id, rows[i].norm);
    }
    io::write_atomic(&out.with_extension("csv"), listing.as_bytes())?;
    let (r, c) = anomap::montage_shape(k);
    println!("montage of {k} tiles ({r}x{c}) written to {}", out.display());
    Ok(())
}

fn hist(cfg: &PipelineConfig, scores: &Path, out: &Path) -> Result<()> {
    let values: Vec<f64> = read_scores(scores)?.iter().map(|r| r.raw_v).collect();
    let h = anomap::histogram(&values, cfg.map.bin_width)?;
    h.render(4, 200)?.save_png(out)?;
    io::write_atomic(&out.with_extension("csv"), h.to_csv().as_bytes())?;
    println!(
        "{} values: {} anomalous-side, {} normal-side",
        h.total(),
        h.side_count(anomap::Side::Anomalous),
        h.side_count(anomap::Side::Normal)
    );
    Ok(())
}

fn eval(cfg: &PipelineConfig, corpus: &Path, classifier: &Path, out: &Path) -> Result<()> {
    let catalog = cfg.catalog()?;
    let net = Network::restore(classifier)?;
    let tiles = synthdata::load_corpus(corpus, &catalog)?;
    let images: Vec<UnitImage> = tiles.iter().map(|t| t.tile.clone()).collect();
    let truth: Vec<usize> = tiles.iter().map(|t| t.label).collect();
    let pred: Vec<usize> = nets::classify_batch(&net, &images)?.iter().map(|p| p.argmax()).collect();
    let cm = confusion(&truth, &pred, catalog.len())?;
    let table = cm.to_table(&catalog.names);
    io::write_atomic(&out.join("confusion.csv"), cm.to_csv(&catalog.names).as_bytes())?;
    io::write_atomic(&out.join("confusion.txt"), table.as_bytes())?;
    print!("{table}");
    let fmt = |r: ferroscope::Result<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    for (stat, sname) in [(Stat::Recall, "recall"), (Stat::Precision, "precision")] {
        for (reduce, rname) in [(Reduce::Min, "min"), (Reduce::Mean, "mean")] {
            println!(
                "anomalous classes {rname} {sname}: {}",
                fmt(cm.key_class_aggregate(&catalog.anomalous, stat, reduce))
            );
        }
    }
    Ok(())
}
