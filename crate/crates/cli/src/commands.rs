use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use ddcd::data::{
    save_image, save_mask, save_rgb, split_dataset, tile_pair, write_manifest, DirectoryDataset, ManifestRow,
    SplitName, SplitSpec, TileGrid, TileMode, TileSpec,
};
use ddcd::metrics::CSV_HEADER;
use ddcd::predict::predict_scene_files;
use ddcd::render::{freq_inspect, render_change_map, RenderPalette};
use ddcd::spectral::{select_frequencies, FrequencySource, DEFAULT_BASE_GRID};
use ddcd::train::{Checkpoint, RunConfig, Trainer};
use ddcd::{data, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ddcd", version, about = "Bi-temporal change detection")]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut A/B/label scenes into tiles and assign train/val/test splits.
    Tile(TileArgs),
    /// Train a model on a tiled dataset.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Predict a change mask for a whole scene pair.
    Predict(PredictArgs),
    /// Colour a prediction against ground truth.
    Render(RenderArgs),
    /// Show effective frequency indices and basis images.
    FreqInspect(FreqArgs),
}

#[derive(Debug, Args)]
struct TilingFlags {
    /// Tile edge in pixels.
    #[arg(long, default_value_t = 256)]
    tile_size: usize,
    /// Pad partial edge tiles (default).
    #[arg(long, conflicts_with = "strict")]
    pad: bool,
    /// Drop partial edge tiles.
    #[arg(long)]
    strict: bool,
}

impl TilingFlags {
    fn spec(&self) -> Result<TileSpec> {
        let mode = if self.strict { TileMode::Strict } else { TileMode::Pad };
        TileSpec::new(self.tile_size, mode)
    }
}

#[derive(Debug, Args)]
struct TileArgs {
    /// Dataset root holding A/, B/ and label/.
    #[arg(long)]
    data: PathBuf,
    /// Destination root for the tiled dataset.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tiling: TilingFlags,
    /// train,val,test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tiled dataset root.
    #[arg(long)]
    data: PathBuf,
    /// Directory for train_log.csv, last.ckpt and best.ckpt.
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint instead of starting fresh.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Frequency index file, one "u v" pair per line.
    #[arg(long)]
    freq_file: Option<PathBuf>,
    /// Frequency components per gate.
    #[arg(long)]
    n: Option<usize>,
    /// Overrides the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint file, bare name without `.ckpt`, or run directory (uses best.ckpt).
    #[arg(long)]
    ckpt: PathBuf,
    /// Tiled dataset root.
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Score csv destination.
    #[arg(long, default_value = "scores.csv")]
    out: PathBuf,
    /// Pairs per forward pass.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint file, bare name without `.ckpt`, or run directory (uses best.ckpt).
    #[arg(long)]
    ckpt: PathBuf,
    /// Earlier image.
    #[arg(long)]
    t1: PathBuf,
    /// Later image.
    #[arg(long)]
    t2: PathBuf,
    /// Output mask PNG (0/255).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tiling: TilingFlags,
    /// Tiles per forward pass.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Predicted mask.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth mask.
    #[arg(long)]
    gt: PathBuf,
    /// Output RGB PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FreqArgs {
    /// Frequency components in the default order.
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Frequency index file instead of the default order.
    #[arg(long)]
    freq_file: Option<PathBuf>,
    /// Feature map height the indices are rescaled to.
    #[arg(long, default_value_t = 8)]
    height: usize,
    /// Feature map width the indices are rescaled to.
    #[arg(long, default_value_t = 8)]
    width: usize,
    /// Directory for basis images.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` and runs the command: 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, S>(argv: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Tile(a) => tile(a, seed.unwrap_or(0)),
        Command::Train(a) => train(a, seed),
        other => {
            println!("seed: {}", seed.unwrap_or(0));
            match other {
                Command::Eval(a) => eval(a),
                Command::Predict(a) => predict(a),
                Command::Render(a) => render(a),
                Command::FreqInspect(a) => freq(a),
                Command::Tile(_) | Command::Train(_) => unreachable!("handled above"),
            }
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn tile(a: TileArgs, seed: u64) -> Result<()> {
    println!("seed: {seed}");
    let spec = a.tiling.spec()?;
    let split = SplitSpec {
        ratios: [a.ratios[0], a.ratios[1], a.ratios[2]],
        seed,
    };
    split.validate()?;
    let ds = DirectoryDataset::open(&a.data)?;
    for sub in ["A", "B", "label"] {
        create_dir(&a.out.join(sub))?;
    }
    let mut rows = Vec::new();
    for (i, name) in ds.names().iter().enumerate() {
        let sample = ds.load::<f32>(i, false)?;
        let grid = TileGrid::new(sample.height(), sample.width(), &spec)?;
        let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
        for (k, t) in tile_pair(&sample, &spec)?.iter().enumerate() {
            let (r, c) = grid.position(k);
            let file = format!("{stem}_r{r:04}_c{c:04}.png");
            save_image(&t.t1, &a.out.join("A").join(&file))?;
            save_image(&t.t2, &a.out.join("B").join(&file))?;
            save_mask(&t.mask, &a.out.join("label").join(&file))?;
            rows.push(ManifestRow {
                tile: file,
                source: name.clone(),
                tile_row: r,
                tile_col: c,
                split: SplitName::Train,
            });
        }
    }
    // file order in the tiled directory is sorted, so sort before splitting
    rows.sort_by(|x, y| x.tile.cmp(&y.tile));
    let parts = split_dataset(rows.len(), &split)?;
    for (row, s) in rows.iter_mut().zip(parts.assignment()) {
        row.split = s;
    }
    write_manifest(&a.out.join(data::MANIFEST_FILE), &rows)?;
    println!(
        "tiles: {} (train {}, val {}, test {})",
        rows.len(),
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );
    Ok(())
}

/// A run directory means its `best.ckpt`; a bare name such as `run/last` gets `.ckpt`.
fn resolve_ckpt(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("best.ckpt")
    } else if p.exists() || p.extension().is_some() {
        p.to_path_buf()
    } else {
        p.with_extension("ckpt")
    }
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut trainer = match &a.ckpt {
        Some(p) => Trainer::<f32>::resume(Checkpoint::load(&resolve_ckpt(p))?)?,
        None => {
            let mut run = match &a.config {
                Some(p) => RunConfig::from_file(p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(n) = a.n {
                run.model.freq_components = n;
            }
            if let Some(f) = &a.freq_file {
                run.model.freq_file = Some(f.clone());
            }
            run.validate()?;
            Trainer::new(run)?
        }
    };
    if let Some(e) = a.epochs {
        trainer.set_epochs(e)?;
    }
    println!("seed: {}", trainer.config().train.seed);
    let ds = DirectoryDataset::open(&a.data)?;
    let train = ds.load_split::<f32>(SplitName::Train, false)?;
    let val = if ds.has_manifest() {
        ds.load_split::<f32>(SplitName::Val, false)?
    } else {
        Vec::new()
    };
    println!("train samples: {}, val samples: {}", train.len(), val.len());
    create_dir(&a.out)?;
    let result = trainer.fit(&train, &val);
    write_file(&a.out.join("train_log.csv"), &trainer.history().epoch_csv())?;
    trainer.checkpoint().save(&a.out.join("last.ckpt"))?;
    if let Some(b) = trainer.best() {
        b.save(&a.out.join("best.ckpt"))?;
    }
    result?;
    println!("epochs completed: {}", trainer.epoch());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let split: SplitName = a.split.parse()?;
    let model = Checkpoint::<f32>::load(&resolve_ckpt(&a.ckpt))?.into_model()?;
    let ds = DirectoryDataset::open(&a.data)?;
    let samples = ds.load_split::<f32>(split, false)?;
    let ev = model.evaluate(&samples, a.batch_size)?;
    print!("{}", ev.scores);
    write_file(&a.out, &format!("{CSV_HEADER}\n{}\n", ev.scores.csv_row()))?;
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = Checkpoint::<f32>::load(&resolve_ckpt(&a.ckpt))?.into_model()?;
    let mask = predict_scene_files(&model, &a.t1, &a.t2, &a.tiling.spec()?, a.batch_size)?;
    save_mask(&mask, &a.out)?;
    println!("changed pixels: {} of {}", mask.count_ones(), mask.data().len());
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let pred = data::load_mask(&a.pred)?;
    let gt = data::load_mask(&a.gt)?;
    let img = render_change_map(&pred, &gt, &RenderPalette::default())?;
    save_rgb(&img, &a.out)
}

fn freq(a: FreqArgs) -> Result<()> {
    let source = match a.freq_file {
        Some(p) => FrequencySource::File(p),
        None => FrequencySource::DefaultOrder,
    };
    let idx = select_frequencies(a.n, &source, DEFAULT_BASE_GRID, DEFAULT_BASE_GRID)?;
    let report = freq_inspect(&idx, a.height, a.width);
    print!("{report}");
    if let Some(dir) = a.out {
        create_dir(&dir)?;
        for ((u, v), img) in report.basis_images()? {
            img.save(dir.join(format!("basis_u{u}_v{v}.png"))).map_err(|e| Error::Format {
                path: dir.clone(),
                reason: e.to_string(),
            })?;
        }
    }
    Ok(())
}
