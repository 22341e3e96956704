//! One function per subcommand; each is a thin wrapper over the library.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use licp::bench::{bench_run, list_images};
use licp::codec::{
    init_weights, BitstreamHeader, ChannelConfig, Codec, Container, ModelWeights, QuantMode,
    Raster, WEIGHTS_MAGIC,
};
use licp::metrics::bpp;
use licp::nas::{
    lut_latency, measure_latency_table, search as run_search, space_latency_keys, Constraints,
    LatencyKey, LatencyTable, SearchOptions, SearchOutcome, SearchSpace, Strategy, SubConfig,
};
use licp::quant::{convert_to_int8_with, CalibPolicy};
use serde::Deserialize;

use crate::error::{io_err, CliError};

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(io_err(path))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// `origin`, `nas`, or a JSON channel config file.
pub fn resolve_config(name: &str) -> Result<ChannelConfig, CliError> {
    let cfg = match ChannelConfig::by_name(name) {
        Some(c) => c,
        None if Path::new(name).is_file() => read_json(Path::new(name))?,
        None => {
            return Err(CliError::Usage(format!(
                "config must be origin, nas or a JSON file, got {name:?}"
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<ModelWeights, CliError> {
    Ok(ModelWeights::from_bytes(&read(path)?)?)
}

pub fn init(config: &str, seed: u64, out: &Path) -> Result<(), CliError> {
    let model = init_weights(&resolve_config(config)?, seed)?;
    write(out, model.to_bytes())?;
    println!("model_id {:016x}", model.model_id());
    Ok(())
}

pub fn encode(
    input: &Path,
    model: &Path,
    out: &Path,
    mode: QuantMode,
    workers: usize,
) -> Result<(), CliError> {
    let codec = Codec::new(load_model(model)?)?
        .with_mode(mode)?
        .with_threads(workers)?;
    let raster = Raster::load(input)?;
    let bytes = codec.encode_raster(&raster)?;
    write(out, &bytes)?;
    println!(
        "{} bytes, {:.4} bpp",
        bytes.len(),
        bpp(bytes.len(), raster.width, raster.height)?
    );
    Ok(())
}

pub fn decode(input: &Path, model: &Path, out: &Path, workers: usize) -> Result<(), CliError> {
    let codec = Codec::new(load_model(model)?)?.with_threads(workers)?;
    let raster = codec.decode_raster(&read(input)?)?;
    raster.save(out)?;
    println!("{}x{}", raster.width, raster.height);
    Ok(())
}

pub struct BenchJob<'a> {
    pub images: &'a Path,
    pub model: &'a Path,
    pub workers: usize,
    pub warmup: usize,
    pub mode: QuantMode,
    pub json: Option<&'a Path>,
    pub csv: Option<&'a Path>,
}

pub fn bench(job: &BenchJob<'_>) -> Result<(), CliError> {
    let codec = Codec::new(load_model(job.model)?)?.with_mode(job.mode)?;
    let report = bench_run(&codec, job.images, job.workers, job.warmup)?;
    if let Some(p) = job.json {
        write(p, report.to_json()?)?;
    }
    if let Some(p) = job.csv {
        write(p, report.to_csv())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

pub enum Shapes {
    Config(String, (usize, usize)),
    File(PathBuf),
    Space(PathBuf, (usize, usize), usize),
}

/// Padded input size of an image as the codec sees it.
fn padded((h, w): (usize, usize)) -> (usize, usize) {
    let m = licp::codec::PAD_MULTIPLE;
    (h.div_ceil(m) * m, w.div_ceil(m) * m)
}

fn shape_keys(source: &Shapes) -> Result<Vec<LatencyKey>, CliError> {
    Ok(match source {
        Shapes::Config(name, hw) => {
            let space = SearchSpace::fixed(&resolve_config(name)?);
            space_latency_keys(&space, padded(*hw), 2)?
        }
        Shapes::Space(path, hw, points) => {
            space_latency_keys(&read_json(path)?, padded(*hw), *points)?
        }
        Shapes::File(path) => {
            let text = String::from_utf8_lossy(&read(path)?).into_owned();
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
                .map(|(i, l)| {
                    l.parse::<LatencyKey>()
                        .map_err(|m| CliError::Usage(format!("{}:{}: {m}", path.display(), i + 1)))
                })
                .collect::<Result<_, _>>()?
        }
    })
}

pub fn measure_lut(
    source: &Shapes,
    repetitions: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let keys = shape_keys(source)?;
    let table = measure_latency_table(&keys, repetitions, seed)?;
    write(out, table.to_text())?;
    println!("{} entries on {}", table.len(), table.device);
    Ok(())
}

pub enum Score {
    Flops,
    Latency,
    Capacity,
    File(PathBuf),
}

#[derive(Deserialize)]
struct ScoreEntry {
    config: Vec<usize>,
    score: f64,
}

pub struct SearchJob<'a> {
    pub space: Option<&'a Path>,
    pub lut: Option<&'a Path>,
    pub max_flops: Option<u64>,
    pub max_latency_ms: Option<f64>,
    pub input_hw: (usize, usize),
    pub objective: Score,
    pub budget: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub out: Option<&'a Path>,
}

pub fn search(job: &SearchJob<'_>) -> Result<(), CliError> {
    let space: SearchSpace = match job.space {
        Some(p) => read_json(p)?,
        None => SearchSpace::default_codec(),
    };
    let table = job.lut.map(LatencyTable::load).transpose()?;
    if matches!(job.objective, Score::Latency) && table.is_none() {
        return Err(CliError::Usage("--objective latency needs --lut".into()));
    }
    let hw = padded(job.input_hw);
    let constraints = Constraints {
        max_flops: job.max_flops,
        max_latency_ms: job.max_latency_ms,
        table: table.as_ref(),
        input_hw: hw,
    };
    let scores: HashMap<SubConfig, f64> = match &job.objective {
        Score::File(p) => read_json::<Vec<ScoreEntry>>(p)?
            .into_iter()
            .map(|e| (SubConfig(e.config), e.score))
            .collect(),
        _ => HashMap::new(),
    };
    let scorer = |cfg: &SubConfig| -> f64 {
        match &job.objective {
            Score::Flops => licp::nas::flops(&space, cfg, hw).map_or(f64::INFINITY, |f| f as f64),
            Score::Latency => {
                let t = table.as_ref().expect("checked above");
                lut_latency(&space, cfg, t, hw).unwrap_or(f64::INFINITY)
            }
            Score::Capacity => space
                .widths(cfg)
                .map_or(f64::INFINITY, |w| -(w.iter().sum::<usize>() as f64)),
            Score::File(_) => scores.get(cfg).copied().unwrap_or(f64::INFINITY),
        }
    };
    let options = SearchOptions {
        budget: job.budget,
        seed: job.seed,
        strategy: job.strategy,
    };
    let outcome = run_search(&space, &constraints, &scorer, &options)?;
    if let Some(p) = job.out {
        let json = serde_json::to_string_pretty(&outcome).map_err(|source| CliError::Json {
            path: p.display().to_string(),
            source,
        })?;
        write(p, json)?;
    }
    match &outcome {
        SearchOutcome::Found {
            best,
            pareto,
            report,
        } => {
            println!(
                "best {:?} flops {} latency_ms {} score {}",
                best.config.0,
                best.flops,
                best.latency_ms.map_or("-".into(), |l| format!("{l:.4}")),
                best.score.unwrap_or(f64::NAN)
            );
            if let Ok(cc) = space.to_channel_config(&best.config) {
                println!(
                    "channels ga {:?} ha {:?} hs {:?} gs {:?}",
                    cc.ga, cc.ha, cc.hs, cc.gs
                );
            }
            println!("scored {} pareto {}", report.scored, pareto.len());
            Ok(())
        }
        SearchOutcome::Infeasible { report } => Err(CliError::Infeasible(report.candidates.len())),
    }
}

pub fn calibrate(
    model: &Path,
    images: Option<&Path>,
    mode: QuantMode,
    policy: CalibPolicy,
    out: &Path,
) -> Result<(), CliError> {
    let mut weights = load_model(model)?;
    let converted = match mode {
        QuantMode::FullInt => {
            let dir = images
                .ok_or_else(|| CliError::Usage("full-int calibration needs --images".into()))?;
            let tensors = list_images(dir)?
                .iter()
                .map(|p| Ok(Raster::load(p)?.to_tensor()))
                .collect::<Result<Vec<_>, CliError>>()?;
            convert_to_int8_with(&weights, &tensors, policy)?
        }
        QuantMode::Float | QuantMode::HsInt => {
            for l in &mut weights.layers {
                l.quant = None;
            }
            weights.derive_hs_quant()?;
            weights
        }
    };
    write(out, converted.to_bytes())?;
    println!(
        "model_id {:016x} full_int {}",
        converted.model_id(),
        converted.is_full_int()
    );
    Ok(())
}

pub fn info(input: &Path) -> Result<(), CliError> {
    let bytes = read(input)?;
    if bytes.starts_with(WEIGHTS_MAGIC) {
        let m = ModelWeights::from_bytes(&bytes)?;
        let c = &m.config;
        println!("weights");
        println!("model_id {:016x}", m.model_id());
        println!("ga {:?} ha {:?} hs {:?} gs {:?}", c.ga, c.ha, c.hs, c.gs);
        println!("full_int {}", m.is_full_int());
        println!("s_mu {} s_sigma {}", m.s_mu, m.s_sigma);
        return Ok(());
    }
    let c = Container::parse(&bytes)?;
    let h: BitstreamHeader = c.header;
    println!("bitstream");
    println!("width {}", h.width);
    println!("height {}", h.height);
    println!("bytes {}", bytes.len());
    println!(
        "bpp {:.6}",
        bpp(bytes.len(), h.width as usize, h.height as usize)?
    );
    println!("model_id {:016x}", h.model_id);
    println!(
        "mode {}",
        if h.flags & licp::codec::FLAG_FULL_INT != 0 {
            "full-int"
        } else {
            "hs-int"
        }
    );
    println!(
        "z_stream {} y_stream {} bypass {}",
        h.z_stream_len, h.y_stream_len, h.bypass_len
    );
    Ok(())
}
