//! Latency, throughput and memory benchmark over a directory of images.
//!
//! Timed encode covers file read, raster conversion and encoding; timed
//! decode covers decoding and conversion back to a raster. Model loading is
//! not timed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{raster_format, Codec, CodecError, Raster};
use crate::metrics::{bpp, ms_ssim, psnr, MetricsError};

/// RSS sampling period (20 Hz).
pub const RSS_SAMPLE_PERIOD: Duration = Duration::from_millis(50);
pub const CSV_HEADER: &str = "phase,image,bytes,ms,psnr,ms_ssim,bpp";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no png or bmp images in {0}")]
    NoImages(PathBuf),
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("payload of {0} differs between runs")]
    Nondeterministic(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    /// Single-stream latency of each image, in directory order.
    pub samples_ms: Vec<f64>,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    /// Images per second with one worker.
    pub fps_single: f64,
    /// Images per second with `workers` workers.
    pub fps_parallel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub bytes: usize,
    /// Hex SHA-256 of the compressed payload.
    pub sha256: String,
    pub encode_ms: f64,
    pub decode_ms: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub bpp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub images: usize,
    pub workers: usize,
    pub warmup: usize,
    pub encode: PhaseStats,
    pub decode: PhaseStats,
    /// None where the platform does not expose resident memory.
    pub peak_rss_bytes: Option<u64>,
    pub records: Vec<ImageRecord>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn phase_stats(samples: Vec<f64>, fps_parallel: f64) -> PhaseStats {
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = samples.iter().sum();
    PhaseStats {
        p50_ms: percentile(&sorted, 50.0),
        p99_ms: percentile(&sorted, 99.0),
        mean_ms: total / samples.len() as f64,
        fps_single: samples.len() as f64 * 1000.0 / total,
        fps_parallel,
        samples_ms: samples,
    }
}

/// Image files of `dir` accepted by the codec, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && raster_format(p).is_some())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(BenchError::NoImages(dir.to_path_buf()));
    }
    Ok(files)
}

fn read_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

struct RssSampler {
    stop: Arc<AtomicBool>,
    handle: thread::JoinHandle<Option<u64>>,
}

impl RssSampler {
    fn start() -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let mut peak = read_rss();
            while !flag.load(Ordering::Relaxed) {
                thread::sleep(RSS_SAMPLE_PERIOD);
                peak = peak.max(read_rss());
            }
            peak.max(read_rss())
        });
        Self { stop, handle }
    }

    fn finish(self) -> Option<u64> {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().ok().flatten()
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn encode_file(codec: &Codec, path: &Path) -> Result<(Raster, Vec<u8>), BenchError> {
    let raster = Raster::load(path)?;
    let bytes = codec.encode_raster(&raster)?;
    Ok((raster, bytes))
}

/// Run every job on `workers` threads, each with its own single-threaded
/// codec, and return the wall time.
fn parallel<T: Send>(
    codec: &Codec,
    workers: usize,
    jobs: usize,
    f: impl Fn(&Codec, usize) -> Result<T, BenchError> + Sync,
) -> Result<(Duration, Vec<T>), BenchError> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    let first_err: Mutex<Option<BenchError>> = Mutex::new(None);
    let local = codec.clone().with_threads(1)?;
    let start = Instant::now();
    thread::scope(|s| {
        for _ in 0..workers {
            let local = local.clone();
            s.spawn(|| {
                let local = local;
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs {
                        break;
                    }
                    match f(&local, i) {
                        Ok(v) => out.lock().unwrap()[i] = Some(v),
                        Err(e) => {
                            first_err.lock().unwrap().get_or_insert(e);
                            next.store(jobs, Ordering::Relaxed);
                        }
                    }
                }
            });
        }
    });
    let wall = start.elapsed();
    if let Some(e) = first_err.into_inner().unwrap() {
        return Err(e);
    }
    let values = out
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|v| v.expect("every job ran"))
        .collect();
    Ok((wall, values))
}

/// Benchmark `codec` on every image in `dir`: `warmup` untimed round trips
/// of the first image, a timed single-stream pass, then a throughput pass
/// with `workers` threads whose payloads must match the first pass.
pub fn bench_run(
    codec: &Codec,
    dir: &Path,
    workers: usize,
    warmup: usize,
) -> Result<BenchReport, BenchError> {
    if workers == 0 {
        return Err(BenchError::NoWorkers);
    }
    let files = list_images(dir)?;
    let sampler = RssSampler::start();
    let result = run_phases(codec, &files, workers, warmup);
    let peak = sampler.finish();
    let (encode, decode, records) = result?;
    Ok(BenchReport {
        label: format!("{} {}", config_label(codec), codec.mode().as_str()),
        images: files.len(),
        workers,
        warmup,
        encode,
        decode,
        peak_rss_bytes: peak,
        records,
    })
}

fn config_label(codec: &Codec) -> String {
    let c = &codec.model().config;
    if *c == crate::codec::ChannelConfig::ORIGIN {
        "origin".into()
    } else if *c == crate::codec::ChannelConfig::NAS {
        "nas".into()
    } else {
        "custom".into()
    }
}

type Phases = (PhaseStats, PhaseStats, Vec<ImageRecord>);

fn run_phases(
    codec: &Codec,
    files: &[PathBuf],
    workers: usize,
    warmup: usize,
) -> Result<Phases, BenchError> {
    for _ in 0..warmup {
        let (_, bytes) = encode_file(codec, &files[0])?;
        codec.decode_raster(&bytes)?;
    }

    let mut records = Vec::with_capacity(files.len());
    let mut payloads = Vec::with_capacity(files.len());
    let (mut enc_ms, mut dec_ms) = (Vec::new(), Vec::new());
    for path in files {
        let t = Instant::now();
        let (raster, bytes) = encode_file(codec, path)?;
        let e = ms(t.elapsed());
        let t = Instant::now();
        let recon = codec.decode_raster(&bytes)?;
        let d = ms(t.elapsed());
        enc_ms.push(e);
        dec_ms.push(d);
        records.push(ImageRecord {
            image: path
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
            width: raster.width,
            height: raster.height,
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            encode_ms: e,
            decode_ms: d,
            psnr: psnr(&raster, &recon)?,
            ms_ssim: ms_ssim(&raster, &recon)?,
            bpp: bpp(bytes.len(), raster.width, raster.height)?,
        });
        payloads.push(bytes);
    }

    log::debug!("single-stream pass done, {} images", files.len());
    let n = files.len() as f64;
    let (enc_wall, enc_out) = parallel(codec, workers, files.len(), |c, i| {
        Ok(encode_file(c, &files[i])?.1)
    })?;
    for (i, bytes) in enc_out.iter().enumerate() {
        if *bytes != payloads[i] {
            return Err(BenchError::Nondeterministic(records[i].image.clone()));
        }
    }
    log::debug!(
        "parallel encode: {:.1} ms wall on {workers} workers",
        ms(enc_wall)
    );
    let (dec_wall, _) = parallel(codec, workers, files.len(), |c, i| {
        Ok(c.decode_raster(&payloads[i])?)
    })?;
    Ok((
        phase_stats(enc_ms, n / enc_wall.as_secs_f64()),
        phase_stats(dec_ms, n / dec_wall.as_secs_f64()),
        records,
    ))
}

impl BenchReport {
    /// Structural checks a well-formed report satisfies.
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidReport(m));
        if self.images == 0 || self.records.len() != self.images {
            return bad(format!(
                "{} records for {} images",
                self.records.len(),
                self.images
            ));
        }
        if self.workers == 0 {
            return bad("zero workers".into());
        }
        for (name, p) in [("encode", &self.encode), ("decode", &self.decode)] {
            if p.samples_ms.len() != self.images {
                return bad(format!(
                    "{name}: {} samples for {} images",
                    p.samples_ms.len(),
                    self.images
                ));
            }
            if !(p.p50_ms <= p.p99_ms) {
                return bad(format!("{name}: p50 {} above p99 {}", p.p50_ms, p.p99_ms));
            }
            let all = p
                .samples_ms
                .iter()
                .chain([&p.mean_ms, &p.fps_single, &p.fps_parallel]);
            if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!("{name}: non-finite or negative timing"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BenchError> {
        let r: Self = serde_json::from_str(s)?;
        r.validate()?;
        Ok(r)
    }

    /// `key value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "label {}", self.label);
        let _ = writeln!(s, "images {}", self.images);
        let _ = writeln!(s, "workers {}", self.workers);
        let _ = writeln!(s, "warmup {}", self.warmup);
        for (name, p) in [("encode", &self.encode), ("decode", &self.decode)] {
            let _ = writeln!(s, "{name}.p50_ms {:.3}", p.p50_ms);
            let _ = writeln!(s, "{name}.p99_ms {:.3}", p.p99_ms);
            let _ = writeln!(s, "{name}.mean_ms {:.3}", p.mean_ms);
            let _ = writeln!(s, "{name}.fps_1 {:.2}", p.fps_single);
            let _ = writeln!(s, "{name}.fps_{} {:.2}", self.workers, p.fps_parallel);
        }
        match self.peak_rss_bytes {
            Some(b) => {
                let _ = writeln!(s, "peak_rss_bytes {b}");
            }
            None => s.push_str("peak_rss_bytes unavailable\n"),
        }
        s
    }

    /// One row per image and phase.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for phase in ["encode", "decode"] {
            for r in &self.records {
                let t = if phase == "encode" {
                    r.encode_ms
                } else {
                    r.decode_ms
                };
                let _ = writeln!(
                    s,
                    "{phase},{},{},{t:.3},{:.4},{:.6},{:.6}",
                    r.image, r.bytes, r.psnr, r.ms_ssim, r.bpp
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 5.0);
        assert_eq!(percentile(&v, 99.0), 10.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
    }
}
