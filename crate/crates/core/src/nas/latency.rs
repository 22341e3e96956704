//! Latency lookup tables.
//!
//! Text format, one record per line after a three-line header:
//!
//! ```text
//! licp-latency-table v1
//! device: <label>
//! timestamp: <unix seconds>
//! kind,in_c,out_c,k,s,h,w,ms
//! conv,3,32,5,2,64,64,0.81
//! ```
//!
//! `kind` is `conv`, `deconv`, or the name of a whole block (for example
//! `g_a`), in which case `in_c`/`out_c` are the block's input and output
//! widths, `k` and `s` are 0, and `h`/`w` its input size.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::space::{SearchSpace, SubConfig};
use super::NasError;
use crate::rng::SplitMix64;
use crate::tensor::{conv2d, deconv2d, LayerKind, LayerSpec, Tensor};

pub const TABLE_HEADER: &str = "licp-latency-table v1";
pub const WARMUP: usize = 3;
pub const MIN_REPETITIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatencyKey {
    pub kind: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub h: usize,
    pub w: usize,
}

impl LatencyKey {
    pub fn for_layer(spec: &LayerSpec, input_hw: (usize, usize)) -> Self {
        Self {
            kind: spec.kind.as_str().to_string(),
            in_c: spec.in_channels,
            out_c: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            h: input_hw.0,
            w: input_hw.1,
        }
    }

    pub fn for_block(block: &str, in_c: usize, out_c: usize, input_hw: (usize, usize)) -> Self {
        Self {
            kind: block.to_string(),
            in_c,
            out_c,
            kernel: 0,
            stride: 0,
            h: input_hw.0,
            w: input_hw.1,
        }
    }

    fn with_out(&self, out_c: usize) -> Self {
        Self {
            out_c,
            ..self.clone()
        }
    }
}

impl std::str::FromStr for LatencyKey {
    type Err = String;

    /// `kind,in_c,out_c,kernel,stride,h,w`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = s.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err("expected kind,in_c,out_c,kernel,stride,h,w".into());
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("bad integer field {s:?}"))
        };
        Ok(Self {
            kind: f[0].to_string(),
            in_c: num(f[1])?,
            out_c: num(f[2])?,
            kernel: num(f[3])?,
            stride: num(f[4])?,
            h: num(f[5])?,
            w: num(f[6])?,
        })
    }
}

impl std::fmt::Display for LatencyKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.kind, self.in_c, self.out_c, self.kernel, self.stride, self.h, self.w
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub device: String,
    pub timestamp: u64,
    entries: BTreeMap<LatencyKey, f64>,
}

impl LatencyTable {
    pub fn new(device: &str) -> Self {
        Self {
            device: device.to_string(),
            timestamp: unix_now(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: LatencyKey, ms: f64) -> Result<(), NasError> {
        if !(ms > 0.0 && ms.is_finite()) {
            return Err(NasError::BadLatency {
                key: key.to_string(),
                ms,
            });
        }
        self.entries.insert(key, ms);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LatencyKey, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    pub fn has_kind(&self, kind: &str) -> bool {
        self.entries.keys().any(|k| k.kind == kind)
    }

    /// Exact match, else linear interpolation in `out_c` between the nearest
    /// measured neighbours sharing every other field.
    pub fn lookup(&self, key: &LatencyKey) -> Result<f64, NasError> {
        if let Some(&ms) = self.entries.get(key) {
            return Ok(ms);
        }
        let family = self
            .entries
            .iter()
            .filter(|(k, _)| k.with_out(0) == key.with_out(0));
        let mut lo: Option<(&LatencyKey, &f64)> = None;
        let mut hi: Option<(&LatencyKey, &f64)> = None;
        for (k, v) in family {
            if k.out_c < key.out_c {
                lo = Some((k, v));
            } else if hi.is_none() {
                hi = Some((k, v));
            }
        }
        match (lo, hi) {
            (Some((k0, &v0)), Some((k1, &v1))) => {
                let t = (key.out_c - k0.out_c) as f64 / (k1.out_c - k0.out_c) as f64;
                Ok(v0 + t * (v1 - v0))
            }
            (None, None) => Err(NasError::MissingLatency(key.to_string())),
            _ => Err(NasError::OutsideHull(key.to_string())),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{TABLE_HEADER}\ndevice: {}\ntimestamp: {}\nkind,in_c,out_c,k,s,h,w,ms\n",
            self.device, self.timestamp
        );
        for (k, v) in &self.entries {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, NasError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: &str| NasError::Parse {
            line: line + 1,
            message: msg.to_string(),
        };
        match lines.next() {
            Some((_, l)) if l.trim() == TABLE_HEADER => {}
            _ => return Err(err(0, "missing latency table header")),
        }
        let (i, dev) = lines.next().ok_or_else(|| err(1, "missing device line"))?;
        let device = dev
            .strip_prefix("device:")
            .ok_or_else(|| err(i, "expected 'device: <label>'"))?
            .trim()
            .to_string();
        let (i, ts) = lines
            .next()
            .ok_or_else(|| err(2, "missing timestamp line"))?;
        let timestamp = ts
            .strip_prefix("timestamp:")
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| err(i, "expected 'timestamp: <unix seconds>'"))?;
        let mut table = Self {
            device,
            timestamp,
            entries: BTreeMap::new(),
        };
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("kind,") {
                continue;
            }
            let (k, v) = line
                .rsplit_once(',')
                .ok_or_else(|| err(i, "expected 8 comma-separated fields"))?;
            let key: LatencyKey = k.parse().map_err(|m: String| err(i, &m))?;
            let ms: f64 = v.trim().parse().map_err(|_| err(i, "bad latency field"))?;
            if table.entries.contains_key(&key) {
                return Err(err(i, "duplicate key"));
            }
            table.insert(key, ms).map_err(|e| err(i, &e.to_string()))?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NasError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NasError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Whole-model latency: blocks with a block-level record in the table use
/// it, other blocks sum their layers. Summation follows layer order.
pub fn lut_latency(
    space: &SearchSpace,
    cfg: &SubConfig,
    table: &LatencyTable,
    input_hw: (usize, usize),
) -> Result<f64, NasError> {
    let specs = space.layer_specs(cfg, input_hw)?;
    let mut total = 0.0;
    let mut i = 0;
    while i < specs.len() {
        let block = &space.layers[i].block;
        let end = (i..specs.len())
            .find(|&j| &space.layers[j].block != block)
            .unwrap_or(specs.len());
        if table.has_kind(block) {
            let key = LatencyKey::for_block(
                block,
                specs[i].0.in_channels,
                specs[end - 1].0.out_channels,
                specs[i].1,
            );
            total += table.lookup(&key)?;
        } else {
            for (spec, hw) in &specs[i..end] {
                total += table.lookup(&LatencyKey::for_layer(spec, *hw))?;
            }
        }
        i = end;
    }
    Ok(total)
}

/// Layer keys that make every config of `space` resolvable by
/// [`LatencyTable::lookup`]: each possible input width, paired with `points`
/// output widths spread evenly over the candidates (endpoints included).
pub fn space_latency_keys(
    space: &SearchSpace,
    input_hw: (usize, usize),
    points: usize,
) -> Result<Vec<LatencyKey>, NasError> {
    let specs = space.layer_specs(&space.min_config(), input_hw)?;
    let mut keys = BTreeSet::new();
    for (i, (spec, hw)) in specs.iter().enumerate() {
        let ins = match space.layers[i].input {
            None => vec![space.image_channels],
            Some(j) => space.possible_widths(j),
        };
        let outs = space.possible_widths(i);
        let n = outs.len();
        let picks: BTreeSet<usize> = match points.max(2) {
            _ if n <= 2 => (0..n).collect(),
            p => (0..p).map(|k| k * (n - 1) / (p - 1)).collect(),
        };
        for &in_c in &ins {
            for &k in &picks {
                let s = LayerSpec {
                    in_channels: in_c,
                    out_channels: outs[k],
                    ..spec.clone()
                };
                keys.insert(LatencyKey::for_layer(&s, *hw));
            }
        }
    }
    Ok(keys.into_iter().collect())
}

/// Times each conv/deconv key on this host: `WARMUP` untimed runs, then the
/// median of `repetitions` timed runs.
pub fn measure_latency_table(
    keys: &[LatencyKey],
    repetitions: usize,
    seed: u64,
) -> Result<LatencyTable, NasError> {
    if repetitions < MIN_REPETITIONS {
        return Err(NasError::TooFewRepetitions {
            got: repetitions,
            min: MIN_REPETITIONS,
        });
    }
    let mut table = LatencyTable::new(&device_label());
    let mut rng = SplitMix64::new(seed);
    for key in keys {
        let kind: LayerKind = key
            .kind
            .parse()
            .map_err(|_| NasError::Unmeasurable(key.to_string()))?;
        let spec = LayerSpec {
            name: key.kind.clone(),
            kind,
            in_channels: key.in_c,
            out_channels: key.out_c,
            kernel: key.kernel,
            stride: key.stride,
            activation: crate::tensor::Activation::None,
        };
        let x = Tensor::from_fn([1, key.in_c, key.h, key.w], |_| rng.next_gaussian() as f32);
        let w = Tensor::from_fn(spec.weight_dims(), |_| (rng.next_gaussian() * 0.05) as f32);
        let b = vec![0.0f32; key.out_c];
        let run = || match kind {
            LayerKind::Conv => conv2d(&x, &w, &b, &spec),
            LayerKind::Deconv => deconv2d(&x, &w, &b, &spec),
        };
        for _ in 0..WARMUP {
            run()?;
        }
        let mut samples = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            std::hint::black_box(run()?);
            samples.push(t.elapsed().as_secs_f64() * 1e3);
        }
        // A zero reading (timer granularity) is stored as the smallest
        // positive sample the clock can express.
        table.insert(key.clone(), median(&mut samples).max(1e-6))?;
    }
    Ok(table)
}

/// Median of the samples (mean of the middle two for even counts).
pub fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// CPU model name from /proc/cpuinfo where available, plus the thread count.
pub fn device_label() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{cpu} ({} threads)", rayon::current_num_threads())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(out_c: usize) -> LatencyKey {
        LatencyKey {
            kind: "conv".into(),
            in_c: 8,
            out_c,
            kernel: 3,
            stride: 1,
            h: 16,
            w: 16,
        }
    }

    #[test]
    fn interpolation() {
        let mut t = LatencyTable::new("test");
        t.insert(key(16), 1.0).unwrap();
        t.insert(key(32), 3.0).unwrap();
        assert_eq!(t.lookup(&key(16)).unwrap(), 1.0);
        assert_eq!(t.lookup(&key(32)).unwrap(), 3.0);
        assert_eq!(t.lookup(&key(24)).unwrap(), 2.0);
        assert!(matches!(t.lookup(&key(8)), Err(NasError::OutsideHull(_))));
        assert!(matches!(t.lookup(&key(40)), Err(NasError::OutsideHull(_))));
        let other = LatencyKey { in_c: 9, ..key(16) };
        assert!(matches!(t.lookup(&other), Err(NasError::MissingLatency(_))));
        assert!(t.insert(key(1), 0.0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut t = LatencyTable::new("cpu x");
        t.insert(key(16), 0.1).unwrap();
        t.insert(key(32), 1.0 / 3.0).unwrap();
        t.insert(LatencyKey::for_block("g_a", 3, 176, (1088, 1920)), 7.25)
            .unwrap();
        let back = LatencyTable::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert!(LatencyTable::parse("nope").is_err());
        assert!(LatencyTable::parse(&t.to_text().replace("0.1", "-1")).is_err());
    }

    #[test]
    fn measuring_needs_enough_repetitions() {
        assert!(matches!(
            measure_latency_table(&[key(4)], 1, 0),
            Err(NasError::TooFewRepetitions { .. })
        ));
        let t = measure_latency_table(&[key(4), key(4)], 10, 0).unwrap();
        assert!(t.lookup(&key(4)).unwrap() > 0.0);
    }

    #[test]
    fn median_not_mean() {
        assert_eq!(median(&mut [5.0, 1.0, 100.0]), 5.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 100.0]), 3.0);
    }
}
