use super::gaussian::zero_mean_pmf_abs;
use super::EntropyError;

/// Probability precision of every table: cumulative counts sum to 2^16.
pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;
/// Largest magnitude coded directly; anything beyond takes the escape symbol.
pub const A_MAX: u32 = 255;
pub const SCALE_BINS: usize = 64;
pub const SIGMA_MIN: f64 = 0.11;
pub const SIGMA_MAX: f64 = 256.0;

/// Integer cumulative frequencies: `cum[0] = 0`, `cum[n] = 2^16`, strictly
/// increasing, so every symbol has a non-zero frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cum: Vec<u32>,
}

impl CdfTable {
    pub fn from_cum(cum: Vec<u32>) -> Result<Self, EntropyError> {
        let valid = cum.len() >= 2
            && cum[0] == 0
            && *cum.last().unwrap() == TOTAL
            && cum.windows(2).all(|w| w[1] > w[0]);
        if !valid {
            return Err(EntropyError::InvalidTable);
        }
        Ok(Self { cum })
    }

    pub fn from_counts(counts: &[u32]) -> Result<Self, EntropyError> {
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &c in counts {
            acc = acc.checked_add(c).ok_or(EntropyError::InvalidTable)?;
            cum.push(acc);
        }
        Self::from_cum(cum)
    }

    pub fn alphabet_size(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn cum(&self) -> &[u32] {
        &self.cum
    }

    #[inline]
    pub fn start(&self, symbol: usize) -> u32 {
        self.cum[symbol]
    }

    #[inline]
    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    /// Symbol whose interval [cum[s], cum[s+1]) contains `target` (< 2^16).
    #[inline]
    pub fn find(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Ideal code length of `symbol` under this table, in bits.
    pub fn cost_bits(&self, symbol: usize) -> f64 {
        -(self.freq(symbol) as f64 / TOTAL as f64).log2()
    }
}

/// Index of the escape symbol in an `a_max` Gaussian table.
#[inline]
pub fn escape_index(a_max: u32) -> usize {
    2 * a_max as usize + 1
}

/// Zero-mean discretized Gaussian over {-a_max..a_max, escape}, quantized to
/// 16-bit counts. The escape symbol carries both tails; the rounding surplus
/// or deficit goes to the symbol of largest mass, and every count stays >= 1.
pub fn build_cdf_table(sigma: f64, a_max: u32) -> Result<CdfTable, EntropyError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(EntropyError::InvalidSigma(sigma));
    }
    let n = escape_index(a_max) + 1;
    let mut mass = vec![0f64; n];
    for k in 0..=a_max as u64 {
        let p = zero_mean_pmf_abs(sigma, k);
        mass[a_max as usize + k as usize] = p;
        mass[a_max as usize - k as usize] = p;
    }
    mass[n - 1] = (2.0 * super::gaussian::normal_upper_tail((a_max as f64 + 0.5) / sigma)).max(0.0);
    let mut counts: Vec<i64> = mass
        .iter()
        .map(|&p| (p * TOTAL as f64).round().max(1.0) as i64)
        .collect();

    // Rounding error is settled on the symbols of largest exact mass, lowest
    // index first among equal masses; counts never drop below 1.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let mut diff = TOTAL as i64 - counts.iter().sum::<i64>();
    if diff > 0 {
        counts[order[0]] += diff;
    } else {
        for &i in &order {
            if diff == 0 {
                break;
            }
            let take = (-diff).min(counts[i] - 1);
            counts[i] -= take;
            diff += take;
        }
        if diff != 0 {
            return Err(EntropyError::InvalidTable);
        }
    }
    let counts: Vec<u32> = counts.into_iter().map(|c| c as u32).collect();
    CdfTable::from_counts(&counts)
}

/// The 64 log-spaced sigma bins and one zero-mean table per bin.
#[derive(Debug, Clone)]
pub struct ScaleTable {
    bins: Vec<f64>,
    tables: Vec<CdfTable>,
    a_max: u32,
}

impl ScaleTable {
    pub fn new() -> Self {
        Self::with_alphabet(A_MAX)
    }

    pub fn with_alphabet(a_max: u32) -> Self {
        let bins = scale_bins();
        let tables = bins
            .iter()
            .map(|&s| build_cdf_table(s, a_max).expect("bin sigmas are positive"))
            .collect();
        Self {
            bins,
            tables,
            a_max,
        }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn table(&self, bin: usize) -> &CdfTable {
        &self.tables[bin]
    }

    pub fn tables(&self) -> &[CdfTable] {
        &self.tables
    }

    pub fn a_max(&self) -> u32 {
        self.a_max
    }
}

impl Default for ScaleTable {
    fn default() -> Self {
        Self::new()
    }
}

/// bins[i] = exp(ln 0.11 + i * (ln 256 - ln 0.11) / 63), endpoints exact.
pub fn scale_bins() -> Vec<f64> {
    let lo = libm::log(SIGMA_MIN);
    let hi = libm::log(SIGMA_MAX);
    let last = (SCALE_BINS - 1) as f64;
    (0..SCALE_BINS)
        .map(|i| match i {
            0 => SIGMA_MIN,
            i if i == SCALE_BINS - 1 => SIGMA_MAX,
            i => libm::exp(lo + (hi - lo) * i as f64 / last),
        })
        .collect()
}

/// Smallest bin whose sigma is >= `sigma`, clamped to the last bin.
pub fn sigma_to_bin(sigma: f64, table: &ScaleTable) -> usize {
    table
        .bins
        .partition_point(|&b| b < sigma)
        .min(table.bins.len() - 1)
}
