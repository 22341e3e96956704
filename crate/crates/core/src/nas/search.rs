//! Constrained architecture search: exhaustive enumeration on small spaces,
//! seeded regularized evolution otherwise.
//!
//! Feasibility is checked before scoring, so infeasible configs never reach
//! the scorer. Candidates are scored in parallel but ranked by
//! (score, config) so the result does not depend on scheduling.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::latency::{lut_latency, LatencyTable};
use super::space::{flops, SearchSpace, SubConfig};
use super::NasError;
use crate::rng::SplitMix64;

pub const EXHAUSTIVE_LIMIT: u128 = 4096;
pub const POPULATION: usize = 16;
pub const TOURNAMENT: usize = 4;
/// Children generated (and scored in parallel) per evolution step.
const BROOD: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct Constraints<'a> {
    pub max_flops: Option<u64>,
    pub max_latency_ms: Option<f64>,
    pub table: Option<&'a LatencyTable>,
    pub input_hw: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Exhaustive when the space has at most 4096 configs.
    #[default]
    Auto,
    Exhaustive,
    Evolutionary,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Maximum number of scorer calls (evolutionary mode).
    pub budget: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 1000,
            seed: 0,
            strategy: Strategy::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: SubConfig,
    pub widths: Vec<usize>,
    pub flops: u64,
    pub latency_ms: Option<f64>,
    pub score: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub strategy: Strategy,
    pub space_size: String,
    pub scored: usize,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum SearchOutcome {
    Found {
        best: Candidate,
        /// Non-dominated feasible candidates by (cost, score), cost being
        /// latency when a table is given and FLOPs otherwise; sorted by cost.
        pareto: Vec<Candidate>,
        report: SearchReport,
    },
    Infeasible {
        report: SearchReport,
    },
}

impl SearchOutcome {
    pub fn best(&self) -> Option<&Candidate> {
        match self {
            SearchOutcome::Found { best, .. } => Some(best),
            SearchOutcome::Infeasible { .. } => None,
        }
    }

    pub fn report(&self) -> &SearchReport {
        match self {
            SearchOutcome::Found { report, .. } | SearchOutcome::Infeasible { report } => report,
        }
    }
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    let sa = a.score.unwrap_or(f64::INFINITY);
    let sb = b.score.unwrap_or(f64::INFINITY);
    sa.total_cmp(&sb).then_with(|| a.config.cmp(&b.config))
}

struct Evaluator<'a, F> {
    space: &'a SearchSpace,
    constraints: &'a Constraints<'a>,
    scorer: &'a F,
}

impl<F: Fn(&SubConfig) -> f64 + Sync> Evaluator<'_, F> {
    /// Cost metrics and feasibility, without scoring.
    fn measure(&self, cfg: &SubConfig) -> Result<Candidate, NasError> {
        let c = self.constraints;
        let widths = self.space.widths(cfg)?;
        let fl = flops(self.space, cfg, c.input_hw)?;
        let latency_ms = match c.table {
            Some(t) => Some(lut_latency(self.space, cfg, t, c.input_hw)?),
            None => None,
        };
        let feasible = c.max_flops.is_none_or(|m| fl <= m)
            && match (c.max_latency_ms, latency_ms) {
                (Some(m), Some(l)) => l <= m,
                _ => true,
            };
        Ok(Candidate {
            config: cfg.clone(),
            widths,
            flops: fl,
            latency_ms,
            score: None,
            feasible,
        })
    }

    /// Measures every config, then scores the feasible ones in parallel.
    fn evaluate(&self, cfgs: &[SubConfig]) -> Result<Vec<Candidate>, NasError> {
        let mut out = cfgs
            .iter()
            .map(|c| self.measure(c))
            .collect::<Result<Vec<_>, _>>()?;
        out.par_iter_mut().filter(|c| c.feasible).for_each(|c| {
            c.score = Some((self.scorer)(&c.config));
        });
        Ok(out)
    }
}

/// Finds the feasible config with the lowest score.
pub fn search<F>(
    space: &SearchSpace,
    constraints: &Constraints<'_>,
    scorer: &F,
    options: &SearchOptions,
) -> Result<SearchOutcome, NasError>
where
    F: Fn(&SubConfig) -> f64 + Sync,
{
    space.validate()?;
    if constraints.max_latency_ms.is_some() && constraints.table.is_none() {
        return Err(NasError::MissingTable);
    }
    let ev = Evaluator {
        space,
        constraints,
        scorer,
    };
    let size = space.size();
    let strategy = match options.strategy {
        Strategy::Auto if size <= EXHAUSTIVE_LIMIT => Strategy::Exhaustive,
        Strategy::Auto => Strategy::Evolutionary,
        s => s,
    };
    let candidates = match strategy {
        Strategy::Exhaustive => {
            if size > 1 << 24 {
                return Err(NasError::InvalidSpace(format!(
                    "{size} configs is too many to enumerate"
                )));
            }
            ev.evaluate(&space.enumerate())?
        }
        _ => evolve(&ev, options)?,
    };
    let scored = candidates.iter().filter(|c| c.score.is_some()).count();
    log::debug!("{strategy:?} search scored {scored} of {size} configs");
    let report = SearchReport {
        strategy,
        space_size: size.to_string(),
        scored,
        candidates,
    };
    let mut feasible: Vec<&Candidate> = report.candidates.iter().filter(|c| c.feasible).collect();
    if feasible.is_empty() {
        return Ok(SearchOutcome::Infeasible { report });
    }
    feasible.sort_by(|a, b| rank(a, b));
    let best = feasible[0].clone();
    let pareto = pareto_front(&feasible);
    Ok(SearchOutcome::Found {
        best,
        pareto,
        report,
    })
}

fn cost(c: &Candidate) -> f64 {
    c.latency_ms.unwrap_or(c.flops as f64)
}

/// Feasible candidates not dominated in (cost, score).
pub fn pareto_front(cands: &[&Candidate]) -> Vec<Candidate> {
    let mut sorted: Vec<&Candidate> = cands.to_vec();
    sorted.sort_by(|a, b| cost(a).total_cmp(&cost(b)).then_with(|| rank(a, b)));
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for c in sorted {
        let s = c.score.unwrap_or(f64::INFINITY);
        if s < best {
            best = s;
            out.push(c.clone());
        }
    }
    out
}

fn evolve<F>(ev: &Evaluator<'_, F>, options: &SearchOptions) -> Result<Vec<Candidate>, NasError>
where
    F: Fn(&SubConfig) -> f64 + Sync,
{
    let space = ev.space;
    let mut rng = SplitMix64::new(options.seed);
    let budget = options.budget.max(1);
    let max_draws = budget.saturating_mul(64);
    let mut seen: HashMap<SubConfig, Candidate> = HashMap::new();
    let mut order: Vec<SubConfig> = Vec::new();
    let mut scored = 0usize;
    let mut draws = 0usize;

    let admit = |batch: Vec<SubConfig>,
                 seen: &mut HashMap<SubConfig, Candidate>,
                 order: &mut Vec<SubConfig>,
                 scored: &mut usize|
     -> Result<Vec<Candidate>, NasError> {
        let mut fresh: Vec<SubConfig> = Vec::with_capacity(batch.len());
        for c in batch {
            if !seen.contains_key(&c) && !fresh.contains(&c) {
                fresh.push(c);
            }
        }
        fresh.truncate(budget.saturating_sub(*scored));
        let evaluated = ev.evaluate(&fresh)?;
        for c in &evaluated {
            *scored += c.score.is_some() as usize;
            order.push(c.config.clone());
            seen.insert(c.config.clone(), c.clone());
        }
        Ok(evaluated)
    };

    // Initial population: the smallest config plus random draws.
    let mut population: VecDeque<Candidate> = VecDeque::new();
    let mut batch = vec![space.min_config()];
    while population.len() < POPULATION && scored < budget && draws < max_draws {
        while batch.len() < BROOD {
            batch.push(space.sample(&mut rng));
        }
        draws += batch.len();
        for c in admit(
            std::mem::take(&mut batch),
            &mut seen,
            &mut order,
            &mut scored,
        )? {
            if c.feasible && population.len() < POPULATION {
                population.push_back(c);
            }
        }
    }

    let searched = space.searched();
    let movable: Vec<usize> = (0..searched.len())
        .filter(|&k| space.candidates(searched[k]).len() > 1)
        .collect();
    while !population.is_empty() && !movable.is_empty() && scored < budget && draws < max_draws {
        let mut brood = Vec::with_capacity(BROOD);
        for _ in 0..BROOD {
            let parent = (0..TOURNAMENT)
                .map(|_| &population[rng.below(population.len())])
                .min_by(|a, b| rank(a, b))
                .unwrap();
            let mut idx = space.indices(&parent.config)?;
            let k = movable[rng.below(movable.len())];
            let n = space.candidates(searched[k]).len();
            idx[k] = match (idx[k], rng.below(2)) {
                (0, _) => 1,
                (i, _) if i + 1 == n => i - 1,
                (i, 0) => i - 1,
                (i, _) => i + 1,
            };
            brood.push(space.from_indices(&idx));
        }
        draws += brood.len();
        let mut children = Vec::new();
        for cfg in &brood {
            if let Some(c) = seen.get(cfg) {
                children.push(c.clone());
            }
        }
        children.extend(admit(brood, &mut seen, &mut order, &mut scored)?);
        // Aging: every feasible child enters, the oldest members leave.
        for c in children.into_iter().filter(|c| c.feasible) {
            population.push_back(c);
            if population.len() > POPULATION {
                population.pop_front();
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|c| seen.remove(&c).unwrap())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::space::{SpaceLayer, Width};
    use crate::tensor::{Activation, LayerKind};

    fn chain(cands: &[Vec<usize>]) -> SearchSpace {
        SearchSpace {
            image_channels: 3,
            layers: cands
                .iter()
                .enumerate()
                .map(|(i, c)| SpaceLayer {
                    name: format!("l{i}"),
                    block: "net".into(),
                    kind: LayerKind::Conv,
                    kernel: 3,
                    stride: 2,
                    activation: Activation::Relu,
                    input: i.checked_sub(1),
                    width: Width::Search(c.clone()),
                })
                .collect(),
        }
    }

    fn unconstrained() -> Constraints<'static> {
        Constraints {
            max_flops: None,
            max_latency_ms: None,
            table: None,
            input_hw: (32, 32),
        }
    }

    #[test]
    fn exhaustive_finds_the_minimum() {
        let space = chain(&[vec![4, 8], vec![4, 8], vec![2, 6]]);
        let target = [8usize, 4, 6];
        let scorer = |c: &SubConfig| {
            c.0.iter()
                .zip(&target)
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum()
        };
        let out = search(&space, &unconstrained(), &scorer, &SearchOptions::default()).unwrap();
        assert_eq!(out.best().unwrap().config.0, target.to_vec());
        assert_eq!(out.report().candidates.len(), 8);
    }

    #[test]
    fn zero_flops_is_infeasible() {
        let space = chain(&[vec![4, 8]]);
        let c = Constraints {
            max_flops: Some(0),
            ..unconstrained()
        };
        let out = search(&space, &c, &|_: &SubConfig| 0.0, &SearchOptions::default()).unwrap();
        assert!(matches!(out, SearchOutcome::Infeasible { .. }));
    }

    #[test]
    fn single_feasible_config_wins_regardless_of_score() {
        let space = chain(&[vec![4, 8, 16], vec![4, 8]]);
        let min = flops(&space, &space.min_config(), (32, 32)).unwrap();
        let c = Constraints {
            max_flops: Some(min),
            ..unconstrained()
        };
        let out = search(
            &space,
            &c,
            &|c: &SubConfig| -(c.0[0] as f64),
            &SearchOptions::default(),
        )
        .unwrap();
        assert_eq!(out.best().unwrap().config, space.min_config());
    }

    #[test]
    fn latency_constraint_needs_a_table() {
        let space = chain(&[vec![4, 8]]);
        let c = Constraints {
            max_latency_ms: Some(1.0),
            ..unconstrained()
        };
        assert!(matches!(
            search(&space, &c, &|_: &SubConfig| 0.0, &SearchOptions::default()),
            Err(NasError::MissingTable)
        ));
    }

    #[test]
    fn evolution_is_seeded() {
        let space = chain(&[(1..=20).collect(), (1..=20).collect(), (1..=20).collect()]);
        let scorer = |c: &SubConfig| c.0.iter().map(|&v| (v as f64 - 13.0).powi(2)).sum();
        let opts = SearchOptions {
            budget: 300,
            seed: 4,
            strategy: Strategy::Evolutionary,
        };
        let a = search(&space, &unconstrained(), &scorer, &opts).unwrap();
        let b = search(&space, &unconstrained(), &scorer, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.report().scored <= 300);
        assert_eq!(a.best().unwrap().config.0, vec![13, 13, 13]);
    }

    #[test]
    fn pareto_front_is_monotone() {
        let space = chain(&[vec![4, 8, 16], vec![4, 8, 16]]);
        let scorer = |c: &SubConfig| 100.0 / (c.0[0] * c.0[1]) as f64;
        let out = search(&space, &unconstrained(), &scorer, &SearchOptions::default()).unwrap();
        let SearchOutcome::Found { pareto, .. } = out else {
            panic!()
        };
        for w in pareto.windows(2) {
            assert!(w[0].flops <= w[1].flops);
            assert!(w[0].score.unwrap() > w[1].score.unwrap());
        }
    }
}
