//! Search strategies over a [`SearchSpace`].
//!
//! Every strategy receives an evaluator returning the measured time in
//! milliseconds (`None` for a failed configuration) and respects a budget
//! of unique evaluations. Evaluations are cached per run: revisiting a
//! configuration is served from the cache and consumes no budget. All
//! strategies are deterministic functions of the space, the evaluator and
//! the seed.

mod annealing;
mod pso;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

pub use annealing::{cooled_temperature, run_annealing, run_annealing_with_budget, sa_acceptance};
pub use pso::{draw_move_source, pso_move, run_pso, run_pso_with_budget, MoveSource, PsoParams};

use crate::rng::seeded;
use crate::space::{Configuration, SearchSpace, SpaceError};

/// Total steps (including cache hits) a run may take, as a multiple of its budget.
pub const STEP_CAP_FACTOR: u64 = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("the search space is empty")]
    EmptySpace,
    #[error("annealing temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("invalid PSO probabilities alpha={alpha} beta={beta} gamma={gamma}")]
    InvalidProbabilities { alpha: f64, beta: f64, gamma: f64 },
    #[error("fraction {0} must lie in (0, 1]")]
    InvalidFraction(Fraction),
    #[error("swarm size must be at least 1")]
    InvalidSwarmSize,
}

/// Exact rational share of the space to explore.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub const fn new(num: u64, den: u64) -> Self {
        Fraction { num, den }
    }

    pub fn is_valid(&self) -> bool {
        self.den > 0 && self.num > 0 && self.num <= self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// `floor(space_size * fraction)`, at least 1.
pub fn budget(space_size: u64, fraction: Fraction) -> u64 {
    if fraction.den == 0 {
        return 1;
    }
    let b = space_size as u128 * fraction.num as u128 / fraction.den as u128;
    (b as u64).max(1)
}

/// Which strategy to run, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Full,
    Random { fraction: Fraction },
    Annealing { fraction: Fraction, temperature: f64 },
    Pso { fraction: Fraction, params: PsoParams },
}

impl Strategy {
    pub fn fraction(&self) -> Fraction {
        match self {
            Strategy::Full => Fraction::ONE,
            Strategy::Random { fraction }
            | Strategy::Annealing { fraction, .. }
            | Strategy::Pso { fraction, .. } => *fraction,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::Random { .. } => "random",
            Strategy::Annealing { .. } => "annealing",
            Strategy::Pso { .. } => "pso",
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let fraction = self.fraction();
        if !fraction.is_valid() {
            return Err(SearchError::InvalidFraction(fraction));
        }
        match self {
            Strategy::Annealing { temperature, .. } if !(*temperature > 0.0) => {
                Err(SearchError::NonPositiveTemperature(*temperature))
            }
            Strategy::Pso { params, .. } => params.validate(),
            _ => Ok(()),
        }
    }

    pub fn run<F>(&self, space: &SearchSpace, eval: F, seed: u64) -> Result<SearchOutcome, SearchError>
    where
        F: FnMut(&Configuration) -> Option<f64>,
    {
        self.validate()?;
        match *self {
            Strategy::Full => run_full(space, eval),
            Strategy::Random { fraction } => run_random(space, eval, fraction, seed),
            Strategy::Annealing {
                fraction,
                temperature,
            } => run_annealing(space, eval, temperature, fraction, seed),
            Strategy::Pso { fraction, params } => run_pso(space, eval, params, fraction, seed),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Full => f.write_str("full"),
            Strategy::Random { fraction } => write!(f, "random(fraction={fraction})"),
            Strategy::Annealing {
                fraction,
                temperature,
            } => write!(f, "annealing(fraction={fraction}, T={temperature})"),
            Strategy::Pso { fraction, params } => write!(
                f,
                "pso(fraction={fraction}, S={}, alpha={}, beta={}, gamma={})",
                params.swarm_size, params.alpha, params.beta, params.gamma
            ),
        }
    }
}

/// One unique evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub config: Configuration,
    /// Milliseconds; `None` when the configuration failed.
    pub time: Option<f64>,
    pub best_so_far: Option<f64>,
    /// Evaluating particle, for PSO runs.
    pub particle: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Option<(Configuration, f64)>,
    pub trace: Vec<TraceStep>,
    pub budget: u64,
    pub failures: usize,
    /// Total steps including cache hits.
    pub steps: u64,
}

impl SearchOutcome {
    pub fn unique(&self) -> usize {
        self.trace.len()
    }

    pub fn best_time(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, t)| *t)
    }
}

/// Cache-first evaluation bookkeeping shared by all strategies.
pub(crate) struct Session<F> {
    eval: F,
    cache: BTreeMap<Configuration, Option<f64>>,
    trace: Vec<TraceStep>,
    best: Option<(Configuration, f64)>,
    failures: usize,
    pub(crate) particle: Option<usize>,
}

impl<F: FnMut(&Configuration) -> Option<f64>> Session<F> {
    pub(crate) fn new(eval: F) -> Self {
        Session {
            eval,
            cache: BTreeMap::new(),
            trace: Vec::new(),
            best: None,
            failures: 0,
            particle: None,
        }
    }

    pub(crate) fn unique(&self) -> u64 {
        self.trace.len() as u64
    }

    /// Measures `config`, consulting the cache first.
    pub(crate) fn measure(&mut self, config: &Configuration) -> Option<f64> {
        if let Some(t) = self.cache.get(config) {
            return *t;
        }
        let time = (self.eval)(config).filter(|t| t.is_finite() && *t > 0.0);
        self.cache.insert(config.clone(), time);
        match time {
            // Strict comparison keeps the earliest of equal times.
            Some(t) if self.best.as_ref().is_none_or(|(_, b)| t < *b) => {
                self.best = Some((config.clone(), t));
            }
            None => self.failures += 1,
            _ => {}
        }
        self.trace.push(TraceStep {
            step: self.trace.len(),
            config: config.clone(),
            time,
            best_so_far: self.best.as_ref().map(|(_, t)| *t),
            particle: self.particle,
        });
        time
    }

    pub(crate) fn finish(self, budget: u64, steps: u64) -> SearchOutcome {
        SearchOutcome {
            best: self.best,
            trace: self.trace,
            budget,
            failures: self.failures,
            steps,
        }
    }
}

pub(crate) fn nonempty_count(space: &SearchSpace) -> Result<u64, SearchError> {
    match space.valid_count()? {
        0 => Err(SearchError::EmptySpace),
        n => Ok(n),
    }
}

/// Evaluates every valid configuration in enumeration order.
pub fn run_full<F>(space: &SearchSpace, eval: F) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(&Configuration) -> Option<f64>,
{
    let all = space.enumerate_valid()?;
    if all.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    let mut session = Session::new(eval);
    for c in all {
        session.measure(c);
    }
    let n = all.len() as u64;
    Ok(session.finish(n, n))
}

/// Evaluates `floor(fraction * |space|)` distinct configurations drawn
/// uniformly without replacement.
pub fn run_random<F>(
    space: &SearchSpace,
    eval: F,
    fraction: Fraction,
    seed: u64,
) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(&Configuration) -> Option<f64>,
{
    if !fraction.is_valid() {
        return Err(SearchError::InvalidFraction(fraction));
    }
    let size = nonempty_count(space)?;
    run_random_with_budget(space, eval, budget(size, fraction), seed)
}

pub fn run_random_with_budget<F>(
    space: &SearchSpace,
    eval: F,
    budget: u64,
    seed: u64,
) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(&Configuration) -> Option<f64>,
{
    nonempty_count(space)?;
    let mut rng = seeded(seed);
    let picks = space.sample_unique(budget, &mut rng)?;
    let mut session = Session::new(eval);
    for c in &picks {
        session.measure(c);
    }
    Ok(session.finish(budget, budget))
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::rng::{fnv1a64, mix64, unit_interval};

    /// Grid space with `dims` parameters of `size` values each.
    pub fn grid(dims: usize, size: u64) -> SearchSpace {
        let mut s = SearchSpace::new();
        let values: Vec<u64> = (0..size).collect();
        for d in 0..dims {
            s.add_parameter(&alloc::format!("p{d}"), &values).unwrap();
        }
        s
    }

    /// Deterministic pseudo-random landscape in [1, 11).
    pub fn hash_time(c: &Configuration) -> Option<f64> {
        let mut bytes = Vec::new();
        for v in &c.0 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Some(1.0 + 10.0 * unit_interval(mix64(fnv1a64(&bytes))))
    }

    pub fn brute_min(space: &SearchSpace, f: impl Fn(&Configuration) -> Option<f64>) -> f64 {
        space
            .enumerate_valid()
            .unwrap()
            .iter()
            .filter_map(f)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn assert_monotone(outcome: &SearchOutcome) {
        let mut prev = f64::INFINITY;
        for s in &outcome.trace {
            if let Some(b) = s.best_so_far {
                assert!(b <= prev, "best-so-far increased at step {}", s.step);
                prev = b;
            }
        }
    }
}
