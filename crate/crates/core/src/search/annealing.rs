//! Simulated annealing over single-step neighbourhoods.

use rand::Rng;

use super::{budget, nonempty_count, SearchError, SearchOutcome, Session, STEP_CAP_FACTOR};
use crate::rng::seeded;
use crate::search::Fraction;
use crate::space::{Configuration, SearchSpace};

/// Lowest temperature reached by the cooling schedule, relative to the start.
pub const TEMPERATURE_FLOOR: f64 = 0.05;

/// Probability of moving from a state timed `t` to one timed `t_prime`:
/// 1 when strictly faster, `exp(-(t' - t) / T)` otherwise. Times and
/// temperature share a unit (milliseconds).
pub fn sa_acceptance(t: f64, t_prime: f64, temperature: f64) -> Result<f64, SearchError> {
    if !(temperature > 0.0) {
        return Err(SearchError::NonPositiveTemperature(temperature));
    }
    if t_prime < t {
        Ok(1.0)
    } else {
        Ok(libm::exp(-(t_prime - t) / temperature))
    }
}

/// Linear cooling: `T * max(1 - done / budget, floor)`.
pub fn cooled_temperature(initial: f64, done: u64, budget: u64) -> f64 {
    let progress = done as f64 / budget.max(1) as f64;
    initial * (1.0 - progress).max(TEMPERATURE_FLOOR)
}

pub fn run_annealing<F>(
    space: &SearchSpace,
    eval: F,
    temperature: f64,
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
    run_annealing_with_budget(space, eval, temperature, budget(size, fraction), seed)
}

pub fn run_annealing_with_budget<F>(
    space: &SearchSpace,
    eval: F,
    temperature: f64,
    budget: u64,
    seed: u64,
) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(&Configuration) -> Option<f64>,
{
    anneal(
        space,
        eval,
        temperature,
        budget,
        seed,
        Some(STEP_CAP_FACTOR * budget),
    )
}

/// `step_cap = None` runs until `budget` unique evaluations.
pub(crate) fn anneal<F>(
    space: &SearchSpace,
    eval: F,
    temperature: f64,
    budget: u64,
    seed: u64,
    step_cap: Option<u64>,
) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(&Configuration) -> Option<f64>,
{
    if !(temperature > 0.0) {
        return Err(SearchError::NonPositiveTemperature(temperature));
    }
    nonempty_count(space)?;
    let mut rng = seeded(seed);
    let mut session = Session::new(eval);

    let mut current = space.random_valid(&mut rng)?;
    let mut current_time = session.measure(&current);
    let cap = step_cap.unwrap_or(u64::MAX);
    let mut steps = 1;
    while session.unique() < budget && steps < cap {
        steps += 1;
        let candidate = space.random_neighbor(&current, &mut rng)?;
        let candidate_time = session.measure(&candidate);
        let t = cooled_temperature(temperature, session.unique(), budget);
        let draw: f64 = rng.gen();
        let accept = match (current_time, candidate_time) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => draw < sa_acceptance(a, b, t)?,
        };
        if accept {
            current = candidate;
            current_time = candidate_time;
        }
    }
    Ok(session.finish(budget, steps))
}
