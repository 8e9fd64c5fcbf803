//! Discrete particle-swarm search.
//!
//! Each dimension of a particle's next position is drawn independently:
//! a random value of the parameter with probability `alpha`, the particle's
//! own best with probability `beta`, the swarm's best with probability
//! `gamma`, and the current value otherwise.

use alloc::vec::Vec;

use rand::Rng;

use super::{budget, nonempty_count, SearchError, SearchOutcome, Session, STEP_CAP_FACTOR};
use crate::rng::seeded;
use crate::search::Fraction;
use crate::space::{Configuration, SearchSpace};

/// Attempts at drawing a constraint-satisfying position before staying put.
pub const MOVE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoParams {
    pub swarm_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for PsoParams {
    fn default() -> Self {
        PsoParams {
            swarm_size: 3,
            alpha: 0.4,
            beta: 0.0,
            gamma: 0.4,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.swarm_size == 0 {
            return Err(SearchError::InvalidSwarmSize);
        }
        check_probabilities(self.alpha, self.beta, self.gamma)
    }
}

fn check_probabilities(alpha: f64, beta: f64, gamma: f64) -> Result<(), SearchError> {
    let unit = |p: f64| (0.0..=1.0).contains(&p);
    if unit(alpha) && unit(beta) && unit(gamma) && alpha + beta + gamma <= 1.0 + 1e-12 {
        Ok(())
    } else {
        Err(SearchError::InvalidProbabilities { alpha, beta, gamma })
    }
}

/// Where one dimension of the next position comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveSource {
    Random,
    LocalBest,
    GlobalBest,
    Stay,
}

pub fn draw_move_source<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64, gamma: f64) -> MoveSource {
    let r: f64 = rng.gen();
    if r < alpha {
        MoveSource::Random
    } else if r < alpha + beta {
        MoveSource::LocalBest
    } else if r < alpha + beta + gamma {
        MoveSource::GlobalBest
    } else {
        MoveSource::Stay
    }
}

/// Next position of a particle at `x` with personal best `p` and swarm best
/// `g`. Positions violating the constraints are re-drawn up to
/// [`MOVE_ATTEMPTS`] times, after which `x` is returned.
#[allow(clippy::too_many_arguments)]
pub fn pso_move<R: Rng + ?Sized>(
    x: &Configuration,
    p: &Configuration,
    g: &Configuration,
    alpha: f64,
    beta: f64,
    gamma: f64,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<Configuration, SearchError> {
    check_probabilities(alpha, beta, gamma)?;
    let params = space.parameters();
    for _ in 0..MOVE_ATTEMPTS {
        let next: Vec<u64> = params
            .iter()
            .enumerate()
            .map(|(d, param)| match draw_move_source(rng, alpha, beta, gamma) {
                MoveSource::Random => param.values[rng.gen_range(0..param.values.len())],
                MoveSource::LocalBest => p.0[d],
                MoveSource::GlobalBest => g.0[d],
                MoveSource::Stay => x.0[d],
            })
            .collect();
        let next = Configuration(next);
        if space.is_valid(&next) {
            return Ok(next);
        }
    }
    Ok(x.clone())
}

struct Particle {
    position: Configuration,
    best: Option<(Configuration, f64)>,
}

pub fn run_pso<F>(
    space: &SearchSpace,
    eval: F,
    params: PsoParams,
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
    run_pso_with_budget(space, eval, params, budget(size, fraction), seed)
}

/// Particles take turns in index order. A turn evaluates the particle's
/// position, updates its personal best and the swarm best, then moves it.
pub fn run_pso_with_budget<F>(
    space: &SearchSpace,
    eval: F,
    params: PsoParams,
    budget: u64,
    seed: u64,
) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(&Configuration) -> Option<f64>,
{
    params.validate()?;
    nonempty_count(space)?;
    let mut rng = seeded(seed);
    let mut swarm = Vec::with_capacity(params.swarm_size);
    for _ in 0..params.swarm_size {
        swarm.push(Particle {
            position: space.random_valid(&mut rng)?,
            best: None,
        });
    }
    let mut global: Option<(Configuration, f64)> = None;
    let mut session = Session::new(eval);

    let cap = STEP_CAP_FACTOR * budget;
    let mut steps = 0;
    let mut turn = 0usize;
    while session.unique() < budget && steps < cap {
        steps += 1;
        let i = turn % swarm.len();
        turn += 1;
        session.particle = Some(i);
        let particle = &mut swarm[i];
        if let Some(t) = session.measure(&particle.position) {
            if particle.best.as_ref().is_none_or(|(_, b)| t < *b) {
                particle.best = Some((particle.position.clone(), t));
            }
            if global.as_ref().is_none_or(|(_, b)| t < *b) {
                global = Some((particle.position.clone(), t));
            }
        }
        let x = &particle.position;
        let p = particle.best.as_ref().map_or(x, |(c, _)| c);
        let g = global.as_ref().map_or(x, |(c, _)| c);
        let next = pso_move(x, p, g, params.alpha, params.beta, params.gamma, space, &mut rng)?;
        particle.position = next;
    }
    Ok(session.finish(budget, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::testing::*;

    #[test]
    fn zero_probabilities_stay() {
        let s = grid(3, 4);
        let x = Configuration(alloc::vec![1, 2, 3]);
        let p = Configuration(alloc::vec![0, 0, 0]);
        let g = Configuration(alloc::vec![3, 3, 3]);
        let mut rng = seeded(1);
        for _ in 0..100 {
            assert_eq!(pso_move(&x, &p, &g, 0.0, 0.0, 0.0, &s, &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn gamma_one_jumps_to_global_best() {
        let s = grid(3, 4);
        let x = Configuration(alloc::vec![1, 2, 3]);
        let p = Configuration(alloc::vec![0, 0, 0]);
        let g = Configuration(alloc::vec![3, 1, 0]);
        let mut rng = seeded(2);
        assert_eq!(pso_move(&x, &p, &g, 0.0, 0.0, 1.0, &s, &mut rng).unwrap(), g);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let s = grid(1, 2);
        let c = Configuration(alloc::vec![0]);
        assert!(matches!(
            pso_move(&c, &c, &c, 0.6, 0.0, 0.6, &s, &mut seeded(0)),
            Err(SearchError::InvalidProbabilities { .. })
        ));
        assert!(matches!(
            pso_move(&c, &c, &c, -0.1, 0.0, 0.0, &s, &mut seeded(0)),
            Err(SearchError::InvalidProbabilities { .. })
        ));
    }

    #[test]
    fn move_source_frequencies() {
        let mut rng = seeded(7);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let i = match draw_move_source(&mut rng, 0.4, 0.0, 0.4) {
                MoveSource::Random => 0,
                MoveSource::LocalBest => 1,
                MoveSource::GlobalBest => 2,
                MoveSource::Stay => 3,
            };
            counts[i] += 1;
        }
        let f = |c: usize| c as f64 / n as f64;
        assert!((f(counts[0]) - 0.4).abs() < 0.02);
        assert_eq!(counts[1], 0);
        assert!((f(counts[2]) - 0.4).abs() < 0.02);
        assert!((f(counts[3]) - 0.2).abs() < 0.02);
    }

    #[test]
    fn constrained_move_stays_valid_or_stays_put() {
        let mut s = grid(2, 6);
        s.add_constraint("p0 + p1 <= 4").unwrap();
        let x = Configuration(alloc::vec![2, 2]);
        let g = Configuration(alloc::vec![0, 4]);
        let mut rng = seeded(3);
        for _ in 0..500 {
            let n = pso_move(&x, &x, &g, 0.9, 0.0, 0.1, &s, &mut rng).unwrap();
            assert!(s.is_valid(&n));
        }
    }

    #[test]
    fn single_random_particle_is_random_search() {
        let s = grid(2, 10);
        let params = PsoParams {
            swarm_size: 1,
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let out = run_pso(&s, hash_time, params, Fraction::new(1, 4), 5).unwrap();
        assert_eq!(out.unique(), 25);
        assert!(out.steps >= 25);
        assert_monotone(&out);
    }

    #[test]
    fn particles_share_the_budget_round_robin() {
        let s = grid(4, 10);
        let params = PsoParams {
            swarm_size: 3,
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let out = run_pso_with_budget(&s, hash_time, params, 9, 17).unwrap();
        assert_eq!(out.steps, 9, "a collision occurred; pick another seed");
        for i in 0..3 {
            assert_eq!(out.trace.iter().filter(|t| t.particle == Some(i)).count(), 3);
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let s = grid(3, 8);
        let params = PsoParams::default();
        let a = run_pso(&s, hash_time, params, Fraction::new(1, 8), 4).unwrap();
        let b = run_pso(&s, hash_time, params, Fraction::new(1, 8), 4).unwrap();
        assert_eq!(a, b);
        assert!(a.unique() as u64 <= a.budget);
        assert_monotone(&a);
    }

    #[test]
    fn frozen_swarm_terminates_at_step_cap() {
        let s = grid(2, 10);
        let params = PsoParams {
            swarm_size: 2,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let out = run_pso_with_budget(&s, hash_time, params, 10, 0).unwrap();
        assert!(out.unique() <= 2);
        assert_eq!(out.steps, 500);
    }
}
