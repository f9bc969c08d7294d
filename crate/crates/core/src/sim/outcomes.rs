use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{ActorIdx, DurationDist, Instance, Job, Phase, PhaseEstimates, TaskIdx, Tick, ValidationReport};
use crate::rng::{stream, Stream, StreamRng};

/// Everything uncontrollable about one run, drawn before it starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedOutcomes {
    /// `[task][actor][phase]`; entries for ineligible actors are unused.
    durations: Vec<Vec<[Tick; 3]>>,
    /// `[task][actor]`; only humans ever reject.
    rejections: Vec<Vec<bool>>,
}

impl RealizedOutcomes {
    /// Draws every duration and rejection from the run seed. Iteration order is
    /// fixed: tasks in job order, then phases, then actors in list order;
    /// rejections follow in task and actor order.
    pub fn sample(instance: &Instance, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Outcomes);
        let n = instance.n_tasks();
        let m = instance.n_actors();
        let mut durations = vec![vec![[1; 3]; m]; n];
        for (t, row) in durations.iter_mut().enumerate() {
            for phase in Phase::ALL {
                for &a in instance.eligible(t) {
                    row[a][phase.index()] = sample_duration(&instance.distribution(t, phase, a), &mut rng);
                }
            }
        }
        let mut rejections = vec![vec![false; m]; n];
        for (t, row) in rejections.iter_mut().enumerate() {
            for &a in instance.eligible(t) {
                if !instance.is_robot(a) {
                    let p = instance.reject_prob(t, a);
                    let u: f64 = rng.random();
                    row[a] = u < p;
                }
            }
        }
        Self { durations, rejections }
    }

    /// Explicit outcomes, `durations[task][actor]` and `rejections[task][actor]`.
    pub fn from_parts(durations: Vec<Vec<[Tick; 3]>>, rejections: Vec<Vec<bool>>) -> Self {
        assert_eq!(durations.len(), rejections.len(), "one row per task");
        Self { durations, rejections }
    }

    /// Outcomes equal to the estimates and no rejections.
    pub fn from_estimates(instance: &Instance) -> Self {
        let n = instance.n_tasks();
        let m = instance.n_actors();
        let durations = (0..n).map(|t| vec![instance.estimates(t); m]).collect();
        Self { durations, rejections: vec![vec![false; m]; n] }
    }

    /// The same durations with every rejection cleared.
    pub fn without_rejections(mut self) -> Self {
        for row in &mut self.rejections {
            row.fill(false);
        }
        self
    }

    pub fn durations(&self, task: TaskIdx, actor: ActorIdx) -> [Tick; 3] {
        self.durations[task][actor]
    }

    pub fn duration(&self, task: TaskIdx, phase: Phase, actor: ActorIdx) -> Tick {
        self.durations[task][actor][phase.index()]
    }

    pub fn rejects(&self, task: TaskIdx, actor: ActorIdx) -> bool {
        self.rejections[task][actor]
    }

    pub fn set_duration(&mut self, task: TaskIdx, phase: Phase, actor: ActorIdx, ticks: Tick) {
        self.durations[task][actor][phase.index()] = ticks.max(1);
    }

    pub fn set_rejection(&mut self, task: TaskIdx, actor: ActorIdx, rejects: bool) {
        self.rejections[task][actor] = rejects;
    }
}

/// [`RealizedOutcomes::sample`] for a job that has not been validated yet.
pub fn sample_outcomes(job: &Job, seed: u64) -> Result<RealizedOutcomes, ValidationReport> {
    Ok(RealizedOutcomes::sample(&Instance::new(job.clone())?, seed))
}

/// One draw from the mixture: the failure component with its probability, the
/// normal one otherwise; rounded to the nearest tick and at least one tick.
pub fn sample_duration(dist: &DurationDist, rng: &mut StreamRng) -> Tick {
    let u: f64 = rng.random();
    let (mean, std) = if u < dist.failure_probability {
        (dist.failure_mean, dist.failure_std)
    } else {
        (dist.normal_mean, dist.normal_std)
    };
    let x = Normal::new(mean, std).map(|n| n.sample(rng)).unwrap_or(mean);
    round_ticks(x)
}

fn round_ticks(x: f64) -> Tick {
    if !x.is_finite() || x < 1.5 {
        return 1;
    }
    x.round().min(f64::from(Tick::MAX / 4)) as Tick
}

/// The job as a controller sees it when estimates are themselves uncertain:
/// every estimate is redrawn from the true distribution of the task's first
/// eligible actor. Structure, distributions and rejection probabilities are kept.
pub fn resample_estimates(instance: &Instance, seed: u64) -> Job {
    let mut rng = stream(seed, Stream::Estimates);
    let mut job = instance.job().clone();
    for (t, task) in job.tasks.iter_mut().enumerate() {
        let a = instance.eligible(t)[0];
        let mut est = [0; 3];
        for phase in Phase::ALL {
            est[phase.index()] = sample_duration(&instance.distribution(t, phase, a), &mut rng);
        }
        task.estimates = PhaseEstimates::new(est[0], est[1], est[2]);
    }
    let serial: Tick = job.tasks.iter().map(|t| t.estimates.total()).sum();
    job.horizon = job.horizon.max(serial.saturating_mul(4));
    job
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn dist(mean: f64, failure_probability: f64) -> DurationDist {
        DurationDist { failure_probability, ..DurationDist::from_estimate(mean as Tick) }
    }

    #[test]
    fn rounding_clamps_to_one_tick() {
        assert_eq!(round_ticks(-3.0), 1);
        assert_eq!(round_ticks(0.2), 1);
        assert_eq!(round_ticks(1.49), 1);
        assert_eq!(round_ticks(1.5), 2);
        assert_eq!(round_ticks(7.4), 7);
        assert_eq!(round_ticks(f64::NAN), 1);
    }

    #[test]
    fn without_failures_draws_stay_near_the_normal_mode() {
        let mut rng = stream(3, Stream::Outcomes);
        let d = dist(20.0, 0.0);
        for _ in 0..2000 {
            let x = sample_duration(&d, &mut rng);
            // 10 standard deviations of the normal component.
            assert!((0..=40).contains(&x), "{x}");
        }
    }

    #[test]
    fn failure_mode_frequency_matches_probability() {
        let mut rng = stream(11, Stream::Outcomes);
        let d = dist(10.0, 0.25);
        let n = 20_000;
        // The threshold lies 5 normal and 2.5 failure standard deviations from the modes.
        let failures = (0..n).filter(|_| sample_duration(&d, &mut rng) >= 15).count();
        let rate = failures as f64 / n as f64;
        assert!((rate - 0.25).abs() < 0.015, "{rate}");
    }
}
