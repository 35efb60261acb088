use rand::Rng as _;
use rand_distr::{Distribution, Exp};

use super::{Env, Transition};
use crate::{rng_from_seed, Error, Polytope, Result, Rng};

/// Max compute cycles per second of the nine servers.
pub const SERVER_SPEEDS: [f64; 9] = [
    2_836_258_583.0,
    855_913_878.0,
    652_109_364.0,
    789_819_414.0,
    3_187_852_760.0,
    974_311_629.0,
    2_005_143_973.0,
    1_481_875_307.0,
    2_216_715_088.0,
];

/// Per user: (payload bits, required cycles) of each job it creates.
pub const USER_JOBS: [(f64, f64); 9] = [
    (587_168.0, 1_690_694.0),
    (240_447.0, 1_092_255.0),
    (257_396.0, 867_139.0),
    (364_400.0, 819_594.0),
    (387_953.0, 3_463_247.0),
    (309_269.0, 2_300_810.0),
    (44_420.0, 1_129_119.0),
    (318_062.0, 1_092_402.0),
    (490_880.0, 1_044_736.0),
];

/// Jobs per second created by each user (10 per 0.01 s interval).
pub const USER_RATE: f64 = 10.0 / 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeConfig {
    pub horizon: usize,
    pub deadline_factor: f64,
    /// Backlogs are observed in units of this many deadlines, clipped at 1.
    pub backlog_scale: f64,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        ComputeConfig { horizon: 512, deadline_factor: 2.0, backlog_scale: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub user: usize,
    pub payload: f64,
    pub cycles: f64,
    pub deadline: f64,
}

/// Jobs arrive as a merged Poisson stream from nine users; each decision
/// splits the next job over FIFO server queues. A sub-job earns its fraction
/// as reward if it finishes by the job's deadline.
#[derive(Debug, Clone)]
pub struct ComputeEnv {
    polytope: Polytope,
    cfg: ComputeConfig,
    seed: u64,
    rng: Rng,
    deadline: f64,
    backlog: [f64; 9],
    job: Job,
    t: usize,
    issued: f64,
    completed: f64,
}

impl ComputeEnv {
    pub fn new(polytope: Polytope, cfg: ComputeConfig, seed: u64) -> Result<Self> {
        if polytope.n() != SERVER_SPEEDS.len() {
            return Err(Error::DimensionMismatch(format!(
                "compute env has {} servers, polytope has {} entities",
                SERVER_SPEEDS.len(),
                polytope.n()
            )));
        }
        if cfg.horizon == 0 || !(cfg.deadline_factor > 0.0) || !(cfg.backlog_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("bad compute env config {cfg:?}")));
        }
        let mean_cycles = USER_JOBS.iter().map(|j| j.1).sum::<f64>() / USER_JOBS.len() as f64;
        let fastest = SERVER_SPEEDS.iter().cloned().fold(0.0, f64::max);
        let deadline = cfg.deadline_factor * mean_cycles / fastest;
        let mut env = ComputeEnv {
            polytope,
            cfg,
            seed,
            rng: rng_from_seed(seed),
            deadline,
            backlog: [0.0; 9],
            job: Job { user: 0, payload: 0.0, cycles: 0.0, deadline },
            t: 0,
            issued: 0.0,
            completed: 0.0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    pub fn current_job(&self) -> Job {
        self.job
    }

    /// Replaces the pending job.
    pub fn set_job(&mut self, job: Job) {
        self.job = job;
    }

    /// Remaining cycles per server queue.
    pub fn backlog(&self) -> &[f64; 9] {
        &self.backlog
    }

    pub fn issued_cycles(&self) -> f64 {
        self.issued
    }

    pub fn completed_cycles(&self) -> f64 {
        self.completed
    }

    /// Reward the current job would earn under `action`.
    pub fn job_reward(&self, action: &[f64]) -> f64 {
        let mut reward = 0.0;
        for (i, &f) in action.iter().enumerate() {
            let f = f.max(0.0);
            if f == 0.0 {
                continue;
            }
            let finish = (self.backlog[i] + f * self.job.cycles) / SERVER_SPEEDS[i];
            if finish <= self.job.deadline {
                reward += f;
            }
        }
        reward
    }

    fn next_job(&mut self) {
        let user = self.rng.random_range(0..USER_JOBS.len());
        let (payload, cycles) = USER_JOBS[user];
        self.job = Job { user, payload, cycles, deadline: self.deadline };
    }

    fn advance(&mut self, dt: f64) {
        for (b, &s) in self.backlog.iter_mut().zip(&SERVER_SPEEDS) {
            let done = b.min(s * dt);
            *b -= done;
            self.completed += done;
        }
    }
}

impl Env for ComputeEnv {
    fn polytope(&self) -> &Polytope {
        &self.polytope
    }

    fn state_dim(&self) -> usize {
        SERVER_SPEEDS.len() + 3
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = rng_from_seed(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed);
        self.backlog = [0.0; 9];
        self.t = 0;
        self.issued = 0.0;
        self.completed = 0.0;
        self.next_job();
        self.observe()
    }

    fn observe(&self) -> Vec<f64> {
        let scale = self.cfg.backlog_scale * self.deadline;
        let max_cycles = USER_JOBS.iter().map(|j| j.1).fold(0.0, f64::max);
        let max_payload = USER_JOBS.iter().map(|j| j.0).fold(0.0, f64::max);
        let mut s: Vec<f64> =
            self.backlog.iter().zip(&SERVER_SPEEDS).map(|(b, v)| (b / v / scale).min(1.0)).collect();
        s.push(self.job.cycles / max_cycles);
        s.push(self.job.payload / max_payload);
        s.push(self.job.deadline / scale);
        s
    }

    fn transition(&mut self, action: &[f64]) -> Transition {
        let reward = self.job_reward(action);
        for (b, &f) in self.backlog.iter_mut().zip(action) {
            let sub = f.max(0.0) * self.job.cycles;
            *b += sub;
            self.issued += sub;
        }
        let rate = USER_RATE * USER_JOBS.len() as f64;
        let dt = Exp::new(rate).expect("positive rate").sample(&mut self.rng);
        self.advance(dt);
        self.next_job();
        self.t += 1;
        let done = self.t >= self.cfg.horizon;
        Transition { state: self.observe(), reward, done }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> ComputeEnv {
        ComputeEnv::new(Polytope::simplex(9).unwrap(), ComputeConfig::default(), 1).unwrap()
    }

    fn one_hot(i: usize) -> Vec<f64> {
        let mut a = vec![0.0; 9];
        a[i] = 1.0;
        a
    }

    #[test]
    fn fresh_state_has_empty_queues() {
        let e = env();
        let s = e.observe();
        assert_eq!(s.len(), 12);
        assert!(s[..9].iter().all(|&v| v == 0.0));
        assert!(s[9] > 0.0 && s[10] > 0.0 && s[11] > 0.0);
    }

    #[test]
    fn small_job_on_fastest_server_meets_deadline() {
        let mut e = env();
        let d = e.deadline();
        e.set_job(Job { user: 0, payload: 1.0, cycles: 1000.0, deadline: d });
        assert!(1000.0 / SERVER_SPEEDS[4] < d);
        assert_eq!(e.step(&one_hot(4)).unwrap().reward, 1.0);
    }

    #[test]
    fn backlog_past_deadline_earns_nothing() {
        let mut e = env();
        let d = e.deadline();
        e.set_job(Job { user: 0, payload: 1.0, cycles: SERVER_SPEEDS[2] * d * 3.0, deadline: d });
        e.step(&one_hot(2)).unwrap();
        assert!(e.backlog()[2] / SERVER_SPEEDS[2] > d);
        let mut a = vec![0.0; 9];
        a[2] = 0.5;
        a[4] = 0.5;
        let r = e.job_reward(&a);
        assert!(r <= 0.5 + 1e-12, "{r}");
    }

    #[test]
    fn single_server_allocation_fills_one_queue() {
        let mut e = env();
        e.set_job(Job { user: 4, payload: 1.0, cycles: 3.0e7, deadline: e.deadline() });
        let s = e.step(&one_hot(1)).unwrap().state;
        assert_eq!(s[..9].iter().filter(|&&v| v > 0.0).count(), 1);
        assert!(s[1] > 0.0);
    }

    #[test]
    fn cycles_are_conserved() {
        let mut e = env();
        let mut rng = rng_from_seed(3);
        for _ in 0..300 {
            let a = crate::polytope::flat_dirichlet(&mut rng, 9);
            e.step(&a).unwrap();
            let queued: f64 = e.backlog().iter().sum();
            assert!((e.issued_cycles() - e.completed_cycles() - queued).abs() <= 1e-6 * e.issued_cycles());
            assert!(e.backlog().iter().all(|&b| b >= 0.0));
        }
    }

    #[test]
    fn episode_is_reproducible() {
        let run = || {
            let mut e = env();
            e.reset(11);
            let mut out = Vec::new();
            for _ in 0..512 {
                let t = e.step(&[1.0 / 9.0; 9]).unwrap();
                out.push(t.reward.to_bits());
                if t.done {
                    break;
                }
            }
            out
        };
        let a = run();
        assert_eq!(a.len(), 512);
        assert_eq!(a, run());
    }
}
