//! Multi-class M/G/1 priority-queue statistics for sensed information
//! awaiting upload.
//!
//! All quantities are instantaneous steady-state values recomputed each
//! slot from that slot's (rate, priority) decisions; no queue state
//! carries across slots. The closed form is implemented exactly as the
//! system model states it; [`des`] provides an independent event-driven
//! oracle used for verification.

use crate::types::CategoryParams;
use crate::{Error, Result};

/// Per-class queue statistics at one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassQueueStats {
    /// Mean inter-arrival time 1/lambda, seconds.
    pub inter_arrival_s: f64,
    /// Workload of classes with priority >= this class (incl. itself).
    pub priority_load: f64,
    /// Same sum taken over second moments of service time.
    pub priority_load_m2: f64,
    /// Mean queuing time, seconds.
    pub mean_wait_s: f64,
}

/// Queue statistics for one vehicle at one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueStats {
    /// Total vehicle workload rho = sum lambda * E[ser]; must stay < 1.
    pub utilization: f64,
    pub per_class: Vec<ClassQueueStats>,
}

/// Mean inter-arrival time between adjacent data items of a class.
pub fn inter_arrival(arrival_rate: f64) -> Result<f64> {
    if arrival_rate > 0.0 {
        Ok(1.0 / arrival_rate)
    } else {
        Err(Error::InvalidInput(format!(
            "arrival rate must be > 0, got {arrival_rate}"
        )))
    }
}

/// Workload sums per class. The indicator is `priority >= own priority`,
/// so a class always includes itself, and priority ties include each
/// other mutually.
pub fn workloads(categories: &[CategoryParams]) -> Result<QueueStats> {
    for (j, c) in categories.iter().enumerate() {
        if !(c.arrival_rate > 0.0 && c.service_mean_s > 0.0 && c.service_second_moment_s2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "class {j}: rates and service moments must be > 0"
            )));
        }
    }
    let utilization: f64 = categories
        .iter()
        .map(|c| c.arrival_rate * c.service_mean_s)
        .sum();
    if utilization >= 1.0 {
        return Err(Error::Infeasible(format!(
            "vehicle workload {utilization:.6} >= 1 violates queue steady state"
        )));
    }
    let per_class = categories
        .iter()
        .map(|c| {
            let mut load = 0.0;
            let mut load_m2 = 0.0;
            for other in categories {
                if other.priority >= c.priority {
                    load += other.arrival_rate * other.service_mean_s;
                    load_m2 += other.arrival_rate * other.service_second_moment_s2;
                }
            }
            ClassQueueStats {
                inter_arrival_s: 1.0 / c.arrival_rate,
                priority_load: load,
                priority_load_m2: load_m2,
                mean_wait_s: 0.0,
            }
        })
        .collect();
    Ok(QueueStats {
        utilization,
        per_class,
    })
}

/// Mean queuing time of one class given its workload sums:
///
/// wai = [E[ser] + mu / (2 (1 - rho))] / (1 - rho + lambda E[ser]) - E[ser]
///
/// In the single-class case this reduces algebraically to the
/// Pollaczek-Khinchine mean wait lambda E[ser^2] / (2 (1 - rho)).
pub fn waiting_time(class: &CategoryParams, stats: &ClassQueueStats) -> Result<f64> {
    let rho = stats.priority_load;
    if rho >= 1.0 {
        return Err(Error::Infeasible(format!(
            "priority-class workload {rho:.6} >= 1"
        )));
    }
    let ser = class.service_mean_s;
    let denom = 1.0 - rho + class.arrival_rate * ser;
    if !(denom > 0.0) {
        return Err(Error::Infeasible(format!(
            "waiting-time denominator {denom:.6} not positive"
        )));
    }
    let wait = (ser + stats.priority_load_m2 / (2.0 * (1.0 - rho))) / denom - ser;
    if wait < 0.0 {
        if wait > -1e-12 {
            return Ok(0.0);
        }
        return Err(Error::Infeasible(format!(
            "negative waiting time {wait:.3e}"
        )));
    }
    Ok(wait)
}

/// Full per-slot queue statistics for one vehicle.
pub fn queue_stats(categories: &[CategoryParams]) -> Result<QueueStats> {
    let mut stats = workloads(categories)?;
    for (class, cs) in categories.iter().zip(stats.per_class.iter_mut()) {
        cs.mean_wait_s = waiting_time(class, cs)?;
    }
    Ok(stats)
}

pub mod des {
    //! Event-driven single-server non-preemptive priority queue used as a
    //! verification oracle for the closed-form waits. Not part of the
    //! simulation engine.

    use std::collections::BinaryHeap;

    use rand::Rng;
    use rand_distr::{Distribution, Exp, Gamma};

    use crate::{Error, Result};

    /// Service-time distribution matched to (mean, second moment).
    #[derive(Debug, Clone, Copy)]
    pub enum ServiceDist {
        Exponential { mean: f64 },
        Deterministic { value: f64 },
        Gamma { shape: f64, scale: f64 },
    }

    impl ServiceDist {
        /// Picks the family from the moments: zero variance is
        /// deterministic, variance mean^2 is exponential, anything else a
        /// moment-matched gamma.
        pub fn from_moments(mean: f64, second_moment: f64) -> Result<Self> {
            if !(mean > 0.0) {
                return Err(Error::InvalidInput("service mean must be > 0".into()));
            }
            let var = second_moment - mean * mean;
            if var < -1e-12 * mean * mean {
                return Err(Error::InvalidInput(format!(
                    "second moment {second_moment} below mean^2"
                )));
            }
            let var = var.max(0.0);
            if var == 0.0 {
                return Ok(ServiceDist::Deterministic { value: mean });
            }
            if (var - mean * mean).abs() <= 1e-9 * mean * mean {
                return Ok(ServiceDist::Exponential { mean });
            }
            Ok(ServiceDist::Gamma {
                shape: mean * mean / var,
                scale: var / mean,
            })
        }

        fn sample(&self, rng: &mut impl Rng) -> f64 {
            match *self {
                ServiceDist::Exponential { mean } => {
                    Exp::new(1.0 / mean).expect("positive rate").sample(rng)
                }
                ServiceDist::Deterministic { value } => value,
                ServiceDist::Gamma { shape, scale } => {
                    Gamma::new(shape, scale).expect("valid gamma").sample(rng)
                }
            }
        }
    }

    /// One arrival class of the oracle queue.
    #[derive(Debug, Clone, Copy)]
    pub struct DesClass {
        pub arrival_rate: f64,
        pub priority: f64,
        pub service: ServiceDist,
    }

    /// Empirical mean waiting time of one class.
    #[derive(Debug, Clone, Copy)]
    pub struct ClassWait {
        pub mean_s: f64,
        /// Batch-means standard error of the mean.
        pub std_err: f64,
        pub samples: usize,
    }

    struct Waiting {
        priority: f64,
        seq: u64,
        class: usize,
        arrived_at: f64,
    }

    impl PartialEq for Waiting {
        fn eq(&self, other: &Self) -> bool {
            self.seq == other.seq
        }
    }
    impl Eq for Waiting {}
    impl PartialOrd for Waiting {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Waiting {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            // Max-heap: higher priority first, FIFO within equal priority.
            self.priority
                .partial_cmp(&other.priority)
                .expect("finite priorities")
                .then(other.seq.cmp(&self.seq))
        }
    }

    /// Simulates `total_arrivals` served customers and returns per-class
    /// mean waits. The first 5% of served customers are discarded as
    /// warmup; standard errors use batch means because successive waits
    /// are autocorrelated.
    pub fn simulate(
        classes: &[DesClass],
        total_arrivals: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<ClassWait>> {
        if classes.is_empty() || total_arrivals == 0 {
            return Err(Error::InvalidInput("need classes and arrivals".into()));
        }
        let utilization: f64 = classes
            .iter()
            .map(|c| {
                c.arrival_rate
                    * match c.service {
                        ServiceDist::Exponential { mean } => mean,
                        ServiceDist::Deterministic { value } => value,
                        ServiceDist::Gamma { shape, scale } => shape * scale,
                    }
            })
            .sum();
        if utilization >= 1.0 {
            return Err(Error::Infeasible(format!(
                "oracle workload {utilization:.4} >= 1"
            )));
        }

        let mut next_arrival: Vec<f64> = classes
            .iter()
            .map(|c| Exp::new(c.arrival_rate).expect("positive rate").sample(rng))
            .collect();
        let mut queue: BinaryHeap<Waiting> = BinaryHeap::new();
        let mut busy_until: Option<f64> = None;
        let mut seq = 0u64;
        let mut served = 0usize;
        let warmup = total_arrivals / 20;
        let mut waits: Vec<Vec<f64>> = vec![Vec::new(); classes.len()];

        while served < total_arrivals {
            let (next_class, &arrival_t) = next_arrival
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite times"))
                .expect("at least one class");

            match busy_until {
                Some(done) if done <= arrival_t => {
                    // Service completion; start the highest-priority waiter.
                    busy_until = queue.pop().map(|head| {
                        served += 1;
                        if served > warmup {
                            waits[head.class].push(done - head.arrived_at);
                        }
                        done + classes[head.class].service.sample(rng)
                    });
                }
                _ => {
                    let class = next_class;
                    next_arrival[class] = arrival_t
                        + Exp::new(classes[class].arrival_rate)
                            .expect("positive rate")
                            .sample(rng);
                    seq += 1;
                    queue.push(Waiting {
                        priority: classes[class].priority,
                        seq,
                        class,
                        arrived_at: arrival_t,
                    });
                    if busy_until.is_none() {
                        let head = queue.pop().expect("just pushed");
                        served += 1;
                        if served > warmup {
                            waits[head.class].push(arrival_t - head.arrived_at);
                        }
                        busy_until =
                            Some(arrival_t + classes[head.class].service.sample(rng));
                    }
                }
            }
        }

        Ok(waits.iter().map(|w| summarize(w)).collect())
    }

    fn summarize(waits: &[f64]) -> ClassWait {
        let n = waits.len();
        if n == 0 {
            return ClassWait {
                mean_s: 0.0,
                std_err: 0.0,
                samples: 0,
            };
        }
        let mean = waits.iter().sum::<f64>() / n as f64;
        let n_batches = 40.min(n.max(1));
        let batch_len = (n / n_batches).max(1);
        let batch_means: Vec<f64> = waits
            .chunks(batch_len)
            .filter(|c| c.len() == batch_len)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let b = batch_means.len();
        let std_err = if b > 1 {
            let bm = batch_means.iter().sum::<f64>() / b as f64;
            let var = batch_means.iter().map(|m| (m - bm) * (m - bm)).sum::<f64>()
                / (b as f64 - 1.0);
            (var / b as f64).sqrt()
        } else {
            f64::INFINITY
        };
        ClassWait {
            mean_s: mean,
            std_err,
            samples: n,
        }
    }
}
