use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::alloc::AllocObjective;
use crate::model::RequirementMatrix;

use super::{AllocationCache, DynamicsError};

/// One transaction of a recorded arrival sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceArrival {
    pub time: f64,
    pub class: usize,
    pub work: f64,
}

#[derive(Debug, Clone, Copy)]
struct Finish(f64, usize);

impl PartialEq for Finish {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Finish {}
impl PartialOrd for Finish {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Finish {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Fluid-model completion times for a given arrival sequence.
///
/// Transactions in progress share resources according to `objective`,
/// re-solved at every arrival and departure; each carries its own amount
/// of work. Feeding the arrivals of a packet-level run gives a fluid
/// reference driven by the same randomness. Arrivals must be sorted by time.
pub fn replay(
    req: &RequirementMatrix,
    objective: AllocObjective,
    arrivals: &[TraceArrival],
) -> Result<Vec<f64>, DynamicsError> {
    let classes = req.classes();
    for (i, a) in arrivals.iter().enumerate() {
        if a.class >= classes || !(a.work > 0.0) || !a.time.is_finite() {
            return Err(DynamicsError::InvalidConfig(format!("bad arrival {i}: {a:?}")));
        }
        if i > 0 && a.time < arrivals[i - 1].time {
            return Err(DynamicsError::InvalidConfig(format!("arrival {i} is out of order")));
        }
    }
    let mut cache = AllocationCache::new(req.clone(), objective);
    let mut completion = vec![f64::NAN; arrivals.len()];
    let mut counts = vec![0u32; classes];
    // work attained by each class-k transaction present since time zero;
    // a transaction leaves when this reaches its entry value plus its work
    let mut attained = vec![0.0f64; classes];
    let mut finishing: Vec<BinaryHeap<Reverse<Finish>>> = vec![BinaryHeap::new(); classes];
    let mut now = arrivals.first().map_or(0.0, |a| a.time);
    let mut next = 0;
    loop {
        let phi = cache.rates(&counts)?.to_vec();
        let departure = (0..classes)
            .filter_map(|k| {
                let Reverse(Finish(target, id)) = *finishing[k].peek()?;
                Some(((target - attained[k]).max(0.0) / phi[k], k, id))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let arrival_dt = arrivals.get(next).map(|a| a.time - now);
        let dt = match (departure, arrival_dt) {
            (None, None) => break,
            (Some(d), None) => d.0,
            (None, Some(a)) => a,
            (Some(d), Some(a)) => d.0.min(a),
        };
        for k in 0..classes {
            attained[k] += phi[k] * dt;
        }
        now += dt;
        match (departure, arrival_dt) {
            (Some((d, k, id)), a) if a.is_none_or(|a| d < a) => {
                finishing[k].pop();
                counts[k] -= 1;
                completion[id] = now;
            }
            _ => {
                let a = arrivals[next];
                // new state's rates apply from here; enter at the current level
                finishing[a.class].push(Reverse(Finish(attained[a.class] + a.work, next)));
                counts[a.class] += 1;
                now = a.time;
                next += 1;
            }
        }
    }
    Ok(completion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_transactions_finish_after_their_work() {
        let req = RequirementMatrix::new(&[vec![1.0, 0.5]]).unwrap();
        let arrivals = [
            TraceArrival { time: 0.0, class: 0, work: 3.0 },
            TraceArrival { time: 10.0, class: 0, work: 2.0 },
        ];
        let done = replay(&req, AllocObjective::Pf, &arrivals).unwrap();
        assert!((done[0] - 3.0).abs() < 1e-12 && (done[1] - 12.0).abs() < 1e-12, "{done:?}");
    }

    #[test]
    fn processor_sharing_on_one_resource() {
        // two jobs share: both at rate 1/2 until the short one leaves at t=2
        let req = RequirementMatrix::new(&[vec![1.0], vec![1.0]]).unwrap();
        let arrivals = [
            TraceArrival { time: 0.0, class: 0, work: 3.0 },
            TraceArrival { time: 0.0, class: 1, work: 1.0 },
        ];
        for objective in AllocObjective::ALL {
            let done = replay(&req, objective, &arrivals).unwrap();
            assert!((done[1] - 2.0).abs() < 1e-12);
            assert!((done[0] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pf_shares_follow_the_allocation() {
        // φ = (2/3, 2/3) while both are present
        let req = RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap();
        let arrivals = [
            TraceArrival { time: 0.0, class: 0, work: 2.0 },
            TraceArrival { time: 1.0, class: 1, work: 2.0 },
        ];
        let done = replay(&req, AllocObjective::Pf, &arrivals).unwrap();
        // class 0: 1 unit alone, the rest at 2/3 → t = 1 + 1.5
        assert!((done[0] - 2.5).abs() < 1e-9);
        // class 1: 1 unit by t = 2.5, then alone
        assert!((done[1] - 3.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_unsorted_arrivals() {
        let req = RequirementMatrix::new(&[vec![1.0]]).unwrap();
        let arrivals = [
            TraceArrival { time: 1.0, class: 0, work: 1.0 },
            TraceArrival { time: 0.0, class: 0, work: 1.0 },
        ];
        assert!(replay(&req, AllocObjective::Drf, &arrivals).is_err());
    }
}
