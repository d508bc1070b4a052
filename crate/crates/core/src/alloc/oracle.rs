use std::collections::HashSet;

use crate::model::RequirementMatrix;

use super::bmf::check_bmf;
use super::{validate_multiplicities, AllocError};

/// Grid points that satisfy the bottleneck-max conditions up to grid-scaled
/// tolerances.
#[derive(Debug, Clone)]
pub struct OracleGrid {
    pub step: f64,
    /// Integer grid coordinates; `φ_k = coords[k] · step`.
    pub coords: Vec<Vec<u32>>,
}

impl OracleGrid {
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.coords
            .iter()
            .map(|c| c.iter().map(|&i| f64::from(i) * self.step).collect())
    }

    /// Smallest sup-norm distance from `phi` to a grid point.
    pub fn nearest_distance(&self, phi: &[f64]) -> Option<f64> {
        self.points()
            .map(|p| p.iter().zip(phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .min_by(f64::total_cmp)
    }

    /// Number of connected clusters, with points adjacent when every
    /// coordinate differs by at most one step.
    pub fn clusters(&self) -> usize {
        let set: HashSet<&Vec<u32>> = self.coords.iter().collect();
        let mut seen: HashSet<&Vec<u32>> = HashSet::new();
        let mut count = 0;
        for start in &self.coords {
            if !seen.insert(start) {
                continue;
            }
            count += 1;
            let mut stack = vec![start.clone()];
            while let Some(p) = stack.pop() {
                for n in neighbours(&p) {
                    if let Some(&q) = set.get(&n) {
                        if seen.insert(q) {
                            stack.push(n);
                        }
                    }
                }
            }
        }
        count
    }
}

fn neighbours(p: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &c in p {
        let mut next = Vec::with_capacity(out.len() * 3);
        for prefix in &out {
            for d in [-1i64, 0, 1] {
                let v = i64::from(c) + d;
                if v >= 0 {
                    let mut q = prefix.clone();
                    q.push(v as u32);
                    next.push(q);
                }
            }
        }
        out = next;
    }
    out.retain(|q| q.as_slice() != p);
    out
}

/// Exhaustive grid search for bottleneck max fair points (K, J ≤ 3).
///
/// A point is accepted when capacity and saturation hold within
/// `step · max_j Σ_k n_k a_kj` and shares are maximal within `step`, which is
/// enough for the grid point nearest any exact solution to qualify.
pub fn bmf_oracle(req: &RequirementMatrix, mult: &[u32], step: f64) -> Result<OracleGrid, AllocError> {
    validate_multiplicities(req, mult)?;
    if req.classes() > 3 || req.resources() > 3 {
        return Err(AllocError::OracleTooLarge {
            reason: format!(
                "{} classes x {} resources (limit 3 x 3)",
                req.classes(),
                req.resources()
            ),
        });
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(AllocError::OracleTooLarge {
            reason: format!("grid step {step} outside (0, 1]"),
        });
    }
    let widest = (0..req.resources())
        .map(|j| {
            (0..req.classes())
                .map(|k| f64::from(mult[k]) * req.get(k, j))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let load_tol = step * widest;
    let share_tol = step;

    let limits: Vec<u32> = mult
        .iter()
        .map(|&n| (1.0 / (f64::from(n) * step)).ceil() as u32 + 1)
        .collect();
    let mut coords = Vec::new();
    let mut current = vec![1u32; req.classes()];
    let mut phi = vec![0.0; req.classes()];
    if req.classes() == 0 {
        return Ok(OracleGrid { step, coords });
    }
    'outer: loop {
        for (p, &c) in phi.iter_mut().zip(&current) {
            *p = f64::from(c) * step;
        }
        if check_bmf(req, mult, &phi, load_tol, share_tol).satisfied {
            coords.push(current.clone());
        }
        let mut k = current.len();
        loop {
            if k == 0 {
                break 'outer;
            }
            k -= 1;
            current[k] += 1;
            if current[k] <= limits[k] {
                break;
            }
            current[k] = 1;
        }
    }
    Ok(OracleGrid { step, coords })
}
