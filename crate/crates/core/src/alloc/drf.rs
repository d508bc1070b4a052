use crate::model::{Allocation, RequirementMatrix};

use super::{validate_multiplicities, AllocError};

/// Dominant resource fairness by progressive filling.
///
/// All unfrozen classes rise together (with normalized rows their rate equals
/// their dominant share). When a resource saturates, every unfrozen class with
/// a positive requirement on it freezes. Each round saturates at least one
/// resource, so there are at most J rounds.
pub fn solve_drf(req: &RequirementMatrix, mult: &[u32]) -> Result<Allocation, AllocError> {
    validate_multiplicities(req, mult)?;
    let classes = req.classes();
    let resources = req.resources();
    let mut phi = vec![0.0; classes];
    let mut frozen = vec![false; classes];

    while frozen.iter().any(|f| !f) {
        let mut level = f64::INFINITY;
        for j in 0..resources {
            let mut fixed = 0.0;
            let mut rising = 0.0;
            for k in 0..classes {
                let usage = f64::from(mult[k]) * req.get(k, j);
                if frozen[k] {
                    fixed += usage * phi[k];
                } else {
                    rising += usage;
                }
            }
            if rising > 0.0 {
                level = level.min((1.0 - fixed).max(0.0) / rising);
            }
        }
        // unreachable for valid rows: every class has a dominant resource
        if !level.is_finite() {
            break;
        }
        for k in 0..classes {
            if !frozen[k] {
                phi[k] = level;
            }
        }
        let loads = req.resource_loads(&phi, mult);
        let mut progressed = false;
        for (j, load) in loads.iter().enumerate() {
            if *load < 1.0 - 1e-12 {
                continue;
            }
            for k in 0..classes {
                if !frozen[k] && req.get(k, j) > 0.0 {
                    frozen[k] = true;
                    progressed = true;
                }
            }
        }
        if !progressed {
            // rounding left the argmin resource a hair below 1; freeze on it anyway
            let (j, _) = loads
                .iter()
                .enumerate()
                .filter(|(j, _)| (0..classes).any(|k| !frozen[k] && req.get(k, *j) > 0.0))
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("an unfrozen class uses some resource");
            for k in 0..classes {
                if req.get(k, j) > 0.0 {
                    frozen[k] = true;
                }
            }
        }
    }

    Ok(Allocation::new(req, phi, mult.to_vec(), None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize;

    /// Literal small-step water filling, independent of the round-based solver.
    fn brute_force_water_fill(req: &RequirementMatrix, mult: &[u32], step: f64) -> Vec<f64> {
        let classes = req.classes();
        let mut phi = vec![0.0; classes];
        let mut frozen = vec![false; classes];
        while frozen.iter().any(|f| !f) {
            let trial: Vec<f64> = (0..classes)
                .map(|k| if frozen[k] { phi[k] } else { phi[k] + step })
                .collect();
            let loads = req.resource_loads(&trial, mult);
            let over: Vec<usize> = (0..loads.len()).filter(|&j| loads[j] > 1.0).collect();
            if over.is_empty() {
                phi = trial;
                continue;
            }
            for j in over {
                for k in 0..classes {
                    if req.get(k, j) > 0.0 {
                        frozen[k] = true;
                    }
                }
            }
        }
        phi
    }

    fn matrix(rows: &[&[f64]]) -> RequirementMatrix {
        RequirementMatrix::new(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_resource_is_equal_split() {
        let a = solve_drf(&matrix(&[&[1.0], &[1.0]]), &[1, 1]).unwrap();
        assert_eq!(a.phi, vec![0.5, 0.5]);
        assert_eq!(a.bottlenecks, vec![0]);
    }

    #[test]
    fn symmetric_three_class_saturates_both() {
        let req = matrix(&[&[0.1, 1.0], &[1.0, 0.1], &[1.0, 1.0]]);
        let a = solve_drf(&req, &[1, 1, 1]).unwrap();
        for p in &a.phi {
            assert!((p - 1.0 / 2.1).abs() < 1e-12);
        }
        let oracle = brute_force_water_fill(&req, &[1, 1, 1], 1e-6);
        for (p, o) in a.phi.iter().zip(&oracle) {
            assert!((p - o).abs() < 1e-5, "{p} vs oracle {o}");
        }
        assert_eq!(a.bottlenecks, vec![0, 1]);
    }

    #[test]
    fn disjoint_resources_fully_used() {
        let a = solve_drf(&matrix(&[&[1.0, 0.0], &[0.0, 1.0]]), &[1, 1]).unwrap();
        assert_eq!(a.phi, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_requirement_class_keeps_rising() {
        // class 2 never touches resource 0, so it is not frozen when 0 saturates
        let req = matrix(&[&[1.0, 0.5], &[1.0, 0.0], &[0.0, 1.0]]);
        let a = solve_drf(&req, &[1, 1, 1]).unwrap();
        let oracle = brute_force_water_fill(&req, &[1, 1, 1], 1e-6);
        assert!((a.phi[0] - 0.5).abs() < 1e-12);
        assert!((a.phi[1] - 0.5).abs() < 1e-12);
        assert!((a.phi[2] - 0.75).abs() < 1e-12);
        for (p, o) in a.phi.iter().zip(&oracle) {
            assert!((p - o).abs() < 1e-5);
        }
    }

    #[test]
    fn multiplicities_match_expanded_instance() {
        let raw = vec![vec![0.3, 1.0], vec![1.0, 0.7]];
        let req = normalize(&raw).unwrap().matrix;
        let grouped = solve_drf(&req, &[2, 3]).unwrap();
        let expanded = req.select(&[0, 0, 1, 1, 1]);
        let flat = solve_drf(&expanded, &[1; 5]).unwrap();
        assert!((grouped.phi[0] - flat.phi[0]).abs() < 1e-12);
        assert!((grouped.phi[1] - flat.phi[4]).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_mixed_instances() {
        let cases: &[&[&[f64]]] = &[
            &[&[1.0, 0.2, 0.4], &[0.3, 1.0, 0.0], &[0.5, 0.5, 1.0]],
            &[&[1.0, 0.9], &[0.9, 1.0], &[0.0, 1.0], &[1.0, 0.0]],
            &[&[0.25, 1.0], &[1.0, 0.25]],
        ];
        for rows in cases {
            let req = matrix(rows);
            let mult = vec![1; req.classes()];
            let a = solve_drf(&req, &mult).unwrap();
            let oracle = brute_force_water_fill(&req, &mult, 1e-6);
            for (p, o) in a.phi.iter().zip(&oracle) {
                assert!((p - o).abs() < 1e-5, "{rows:?}: {p} vs {o}");
            }
        }
    }
}
