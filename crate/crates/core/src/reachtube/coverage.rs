use rand::Rng;

use crate::error::{Error, Result};
use crate::reachtube::sample_initial_surface;
use crate::sampling::distance;

/// Stochastic cap: the part of the initial sphere within `radius` of `center`.
/// An infinite radius covers the whole sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Cap {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Caps on the sphere of `radius` around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereCaps {
    pub center: Vec<f64>,
    pub radius: f64,
    pub caps: Vec<Cap>,
}

pub const MIN_COVERAGE_SAMPLES: usize = 100;

/// Monte Carlo estimate of the fraction of the sphere covered by the union of caps.
pub fn surface_coverage<R: Rng + ?Sized>(
    caps: &SphereCaps,
    coverage_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if coverage_samples < MIN_COVERAGE_SAMPLES {
        return Err(Error::Config(format!(
            "coverage needs at least {MIN_COVERAGE_SAMPLES} samples, got {coverage_samples}"
        )));
    }
    let probes = sample_initial_surface(&caps.center, caps.radius, coverage_samples, rng)?;
    let hits = probes
        .iter()
        .filter(|p| caps.caps.iter().any(|c| distance(p, &c.center) <= c.radius))
        .count();
    Ok(hits as f64 / coverage_samples as f64)
}

/// Fixed probe set with precomputed nearest cap centers, so the covered fraction can be
/// re-evaluated cheaply for many radius assignments over the same centers.
pub(crate) struct CoverageIndex {
    dim: usize,
    probes: Vec<f64>,
    centers: Vec<f64>,
    k: usize,
    neighbors: Vec<(u32, f64)>,
    kth: Vec<f64>,
}

const NEIGHBORS: usize = 64;

impl CoverageIndex {
    pub(crate) fn new(probes: &[Vec<f64>], centers: &[Vec<f64>]) -> Self {
        let dim = probes.first().map_or(0, Vec::len);
        let k = NEIGHBORS.min(centers.len());
        let mut neighbors = Vec::with_capacity(probes.len() * k);
        let mut kth = Vec::with_capacity(probes.len());
        let mut scratch: Vec<(u32, f64)> = Vec::with_capacity(centers.len());
        for p in probes {
            scratch.clear();
            scratch.extend(
                centers
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (j as u32, distance(p, c))),
            );
            if k < scratch.len() {
                scratch.select_nth_unstable_by(k, |a, b| a.1.total_cmp(&b.1));
                kth.push(scratch[k].1);
            } else {
                kth.push(f64::INFINITY);
            }
            let head = &mut scratch[..k];
            head.sort_by(|a, b| a.1.total_cmp(&b.1));
            neighbors.extend_from_slice(head);
        }
        CoverageIndex {
            dim,
            probes: probes.concat(),
            centers: centers.concat(),
            k,
            neighbors,
            kth,
        }
    }

    /// Fraction of probes inside at least one cap, where cap `j` has radius `radii[j]`.
    pub(crate) fn covered_fraction(&self, radii: &[f64]) -> f64 {
        let n_probes = self.kth.len();
        if n_probes == 0 || radii.is_empty() {
            return 0.0;
        }
        let r_max = radii.iter().copied().fold(0.0, f64::max);
        let mut by_radius: Vec<u32> = (0..radii.len() as u32).collect();
        by_radius.sort_by(|&a, &b| radii[b as usize].total_cmp(&radii[a as usize]));

        let mut hits = 0usize;
        for i in 0..n_probes {
            let near = &self.neighbors[i * self.k..(i + 1) * self.k];
            let mut covered = false;
            for &(j, d) in near {
                if d > r_max {
                    break;
                }
                if d <= radii[j as usize] {
                    covered = true;
                    break;
                }
            }
            if !covered {
                // Only a cap wider than the k-th neighbor distance can cover from further out.
                let probe = &self.probes[i * self.dim..(i + 1) * self.dim];
                for &j in &by_radius {
                    let r = radii[j as usize];
                    if r < self.kth[i] {
                        break;
                    }
                    let c = &self.centers[j as usize * self.dim..(j as usize + 1) * self.dim];
                    if distance(probe, c) <= r {
                        covered = true;
                        break;
                    }
                }
            }
            hits += usize::from(covered);
        }
        hits as f64 / n_probes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn empty_and_full_cover() {
        let mut rng = SeedTree::new(0).stream("cov");
        let mut caps = SphereCaps {
            center: vec![0.0, 0.0, 0.0],
            radius: 1.0,
            caps: vec![],
        };
        assert_eq!(surface_coverage(&caps, 500, &mut rng).unwrap(), 0.0);
        caps.caps.push(Cap {
            center: vec![1.0, 0.0, 0.0],
            radius: 2.0,
        });
        assert_eq!(surface_coverage(&caps, 500, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn index_matches_brute_force() {
        let mut rng = SeedTree::new(5).stream("idx");
        let c = [0.0, 0.0, 0.0, 0.0];
        let centers = sample_initial_surface(&c, 1.0, 300, &mut rng).unwrap();
        let probes = sample_initial_surface(&c, 1.0, 400, &mut rng).unwrap();
        let radii: Vec<f64> = (0..300)
            .map(|j| if j == 7 { 1.2 } else { 0.05 + 0.3 * rng.random::<f64>() })
            .collect();
        let index = CoverageIndex::new(&probes, &centers);
        let brute = probes
            .iter()
            .filter(|p| centers.iter().zip(&radii).any(|(q, r)| distance(p, q) <= *r))
            .count() as f64
            / probes.len() as f64;
        assert_eq!(index.covered_fraction(&radii), brute);
    }
}
