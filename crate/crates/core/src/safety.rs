//! Tube-in-tube containment.
//!
//! An imitator tube whose every slice lies inside the matching expert slice is as safe
//! as the expert, with the probability carried by the imitator tube's confidence.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reachtube::{ReachTube, TubeSlice};

/// Slack on the outer membership value when deciding containment.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-10;

/// Largest outer membership value over the inner ellipsoid and a point attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentWitness {
    pub max_membership: f64,
    pub point: Vec<f64>,
}

impl ContainmentWitness {
    pub fn contained(&self) -> bool {
        self.max_membership <= 1.0 + CONTAINMENT_TOLERANCE
    }
}

/// Maximizes the outer membership over the inner ellipsoid.
///
/// Writing inner points as `c_in + r_in A_in^-1 u` with `|u| <= 1`, the squared outer
/// distance is `|M u + b|^2`. This convex function peaks on the unit sphere, where the
/// maximizer solves `(nu I - Q) u = g` with `Q = M^T M`, `g = M^T b` and `nu >= λ_max(Q)`.
/// `nu` is found by bisection on the secular equation `|u(nu)| = 1`; when the root sits at
/// `λ_max` (the hard case) the top eigenvector fills the remaining norm.
pub fn max_outer_membership(inner: &TubeSlice, outer: &TubeSlice) -> Result<ContainmentWitness> {
    let n = inner.dim();
    if outer.dim() != n {
        return Err(Error::shape(n, outer.dim()));
    }
    let a_in_inv = inner
        .metric()
        .try_inverse()
        .ok_or_else(|| Error::Validation("inner metric is singular".into()))?;
    let a_out = outer.metric();
    let m: DMatrix<f64> = &a_out * &a_in_inv * inner.r;
    let dc = DVector::from_iterator(n, inner.c.iter().zip(&outer.c).map(|(a, b)| a - b));
    let b = &a_out * dc;
    let q = m.transpose() * &m;
    let g = m.transpose() * &b;

    let eig = SymmetricEigen::new(q);
    let (top, &lambda_max) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    // Coordinates of g in the eigenbasis.
    let gt = eig.eigenvectors.transpose() * &g;
    let norm_at = |nu: f64| -> f64 {
        gt.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(gi, li)| {
                let den = nu - li;
                if den > 0.0 {
                    (gi / den).powi(2)
                } else if *gi == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .sum::<f64>()
            .sqrt()
    };

    let g_norm = g.norm();
    let mut lo = lambda_max;
    let mut hi = lambda_max + g_norm.max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = hi;
    let mut ut: Vec<f64> = gt
        .iter()
        .zip(eig.eigenvalues.iter())
        .map(|(gi, li)| if nu - li > 0.0 { gi / (nu - li) } else { 0.0 })
        .collect();
    let partial: f64 = ut.iter().map(|v| v * v).sum();
    if (partial - 1.0).abs() < 1e-6 {
        // Bisection leaves |u| within rounding of 1; rescale rather than perturb.
        let norm = partial.sqrt();
        ut.iter_mut().for_each(|v| *v /= norm);
    } else if partial < 1.0 {
        // Hard case, or bisection stopping just above the root: extend along the top axis.
        let extra = (1.0 - partial).sqrt();
        ut[top] += if ut[top] >= 0.0 { extra } else { -extra };
    }
    let u = &eig.eigenvectors * DVector::from_vec(ut);
    let value = (&m * &u + &b).norm();
    let x = DVector::from_column_slice(&inner.c) + &a_in_inv * &u * inner.r;
    Ok(ContainmentWitness {
        max_membership: value / outer.r,
        point: x.iter().copied().collect(),
    })
}

/// True iff the inner slice ellipsoid is a subset of the outer one (closed sets).
pub fn ellipsoid_contained(inner: &TubeSlice, outer: &TubeSlice) -> Result<bool> {
    Ok(max_outer_membership(inner, outer)?.contained())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub contained: Vec<bool>,
    pub all_contained: bool,
    pub first_violation: Option<usize>,
    /// Confidence `1 - gamma` of the imitator tube.
    pub probability_p: f64,
    pub imitator_gamma: f64,
    pub expert_gamma: f64,
    /// Largest outer membership per slice.
    pub max_membership: Vec<f64>,
    /// Inner point leaving the expert slice at the first violation.
    pub witness: Option<Vec<f64>>,
}

/// Slice-wise containment of the imitator tube in the expert tube.
pub fn tube_contained(imitator: &ReachTube, expert: &ReachTube) -> Result<ContainmentReport> {
    if imitator.len() != expert.len() {
        return Err(Error::Alignment(format!(
            "imitator tube has {} slices, expert tube {}",
            imitator.len(),
            expert.len()
        )));
    }
    for (k, (a, b)) in imitator.slices.iter().zip(&expert.slices).enumerate() {
        if (a.tau - b.tau).abs() > 1e-9 * a.tau.abs().max(1.0) {
            return Err(Error::Alignment(format!(
                "slice {k} at tau {} vs {}",
                a.tau, b.tau
            )));
        }
    }
    let witnesses = imitator
        .slices
        .par_iter()
        .zip(&expert.slices)
        .map(|(a, b)| max_outer_membership(a, b))
        .collect::<Result<Vec<_>>>()?;
    let contained: Vec<bool> = witnesses.iter().map(ContainmentWitness::contained).collect();
    let first_violation = contained.iter().position(|c| !c);
    Ok(ContainmentReport {
        all_contained: first_violation.is_none(),
        first_violation,
        probability_p: 1.0 - imitator.gamma,
        imitator_gamma: imitator.gamma,
        expert_gamma: expert.gamma,
        max_membership: witnesses.iter().map(|w| w.max_membership).collect(),
        witness: first_violation.map(|k| witnesses[k].point.clone()),
        contained,
    })
}
