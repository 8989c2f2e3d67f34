use proptest::prelude::*;

use tubedagger::envs::SystemId;
use tubedagger::reachtube::{ReachTube, TubeSlice, TubeSource};
use tubedagger::safety::{ellipsoid_contained, max_outer_membership, tube_contained};
use tubedagger::Error;

fn tube(slices: Vec<TubeSlice>, gamma: f64) -> ReachTube {
    ReachTube {
        gamma,
        mu: 1.1,
        source: TubeSource {
            system: SystemId::Vanderpol,
            expert: "test".into(),
            seed: 0,
            includes_action: false,
        },
        slices,
    }
}

fn diag(c: Vec<f64>, r: f64, d: &[f64]) -> TubeSlice {
    let n = d.len();
    TubeSlice {
        tau: 0.0,
        c,
        r,
        a: (0..n).map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect(),
    }
}

#[test]
fn axis_aligned_ellipse_inside_a_disc() {
    // Semi-axes 2 and 0.5 against a disc of radius 2.
    let inner = diag(vec![0.0, 0.0], 1.0, &[0.5, 2.0]);
    let w = max_outer_membership(&inner, &TubeSlice::ball(0.0, vec![0.0, 0.0], 2.0)).unwrap();
    assert!((w.max_membership - 1.0).abs() < 1e-9);
    assert!(!ellipsoid_contained(&inner, &TubeSlice::ball(0.0, vec![0.0, 0.0], 1.99)).unwrap());
}

#[test]
fn report_names_first_violation() {
    let outer = tube((0..4).map(|k| TubeSlice::ball(k as f64, vec![0.0, 0.0], 1.0)).collect(), 0.2);
    let mut inner = outer.scaled(0.5);
    inner.slices[2].c = vec![0.8, 0.0];
    let r = tube_contained(&inner, &outer).unwrap();
    assert_eq!(r.first_violation, Some(2));
    assert_eq!(r.contained, vec![true, true, false, true]);
    assert!(r.witness.is_some());
    assert!((r.probability_p - 0.8).abs() < 1e-12);
}

#[test]
fn mismatched_tubes_are_rejected() {
    let a = tube((0..3).map(|k| TubeSlice::ball(k as f64, vec![0.0], 1.0)).collect(), 0.2);
    let b = tube((0..4).map(|k| TubeSlice::ball(k as f64, vec![0.0], 1.0)).collect(), 0.2);
    assert!(matches!(tube_contained(&a, &b), Err(Error::Alignment(_))));
    let mut c = a.clone();
    c.slices[1].tau = 1.5;
    assert!(matches!(tube_contained(&a, &c), Err(Error::Alignment(_))));
    let d3 = TubeSlice::ball(0.0, vec![0.0; 3], 1.0);
    assert!(max_outer_membership(&a.slices[0], &d3).is_err());
}

proptest! {
    #[test]
    fn ball_in_ball_has_closed_form(
        dx in -1.0..1.0f64, dy in -1.0..1.0f64, r1 in 0.01..1.0f64, r2 in 0.5..2.0f64
    ) {
        let inner = TubeSlice::ball(0.0, vec![dx, dy], r1);
        let outer = TubeSlice::ball(0.0, vec![0.0, 0.0], r2);
        let expected = ((dx * dx + dy * dy).sqrt() + r1) / r2;
        let w = max_outer_membership(&inner, &outer).unwrap();
        prop_assert!((w.max_membership - expected).abs() < 1e-9 * expected.max(1.0));
    }

    #[test]
    fn scaling_decides_containment(
        a in 0.2..3.0f64, b in 0.2..3.0f64, cx in -5.0..5.0f64, f in 0.5..1.5f64
    ) {
        prop_assume!((f - 1.0).abs() > 1e-6);
        let outer = diag(vec![cx, 1.0], 0.7, &[a, b]);
        prop_assert_eq!(ellipsoid_contained(&outer.scaled(f), &outer).unwrap(), f < 1.0);
    }
}

