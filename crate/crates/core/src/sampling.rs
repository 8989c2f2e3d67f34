use rand::Rng;
use rand_distr::StandardNormal;

/// Uniform direction on the unit sphere in `dim` dimensions (normalized Gaussian).
pub fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform point on the sphere of `radius` around `center`.
pub fn on_sphere<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let dir = unit_direction(center.len(), rng);
    let mut p: Vec<f64> = center.iter().zip(&dir).map(|(c, d)| c + radius * d).collect();
    // Re-project so that the distance to the center is exact up to rounding.
    let norm = p
        .iter()
        .zip(center)
        .map(|(x, c)| (x - c) * (x - c))
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for (x, c) in p.iter_mut().zip(center) {
            *x = c + (*x - c) * radius / norm;
        }
    }
    p
}

/// Uniform point in the closed ball of `radius` around `center`.
pub fn in_ball<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let dim = center.len();
    let dir = unit_direction(dim, rng);
    let u: f64 = rng.random();
    let scale = radius * u.powf(1.0 / dim as f64);
    center.iter().zip(&dir).map(|(c, d)| c + scale * d).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn ball_points_stay_inside() {
        let mut rng = SeedTree::new(3).stream("ball");
        let c = [1.0, -2.0, 0.5];
        for _ in 0..1000 {
            let p = in_ball(&c, 0.3, &mut rng);
            assert!(distance(&p, &c) <= 0.3 + 1e-12);
        }
    }
}
