use lazydagger_core::env::{ActionBounds, EnvAction};
use lazydagger_core::meta::{inject_noise, perturb};
use lazydagger_core::rng::rng_for;

#[test]
fn perturbation_has_the_requested_moments() {
    let sigma2 = 0.05;
    let base = EnvAction(vec![0.3, -0.2]);
    let mut rng = rng_for(5, &[1]);
    let n = 200_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    let mut cross = 0.0;
    for _ in 0..n {
        let a = perturb(&base, sigma2, &mut rng);
        let e = [a.0[0] - base.0[0], a.0[1] - base.0[1]];
        for k in 0..2 {
            sum[k] += e[k];
            sq[k] += e[k] * e[k];
        }
        cross += e[0] * e[1];
    }
    let n = n as f64;
    for k in 0..2 {
        assert!((sum[k] / n).abs() < 3e-3, "mean {k}: {}", sum[k] / n);
        assert!((sq[k] / n - sigma2).abs() < 1e-3, "variance {k}: {}", sq[k] / n);
    }
    assert!((cross / n).abs() < 1e-3, "covariance {}", cross / n);
}

#[test]
fn injected_noise_stays_in_the_box_and_is_deterministic() {
    let bounds = ActionBounds::new(vec![-1.0, 0.0], vec![1.0, 0.5]).unwrap();
    let edge = EnvAction(vec![1.0, 0.5]);
    let mut rng = rng_for(9, &[2]);
    let mut clipped = 0;
    for _ in 0..10_000 {
        let a = inject_noise(&edge, 0.3, &bounds, &mut rng);
        assert!(bounds.contains(&a));
        if a.0[0] == 1.0 {
            clipped += 1;
        }
    }
    // Half the draws push past the upper edge.
    assert!((clipped as f64 / 10_000.0 - 0.5).abs() < 0.03, "{clipped}");

    let draw = |seed| inject_noise(&edge, 0.3, &bounds, &mut rng_for(seed, &[2]));
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
    assert_eq!(inject_noise(&edge, 0.0, &bounds, &mut rng), edge);
}
