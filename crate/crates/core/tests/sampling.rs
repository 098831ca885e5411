use statrs::distribution::{ChiSquared, ContinuousCDF};
use una_core::rng::derive_key;
use una_core::{Policy, Prompt, Vocab};

const DRAWS: usize = 100_000;

fn counts(p: &Policy, x: &Prompt, seed: u64) -> Vec<usize> {
    let mut c = vec![0; p.space().len()];
    for i in 0..DRAWS {
        let y = p.sample(x, derive_key(seed, i as u64)).unwrap();
        c[p.space().index_of(&y).unwrap()] += 1;
    }
    c
}

fn chi_square_passes(p: &Policy, seed: u64) {
    let x = Prompt::new(0);
    let probs = p.probs(&x).unwrap();
    let c = counts(p, &x, seed);
    let stat: f64 = c.iter().zip(&probs).map(|(&o, &q)| {
        let e = q * DRAWS as f64;
        (o as f64 - e).powi(2) / e
    }).sum();
    let critical = ChiSquared::new((probs.len() - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
    for (&o, &q) in c.iter().zip(&probs) {
        let f = o as f64 / DRAWS as f64;
        assert!((f - q).abs() <= 3.0 * (q * (1.0 - q) / DRAWS as f64).sqrt());
    }
}

#[test]
fn tabular_sampling_matches_probabilities() {
    let p = Policy::tabular_random(Vocab::new(4, 2).unwrap(), 1, 1.0, 5).unwrap();
    chi_square_passes(&p, 1);
}

#[test]
fn parametric_sampling_matches_probabilities() {
    let p = Policy::parametric_random(Vocab::new(3, 3).unwrap(), 1, 3, true, 1.0, 6).unwrap();
    chi_square_passes(&p, 2);
}

#[test]
fn uniform_two_response_frequencies() {
    let p = Policy::tabular_uniform(Vocab::new(2, 1).unwrap(), 1).unwrap();
    let c = counts(&p, &Prompt::new(0), 9);
    for k in c {
        let f = k as f64 / DRAWS as f64;
        assert!((0.49..=0.51).contains(&f));
    }
}
