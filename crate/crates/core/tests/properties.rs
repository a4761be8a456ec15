use dolphin_core::datagen::{mix, orthogonalize};
use dolphin_core::hda::heat_diffuse;
use dolphin_core::losses::sisnr_t;
use dolphin_core::numerics::dct::{dct2, idct2};
use dolphin_core::Tensor;
use proptest::collection::vec;
use proptest::prelude::*;

fn signal(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-3.0f64..3.0, 1..=max_len)
}

fn diffuse(x: &[f64], k: f64) -> Vec<f64> {
    let t = Tensor::from_f64(&[1, x.len()], x).unwrap();
    let k = Tensor::from_f64(&[1], &[k]).unwrap();
    heat_diffuse(&t, &k).unwrap().data().to_vec()
}

fn total_variation(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dct_round_trip_and_parseval(x in signal(300)) {
        let t = x.len();
        let y = dct2(&x, t);
        let back = idct2(&y, t);
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let (ex, ey) = (energy(&x), energy(&y));
        prop_assert!((ex - ey).abs() <= 1e-9 * ex.max(1e-300));
    }

    #[test]
    fn heat_semigroup(x in signal(64), k1 in 0.0f64..2.0, k2 in 0.0f64..2.0) {
        let two = diffuse(&diffuse(&x, k1), k2);
        let one = diffuse(&x, k1 + k2);
        for (a, b) in two.iter().zip(&one) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn heat_conserves_mean(x in signal(64), k in 0.0f64..5.0) {
        let y = diffuse(&x, k);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((mean(&x) - mean(&y)).abs() < 1e-6);
    }

    #[test]
    fn heat_maximum_principle_once_kernel_is_positive(x in signal(64), k in 1.5f64..5.0) {
        let y = diffuse(&x, k);
        let hi = x.iter().cloned().fold(f64::MIN, f64::max);
        let lo = x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(y.iter().all(|&v| v <= hi + 1e-6 && v >= lo - 1e-6));
    }

    #[test]
    fn heat_total_variation_decreases(x in signal(64), k1 in 0.0f64..2.0, dk in 0.0f64..2.0) {
        let a = total_variation(&diffuse(&x, k1));
        let b = total_variation(&diffuse(&x, k1 + dk));
        prop_assert!(b <= a + 1e-6);
    }

    #[test]
    fn sisnr_scale_and_sign_invariant(
        s in vec(-1.0f64..1.0, 256..1024),
        seed in any::<u64>(),
        gain in 0.1f64..10.0,
    ) {
        let mut rng = seed;
        let e: Vec<f64> = s
            .iter()
            .map(|v| {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v + ((rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
            })
            .collect();
        prop_assume!(energy(&s) > 1e-3);
        let base = sisnr_t(&s, &e).unwrap();
        let scaled: Vec<f64> = e.iter().map(|v| v * gain).collect();
        let flipped: Vec<f64> = e.iter().map(|v| -v).collect();
        prop_assert!((sisnr_t(&s, &scaled).unwrap() - base).abs() < 1e-6);
        prop_assert!((sisnr_t(&s, &flipped).unwrap() - base).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_equal_energy_is_zero_db(s in vec(-1.0f64..1.0, 32..256), n in vec(-1.0f64..1.0, 256)) {
        prop_assume!(energy(&s) > 1e-2);
        let n = orthogonalize(&n[..s.len()], &s);
        prop_assume!(energy(&n) > 1e-2);
        let g = (energy(&s) / energy(&n)).sqrt();
        let m: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        prop_assert!(sisnr_t(&s, &m).unwrap().abs() < 1e-3);
    }

    #[test]
    fn mixture_is_sum_of_sources(a in vec(-0.4f64..0.4, 64), b in vec(-0.4f64..0.4, 64)) {
        let m = mix(&[a.clone(), b.clone()], None, 0).unwrap();
        for i in 0..64 {
            let want = m.sources[0][i] + m.sources[1][i];
            prop_assert!((m.mixture[i] - want).abs() < 1e-12);
            prop_assert!((m.sources[0][i] - m.scale * a[i]).abs() < 1e-12);
        }
        prop_assert!(m.mixture.iter().all(|v| v.abs() <= 0.99 + 1e-12));
    }
}

#[test]
fn small_coefficients_undershoot_at_an_impulse() {
    let mut x = vec![0.0; 32];
    x[16] = 1.0;
    let y = diffuse(&x, 0.1);
    let low = y.iter().cloned().fold(f64::MAX, f64::min);
    assert!(low < -0.01, "{low}");
}
