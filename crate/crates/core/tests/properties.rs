use facelight::io::{read_blob, read_pfm, write_blob, write_pfm, Image};
use facelight::math::{Direction, Vec3};
use facelight::sh::{eval_sh_basis, sh_count, sh_index, SHLight};
use proptest::prelude::*;

fn direction() -> impl Strategy<Value = Direction> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("not too short", |(x, y, z)| x * x + y * y + z * z > 1e-3)
        .prop_map(|(x, y, z)| Direction::normalize(Vec3::new(x, y, z)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // addition theorem: Σ_m Y_lm(ω)² = (2l+1)/4π
    #[test]
    fn sh_bands_satisfy_the_addition_theorem(d in direction(), l_max in 0usize..=12) {
        let y = eval_sh_basis(&d, l_max).unwrap();
        prop_assert_eq!(y.len(), sh_count(l_max));
        for l in 0..=l_max {
            let s: f64 = (-(l as i64)..=l as i64).map(|m| y[sh_index(l, m)].powi(2)).sum();
            let expect = (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI);
            prop_assert!((s - expect).abs() <= 1e-10 * expect.max(1.0), "l={} {} vs {}", l, s, expect);
        }
    }

    #[test]
    fn light_evaluation_is_linear_in_coefficients(d in direction(), a in -2.0f64..2.0, seed in 0u64..1000) {
        let coeffs: Vec<f64> = (0..3 * sh_count(3)).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 97.0 - 0.5).collect();
        let light = SHLight::new(3, coeffs).unwrap();
        let (x, y) = (light.eval(&d.vec()), light.scaled(a).eval(&d.vec()));
        for c in 0..3 {
            prop_assert!((y[c] - a * x[c]).abs() <= 1e-12);
        }
    }

    #[test]
    fn blob_round_trip_preserves_bits(values in prop::collection::vec(any::<f64>(), 0..200)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.blob");
        write_blob(&path, &values, &serde_json::json!({"n": values.len()})).unwrap();
        let (back, meta): (Vec<f64>, serde_json::Value) = read_blob(&path).unwrap();
        prop_assert_eq!(meta["n"].as_u64(), Some(values.len() as u64));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&values));
    }

    #[test]
    fn pfm_round_trip_is_exact_for_f32_values(w in 1usize..9, h in 1usize..9, seed in any::<u32>()) {
        let px: Vec<[f64; 3]> = (0..w * h)
            .map(|i| {
                let v = |k: u32| f32::from_bits((seed ^ (i as u32).wrapping_mul(2654435761) ^ k) & 0x3f7f_ffff) as f64;
                [v(0), v(1 << 20), v(2 << 20)]
            })
            .collect();
        let img = Image::from_pixels(w, h, px).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.pfm");
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        prop_assert_eq!(back.width(), w);
        prop_assert_eq!(back.height(), h);
        prop_assert_eq!(back.pixels(), img.pixels());
    }
}
