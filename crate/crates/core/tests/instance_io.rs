use mfamp::instance::{decode_instance, encode_instance, generate_instance, load_instance, save_instance};
use mfamp::{Eta, FileError, ModelParams};
use proptest::prelude::*;

fn small(eta: Eta, seed: u64) -> mfamp::instance::ProblemInstance {
    let p = ModelParams::new(0.5, 2.0, 0.2, 1e-3, eta).unwrap();
    generate_instance(p, 20, seed).unwrap()
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (i, eta) in [Eta::Finite(1e-2), Eta::Finite(0.0), Eta::Infinite].into_iter().enumerate() {
        let inst = small(eta, 3 + i as u64);
        let path = dir.path().join(format!("inst{i}.mfamp"));
        save_instance(&inst, &path).unwrap();
        let back = load_instance(&path).unwrap();
        assert_eq!(back, inst);
        // Bit-exact, including the sign of zero.
        let bits = |a: &ndarray::Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.y), bits(&inst.y));
        assert_eq!(bits(&back.x0), bits(&inst.x0));
    }
}

#[test]
fn wrong_magic_is_a_format_error() {
    let mut bytes = encode_instance(&small(Eta::Finite(1e-2), 1));
    bytes[0] = b'X';
    assert!(matches!(decode_instance(&bytes), Err(FileError::BadMagic)));
}

#[test]
fn other_version_is_reported() {
    let mut bytes = encode_instance(&small(Eta::Finite(1e-2), 1));
    bytes[5] = b'2';
    assert!(matches!(decode_instance(&bytes), Err(FileError::UnsupportedVersion('2'))));
}

#[test]
fn flipped_payload_byte_fails_checksum() {
    let clean = encode_instance(&small(Eta::Finite(1e-2), 1));
    for pos in [7usize, 40, 200, clean.len() / 2, clean.len() - 5] {
        let mut bytes = clean.clone();
        bytes[pos] ^= 0x10;
        assert!(
            matches!(decode_instance(&bytes), Err(FileError::Checksum { .. })),
            "byte {pos}"
        );
    }
}

#[test]
fn truncation_is_distinct_from_corruption() {
    let bytes = encode_instance(&small(Eta::Infinite, 2));
    for cut in [3usize, 50, bytes.len() / 2, bytes.len() - 1] {
        let res = decode_instance(&bytes[..cut]);
        assert!(matches!(res, Err(FileError::Truncated { .. })), "cut at {cut}: {res:?}");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_instance("/nonexistent/dir/inst.mfamp").unwrap_err();
    assert!(matches!(err, mfamp::Error::File(FileError::Io { .. })));
}

#[test]
fn side_information_noise_has_variance_eta() {
    let eta = 1e-2;
    let p = ModelParams::new(1.0, 1.0, 0.2, 0.0, Eta::Finite(eta)).unwrap();
    let inst = generate_instance(p, 300, 17).unwrap();
    let fp = inst.fprime.as_ref().unwrap();
    let count = (inst.n * inst.m) as f64;
    let msd = fp
        .iter()
        .zip(inst.f0.iter())
        .map(|(&a, &b)| (a * (1.0 + eta).sqrt() - b).powi(2))
        .sum::<f64>()
        / count;
    assert!((msd - eta).abs() <= 5.0 * (2.0 / count).sqrt() * eta, "{msd}");
}

#[test]
fn sparsity_and_scaling() {
    let p = ModelParams::new(0.5, 4.0, 0.3, 0.0, Eta::Infinite).unwrap();
    let inst = generate_instance(p, 100, 5).unwrap();
    let total = (inst.n * inst.p) as f64;
    let active = inst.x0.iter().filter(|&&x| x != 0.0).count() as f64 / total;
    assert!((active - 0.3).abs() < 5.0 * (0.3 * 0.7 / total).sqrt());
    let f2 = inst.f0.iter().map(|x| x * x).sum::<f64>() / (inst.m * inst.n) as f64;
    assert!((f2 - 1.0).abs() < 0.05);
    let resid = &inst.y - &inst.scaled_dictionary().dot(&inst.x0);
    let ymax = inst.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(resid.iter().all(|r| r.abs() <= 1e-12 * ymax));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_instance_round_trips(
        alpha in 0.1f64..2.0,
        pi in 0.1f64..3.0,
        rho in 0.01f64..=1.0,
        delta in 0.0f64..1.0,
        eta in prop_oneof![Just(Eta::Infinite), (0.0f64..10.0).prop_map(Eta::Finite)],
        n in 10usize..24,
        seed in any::<u64>(),
    ) {
        let p = ModelParams::new(alpha, pi, rho, delta, eta).unwrap();
        let inst = generate_instance(p, n, seed).unwrap();
        let bytes = encode_instance(&inst);
        prop_assert_eq!(decode_instance(&bytes).unwrap(), inst.clone());
        prop_assert_eq!(encode_instance(&generate_instance(p, n, seed).unwrap()), bytes);
    }
}
