mod common;

use ndarray::Array2;
use proptest::prelude::*;
use raicarn::io::{self, RunManifest, HEADER_LEN, MAGIC};
use raicarn::synth::{planted_runset, PlantSpec, SourceFamily};
use raicarn::{run_raicar_n, NullConfig};
use tempfile::tempdir;

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE / 4.0),
        Just(f64::MAX),
        Just(f64::MIN),
    ]
}

fn arb_matrix() -> impl Strategy<Value = Array2<f64>> {
    (0usize..6, 0usize..9).prop_flat_map(|(r, c)| {
        prop::collection::vec(finite_f64(), r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn bits(m: &Array2<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matrix_file_round_trips_bit_exactly(m in arb_matrix()) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.rnm");
        io::write_matrix(&m, &path).unwrap();
        let back = io::read_matrix(&path).unwrap();
        prop_assert_eq!(back.dim(), m.dim());
        prop_assert_eq!(bits(&back), bits(&m));

        let bytes = std::fs::read(&path).unwrap();
        prop_assert_eq!(&bytes[..4], MAGIC);
        prop_assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, m.nrows());
        prop_assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, m.ncols());
        prop_assert_eq!(bytes.len(), HEADER_LEN + 8 * m.len());
        if let Some(first) = m.iter().next() {
            prop_assert_eq!(&bytes[12..20], &first.to_le_bytes());
        }
    }

    #[test]
    fn truncated_files_are_rejected(m in arb_matrix(), cut in 1usize..8) {
        prop_assume!(!m.is_empty());
        let bytes = io::encode_matrix(&m).unwrap();
        let short = &bytes[..bytes.len() - cut];
        prop_assert!(io::decode_matrix(short, std::path::Path::new("x")).is_err());
    }
}

#[test]
fn non_finite_values_cannot_be_written() {
    let dir = tempdir().unwrap();
    for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
        let m = Array2::from_shape_vec((1, 2), vec![1.0, bad]).unwrap();
        assert!(io::write_matrix(&m, dir.path().join("bad.rnm")).is_err());
    }
}

#[test]
fn report_round_trips() {
    let spec = PlantSpec {
        locations: 300,
        components: 4,
        runs: 5,
        planted: 2,
        overlap: 0.9,
        family: SourceFamily::Gaussian,
        seed: 4,
    };
    let (rc, _) = planted_runset(&spec).unwrap();
    let report = run_raicar_n(&rc, &NullConfig::new(20, 8, 0.05).unwrap()).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("report.json");
    io::write_report(&report, &path).unwrap();
    let back = io::read_report(&path).unwrap();
    assert_eq!(back, report);
    let a: Vec<u64> = report.p_values().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = back.p_values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn manifest_round_trips_and_loads_runs() {
    let dir = tempdir().unwrap();
    let rc = common::noise_collection(3, 2, 10, 1);
    let mut paths = Vec::new();
    for (r, run) in rc.runs().iter().enumerate() {
        let name = format!("run_{r}.rnm");
        io::write_matrix(run, dir.path().join(&name)).unwrap();
        paths.push(name.into());
    }
    let manifest = RunManifest { runs: paths, mask: None };
    let mpath = dir.path().join("manifest.json");
    manifest.write(&mpath).unwrap();
    let (back, _) = RunManifest::read(&mpath).unwrap();
    assert_eq!(back, manifest);
    let loaded = io::load_manifest(&mpath).unwrap();
    assert_eq!(loaded, rc);
}
