use ndarray::ArrayD;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use headgen_nn::{Linear, Net, TensorArchive};

#[test]
fn save_load_roundtrip_preserves_net_state() {
    let dir = std::env::temp_dir().join("headgen_nn_archive_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("net.ntar");

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut lin = Linear::new(&mut rng, 3, 4);
    lin.weight.m.fill(0.25);
    lin.weight.v.fill(0.5);

    let mut arc = TensorArchive::new();
    arc.store_net("g", &mut lin);
    arc.insert_scalar("iter", 17.0);
    arc.save(&path).unwrap();

    let loaded = TensorArchive::load(&path).unwrap();
    let mut lin2 = Linear::new(&mut rng, 3, 4);
    loaded.load_net("g", &mut lin2).unwrap();
    assert_eq!(lin.weight.value, lin2.weight.value);
    assert_eq!(lin.weight.m, lin2.weight.m);
    assert_eq!(lin.weight.v, lin2.weight.v);
    assert_eq!(lin.bias.value, lin2.bias.value);
    assert_eq!(loaded.get_scalar("iter").unwrap(), 17.0);
}

#[test]
fn loading_into_wrong_shape_is_an_error() {
    let dir = std::env::temp_dir().join("headgen_nn_archive_test2");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("net.ntar");

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut lin = Linear::new(&mut rng, 3, 4);
    let mut arc = TensorArchive::new();
    arc.store_net("g", &mut lin);
    arc.save(&path).unwrap();

    let loaded = TensorArchive::load(&path).unwrap();
    let mut other = Linear::new(&mut rng, 5, 4);
    assert!(loaded.load_net("g", &mut other).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn archive_bytes_roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
        let dir = std::env::temp_dir().join("headgen_nn_archive_prop");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("t{}.ntar", values.len()));
        let mut arc = TensorArchive::new();
        let n = values.len();
        arc.insert("data", ArrayD::from_shape_vec(ndarray::IxDyn(&[n]), values.clone()).unwrap());
        arc.save(&path).unwrap();
        let loaded = TensorArchive::load(&path).unwrap();
        prop_assert_eq!(loaded.get("data").unwrap().as_slice().unwrap(), &values[..]);
    }
}
