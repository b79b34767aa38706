use dcca_core::{CoordSystem, Volume, VoxelSpacing};
use dcca_nn::data::volume_chunk;
use dcca_nn::infer::infer_volume;
use dcca_nn::net::{build_network, NetConfig, SegNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn net() -> SegNet {
    let cfg = NetConfig {
        toy_scale: 32,
        ..Default::default()
    };
    build_network(&cfg, 7).unwrap()
}

fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.iter().product()).map(|_| rng.random::<f32>()).collect();
    Volume::new(dims, data, VoxelSpacing::default(), CoordSystem::Cartesian).unwrap()
}

#[test]
fn stride_equal_to_chunk_concatenates_chunk_outputs() {
    let net = net();
    let v = random_volume([32, 32, 16], 1);
    let out = infer_volume(&net, &v, 8, 8).unwrap();
    assert_eq!(out.dims(), v.dims());
    let mut expect = Vec::new();
    for z0 in [0, 8] {
        expect.extend_from_slice(net.predict(volume_chunk(&v, z0, 8).unwrap()).unwrap().data());
    }
    assert_eq!(out.data(), &expect[..]);
}

#[test]
fn constant_model_gives_constant_output_for_any_stride() {
    let mut net = net();
    let ids: Vec<_> = net.params().ids().collect();
    for id in ids {
        net.params_mut().value_mut(id).data_mut().fill(0.0);
    }
    let v = random_volume([32, 32, 20], 2);
    for stride in [1, 3, 8] {
        let out = infer_volume(&net, &v, 8, stride).unwrap();
        assert!(out.data().iter().all(|&p| p == 0.5), "stride {stride}");
    }
}

#[test]
fn overlapping_windows_match_brute_force_average() {
    let net = net();
    let v = random_volume([64, 64, 32], 3);
    let (chunk, stride) = (16, 8);
    let out = infer_volume(&net, &v, chunk, stride).unwrap();
    // every window independently, then a per-voxel mean over the windows covering it
    let plane = 64 * 64;
    let windows: Vec<(usize, Vec<f32>)> = (0..=32 - chunk)
        .step_by(stride)
        .map(|z0| (z0, net.predict(volume_chunk(&v, z0, chunk).unwrap()).unwrap().into_data()))
        .collect();
    let mut max_diff = 0.0f64;
    for z in 0..32 {
        for i in 0..plane {
            let covering: Vec<f64> = windows
                .iter()
                .filter(|(z0, _)| (*z0..z0 + chunk).contains(&z))
                .map(|(z0, p)| p[(z - z0) * plane + i] as f64)
                .collect();
            let mean = covering.iter().sum::<f64>() / covering.len() as f64;
            max_diff = max_diff.max((mean - out.data()[z * plane + i] as f64).abs());
        }
    }
    assert!(max_diff <= 1e-6, "max diff {max_diff}");
}

#[test]
fn short_volumes_are_padded_and_cropped() {
    let net = net();
    let v = random_volume([32, 32, 5], 4);
    let out = infer_volume(&net, &v, 8, 8).unwrap();
    assert_eq!(out.dims(), v.dims());
    assert!(out.data().iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(infer_volume(&net, &v, 8, 9).is_err());
    assert!(infer_volume(&net, &v, 8, 0).is_err());
}
