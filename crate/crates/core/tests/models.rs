use hlwnet::assoc::{mptcp_association, Association};
use hlwnet::channel::channel_state;
use hlwnet::env::{build_topology, init_ues, MobilityConfig, TopologyConfig};
use hlwnet::models::*;
use hlwnet::nn::{LayerKind, LayerParams};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims(n_aps: usize, n_ues: usize, n_subflows: usize) -> ModelDims {
    ModelDims {
        n_aps,
        n_ues,
        n_subflows,
    }
}

fn fc(a: usize, b: usize) -> usize {
    a * b + b
}

fn bn(b: usize) -> usize {
    2 * b
}

#[test]
fn tcnn_parameter_count_is_closed_form() {
    for (na, nu, nf) in [(17, 30, 3), (17, 10, 2), (5, 4, 4)] {
        let expected = fc(na, 8) + bn(8) + fc(8, 4) + bn(4)
            + fc(nu * na, 128) + bn(128) + fc(128, 64) + bn(64) + fc(64, 32) + bn(32) + fc(32, 8) + bn(8)
            + fc(12, nf) + bn(nf);
        let m = build_tcnn(dims(na, nu, nf), 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.network.n_params(), expected);
    }
    let m = build_tcnn(dims(17, 30, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.network.n_params(), 76721);
}

#[test]
fn combiner_shape_follows_subflow_count() {
    let m = build_tcnn(dims(17, 30, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let head = m.network.head.as_ref().unwrap();
    assert_eq!(head.layers[0].spec.kind, LayerKind::Concat);
    assert_eq!(head.layers[0].spec.out_dim, 12);
    let LayerParams::Dense { weight, .. } = &head.layers[1].params else { panic!() };
    assert_eq!(weight.dim(), (12, 3));
    assert_eq!(m.network.input_dims(), vec![17, 510]);
}

#[test]
fn network_centric_dimensions() {
    let m = build_network_centric(dims(17, 30, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.network.out_dim(), 90);
    let m = build_network_centric(dims(17, 10, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.network.input_dims(), vec![170]);
    let widths: Vec<usize> = m.network.branches[0]
        .layers
        .iter()
        .filter(|l| l.spec.kind == LayerKind::FullyConnected)
        .map(|l| l.spec.out_dim)
        .collect();
    assert_eq!(widths, vec![256, 128, 64, 32, 30]);
    assert!(m.validate().is_ok());
}

fn drop_inputs(n_ue: usize, n_f: usize, seed: u64) -> (ConditionInput, Association) {
    let topo = build_topology(&TopologyConfig::default()).unwrap();
    let mob = MobilityConfig {
        seed,
        ..Default::default()
    };
    let ues = init_ues(&topo, n_ue, &mob, &mut mob.rng()).unwrap();
    let pos: Vec<_> = ues.iter().map(|u| u.position).collect();
    let ch = channel_state(&topo, &pos).unwrap();
    let assoc = mptcp_association(&ch, &topo, n_f).unwrap();
    (encode_condition_input(&ch, &assoc, DEFAULT_NORM_MAX_DB).unwrap(), assoc)
}

#[test]
fn condition_blocks_equal_target_encoding() {
    let topo = build_topology(&TopologyConfig::default()).unwrap();
    let mob = MobilityConfig::default();
    let ues = init_ues(&topo, 6, &mob, &mut mob.rng()).unwrap();
    let pos: Vec<_> = ues.iter().map(|u| u.position).collect();
    let ch = channel_state(&topo, &pos).unwrap();
    let assoc = mptcp_association(&ch, &topo, 3).unwrap();
    let xc = encode_condition_input(&ch, &assoc, 60.0).unwrap();
    for k in 0..6 {
        let db: Vec<f64> = ch.sinr.column(k).iter().map(|s| 10.0 * s.log10()).collect();
        let xk = encode_target_input(&db, &assoc.column(k), 60.0).unwrap();
        assert_eq!(xc.block(k), xk.as_slice());
        assert!(xk.as_slice().iter().filter(|&&v| v > 0.0).count() <= 3);
    }
}

#[test]
fn untrained_outputs_are_probabilities_and_deterministic() {
    let (xc, assoc) = drop_inputs(10, 3, 4);
    for kind in [ModelKind::UserCentric, ModelKind::NetworkCentric] {
        let m = build_model(kind, dims(17, 10, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rows = m.predict_rows(&xc).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.len() == 3 && r.iter().all(|&v| v > 0.0 && v < 1.0)));
        assert_eq!(rows, m.predict_rows(&xc).unwrap());
    }
    let m = build_tcnn(dims(17, 10, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let out = m.tcnn_forward(&xc.target(2), &xc, &assoc, 2).unwrap();
    assert_eq!(out.rho_k.len(), 3);
    assert!(out.subflow_ap_indices.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(out.subflow_ap_indices[0], 0);
}

#[test]
fn zero_weights_give_one_half() {
    let (xc, _) = drop_inputs(4, 2, 2);
    let mut m = build_tcnn(dims(17, 4, 2), 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for t in m.network.params_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    for row in m.predict_rows(&xc).unwrap() {
        assert_eq!(row, vec![0.5, 0.5]);
    }
}

#[test]
fn batch_and_single_predictions_agree() {
    let (xc, _) = drop_inputs(5, 3, 8);
    let m = build_tcnn(dims(17, 5, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let feats = vec![xc.as_slice(); 5];
    let batch = m.predict_batch(&m.input_batch(&feats, &[0, 1, 2, 3, 4]).unwrap()).unwrap();
    let rows = m.predict_rows(&xc).unwrap();
    for (k, row) in rows.iter().enumerate() {
        for (a, b) in row.iter().zip(batch.row(k)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(m.input_batch(&feats, &[0, 1, 2, 3, 5]).is_err());
}

#[test]
fn feature_vectors_with_wrong_width_are_rejected() {
    let m = build_network_centric(dims(17, 5, 3), 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let short = vec![0.0; 17 * 4];
    assert!(m.input_batch(&[&short], &[0]).is_err());
}

fn random_assoc(n_a: usize, n_u: usize, bits: &[bool]) -> Association {
    let mut chi = Array2::from_elem((n_a, n_u), false);
    for j in 0..n_u {
        chi[(0, j)] = true;
        for i in 1..n_a {
            chi[(i, j)] = bits[(i * n_u + j) % bits.len()];
        }
    }
    Association::from_mask(chi)
}

proptest! {
    #[test]
    fn projection_is_always_feasible(
        n_a in 1usize..6,
        n_u in 1usize..8,
        bits in prop::collection::vec(any::<bool>(), 48),
        vals in prop::collection::vec(0.0f64..=1.0, 48),
    ) {
        let assoc = random_assoc(n_a, n_u, &bits);
        let mut it = vals.iter().cycle();
        let rows: Vec<Vec<f64>> = (0..n_u).map(|j| assoc.aps_of(j).iter().map(|_| *it.next().unwrap()).collect()).collect();
        let a = project_feasible(&rows, &assoc).unwrap();
        prop_assert!(a.is_feasible(&assoc));
        // never increases a coefficient; loads end at min(load, 1)
        let scattered_rows = gather_rows(&a.rho, &assoc);
        for (r, p) in rows.iter().zip(&scattered_rows) {
            for (x, y) in r.iter().zip(p) {
                prop_assert!(y <= x);
            }
        }
        for i in 0..n_a {
            let before: f64 = (0..n_u).filter(|&j| assoc.is_connected(i, j)).map(|j| {
                let pos = assoc.aps_of(j).iter().position(|&k| k == i).unwrap();
                rows[j][pos]
            }).sum();
            prop_assert!((a.ap_load(i) - before.min(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn scatter_then_gather_is_identity(
        n_u in 1usize..8,
        bits in prop::collection::vec(any::<bool>(), 48),
        // seven UEs at most, so no AP load exceeds 1
        vals in prop::collection::vec(0.0f64..=0.14, 48),
    ) {
        let assoc = random_assoc(4, n_u, &bits);
        let mut it = vals.iter().cycle();
        let rows: Vec<Vec<f64>> = (0..n_u).map(|j| assoc.aps_of(j).iter().map(|_| *it.next().unwrap()).collect()).collect();
        let a = project_feasible(&rows, &assoc).unwrap();
        prop_assert_eq!(gather_rows(&a.rho, &assoc), rows);
    }
}
