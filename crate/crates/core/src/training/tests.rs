use super::*;
use crate::sensorsim::{generate_stream, SceneConfig};
use crate::vionet::{init_network, NetworkConfig};

fn tiny_streams() -> Vec<SensorStream> {
    let cfg = NetworkConfig::tiny();
    (0..2)
        .map(|s| {
            generate_stream(&SceneConfig {
                seed: s,
                frames: 25,
                height: cfg.height,
                width: cfg.width,
                imu_samples: cfg.imu_samples,
                ..SceneConfig::default()
            })
            .unwrap()
        })
        .collect()
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_zero_at_truth() {
    let p = vec![PoseDelta::new([0.1, -0.2, 0.3], [1.0, 2.0, 3.0]); 4];
    assert_eq!(train_loss(&p, &p, 100.0).unwrap(), 0.0);
}

#[test]
fn loss_unit_translation_error() {
    let p = vec![PoseDelta::new([0.0; 3], [1.0, 0.0, 0.0])];
    let g = vec![PoseDelta::zero()];
    assert_eq!(train_loss(&p, &g, 100.0).unwrap(), 1.0);
}

#[test]
fn loss_rotation_weighted_by_alpha() {
    let p = vec![PoseDelta::new([0.01, 0.0, 0.0], [0.0; 3]), PoseDelta::zero()];
    let g = vec![PoseDelta::zero(); 2];
    // (α·1e-4 + 0) / 2
    assert!((train_loss(&p, &g, 100.0).unwrap() - 0.005).abs() < 1e-15);
}

#[test]
fn loss_rejects_bad_batches() {
    let p = vec![PoseDelta::zero(); 2];
    assert!(matches!(train_loss(&p, &p[..1], 1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(train_loss(&[], &[], 1.0), Err(Error::InvalidArgument(_))));
    assert!(train_loss_grad(&[], &[], 1.0).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let p: Vec<PoseDelta> = (0..3)
        .map(|i| PoseDelta::from_array(std::array::from_fn(|k| ((i * 6 + k) as f64 * 0.37).sin())))
        .collect();
    let g: Vec<PoseDelta> = (0..3)
        .map(|i| PoseDelta::from_array(std::array::from_fn(|k| ((i * 6 + k) as f64 * 0.91).cos())))
        .collect();
    let alpha = 7.5;
    let an = train_loss_grad(&p, &g, alpha).unwrap();
    let h = 1e-6;
    for b in 0..3 {
        for k in 0..6 {
            let shift = |d: f64| {
                let mut q = p.clone();
                let mut a = q[b].to_array();
                a[k] += d;
                q[b] = PoseDelta::from_array(a);
                train_loss(&q, &g, alpha).unwrap()
            };
            let num = (shift(h) - shift(-h)) / (2.0 * h);
            assert!((num - an[b][k]).abs() < 1e-7, "b={b} k={k}: {num} vs {}", an[b][k]);
        }
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert_eq!(TrainConfig::stage2().batch_size, 64);
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        alpha: 0.0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn split_is_deterministic_and_disjoint() {
    let streams = tiny_streams();
    let data = Dataset::new(&streams);
    assert_eq!(data.len(), 48);
    let (t1, v1) = data.split(3, 0.1);
    let (t2, v2) = data.split(3, 0.1);
    assert_eq!((t1.clone(), v1.clone()), (t2, v2));
    assert_eq!(v1.len(), 5);
    assert_eq!(t1.len() + v1.len(), 48);
    assert!(v1.iter().all(|i| !t1.contains(i)));
}

#[test]
fn zero_lr_leaves_parameters_unchanged() {
    let streams = tiny_streams();
    let data = Dataset::new(&streams);
    let mut net = init_network(&NetworkConfig::tiny(), 1).unwrap();
    let before = (net.frozen_params().to_vec(), net.get_bn_entry(0).unwrap());
    let mut opt = Adam::new(&TrainConfig {
        lr: 0.0,
        ..TrainConfig::default()
    });
    let ws: Vec<SensorWindow> = (0..4).map(|i| data.window(i)).collect();
    let refs: Vec<&SensorWindow> = ws.iter().collect();
    let pass = net.forward_batch(&refs, 0, Mode::Train, true).unwrap();
    let g = net
        .gradients(&pass, &[[1.0; 6]; 4], &[[1.0; 6]; 4], ParamSubset::ALL)
        .unwrap();
    opt.step(&mut net, &g).unwrap();
    assert_eq!(before.0, net.frozen_params());
    assert_eq!(before.1, net.get_bn_entry(0).unwrap());
}

#[test]
fn stage1_reduces_loss_and_leaves_head_alone() {
    let streams = tiny_streams();
    let data = Dataset::new(&streams);
    let mut net = init_network(&NetworkConfig::tiny(), 2).unwrap();
    let head: Vec<Vec<f64>> = net
        .layout()
        .head
        .iter()
        .flat_map(|&(w, b)| [net.frozen_params()[w].clone(), net.frozen_params()[b].clone()])
        .collect();
    let rep = train_vio(&mut net, &data, &quick_cfg()).unwrap();
    assert!(rep.best_val < rep.initial_val, "{rep:?}");
    assert!(net.running_stats().is_some());
    let after: Vec<Vec<f64>> = net
        .layout()
        .head
        .iter()
        .flat_map(|&(w, b)| [net.frozen_params()[w].clone(), net.frozen_params()[b].clone()])
        .collect();
    assert_eq!(head, after);
    let csv = rep.loss_csv();
    assert!(csv.starts_with("epoch,split,loss\n0,val,"));
    assert_eq!(csv.lines().count(), 1 + 1 + 2 * rep.epochs_run);
}

#[test]
fn stage2_touches_only_the_inertial_head() {
    let streams = tiny_streams();
    let data = Dataset::new(&streams);
    let mut net = init_network(&NetworkConfig::tiny(), 3).unwrap();
    train_vio(&mut net, &data, &quick_cfg()).unwrap();
    let before = net.clone();
    let rep = train_inertial_decoder(
        &mut net,
        &data,
        &TrainConfig {
            epochs: 5,
            lr: 1e-3,
            ..TrainConfig::stage2()
        },
    )
    .unwrap();
    assert!(rep.best_val < rep.initial_val);
    let head: Vec<usize> = net.layout().head.iter().flat_map(|&(w, b)| [w, b]).collect();
    for (i, (a, b)) in before.frozen_params().iter().zip(net.frozen_params()).enumerate() {
        if head.contains(&i) {
            assert_ne!(a, b, "head tensor {i} did not move");
        } else {
            assert_eq!(a, b, "tensor {i} changed");
        }
    }
    assert_eq!(before.dictionary(), net.dictionary());
    assert_eq!(before.running_stats(), net.running_stats());
}

#[test]
fn training_is_deterministic() {
    let streams = tiny_streams();
    let data = Dataset::new(&streams);
    let run = || {
        let mut net = init_network(&NetworkConfig::tiny(), 4).unwrap();
        let rep = train_vio(&mut net, &data, &quick_cfg()).unwrap();
        (net.frozen_params().to_vec(), rep)
    };
    assert_eq!(run(), run());
}

#[test]
fn divergence_is_reported() {
    let streams = tiny_streams();
    let data = Dataset::new(&streams);
    let mut net = init_network(&NetworkConfig::tiny(), 5).unwrap();
    let idx = net.layout().fused[0].0;
    net.frozen_params_mut()[idx][0] = f64::NAN;
    let err = train_vio(&mut net, &data, &quick_cfg()).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)), "{err:?}");
}
