use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sensorsim::{generate_stream, SceneConfig};
use crate::training::{train_vio, Dataset, TrainConfig};
use crate::vionet::gradcheck::{self, Scalar};
use crate::vionet::{init_network, NetworkConfig};

fn tiny_stream(seed: u64, frames: usize) -> SensorStream {
    let cfg = NetworkConfig::tiny();
    generate_stream(&SceneConfig {
        seed,
        frames,
        height: cfg.height,
        width: cfg.width,
        imu_samples: cfg.imu_samples,
        ..SceneConfig::default()
    })
    .unwrap()
}

fn trained_tiny() -> (VioNetwork, SensorStream) {
    let s = tiny_stream(11, 30);
    let mut net = init_network(&NetworkConfig::tiny(), 9).unwrap();
    let streams = [s.clone()];
    train_vio(
        &mut net,
        &Dataset::new(&streams),
        &TrainConfig {
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    (net, s)
}

fn random_delta(rng: &mut ChaCha8Rng) -> PoseDelta {
    PoseDelta::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
}

#[test]
fn consistency_loss_examples() {
    let a = PoseDelta::new([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]);
    assert_eq!(consistency_loss(&a, &a, 100.0), 0.0);
    let b = PoseDelta::new([0.1, 0.2, 0.3], [2.0, 2.0, 3.0]);
    assert_eq!(consistency_loss(&a, &b, 100.0), 1.0);
}

#[test]
fn consistency_loss_formula_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let (f, i) = (random_delta(&mut rng), random_delta(&mut rng));
        let alpha = rng.random_range(0.1..200.0);
        let (fa, ia) = (f.to_array(), i.to_array());
        let mut oracle = 0.0;
        for j in 0..6 {
            let w = if j < 3 { alpha } else { 1.0 };
            oracle += w * (ia[j] - fa[j]).powi(2);
        }
        let l = consistency_loss(&f, &i, alpha);
        assert!(l >= 0.0);
        assert!((l - oracle).abs() <= 1e-12 * oracle.max(1.0));
        // gradient against central differences in ŷ_f
        let g = consistency_grad(&f, &i, alpha);
        for j in 0..6 {
            let h = 1e-6;
            let mut p = fa;
            p[j] += h;
            let mut m = fa;
            m[j] -= h;
            let num = (consistency_loss(&PoseDelta::from_array(p), &i, alpha)
                - consistency_loss(&PoseDelta::from_array(m), &i, alpha))
                / (2.0 * h);
            assert!((num - g[j]).abs() < 1e-6 * alpha.max(1.0));
        }
    }
}

fn bank3(d: [f64; 3]) -> ProxyBank {
    // query at origin; proxy k sits at distance d[k] along axis 0
    ProxyBank::new(
        d.iter().map(|&x| vec![x, 0.0]).collect(),
        vec![NoiseId::Clean, NoiseId::Blur, NoiseId::Rain],
    )
    .unwrap()
}

#[test]
fn nearest_proxy_ties_go_low() {
    let b = bank3([2.0, 0.5, -0.5]);
    assert_eq!(b.nearest(&[0.0, 0.0]).unwrap(), 1);
    assert_eq!(b.nearest(&[2.0, 0.0]).unwrap(), 0);
    assert!(b.nearest(&[0.0]).is_err());
}

#[test]
fn nearest_proxy_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let proxies: Vec<Vec<f64>> = (0..5).map(|_| (0..12).map(|_| rng.random::<f64>()).collect()).collect();
    let labels = vec![NoiseId::Clean, NoiseId::Blur, NoiseId::Rain, NoiseId::Snow, NoiseId::Contrast];
    let bank = ProxyBank::new(proxies.clone(), labels).unwrap();
    for _ in 0..1000 {
        let q: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let dist: Vec<f64> = proxies
            .iter()
            .map(|p| p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        let mut best = 0;
        for k in 1..dist.len() {
            if dist[k] < dist[best] {
                best = k;
            }
        }
        assert_eq!(bank.nearest(&q).unwrap(), best);
    }
}

#[test]
fn bank_validation() {
    assert!(ProxyBank::new(vec![vec![1.0]], vec![NoiseId::Blur]).is_err());
    assert!(ProxyBank::new(vec![vec![1.0], vec![1.0, 2.0]], vec![NoiseId::Clean, NoiseId::Blur]).is_err());
    assert!(ProxyBank::new(vec![vec![1.0], vec![f64::NAN]], vec![NoiseId::Clean, NoiseId::Blur]).is_err());
    assert!(ProxyBank::new(vec![vec![1.0], vec![2.0]], vec![NoiseId::Clean, NoiseId::Clean]).is_err());
    assert!(ProxyBank::new(vec![], vec![]).is_err());
}

#[test]
fn proxies_single_sample_and_permutation() {
    let (net, s) = trained_tiny();
    let ws = s.windows();
    let one = init_proxies(&net, &[(NoiseId::Clean, vec![ws[3].clone()])]).unwrap();
    assert_eq!(one.proxies()[0], net.ddf(&ws[3]).unwrap().values());

    let a = init_proxies(&net, &[(NoiseId::Clean, ws[..6].to_vec())]).unwrap();
    let mut rev = ws[..6].to_vec();
    rev.reverse();
    let b = init_proxies(&net, &[(NoiseId::Clean, rev)]).unwrap();
    for (x, y) in a.proxies()[0].iter().zip(&b.proxies()[0]) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
    assert!(init_proxies(&net, &[(NoiseId::Clean, vec![])]).is_err());
}

#[test]
fn proxy_domains_shapes() {
    let s = tiny_stream(3, 20);
    let d = proxy_domains(&s, 4, &[NoiseId::Blur, NoiseId::Rain], 3, 0).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d[0].0, NoiseId::Clean);
    assert!(d.iter().all(|(_, w)| w.len() == 4));
    assert_eq!(d[0].1[1].imu, d[1].1[1].imu);
    assert_ne!(d[0].1[1].image_pair, d[1].1[1].image_pair);
    assert!(proxy_domains(&s, 4, &[NoiseId::Clean], 3, 0).is_err());
}

#[test]
fn tta_step_contract() {
    let (mut net, s) = trained_tiny();
    net.reset_dictionary(2);
    let w = s.window(0).unwrap();
    let cfg = AdaptConfig::default();
    let mut st = TtaState::new(&cfg);
    let err = tta_step(&mut net, &w, 0, &cfg, &mut st).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    assert!(matches!(tta_step(&mut net, &w, 3, &cfg, &mut st), Err(Error::Index { .. })));
}

#[test]
fn tta_step_zero_eta_reports_loss_only() {
    let (mut net, s) = trained_tiny();
    net.reset_dictionary(2);
    let before = net.clone();
    let w = s.window(4).unwrap();
    let cfg = AdaptConfig {
        eta: 0.0,
        ..AdaptConfig::default()
    };
    let out = tta_step(&mut net, &w, 1, &cfg, &mut TtaState::new(&cfg)).unwrap();
    assert!(out.loss > 0.0);
    assert_eq!(
        out.loss,
        consistency_loss(&out.fused, &out.inertial, cfg.alpha)
    );
    assert_eq!(before.dictionary(), net.dictionary());
}

#[test]
fn tta_step_direction_matches_finite_differences() {
    let (mut net, s) = trained_tiny();
    net.reset_dictionary(1);
    // move entry 1 off the source values so the probe isn't at a special point
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut e = net.get_bn_entry(1).unwrap();
    for t in &mut e.tensors {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    net.set_bn_entry(1, e).unwrap();
    let w = s.window(7).unwrap();
    let cfg = AdaptConfig {
        eta: 1.0,
        ..AdaptConfig::default()
    };
    let mut stepped = net.clone();
    tta_step(&mut stepped, &w, 1, &cfg, &mut TtaState::new(&cfg)).unwrap();
    let f = |n: &VioNetwork| -> Result<(f64, Vec<bool>)> {
        let p = n.forward_batch(&[&w], 1, Mode::Adapt, true)?;
        let o = &p.outputs[0];
        Ok((consistency_loss(&o.fused, &o.inertial, cfg.alpha), gradcheck::activation_pattern(&p)))
    };
    let lay = net.layout();
    let mut checked = 0;
    for _ in 0..200 {
        if checked == 10 {
            break;
        }
        let tensor = rng.random_range(0..lay.affine.len());
        let index = rng.random_range(0..lay.affine[tensor].len());
        let s = Scalar::Affine { entry: 1, tensor, index };
        let Some(num) = gradcheck::central_difference(&net, s, 1e-5, &f).unwrap() else {
            continue;
        };
        let an = gradcheck::get_scalar(&net, s).unwrap() - gradcheck::get_scalar(&stepped, s).unwrap();
        let re = gradcheck::rel_err(an, num);
        assert!(re < 1e-4, "{s:?}: analytic {an} numeric {num}");
        checked += 1;
    }
    assert_eq!(checked, 10);
}

#[test]
fn online_on_clean_stream_never_adapts() {
    let (mut net, s) = trained_tiny();
    let ws = s.windows();
    let clean = init_proxies(&net, &[(NoiseId::Clean, ws.clone())]).unwrap();
    // a second proxy far from anything the stream produces
    let far: Vec<f64> = clean.proxies()[0].iter().map(|v| v + 1e3).collect();
    let bank = ProxyBank::new(vec![clean.proxies()[0].clone(), far], vec![NoiseId::Clean, NoiseId::Blur]).unwrap();
    prepare_dictionary(&mut net, &bank);
    let before = net.clone();
    let (pred, trace) = run_online(&mut net, &s, &bank, &AdaptConfig::default()).unwrap();
    assert_eq!(trace.len(), s.transitions());
    assert!(trace.ks().iter().all(|&k| k == 0));
    assert!(trace.records.iter().all(|r| r.loss.is_none()));
    assert_eq!(before.dictionary(), net.dictionary());
    assert_eq!(pred, frozen_predictions(&before, &s).unwrap());
    let labels = vec![NoiseId::Clean; trace.len()];
    assert_eq!(ddf_accuracy(&trace, &labels).unwrap(), 100.0);
    assert_eq!(ddf_accuracy(&trace, &vec![NoiseId::Blur; trace.len()]).unwrap(), 0.0);
}

#[test]
fn online_adapts_only_matched_entries_and_keeps_frozen_weights() {
    let (mut net, s) = trained_tiny();
    let ws = s.windows();
    let p0 = init_proxies(&net, &[(NoiseId::Clean, ws.clone())]).unwrap().proxies()[0].clone();
    let far: Vec<f64> = p0.iter().map(|v| v + 1e3).collect();
    // with gating off, entry 1 adapts on every step; entry 2 must stay put
    let bank = ProxyBank::new(vec![p0, far.clone(), far], vec![NoiseId::Clean, NoiseId::Blur, NoiseId::Rain]).unwrap();
    prepare_dictionary(&mut net, &bank);
    let before = net.clone();
    let cfg = AdaptConfig {
        eta: 1e-2,
        gating: false,
        ..AdaptConfig::default()
    };
    let (_, trace) = run_online(&mut net, &s, &bank, &cfg).unwrap();
    assert!(trace.records.iter().all(|r| r.entry == 1 && r.loss.is_some()));
    assert_eq!(before.frozen_params(), net.frozen_params());
    assert_eq!(before.bn_entry(0).unwrap(), net.bn_entry(0).unwrap());
    assert_eq!(before.bn_entry(2).unwrap(), net.bn_entry(2).unwrap());
    assert_ne!(before.bn_entry(1).unwrap(), net.bn_entry(1).unwrap());
    assert_eq!(before.running_stats(), net.running_stats());
}

#[test]
fn online_zero_eta_equals_frozen_baseline() {
    let (mut net, s) = trained_tiny();
    let p0 = init_proxies(&net, &[(NoiseId::Clean, s.windows())]).unwrap().proxies()[0].clone();
    let bank = ProxyBank::new(vec![p0.iter().map(|v| v + 1e3).collect(), p0], vec![NoiseId::Clean, NoiseId::Blur]).unwrap();
    prepare_dictionary(&mut net, &bank);
    let cfg = AdaptConfig {
        eta: 0.0,
        ..AdaptConfig::default()
    };
    let frozen = frozen_predictions(&net, &s).unwrap();
    let (pred, trace) = run_online(&mut net, &s, &bank, &cfg).unwrap();
    assert!(trace.ks().iter().all(|&k| k == 1));
    assert_eq!(pred, frozen);
}

#[test]
fn online_is_deterministic() {
    let (net, s) = trained_tiny();
    let d = proxy_domains(&s, 4, &[NoiseId::Blur], 3, 1).unwrap();
    let bank = init_proxies(&net, &d).unwrap();
    let sched = NoiseSchedule::single_shift(s.len(), 10, 20, NoiseId::Blur, 3).unwrap();
    let (cs, _) = apply_schedule(&s, &sched, 1).unwrap();
    let run = || {
        let mut n = net.clone();
        prepare_dictionary(&mut n, &bank);
        let cfg = AdaptConfig {
            eta: 1e-3,
            ..AdaptConfig::default()
        };
        let r = run_online(&mut n, &cs, &bank, &cfg).unwrap();
        (r, n.dictionary().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn stationary_zero_epochs_is_frozen() {
    let (mut net, s) = trained_tiny();
    let d = proxy_domains(&s, 4, &[NoiseId::Blur], 3, 1).unwrap();
    let bank = init_proxies(&net, &d).unwrap();
    prepare_dictionary(&mut net, &bank);
    let r = run_stationary_tta(&mut net, &s, &bank, &AdaptConfig::default(), 0).unwrap();
    assert_eq!(r.predictions, frozen_predictions(&net, &s).unwrap());
    assert!(r.epoch_loss.is_empty());
}

#[test]
fn unready_networks_are_rejected() {
    let (net, s) = trained_tiny();
    let bank = init_proxies(&net, &proxy_domains(&s, 2, &[NoiseId::Blur], 3, 0).unwrap()).unwrap();
    let mut n = net.clone();
    assert!(matches!(run_online(&mut n, &s, &bank, &AdaptConfig::default()), Err(Error::State(_))));
    let mut fresh = init_network(&NetworkConfig::tiny(), 0).unwrap();
    prepare_dictionary(&mut fresh, &bank);
    assert!(matches!(run_online(&mut fresh, &s, &bank, &AdaptConfig::default()), Err(Error::State(_))));
}

#[test]
fn accuracy_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bank_labels = vec![NoiseId::Clean, NoiseId::Blur, NoiseId::Rain];
    let n = 300;
    let records: Vec<TraceRecord> = (0..n)
        .map(|t| TraceRecord {
            t,
            k: rng.random_range(0..3),
            entry: 0,
            loss: None,
            fused: PoseDelta::zero(),
            inertial: PoseDelta::zero(),
        })
        .collect();
    let trace = AdaptTrace {
        labels: bank_labels.clone(),
        records,
    };
    let truth: Vec<NoiseId> = (0..n).map(|_| bank_labels[rng.random_range(0..3)]).collect();
    let hits = trace.records.iter().zip(&truth).filter(|(r, l)| bank_labels[r.k] == **l).count();
    assert_eq!(ddf_accuracy(&trace, &truth).unwrap(), 100.0 * hits as f64 / n as f64);
    assert!(ddf_accuracy(&trace, &truth[1..]).is_err());
}

#[test]
fn trace_csv_layout() {
    let trace = AdaptTrace {
        labels: vec![NoiseId::Clean, NoiseId::Blur],
        records: vec![
            TraceRecord {
                t: 0,
                k: 0,
                entry: 0,
                loss: None,
                fused: PoseDelta::new([0.0; 3], [3.0, 4.0, 0.0]),
                inertial: PoseDelta::zero(),
            },
            TraceRecord {
                t: 1,
                k: 1,
                entry: 1,
                loss: Some(0.5),
                fused: PoseDelta::zero(),
                inertial: PoseDelta::zero(),
            },
        ],
    };
    let csv = trace.to_csv(&[PoseDelta::zero(); 2]).unwrap();
    assert_eq!(csv, "t,k,label,L_TTA,t_err,r_err\n0,0,clean,,5.0,0.0\n1,1,blur,0.5,0.0,0.0\n");
}

#[test]
fn pearson_basics() {
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().unwrap() - 1.0).abs() < 1e-15);
    assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), None);
    assert!(pearson(&[1.0], &[1.0]).is_err());
}

#[test]
fn transition_labels_use_later_frame() {
    let l = [NoiseId::Clean, NoiseId::Blur, NoiseId::Blur, NoiseId::Clean];
    assert_eq!(transition_labels(&l), vec![NoiseId::Blur, NoiseId::Blur, NoiseId::Clean]);
}
