use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use super::*;
use crate::adaptation::{frozen_predictions, AdaptConfig};
use crate::corruption::{NoiseId, NoiseSchedule};
use crate::error::Error;
use crate::exec::Exec;
use crate::geometry::{integrate, kitti, Pose, PoseDelta};
use crate::harness::report::{SequenceInput, SERIES};

const TINY: &str = include_str!("../../../../configs/tiny.toml");
const DESK: &str = include_str!("../../../../configs/desk.toml");

fn tiny_cfg() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY).unwrap()
}

fn tiny_model() -> &'static Deployed {
    static M: OnceLock<Deployed> = OnceLock::new();
    M.get_or_init(|| {
        let (_, ck) = build_reference(&tiny_cfg(), Exec::Sequential).unwrap();
        Deployed::from_checkpoint(&ck).unwrap()
    })
}

fn continual_report() -> &'static MetricsReport {
    static R: OnceLock<MetricsReport> = OnceLock::new();
    R.get_or_init(|| run_continual(&tiny_cfg(), tiny_model()).unwrap())
}

#[test]
fn shipped_configs_validate() {
    let d = ExperimentConfig::from_toml(DESK).unwrap();
    assert_eq!(d.protocol.noises.len(), 3);
    assert_eq!(d.seeds.len(), 5);
    tiny_cfg();
    ExperimentConfig::default().validate().unwrap();
}

#[test]
fn config_toml_round_trip() {
    let c = tiny_cfg();
    assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
}

#[test]
fn config_rejects_bad_values() {
    assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(Error::Serde(_))));
    let bad = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = ExperimentConfig::default();
        f(&mut c);
        assert!(matches!(c.validate(), Err(Error::InvalidArgument(_))));
    };
    bad(&|c| c.seeds.clear());
    bad(&|c| c.protocol.noises.push(NoiseId::Clean));
    bad(&|c| c.protocol.noises.push(NoiseId::Blur));
    bad(&|c| c.protocol.shift_noise = NoiseId::Rain);
    bad(&|c| c.protocol.shift_end = 0.2);
    bad(&|c| c.protocol.severity = 6);
    bad(&|c| c.profile = crate::vionet::Profile::Custom);
    bad(&|c| {
        if let DataConfig::Synthetic(s) = &mut c.data {
            s.scene.width = 32;
        }
    });
    bad(&|c| {
        c.data = DataConfig::Kitti(KittiData {
            train: vec![KittiSequence {
                images: "/nonexistent/a".into(),
                poses: "/nonexistent/b".into(),
                imu: "/nonexistent/c".into(),
            }],
            test: vec![],
            calib: None,
            frame_period: 0.1,
        })
    });
}

#[test]
fn output_root_precedence() {
    let mut c = ExperimentConfig::default();
    assert_eq!(c.resolve_out(None), Path::new("out"));
    c.out_dir = Some("cfg".into());
    assert_eq!(c.resolve_out(None), Path::new("cfg"));
    assert_eq!(c.resolve_out(Some(Path::new("cli"))), Path::new("cli"));
}

fn d(v: [f64; 3]) -> PoseDelta {
    PoseDelta::new([0.0; 3], v)
}

/// Six transitions with hand-picked errors 0, 1, 2, 0, 3, 4 (meters).
fn hand_report(episode: Option<(usize, usize)>) -> SequenceReport {
    let gt: Vec<PoseDelta> = (0..6).map(|_| d([1.0, 0.0, 0.0])).collect();
    let errs = [0.0, 1.0, 2.0, 0.0, 3.0, 4.0];
    let pred: Vec<PoseDelta> = errs.iter().map(|e| d([1.0, *e, 0.0])).collect();
    use NoiseId::*;
    let labels = [Clean, Blur, Blur, Clean, Snow, Snow];
    SequenceReport::compute(SequenceInput {
        seed: 3,
        method: Method::Tta,
        noise: None,
        pred: &pred,
        gt: &gt,
        labels: &labels,
        ks: &[0, 1, 0, 0, 2, 1],
        loss: &[None, Some(0.5), None, None, Some(0.25), Some(0.125)],
        bank: Some(&[Clean, Blur, Snow]),
        episode,
        frame_period: 0.1,
    })
    .unwrap()
}

#[test]
fn sequence_metrics_match_hand_values() {
    let r = hand_report(None);
    let mean_sq: f64 = [0.0, 1.0, 4.0, 0.0, 9.0, 16.0].iter().sum::<f64>() / 6.0;
    assert!((r.t_rmse - mean_sq.sqrt()).abs() < 1e-12);
    assert_eq!(r.r_rmse, 0.0);
    assert_eq!(r.t_err, vec![0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    // matched labels: clean blur clean clean snow blur -> 4 of 6
    assert!((r.ddf_accuracy.unwrap() - 400.0 / 6.0).abs() < 1e-12);
    let blur = r.per_noise.iter().find(|e| e.noise == NoiseId::Blur).unwrap();
    assert_eq!(blur.transitions, 2);
    assert!((blur.t_rmse - 2.5f64.sqrt()).abs() < 1e-12);
    // 6 m of travel is far below the shortest segment
    assert_eq!(r.t_rel, None);
    assert_eq!(r.stem(), "tta_seed3");
}

#[test]
fn shift_windows_split_transitions() {
    // episode frames [2, 4): transitions 1 and 2 end in a corrupted frame
    let w = hand_report(Some((2, 4))).windows.unwrap();
    assert_eq!((w.pre.start, w.pre.end), (0, 1));
    assert_eq!((w.during.start, w.during.end), (1, 3));
    assert_eq!((w.post.start, w.post.end), (4, 6));
    assert_eq!(w.pre.t_rmse, Some(0.0));
    assert!((w.during.t_rmse.unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
    assert!((w.post.t_rmse.unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
    let edge = hand_report(Some((1, 6))).windows.unwrap();
    assert_eq!(edge.pre.t_rmse, None);
}

#[test]
fn misaligned_inputs_rejected() {
    let gt = vec![d([1.0, 0.0, 0.0]); 3];
    let r = SequenceReport::compute(SequenceInput {
        seed: 0,
        method: Method::Frozen,
        noise: None,
        pred: &gt,
        gt: &gt,
        labels: &[NoiseId::Clean; 2],
        ks: &[],
        loss: &[],
        bank: None,
        episode: None,
        frame_period: 0.1,
    });
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn aggregates_are_mean_and_sample_std() {
    let mut a = hand_report(None);
    let mut b = hand_report(None);
    a.t_rmse = 1.0;
    b.t_rmse = 3.0;
    b.seed = 4;
    let agg = report::aggregate(&[a, b]);
    assert_eq!(agg.len(), 1);
    assert_eq!(agg[0].t_rmse.mean, 2.0);
    assert!((agg[0].t_rmse.std - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(agg[0].t_rmse.n, 2);
    assert_eq!(Stat::of(&[5.0]).unwrap().std, 0.0);
    assert!(Stat::of(&[]).is_none());
}

#[test]
fn report_json_round_trip_and_verify() {
    let r = continual_report();
    let back = MetricsReport::from_json(&r.to_json()).unwrap();
    assert_eq!(&back, r);
    back.verify().unwrap();
    let mut tampered = back.clone();
    tampered.sequences[1].t_rmse *= 1.001;
    assert!(matches!(tampered.verify(), Err(Error::Structural(_))));
    let mut tampered = back.clone();
    tampered.aggregates[0].t_rmse.mean += 1e-9;
    assert!(matches!(tampered.verify(), Err(Error::Structural(_))));
    let mut wrong = back;
    wrong.schema_version = 99;
    assert!(matches!(MetricsReport::from_json(&wrong.to_json()), Err(Error::Structural(_))));
}

#[test]
fn summary_drops_series_only() {
    let s = continual_report().summary();
    let seq = &s["sequences"][0];
    for key in SERIES {
        assert!(seq.get(key).is_none(), "{key}");
    }
    assert!(seq.get("t_rmse").is_some());
    assert!(s.get("aggregates").is_some());
}

#[test]
fn continual_report_shape() {
    let cfg = tiny_cfg();
    let r = continual_report();
    assert_eq!(r.sequences.len(), 2 * cfg.seeds.len());
    assert_eq!(r.schedule.as_deref(), Some("frames=40;blur:0-20:4;snow:20-40:4"));
    assert!(r.assumptions.iter().any(|a| a.contains("equal-length")));
    let frozen = r.aggregate_for(Method::Frozen, None).unwrap();
    let tta = r.aggregate_for(Method::Tta, None).unwrap();
    assert!(frozen.ddf_accuracy.is_none() && tta.ddf_accuracy.is_some());
    assert_eq!(tta.per_noise.keys().copied().collect::<Vec<_>>(), vec![NoiseId::Blur, NoiseId::Snow]);
    let t = r.tables();
    for needle in ["blur", "snow", "frozen", "tta", "ddf accuracy"] {
        assert!(t.contains(needle), "{needle} missing from\n{t}");
    }
    // baseline and adaptation saw the same corrupted bytes
    for pair in r.sequences.chunks(2) {
        assert_eq!(pair[0].gt, pair[1].gt);
        assert_eq!(pair[0].labels, pair[1].labels);
    }
}

#[test]
fn zero_rate_adaptation_equals_frozen() {
    let mut cfg = tiny_cfg();
    cfg.adapt = AdaptConfig { eta: 0.0, ..cfg.adapt };
    let r = run_continual(&cfg, tiny_model()).unwrap();
    for pair in r.sequences.chunks(2) {
        assert_eq!(pair[0].pred, pair[1].pred);
        assert_eq!(pair[0].t_rmse, pair[1].t_rmse);
    }
}

#[test]
fn empty_schedule_is_plain_evaluation() {
    let cfg = tiny_cfg();
    let m = tiny_model();
    let r = protocols::run_scheduled(&cfg, m, &|n| Ok(NoiseSchedule::clean(n))).unwrap();
    let net_cfg = m.net.config().clone();
    for s in r.sequences.iter().filter(|s| s.method == Method::Frozen) {
        let stream = cfg.data.test_stream(&net_cfg, s.seed, Exec::Sequential).unwrap();
        let plain: Vec<[f64; 6]> = frozen_predictions(&m.net, &stream).unwrap().iter().map(PoseDelta::to_array).collect();
        assert_eq!(s.pred, plain);
        assert!(s.labels.iter().all(|l| *l == NoiseId::Clean));
    }
}

#[test]
fn single_shift_marks_episode() {
    let r = run_single_shift(&tiny_cfg(), tiny_model()).unwrap();
    let w = r.sequences[0].windows.unwrap();
    assert_eq!((w.t0, w.t1), shift_bounds(40, 1.0 / 3.0, 2.0 / 3.0));
    assert_eq!(w.during.end - w.during.start, w.t1 - w.t0);
    let f = r.aggregate_for(Method::Frozen, None).unwrap();
    assert!(f.during_episode.is_some() && f.post_episode.is_some());
    assert!(r.tables().contains("in-episode"));
}

#[test]
fn stationary_with_finetuned_rows() {
    let cfg = tiny_cfg();
    let m = tiny_model();
    let (ft, rep) = finetune_baseline(&cfg, &m.net, NoiseId::Blur, Exec::Sequential).unwrap();
    assert!(rep.epochs_run <= cfg.protocol.finetune_epochs);
    assert_ne!(ft.frozen_params(), m.net.frozen_params());
    let r = run_stationary(&cfg, m, &BTreeMap::from([(NoiseId::Blur, ft)])).unwrap();
    let methods = |n| r.sequences.iter().filter(|s| s.noise == Some(n)).map(|s| s.method).collect::<Vec<_>>();
    assert_eq!(methods(NoiseId::Blur), [Method::Frozen, Method::Tta, Method::Finetune].repeat(cfg.seeds.len()));
    assert_eq!(methods(NoiseId::Snow), [Method::Frozen, Method::Tta].repeat(cfg.seeds.len()));
    let t = r.tables();
    assert!(t.contains("finetune"));
    r.verify().unwrap();
}

#[test]
fn stationary_zero_epochs_equals_frozen() {
    let mut cfg = tiny_cfg();
    cfg.protocol.stationary_epochs = 0;
    let r = run_stationary(&cfg, tiny_model(), &BTreeMap::new()).unwrap();
    for pair in r.sequences.chunks(2) {
        let (f, t) = (&pair[0], &pair[1]);
        assert_eq!((f.method, t.method), (Method::Frozen, Method::Tta));
        // an unadapted noise entry is a copy of the source entry
        assert_eq!(f.pred, t.pred);
    }
}

#[test]
fn missing_checkpoint_or_proxies_is_state_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Deployed::load(&dir.path().join("none.json")), Err(Error::State(_))));
    let ck = crate::checkpoint::Checkpoint::from_network(&tiny_model().net);
    assert!(matches!(Deployed::from_checkpoint(&ck), Err(Error::State(_))));
}

#[test]
fn eval_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let deltas: Vec<PoseDelta> = (0..30).map(|i| PoseDelta::new([0.0, 0.0, 0.01 * i as f64], [1.0, 0.1, 0.0])).collect();
    let tr = integrate(&Pose::identity(), &deltas, 0.1).unwrap();
    let p = dir.path().join("p.txt");
    kitti::write_poses(&p, tr.poses()).unwrap();
    let r = run_eval(&p, &p, 0.1).unwrap();
    let s = &r.sequences[0];
    assert_eq!((s.t_rmse, s.r_rmse), (0.0, 0.0));
    assert!(s.t_err.iter().all(|e| *e == 0.0));
    r.verify().unwrap();
    let short = dir.path().join("s.txt");
    kitti::write_poses(&short, &tr.poses()[..10]).unwrap();
    assert!(matches!(run_eval(&p, &short, 0.1), Err(Error::InvalidArgument(_))));
}

#[test]
fn artifacts_are_complete_and_idempotent() {
    let r = continual_report();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_artifacts(r, dir.path()).unwrap();
    let read = |fs: &[std::path::PathBuf]| fs.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>();
    let first = read(&files);
    assert_eq!(emit_artifacts(r, dir.path()).unwrap(), files);
    assert_eq!(read(&files), first);
    let back = MetricsReport::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(&back, r);
    let s = &r.sequences[0];
    let stem = s.stem();
    let traj = std::fs::read_to_string(dir.path().join(format!("{stem}_pred.txt"))).unwrap();
    assert_eq!(traj.lines().count(), s.gt.len() + 1);
    let gt = kitti::read_poses(&dir.path().join(format!("{stem}_gt.txt"))).unwrap();
    assert_eq!(gt.len(), s.gt.len() + 1);
    let csv = std::fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
    assert_eq!(csv.lines().count(), s.gt.len() + 1);
    assert!(csv.starts_with("t,k,label,L_TTA,t_err,r_err,"));
    for suffix in ["_error.svg", "_traj.svg"] {
        let svg = std::fs::read_to_string(dir.path().join(format!("{stem}{suffix}"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn seeds_run_identically_in_parallel_and_sequence() {
    let cfg = tiny_cfg();
    let mut par = tiny_model().clone();
    par.net.set_exec(Exec::Parallel);
    let mut seq = tiny_model().clone();
    seq.net.set_exec(Exec::Sequential);
    assert_eq!(run_continual(&cfg, &par).unwrap(), run_continual(&cfg, &seq).unwrap());
}

fn keys(v: &serde_json::Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    k.sort();
    k
}

#[test]
fn shipped_schema_matches_serialized_report() {
    let schema: serde_json::Value = serde_json::from_str(include_str!("../../../../docs/report_schema.json")).unwrap();
    let single = run_single_shift(&tiny_cfg(), tiny_model()).unwrap();
    let r: serde_json::Value = serde_json::from_str(&single.to_json()).unwrap();
    assert_eq!(keys(&r), keys(&schema["properties"]));
    let seq = &r["sequences"][1];
    assert_eq!(keys(seq), keys(&schema["$defs"]["sequence"]["properties"]));
    assert_eq!(keys(&seq["windows"]), keys(&schema["$defs"]["sequence"]["properties"]["windows"]["oneOf"][1]["properties"]));
    assert_eq!(keys(&r["aggregates"][0]), keys(&schema["$defs"]["aggregate"]["properties"]));
    assert_eq!(keys(&r["aggregates"][0]["t_rmse"]), keys(&schema["$defs"]["stat"]["properties"]));
    assert_eq!(schema["properties"]["schema_version"]["const"], report::SCHEMA_VERSION);
}
