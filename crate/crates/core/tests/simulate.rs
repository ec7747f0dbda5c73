use proptest::prelude::*;
use stpp_core::detection::{BBox, Detection, Label};
use stpp_core::io::{format_detections, parse_mot, records_to_detections};
use stpp_core::simulate::{
    events_from_labels, generate_scenario, label_confusing, load_scenario, save_scenario, Agent, Scenario, SimConfig,
};
use stpp_core::tracker::{TrackBox, Trajectory};
use stpp_core::Error;

#[test]
fn clean_config_gives_only_good_labels() {
    let cfg = SimConfig {
        noise_rate: 0.0,
        confusion_rate: 0.0,
        ..SimConfig::default()
    };
    let s = generate_scenario(&cfg, 4).unwrap();
    assert!(s.detections.iter().all(|d| d.label == Some(Label::Good)));
    assert!(events_from_labels(&s).iter().all(|g| g.is_empty()));
}

#[test]
fn same_seed_same_scenario() {
    let cfg = SimConfig::default();
    let a = generate_scenario(&cfg, 11).unwrap();
    let b = generate_scenario(&cfg, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.detections, generate_scenario(&cfg, 12).unwrap().detections);
}

#[test]
fn noisy_boxes_stay_near_their_sources() {
    let cfg = SimConfig {
        noise_rate: 0.5,
        noise_sources: 2,
        frames: 100,
        ..SimConfig::default()
    };
    for seed in 0..5 {
        let s = generate_scenario(&cfg, seed).unwrap();
        let noisy: Vec<_> = s.detections.iter().filter(|d| d.label == Some(Label::Noisy)).collect();
        assert!(noisy.len() > 50);
        for d in noisy {
            let (cx, cy) = d.bbox.center();
            let near = s.sources.iter().any(|src| {
                ((cx - src.center.0).powi(2) + (cy - src.center.1).powi(2)).sqrt() <= cfg.noise_radius + 1e-9
            });
            assert!(near, "{d:?}");
        }
    }
}

#[test]
fn labels_are_sound() {
    let cfg = SimConfig::default();
    for seed in 0..10 {
        let s = generate_scenario(&cfg, seed).unwrap();
        let gt = s.gt_boxes();
        for d in &s.detections {
            let in_frame = gt.iter().filter(|g| g.frame == d.frame);
            match d.label {
                Some(Label::Noisy) => assert!(in_frame.clone().all(|g| g.bbox.iou(&d.bbox) < 0.5)),
                Some(Label::Good) => {
                    let own = gt.iter().find(|g| g.frame == d.frame && Some(g.id) == d.id).unwrap();
                    assert!(own.bbox.iou(&d.bbox) >= 0.5);
                }
                other => panic!("unexpected label {other:?}"),
            }
        }
        for a in &s.agents {
            let norm: f64 = a.appearance.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for f in a.start..=a.end {
                let b = a.bbox(f, cfg.height, cfg.width);
                assert!(b.left >= 0.0 && b.top >= 0.0);
                assert!(b.right() <= cfg.width as f64 && b.bottom() <= cfg.height as f64);
            }
        }
    }
}

#[test]
fn infeasible_config_rejected() {
    let cfg = SimConfig {
        agents: 40,
        ..SimConfig::default()
    };
    assert!(matches!(generate_scenario(&cfg, 0), Err(Error::Config(_))));
    let cfg = SimConfig {
        max_box: 40,
        ..SimConfig::default()
    };
    assert!(matches!(generate_scenario(&cfg, 0), Err(Error::Config(_))));
}

fn agent(id: u64, x: f64, vx: f64) -> Agent {
    let mut appearance = vec![0.0; 16];
    appearance[0] = 1.0;
    Agent {
        id,
        position: (x, 10.0),
        velocity: (vx, 0.0),
        size: (6.0, 6.0),
        appearance,
        start: 0,
        end: 7,
    }
}

/// Two agents crossing, detected exactly, and trajectories that follow
/// `first` then `second` from frame 6 on.
fn crossing() -> (Scenario, impl Fn(&Scenario, u64, u64) -> Trajectory) {
    let cfg = SimConfig {
        agents: 2,
        frames: 8,
        noise_rate: 0.0,
        ..SimConfig::default()
    };
    let mut s = generate_scenario(&cfg, 0).unwrap();
    s.agents = vec![agent(1, 0.0, 3.0), agent(2, 21.0, -3.0)];
    s.detections.clear();
    for f in 0..8 {
        for a in &s.agents {
            let mut d = Detection::new(f, a.bbox(f, 32, 32), 1.0, a.appearance.clone());
            d.id = Some(a.id);
            d.label = Some(Label::Good);
            s.detections.push(d);
        }
    }
    let follow = |s: &Scenario, first: u64, second: u64| Trajectory {
        id: first,
        boxes: (0..8)
            .map(|f| {
                let who = if f < 6 { first } else { second };
                let a = s.agents.iter().find(|a| a.id == who).unwrap();
                TrackBox {
                    frame: f,
                    bbox: a.bbox(f, 32, 32),
                    confidence: 1.0,
                    interpolated: false,
                }
            })
            .collect(),
    };
    (s, follow)
}

fn confusing(s: &Scenario) -> Vec<(usize, u64)> {
    s.detections
        .iter()
        .filter(|d| d.label == Some(Label::Confusing))
        .map(|d| (d.frame, d.id.unwrap()))
        .collect()
}

#[test]
fn swapped_crossing_labels_both_sides() {
    let (mut s, follow) = crossing();
    let perfect = [follow(&s, 1, 1), follow(&s, 2, 2)];
    let mut clean = s.clone();
    label_confusing(&mut clean, &perfect);
    assert!(confusing(&clean).is_empty());

    let swapped = [follow(&s, 1, 2), follow(&s, 2, 1)];
    label_confusing(&mut s, &swapped);
    assert_eq!(confusing(&s), vec![(6, 1), (6, 2), (7, 1), (7, 2)]);
}

#[test]
fn noisy_label_takes_precedence() {
    let (mut s, follow) = crossing();
    let idx = s
        .detections
        .iter()
        .position(|d| d.frame == 6 && d.id == Some(1))
        .unwrap();
    s.detections[idx].label = Some(Label::Noisy);
    let swapped = [follow(&s, 1, 2), follow(&s, 2, 1)];
    label_confusing(&mut s, &swapped);
    assert_eq!(s.detections[idx].label, Some(Label::Noisy));
    assert_eq!(confusing(&s), vec![(6, 2), (7, 1), (7, 2)]);
}

#[test]
fn event_grids_are_box_unions() {
    let cfg = SimConfig {
        noise_rate: 0.0,
        confusion_rate: 0.0,
        frames: 2,
        ..SimConfig::default()
    };
    let mut s = generate_scenario(&cfg, 0).unwrap();
    s.detections.clear();
    let bad = |b: BBox| {
        let mut d = Detection::new(0, b, 0.5, vec![1.0]);
        d.label = Some(Label::Noisy);
        d
    };
    s.detections.push(bad(BBox::new(0.0, 0.0, 2.0, 2.0)));
    assert_eq!(events_from_labels(&s)[0].count(), 4);
    s.detections.push(bad(BBox::new(1.0, 1.0, 2.0, 2.0)));
    let grids = events_from_labels(&s);
    assert_eq!(grids[0].count(), 7);
    assert!(grids[1].is_empty());
}

#[test]
fn scenario_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_scenario(&SimConfig::default(), 5).unwrap();
    save_scenario(&s, dir.path()).unwrap();
    assert_eq!(load_scenario(dir.path()).unwrap(), s);
    std::fs::remove_file(dir.path().join("frames.bin")).unwrap();
    assert!(matches!(load_scenario(dir.path()), Err(Error::MissingArtifact(_))));
}

proptest! {
    #[test]
    fn detection_files_round_trip(
        rows in proptest::collection::vec(
            (0usize..500, proptest::option::of(0u64..1000), -50.0f64..500.0, -50.0f64..500.0,
             0.0f64..100.0, 0.0f64..100.0, 0.0f64..=1.0, proptest::collection::vec(-1.0f64..1.0, 0..4)),
            0..20)
    ) {
        let dets: Vec<Detection> = rows
            .into_iter()
            .map(|(f, id, l, t, w, h, c, feat)| {
                let mut d = Detection::new(f, BBox::new(l, t, w, h), c, feat);
                d.id = id;
                d
            })
            .collect();
        let text = format_detections(&dets);
        let back = records_to_detections(&parse_mot(&text, "mem").unwrap()).unwrap();
        prop_assert_eq!(back, dets);
    }
}
