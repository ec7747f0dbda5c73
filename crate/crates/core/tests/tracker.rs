use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stpp_core::detection::{BBox, Detection};
use stpp_core::tracker::{
    build_tracklets, cluster_tracklets, densities, format_trajectories, interpolate, local_density, max_similarity,
    split_overlapping, track, tracklet_similarity, SimilarityMatrix, TrackerConfig, Tracklet,
};

fn det(frame: usize, left: f64, top: f64, features: &[f64]) -> Detection {
    Detection::new(frame, BBox::new(left, top, 10.0, 10.0), 0.9, features.to_vec())
}

fn tracklet(dets: Vec<Detection>) -> Tracklet {
    Tracklet::new(dets).unwrap()
}

/// Similarity matrix for `n` tracklets with the given frame ranges.
fn matrix(ranges: &[(usize, usize)], s: &[f64]) -> SimilarityMatrix {
    let n = ranges.len();
    let overlap = (0..n * n)
        .map(|k| {
            let (a, b) = (ranges[k / n], ranges[k % n]);
            a.0 <= b.1 && b.0 <= a.1
        })
        .collect();
    SimilarityMatrix::new(n, s.to_vec(), overlap).unwrap()
}

#[test]
fn steady_object_forms_one_tracklet() {
    let dets: Vec<_> = (0..5).map(|t| det(t, 5.0 + 0.5 * t as f64, 5.0, &[1.0, 0.0])).collect();
    let tracklets = build_tracklets(&dets, &TrackerConfig::default());
    assert_eq!(tracklets.len(), 1);
    assert_eq!(tracklets[0].len(), 5);
}

#[test]
fn appearance_gate_prevents_swaps() {
    // Two objects cross: their boxes overlap strongly at every step.
    let mut dets = Vec::new();
    for t in 0..6 {
        dets.push(det(t, 10.0 + t as f64, 5.0, &[1.0, 0.0]));
        dets.push(det(t, 15.0 - t as f64, 5.0, &[0.0, 1.0]));
    }
    let tracklets = build_tracklets(&dets, &TrackerConfig::default());
    assert_eq!(tracklets.len(), 2);
    for t in &tracklets {
        assert_eq!(t.len(), 6);
        let f = &t.detections()[0].features;
        assert!(t.detections().iter().all(|d| &d.features == f));
    }
}

#[test]
fn missing_frame_breaks_a_tracklet() {
    let dets: Vec<_> = [0, 1, 3, 4].iter().map(|&t| det(t, 5.0, 5.0, &[1.0])).collect();
    let tracklets = build_tracklets(&dets, &TrackerConfig::default());
    assert_eq!(tracklets.len(), 2);
    assert_eq!((tracklets[1].start(), tracklets[1].end()), (3, 4));
}

#[test]
fn greedy_linking_prefers_the_higher_score() {
    // One track, two candidates on the next frame: the better aligned wins.
    let dets = vec![
        det(0, 0.0, 0.0, &[1.0, 0.0]),
        det(1, 3.0, 0.0, &[1.0, 0.0]),
        det(1, 1.0, 0.0, &[1.0, 0.1]),
    ];
    let tracklets = build_tracklets(&dets, &TrackerConfig::default());
    assert_eq!(tracklets.len(), 2);
    assert_eq!(tracklets[0].detections()[1].bbox.left, 1.0);
    assert!(Tracklet::new(vec![]).is_err());
    assert!(Tracklet::new(vec![det(0, 0.0, 0.0, &[1.0]), det(2, 0.0, 0.0, &[1.0])]).is_err());
}

#[test]
fn similarity_examples() {
    let a = tracklet((0..4).map(|t| det(t, 2.0 * t as f64, 0.0, &[1.0, 2.0])).collect());
    assert!((tracklet_similarity(&a, &a.clone(), 3) - 1.0).abs() < 1e-12);

    let b = tracklet((6..9).map(|t| det(t, 2.0 * t as f64, 0.0, &[-2.0, 1.0])).collect());
    assert_eq!(tracklet_similarity(&a, &b, 3), 0.0);

    // Hand trace: a moves 2 px/frame over frames 0-1, b is a single box at frame 3.
    let a = tracklet(vec![det(0, 0.0, 0.0, &[1.0, 0.0]), det(1, 2.0, 0.0, &[1.0, 0.0])]);
    let b = tracklet(vec![det(3, 6.0, 0.0, &[0.6, 0.8])]);
    // Pair (1, 3): midpoint 2, a's box at left 4 vs 6 -> IoU 80/120.
    // Pair (0, 3): midpoint 1.5, a's box at left 3 vs 6 -> IoU 70/130.
    let want = (0.6 * (80.0 / 120.0) + 0.6 * (70.0 / 130.0)) / 2.0;
    assert!((tracklet_similarity(&a, &b, 3) - want).abs() < 1e-12);
    assert_eq!(tracklet_similarity(&a, &b, 3), tracklet_similarity(&b, &a, 3));
}

#[test]
fn similarity_is_symmetric_on_random_tracklets() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let make = |rng: &mut ChaCha8Rng| {
            let start = rng.random_range(0..10);
            let len = rng.random_range(1..6);
            let f: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (x, vx) = (rng.random_range(0.0..20.0), rng.random_range(-2.0..2.0));
            tracklet(
                (start..start + len)
                    .map(|t| det(t, x + vx * t as f64, 3.0, &f))
                    .collect(),
            )
        };
        let (a, b) = (make(&mut rng), make(&mut rng));
        let k = rng.random_range(1..5);
        let (s, r) = (tracklet_similarity(&a, &b, k), tracklet_similarity(&b, &a, k));
        assert_eq!(s, r);
        assert!((0.0..=1.0).contains(&s));
    }
}

#[test]
fn density_hand_traces() {
    // Tracklet 0 against three later tracklets with similarities 0.6, 0.7, 0.4.
    let ranges = [(0, 2), (3, 5), (6, 8), (9, 10)];
    #[rustfmt::skip]
    let s = [
        1.0, 0.6, 0.7, 0.4,
        0.6, 1.0, 0.2, 0.1,
        0.7, 0.2, 1.0, 0.3,
        0.4, 0.1, 0.3, 1.0,
    ];
    let m = matrix(&ranges, &s);
    assert_eq!(local_density(&m, 0, 0.5), 2);
    let rho = densities(&m, 0.5);
    assert_eq!(rho, vec![2, 1, 1, 0]);
    assert_eq!(max_similarity(&m, &rho, 0), 0.0);
    assert_eq!(max_similarity(&m, &rho, 1), 0.6);
    // Tracklet 2 ties with 1 on density; the lower index ranks higher.
    assert_eq!(max_similarity(&m, &rho, 2), 0.7);
    assert_eq!(max_similarity(&m, &rho, 3), 0.4);

    // Exactly at the threshold does not count.
    let m = matrix(&[(0, 1), (2, 3)], &[1.0, 0.5, 0.5, 1.0]);
    assert_eq!(local_density(&m, 0, 0.5), 0);

    // An overlapping neighbour contributes nothing.
    let m = matrix(&[(0, 4), (2, 6)], &[1.0, 0.9, 0.9, 1.0]);
    assert_eq!(local_density(&m, 0, 0.5), 0);

    // Candidates with similarities 0.3 and 0.8.
    let ranges = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)];
    #[rustfmt::skip]
    let s = [
        1.0, 0.3, 0.8, 0.0, 0.0,
        0.3, 1.0, 0.0, 0.9, 0.9,
        0.8, 0.0, 1.0, 0.9, 0.9,
        0.0, 0.9, 0.9, 1.0, 0.0,
        0.0, 0.9, 0.9, 0.0, 1.0,
    ];
    let m = matrix(&ranges, &s);
    let rho = densities(&m, 0.5);
    assert_eq!(rho, vec![1, 2, 3, 2, 2]);
    assert_eq!(max_similarity(&m, &rho, 0), 0.8);
}

#[test]
fn clustering_examples() {
    let m = matrix(
        &[(0, 1), (2, 3), (4, 5)],
        &[1.0, 0.2, 0.4, 0.2, 1.0, 0.1, 0.4, 0.1, 1.0],
    );
    let c = cluster_tracklets(&m, 0.5);
    assert_eq!(c.labels, vec![0, 1, 2]);

    let m = matrix(&[(0, 1), (2, 3)], &[1.0, 0.9, 0.9, 1.0]);
    let c = cluster_tracklets(&m, 0.5);
    assert_eq!(c.labels, vec![0, 0]);
    assert_eq!(c.centers.len(), 1);
}

/// Independent re-implementation with explicit loops.
fn oracle(n: usize, s: &[f64], o: &[bool], s_c: f64) -> Vec<usize> {
    let mut rho = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if !o[i * n + j] && s[i * n + j] > s_c {
                rho[i] += 1;
            }
        }
    }
    let mut delta = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            let above = rho[j] > rho[i] || (rho[j] == rho[i] && j < i);
            if above && !o[i * n + j] && s[i * n + j] > delta[i] {
                delta[i] = s[i * n + j];
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if delta[i] < s_c {
            label[i] = next;
            next += 1;
        }
    }
    loop {
        // Densest unassigned tracklet, lowest index first.
        let mut pick = None;
        for i in 0..n {
            if label[i] == usize::MAX && pick.is_none_or(|p: usize| rho[i] > rho[p]) {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        let mut best = usize::MAX;
        for j in 0..n {
            let above = rho[j] > rho[i] || (rho[j] == rho[i] && j < i);
            if above && !o[i * n + j] && (best == usize::MAX || s[i * n + j] > s[i * n + best]) {
                best = j;
            }
        }
        label[i] = label[best];
    }
    label
}

#[test]
fn clustering_matches_brute_force_oracle() {
    let levels = [0.0, 0.1, 0.3, 0.5, 0.55, 0.6, 0.8, 0.9, 1.0];
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=8);
        let ranges: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                let a = rng.random_range(0..20);
                (a, a + rng.random_range(0..5))
            })
            .collect();
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = levels[rng.random_range(0..levels.len())];
                s[i * n + j] = v;
                s[j * n + i] = v;
            }
        }
        let m = matrix(&ranges, &s);
        let o: Vec<bool> = (0..n * n).map(|k| m.overlaps(k / n, k % n)).collect();
        let c = cluster_tracklets(&m, 0.5);
        assert_eq!(c.labels, oracle(n, &s, &o, 0.5), "seed {seed}");

        // Partition, and non-overlapping centers are mutually dissimilar.
        let members = c.members();
        assert_eq!(members.iter().map(Vec::len).sum::<usize>(), n);
        for &a in &c.centers {
            for &b in &c.centers {
                if a != b && !m.overlaps(a, b) {
                    assert!(m.get(a, b) < 0.5);
                }
            }
        }
    }
}

#[test]
fn interpolation_examples() {
    let a = tracklet(vec![Detection::new(1, BBox::new(0.0, 0.0, 4.0, 4.0), 0.8, vec![1.0])]);
    let b = tracklet(vec![Detection::new(3, BBox::new(10.0, 0.0, 4.0, 4.0), 0.4, vec![1.0])]);
    let t = interpolate(&[&b, &a]).unwrap();
    assert_eq!(t.boxes.len(), 3);
    assert_eq!(t.boxes[1].bbox.left, 5.0);
    assert!(t.boxes[1].interpolated);
    assert!((t.boxes[1].confidence - 0.6).abs() < 1e-12);

    // No gap: plain concatenation.
    let c = tracklet(vec![det(2, 1.0, 1.0, &[1.0]), det(3, 2.0, 1.0, &[1.0])]);
    let d = tracklet(vec![det(4, 3.0, 1.0, &[1.0])]);
    let t = interpolate(&[&c, &d]).unwrap();
    let lefts: Vec<f64> = t.boxes.iter().map(|b| b.bbox.left).collect();
    assert_eq!(lefts, vec![1.0, 2.0, 3.0]);
    assert!(t.boxes.iter().all(|b| !b.interpolated));

    // Three missing frames, both coordinates moving.
    let e = tracklet(vec![Detection::new(0, BBox::new(0.0, 8.0, 4.0, 6.0), 1.0, vec![1.0])]);
    let f = tracklet(vec![Detection::new(4, BBox::new(8.0, 0.0, 8.0, 2.0), 1.0, vec![1.0])]);
    let t = interpolate(&[&e, &f]).unwrap();
    let want = [(2.0, 6.0, 5.0, 5.0), (4.0, 4.0, 6.0, 4.0), (6.0, 2.0, 7.0, 3.0)];
    for (b, w) in t.boxes[1..4].iter().zip(want) {
        assert_eq!((b.bbox.left, b.bbox.top, b.bbox.width, b.bbox.height), w);
    }
    assert_eq!(t.boxes[0].bbox, e.detections()[0].bbox);
    assert_eq!(t.boxes[4].bbox, f.detections()[0].bbox);

    assert!(interpolate(&[&c, &c.clone()]).is_err());
    assert!(interpolate(&[]).is_err());
}

#[test]
fn overlapping_cluster_members_are_split() {
    let t = |s: usize, e: usize| tracklet((s..=e).map(|f| det(f, 0.0, 0.0, &[1.0])).collect());
    let ts = vec![t(0, 3), t(2, 5), t(4, 8), t(6, 9)];
    let groups = split_overlapping(&ts, &[0, 1, 2, 3]);
    assert_eq!(groups, vec![vec![0, 2], vec![1, 3]]);
}

#[test]
fn end_to_end_tracking_links_across_a_gap() {
    let mut dets = Vec::new();
    for t in (0..5).chain(7..12) {
        dets.push(det(t, t as f64, 10.0, &[1.0, 0.0, 0.0]));
        dets.push(det(t, 40.0 - t as f64, 30.0, &[0.0, 1.0, 0.0]));
    }
    let traj = track(&dets, &TrackerConfig::default()).unwrap();
    assert_eq!(traj.len(), 2);
    for t in &traj {
        assert_eq!((t.start(), t.end(), t.boxes.len()), (0, 11, 12));
    }
    assert_eq!(traj[0].boxes[5].bbox.left, 5.0);
    let text = format_trajectories(&traj);
    assert_eq!(text.lines().count(), 24);
    assert!(text.starts_with("1,1,0,10,10,10,0.9,-1,-1,-1\n1,2,40,30,10,10,0.9,-1,-1,-1\n"));
}
