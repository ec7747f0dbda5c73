use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stpp_core::pointprocess::{
    counting_function, format_event_grids, log_likelihood, parse_event_grids, predict_events, Event, EventGrid,
    IntensityMap, Prediction,
};
use stpp_core::Graph;

fn random_case(rng: &mut ChaCha8Rng, frames: usize, h: usize, w: usize) -> (Vec<IntensityMap>, Vec<EventGrid>) {
    let maps = (0..frames)
        .map(|f| IntensityMap::new(f, h, w, (0..h * w).map(|_| rng.random_range(0.01..3.0)).collect()).unwrap())
        .collect();
    let grids = (0..frames)
        .map(|f| EventGrid::from_cells(f, h, w, (0..h * w).map(|_| rng.random_bool(0.3)).collect()).unwrap())
        .collect();
    (maps, grids)
}

/// Explicit triple loop over frames, rows and columns.
fn loop_oracle(maps: &[IntensityMap], grids: &[EventGrid]) -> f64 {
    let mut event_term = 0.0;
    let mut rest = 0.0;
    for (m, g) in maps.iter().zip(grids) {
        for row in 0..m.height() {
            for col in 0..m.width() {
                if g.get(row, col) {
                    event_term += m.get(row, col).ln();
                } else {
                    rest += m.get(row, col);
                }
            }
        }
    }
    event_term - rest
}

#[test]
fn likelihood_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let frames = rng.random_range(1..4);
        let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
        let (maps, grids) = random_case(&mut rng, frames, h, w);
        let got = log_likelihood(&maps, &grids).unwrap();
        assert!((got - loop_oracle(&maps, &grids)).abs() < 1e-10);
    }
}

#[test]
fn graph_likelihood_agrees_with_pure_version() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (maps, grids) = random_case(&mut rng, 1, 4, 5);
    let mut g = Graph::new();
    let lam = g.constant(&maps[0].to_tensor());
    let ll = g.event_log_likelihood(lam, grids[0].cells()).unwrap();
    assert!((g.value(ll)[0] - log_likelihood(&maps, &grids).unwrap()).abs() < 1e-12);
}

#[test]
fn likelihood_shape_errors() {
    let maps = vec![IntensityMap::constant(0, 2, 2, 1.0).unwrap()];
    assert!(log_likelihood(&maps, &[]).is_err());
    assert!(log_likelihood(&maps, &[EventGrid::empty(0, 2, 3)]).is_err());
}

#[test]
fn likelihood_is_monotone_under_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let (maps, grids) = random_case(&mut rng, 1, 3, 3);
        let base = log_likelihood(&maps, &grids).unwrap();
        for cell in 0..9 {
            let mut values = maps[0].values().to_vec();
            values[cell] += 0.1;
            let bumped = vec![IntensityMap::new(0, 3, 3, values).unwrap()];
            let after = log_likelihood(&bumped, &grids).unwrap();
            if grids[0].cells()[cell] {
                assert!(after > base);
            } else {
                assert!(after < base);
            }
        }
    }
}

#[test]
fn counting_function_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut events = std::collections::BTreeSet::new();
    while events.len() < 10 {
        events.insert(Event {
            t: rng.random_range(0..5),
            x: rng.random_range(0..6),
            y: rng.random_range(0..6),
        });
    }
    // Materialize a dense occupancy cube and count by scanning it.
    let mut cube = [[[false; 6]; 6]; 5];
    for e in &events {
        cube[e.t][e.y][e.x] = true;
    }
    for _ in 0..20 {
        let (t, x, y) = (rng.random_range(0..5), rng.random_range(0..6), rng.random_range(0..6));
        let mut expected = 0;
        for (tt, plane) in cube.iter().enumerate() {
            for (yy, row) in plane.iter().enumerate() {
                for (xx, &hit) in row.iter().enumerate() {
                    if hit && tt <= t && xx <= x && yy <= y {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(counting_function(&events, t, x, y), expected);
    }
}

fn grid_strategy() -> impl Strategy<Value = EventGrid> {
    (1usize..6, 1usize..9, 0usize..100).prop_flat_map(|(h, w, frame)| {
        proptest::collection::vec(any::<bool>(), h * w)
            .prop_map(move |cells| EventGrid::from_cells(frame, h, w, cells).unwrap())
    })
}

proptest! {
    #[test]
    fn grid_event_round_trip(grid in grid_strategy()) {
        let events = grid.events();
        let back = EventGrid::from_events(grid.frame(), grid.height(), grid.width(), &events).unwrap();
        prop_assert_eq!(&back, &grid);
        let text = format_event_grids(std::slice::from_ref(&grid));
        prop_assert_eq!(parse_event_grids(&text, "p").unwrap(), vec![grid]);
    }

    #[test]
    fn raising_threshold_never_adds_events(
        values in proptest::collection::vec(0.0f64..2.0, 16),
        lo in 0.0f64..1.0,
        delta in 0.0f64..1.0,
    ) {
        let map = IntensityMap::new(0, 4, 4, values).unwrap();
        let a = predict_events(&map, Prediction::Threshold { threshold: lo }).unwrap();
        let b = predict_events(&map, Prediction::Threshold { threshold: lo + delta }).unwrap();
        for (x, y) in a.cells().iter().zip(b.cells()) {
            prop_assert!(*x || !*y);
        }
    }
}
