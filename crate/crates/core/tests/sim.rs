use bevrep::sim::autopilot::autopilot_controls;
use bevrep::sim::world::{lateral_deviation, SPAWN_GAP};
use bevrep::sim::*;
use proptest::prelude::*;

fn town(rows: usize) -> TownConfig {
    TownConfig { rows, cols: rows, ..Default::default() }
}

#[test]
fn single_intersection_lane_counts() {
    let g = build_town(&town(1), 7).unwrap();
    assert_eq!(g.intersections.len(), 1);
    assert_eq!(g.count(LaneKind::Road), 8);
    let connectors = g.lanes.iter().filter(|l| l.kind.is_connector()).count();
    assert_eq!(connectors, 12);
    assert_eq!(g.count(LaneKind::Turnaround), 4);
    // Independent count: enumerate successors of every signalized approach.
    let mut enumerated: Vec<usize> = g
        .light_bindings
        .keys()
        .flat_map(|&l| g.lane(l).successors.clone())
        .collect();
    enumerated.sort();
    enumerated.dedup();
    assert_eq!(g.light_bindings.len(), 4);
    assert_eq!(enumerated.len(), 12);
    assert!(enumerated.iter().all(|&l| g.lane(l).kind.is_connector()));
}

#[test]
fn grid_graph_is_strongly_connected() {
    let g = build_town(&town(3), 1).unwrap();
    let n = g.lanes.len();
    let reach = |start: usize, rev: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        while let Some(l) = stack.pop() {
            if std::mem::replace(&mut seen[l], true) {
                continue;
            }
            if rev {
                stack.extend(g.lanes.iter().filter(|x| x.successors.contains(&l)).map(|x| x.id));
            } else {
                stack.extend(g.lane(l).successors.iter().copied());
            }
        }
        seen.iter().all(|&s| s)
    };
    assert!(reach(0, false) && reach(0, true));
}

#[test]
fn build_is_deterministic() {
    let a = build_town(&town(2), 42).unwrap().to_json();
    let b = build_town(&town(2), 42).unwrap().to_json();
    assert_eq!(a, b);
    let c = build_town(&town(2), 43).unwrap().to_json();
    assert_ne!(a, c, "seed should change light phases");
    let back = LaneGraph::from_json(&a).unwrap();
    assert_eq!(back.to_json(), a);
}

#[test]
fn invalid_town_configs_are_rejected() {
    let tight = TownConfig { block_length: 10.0, turning_radius: 8.0, ..town(1) };
    assert!(build_town(&tight, 0).is_err());
    assert!(build_town(&TownConfig { rows: 0, ..town(1) }, 0).is_err());
    assert!(build_town(&TownConfig { lane_width: 5.0, ..town(1) }, 0).is_err());
    assert!(build_town(&TownConfig { block_length: 59.0, ..town(1) }, 0).is_err());
    assert!(build_town(&TownConfig { green_s: 20.0, red_s: 10.0, ..town(1) }, 0).is_err());
}

#[test]
fn graph_version_is_checked() {
    let g = build_town(&town(1), 0).unwrap();
    let text = g.to_json().replacen("\"version\": 1", "\"version\": 9", 1);
    assert!(LaneGraph::from_json(&text).is_err());
}

/// Along-route distance between agents on the same or consecutive lanes, bumper to bumper.
fn bumper_gaps(g: &LaneGraph, w: &WorldState) -> Vec<f64> {
    let mut gaps = Vec::new();
    for a in &w.agents {
        for b in &w.agents {
            if a.id == b.id {
                continue;
            }
            let center = if a.lane == b.lane && b.offset >= a.offset {
                Some(b.offset - a.offset)
            } else if g.lane(a.lane).successors.contains(&b.lane) {
                Some(g.lane(a.lane).length() - a.offset + b.offset)
            } else {
                None
            };
            if let Some(c) = center {
                gaps.push(c - (a.length + b.length) / 2.0);
            }
        }
    }
    gaps
}

#[test]
fn spawn_hundred_agents_with_gaps() {
    let g = build_town(&town(4), 0).unwrap();
    let w = spawn_agents(&g, 100, 9).unwrap();
    assert_eq!(w.agents.len(), 100);
    let ids: std::collections::BTreeSet<_> = w.agents.iter().map(|a| a.id).collect();
    assert_eq!(ids.len(), 100);
    let gaps = bumper_gaps(&g, &w);
    assert!(!gaps.is_empty());
    assert!(gaps.iter().all(|&d| d >= SPAWN_GAP - 1e-9), "min gap {:?}", gaps.iter().cloned().fold(f64::MAX, f64::min));
    for a in &w.agents {
        assert!(a.route.len() >= 3);
        assert_eq!(a.route[0], a.lane);
        assert!(a.route.windows(2).all(|p| g.lane(p[0]).successors.contains(&p[1])));
        assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&a.heading));
    }
}

#[test]
fn spawn_edge_cases() {
    let g = build_town(&town(1), 0).unwrap();
    let w = spawn_agents(&g, 1, 0).unwrap();
    assert_eq!(w.agents.len(), 1);
    assert_eq!(w.ego().id, 0);
    assert!(matches!(spawn_agents(&g, 1_000_000, 0), Err(bevrep::error::Error::Sim(_))));
    assert!(spawn_agents(&g, 0, 0).is_err());
}

/// A lone agent on a road lane long enough that the next lane is far away.
fn lone_agent(offset_from_start: f64, speed: f64) -> (LaneGraph, WorldState, AutopilotParams) {
    let mut g = build_town(&TownConfig { rows: 2, cols: 1, block_length: 200.0, ..Default::default() }, 0).unwrap();
    g.force_all_green();
    let lane = g
        .lanes
        .iter()
        .filter(|l| l.kind == LaneKind::Road && g.light_for(l.id).is_some())
        .max_by(|a, b| a.length().partial_cmp(&b.length()).unwrap())
        .unwrap()
        .id;
    let mut w = spawn_agents(&g, 1, 0).unwrap();
    let a = &mut w.agents[0];
    let (pos, h) = g.lane(lane).centerline.pose_at(offset_from_start);
    a.lane = lane;
    a.offset = offset_from_start;
    a.x = pos[0];
    a.y = pos[1];
    a.heading = h;
    a.speed = speed;
    a.route = vec![lane];
    while a.route.len() < 4 {
        let last = *a.route.last().unwrap();
        a.route.push(g.lane(last).successors[0]);
    }
    (g, w, AutopilotParams::default())
}

#[test]
fn one_step_at_ten_meters_per_second_moves_one_meter() {
    let (g, w, p) = lone_agent(20.0, 10.0);
    let next = step(&w, &g, &p);
    let (a, b) = (&w.agents[0], &next.agents[0]);
    let d = [b.x - a.x, b.y - a.y];
    assert!((d[0].hypot(d[1]) - 1.0).abs() < 1e-12);
    // Along the pre-step heading.
    assert!((d[0] - a.heading.cos()).abs() < 1e-12 && (d[1] - a.heading.sin()).abs() < 1e-12);
}

#[test]
fn autopilot_examples() {
    // Straight empty lane below desired speed.
    let (g, w, p) = lone_agent(20.0, 5.0);
    let c = autopilot_controls(&w, &g, &p, 0);
    assert!(c.accel > 0.0);
    assert!(c.steer.abs() < 0.01);
    // At the desired speed, far from the next lane.
    let (g, w, p) = lone_agent(5.0, 11.0);
    let c = autopilot_controls(&w, &g, &p, 0);
    assert!(c.accel.abs() < 0.05, "accel {}", c.accel);
    // Red light 20 m ahead at 8 m/s.
    let (mut g, mut w, p) = lone_agent(0.0, 8.0);
    g.force_all_red();
    let lane = w.agents[0].lane;
    let off = g.lane(lane).length() - 20.0;
    let (pos, h) = g.lane(lane).centerline.pose_at(off);
    let a = &mut w.agents[0];
    a.offset = off;
    a.x = pos[0];
    a.y = pos[1];
    a.heading = h;
    let c = autopilot_controls(&w, &g, &p, 0);
    assert!(c.accel < 0.0, "accel {}", c.accel);
}

#[test]
fn standing_start_accelerates_everyone() {
    let cfg = SimConfig { town: town(3), n_agents: 60, ..Default::default() };
    let (mut g, w) = init_world(&cfg, 5).unwrap();
    g.force_all_green();
    assert!(w.agents.iter().all(|a| a.speed == 0.0));
    let next = step(&w, &g, &cfg.autopilot);
    assert!(next.agents.iter().all(|a| a.speed > 0.0));
}

#[test]
fn replay_is_byte_exact() {
    let cfg = SimConfig { town: town(2), n_agents: 30, ..Default::default() };
    let run = || {
        let (g, mut w) = init_world(&cfg, 11).unwrap();
        for _ in 0..300 {
            w = step(&w, &g, &cfg.autopilot);
        }
        w.to_json()
    };
    assert_eq!(run(), run());
}

#[test]
fn lane_keeping_thousand_steps_fifty_agents() {
    let cfg = SimConfig { town: town(3), n_agents: 50, ..Default::default() };
    let (g, mut w) = init_world(&cfg, 2024).unwrap();
    let half = cfg.town.lane_width / 2.0;
    let mut worst: f64 = 0.0;
    let mut excursions = 0;
    for _ in 0..1000 {
        w = step(&w, &g, &cfg.autopilot);
        for a in &w.agents {
            let d = lateral_deviation(a, &g);
            worst = worst.max(d);
            excursions += usize::from(d > half);
        }
    }
    assert_eq!(excursions, 0, "worst deviation {worst:.3} m");
    // Traffic is not frozen.
    assert!(w.agents.iter().filter(|a| a.speed > 1.0).count() > 10);
}

#[test]
fn forced_red_is_never_run() {
    let cfg = SimConfig { town: TownConfig { rows: 2, cols: 2, ..Default::default() }, n_agents: 50, ..Default::default() };
    let (mut g, mut w) = init_world(&cfg, 77).unwrap();
    g.force_all_red();
    // Agents that start at least 60 m before a stop line on their own lane.
    let watched: Vec<usize> = w
        .agents
        .iter()
        .filter(|a| g.light_for(a.lane).is_some() && g.lane(a.lane).length() - a.offset >= 60.0)
        .map(|a| a.id)
        .collect();
    assert!(!watched.is_empty());
    for _ in 0..1000 {
        w = step(&w, &g, &cfg.autopilot);
        for a in &w.agents {
            // Nobody ever enters an intersection.
            assert!(!g.lane(a.lane).kind.is_connector(), "agent {} entered lane {}", a.id, a.lane);
            if watched.contains(&a.id) {
                assert!(a.offset + a.length / 2.0 <= g.lane(a.lane).length() + 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn kinematics_and_no_tunneling(seed in 0u64..10_000, n in 1usize..40) {
        let cfg = SimConfig { town: town(2), n_agents: n, ..Default::default() };
        let (g, mut w) = init_world(&cfg, seed).unwrap();
        let p = &cfg.autopilot;
        let bound = p.v_max * DT + 0.5 * p.max_accel * DT * DT;
        for _ in 0..150 {
            let next = step(&w, &g, p);
            for (i, (a, b)) in w.agents.iter().zip(&next.agents).enumerate() {
                let c = autopilot_controls(&w, &g, p, i);
                prop_assert_eq!(b.speed, (a.speed + c.accel * DT).clamp(0.0, p.v_max));
                prop_assert!((b.x - a.x).hypot(b.y - a.y) <= bound);
                prop_assert!((-1.0..=1.0).contains(&c.steer));
                prop_assert!((-p.max_brake..=p.max_accel).contains(&c.accel));
                prop_assert!(b.offset >= 0.0 && b.offset <= g.lane(b.lane).length());
                prop_assert_eq!(b.route[0], b.lane);
            }
            prop_assert_eq!(next.time, next.step as f64 * DT);
            w = next;
        }
    }
}
