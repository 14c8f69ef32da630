use std::path::{Path, PathBuf};

use lanesim::calib::extract::{extract_events, ExtractOptions};
use lanesim::network::LaneRelation;
use lanesim::par::Exec;
use lanesim::sim::io::{read_trajectories, trajectory_rows, write_trajectories};
use lanesim::sim::scenario::{ModelKind, Scenario};
use lanesim::sim::world::Classification;
use lanesim::sim::{run, run_with, ID_STRIDE};
use lanesim::Error;

fn scenario(name: &str) -> Scenario {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    Scenario::load(Path::new(&p)).unwrap()
}

fn short(name: &str, secs: f64) -> Scenario {
    let mut sc = scenario(name);
    sc.duration_s = secs;
    sc
}

#[test]
fn urban_counts_are_consistent() {
    let sc = short("urban.json", 600.0);
    let out = run(&sc).unwrap();
    let s = &out.summary;
    assert!(s.spawned > 0 && s.lane_changes > 0);
    assert_eq!(s.spawned, s.exited + s.active);
    assert_eq!(out.events.len() as u64, s.lane_changes);
    let binned: u64 = out.rates.iter().map(|r| r.events).sum();
    assert_eq!(binned, s.lane_changes);

    // Ids carry their demand level.
    let levels = sc.demand_levels.len() as u64;
    assert!(out.events.iter().all(|e| e.vehicle_id / ID_STRIDE < levels));
}

#[test]
fn classifications_match_relations() {
    let out = run(&short("urban.json", 600.0)).unwrap();
    for e in &out.events {
        match e.classification {
            Classification::Symmetric => assert_eq!(e.relation, LaneRelation::Symmetric),
            Classification::ReturnLeg => {}
            _ => {
                assert_eq!(e.relation, LaneRelation::Asymmetric);
                assert!(e.p_back.is_some_and(|p| (0.0..1.0).contains(&p)));
            }
        }
    }
}

#[test]
fn executors_give_identical_runs() {
    let mut sc = short("highway.json", 300.0);
    sc.demand_levels.truncate(3);
    for m in [ModelKind::Mcdm, ModelKind::Mobil] {
        sc.model = m;
        let a = run_with(&sc, Exec::Sequential).unwrap();
        let b = run_with(&sc, Exec::Parallel).unwrap();
        assert_eq!(a.events, b.events, "{m:?}");
        assert_eq!(a.rates, b.rates, "{m:?}");
        assert_eq!(a.summary, b.summary, "{m:?}");
    }
}

#[test]
fn seed_changes_the_run() {
    let mut sc = short("urban.json", 300.0);
    let a = run(&sc).unwrap();
    sc.seed += 1;
    let b = run(&sc).unwrap();
    assert_ne!(a.events, b.events);
}

#[test]
fn extraction_sees_simulated_changes() {
    let mut sc = short("urban.json", 300.0);
    sc.demand_levels.truncate(1);
    sc.trajectory_interval_s = Some(1.0);
    let out = run(&sc).unwrap();
    assert!(!out.trajectories.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectories.csv");
    let rows = trajectory_rows(&sc.network, &out.trajectories);
    write_trajectories(&path, &rows).unwrap();
    let back = read_trajectories(&path).unwrap();
    assert_eq!(back.len(), rows.len());

    let ex = extract_events(&back, &sc.network, &ExtractOptions::default()).unwrap();
    assert_eq!(ex.skipped_records, 0);
    assert!(!ex.samples.is_empty());
    // Each observed change is a simulated one made before the next sample. Changes
    // right after a vehicle enters a section fall between samples on two
    // sections and are not observable.
    for c in &ex.changes {
        let hit = out.events.iter().any(|e| {
            e.vehicle_id == c.vehicle_id
                && e.from_lane == c.from
                && e.to_lane == c.to
                && (0.0..=1.0 + 1e-6).contains(&(e.time - c.time_s))
        });
        assert!(hit, "{c:?}");
    }
    assert!(ex.changes.len() * 2 > out.events.len());
    assert!(ex.samples.iter().filter(|s| s.label == 1).count() > 0);
}

#[test]
fn broken_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    std::fs::write(
        &p,
        r#"{"network": "nowhere.json", "demand_vph": 100, "duration_s": 60}"#,
    )
    .unwrap();
    let err = Scenario::load(&p).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(err.to_string().contains("nowhere.json"));

    let mut sc = short("urban.json", 60.0);
    sc.dt_s = -1.0;
    assert!(matches!(run(&sc), Err(Error::Config(_))));
}
