mod common;

use std::fs;

use common::{case_study, exit_through, v};
use safe_field_core::geometry::ConvexCell;
use safe_field_core::io::{load_environment, to_json, ControllerFile, EnvironmentFile, IoError};
use safe_field_core::measurement::{GridSpec, UncertaintyBounds};
use safe_field_core::planning::PlanMode;
use safe_field_core::synthesis::{
    assemble_robust_lp, synthesize_cell_controller, CellContext, SynthesisConfig,
};

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("safe-field-io-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn environment_round_trip() {
    let path = case_study("environment.json");
    let file = EnvironmentFile::load(&path).unwrap();
    let out = scratch("env.json");
    fs::write(&out, to_json(&file)).unwrap();
    assert_eq!(EnvironmentFile::load(&out).unwrap(), file);
    let env = load_environment(&out).unwrap();
    assert_eq!(env.cells.len(), file.cells.len());
    assert_eq!(env.patrol_cycle, file.patrol_cycle);
}

#[test]
fn environment_errors_name_the_problem() {
    let missing = load_environment(&scratch("does-not-exist.json"));
    assert!(matches!(missing, Err(IoError::Read { .. })));

    let garbled = scratch("garbled.json");
    fs::write(&garbled, "{ \"cells\": [").unwrap();
    assert!(matches!(load_environment(&garbled), Err(IoError::Parse { .. })));

    let mut file = EnvironmentFile::load(&case_study("environment.json")).unwrap();
    file.start = vec![1.0];
    let short = scratch("short.json");
    fs::write(&short, to_json(&file)).unwrap();
    match load_environment(&short) {
        Err(IoError::Field { field, .. }) => assert_eq!(field, "start"),
        other => panic!("{other:?}"),
    }

    let mut file = EnvironmentFile::load(&case_study("environment.json")).unwrap();
    file.cells[0].vertices.reverse();
    let clockwise = scratch("clockwise.json");
    fs::write(&clockwise, to_json(&file)).unwrap();
    assert!(matches!(load_environment(&clockwise), Err(IoError::Geometry { .. })));
}

#[test]
fn controller_round_trip() {
    let cell = ConvexCell::from_polygon(
        0,
        &[v(&[0.0, 0.0]), v(&[2.0, 0.0]), v(&[2.0, 2.0]), v(&[0.0, 2.0])],
        vec![0],
    )
    .unwrap();
    let mut config = SynthesisConfig::case_study(GridSpec::square(4, 6.0));
    config.bounds = UncertaintyBounds { epsilon: 0.8, sigma_m: 2.0 };
    let ctx = CellContext::new(&cell, &exit_through(&cell, 1), &[v(&[1.0, 1.0])], None, &config).unwrap();
    let c = synthesize_cell_controller(&assemble_robust_lp(&ctx, &config), &ctx, &config).unwrap();

    let file = ControllerFile::from_controllers(PlanMode::Stabilize, std::slice::from_ref(&c));
    let text = to_json(&file);
    // Margins carry their row kind inline.
    assert!(text.contains("\"kind\": \"clf\""));
    assert!(text.contains("\"kind\": \"cbf\""));
    let path = scratch("controllers.json");
    fs::write(&path, &text).unwrap();
    let back = ControllerFile::load(&path).unwrap().to_controllers(&path).unwrap();
    assert_eq!(back.len(), 1);
    let mut expected = c.clone();
    expected.duals = None;
    assert_eq!(back[0], expected);
    // Writing again gives the same bytes.
    assert_eq!(to_json(&ControllerFile::from_controllers(PlanMode::Stabilize, &back)), text);
}

#[test]
fn malformed_gains_are_rejected() {
    let cell = ConvexCell::from_polygon(
        0,
        &[v(&[0.0, 0.0]), v(&[2.0, 0.0]), v(&[2.0, 2.0]), v(&[0.0, 2.0])],
        vec![0],
    )
    .unwrap();
    let config = SynthesisConfig::case_study(GridSpec::square(4, 6.0));
    let ctx = CellContext::new(&cell, &exit_through(&cell, 1), &[v(&[1.0, 1.0])], None, &config).unwrap();
    let c = synthesize_cell_controller(&assemble_robust_lp(&ctx, &config), &ctx, &config).unwrap();
    let mut file = ControllerFile::from_controllers(PlanMode::Stabilize, &[c]);
    file.controllers[0].gains_k[0][1].pop();
    let path = scratch("bad-controllers.json");
    assert!(matches!(file.to_controllers(&path), Err(IoError::Field { .. })));
}
