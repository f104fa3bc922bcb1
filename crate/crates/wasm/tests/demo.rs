use orbkoop_wasm::{cr3bp_orbit, two_body_orbit, KoopmanDemo};

fn field(json: &str, key: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v[key].as_f64().unwrap()
}

#[test]
fn circular_orbit_path_and_invariants() {
    let r = two_body_orbit("earth", 500.0, 0.0, false, 1).unwrap_or_else(|_| panic!("propagation failed"));
    let path = r.path();
    assert_eq!(path.len(), 2 * 1001);
    let radius = path[0].hypot(path[1]);
    assert!((radius - 6878.14).abs() < 1e-6);
    let s = r.summary();
    assert!((field(&s, "mean_r_km") - radius).abs() < 1e-3);
    assert!(field(&s, "max_xi_r") < 1e-9);
}

#[test]
fn l1_trajectory_keeps_its_jacobi_constant() {
    let r = cr3bp_orbit(1.03, 90.0).unwrap_or_else(|_| panic!("propagation failed"));
    assert_eq!(r.path().len(), 2 * 1001);
    assert!(field(&r.summary(), "jacobi_drift") < 1e-6);
}

#[test]
fn in_page_model_tracks_a_circular_orbit() {
    let demo = KoopmanDemo::new(4, 30, 1).unwrap_or_else(|_| panic!("training failed"));
    assert!(demo.final_loss().is_finite());
    let both = demo.predict("moon", 300.0, 1).unwrap_or_else(|_| panic!("predict failed"));
    assert_eq!(both.len(), 4 * 201);
    let errs = demo.errors("moon", 300.0, 1).unwrap_or_else(|_| panic!("errors failed"));
    assert!(field(&errs, "max_global_position_pct") < 1.0);
}
