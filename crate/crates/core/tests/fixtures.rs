//! The bundled fixtures must match what the templates generate.

use contact_retarget::retarget::Demo;
use contact_retarget::scene::Wall;
use contact_retarget::templates::*;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn demo_fixtures_match_templates() {
    let c = demo_object();
    let cases = [
        ("demo_push_pivot_grasp.json", push_pivot_grasp_demo(Wall::new(0.75, 0.0), &c, 0.0)),
        ("demo_pivot_grasp.json", pivot_grasp_demo(Wall::new(0.75, 0.0), &c, 0.0)),
        ("demo_avoidance.json", avoidance_demo(Wall::new(0.80, 0.0), &c)),
        ("demo_storage.json", storage_demo(Wall::new(0.80, 0.0), &c)),
        ("demo_retrieval.json", retrieval_demo(Wall::new(0.75, 0.0), &c)),
        ("demo_short_object.json", short_object_demo(Wall::new(0.80, 0.0), &c, 0.0)),
    ];
    for (name, demo) in cases {
        let on_disk = Demo::from_json(&fixture(name)).unwrap();
        assert_eq!(on_disk, demo, "{name} is stale; rerun the gen_fixtures example");
    }
}

#[test]
fn eval_config_fixture_is_the_default() {
    let on_disk: EvalConfig = serde_json::from_str(&fixture("eval_default.json")).unwrap();
    assert_eq!(on_disk, EvalConfig::default());
}
