mod common;

use agentloom::domain::SelectorBundle;
use agentloom::sim::{DeviceController, FaultProfile, SelectorTier, SimDevice, SwipeDirection};

fn device(snapshot: &str, fault: FaultProfile) -> SimDevice {
    let fx = common::fixtures();
    let mut d = SimDevice::new(fx.catalog.clone(), fault);
    fx.snapshots.get(snapshot).unwrap().apply(&mut d).unwrap();
    d
}

#[test]
fn every_snapshot_renders_a_valid_hierarchy() {
    let fx = common::fixtures();
    for s in &fx.snapshots.snapshots {
        let mut d = device(&s.id, FaultProfile::default());
        let st = d.get_state().unwrap();
        st.hierarchy.check_invariants().unwrap_or_else(|e| panic!("{}: {e}", s.id));
        assert_eq!(st.focused_package, s.foreground);
    }
}

#[test]
fn seq_moves_only_on_success() {
    let mut d = device("contacts_base", FaultProfile::default());
    let s0 = d.seq();
    let miss = d.tap(&SelectorBundle::resource_id("does_not_exist"));
    assert!(!miss.is_ok());
    assert_eq!(d.seq(), s0);
    assert!(!d.type_text("x").is_ok(), "nothing is focused yet");
    assert_eq!(d.seq(), s0);
    let hit = d.tap(&SelectorBundle::resource_id("fab_add"));
    assert!(hit.is_ok());
    assert_eq!(d.seq(), s0 + 1);
    assert_eq!(hit.seq, d.seq());
}

#[test]
fn selector_tiers_fall_back_in_order() {
    let mut d = device("contacts_base", FaultProfile::default());
    let r = d.tap(&SelectorBundle::resource_id("stale_id").with_text("Erin"));
    assert!(r.is_ok());
    assert_eq!(r.tier, Some(SelectorTier::Text));
    assert_eq!(d.current_screen().unwrap().1, "detail");
    d.press_back();
    let fab = {
        let st = d.get_state().unwrap();
        st.hierarchy.find_by_resource_id("fab_add").unwrap().bounds.center()
    };
    let r = d.tap(&SelectorBundle::resource_id("stale_id").with_coordinates(fab.x, fab.y).with_text("Erin"));
    assert_eq!(r.tier, Some(SelectorTier::Coordinates));
    assert_eq!(d.current_screen().unwrap().1, "edit");
}

#[test]
fn snapshot_restore_is_exact() {
    let mut d = device("notes_base", FaultProfile::named("keyboard").unwrap().with_seed(3));
    let id = d.snapshot();
    let before = d.get_state().unwrap();
    d.tap(&SelectorBundle::resource_id("fab_new"));
    d.swipe(SwipeDirection::Up, 2);
    d.restore(id).unwrap();
    let after = d.get_state().unwrap();
    assert_eq!(after.hierarchy, before.hierarchy);
    assert_eq!(after.screenshot_digest, before.screenshot_digest);
}

#[test]
fn faults_are_seeded() {
    let typed = |seed| {
        let mut d = device("contacts_base", FaultProfile::named("keyboard").unwrap().with_seed(seed));
        d.tap(&SelectorBundle::resource_id("fab_add"));
        d.tap(&SelectorBundle::resource_id("field_name"));
        d.type_text("abcdefghijklmnop");
        d.field_text("field_name").unwrap()
    };
    assert_eq!(typed(11), typed(11));
    let outcomes: std::collections::BTreeSet<String> = (0..20).map(typed).collect();
    assert!(outcomes.len() > 1, "keyboard faults never changed the text");
    assert!(outcomes.iter().all(|t| t.len() <= 16));
}

#[test]
fn launch_and_back_navigate_between_apps() {
    let mut d = device("settings_from_notes", FaultProfile::default());
    assert_eq!(d.foreground(), "notes");
    assert!(d.launch_app("settings").is_ok());
    assert_eq!(d.foreground(), "settings");
    assert!(!d.launch_app("no.such.app").is_ok());
    assert_eq!(d.foreground(), "settings");
}
