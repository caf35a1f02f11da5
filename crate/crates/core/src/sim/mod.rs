//! Simulated device: app state machines behind the [`DeviceController`]
//! interface, with a fault-injectable keyboard and frame recording.

pub mod app;
pub mod hierarchy;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{ActionKind, DeviceState, SelectorBundle, UiNode};
use crate::exec::{ToolCall, VerificationFeedback};
pub use app::{AppDef, AppDefError, AppState, DataValue, Record, HOME_PACKAGE};
use app::{Binding, Nav};
pub use hierarchy::{parse_hierarchy, resolve_selector, serialize_hierarchy, ElementNotFound, SelectorTier};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ActionError {
    #[error("element not found: {0}")]
    ElementNotFound(String),
    #[error("no focused editable field")]
    NoFocusedField,
    #[error("field not editable: {0}")]
    FieldNotEditable(String),
    #[error("unknown package {0}")]
    UnknownPackage(String),
    #[error("invalid call: {0}")]
    InvalidCall(String),
    #[error("tool {0} not handled by the device")]
    ToolUnavailable(String),
    #[error("not recording")]
    NotRecording,
    #[error("text verification failed")]
    VerificationFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("device unavailable")]
    DeviceUnavailable,
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "error", rename_all = "snake_case")]
pub enum ActionStatus {
    Ok,
    Failed(ActionError),
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    pub status: ActionStatus,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<SelectorTier>,
    /// Device seq observed after the call.
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<VerificationFeedback>,
}

impl ActionResult {
    pub fn ok(detail: impl Into<String>, seq: u64) -> Self {
        ActionResult {
            status: ActionStatus::Ok,
            detail: detail.into(),
            tier: None,
            seq,
            feedback: None,
        }
    }

    pub fn failed(err: ActionError, seq: u64) -> Self {
        ActionResult {
            detail: err.to_string(),
            status: ActionStatus::Failed(err),
            tier: None,
            seq,
            feedback: None,
        }
    }

    pub fn aborted(seq: u64) -> Self {
        ActionResult {
            status: ActionStatus::Aborted,
            detail: "aborted after earlier failure".into(),
            tier: None,
            seq,
            feedback: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ActionStatus::Ok
    }

    pub fn is_aborted(&self) -> bool {
        self.status == ActionStatus::Aborted
    }

    fn with_tier(mut self, tier: SelectorTier) -> Self {
        self.tier = Some(tier);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwipeDirection {
    Up,
    Down,
    Left,
    Right,
}

impl SwipeDirection {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "up" => Some(SwipeDirection::Up),
            "down" => Some(SwipeDirection::Down),
            "left" => Some(SwipeDirection::Left),
            "right" => Some(SwipeDirection::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub char_drop_prob: f64,
    pub focus_steal_prob: f64,
    pub latency_ticks: u32,
    pub rng_seed: u64,
}

impl Default for FaultProfile {
    fn default() -> Self {
        FaultProfile {
            char_drop_prob: 0.0,
            focus_steal_prob: 0.0,
            latency_ticks: 1,
            rng_seed: 0,
        }
    }
}

impl FaultProfile {
    /// Named profiles: `default` (no faults) and `keyboard`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "default" | "none" => Some(FaultProfile::default()),
            "keyboard" => Some(FaultProfile {
                char_drop_prob: 0.3,
                focus_steal_prob: 0.1,
                latency_ticks: 1,
                rng_seed: 0,
            }),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("char_drop_prob", self.char_drop_prob), ("focus_steal_prob", self.focus_steal_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} out of range: {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLog {
    pub frames: Vec<(u64, String)>,
}

impl FrameLog {
    /// Short textual summary standing in for video analysis.
    pub fn describe(&self) -> String {
        let mut distinct = 0;
        let mut last: Option<&str> = None;
        for (_, d) in &self.frames {
            if last != Some(d.as_str()) {
                distinct += 1;
            }
            last = Some(d);
        }
        format!("{} frames, {} distinct screens", self.frames.len(), distinct)
    }
}

pub type SnapshotId = u64;

/// Abstract device interface. The simulator is the reference
/// implementation; every successful mutating call bumps `seq` by one.
pub trait DeviceController: Send {
    fn get_state(&mut self) -> Result<DeviceState, DeviceError>;
    fn tap(&mut self, sel: &SelectorBundle) -> ActionResult;
    fn swipe(&mut self, direction: SwipeDirection, amount: u32) -> ActionResult;
    fn type_text(&mut self, raw: &str) -> ActionResult;
    fn delete_backward(&mut self, count: usize) -> ActionResult;
    fn press_back(&mut self) -> ActionResult;
    fn launch_app(&mut self, package: &str) -> ActionResult;
    fn focus(&mut self, sel: &SelectorBundle) -> ActionResult;
    fn set_cursor_end(&mut self, sel: &SelectorBundle) -> ActionResult;
    fn wait(&mut self, ticks: u32) -> ActionResult;
    fn start_recording(&mut self) -> ActionResult;
    fn stop_recording(&mut self) -> Result<FrameLog, ActionError>;
    fn snapshot(&mut self) -> SnapshotId;
    fn restore(&mut self, id: SnapshotId) -> Result<(), DeviceError>;

    /// Dispatches a raw tool call. Text entry here is unverified typing into
    /// whatever field has focus; see `exec::input_text_verified` for the
    /// checked procedure.
    fn apply_action(&mut self, call: &ToolCall) -> ActionResult {
        let invalid = |d: &mut Self, msg: String| {
            let seq = d.current_seq();
            ActionResult::failed(ActionError::InvalidCall(msg), seq)
        };
        match call.name {
            ActionKind::Tap => match &call.selector {
                Some(s) => self.tap(s),
                None => invalid(self, "tap needs a selector".into()),
            },
            ActionKind::Swipe => {
                let spec = call.payload.as_deref().unwrap_or("up");
                let (dir, amount) = spec.split_once(':').unwrap_or((spec, "0"));
                match (SwipeDirection::parse(dir), amount.parse::<u32>()) {
                    (Some(d), Ok(a)) => self.swipe(d, a),
                    _ => invalid(self, format!("bad swipe {spec}")),
                }
            }
            ActionKind::TypeText => match &call.payload {
                Some(p) => self.type_text(p),
                None => invalid(self, "type_text needs a payload".into()),
            },
            ActionKind::Back => self.press_back(),
            ActionKind::LaunchApp => match &call.payload {
                Some(p) => self.launch_app(p),
                None => invalid(self, "launch_app needs a package".into()),
            },
            ActionKind::Wait => {
                let t = call.payload.as_deref().and_then(|p| p.parse().ok()).unwrap_or(1);
                self.wait(t)
            }
            ActionKind::StartRecording => self.start_recording(),
            ActionKind::StopRecording => {
                let r = self.stop_recording();
                let seq = self.current_seq();
                match r {
                    Ok(log) => ActionResult::ok(log.describe(), seq),
                    Err(e) => ActionResult::failed(e, seq),
                }
            }
            ActionKind::SaveNote | ActionKind::ReadNote | ActionKind::ListNotes => {
                let seq = self.current_seq();
                ActionResult::failed(ActionError::ToolUnavailable(call.name.tool_name().into()), seq)
            }
        }
    }

    fn current_seq(&mut self) -> u64 {
        self.get_state().map(|s| s.seq).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Focus {
    package: String,
    screen: String,
    field: String,
    cursor: usize,
}

#[derive(Clone)]
struct Saved {
    apps: BTreeMap<String, AppState>,
    foreground: String,
    focus: Option<Focus>,
    ticks: u64,
    rng: ChaCha8Rng,
    recording: Option<FrameLog>,
}

/// Immutable set of app definitions shared by device instances.
#[derive(Debug, Clone, Default)]
pub struct AppCatalog {
    pub apps: BTreeMap<String, Arc<AppDef>>,
}

impl AppCatalog {
    pub fn new(defs: impl IntoIterator<Item = AppDef>) -> Self {
        AppCatalog {
            apps: defs.into_iter().map(|d| (d.package.clone(), Arc::new(d))).collect(),
        }
    }

    /// Loads every `*.toml` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self, AppDefError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| AppDefError::Io {
                path: dir.display().to_string(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let defs = paths.iter().map(|p| AppDef::load(p)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(defs))
    }
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 1, 15, 9, 0, 0).single().expect("valid epoch")
}

pub struct SimDevice {
    catalog: AppCatalog,
    apps: BTreeMap<String, AppState>,
    foreground: String,
    focus: Option<Focus>,
    seq: u64,
    ticks: u64,
    fault: FaultProfile,
    rng: ChaCha8Rng,
    recording: Option<FrameLog>,
    snapshots: BTreeMap<SnapshotId, Saved>,
    next_snapshot: SnapshotId,
}

impl SimDevice {
    pub fn new(catalog: AppCatalog, fault: FaultProfile) -> Self {
        let apps = catalog
            .apps
            .iter()
            .map(|(k, d)| (k.clone(), AppState::fresh(d)))
            .collect();
        let foreground = if catalog.apps.contains_key(HOME_PACKAGE) {
            HOME_PACKAGE.to_string()
        } else {
            catalog.apps.keys().next().cloned().unwrap_or_default()
        };
        SimDevice {
            rng: ChaCha8Rng::seed_from_u64(fault.rng_seed),
            catalog,
            apps,
            foreground,
            focus: None,
            seq: 0,
            ticks: 0,
            fault,
            recording: None,
            snapshots: BTreeMap::new(),
            next_snapshot: 1,
        }
    }

    pub fn fault(&self) -> &FaultProfile {
        &self.fault
    }

    /// Swaps the fault profile and reseeds the fault RNG from it.
    pub fn set_fault(&mut self, fault: FaultProfile) {
        self.rng = ChaCha8Rng::seed_from_u64(fault.rng_seed);
        self.fault = fault;
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn foreground(&self) -> &str {
        &self.foreground
    }

    pub fn app_state(&self, package: &str) -> Option<&AppState> {
        self.apps.get(package)
    }

    /// Direct state access for setting up task snapshots.
    pub fn app_state_mut(&mut self, package: &str) -> Option<&mut AppState> {
        self.apps.get_mut(package)
    }

    pub fn current_screen(&self) -> Option<(&str, &str)> {
        self.apps
            .get(&self.foreground)
            .map(|s| (self.foreground.as_str(), s.screen.as_str()))
    }

    /// Content of an editable field in the foreground app (test probe; does
    /// not touch seq).
    pub fn field_text(&self, field: &str) -> Option<String> {
        let st = self.apps.get(&self.foreground)?;
        let def = self.catalog.apps.get(&self.foreground)?;
        if !def.fields_on(&st.screen).contains(&field) {
            return None;
        }
        Some(st.fields.get(field).cloned().unwrap_or_default())
    }

    pub fn set_foreground(&mut self, package: &str) -> bool {
        if self.catalog.apps.contains_key(package) {
            self.foreground = package.to_string();
            self.focus = None;
            true
        } else {
            false
        }
    }

    fn focused_field(&self) -> Option<&str> {
        let f = self.focus.as_ref()?;
        let st = self.apps.get(&self.foreground)?;
        (f.package == self.foreground && f.screen == st.screen).then_some(f.field.as_str())
    }

    fn render(&self) -> app::Rendered {
        let def = &self.catalog.apps[&self.foreground];
        let st = &self.apps[&self.foreground];
        def.render(st, self.focused_field())
    }

    fn digest_of(&self, root: &UiNode) -> String {
        let mut h = Sha256::new();
        h.update(self.foreground.as_bytes());
        h.update(b"\n");
        h.update(serialize_hierarchy(root).as_bytes());
        hex::encode(h.finalize())
    }

    fn timestamp(&self) -> String {
        let t = epoch() + Duration::seconds(self.ticks as i64);
        t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// Records a successful mutation: advance seq and the virtual clock and
    /// capture a frame when recording.
    fn commit(&mut self, detail: impl Into<String>) -> ActionResult {
        self.seq += 1;
        self.ticks += u64::from(self.fault.latency_ticks);
        if self.recording.is_some() {
            let root = self.render().root;
            let d = self.digest_of(&root);
            let seq = self.seq;
            if let Some(log) = self.recording.as_mut() {
                log.frames.push((seq, d));
            }
        }
        ActionResult::ok(detail, self.seq)
    }

    fn fail(&self, err: ActionError) -> ActionResult {
        ActionResult::failed(err, self.seq)
    }

    fn navigate(&mut self, nav: Nav) -> Result<(), ActionError> {
        match nav {
            Nav::Stay => {}
            Nav::Screen(s) => {
                if let Some(st) = self.apps.get_mut(&self.foreground) {
                    st.screen = s;
                }
                self.focus = None;
            }
            Nav::Home => {
                self.go_home();
            }
            Nav::Launch(p) => self.launch_inner(&p)?,
        }
        Ok(())
    }

    fn go_home(&mut self) {
        if self.catalog.apps.contains_key(HOME_PACKAGE) {
            self.foreground = HOME_PACKAGE.into();
        }
        self.focus = None;
    }

    fn launch_inner(&mut self, package: &str) -> Result<(), ActionError> {
        let def = self
            .catalog
            .apps
            .get(package)
            .cloned()
            .ok_or_else(|| ActionError::UnknownPackage(package.into()))?;
        let st = self.apps.get_mut(package).expect("state per app");
        st.screen = def.initial_screen.clone();
        st.fields.clear();
        st.scroll.clear();
        self.foreground = package.into();
        self.focus = None;
        Ok(())
    }

    fn resolve(&self, sel: &SelectorBundle) -> Result<(app::Rendered, String, SelectorTier), ActionError> {
        if sel.is_empty() {
            return Err(ActionError::InvalidCall("empty selector".into()));
        }
        let rendered = self.render();
        let (node_id, tier) = match resolve_selector(sel, &rendered.root) {
            Ok((n, t)) => (n.node_id.clone(), t),
            Err(e) => return Err(ActionError::ElementNotFound(e.0)),
        };
        Ok((rendered, node_id, tier))
    }

    fn focus_node(&mut self, rendered: &app::Rendered, node_id: &str) -> Result<(), ActionError> {
        let node = rendered
            .root
            .iter()
            .find(|n| n.node_id == node_id)
            .expect("resolved node exists");
        if !node.editable {
            return Err(ActionError::FieldNotEditable(
                node.resource_id.clone().unwrap_or_else(|| node.node_id.clone()),
            ));
        }
        let screen = self.apps[&self.foreground].screen.clone();
        self.focus = Some(Focus {
            package: self.foreground.clone(),
            screen,
            field: node.resource_id.clone().expect("fields carry resource ids"),
            cursor: 0,
        });
        Ok(())
    }
}

impl DeviceController for SimDevice {
    fn get_state(&mut self) -> Result<DeviceState, DeviceError> {
        if !self.catalog.apps.contains_key(&self.foreground) {
            return Err(DeviceError::DeviceUnavailable);
        }
        let root = self.render().root;
        Ok(DeviceState {
            screenshot_digest: self.digest_of(&root),
            hierarchy: root,
            focused_package: self.foreground.clone(),
            timestamp: self.timestamp(),
            seq: self.seq,
        })
    }

    fn tap(&mut self, sel: &SelectorBundle) -> ActionResult {
        let (rendered, node_id, tier) = match self.resolve(sel) {
            Ok(r) => r,
            Err(e) => return self.fail(e),
        };
        let binding = rendered.bindings.get(&node_id).copied().unwrap_or(Binding::Root);
        let is_field = rendered.root.iter().any(|n| n.node_id == node_id && n.editable);
        if is_field {
            self.focus_node(&rendered, &node_id).expect("editable");
            return self.commit(format!("focused {node_id}")).with_tier(tier);
        }
        let def = self.catalog.apps[&self.foreground].clone();
        let st = self.apps.get_mut(&self.foreground).expect("foreground state");
        let nav = def.fire(st, binding).unwrap_or(Nav::Stay);
        if let Err(e) = self.navigate(nav) {
            return self.fail(e);
        }
        self.commit(format!("tapped {node_id}")).with_tier(tier)
    }

    fn swipe(&mut self, direction: SwipeDirection, amount: u32) -> ActionResult {
        let def = self.catalog.apps[&self.foreground].clone();
        let st = self.apps.get_mut(&self.foreground).expect("foreground state");
        match direction {
            // Swiping up moves content forward.
            SwipeDirection::Up => def.scroll(st, true, amount),
            SwipeDirection::Down => def.scroll(st, false, amount),
            SwipeDirection::Left | SwipeDirection::Right => false,
        };
        self.commit(format!("swiped {direction:?}"))
    }

    fn type_text(&mut self, raw: &str) -> ActionResult {
        let Some(field) = self.focused_field().map(str::to_string) else {
            return self.fail(ActionError::NoFocusedField);
        };
        let p = self.fault.char_drop_prob;
        let kept: String = raw.chars().filter(|_| !(p > 0.0 && self.rng.random_bool(p))).collect();
        let st = self.apps.get_mut(&self.foreground).expect("foreground state");
        let content = st.fields.entry(field).or_default();
        let focus = self.focus.as_mut().expect("focused");
        let at = content
            .char_indices()
            .nth(focus.cursor)
            .map(|(i, _)| i)
            .unwrap_or(content.len());
        content.insert_str(at, &kept);
        focus.cursor += kept.chars().count();
        self.commit("typed")
    }

    fn delete_backward(&mut self, count: usize) -> ActionResult {
        let Some(field) = self.focused_field().map(str::to_string) else {
            return self.fail(ActionError::NoFocusedField);
        };
        let st = self.apps.get_mut(&self.foreground).expect("foreground state");
        let content = st.fields.entry(field).or_default();
        let focus = self.focus.as_mut().expect("focused");
        let mut chars: Vec<char> = content.chars().collect();
        let end = focus.cursor.min(chars.len());
        let start = end.saturating_sub(count);
        chars.drain(start..end);
        *content = chars.into_iter().collect();
        focus.cursor = start;
        self.commit(format!("deleted {}", end - start))
    }

    fn press_back(&mut self) -> ActionResult {
        if self.foreground != HOME_PACKAGE {
            let def = self.catalog.apps[&self.foreground].clone();
            let nav = def.back_target(&self.apps[&self.foreground]);
            if let Err(e) = self.navigate(nav) {
                return self.fail(e);
            }
        }
        self.commit("back")
    }

    fn launch_app(&mut self, package: &str) -> ActionResult {
        match self.launch_inner(package) {
            Ok(()) => self.commit(format!("launched {package}")),
            Err(e) => self.fail(e),
        }
    }

    fn focus(&mut self, sel: &SelectorBundle) -> ActionResult {
        let (rendered, node_id, tier) = match self.resolve(sel) {
            Ok(r) => r,
            Err(e) => return self.fail(e),
        };
        let editable = rendered.root.iter().any(|n| n.node_id == node_id && n.editable);
        if !editable {
            if let Err(e) = self.focus_node(&rendered, &node_id) {
                return self.fail(e);
            }
        }
        let p = self.fault.focus_steal_prob;
        if p > 0.0 && self.rng.random_bool(p) {
            // Focus silently stays where it was.
            return self.commit("focus requested").with_tier(tier);
        }
        self.focus_node(&rendered, &node_id).expect("editable");
        self.commit("focus requested").with_tier(tier)
    }

    fn set_cursor_end(&mut self, sel: &SelectorBundle) -> ActionResult {
        let (rendered, node_id, tier) = match self.resolve(sel) {
            Ok(r) => r,
            Err(e) => return self.fail(e),
        };
        let node = rendered.root.iter().find(|n| n.node_id == node_id).expect("resolved");
        if !node.focused {
            return self.fail(ActionError::NoFocusedField);
        }
        let len = node.text.as_deref().unwrap_or("").chars().count();
        if let Some(f) = self.focus.as_mut() {
            f.cursor = len;
        }
        self.commit("cursor at end").with_tier(tier)
    }

    fn wait(&mut self, ticks: u32) -> ActionResult {
        self.ticks += u64::from(ticks);
        self.commit(format!("waited {ticks}"))
    }

    fn start_recording(&mut self) -> ActionResult {
        self.recording = Some(FrameLog::default());
        self.commit("recording")
    }

    fn stop_recording(&mut self) -> Result<FrameLog, ActionError> {
        let log = self.recording.take().ok_or(ActionError::NotRecording)?;
        self.commit("stopped recording");
        Ok(log)
    }

    fn snapshot(&mut self) -> SnapshotId {
        let id = self.next_snapshot;
        self.next_snapshot += 1;
        self.snapshots.insert(id, Saved {
            apps: self.apps.clone(),
            foreground: self.foreground.clone(),
            focus: self.focus.clone(),
            ticks: self.ticks,
            rng: self.rng.clone(),
            recording: self.recording.clone(),
        });
        id
    }

    fn restore(&mut self, id: SnapshotId) -> Result<(), DeviceError> {
        let s = self.snapshots.get(&id).cloned().ok_or(DeviceError::UnknownSnapshot(id))?;
        self.apps = s.apps;
        self.foreground = s.foreground;
        self.focus = s.focus;
        self.ticks = s.ticks;
        self.rng = s.rng;
        self.recording = s.recording;
        self.seq += 1;
        Ok(())
    }
}
