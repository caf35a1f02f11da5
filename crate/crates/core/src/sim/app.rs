//! Declarative app definitions for the simulator.
//!
//! An app is a set of screens. Each screen lists elements (labels, buttons,
//! editable fields, scrolling lists) with fixed bounds; buttons and list rows
//! carry ordered transitions, the first whose condition holds fires.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Bounds, UiNode};

pub const SCREEN_WIDTH: i32 = 1080;
pub const SCREEN_HEIGHT: i32 = 2400;
pub const HOME_PACKAGE: &str = "home";

#[derive(Debug, Error)]
pub enum AppDefError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("app {package}: {msg}")]
    Invalid { package: String, msg: String },
}

pub type Record = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataValue {
    Text(String),
    Records(Vec<Record>),
}

impl DataValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            DataValue::Text(s) => Some(s),
            DataValue::Records(_) => None,
        }
    }

    pub fn as_records(&self) -> Option<&[Record]> {
        match self {
            DataValue::Records(r) => Some(r),
            DataValue::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppDef {
    pub package: String,
    pub label: String,
    pub initial_screen: String,
    #[serde(default)]
    pub data: BTreeMap<String, DataValue>,
    pub screens: Vec<ScreenDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenDef {
    pub name: String,
    #[serde(default)]
    pub title: Option<String>,
    /// Where the back button leads; `None` leaves the app.
    #[serde(default)]
    pub back: Option<String>,
    #[serde(default)]
    pub elements: Vec<ElementDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Label,
    Button,
    Field,
    List,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementDef {
    #[serde(default)]
    pub rid: Option<String>,
    pub kind: ElementKind,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub desc: Option<String>,
    pub bounds: [i32; 4],
    #[serde(default)]
    pub on_tap: Vec<Transition>,
    /// List: collection name in the app data.
    #[serde(default)]
    pub source: Option<String>,
    /// List: row text template evaluated against each record.
    #[serde(default)]
    pub item_text: Option<String>,
    #[serde(default)]
    pub row_height: Option<i32>,
    #[serde(default)]
    pub on_item_tap: Vec<Transition>,
    /// List: only rows whose `filter_attr` equals data[`filter_key`] are shown,
    /// unless that data value is `all`.
    #[serde(default)]
    pub filter_attr: Option<String>,
    #[serde(default)]
    pub filter_key: Option<String>,
}

impl ElementDef {
    pub fn bounds(&self) -> Bounds {
        let [l, t, r, b] = self.bounds;
        Bounds::new(l, t, r, b)
    }

    fn visible_rows(&self) -> usize {
        let h = self.row_height.unwrap_or(150).max(1);
        ((self.bounds[3] - self.bounds[1]) / h).max(0) as usize
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    #[serde(default)]
    pub when: Option<Cond>,
    #[serde(default)]
    pub goto: Option<String>,
    #[serde(default)]
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cond {
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub equals: Option<String>,
    #[serde(default)]
    pub not_equals: Option<String>,
    #[serde(default)]
    pub field_nonempty: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    Set { key: String, value: String },
    Toggle { key: String },
    ClearFields { fields: Vec<String> },
    SetField { field: String, value: String },
    PushRecord { collection: String, values: Record },
    UpdateSelected { collection: String, values: Record },
    DeleteSelected { collection: String },
    /// Overwrites a whole collection, e.g. restoring from a backup.
    ReplaceRecords { collection: String, records: Vec<Record> },
    Select { collection: String },
    Launch { package: String },
}

/// Mutable per-app runtime state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppState {
    pub screen: String,
    pub data: BTreeMap<String, DataValue>,
    pub fields: BTreeMap<String, String>,
    pub scroll: BTreeMap<String, usize>,
    pub selected: BTreeMap<String, usize>,
}

impl AppState {
    pub fn fresh(def: &AppDef) -> Self {
        AppState {
            screen: def.initial_screen.clone(),
            data: def.data.clone(),
            fields: BTreeMap::new(),
            scroll: BTreeMap::new(),
            selected: BTreeMap::new(),
        }
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.data.get(key).and_then(DataValue::as_text)
    }

    pub fn records(&self, collection: &str) -> &[Record] {
        self.data
            .get(collection)
            .and_then(DataValue::as_records)
            .unwrap_or(&[])
    }

    fn records_mut(&mut self, collection: &str) -> &mut Vec<Record> {
        let entry = self
            .data
            .entry(collection.to_string())
            .or_insert_with(|| DataValue::Records(Vec::new()));
        if let DataValue::Text(_) = entry {
            *entry = DataValue::Records(Vec::new());
        }
        match entry {
            DataValue::Records(r) => r,
            DataValue::Text(_) => unreachable!(),
        }
    }

    fn selected_record(&self, collection: &str) -> Option<&Record> {
        let idx = *self.selected.get(collection)?;
        self.records(collection).get(idx)
    }
}

/// What a rendered node stands for, used to route taps back to definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Root,
    Element(usize),
    Row { element: usize, record: usize },
}

pub struct Rendered {
    pub root: UiNode,
    pub bindings: BTreeMap<String, Binding>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Nav {
    Stay,
    Screen(String),
    Home,
    Launch(String),
}

impl AppDef {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, AppDefError> {
        let def: AppDef = toml::from_str(text).map_err(|e| AppDefError::Parse {
            path: origin.to_string(),
            source: Box::new(e),
        })?;
        def.check()?;
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<Self, AppDefError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppDefError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn screen(&self, name: &str) -> Option<&ScreenDef> {
        self.screens.iter().find(|s| s.name == name)
    }

    fn invalid(&self, msg: String) -> AppDefError {
        AppDefError::Invalid {
            package: self.package.clone(),
            msg,
        }
    }

    fn check(&self) -> Result<(), AppDefError> {
        if self.screen(&self.initial_screen).is_none() {
            return Err(self.invalid(format!("initial screen {} missing", self.initial_screen)));
        }
        let full = Bounds::new(0, 0, SCREEN_WIDTH, SCREEN_HEIGHT);
        let targets_ok = |t: &Transition| -> Result<(), AppDefError> {
            match t.goto.as_deref() {
                None | Some("@home") | Some("@back") => Ok(()),
                Some(s) if s.contains('{') => Ok(()),
                Some(s) if self.screen(s).is_some() => Ok(()),
                Some(s) => Err(self.invalid(format!("transition to unknown screen {s}"))),
            }
        };
        for s in &self.screens {
            if let Some(b) = &s.back {
                if b != "@home" && self.screen(b).is_none() {
                    return Err(self.invalid(format!("screen {} backs to unknown {b}", s.name)));
                }
            }
            for e in &s.elements {
                if !full.contains(&e.bounds()) {
                    return Err(self.invalid(format!("element {:?} outside screen", e.rid)));
                }
                if e.kind == ElementKind::List && (e.source.is_none() || e.item_text.is_none()) {
                    return Err(self.invalid(format!("list {:?} needs source and item_text", e.rid)));
                }
                // Interactive elements must declare what a tap does.
                if e.kind == ElementKind::Button && e.on_tap.is_empty() {
                    return Err(self.invalid(format!("button {:?} has no transitions", e.rid)));
                }
                if e.kind == ElementKind::Field && e.rid.is_none() {
                    return Err(self.invalid("fields need a resource id".into()));
                }
                for t in e.on_tap.iter().chain(&e.on_item_tap) {
                    targets_ok(t)?;
                }
            }
        }
        Ok(())
    }

    /// Renders the current screen of `state` into a UI tree. Node ids are
    /// assigned in document order, so they are stable for equal states.
    pub fn render(&self, state: &AppState, focused_field: Option<&str>) -> Rendered {
        let screen = self.screen(&state.screen).expect("screen exists");
        let mut bindings = BTreeMap::new();
        let mut counter = 0usize;
        let mut next_id = || {
            let id = format!("n{counter}");
            counter += 1;
            id
        };
        let mut root = UiNode::new(next_id(), Bounds::new(0, 0, SCREEN_WIDTH, SCREEN_HEIGHT));
        root.resource_id = Some(format!("screen_{}", screen.name));
        root.text = screen.title.clone();
        bindings.insert(root.node_id.clone(), Binding::Root);

        for (idx, el) in screen.elements.iter().enumerate() {
            let mut node = UiNode::new(next_id(), el.bounds());
            node.resource_id = el.rid.clone();
            node.content_desc = el.desc.clone();
            bindings.insert(node.node_id.clone(), Binding::Element(idx));
            match el.kind {
                ElementKind::Label => {
                    node.text = el.text.as_ref().map(|t| expand(t, state, None));
                }
                ElementKind::Button => {
                    node.text = el.text.as_ref().map(|t| expand(t, state, None));
                    node.focusable = true;
                }
                ElementKind::Field => {
                    let rid = el.rid.as_deref().unwrap_or_default();
                    node.text = Some(state.fields.get(rid).cloned().unwrap_or_default());
                    node.focusable = true;
                    node.editable = true;
                    node.focused = focused_field == Some(rid);
                }
                ElementKind::List => {
                    let rows = visible_rows(el, state);
                    let h = el.row_height.unwrap_or(150);
                    let prefix = el.rid.clone().unwrap_or_else(|| "list".into());
                    for (slot, (rec_idx, rec)) in rows.into_iter().enumerate() {
                        let top = el.bounds[1] + slot as i32 * h;
                        let mut row = UiNode::new(next_id(), Bounds::new(el.bounds[0], top, el.bounds[2], top + h));
                        row.resource_id = Some(format!("{prefix}_row_{rec_idx}"));
                        row.text = Some(expand(el.item_text.as_deref().unwrap_or(""), state, Some(rec)));
                        row.focusable = true;
                        bindings.insert(row.node_id.clone(), Binding::Row {
                            element: idx,
                            record: rec_idx,
                        });
                        node.children.push(row);
                    }
                }
            }
            root.children.push(node);
        }
        Rendered { root, bindings }
    }

    /// Fires the first transition whose condition holds. Returns the
    /// navigation outcome; `None` when no transition applies.
    pub fn fire(&self, state: &mut AppState, binding: Binding) -> Option<Nav> {
        let screen = self.screen(&state.screen).expect("screen exists");
        let (transitions, row) = match binding {
            Binding::Root => return Some(Nav::Stay),
            Binding::Element(i) => (&screen.elements[i].on_tap, None),
            Binding::Row { element, record } => {
                let el = &screen.elements[element];
                (&el.on_item_tap, Some((el.source.clone().unwrap_or_default(), record)))
            }
        };
        if transitions.is_empty() {
            return Some(Nav::Stay);
        }
        let t = transitions.iter().find(|t| t.when.as_ref().is_none_or(|c| holds(c, state)))?;
        let row_record = row
            .as_ref()
            .and_then(|(coll, idx)| state.records(coll).get(*idx).cloned());
        let mut nav = None;
        for e in &t.effects {
            if let Some(n) = apply_effect(e, state, row.as_ref(), row_record.as_ref()) {
                nav = Some(n);
            }
        }
        if let Some(n) = nav {
            return Some(n);
        }
        Some(match t.goto.as_deref() {
            None => Nav::Stay,
            Some("@home") => Nav::Home,
            Some("@back") => self.back_target(state),
            Some(g) => {
                let target = expand(g, state, row_record.as_ref());
                if self.screen(&target).is_some() {
                    Nav::Screen(target)
                } else {
                    Nav::Stay
                }
            }
        })
    }

    pub fn back_target(&self, state: &AppState) -> Nav {
        match self.screen(&state.screen).and_then(|s| s.back.as_deref()) {
            None | Some("@home") => Nav::Home,
            Some(s) => Nav::Screen(s.to_string()),
        }
    }

    /// Scrolls the first list on the current screen. Returns false when the
    /// screen has no list.
    pub fn scroll(&self, state: &mut AppState, forward: bool, amount: u32) -> bool {
        let screen = self.screen(&state.screen).expect("screen exists");
        let Some(el) = screen.elements.iter().find(|e| e.kind == ElementKind::List) else {
            return false;
        };
        let total = filtered_records(el, state).len();
        let visible = el.visible_rows();
        let max_offset = total.saturating_sub(visible);
        let step = if amount == 0 {
            visible.saturating_sub(1).max(1)
        } else {
            amount as usize
        };
        let key = el.rid.clone().unwrap_or_else(|| "list".into());
        let cur = state.scroll.get(&key).copied().unwrap_or(0);
        let next = if forward {
            (cur + step).min(max_offset)
        } else {
            cur.saturating_sub(step)
        };
        state.scroll.insert(key, next);
        true
    }

    /// The editable fields declared on `screen`.
    pub fn fields_on(&self, screen: &str) -> Vec<&str> {
        self.screen(screen)
            .map(|s| {
                s.elements
                    .iter()
                    .filter(|e| e.kind == ElementKind::Field)
                    .filter_map(|e| e.rid.as_deref())
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn filtered_records<'a>(el: &ElementDef, state: &'a AppState) -> Vec<(usize, &'a Record)> {
    let coll = el.source.as_deref().unwrap_or_default();
    let filter = match (&el.filter_attr, &el.filter_key) {
        (Some(attr), Some(key)) => state
            .text(key)
            .filter(|v| *v != "all")
            .map(|v| (attr.clone(), v.to_string())),
        _ => None,
    };
    state
        .records(coll)
        .iter()
        .enumerate()
        .filter(|(_, r)| match &filter {
            Some((attr, v)) => r.get(attr) == Some(v),
            None => true,
        })
        .collect()
}

fn visible_rows<'a>(el: &ElementDef, state: &'a AppState) -> Vec<(usize, &'a Record)> {
    let key = el.rid.clone().unwrap_or_else(|| "list".into());
    let offset = state.scroll.get(&key).copied().unwrap_or(0);
    filtered_records(el, state)
        .into_iter()
        .skip(offset)
        .take(el.visible_rows())
        .collect()
}

fn holds(c: &Cond, state: &AppState) -> bool {
    if let Some(key) = &c.key {
        let v = state.text(key).unwrap_or("");
        if let Some(eq) = &c.equals {
            if v != eq {
                return false;
            }
        }
        if let Some(ne) = &c.not_equals {
            if v == ne {
                return false;
            }
        }
    }
    if let Some(f) = &c.field_nonempty {
        if state.fields.get(f).is_none_or(|s| s.is_empty()) {
            return false;
        }
    }
    true
}

fn apply_effect(
    e: &Effect,
    state: &mut AppState,
    row: Option<&(String, usize)>,
    row_record: Option<&Record>,
) -> Option<Nav> {
    match e {
        Effect::Set { key, value } => {
            let v = expand(value, state, row_record);
            state.data.insert(key.clone(), DataValue::Text(v));
        }
        Effect::Toggle { key } => {
            let next = if state.text(key) == Some("on") { "off" } else { "on" };
            state.data.insert(key.clone(), DataValue::Text(next.into()));
        }
        Effect::ClearFields { fields } => {
            for f in fields {
                state.fields.remove(f);
            }
        }
        Effect::SetField { field, value } => {
            let v = expand(value, state, row_record);
            state.fields.insert(field.clone(), v);
        }
        Effect::PushRecord { collection, values } => {
            let rec: Record = values
                .iter()
                .map(|(k, v)| (k.clone(), expand(v, state, row_record)))
                .collect();
            state.records_mut(collection).push(rec);
        }
        Effect::UpdateSelected { collection, values } => {
            if let Some(idx) = state.selected.get(collection).copied() {
                let updates: Vec<(String, String)> = values
                    .iter()
                    .map(|(k, v)| (k.clone(), expand(v, state, row_record)))
                    .collect();
                if let Some(rec) = state.records_mut(collection).get_mut(idx) {
                    rec.extend(updates);
                }
            }
        }
        Effect::DeleteSelected { collection } => {
            if let Some(idx) = state.selected.remove(collection) {
                let recs = state.records_mut(collection);
                if idx < recs.len() {
                    recs.remove(idx);
                }
            }
        }
        Effect::ReplaceRecords { collection, records } => {
            *state.records_mut(collection) = records.clone();
            state.selected.remove(collection);
        }
        Effect::Select { collection } => {
            if let Some((_, idx)) = row {
                state.selected.insert(collection.clone(), *idx);
            }
        }
        Effect::Launch { package } => return Some(Nav::Launch(package.clone())),
    }
    None
}

/// Expands `{data:key}`, `{field:id}`, `{sel:collection.attr}`,
/// `{sum:collection.attr}`, `{count:collection}` and, inside list rows or
/// item taps, bare `{attr}` placeholders.
pub fn expand(template: &str, state: &AppState, item: Option<&Record>) -> String {
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let Some(end) = rest[start..].find('}') else {
            out.push_str(&rest[start..]);
            return out;
        };
        let token = &rest[start + 1..start + end];
        out.push_str(&lookup(token, state, item));
        rest = &rest[start + end + 1..];
    }
    out.push_str(rest);
    out
}

fn lookup(token: &str, state: &AppState, item: Option<&Record>) -> String {
    let (kind, arg) = token.split_once(':').unwrap_or(("", token));
    match kind {
        "data" => state.text(arg).unwrap_or("").to_string(),
        "field" => state.fields.get(arg).cloned().unwrap_or_default(),
        "sel" => {
            let (coll, attr) = arg.split_once('.').unwrap_or((arg, ""));
            state
                .selected_record(coll)
                .and_then(|r| r.get(attr))
                .cloned()
                .unwrap_or_default()
        }
        "sum" => {
            let (coll, attr) = arg.split_once('.').unwrap_or((arg, ""));
            let cents: i64 = state
                .records(coll)
                .iter()
                .filter_map(|r| r.get(attr))
                .filter_map(|v| parse_cents(v))
                .sum();
            format!("{}.{:02}", cents / 100, cents % 100)
        }
        "count" => state.records(arg).len().to_string(),
        _ => item.and_then(|r| r.get(arg)).cloned().unwrap_or_default(),
    }
}

/// Parses a non-negative decimal amount with at most two fraction digits.
pub fn parse_cents(v: &str) -> Option<i64> {
    let (whole, frac) = v.trim().split_once('.').unwrap_or((v.trim(), ""));
    if frac.len() > 2 || whole.is_empty() {
        return None;
    }
    let w: i64 = whole.parse().ok()?;
    let f: i64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<2}").parse().ok()?
    };
    Some(w * 100 + f)
}
