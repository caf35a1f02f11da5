//! Indented text form of a UI hierarchy and selector resolution.
//!
//! One node per line, two spaces of indentation per depth level:
//!
//! ```text
//! n0 rid=- text="Contacts" desc=- bounds=0,0,1080,2400 focusable=false focused=false editable=false
//!   n1 rid="fab_add" text="Add contact" desc=- bounds=880,2060,1040,2220 focusable=true focused=false editable=false
//! ```
//!
//! Optional strings are `-` when absent and JSON-quoted otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Bounds, SelectorBundle, UiNode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HierarchyParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("empty hierarchy text")]
    Empty,
}

pub fn serialize_hierarchy(root: &UiNode) -> String {
    let mut out = String::new();
    write_node(root, 0, &mut out);
    out
}

fn opt(v: &Option<String>) -> String {
    match v {
        None => "-".to_string(),
        Some(s) => serde_json::to_string(s).expect("string serialization"),
    }
}

fn write_node(node: &UiNode, depth: usize, out: &mut String) {
    let b = node.bounds;
    out.push_str(&"  ".repeat(depth));
    out.push_str(&format!(
        "{} rid={} text={} desc={} bounds={},{},{},{} focusable={} focused={} editable={}\n",
        node.node_id,
        opt(&node.resource_id),
        opt(&node.text),
        opt(&node.content_desc),
        b.left,
        b.top,
        b.right,
        b.bottom,
        node.focusable,
        node.focused,
        node.editable
    ));
    for c in &node.children {
        write_node(c, depth + 1, out);
    }
}

pub fn parse_hierarchy(text: &str) -> Result<UiNode, HierarchyParseError> {
    // Stack of (depth, node) under construction.
    let mut stack: Vec<(usize, UiNode)> = Vec::new();
    let mut root: Option<UiNode> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let indent = raw.len() - raw.trim_start_matches(' ').len();
        if indent % 2 != 0 {
            return Err(syntax(line_no, "odd indentation"));
        }
        let depth = indent / 2;
        let node = parse_line(raw.trim_start_matches(' '), line_no)?;
        if root.is_some() {
            return Err(syntax(line_no, "content after root closed"));
        }
        while let Some((d, _)) = stack.last() {
            if *d >= depth {
                let (_, done) = stack.pop().unwrap();
                match stack.last_mut() {
                    Some((_, parent)) => parent.children.push(done),
                    None => {
                        root = Some(done);
                    }
                }
            } else {
                break;
            }
        }
        if root.is_some() {
            return Err(syntax(line_no, "multiple roots"));
        }
        let expected = stack.len();
        if depth != expected {
            return Err(syntax(line_no, &format!("depth {depth} where {expected} expected")));
        }
        stack.push((depth, node));
    }
    while let Some((_, done)) = stack.pop() {
        match stack.last_mut() {
            Some((_, parent)) => parent.children.push(done),
            None => root = Some(done),
        }
    }
    root.ok_or(HierarchyParseError::Empty)
}

fn syntax(line: usize, msg: &str) -> HierarchyParseError {
    HierarchyParseError::Syntax {
        line,
        msg: msg.to_string(),
    }
}

/// Splits `key=value` tokens, honouring JSON string quoting in values.
fn tokens(s: &str, line: usize) -> Result<Vec<String>, HierarchyParseError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut escaped = false;
    for ch in s.chars() {
        if in_str {
            cur.push(ch);
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_str = false;
            }
            continue;
        }
        match ch {
            ' ' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            '"' => {
                in_str = true;
                cur.push(ch);
            }
            _ => cur.push(ch),
        }
    }
    if in_str {
        return Err(syntax(line, "unterminated string"));
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

fn parse_line(s: &str, line: usize) -> Result<UiNode, HierarchyParseError> {
    let toks = tokens(s, line)?;
    let (id, rest) = toks.split_first().ok_or_else(|| syntax(line, "empty line"))?;
    let mut node = UiNode::new(id.clone(), Bounds::new(0, 0, 0, 0));
    let mut seen_bounds = false;
    for t in rest {
        let (k, v) = t.split_once('=').ok_or_else(|| syntax(line, &format!("bad token {t}")))?;
        match k {
            "rid" => node.resource_id = parse_opt(v, line)?,
            "text" => node.text = parse_opt(v, line)?,
            "desc" => node.content_desc = parse_opt(v, line)?,
            "bounds" => {
                let nums: Result<Vec<i32>, _> = v.split(',').map(str::parse).collect();
                match nums.ok().as_deref() {
                    Some(&[l, t, r, b]) => node.bounds = Bounds::new(l, t, r, b),
                    _ => return Err(syntax(line, "bad bounds")),
                }
                seen_bounds = true;
            }
            "focusable" => node.focusable = parse_bool(v, line)?,
            "focused" => node.focused = parse_bool(v, line)?,
            "editable" => node.editable = parse_bool(v, line)?,
            other => return Err(syntax(line, &format!("unknown field {other}"))),
        }
    }
    if !seen_bounds {
        return Err(syntax(line, "missing bounds"));
    }
    Ok(node)
}

fn parse_opt(v: &str, line: usize) -> Result<Option<String>, HierarchyParseError> {
    if v == "-" {
        return Ok(None);
    }
    serde_json::from_str::<String>(v)
        .map(Some)
        .map_err(|e| syntax(line, &format!("bad string: {e}")))
}

fn parse_bool(v: &str, line: usize) -> Result<bool, HierarchyParseError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(syntax(line, "bad bool")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectorTier {
    ResourceId,
    Coordinates,
    Text,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no element matches {0}")]
pub struct ElementNotFound(pub String);

/// Resource id first, then the smallest node containing the point, then the
/// first node (document order) whose text equals the match exactly.
pub fn resolve_selector<'a>(
    bundle: &SelectorBundle,
    root: &'a UiNode,
) -> Result<(&'a UiNode, SelectorTier), ElementNotFound> {
    if let Some(rid) = &bundle.resource_id {
        if let Some(n) = root.find_by_resource_id(rid) {
            return Ok((n, SelectorTier::ResourceId));
        }
    }
    if let Some(p) = bundle.coordinates {
        let mut best: Option<&UiNode> = None;
        for n in root.iter().filter(|n| n.bounds.contains_point(p)) {
            if best.is_none_or(|b| n.bounds.area() < b.bounds.area()) {
                best = Some(n);
            }
        }
        if let Some(n) = best {
            return Ok((n, SelectorTier::Coordinates));
        }
    }
    if let Some(t) = &bundle.text_match {
        if let Some(n) = root.iter().find(|n| n.text.as_deref() == Some(t.as_str())) {
            return Ok((n, SelectorTier::Text));
        }
    }
    Err(ElementNotFound(bundle.canonical()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn leaf(id: &str, rid: Option<&str>, text: Option<&str>, b: Bounds) -> UiNode {
        let mut n = UiNode::new(id, b);
        n.resource_id = rid.map(String::from);
        n.text = text.map(String::from);
        n
    }

    fn sample() -> UiNode {
        let mut root = UiNode::new("n0", Bounds::new(0, 0, 1080, 2400));
        let mut panel = UiNode::new("n1", Bounds::new(0, 0, 1080, 1200));
        panel.children.push(leaf("n2", Some("save_top"), Some("Save"), Bounds::new(0, 0, 200, 100)));
        panel.children.push(leaf("n3", Some("title"), Some("Hello \"q\""), Bounds::new(50, 150, 500, 300)));
        root.children.push(panel);
        root.children.push(leaf("n4", Some("fab_add"), Some("Save"), Bounds::new(880, 2060, 1040, 2220)));
        root
    }

    #[test]
    fn single_node_line_has_all_fields() {
        let n = leaf("n0", Some("x"), None, Bounds::new(1, 2, 3, 4));
        let text = serialize_hierarchy(&n);
        assert_eq!(text.lines().count(), 1);
        assert_eq!(
            text.trim_end(),
            "n0 rid=\"x\" text=- desc=- bounds=1,2,3,4 focusable=false focused=false editable=false"
        );
    }

    #[test]
    fn three_levels_round_trip() {
        let root = sample();
        let text = serialize_hierarchy(&root);
        assert!(text.lines().nth(2).unwrap().starts_with("    n2"));
        assert_eq!(parse_hierarchy(&text).unwrap(), root);
    }

    #[test]
    fn fifty_nodes_fifty_lines() {
        let mut root = UiNode::new("r", Bounds::new(0, 0, 1000, 1000));
        for i in 0..49 {
            root.children.push(leaf(&format!("c{i}"), None, None, Bounds::new(0, i * 10, 10, i * 10 + 10)));
        }
        assert_eq!(serialize_hierarchy(&root).lines().count(), 50);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_hierarchy(""), Err(HierarchyParseError::Empty));
        assert!(parse_hierarchy("n0 rid=- bounds=1,2,3").is_err());
        assert!(parse_hierarchy("n0 bounds=0,0,1,1\n    n1 bounds=0,0,1,1").is_err());
        assert!(parse_hierarchy("n0 bounds=0,0,1,1\nn1 bounds=0,0,1,1").is_err());
        assert!(parse_hierarchy("n0 text=\"abc bounds=0,0,1,1").is_err());
    }

    #[test]
    fn resolve_by_resource_id() {
        let root = sample();
        let (n, tier) = resolve_selector(&SelectorBundle::resource_id("fab_add"), &root).unwrap();
        assert_eq!((n.node_id.as_str(), tier), ("n4", SelectorTier::ResourceId));
    }

    #[test]
    fn falls_back_to_smallest_containing_node() {
        let root = sample();
        let b = SelectorBundle::resource_id("missing").with_coordinates(100, 200);
        let (n, tier) = resolve_selector(&b, &root).unwrap();
        assert_eq!((n.node_id.as_str(), tier), ("n3", SelectorTier::Coordinates));
    }

    #[test]
    fn text_tie_breaks_by_document_order() {
        let root = sample();
        let (n, tier) = resolve_selector(&SelectorBundle::text("Save"), &root).unwrap();
        assert_eq!((n.node_id.as_str(), tier), ("n2", SelectorTier::Text));
        // exact, case-sensitive
        assert!(resolve_selector(&SelectorBundle::text("save"), &root).is_err());
    }

    #[test]
    fn all_tiers_miss() {
        let root = sample();
        let b = SelectorBundle::resource_id("nope").with_coordinates(5000, 5000).with_text("zzz");
        assert!(resolve_selector(&b, &root).is_err());
    }

    fn arb_text() -> impl Strategy<Value = Option<String>> {
        proptest::option::of("[ -~é\"\\\\]{0,8}")
    }

    fn arb_tree() -> impl Strategy<Value = UiNode> {
        let leaf = (arb_text(), arb_text(), arb_text(), any::<(bool, bool, bool)>(), 0i32..500, 0i32..500)
            .prop_map(|(rid, text, desc, (a, b, c), x, y)| {
                let mut n = UiNode::new("x", Bounds::new(x, y, x + 10, y + 10));
                n.resource_id = rid;
                n.text = text;
                n.content_desc = desc;
                n.focusable = a;
                n.focused = b;
                n.editable = c;
                n
            });
        leaf.prop_recursive(4, 40, 5, |inner| {
            (inner.clone(), proptest::collection::vec(inner, 0..5)).prop_map(|(mut p, kids)| {
                p.children = kids;
                p
            })
        })
        .prop_map(|mut root| {
            let mut i = 0;
            fn number(n: &mut UiNode, i: &mut usize) {
                n.node_id = format!("n{i}");
                *i += 1;
                for c in &mut n.children {
                    number(c, i);
                }
            }
            number(&mut root, &mut i);
            root
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(tree in arb_tree()) {
            let text = serialize_hierarchy(&tree);
            prop_assert_eq!(text.lines().count(), tree.len());
            prop_assert_eq!(parse_hierarchy(&text).unwrap(), tree);
        }
    }
}
