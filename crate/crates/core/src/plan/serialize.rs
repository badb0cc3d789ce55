use serde_json::Value;

use super::PlanNode;

/// Compact plan document with keys in `Operator`, `Left_child`,
/// `Right_child` order.
pub fn serialize_plan(plan: &PlanNode) -> String {
    let mut out = String::new();
    write_node(plan, None, 0, &mut out);
    out
}

/// Indented variant used in prompts and reports.
pub fn serialize_plan_pretty(plan: &PlanNode) -> String {
    let mut out = String::new();
    write_node(plan, Some(2), 0, &mut out);
    out
}

pub fn to_json_value(plan: &PlanNode) -> Value {
    serde_json::from_str(&serialize_plan(plan)).expect("serializer emits valid JSON")
}

impl serde::Serialize for PlanNode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        to_json_value(self).serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for PlanNode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        super::parse_plan(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

fn write_node(node: &PlanNode, indent: Option<usize>, depth: usize, out: &mut String) {
    let op = serde_json::to_string(&node.op.to_string()).expect("strings always serialize");
    let (nl, pad, pad_close, sep) = match indent {
        Some(w) => (
            "\n",
            " ".repeat(w * (depth + 1)),
            " ".repeat(w * depth),
            ": ",
        ),
        None => ("", String::new(), String::new(), ":"),
    };
    out.push('{');
    out.push_str(nl);
    out.push_str(&pad);
    out.push_str("\"Operator\"");
    out.push_str(sep);
    out.push_str(&op);
    for (key, child) in [("Left_child", &node.left), ("Right_child", &node.right)] {
        out.push(',');
        out.push_str(nl);
        out.push_str(&pad);
        out.push('"');
        out.push_str(key);
        out.push('"');
        out.push_str(sep);
        match child {
            Some(c) => write_node(c, indent, depth + 1, out),
            None => out.push_str("null"),
        }
    }
    out.push_str(nl);
    out.push_str(&pad_close);
    out.push('}');
}
