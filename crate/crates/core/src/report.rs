//! Metric report and its `key=value` / JSON renderings.

use std::fmt;

use serde_json::{json, Map, Value};

/// Every metric is optional; absent values print as `null`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub ate: Option<f64>,
    pub rpe: Option<f64>,
    pub ame_nn: Option<f64>,
    pub ame_raycast: Option<f64>,
    pub iou: Option<f64>,
    pub pair_count: Option<usize>,
    pub matched_count: Option<usize>,
    pub miss_count: Option<usize>,
    pub miss_rate: Option<f64>,
    pub alignment_mode: String,
    pub per_pose_errors: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn rounded(x: f64) -> Value {
    // Round-trips the six-digit text so JSON and text agree.
    match format_sig(x).parse::<f64>() {
        Ok(v) if v.is_finite() => json!(v),
        _ => Value::Null,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "null".into(), |v| v.to_string())
}

impl MetricReport {
    fn float_fields(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("ate", self.ate),
            ("rpe", self.rpe),
            ("ame_nn", self.ame_nn),
            ("ame_raycast", self.ame_raycast),
            ("iou", self.iou),
        ]
    }

    fn count_fields(&self) -> [(&'static str, Option<usize>); 3] {
        [
            ("pair_count", self.pair_count),
            ("matched_count", self.matched_count),
            ("miss_count", self.miss_count),
        ]
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in self.float_fields() {
            m.insert(k.into(), v.map_or(Value::Null, rounded));
        }
        for (k, v) in self.count_fields() {
            m.insert(k.into(), v.map_or(Value::Null, |v| json!(v)));
        }
        m.insert("miss_rate".into(), self.miss_rate.map_or(Value::Null, rounded));
        m.insert("alignment_mode".into(), json!(self.alignment_mode));
        m.insert(
            "per_pose_errors".into(),
            self.per_pose_errors
                .as_ref()
                .map_or(Value::Null, |v| Value::Array(v.iter().map(|e| rounded(*e)).collect())),
        );
        m.insert("warnings".into(), json!(self.warnings));
        Value::Object(m)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("JSON values serialize")
    }
}

impl fmt::Display for MetricReport {
    /// One `key=value` line per field.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.float_fields() {
            writeln!(f, "{k}={}", opt(v.map(format_sig)))?;
        }
        for (k, v) in self.count_fields() {
            writeln!(f, "{k}={}", opt(v))?;
        }
        writeln!(f, "miss_rate={}", opt(self.miss_rate.map(format_sig)))?;
        writeln!(f, "alignment_mode={}", self.alignment_mode)?;
        let per_pose = self.per_pose_errors.as_ref().map(|v| {
            v.iter().map(|e| format_sig(*e)).collect::<Vec<_>>().join(",")
        });
        writeln!(f, "per_pose_errors={}", opt(per_pose))?;
        let warnings = (!self.warnings.is_empty()).then(|| self.warnings.join("; "));
        writeln!(f, "warnings={}", opt(warnings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        for (x, s) in [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (0.1234567, "0.123457"),
            (123456.7, "123457"),
            (999999.5, "1e+06"),
            (1234567.0, "1.23457e+06"),
            (0.0001234567, "0.000123457"),
            (0.00001234567, "1.23457e-05"),
            (-2.5, "-2.5"),
            (100.0, "100"),
            (0.000099999996, "0.0001"),
        ] {
            assert_eq!(format_sig(x), s, "{x}");
        }
    }

    #[test]
    fn text_lists_every_key_with_nulls() {
        let r = MetricReport {
            ate: Some(0.25),
            pair_count: Some(3),
            alignment_mode: "umeyama".into(),
            per_pose_errors: Some(vec![0.1, 0.2, 0.3]),
            ..Default::default()
        };
        let text = r.to_string();
        let expected = "ate=0.25\nrpe=null\name_nn=null\name_raycast=null\niou=null\n\
                        pair_count=3\nmatched_count=null\nmiss_count=null\nmiss_rate=null\n\
                        alignment_mode=umeyama\nper_pose_errors=0.1,0.2,0.3\nwarnings=null\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn json_mirrors_text_keys() {
        let r = MetricReport {
            iou: Some(1.0 / 3.0),
            warnings: vec!["w".into()],
            alignment_mode: "none".into(),
            ..Default::default()
        };
        let v = r.to_json();
        assert_eq!(v["iou"], json!(0.333333));
        assert_eq!(v["ate"], Value::Null);
        assert_eq!(v["warnings"], json!(["w"]));
        let text_keys: Vec<_> = r.to_string().lines().map(|l| l.split_once('=').unwrap().0.to_string()).collect();
        let json_keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        let mut sorted = text_keys.clone();
        sorted.sort();
        assert_eq!(sorted, json_keys);
    }
}
