use privbound::io::Units;
use serde_json::Value;

/// Keys whose values are weights or ratios rather than information.
const DIMENSIONLESS: &[&str] = &["mu", "gamma", "weight"];

/// Rescales every floating-point value in a report to `units`, except
/// dimensionless keys. Integers (counts, indices) are left alone.
pub fn in_units(v: Value, units: Units) -> Value {
    if units == Units::Nats {
        return v;
    }
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let v = if DIMENSIONLESS.contains(&k.as_str()) { v } else { in_units(v, units) };
                    (k, v)
                })
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.into_iter().map(|v| in_units(v, units)).collect()),
        Value::Number(n) if n.is_f64() => {
            serde_json::Number::from_f64(units.show(n.as_f64().unwrap_or(0.0))).map_or(Value::Null, Value::Number)
        }
        other => other,
    }
}

/// `%.{digits}g`: fixed notation for moderate exponents, scientific otherwise,
/// trailing zeros trimmed.
pub fn sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        return format!("{}e{exp}", trim(mantissa));
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim(&format!("{v:.decimals$}")).to_string()
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
