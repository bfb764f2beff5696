//! The shipped report schema stays in lockstep with what the pipeline
//! actually writes.

use serde_json::Value;

use switched_elm::pipeline::{run_pipeline, PipelineConfig, PresetSource, Source};

/// Minimal draft-07 subset validator: `type`, `required`, `properties`,
/// `items`, `minimum`, `maximum`, `additionalProperties`.
fn validate(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        let ok = match ty {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "number" => value.is_number(),
            "integer" => value.is_i64() || value.is_u64(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            other => return Err(format!("{path}: unsupported schema type {other}")),
        };
        if !ok {
            return Err(format!("{path}: expected {ty}, got {value}"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
        let v = value.as_f64().unwrap_or(f64::NAN);
        if v.is_nan() || v < min {
            return Err(format!("{path}: {v} below minimum {min}"));
        }
    }
    if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
        let v = value.as_f64().unwrap_or(f64::NAN);
        if v.is_nan() || v > max {
            return Err(format!("{path}: {v} above maximum {max}"));
        }
    }
    if let Some(required) = schema.get("required").and_then(Value::as_array) {
        for name in required {
            let name = name.as_str().unwrap();
            if value.get(name).is_none() {
                return Err(format!("{path}: missing required field `{name}`"));
            }
        }
    }
    if let (Some(props), Some(obj)) = (
        schema.get("properties").and_then(Value::as_object),
        value.as_object(),
    ) {
        for (name, sub) in obj {
            match props.get(name) {
                Some(subschema) => validate(subschema, sub, &format!("{path}.{name}"))?,
                None => {
                    if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
                        return Err(format!("{path}: unexpected field `{name}`"));
                    }
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            validate(items, item, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

#[test]
fn pipeline_report_validates_against_the_shipped_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::dcdc_default(dir.path());
    if let Source::Preset(PresetSource { horizon, trace_count, .. }) = &mut config.source {
        *horizon = 400;
        *trace_count = 6;
    }
    config.evaluate.rollout_horizon = 400;
    config.merge.num_neurons = 120;
    run_pipeline(&config).unwrap();

    let schema: Value = serde_json::from_str(include_str!("../schemas/report.schema.json")).unwrap();
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    if let Err(msg) = validate(&schema, &report, "report") {
        panic!("report.json does not validate: {msg}");
    }
}

#[test]
fn schema_rejects_malformed_reports() {
    let schema: Value = serde_json::from_str(include_str!("../schemas/report.schema.json")).unwrap();
    let missing: Value = serde_json::json!({ "dropped_instants": [] });
    assert!(validate(&schema, &missing, "r").is_err());
    let negative: Value = serde_json::json!({
        "model_count": 1,
        "dropped_instants": [],
        "one_step_rmse": [-0.5]
    });
    assert!(validate(&schema, &negative, "r").is_err());
    let stray: Value = serde_json::json!({
        "model_count": 1,
        "dropped_instants": [],
        "unexpected": true
    });
    assert!(validate(&schema, &stray, "r").is_err());
}
