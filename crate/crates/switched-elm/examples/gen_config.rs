fn main() {
    let config = switched_elm::pipeline::PipelineConfig::dcdc_default("out");
    println!("{}", serde_json::to_string_pretty(&config).unwrap());
}
