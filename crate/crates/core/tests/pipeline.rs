use systolic::interconnect::InterconnectConfig;
use systolic::power::EnergyParams;
use systolic::scheduler::{schedule, validate, PodConfig, Schedule};
use systolic::simulator::{simulate, BankConfig};
use systolic::tiling::{TileGraph, TileShape};
use systolic::workload::{GemmSpec, ModelGraph};
use systolic::zoo;

fn toy() -> ModelGraph {
    ModelGraph::new("toy", vec![GemmSpec::new("mm", 64, 64, 64)]).unwrap()
}

#[test]
fn two_by_two_tiling_schedules_in_four_slices() {
    let tg = TileGraph::from_model(&toy(), TileShape::new(32, 32));
    assert_eq!(tg.ops.len(), 8);
    assert_eq!(tg.groups.len(), 4);
    let nets = InterconnectConfig::butterfly(4, 2);
    let s = schedule(&tg, &PodConfig::new(32, 32, 4), 4, &nets).unwrap();
    assert!(s.makespan_slices() <= 4, "{}", s.makespan_slices());
    assert!(validate(&s, &tg, &nets).is_empty());
    let st = simulate(&s, &tg, &BankConfig::new(4, 256 * 1024), &EnergyParams::default()).unwrap();
    assert_eq!(st.useful_macs, 64 * 64 * 64);
    assert_eq!(st.tile_ops, 8);
}

#[test]
fn schedule_survives_json_round_trip() {
    let tg = TileGraph::from_model(&toy(), TileShape::new(32, 32));
    let nets = InterconnectConfig::crossbar(4);
    let s = schedule(&tg, &PodConfig::new(32, 32, 4), 4, &nets).unwrap();
    let back = Schedule::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back, s);
    assert!(validate(&back, &tg, &nets).is_empty());
}

#[test]
fn shipped_benchmarks_schedule_and_simulate() {
    let nets = InterconnectConfig::butterfly(8, 2);
    for name in ["bert_mini", "resnet50"] {
        let m = zoo::benchmark_graph(name, 224, 20, 1).unwrap();
        let tg = TileGraph::from_model(&m, TileShape::new(32, 32));
        let s = schedule(&tg, &PodConfig::new(32, 32, 8), 8, &nets).unwrap();
        assert!(validate(&s, &tg, &nets).is_empty(), "{name}");
        let st = simulate(&s, &tg, &BankConfig::new(8, 256 * 1024), &EnergyParams::default()).unwrap();
        assert_eq!(st.useful_macs, m.total_macs(), "{name}");
        assert!(st.utilization > 0.0 && st.utilization <= 1.0);
    }
}
