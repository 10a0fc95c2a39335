use systolic::zoo;

// Closed-form count of the original bottleneck ResNet-50 at 224x224, with
// the stride on each stage's first 1x1 conv and the projection shortcut.
fn resnet50_macs() -> u64 {
    let mut macs = 112 * 112 * (7 * 7 * 3) * 64;
    let mut cin = 64;
    let mut side = 56;
    for (stage, blocks) in [3, 4, 6, 3].into_iter().enumerate() {
        let w = 64 << stage;
        for b in 0..blocks {
            if b == 0 && stage > 0 {
                side /= 2;
            }
            let hw = side * side;
            macs += hw * cin * w + hw * 9 * w * w + hw * w * 4 * w;
            if b == 0 {
                macs += hw * cin * 4 * w;
            }
            cin = 4 * w;
        }
    }
    macs + 2048 * 1000
}

fn bert_macs(layers: u64, hidden: u64, heads: u64, seq: u64) -> u64 {
    let head = hidden / heads;
    let proj = 4 * seq * hidden * hidden;
    let attn = 2 * heads * seq * head * seq;
    let ffn = 2 * seq * hidden * 4 * hidden;
    layers * (proj + attn + ffn)
}

#[test]
fn resnet50_matches_hand_count() {
    let m = zoo::benchmark_graph("resnet50", 224, 0, 1).unwrap();
    assert_eq!(m.total_macs(), resnet50_macs());
}

#[test]
fn bert_base_matches_hand_count() {
    let m = zoo::benchmark_graph("bert_base", 224, 100, 1).unwrap();
    assert_eq!(m.total_macs(), bert_macs(12, 768, 12, 100));
}

#[test]
fn batch_scales_work_linearly() {
    let one = zoo::benchmark_graph("resnet50", 224, 0, 1).unwrap().total_macs();
    let four = zoo::benchmark_graph("resnet50", 224, 0, 4).unwrap().total_macs();
    assert_eq!(four, 4 * one);
}
