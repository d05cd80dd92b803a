use ferroscope::tensorcore::{grad_check, probe_network, LayerSpec};
use ferroscope::Mode;

#[test]
fn probe_networks_cover_every_layer_kind() {
    let (net, _) = probe_network(0).unwrap();
    let census = net.layer_census();
    for kind in [
        "Input", "Conv", "Dense", "ELU", "PReLU", "ReLU", "Sigmoid", "Dropout", "Upsample2x",
        "MaxPool2", "Concat",
    ] {
        assert!(census.contains_key(kind), "missing {kind}: {census:?}");
    }
    assert!(matches!(net.node_layer(net.output_id()), LayerSpec::Dense { .. }));
}

#[test]
fn twenty_random_networks_pass_grad_check() {
    for seed in 0..20 {
        let (net, input) = probe_network(seed).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let r = grad_check(&net, &input, 1e-2, mode, seed).unwrap();
            println!(
                "seed {seed:2} {mode:?}: max rel error {:.2e} at {} ({} probes, {} kinks)",
                r.max_rel_error, r.worst, r.checked, r.skipped_kinks
            );
            assert!(r.max_rel_error < 1e-3, "seed {seed} {mode:?}: {r:?}");
        }
    }
}
