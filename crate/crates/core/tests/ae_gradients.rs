mod common;
mod suites;

use econsg_core::autoencoder::ae_loss;
use suites::{ae_case, ae_numeric, rel_err};

#[test]
fn toy_net_every_coordinate_f64() {
    let enc: &[usize] = &[16, 8, 3];
    let dec: &[usize] = &[3, 8, 16];
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checks = 0;
    for seed in 0..50 {
        let c = ae_case(seed, Some((enc, dec)));
        let grads = ae_loss(&c.params, &c.features, &c.labels, &c.queries, 1.0).unwrap().grads;
        let analytic: Vec<f64> = grads.tensors().flatten().copied().collect();
        let count = analytic.len();
        for idx in 0..count {
            let numeric = ae_numeric(&c, idx, h);
            let e = rel_err(analytic[idx], numeric, 1e-4);
            worst = worst.max(e);
            checks += 1;
            assert!(e <= 1e-6, "seed {seed} param {idx}: analytic {} numeric {numeric}", analytic[idx]);
        }
    }
    println!("{checks} coordinates, worst relative error {worst:.2e}");
}

#[test]
fn standard_layout_sampled_coordinates_f64() {
    let o = suites::ae_gradients();
    assert!(o.passed(50), "{o:?}");
}
