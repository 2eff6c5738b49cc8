mod common;
mod suites;

use econsg_core::splat::{render, RenderMode};
use econsg_core::training::{scene_loss, Supervision, TrainConfig};
use econsg_core::{Raster, IGNORE_LABEL};

#[test]
fn image_space_gradients_match_finite_differences() {
    let o = suites::scene_loss_gradients();
    assert!(o.passed(120), "{o:?}");
}

#[test]
fn closed_form_cross_entropy() {
    // Feature equal to query row 1, two orthogonal unit queries.
    let mut out = render(&common::random_cloud(&mut common::rng(0), 1, 2, 0.1), &common::camera(1, 10.0), RenderMode::Both);
    out.features.data = vec![0.0, 1.0];
    let sup = Supervision { labels: Raster::from_data(1, 1, 1, vec![1]).unwrap(), latent: Some(out.features.clone()) };
    let l = scene_loss(&out, &out.color.clone(), &sup, &[1.0, 0.0, 0.0, 1.0], &TrainConfig::default()).unwrap();
    assert!((l.ce - 0.3133).abs() < 1e-4, "{}", l.ce);
    assert_eq!(l.semantic, 0.0);
}

#[test]
fn ignored_pixels_only_see_color() {
    let c = suites::loss_case(5);
    let mut sup = c.sup.clone();
    sup.labels.data.iter_mut().for_each(|l| *l = IGNORE_LABEL);
    let l = scene_loss(&c.out, &c.gt, &sup, &c.queries, &c.cfg).unwrap();
    assert_eq!((l.ce, l.semantic, l.supervised_pixels), (0.0, 0.0, 0));
    assert!(l.grad_features.iter().all(|&g| g == 0.0));
    assert_eq!(l.total, l.color);
}
