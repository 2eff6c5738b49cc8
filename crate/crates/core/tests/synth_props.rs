mod common;

use econsg_core::crr::MaskProvider;
use econsg_core::geometry::fit_bbox;
use econsg_core::synth::{make_scene, ray_visible_class, OracleMaskProvider, SynthSceneSpec};
use econsg_core::IGNORE_LABEL;

#[test]
fn ground_truth_matches_ray_scan() {
    let s = make_scene(&SynthSceneSpec::default()).unwrap();
    let k = s.spec.n_classes;
    let mut worst_depth = 0.0f64;
    let mut labeled = 0;
    for (views, labels) in [(&s.views, &s.labels), (&s.test_views, &s.test_labels)] {
        for (v, (view, gt)) in views.iter().zip(labels).enumerate() {
            for y in 0..view.height() {
                for x in 0..view.width() {
                    let scan = ray_visible_class(&s.cloud, &s.classes, k, &view.camera, x, y);
                    let g = gt.get(x, y);
                    match scan {
                        None => assert_eq!(g, IGNORE_LABEL, "view {v} ({x},{y})"),
                        Some((c, z)) => {
                            assert_eq!(g, c, "view {v} ({x},{y})");
                            let surface = common::unit_sphere_depth(&view.camera, x, y, z).unwrap_or(z as f64);
                            let d = view.depth.get(x, y) as f64;
                            worst_depth = worst_depth.max((d - surface).abs() / surface);
                            labeled += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(labeled > 0);
    assert!(worst_depth < 1e-5, "depth raster departs from the ray-sphere depth by {worst_depth}");
}

#[test]
fn corrupted_proposals_have_holes_and_clean_ones_do_not() {
    let clean = make_scene(&SynthSceneSpec::default()).unwrap();
    let dirty = make_scene(&SynthSceneSpec { corruption: 0.2, ..Default::default() }).unwrap();
    for (c, d) in clean.views.iter().zip(&dirty.views) {
        let ci = c.mask_proposals.as_ref().unwrap();
        let di = d.mask_proposals.as_ref().unwrap();
        let removed = ci.data.iter().zip(&di.data).filter(|(a, b)| **a != 0 && **b == 0).count();
        assert!(removed > 0);
        assert!(ci.data.iter().zip(&di.data).all(|(a, b)| *b == 0 || a == b));
    }
    // A box around a whole clean object returns that object with its holes.
    let mut provider = OracleMaskProvider::from_views(&dirty.views).unwrap();
    let inst = clean.views[0].mask_proposals.as_ref().unwrap();
    let id = *inst.data.iter().find(|v| **v != 0).unwrap();
    let pixels: Vec<(u32, u32)> =
        (0..inst.height).flat_map(|y| (0..inst.width).map(move |x| (x, y))).filter(|&(x, y)| inst.get(x, y) == id).map(|(x, y)| (x as u32, y as u32)).collect();
    let mask = &provider.masks(0, &[fit_bbox(pixels.iter().copied()).unwrap()]).unwrap()[0];
    let di = dirty.views[0].mask_proposals.as_ref().unwrap();
    for (bit, v) in mask.bits.iter().zip(&di.data) {
        assert_eq!(*bit, *v == id);
    }
    assert!(mask.count() <= pixels.len());
}

#[test]
fn test_views_differ_from_training_views() {
    let s = make_scene(&SynthSceneSpec::default()).unwrap();
    assert_eq!(s.test_views.len(), 4);
    for t in &s.test_views {
        for v in &s.views {
            assert_ne!(t.camera, v.camera);
        }
    }
}
