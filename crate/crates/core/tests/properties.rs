use proptest::prelude::*;

use lesionkit::encoder::{build_sequence, prepare_sequence, Ablation, EncoderConfig};
use lesionkit::imageproc::{dilate_mask, tight_bbox};
use lesionkit::model::{
    decode_rle, encode_rle, map_raw_severity, parse_detection_records, write_detection_records, BinaryMask,
    BoundingBox, Detection, DetectionSet, LesionKind, SeverityGrade,
};
use lesionkit::segmetrics::{average_precision, iou_box, iou_mask};

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<bool>(), w * h).prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
    })
}

fn nonempty_mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(prop::bool::weighted(0.2), w * h)
        .prop_filter("non-empty", |b| b.iter().any(|v| *v))
        .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
}

fn box_strategy(canvas: u32) -> impl Strategy<Value = BoundingBox> {
    (0..canvas, 0..canvas, 0..canvas, 0..canvas).prop_filter_map("non-empty box", |(a, b, c, d)| {
        let (x0, x1) = (a.min(c), a.max(c));
        let (y0, y1) = (b.min(d), b.max(d));
        (x1 > x0 && y1 > y0).then(|| BoundingBox::new(x0, y0, x1, y1).unwrap())
    })
}

fn kind_strategy() -> impl Strategy<Value = LesionKind> {
    prop_oneof![Just(LesionKind::Ex), Just(LesionKind::Ma)]
}

/// Detection sets on a 24x24 canvas, each detection either box-only or masked.
fn set_strategy() -> impl Strategy<Value = DetectionSet> {
    let det = (kind_strategy(), 0u32..=20, box_strategy(24), proptest::option::of(nonempty_mask(24, 24))).prop_map(
        |(kind, q, bbox, mask)| {
            let score = q as f64 / 20.0;
            match mask {
                Some(m) => Detection::from_mask(kind, score, m).unwrap(),
                None => Detection::from_box(kind, score, bbox).unwrap(),
            }
        },
    );
    (proptest::collection::vec(det, 0..5), "[a-z]{1,6}").prop_map(|(dets, id)| DetectionSet::new(id, dets).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rle_round_trip(m in mask_strategy(20)) {
        prop_assert_eq!(decode_rle(&encode_rle(&m)).unwrap(), m);
    }

    #[test]
    fn detection_records_round_trip(sets in proptest::collection::vec(set_strategy(), 1..4)) {
        // ids must be unique per file
        let mut sets = sets;
        for (i, s) in sets.iter_mut().enumerate() {
            *s = DetectionSet::new(format!("{}_{i}", s.image_id()), s.detections().to_vec()).unwrap();
        }
        let mut buf = Vec::new();
        write_detection_records(&mut buf, &sets).unwrap();
        let back = parse_detection_records(&buf[..]).unwrap();
        prop_assert_eq!(back, sets);
    }

    #[test]
    fn detection_rejects_empty_mask_and_bad_score(w in 1usize..10, h in 1usize..10, score in -2.0f64..3.0) {
        let empty = BinaryMask::new(w, h);
        prop_assert!(Detection::from_mask(LesionKind::Ex, 0.5, empty).is_err());
        let mut one = BinaryMask::new(w, h);
        one.set(0, 0, true);
        let ok = (0.0..=1.0).contains(&score);
        prop_assert_eq!(Detection::from_mask(LesionKind::Ma, score, one).is_ok(), ok);
    }

    #[test]
    fn iou_symmetric_bounded_reflexive(a in box_strategy(64), b in box_strategy(64)) {
        let ab = iou_box(&a, &b);
        prop_assert_eq!(ab, iou_box(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou_box(&a, &a), 1.0);
    }

    #[test]
    fn mask_iou_symmetric_bounded_reflexive(a in nonempty_mask(16, 16), b in nonempty_mask(16, 16)) {
        let ab = iou_mask(&a, &b).unwrap();
        prop_assert_eq!(ab, iou_mask(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou_mask(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn box_iou_equals_rasterized_mask_iou(a in box_strategy(64), b in box_strategy(64)) {
        let ma = BinaryMask::from_box(64, 64, &a);
        let mb = BinaryMask::from_box(64, 64, &b);
        prop_assert_eq!(iou_box(&a, &b), iou_mask(&ma, &mb).unwrap());
    }

    #[test]
    fn ap_non_increasing_in_threshold(p in set_strategy(), g in set_strategy()) {
        let preds = DetectionSet::new("x", p.detections().to_vec()).unwrap();
        let gts = DetectionSet::new("x", g.detections().to_vec()).unwrap();
        let ts = [0.05, 0.2, 0.35, 0.5, 0.75, 0.9, 1.0];
        let aps: Vec<Option<f64>> = ts.iter().map(|t| average_precision(&preds, &gts, *t).unwrap()).collect();
        if gts.is_empty() {
            prop_assert!(aps.iter().all(Option::is_none));
        } else {
            for w in aps.windows(2) {
                prop_assert!(w[0].unwrap() >= w[1].unwrap());
            }
        }
    }

    #[test]
    fn dilation_is_extensive_and_keeps_shape(m in mask_strategy(24), k in prop_oneof![Just(1usize), Just(3), Just(5)], it in 0usize..3) {
        let d = dilate_mask(&m, k, it).unwrap();
        prop_assert_eq!((d.width(), d.height()), (m.width(), m.height()));
        for (x, y) in m.set_pixels() {
            prop_assert!(d.get(x, y));
        }
    }

    #[test]
    fn tight_bbox_is_tight(m in nonempty_mask(20, 20)) {
        let b = tight_bbox(&m).unwrap();
        for (x, y) in m.set_pixels() {
            prop_assert!(b.contains(x, y));
        }
        let [x0, y0, x1, y1] = b.as_array().map(|v| v as usize);
        prop_assert!((y0..y1).any(|y| m.get(x0, y)));
        prop_assert!((y0..y1).any(|y| m.get(x1 - 1, y)));
        prop_assert!((x0..x1).any(|x| m.get(x, y0)));
        prop_assert!((x0..x1).any(|x| m.get(x, y1 - 1)));
    }

    #[test]
    fn sequence_invariant_under_detection_order(s in set_strategy(), seed in any::<u64>()) {
        let cfg = EncoderConfig::for_ablation(Ablation::BoxesNorm, 24);
        let mut shuffled = s.detections().to_vec();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        let t = DetectionSet::new(s.image_id(), shuffled).unwrap();
        prop_assert_eq!(build_sequence(&s, &cfg, None).unwrap(), build_sequence(&t, &cfg, None).unwrap());
    }

    #[test]
    fn box_normalization_only_scales_coordinates(s in set_strategy()) {
        let raw = build_sequence(&s, &EncoderConfig::for_ablation(Ablation::BoxesRaw, 24), None).unwrap();
        let norm = build_sequence(&s, &EncoderConfig::for_ablation(Ablation::BoxesNorm, 24), None).unwrap();
        prop_assert_eq!(raw.len(), norm.len());
        for (r, n) in raw.steps.iter().zip(&norm.steps) {
            prop_assert_eq!(r.len(), n.len());
            for k in 0..r.len() {
                let expected = if k < 4 { r[k] / 24.0 } else { r[k] };
                prop_assert_eq!(n[k], expected);
                prop_assert!(n[k].is_finite());
            }
        }
        prop_assert_eq!(raw.len(), s.len().max(1));
    }
}

#[test]
fn duplicate_boxes_order_ex_before_ma() {
    let b = BoundingBox::new(2, 2, 6, 6).unwrap();
    let set = DetectionSet::new(
        "d",
        vec![
            Detection::from_box(LesionKind::Ma, 0.9, b).unwrap(),
            Detection::from_box(LesionKind::Ex, 0.1, b).unwrap(),
        ],
    )
    .unwrap();
    let seq = prepare_sequence(&set, &EncoderConfig::for_ablation(Ablation::BoxesNorm, 8)).unwrap();
    assert_eq!(&seq.steps[0].features[4..6], &[1.0, 0.0]);
    assert_eq!(&seq.steps[1].features[4..6], &[0.0, 1.0]);
}

#[test]
fn raw_severity_mapping_total_and_surjective() {
    let grades: Vec<SeverityGrade> = (0..=4).map(|r| map_raw_severity(r).unwrap()).collect();
    for g in SeverityGrade::ALL {
        assert!(grades.contains(&g));
    }
    assert!(map_raw_severity(5).is_err());
    assert!(map_raw_severity(-1).is_err());
}
