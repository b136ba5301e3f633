use super::*;
use crate::io::write_pnm8;
use crate::tensor::Tensor;

fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> AttentionMap {
    AttentionMap::new(Tensor::from_fn(&[1, h, w], |i| f(i % w, i / w)), "l", "s").unwrap()
}

fn bb(x0: usize, y0: usize, x1: usize, y1: usize) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

fn region(cat: &str, b: BBox) -> Region {
    Region {
        category: cat.into(),
        geometry: Geometry::BBox(b),
    }
}

fn peak_at(px: usize, py: usize) -> AttentionMap {
    map(100, 100, move |x, y| if (x, y) == (px, py) { 1.0 } else { 0.1 })
}

#[test]
fn iou_cases() {
    let a = bb(0, 0, 9, 9);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &bb(10, 0, 19, 9)), 0.0);
    assert!((iou(&a, &bb(5, 0, 14, 9)) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(iou(&bb(5, 0, 14, 9), &a), iou(&a, &bb(5, 0, 14, 9)));
    assert!(BBox::new(3, 0, 2, 0).is_err());
}

#[test]
fn pointing_with_margin() {
    let r = region("cat", bb(20, 20, 40, 40));
    assert!(pointing_hit(&peak_at(30, 30), &[&r], 15).unwrap());
    // 10 px right of the box
    assert!(pointing_hit(&peak_at(50, 30), &[&r], 15).unwrap());
    assert!(!pointing_hit(&peak_at(50, 30), &[&r], 0).unwrap());
    assert!(!pointing_hit(&peak_at(90, 90), &[&r], 15).unwrap());
    // scaling never changes the outcome
    let scaled = AttentionMap::new(peak_at(50, 30).values.scale(7.5), "l", "s").unwrap();
    assert!(pointing_hit(&scaled, &[&r], 15).unwrap());
    assert!(pointing_hit(&peak_at(30, 30), &[&region("cat", bb(20, 20, 140, 40))], 15).is_err());
}

#[test]
fn pointing_with_masks() {
    let mut bits = vec![false; 100 * 100];
    bits[30 * 100 + 30] = true;
    let r = Region {
        category: "c".into(),
        geometry: Geometry::Mask(Mask::new(100, 100, bits).unwrap()),
    };
    assert!(pointing_hit(&peak_at(45, 15), &[&r], 15).unwrap());
    assert!(!pointing_hit(&peak_at(46, 30), &[&r], 15).unwrap());
}

#[test]
fn argmax_ties_take_first() {
    let m = map(3, 3, |x, y| if x + y >= 2 { 1.0 } else { 0.0 });
    assert_eq!(argmax(&m), (2, 0));
}

#[test]
fn accuracy_table() {
    let r = |c: &str, h: bool| (c.to_string(), h);
    let cats = vec!["a".to_string()];
    let rep = pointing_game(&[r("a", true), r("a", true), r("a", true), r("a", false)], &cats).unwrap();
    assert_eq!(rep.categories[0].accuracy, 0.75);
    let cats = vec!["a".to_string(), "b".to_string()];
    let res = [r("a", true), r("b", true), r("b", false), r("b", true), r("b", false)];
    assert_eq!(pointing_game(&res, &cats).unwrap().mean_accuracy, 0.75);
    let cats = vec!["a".to_string(), "z".to_string()];
    assert!(matches!(pointing_game(&res, &cats), Err(Error::EmptyCategory(c)) if c == "z"));
}

fn entry(regions: Vec<Region>) -> Entry {
    let mut e = Entry {
        image: "x.ppm".into(),
        width: 100,
        height: 100,
        regions,
        targets: vec![],
        map: None,
    };
    e.targets = e.present_categories();
    e
}

#[test]
fn difficult_subset() {
    let large = entry(vec![region("a", bb(0, 0, 99, 49)), region("b", bb(0, 0, 1, 1))]);
    let alone = entry(vec![region("a", bb(0, 0, 9, 9))]);
    let mixed = entry(vec![region("a", bb(0, 0, 9, 9)), region("b", bb(50, 0, 99, 99))]);
    // two overlapping boxes: union is 40×40 + 10×40 = 2000 px, under a quarter
    let union = entry(vec![
        region("a", bb(0, 0, 39, 39)),
        region("a", bb(30, 0, 49, 39)),
        region("b", bb(90, 90, 99, 99)),
    ]);
    let m = DatasetManifest {
        entries: vec![large, alone, mixed, union],
        categories: vec!["a".into(), "b".into()],
    };
    let d = filter_difficult(&m);
    let kept: Vec<(PathBuf, Vec<String>)> = d.entries.iter().map(|e| (e.image.clone(), e.targets.clone())).collect();
    assert_eq!(kept.len(), 3);
    assert_eq!(kept[0].1, vec!["b"]);
    assert_eq!(kept[1].1, vec!["a"]);
    assert_eq!(kept[2].1, vec!["a", "b"]);
    let e = &m.entries[3];
    assert_eq!(union_area(&e.regions_of("a"), 100, 100), 2000);
}

use std::path::PathBuf;

#[test]
fn thresholded_boxes() {
    let blob = map(20, 30, |x, y| {
        if (5..=9).contains(&x) && (3..=12).contains(&y) {
            2.0
        } else {
            0.0
        }
    });
    assert_eq!(extract_bbox(&blob, 0.0).unwrap(), bb(5, 3, 9, 12));
    assert_eq!(extract_bbox(&blob, 1.0).unwrap(), bb(5, 3, 9, 12));
    let uniform = map(20, 30, |_, _| 0.3);
    assert_eq!(extract_bbox(&uniform, 1.0).unwrap(), bb(0, 0, 29, 19));
    assert_eq!(extract_bbox(&uniform, 0.5).unwrap(), bb(0, 0, 29, 19));
    assert!(matches!(
        extract_bbox(&map(4, 4, |_, _| 0.0), 0.0),
        Err(Error::EmptyAttention)
    ));
    let ramp = map(10, 10, |x, y| (x * y) as f64);
    let mut prev = extract_bbox(&ramp, 0.0).unwrap();
    // mean is 20.25 and max 81, so α up to 4 leaves pixels
    for k in 1..=8 {
        let b = extract_bbox(&ramp, k as f64 * 0.5).unwrap();
        assert!(b.x0 >= prev.x0 && b.y0 >= prev.y0 && b.x1 <= prev.x1 && b.y1 <= prev.y1);
        prev = b;
    }
}

#[test]
fn segment_scores() {
    let m = map(10, 10, |x, _| x as f64);
    let props = vec![Proposal::BBox(bb(0, 0, 1, 0)), Proposal::BBox(bb(8, 0, 9, 9))];
    let s = score_segments(&m, &props, 0.0).unwrap();
    assert_eq!(s[0].proposal, 1);
    assert_eq!(s[0].score, 170.0);
    assert_eq!(s[1].score, 1.0);
    let u = map(10, 10, |_, _| 0.5);
    let s = score_segments(&u, &props, 1.0).unwrap();
    assert!(s.iter().all(|b| (b.score - 0.5).abs() < 1e-15));
    let mut bits = vec![false; 100];
    bits[11] = true;
    bits[23] = true;
    let s = score_segments(&m, &[Proposal::Mask(Mask::new(10, 10, bits).unwrap())], 0.5).unwrap();
    assert_eq!(s[0].bbox, bb(1, 1, 3, 2));
    assert!((s[0].score - 4.0 / 2f64.sqrt()).abs() < 1e-15);
    let empty = Proposal::Mask(Mask::new(10, 10, vec![false; 100]).unwrap());
    assert!(matches!(
        score_segments(&m, &[empty], 0.5),
        Err(Error::EmptyProposal(0))
    ));
    assert!(score_segments(&m, &[Proposal::BBox(bb(0, 0, 10, 0))], 0.5).is_err());
}

fn sb(b: BBox, score: f64, proposal: usize) -> ScoredBox {
    ScoredBox {
        bbox: b,
        score,
        proposal,
    }
}

#[test]
fn suppression() {
    let a = sb(bb(0, 0, 9, 9), 1.0, 0);
    assert_eq!(nms(&[a, sb(a.bbox, 1.0, 1)], 0.7), vec![a]);
    let far = sb(bb(50, 50, 60, 60), 0.5, 1);
    assert_eq!(nms(&[a, far], 0.7).len(), 2);
    // b overlaps a (IoU 0.8) and c overlaps b but not a enough
    let b = sb(bb(0, 0, 7, 9), 0.9, 1);
    let c = sb(bb(2, 0, 11, 9), 0.8, 2);
    let kept = nms(&[c, b, a], 0.7);
    assert_eq!(kept.iter().map(|k| k.proposal).collect::<Vec<_>>(), vec![0, 2]);
}

#[test]
fn recall() {
    let gt = [bb(10, 10, 20, 20)];
    let hit = sb(gt[0], 0.1, 0);
    let miss = sb(bb(50, 50, 60, 60), 0.9, 1);
    assert!(recall_at_k(&[hit], &gt, 1, 0.5));
    let ranked = [miss, miss, hit];
    assert!(!recall_at_k(&ranked, &gt, 1, 0.5));
    assert!(recall_at_k(&ranked, &gt, 5, 0.5));
}

#[test]
fn manifest_parsing() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_pnm8(&Tensor::zeros(&[3, 8, 12])).unwrap();
    std::fs::write(dir.path().join("a.ppm"), img).unwrap();
    let mask = Tensor::from_fn(&[1, 8, 12], |i| if i == 13 { 255.0 } else { 0.0 });
    std::fs::write(dir.path().join("m.pgm"), write_pnm8(&mask).unwrap()).unwrap();
    let text = r#"
{"image": "a.ppm", "regions": [{"category": "dog", "bbox": [1, 2, 3, 4]}, {"category": "cat", "mask_path": "m.pgm"}]}
{"image": "b.ppm", "width": 5, "height": 5, "regions": [{"category": "dog", "bbox": [0, 0, 4, 4]}], "map": "b.ebmap"}
"#;
    let m = DatasetManifest::parse_jsonl(text, dir.path()).unwrap();
    assert_eq!(m.categories, vec!["dog", "cat"]);
    assert_eq!((m.entries[0].width, m.entries[0].height), (12, 8));
    assert_eq!(m.entries[0].boxes_of("cat"), vec![bb(1, 1, 1, 1)]);
    assert_eq!(m.entries[1].map, Some(dir.path().join("b.ebmap")));

    let declared = format!("{{\"categories\": [\"dog\", \"cat\", \"cow\"]}}\n{text}");
    let m = DatasetManifest::parse_jsonl(&declared, dir.path()).unwrap();
    assert_eq!(m.categories.len(), 3);

    let bad = r#"{"image": "b.ppm", "width": 5, "height": 5, "regions": [{"category": "dog", "bbox": [0, 0, 9, 4]}]}"#;
    let err = DatasetManifest::parse_jsonl(bad, dir.path()).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
    assert!(DatasetManifest::parse_jsonl(
        r#"{"image": "b.ppm", "width": 5, "height": 5, "regions": [{"category": "x", "bbox": [3, 0, 1, 1]}]}"#,
        dir.path()
    )
    .is_err());

    let props = ProposalSet::parse_jsonl(
        r#"{"image": "a.ppm", "segments": [[0, 0, 2, 2], {"mask_path": "m.pgm"}]}"#,
        dir.path(),
    )
    .unwrap();
    assert_eq!(props[0].segments.len(), 2);
    assert_eq!(props[0].segments[0], Proposal::BBox(bb(0, 0, 2, 2)));
}
