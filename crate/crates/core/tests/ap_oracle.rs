use cgt_core::eval::{average_precision, pooled_average_precision};
use cgt_core::nn::Detection;
use cgt_core::BBox;
use cgt_testkit::{checks, oracle};

fn det(x: f32, score: f32) -> Detection {
    Detection {
        bbox: BBox::raw(x, 0.0, x + 10.0, 10.0),
        score,
    }
}

#[test]
fn ap_matches_exhaustive_oracle() {
    let o = checks::ap_oracle();
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn late_match_after_false_positive_is_half() {
    let gt = [BBox::raw(0.0, 0.0, 10.0, 10.0)];
    let preds = [det(50.0, 0.9), det(0.0, 0.3)];
    assert_eq!(average_precision(&preds, &gt, 0.5), 0.5);
    assert_eq!(oracle::average_precision(&preds, &gt, 0.5), 0.5);
}

#[test]
fn one_of_two_found_is_half() {
    let gts = [BBox::raw(0.0, 0.0, 10.0, 10.0), BBox::raw(40.0, 0.0, 50.0, 10.0)];
    assert_eq!(average_precision(&[det(0.0, 0.9)], &gts, 0.5), 0.5);
}

#[test]
fn pooled_ap_of_controlled_set_matches_oracle() {
    // ten images, one GT each; even images get a hit, odd ones a miss, with
    // scores interleaved across images
    let images: Vec<(Vec<Detection>, Vec<BBox>)> = (0..10)
        .map(|i| {
            let x = if i % 2 == 0 { 0.0 } else { 60.0 };
            (vec![det(x, 1.0 - i as f32 * 0.07)], vec![BBox::raw(0.0, 0.0, 10.0, 10.0)])
        })
        .collect();
    // pooling is equivalent to one image whose boxes never collide across
    // sources: shift image i by 100 px per index
    let shift = |b: BBox, i: usize| BBox::raw(b.x_min + 100.0 * i as f32, b.y_min, b.x_max + 100.0 * i as f32, b.y_max);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (i, (p, g)) in images.iter().enumerate() {
        preds.extend(p.iter().map(|d| Detection { bbox: shift(d.bbox, i), score: d.score }));
        gts.extend(g.iter().map(|b| shift(*b, i)));
    }
    let pooled = pooled_average_precision(&images, 0.5).unwrap();
    assert!((pooled - oracle::average_precision(&preds, &gts, 0.5)).abs() < 1e-12);
}
