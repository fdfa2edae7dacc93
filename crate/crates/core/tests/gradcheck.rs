mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_reports(label: &str, reports: &[BlockReport]) {
    for r in reports {
        assert!(
            r.max_rel < FD_TOL,
            "{label}: block {} rel err {:.3e}",
            r.name,
            r.max_rel
        );
    }
}

#[test]
fn end_to_end_toy_encoder() {
    let w = world(12, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for k in 0..24 {
        let reports = check_objective(&mut rng, &w, true);
        let names: Vec<_> = reports.iter().map(|r| r.name).collect();
        assert_eq!(
            names,
            [
                "embeddings",
                "W_h",
                "b_h",
                "W_D",
                "b_D",
                "W_R",
                "b_R",
                "W_S",
                "b_S"
            ]
        );
        assert_reports(&format!("instance {k}"), &reports);
    }
}

#[test]
fn end_to_end_fixed_features() {
    let w = world(9, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for k in 0..20 {
        let reports = check_objective(&mut rng, &w, false);
        assert_eq!(reports.len(), 6);
        assert_reports(&format!("instance {k}"), &reports);
    }
}

#[test]
fn heads_jointly_and_severally() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let selections = [
        [true, true, true],
        [true, false, false],
        [false, true, false],
        [false, false, true],
    ];
    for which in selections {
        for k in 0..20 {
            assert_reports(&format!("{which:?} #{k}"), &check_heads(&mut rng, which));
        }
    }
}

#[test]
fn encoder_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for k in 0..25 {
        assert_reports(&format!("instance {k}"), &check_encoder(&mut rng, 9));
    }
}

#[test]
fn detection_only_upstream_leaves_search_weights_untouched() {
    use csc_core::heads::{heads_backward, HeadParams, HeadUpstream};
    use csc_core::linalg::Mat;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let params = HeadParams::random(3, 7, &mut rng);
    let h = csc_core::Encoding {
        h: Mat::from_rows(&[vec![0.3, -0.2, 0.9], vec![-1.0, 0.4, 0.1]]).unwrap(),
    };
    let up = HeadUpstream {
        p_d: Some(Mat::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.2]]).unwrap()),
        ..Default::default()
    };
    let (g, _) = heads_backward(&h, &params, &up).unwrap();
    assert!(g.w_s.data.iter().all(|&v| v == 0.0));
    assert!(g.b_s.iter().all(|&v| v == 0.0));
    assert!(g.w_r.data.iter().all(|&v| v == 0.0));
    assert!(g.w_d.data.iter().any(|&v| v != 0.0));
}
